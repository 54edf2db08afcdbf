//! Cost-sensitive binary classification tree over the two predictors.
//!
//! Misclassification costs enter as altered class priors: every
//! hypoglycemic (`H`) instance weighs `cost_fn`, every other (`N`) instance
//! weighs `cost_fp`. The weights are used in the Gini impurity, in the
//! weighting of child impurities and in leaf class assignment.
//!
//! Splits are binary threshold rules; an instance goes left when
//! `feature < threshold` and right otherwise.

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::features::DecisionInstance;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CartError {
    #[error("node has no instances")]
    EmptyNode,
    #[error("cannot grow a tree from zero instances")]
    NoInstances,
    #[error("prune depth must be at least 1")]
    InvalidDepth,
    #[error("non-finite input {0}")]
    NonFinite(f64),
    #[error("misclassification costs must be finite and positive (fn={cost_fn}, fp={cost_fp})")]
    InvalidCosts { cost_fn: f64, cost_fp: f64 },
    #[error("tree document {path}: {msg}")]
    Schema { path: String, msg: String },
}

impl CartError {
    pub fn is_validation(&self) -> bool {
        matches!(self, CartError::NonFinite(_) | CartError::InvalidCosts { .. } | CartError::Schema { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Class {
    /// No hypoglycemia in the horizon.
    N,
    /// Hypoglycemia in the horizon.
    H,
}

impl Class {
    pub fn from_label(label: bool) -> Self {
        if label {
            Class::H
        } else {
            Class::N
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Class::N => "N",
            Class::H => "H",
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Feature {
    #[serde(rename = "x_t")]
    Xt,
    #[serde(rename = "rate")]
    Rate,
}

impl Feature {
    pub const ALL: [Feature; 2] = [Feature::Xt, Feature::Rate];

    pub fn index(self) -> usize {
        match self {
            Feature::Xt => 0,
            Feature::Rate => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Feature::Xt => "x_t",
            Feature::Rate => "rate",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    /// Cost of predicting N when the truth is H.
    pub cost_fn: f64,
    /// Cost of predicting H when the truth is N.
    pub cost_fp: f64,
}

impl Default for CostMatrix {
    fn default() -> Self {
        Self { cost_fn: 15.0, cost_fp: 1.0 }
    }
}

impl CostMatrix {
    pub fn new(cost_fn: f64, cost_fp: f64) -> Result<Self, CartError> {
        let c = Self { cost_fn, cost_fp };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), CartError> {
        let ok = |c: f64| c.is_finite() && c > 0.0;
        if ok(self.cost_fn) && ok(self.cost_fp) {
            Ok(())
        } else {
            Err(CartError::InvalidCosts { cost_fn: self.cost_fn, cost_fp: self.cost_fp })
        }
    }

    /// Cost-weighted mass of a node.
    fn mass(&self, n_n: u64, n_h: u64) -> f64 {
        self.cost_fp * n_n as f64 + self.cost_fn * n_h as f64
    }

    /// Misclassification cost of a node labeled `class`.
    pub fn risk(&self, class: Class, n_n: u64, n_h: u64) -> f64 {
        match class {
            Class::N => self.cost_fn * n_h as f64,
            Class::H => self.cost_fp * n_n as f64,
        }
    }
}

/// Training point: `[x_t, rate]` and the horizon label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPoint {
    pub features: [f64; 2],
    pub label: bool,
}

impl LabeledPoint {
    pub fn new(x_t: f64, rate: f64, label: bool) -> Self {
        Self { features: [x_t, rate], label }
    }
}

impl From<&DecisionInstance> for LabeledPoint {
    fn from(i: &DecisionInstance) -> Self {
        Self { features: i.features(), label: i.label }
    }
}

/// Cost-weighted Gini impurity `2 p (1 - p)` with `p` the weighted share of H.
pub fn weighted_gini(n_n: u64, n_h: u64, costs: &CostMatrix) -> Result<f64, CartError> {
    if n_n + n_h == 0 {
        return Err(CartError::EmptyNode);
    }
    let p_h = costs.cost_fn * n_h as f64 / costs.mass(n_n, n_h);
    Ok(2.0 * p_h * (1.0 - p_h))
}

/// Cost-minimizing class of a node; ties go to H.
pub fn leaf_class(n_n: u64, n_h: u64, costs: &CostMatrix) -> Result<Class, CartError> {
    if n_n + n_h == 0 {
        return Err(CartError::EmptyNode);
    }
    Ok(if costs.cost_fn * n_h as f64 >= costs.cost_fp * n_n as f64 { Class::H } else { Class::N })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitCandidate {
    pub feature: Feature,
    pub threshold: f64,
    pub impurity_decrease: f64,
}

/// Child term of the weighted impurity, kept as a fraction so that
/// candidates compare without rounding for moderate node sizes.
///
/// The weighted child impurity of a split is `2 w_H w_N / W * S` with
/// `S = Σ_c n_H(c) n_N(c) / W(c)`; minimizing `S` maximizes the decrease.
#[derive(Debug, Clone, Copy)]
struct ChildScore {
    num: f64,
    den: f64,
}

impl ChildScore {
    fn of(costs: &CostMatrix, left: (u64, u64), right: (u64, u64)) -> Self {
        let wl = costs.mass(left.0, left.1);
        let wr = costs.mass(right.0, right.1);
        let pl = (left.0 * left.1) as f64;
        let pr = (right.0 * right.1) as f64;
        Self { num: pl * wr + pr * wl, den: wl * wr }
    }

    fn lt(&self, other: &ChildScore) -> bool {
        self.num * other.den < other.num * self.den
    }

    fn value(&self) -> f64 {
        self.num / self.den
    }
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    // Adjacent floats: the midpoint rounds onto `lo`, which would route it right.
    if mid > lo {
        mid
    } else {
        hi
    }
}

/// Best impurity-reducing threshold over both features.
///
/// Candidates are midpoints between consecutive distinct values. Returns
/// `None` when no candidate strictly lowers the weighted impurity. Ties go
/// to `x_t` before `rate`, then to the lowest threshold.
pub fn best_split(points: &[LabeledPoint], costs: &CostMatrix) -> Option<SplitCandidate> {
    if points.len() < 2 {
        return None;
    }
    let n_h = points.iter().filter(|p| p.label).count() as u64;
    let n_n = points.len() as u64 - n_h;
    if n_h == 0 || n_n == 0 {
        return None;
    }
    let total = costs.mass(n_n, n_h);
    // Parent as a child score over a single child: n_H n_N / W.
    let parent = ChildScore { num: (n_n * n_h) as f64, den: total };

    let mut best: Option<(Feature, f64, ChildScore)> = None;
    let mut order: Vec<(f64, bool)> = Vec::with_capacity(points.len());
    for feature in Feature::ALL {
        order.clear();
        order.extend(points.iter().map(|p| (p.features[feature.index()], p.label)));
        order.sort_by(|a, b| a.0.total_cmp(&b.0));

        let (mut ln, mut lh) = (0u64, 0u64);
        for i in 0..order.len() - 1 {
            if order[i].1 {
                lh += 1;
            } else {
                ln += 1;
            }
            let (v, next) = (order[i].0, order[i + 1].0);
            if v == next {
                continue;
            }
            let score = ChildScore::of(costs, (ln, lh), (n_n - ln, n_h - lh));
            if !score.lt(&parent) {
                continue;
            }
            if best.as_ref().is_none_or(|(_, _, b)| score.lt(b)) {
                best = Some((feature, midpoint(v, next), score));
            }
        }
    }

    best.map(|(feature, threshold, score)| {
        let k = 2.0 * costs.cost_fn * costs.cost_fp / total;
        SplitCandidate { feature, threshold, impurity_decrease: k * (parent.value() - score.value()) }
    })
}

/// A node of a classification tree.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split { feature: Feature, threshold: f64, left: Box<TreeNode>, right: Box<TreeNode> },
    Leaf { class: Class, n_n: u64, n_h: u64 },
}

fn counts_of(points: &[LabeledPoint]) -> (u64, u64) {
    let n_h = points.iter().filter(|p| p.label).count() as u64;
    (points.len() as u64 - n_h, n_h)
}

/// Grows a full tree: nodes split until pure or until no split lowers the
/// weighted impurity.
pub fn grow_tree(points: &[LabeledPoint], costs: &CostMatrix) -> Result<TreeNode, CartError> {
    if points.is_empty() {
        return Err(CartError::NoInstances);
    }
    costs.validate()?;
    for p in points {
        if let Some(v) = p.features.iter().find(|v| !v.is_finite()) {
            return Err(CartError::NonFinite(*v));
        }
    }
    Ok(grow(points.to_vec(), costs))
}

fn grow(points: Vec<LabeledPoint>, costs: &CostMatrix) -> TreeNode {
    let (n_n, n_h) = counts_of(&points);
    let leaf = || TreeNode::Leaf {
        class: leaf_class(n_n, n_h, costs).expect("non-empty node"),
        n_n,
        n_h,
    };
    if points.len() < 2 || n_n == 0 || n_h == 0 {
        return leaf();
    }
    let Some(split) = best_split(&points, costs) else {
        return leaf();
    };
    let idx = split.feature.index();
    let (left, right): (Vec<_>, Vec<_>) = points.into_iter().partition(|p| p.features[idx] < split.threshold);
    debug_assert!(!left.is_empty() && !right.is_empty());
    TreeNode::Split {
        feature: split.feature,
        threshold: split.threshold,
        left: Box::new(grow(left, costs)),
        right: Box::new(grow(right, costs)),
    }
}

impl TreeNode {
    /// Training counts `(n_N, n_H)` routed through this node.
    pub fn counts(&self) -> (u64, u64) {
        match self {
            TreeNode::Leaf { n_n, n_h, .. } => (*n_n, *n_h),
            TreeNode::Split { left, right, .. } => {
                let (a, b) = left.counts();
                let (c, d) = right.counts();
                (a + c, b + d)
            }
        }
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, TreeNode::Leaf { .. })
    }

    /// Visits every leaf, left to right.
    pub fn for_each_leaf<F: FnMut(Class, u64, u64)>(&self, f: &mut F) {
        match self {
            TreeNode::Leaf { class, n_n, n_h } => f(*class, *n_n, *n_h),
            TreeNode::Split { left, right, .. } => {
                left.for_each_leaf(f);
                right.for_each_leaf(f);
            }
        }
    }

    pub fn classify(&self, features: [f64; 2]) -> Class {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { class, .. } => return *class,
                TreeNode::Split { feature, threshold, left, right } => {
                    node = if features[feature.index()] < *threshold { left } else { right };
                }
            }
        }
    }

    /// Total cost-weighted misclassification of the leaves on their
    /// training counts.
    pub fn risk(&self, costs: &CostMatrix) -> f64 {
        let mut r = 0.0;
        self.for_each_leaf(&mut |class, n_n, n_h| r += costs.risk(class, n_n, n_h));
        r
    }

    /// Same structure and counts, leaf classes reassigned under `costs`.
    pub fn relabel(&self, costs: &CostMatrix) -> TreeNode {
        match self {
            TreeNode::Leaf { n_n, n_h, .. } => TreeNode::Leaf {
                class: leaf_class(*n_n, *n_h, costs).unwrap_or(Class::H),
                n_n: *n_n,
                n_h: *n_h,
            },
            TreeNode::Split { feature, threshold, left, right } => TreeNode::Split {
                feature: *feature,
                threshold: *threshold,
                left: Box::new(left.relabel(costs)),
                right: Box::new(right.relabel(costs)),
            },
        }
    }

    fn collapse(&self, costs: &CostMatrix) -> TreeNode {
        let (n_n, n_h) = self.counts();
        TreeNode::Leaf { class: leaf_class(n_n, n_h, costs).unwrap_or(Class::H), n_n, n_h }
    }
}

/// Prediction for one decision.
pub fn predict(tree: &TreeNode, x_t: f64, rate: f64) -> Result<Class, CartError> {
    for v in [x_t, rate] {
        if !v.is_finite() {
            return Err(CartError::NonFinite(v));
        }
    }
    Ok(tree.classify([x_t, rate]))
}

/// Limits the tree to `max_depth` split levels (the root split is level 1).
/// Splits below the limit collapse into leaves labeled from their training
/// counts.
pub fn prune_to_depth(tree: &TreeNode, max_depth: usize, costs: &CostMatrix) -> Result<TreeNode, CartError> {
    if max_depth == 0 {
        return Err(CartError::InvalidDepth);
    }
    Ok(prune_rec(tree, max_depth, costs))
}

fn prune_rec(node: &TreeNode, remaining: usize, costs: &CostMatrix) -> TreeNode {
    match node {
        TreeNode::Leaf { .. } => node.clone(),
        TreeNode::Split { .. } if remaining == 0 => node.collapse(costs),
        TreeNode::Split { feature, threshold, left, right } => TreeNode::Split {
            feature: *feature,
            threshold: *threshold,
            left: Box::new(prune_rec(left, remaining - 1, costs)),
            right: Box::new(prune_rec(right, remaining - 1, costs)),
        },
    }
}

/// Weakest-link cost-complexity sequence.
///
/// For an internal node `t` with subtree `T_t`,
/// `g(t) = (R(t) - R(T_t)) / (|leaves(T_t)| - 1)` where `R` is the
/// cost-weighted misclassification on training counts. Repeatedly the
/// nodes with the smallest `g` are collapsed and that `g` is recorded, until
/// only the root leaf remains. The result is ascending.
pub fn cost_complexity_alphas(tree: &TreeNode, costs: &CostMatrix) -> Vec<f64> {
    let mut current = tree.clone();
    let mut alphas = Vec::new();
    while !current.is_leaf() {
        let alpha = min_link(&current, costs);
        // Relative slack so that links tied up to rounding collapse together.
        let cut = alpha + 1e-12 * alpha.abs().max(1.0);
        current = collapse_weakest(&current, cut, costs);
        alphas.push(alpha);
    }
    alphas
}

fn link_strength(node: &TreeNode, costs: &CostMatrix) -> f64 {
    let (n_n, n_h) = node.counts();
    let as_leaf = costs.risk(leaf_class(n_n, n_h, costs).unwrap_or(Class::H), n_n, n_h);
    (as_leaf - node.risk(costs)) / (node.leaf_count() as f64 - 1.0)
}

fn min_link(node: &TreeNode, costs: &CostMatrix) -> f64 {
    match node {
        TreeNode::Leaf { .. } => f64::INFINITY,
        TreeNode::Split { left, right, .. } => {
            link_strength(node, costs).min(min_link(left, costs)).min(min_link(right, costs))
        }
    }
}

fn collapse_weakest(node: &TreeNode, cut: f64, costs: &CostMatrix) -> TreeNode {
    match node {
        TreeNode::Leaf { .. } => node.clone(),
        TreeNode::Split { .. } if link_strength(node, costs) <= cut => node.collapse(costs),
        TreeNode::Split { feature, threshold, left, right } => TreeNode::Split {
            feature: *feature,
            threshold: *threshold,
            left: Box::new(collapse_weakest(left, cut, costs)),
            right: Box::new(collapse_weakest(right, cut, costs)),
        },
    }
}

// Tree documents: {"feature", "threshold", "left", "right"} for splits and
// {"class", "n_N", "n_H"} for leaves.

impl TreeNode {
    pub fn to_json(&self) -> Value {
        match self {
            TreeNode::Leaf { class, n_n, n_h } => json!({ "class": class.as_str(), "n_N": n_n, "n_H": n_h }),
            TreeNode::Split { feature, threshold, left, right } => json!({
                "feature": feature.as_str(),
                "threshold": threshold,
                "left": left.to_json(),
                "right": right.to_json(),
            }),
        }
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_json()).expect("tree serializes");
        s.push('\n');
        s
    }

    pub fn from_json(value: &Value) -> Result<TreeNode, CartError> {
        parse_node(value, "$")
    }

    pub fn from_json_str(text: &str) -> Result<TreeNode, CartError> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| CartError::Schema { path: "$".into(), msg: e.to_string() })?;
        Self::from_json(&value)
    }
}

fn schema(path: &str, msg: impl Into<String>) -> CartError {
    CartError::Schema { path: path.to_string(), msg: msg.into() }
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value, CartError> {
    obj.get(key).ok_or_else(|| schema(path, format!("missing field `{key}`")))
}

fn check_keys(obj: &Map<String, Value>, allowed: &[&str], path: &str) -> Result<(), CartError> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(schema(path, format!("unexpected field `{k}`"))),
        None => Ok(()),
    }
}

fn parse_count(obj: &Map<String, Value>, key: &str, path: &str) -> Result<u64, CartError> {
    field(obj, key, path)?
        .as_u64()
        .ok_or_else(|| schema(&format!("{path}.{key}"), "expected a non-negative integer"))
}

fn parse_node(value: &Value, path: &str) -> Result<TreeNode, CartError> {
    let obj = value.as_object().ok_or_else(|| schema(path, "expected an object"))?;
    if obj.contains_key("class") {
        check_keys(obj, &["class", "n_N", "n_H"], path)?;
        let class = match field(obj, "class", path)?.as_str() {
            Some("N") => Class::N,
            Some("H") => Class::H,
            _ => return Err(schema(&format!("{path}.class"), "expected \"N\" or \"H\"")),
        };
        let n_n = parse_count(obj, "n_N", path)?;
        let n_h = parse_count(obj, "n_H", path)?;
        return Ok(TreeNode::Leaf { class, n_n, n_h });
    }
    check_keys(obj, &["feature", "threshold", "left", "right"], path)?;
    let feature = match field(obj, "feature", path)?.as_str() {
        Some("x_t") => Feature::Xt,
        Some("rate") => Feature::Rate,
        Some(other) => return Err(schema(&format!("{path}.feature"), format!("unknown feature `{other}`"))),
        None => return Err(schema(&format!("{path}.feature"), "expected a string")),
    };
    let threshold = field(obj, "threshold", path)?
        .as_f64()
        .filter(|t| t.is_finite())
        .ok_or_else(|| schema(&format!("{path}.threshold"), "expected a finite number"))?;
    let left = parse_node(field(obj, "left", path)?, &format!("{path}.left"))?;
    let right = parse_node(field(obj, "right", path)?, &format!("{path}.right"))?;
    Ok(TreeNode::Split { feature, threshold, left: Box::new(left), right: Box::new(right) })
}

impl Serialize for TreeNode {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for TreeNode {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        TreeNode::from_json(&value).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const COSTS: CostMatrix = CostMatrix { cost_fn: 15.0, cost_fp: 1.0 };

    fn leaf(class: Class, n_n: u64, n_h: u64) -> TreeNode {
        TreeNode::Leaf { class, n_n, n_h }
    }

    fn split(feature: Feature, threshold: f64, left: TreeNode, right: TreeNode) -> TreeNode {
        TreeNode::Split { feature, threshold, left: Box::new(left), right: Box::new(right) }
    }

    #[test]
    fn gini_values() {
        assert_eq!(weighted_gini(5, 0, &COSTS).unwrap(), 0.0);
        assert_eq!(weighted_gini(15, 1, &COSTS).unwrap(), 0.5);
        // p_H = 30/40 = 0.75, 2 * 0.75 * 0.25
        assert!((weighted_gini(10, 2, &COSTS).unwrap() - 0.375).abs() < 1e-15);
        assert!(weighted_gini(0, 0, &COSTS).is_err());
    }

    #[test]
    fn leaf_classes() {
        assert_eq!(leaf_class(100, 0, &COSTS).unwrap(), Class::N);
        assert_eq!(leaf_class(15, 1, &COSTS).unwrap(), Class::H);
        // 15 * 3 = 45 < 100
        assert_eq!(leaf_class(100, 3, &COSTS).unwrap(), Class::N);
        assert!(leaf_class(0, 0, &COSTS).is_err());
    }

    #[test]
    fn perfect_separation() {
        let pts: Vec<_> = [(1.0, true), (2.0, true), (3.0, false), (4.0, false)]
            .iter()
            .map(|&(x, l)| LabeledPoint::new(x, 0.0, l))
            .collect();
        let s = best_split(&pts, &COSTS).unwrap();
        assert_eq!(s.feature, Feature::Xt);
        assert_eq!(s.threshold, 2.5);
        let parent = weighted_gini(2, 2, &COSTS).unwrap();
        assert!((s.impurity_decrease - parent).abs() < 1e-12);

        let tree = grow_tree(&pts, &COSTS).unwrap();
        assert_eq!(tree, split(Feature::Xt, 2.5, leaf(Class::H, 0, 2), leaf(Class::N, 2, 0)));
    }

    #[test]
    fn no_split_for_single_class() {
        let pts: Vec<_> = (0..5).map(|i| LabeledPoint::new(i as f64, 1.0, false)).collect();
        assert!(best_split(&pts, &COSTS).is_none());
        assert!(best_split(&pts[..1], &COSTS).is_none());
    }

    #[test]
    fn single_instance_tree() {
        let t = grow_tree(&[LabeledPoint::new(5.0, 0.1, true)], &COSTS).unwrap();
        assert_eq!(t, leaf(Class::H, 0, 1));
        assert_eq!(grow_tree(&[], &COSTS), Err(CartError::NoInstances));
    }

    #[test]
    fn identical_features_cannot_split() {
        let pts = vec![LabeledPoint::new(5.0, 0.1, true), LabeledPoint::new(5.0, 0.1, false)];
        let t = grow_tree(&pts, &COSTS).unwrap();
        assert_eq!(t, leaf(Class::H, 1, 1));
    }

    #[test]
    fn routing_and_prediction() {
        let t = split(Feature::Xt, 6.45, leaf(Class::H, 3, 5), leaf(Class::N, 90, 0));
        assert_eq!(predict(&t, 8.0, 0.081).unwrap(), Class::N);
        assert_eq!(predict(&t, 6.45, 0.0).unwrap(), Class::N);
        assert_eq!(predict(&t, 6.44, 0.0).unwrap(), Class::H);
        assert!(predict(&t, f64::NAN, 0.0).is_err());
        assert_eq!(predict(&leaf(Class::H, 0, 1), -3.0, 100.0).unwrap(), Class::H);
    }

    #[test]
    fn prune_chain() {
        // Path of five splits down the left side.
        let mut t = leaf(Class::H, 0, 1);
        for i in 0..5 {
            t = split(Feature::Xt, 10.0 - i as f64, t, leaf(Class::N, 20, 0));
        }
        assert_eq!(t.depth(), 5);
        let p = prune_to_depth(&t, 3, &COSTS).unwrap();
        assert_eq!(p.depth(), 3);
        assert_eq!(p.counts(), t.counts());
        // The collapsed node held the two deepest splits: 40 N, 1 H -> 15 < 40 -> N.
        let mut node = &p;
        for _ in 0..3 {
            let TreeNode::Split { left, .. } = node else { panic!() };
            node = left;
        }
        assert_eq!(node, &leaf(Class::N, 40, 1));
        assert!(prune_to_depth(&t, 0, &COSTS).is_err());
        let shallow = split(Feature::Rate, 0.1, leaf(Class::N, 1, 0), split(Feature::Xt, 1.0, leaf(Class::H, 0, 1), leaf(Class::N, 1, 0)));
        assert_eq!(prune_to_depth(&shallow, 3, &COSTS).unwrap(), shallow);
    }

    #[test]
    fn alphas_of_single_split() {
        let unit = CostMatrix::new(1.0, 1.0).unwrap();
        // Subtree has zero error; collapsed leaf (7 N, 3 H) misclassifies 3.
        let t = split(Feature::Xt, 5.0, leaf(Class::H, 0, 3), leaf(Class::N, 7, 0));
        assert_eq!(cost_complexity_alphas(&t, &unit), vec![3.0]);
        assert!(cost_complexity_alphas(&leaf(Class::N, 4, 0), &unit).is_empty());
    }

    #[test]
    fn tree_document_round_trip_and_errors() {
        let t = split(Feature::Xt, 6.45, split(Feature::Rate, 0.0123456789012, leaf(Class::H, 2, 7), leaf(Class::N, 9, 1)), leaf(Class::N, 90, 0));
        let doc = t.to_json_string();
        assert_eq!(TreeNode::from_json_str(&doc).unwrap(), t);

        let bad = r#"{"feature":"glucose","threshold":1,"left":{"class":"N","n_N":1,"n_H":0},"right":{"class":"N","n_N":1,"n_H":0}}"#;
        let err = TreeNode::from_json_str(bad).unwrap_err();
        assert!(matches!(err, CartError::Schema { ref path, .. } if path == "$.feature"), "{err}");

        let missing = r#"{"feature":"x_t","threshold":1,"left":{"class":"N","n_N":1,"n_H":0}}"#;
        let err = TreeNode::from_json_str(missing).unwrap_err();
        assert!(err.to_string().contains("missing field `right`"));

        let deep = r#"{"feature":"x_t","threshold":1,"left":{"class":"N","n_N":1},"right":{"class":"N","n_N":1,"n_H":0}}"#;
        let err = TreeNode::from_json_str(deep).unwrap_err();
        assert!(matches!(err, CartError::Schema { ref path, .. } if path == "$.left"), "{err}");
    }

    fn arb_points() -> impl Strategy<Value = Vec<LabeledPoint>> {
        prop::collection::vec((0u8..40, 0u8..20, prop::bool::weighted(0.2)), 1..80).prop_map(|v| {
            v.into_iter().map(|(a, b, l)| LabeledPoint::new(a as f64 * 0.5, b as f64 * 0.01 - 0.05, l)).collect()
        })
    }

    fn check_soundness(node: &TreeNode, costs: &CostMatrix) {
        match node {
            TreeNode::Leaf { class, n_n, n_h } => {
                assert!(n_n + n_h >= 1);
                let other = if *class == Class::H { Class::N } else { Class::H };
                assert!(costs.risk(*class, *n_n, *n_h) <= costs.risk(other, *n_n, *n_h));
            }
            TreeNode::Split { left, right, .. } => {
                let (a, b) = left.counts();
                let (c, d) = right.counts();
                assert!(a + b >= 1 && c + d >= 1);
                let parent = weighted_gini(a + c, b + d, costs).unwrap();
                let w = costs.mass(a + c, b + d);
                let children = costs.mass(a, b) / w * weighted_gini(a, b, costs).unwrap()
                    + costs.mass(c, d) / w * weighted_gini(c, d, costs).unwrap();
                assert!(parent - children > 0.0);
                check_soundness(left, costs);
                check_soundness(right, costs);
            }
        }
    }

    proptest! {
        #[test]
        fn grown_trees_are_sound(points in arb_points()) {
            let tree = grow_tree(&points, &COSTS).unwrap();
            check_soundness(&tree, &COSTS);
            let (n_n, n_h) = tree.counts();
            prop_assert_eq!((n_n + n_h) as usize, points.len());
        }

        #[test]
        fn growth_is_order_independent(points in arb_points(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = points.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(grow_tree(&points, &COSTS).unwrap(), grow_tree(&shuffled, &COSTS).unwrap());
        }

        #[test]
        fn alphas_ascending_and_non_negative(points in arb_points()) {
            let tree = grow_tree(&points, &COSTS).unwrap();
            let alphas = cost_complexity_alphas(&tree, &COSTS);
            prop_assert!(alphas.iter().all(|a| *a >= -1e-12));
            prop_assert!(alphas.windows(2).all(|w| w[0] <= w[1] + 1e-9));
        }

        #[test]
        fn pruned_depth_bounded(points in arb_points(), depth in 1usize..5) {
            let tree = grow_tree(&points, &COSTS).unwrap();
            let pruned = prune_to_depth(&tree, depth, &COSTS).unwrap();
            prop_assert!(pruned.depth() <= depth);
            prop_assert_eq!(pruned.counts(), tree.counts());
        }

        #[test]
        fn documents_round_trip(points in arb_points()) {
            let tree = grow_tree(&points, &COSTS).unwrap();
            prop_assert_eq!(TreeNode::from_json_str(&tree.to_json_string()).unwrap(), tree);
        }
    }
}
