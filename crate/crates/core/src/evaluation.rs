//! Evaluation protocol: confusion metrics, repeated k-fold cross-validation
//! over decision instances, best-tree selection, per-patient and per-group
//! testing, missed-event severity analysis and one-way ANOVA.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::beta::checked_beta_reg;
use thiserror::Error;

use crate::cart::{self, CartError, Class, CostMatrix, LabeledPoint, TreeNode};
use crate::cgm::DmType;
use crate::config::PipelineConfig;
use crate::exec::Execution;
use crate::features::DecisionInstance;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("predictions ({preds}) and labels ({labels}) differ in length")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("cannot split {n} instances into {k} folds")]
    TooFewInstances { n: usize, k: usize },
    #[error("cross-validation needs both classes among the instances")]
    SingleClass,
    #[error("anova: {0}")]
    Anova(String),
    #[error(transparent)]
    Cart(#[from] CartError),
}

impl EvalError {
    pub fn is_validation(&self) -> bool {
        match self {
            EvalError::Cart(e) => e.is_validation(),
            _ => true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }

    pub fn record(&mut self, pred: Class, label: bool) {
        match (pred, label) {
            (Class::H, true) => self.tp += 1,
            (Class::N, true) => self.fn_ += 1,
            (Class::H, false) => self.fp += 1,
            (Class::N, false) => self.tn += 1,
        }
    }
}

/// Tallies predictions against horizon labels.
pub fn confusion(preds: &[Class], labels: &[bool]) -> Result<ConfusionMatrix, EvalError> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch { preds: preds.len(), labels: labels.len() });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &l) in preds.iter().zip(labels) {
        cm.record(p, l);
    }
    Ok(cm)
}

/// Accuracy, sensitivity and specificity. A ratio whose denominator is zero
/// is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceVector {
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<PerformanceVector, EvalError> {
    if cm.total() == 0 {
        return Err(EvalError::Empty);
    }
    Ok(PerformanceVector {
        accuracy: ratio(cm.tp + cm.tn, cm.total()),
        sensitivity: ratio(cm.tp, cm.positives()),
        specificity: ratio(cm.tn, cm.negatives()),
    })
}

/// Deterministic sub-seed derivation (SplitMix64 finalizer over
/// `seed + stream * golden gamma`).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random assignment of instance indices to `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub k: usize,
    /// Fold of each instance index.
    pub assignment: Vec<usize>,
}

impl FoldPlan {
    /// Instance indices of each fold, ascending.
    pub fn folds(&self) -> Vec<Vec<usize>> {
        let mut folds = vec![Vec::new(); self.k];
        for (i, &f) in self.assignment.iter().enumerate() {
            folds[f].push(i);
        }
        folds
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.folds().iter().map(Vec::len).collect()
    }
}

/// Shuffles `0..n` with a ChaCha8 generator seeded by `seed` and cuts the
/// permutation into `k` contiguous chunks; the `n mod k` larger chunks come
/// last.
pub fn allocate_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan, EvalError> {
    if k < 2 || n < k {
        return Err(EvalError::TooFewInstances { n, k });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let (base, extra) = (n / k, n % k);
    let mut assignment = vec![0; n];
    let mut pos = 0;
    for fold in 0..k {
        let size = if fold >= k - extra { base + 1 } else { base };
        for &idx in &perm[pos..pos + size] {
            assignment[idx] = fold;
        }
        pos += size;
    }
    Ok(FoldPlan { seed, k, assignment })
}

/// Grows a tree on `points` and prunes it to the configured depth.
pub fn fit_tree(points: &[LabeledPoint], cfg: &PipelineConfig) -> Result<TreeNode, CartError> {
    let full = cart::grow_tree(points, &cfg.costs)?;
    cart::prune_to_depth(&full, cfg.prune_depth, &cfg.costs)
}

/// FNV-1a digest of a training multiset, independent of order.
pub fn training_digest(points: &[LabeledPoint]) -> u64 {
    let mut keys: Vec<(u64, u64, bool)> =
        points.iter().map(|p| (p.features[0].to_bits(), p.features[1].to_bits(), p.label)).collect();
    keys.sort_unstable();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for b in bytes {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    for (a, b, l) in keys {
        eat(&a.to_le_bytes());
        eat(&b.to_le_bytes());
        eat(&[u8::from(l)]);
    }
    h
}

mod hex_u64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:016x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let s = String::deserialize(d)?;
        u64::from_str_radix(&s, 16).map_err(serde::de::Error::custom)
    }
}

/// One (allocation, fold) cell of the protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRun {
    pub allocation: usize,
    pub fold: usize,
    pub allocation_seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(with = "hex_u64")]
    pub train_digest: u64,
    pub confusion: ConfusionMatrix,
    pub performance: PerformanceVector,
    pub tree: TreeNode,
    #[serde(skip)]
    pub test_indices: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub runs: usize,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl Aggregate {
    pub fn of(perfs: &[PerformanceVector]) -> Self {
        Self {
            accuracy: mean_defined(perfs.iter().map(|p| p.accuracy)),
            sensitivity: mean_defined(perfs.iter().map(|p| p.sensitivity)),
            specificity: mean_defined(perfs.iter().map(|p| p.specificity)),
            runs: perfs.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub k: usize,
    pub allocations: usize,
    pub allocation_seeds: Vec<u64>,
    pub n_instances: usize,
    pub n_hypo: usize,
    /// Ordered by `(allocation, fold)`.
    pub runs: Vec<FoldRun>,
    pub aggregate: Aggregate,
}

/// Repeated k-fold cross-validation.
///
/// Allocation `r` shuffles with seed `derive_seed(seed, r)`. Each cell trains
/// on the other `k - 1` folds and tests on the held-out one.
pub fn cross_validate(
    instances: &[DecisionInstance],
    cfg: &PipelineConfig,
    seed: u64,
    exec: Execution,
) -> Result<RunReport, EvalError> {
    let points: Vec<LabeledPoint> = instances.iter().map(LabeledPoint::from).collect();
    cross_validate_points(&points, cfg, seed, exec)
}

pub fn cross_validate_points(
    points: &[LabeledPoint],
    cfg: &PipelineConfig,
    seed: u64,
    exec: Execution,
) -> Result<RunReport, EvalError> {
    if points.is_empty() {
        return Err(EvalError::Empty);
    }
    let n_hypo = points.iter().filter(|p| p.label).count();
    if n_hypo == 0 || n_hypo == points.len() {
        return Err(EvalError::SingleClass);
    }
    let (k, r) = (cfg.folds, cfg.allocations);
    let allocation_seeds: Vec<u64> = (0..r as u64).map(|i| derive_seed(seed, i)).collect();
    let plans = allocation_seeds
        .iter()
        .map(|&s| allocate_folds(points.len(), k, s))
        .collect::<Result<Vec<_>, _>>()?;

    let cells: Vec<(usize, usize)> = (0..r).flat_map(|a| (0..k).map(move |f| (a, f))).collect();
    let runs = exec.try_map(&cells, |&(allocation, fold)| {
        let plan = &plans[allocation];
        let (mut train, mut test_indices) = (Vec::new(), Vec::new());
        for (i, &f) in plan.assignment.iter().enumerate() {
            if f == fold {
                test_indices.push(i);
            } else {
                train.push(points[i]);
            }
        }
        let tree = fit_tree(&train, cfg)?;
        let mut cm = ConfusionMatrix::default();
        for &i in &test_indices {
            cm.record(tree.classify(points[i].features), points[i].label);
        }
        Ok::<_, EvalError>(FoldRun {
            allocation,
            fold,
            allocation_seed: plan.seed,
            n_train: train.len(),
            n_test: test_indices.len(),
            train_digest: training_digest(&train),
            confusion: cm,
            performance: metrics(&cm)?,
            tree,
            test_indices,
        })
    })?;

    let perfs: Vec<PerformanceVector> = runs.iter().map(|r| r.performance).collect();
    Ok(RunReport {
        seed,
        k,
        allocations: r,
        allocation_seeds,
        n_instances: points.len(),
        n_hypo,
        aggregate: Aggregate::of(&perfs),
        runs,
    })
}

fn sort_key(p: &PerformanceVector) -> [f64; 3] {
    let v = |x: Option<f64>| x.unwrap_or(f64::NEG_INFINITY);
    [v(p.sensitivity), v(p.accuracy), v(p.specificity)]
}

/// Run with the highest `(sensitivity, accuracy, specificity)`, compared
/// lexicographically; the earliest run wins ties. Undefined metrics rank lowest.
pub fn select_best_tree(report: &RunReport) -> Result<&FoldRun, EvalError> {
    let mut best: Option<&FoldRun> = None;
    for run in &report.runs {
        let better = match best {
            None => true,
            Some(b) => {
                let (ka, kb) = (sort_key(&run.performance), sort_key(&b.performance));
                ka.partial_cmp(&kb) == Some(std::cmp::Ordering::Greater)
            }
        };
        if better {
            best = Some(run);
        }
    }
    best.ok_or(EvalError::Empty)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRow {
    pub patient_id: String,
    pub dm_type: DmType,
    pub total_points: usize,
    pub hypo_points: usize,
    pub confusion: ConfusionMatrix,
    pub performance: PerformanceVector,
}

fn group_by<K: PartialEq + Clone>(
    instances: &[DecisionInstance],
    key: impl Fn(&DecisionInstance) -> K,
) -> Vec<(K, Vec<&DecisionInstance>)> {
    let mut groups: Vec<(K, Vec<&DecisionInstance>)> = Vec::new();
    for inst in instances {
        let k = key(inst);
        match groups.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push(inst),
            None => groups.push((k, vec![inst])),
        }
    }
    groups
}

fn tally(tree: &TreeNode, group: &[&DecisionInstance]) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::default();
    for i in group {
        cm.record(tree.classify(i.features()), i.label);
    }
    cm
}

/// Performance of one tree on each patient, in order of first appearance.
pub fn evaluate_per_patient(tree: &TreeNode, instances: &[DecisionInstance]) -> Vec<PatientRow> {
    group_by(instances, |i| i.patient_id.clone())
        .into_iter()
        .map(|(patient_id, group)| {
            let cm = tally(tree, &group);
            PatientRow {
                dm_type: group[0].dm_type,
                total_points: group.len(),
                hypo_points: group.iter().filter(|i| i.label).count(),
                performance: metrics(&cm).expect("non-empty group"),
                confusion: cm,
                patient_id,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub dm_type: DmType,
    pub patients: usize,
    pub total_points: usize,
    pub hypo_points: usize,
    pub confusion: ConfusionMatrix,
    pub performance: PerformanceVector,
}

/// Performance of one tree on the pooled instances of each diabetes type.
pub fn evaluate_per_group(tree: &TreeNode, instances: &[DecisionInstance]) -> Vec<GroupRow> {
    let mut groups = group_by(instances, |i| i.dm_type);
    groups.sort_by_key(|(k, _)| *k);
    groups
        .into_iter()
        .map(|(dm_type, group)| {
            let cm = tally(tree, &group);
            let mut ids: Vec<&str> = group.iter().map(|i| i.patient_id.as_str()).collect();
            ids.sort_unstable();
            ids.dedup();
            GroupRow {
                dm_type,
                patients: ids.len(),
                total_points: group.len(),
                hypo_points: group.iter().filter(|i| i.label).count(),
                performance: metrics(&cm).expect("non-empty group"),
                confusion: cm,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityRow {
    pub patient_id: String,
    pub sensitivity: Option<f64>,
    pub predicted: u64,
    pub missed: u64,
    /// Lowest horizon reading of each missed event, in decision order.
    pub missed_lows: Vec<f64>,
    pub severe: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityTable {
    pub severe_threshold: f64,
    /// One row per patient, in order of first appearance.
    pub rows: Vec<SeverityRow>,
    pub total_hypo: u64,
    pub total_missed: u64,
    pub total_severe: usize,
}

/// Lowest horizon reading for every false negative, flagged severe at or
/// below `severe_threshold`.
pub fn missed_event_analysis(tree: &TreeNode, instances: &[DecisionInstance], severe_threshold: f64) -> SeverityTable {
    let rows: Vec<SeverityRow> = group_by(instances, |i| i.patient_id.clone())
        .into_iter()
        .map(|(patient_id, group)| {
            let cm = tally(tree, &group);
            let missed_lows: Vec<f64> = group
                .iter()
                .filter(|i| i.label && tree.classify(i.features()) == Class::N)
                .map(|i| i.ph_min_bg)
                .collect();
            SeverityRow {
                patient_id,
                sensitivity: ratio(cm.tp, cm.positives()),
                predicted: cm.tp,
                missed: cm.fn_,
                severe: missed_lows.iter().filter(|&&v| v <= severe_threshold).count(),
                missed_lows,
            }
        })
        .collect();
    SeverityTable {
        severe_threshold,
        total_hypo: rows.iter().map(|r| r.predicted + r.missed).sum(),
        total_missed: rows.iter().map(|r| r.missed).sum(),
        total_severe: rows.iter().map(|r| r.severe).sum(),
        rows,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f: f64,
    pub p: f64,
    pub df_between: usize,
    pub df_within: usize,
}

/// One-way ANOVA. The p-value is the upper tail of the F distribution,
/// `I_{d2/(d2 + d1 F)}(d2/2, d1/2)`.
pub fn one_way_anova(groups: &[Vec<f64>]) -> Result<AnovaResult, EvalError> {
    if groups.len() < 2 {
        return Err(EvalError::Anova("need at least two groups".into()));
    }
    if groups.iter().any(Vec::is_empty) {
        return Err(EvalError::Anova("every group needs at least one value".into()));
    }
    if groups.iter().flatten().any(|v| !v.is_finite()) {
        return Err(EvalError::Anova("values must be finite".into()));
    }
    let n: usize = groups.iter().map(Vec::len).sum();
    let g = groups.len();
    if n <= g {
        return Err(EvalError::Anova("need a group with at least two values".into()));
    }
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let means: Vec<f64> = groups.iter().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect();
    let ss_between: f64 = groups.iter().zip(&means).map(|(v, m)| v.len() as f64 * (m - grand).powi(2)).sum();
    let ss_within: f64 = groups
        .iter()
        .zip(&means)
        .map(|(v, m)| v.iter().map(|x| (x - m).powi(2)).sum::<f64>())
        .sum();
    let (d1, d2) = (g - 1, n - g);

    // Sums of squares below this scale are rounding noise of identical values.
    let scale = groups.iter().flatten().map(|x| x * x).sum::<f64>().max(f64::MIN_POSITIVE);
    let eps = 1e-24 * scale;
    let (f, p) = if ss_within <= eps {
        if ss_between <= eps {
            (0.0, 1.0)
        } else {
            (f64::INFINITY, 0.0)
        }
    } else {
        let f = (ss_between / d1 as f64) / (ss_within / d2 as f64);
        (f, f_upper_tail(f, d1 as f64, d2 as f64)?)
    };
    Ok(AnovaResult { f, p, df_between: d1, df_within: d2 })
}

/// Upper tail `P(F > f)` of the F distribution with `(d1, d2)` degrees of freedom.
pub fn f_upper_tail(f: f64, d1: f64, d2: f64) -> Result<f64, EvalError> {
    if f.is_nan() || f < 0.0 || d1 <= 0.0 || d2 <= 0.0 {
        return Err(EvalError::Anova(format!("invalid F tail arguments ({f}, {d1}, {d2})")));
    }
    if f.is_infinite() {
        return Ok(0.0);
    }
    let x = d2 / (d2 + d1 * f);
    checked_beta_reg(d2 / 2.0, d1 / 2.0, x).map_err(|e| EvalError::Anova(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthScore {
    pub depth: usize,
    /// Mean cost-weighted misclassification per held-out instance.
    pub mean_cost: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

/// Cross-validated cost of each pruning depth, using the same fold plans as
/// [`cross_validate`]. Each training fold grows one full tree, pruned to
/// every depth in `depths`.
pub fn depth_scan(
    instances: &[DecisionInstance],
    cfg: &PipelineConfig,
    depths: &[usize],
    seed: u64,
    exec: Execution,
) -> Result<Vec<DepthScore>, EvalError> {
    let points: Vec<LabeledPoint> = instances.iter().map(LabeledPoint::from).collect();
    if points.len() < cfg.folds {
        return Err(EvalError::TooFewInstances { n: points.len(), k: cfg.folds });
    }
    let plans = (0..cfg.allocations as u64)
        .map(|i| allocate_folds(points.len(), cfg.folds, derive_seed(seed, i)))
        .collect::<Result<Vec<_>, _>>()?;
    let cells: Vec<(usize, usize)> =
        (0..cfg.allocations).flat_map(|a| (0..cfg.folds).map(move |f| (a, f))).collect();
    let costs: CostMatrix = cfg.costs;

    let per_cell = exec.try_map(&cells, |&(a, fold)| {
        let plan = &plans[a];
        let train: Vec<LabeledPoint> =
            plan.assignment.iter().zip(&points).filter(|(f, _)| **f != fold).map(|(_, p)| *p).collect();
        let full = cart::grow_tree(&train, &costs)?;
        depths
            .iter()
            .map(|&d| {
                let tree = cart::prune_to_depth(&full, d, &costs)?;
                let mut cm = ConfusionMatrix::default();
                for (_, p) in plan.assignment.iter().zip(&points).filter(|(f, _)| **f == fold) {
                    cm.record(tree.classify(p.features), p.label);
                }
                Ok(cm)
            })
            .collect::<Result<Vec<ConfusionMatrix>, EvalError>>()
    })?;

    Ok(depths
        .iter()
        .enumerate()
        .map(|(j, &depth)| {
            let cms: Vec<ConfusionMatrix> = per_cell.iter().map(|c| c[j]).collect();
            let cost: f64 = cms.iter().map(|c| costs.cost_fn * c.fn_ as f64 + costs.cost_fp * c.fp as f64).sum();
            let n: u64 = cms.iter().map(ConfusionMatrix::total).sum();
            let perfs: Vec<PerformanceVector> = cms.iter().filter_map(|c| metrics(c).ok()).collect();
            let agg = Aggregate::of(&perfs);
            DepthScore { depth, mean_cost: cost / n as f64, sensitivity: agg.sensitivity, specificity: agg.specificity }
        })
        .collect())
}

/// Depth with the lowest cross-validated cost; the shallowest wins ties.
pub fn select_depth(scores: &[DepthScore]) -> Option<usize> {
    scores
        .iter()
        .fold(None, |best: Option<&DepthScore>, s| match best {
            Some(b) if b.mean_cost <= s.mean_cost => Some(b),
            _ => Some(s),
        })
        .map(|s| s.depth)
}
