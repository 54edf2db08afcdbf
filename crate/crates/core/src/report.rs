//! Evaluation run assembly and rendering: the cross-validation table, the
//! per-patient and per-group tables, the missed-event table, a JSON summary
//! and a static SVG chart. Every renderer is a pure function of its input,
//! so identical runs produce identical bytes.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cart::{self, TreeNode};
use crate::cgm::DmType;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::evaluation::{
    self, AnovaResult, DepthScore, EvalError, FoldRun, GroupRow, PatientRow, RunReport, SeverityTable,
};
use crate::exec::Execution;
use crate::features::DecisionInstance;

/// Depths scanned when reporting the cross-validated pruning level.
pub const SCANNED_DEPTHS: [usize; 6] = [1, 2, 3, 4, 5, 6];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub allocations: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunIndex {
    pub allocation: usize,
    pub fold: usize,
}

/// Everything an evaluation run produces; serialized as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub config: PipelineConfig,
    pub seeds: Seeds,
    pub n_instances: usize,
    pub n_hypo: usize,
    pub per_run: Vec<FoldRun>,
    pub aggregate: evaluation::Aggregate,
    pub best_run: RunIndex,
    pub best_tree: TreeNode,
    pub per_patient: Vec<PatientRow>,
    pub groups: Vec<GroupRow>,
    pub severity: SeverityTable,
    pub depth_scan: Vec<DepthScore>,
    pub selected_depth: Option<usize>,
    /// Weakest-link sequence of the full tree grown on all instances.
    pub cost_complexity_alphas: Vec<f64>,
}

impl EvaluationSummary {
    pub fn run_report(&self) -> RunReport {
        RunReport {
            seed: self.seeds.master,
            k: self.config.folds,
            allocations: self.config.allocations,
            allocation_seeds: self.seeds.allocations.clone(),
            n_instances: self.n_instances,
            n_hypo: self.n_hypo,
            runs: self.per_run.clone(),
            aggregate: self.aggregate,
        }
    }
}

/// Runs the full protocol: repeated cross-validation, best-tree selection,
/// per-patient, per-group and missed-event analysis, plus the depth scan.
pub fn run_evaluation(
    instances: &[DecisionInstance],
    cfg: &PipelineConfig,
    seed: u64,
    exec: Execution,
) -> Result<EvaluationSummary> {
    cfg.validate()?;
    let report = evaluation::cross_validate(instances, cfg, seed, exec)?;
    let best = evaluation::select_best_tree(&report)?;
    let best_tree = best.tree.clone();
    let best_run = RunIndex { allocation: best.allocation, fold: best.fold };

    let per_patient = evaluation::evaluate_per_patient(&best_tree, instances);
    let groups = evaluation::evaluate_per_group(&best_tree, instances);
    let severity = evaluation::missed_event_analysis(&best_tree, instances, cfg.severe_threshold);
    let depth_scan = evaluation::depth_scan(instances, cfg, &SCANNED_DEPTHS, seed, exec)?;
    let selected_depth = evaluation::select_depth(&depth_scan);
    let points: Vec<cart::LabeledPoint> = instances.iter().map(cart::LabeledPoint::from).collect();
    let full = cart::grow_tree(&points, &cfg.costs).map_err(EvalError::from)?;
    let cost_complexity_alphas = cart::cost_complexity_alphas(&full, &cfg.costs);

    Ok(EvaluationSummary {
        config: cfg.clone(),
        seeds: Seeds { master: seed, allocations: report.allocation_seeds.clone() },
        n_instances: report.n_instances,
        n_hypo: report.n_hypo,
        aggregate: report.aggregate,
        per_run: report.runs,
        best_run,
        best_tree,
        per_patient,
        groups,
        severity,
        depth_scan,
        selected_depth,
        cost_complexity_alphas,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// Cross-validation table: one row per (allocation, fold).
pub fn performance_csv(summary: &EvaluationSummary) -> String {
    let mut out = String::from("allocation,fold,allocation_seed,n_train,n_test,tp,fn,fp,tn,accuracy,sensitivity,specificity\n");
    for r in &summary.per_run {
        let c = r.confusion;
        let p = r.performance;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.allocation + 1,
            r.fold + 1,
            r.allocation_seed,
            r.n_train,
            r.n_test,
            c.tp,
            c.fn_,
            c.fp,
            c.tn,
            opt(p.accuracy),
            opt(p.sensitivity),
            opt(p.specificity)
        );
    }
    let a = summary.aggregate;
    let _ = writeln!(out, "mean,,,,,,,,,{},{},{}", opt(a.accuracy), opt(a.sensitivity), opt(a.specificity));
    out
}

/// Best tree tested on each patient.
pub fn per_patient_csv(summary: &EvaluationSummary) -> String {
    let mut out = String::from("patient_id,total_points,hypo_points,dm_type,tp,fn,fp,tn,accuracy,sensitivity,specificity\n");
    for r in &summary.per_patient {
        let c = r.confusion;
        let p = r.performance;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.patient_id,
            r.total_points,
            r.hypo_points,
            r.dm_type,
            c.tp,
            c.fn_,
            c.fp,
            c.tn,
            opt(p.accuracy),
            opt(p.sensitivity),
            opt(p.specificity)
        );
    }
    out
}

/// Best tree tested on each diabetes-type group.
pub fn groups_csv(summary: &EvaluationSummary) -> String {
    let mut out = String::from("dm_type,patients,total_points,hypo_points,tp,fn,fp,tn,accuracy,sensitivity,specificity\n");
    for g in &summary.groups {
        let c = g.confusion;
        let p = g.performance;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            g.dm_type,
            g.patients,
            g.total_points,
            g.hypo_points,
            c.tp,
            c.fn_,
            c.fp,
            c.tn,
            opt(p.accuracy),
            opt(p.sensitivity),
            opt(p.specificity)
        );
    }
    out
}

/// Patients with missed events and the lowest horizon reading of each miss.
/// Lows are `;`-separated, severe ones suffixed with `*`.
pub fn missed_events_csv(summary: &EvaluationSummary) -> String {
    let sev = &summary.severity;
    let mut out = String::from("patient_id,sensitivity,predicted,missed,severe,lowest_in_horizon\n");
    for r in sev.rows.iter().filter(|r| r.missed > 0) {
        let lows: Vec<String> = r
            .missed_lows
            .iter()
            .map(|v| if *v <= sev.severe_threshold { format!("{v}*") } else { v.to_string() })
            .collect();
        let _ = writeln!(out, "{},{},{},{},{},{}", r.patient_id, opt(r.sensitivity), r.predicted, r.missed, r.severe, lows.join(";"));
    }
    let _ = writeln!(out, "total,,{},{},{},", sev.total_hypo - sev.total_missed, sev.total_missed, sev.total_severe);
    out
}

pub fn summary_json(summary: &EvaluationSummary) -> String {
    let mut s = serde_json::to_string_pretty(summary).expect("summary serializes");
    s.push('\n');
    s
}

pub fn parse_summary(text: &str) -> Result<EvaluationSummary> {
    Ok(serde_json::from_str(text)?)
}

/// Bar chart of accuracy, sensitivity and specificity per (allocation, fold).
pub fn performance_svg(summary: &EvaluationSummary) -> String {
    let runs = &summary.per_run;
    let (bar, gap, height) = (6.0, 6.0, 200.0);
    let group = 3.0 * bar + gap;
    let width = 60.0 + group * runs.len() as f64 + 20.0;
    let colors = ["#4c72b0", "#dd8452", "#55a868"];
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{}" font-family="sans-serif" font-size="10">"#,
        height + 60.0
    );
    let _ = writeln!(out, r#"<line x1="50" y1="20" x2="50" y2="{}" stroke="black"/>"#, 20.0 + height);
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = 20.0 + height * (1.0 - tick);
        let _ = writeln!(out, r#"<text x="45" y="{y}" text-anchor="end">{tick}</text>"#);
        let _ = writeln!(out, r##"<line x1="50" y1="{y}" x2="{}" y2="{y}" stroke="#ddd"/>"##, width - 20.0);
    }
    for (i, r) in runs.iter().enumerate() {
        let x0 = 55.0 + group * i as f64;
        let p = r.performance;
        for (j, v) in [p.accuracy, p.sensitivity, p.specificity].into_iter().enumerate() {
            let v = v.unwrap_or(0.0);
            let h = height * v;
            let _ = writeln!(
                out,
                r#"<rect x="{}" y="{}" width="{bar}" height="{h}" fill="{}"/>"#,
                x0 + bar * j as f64,
                20.0 + height - h,
                colors[j]
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}.{}</text>"#,
            x0 + 1.5 * bar,
            35.0 + height,
            r.allocation + 1,
            r.fold + 1
        );
    }
    for (j, name) in ["accuracy", "sensitivity", "specificity"].iter().enumerate() {
        let x = 60.0 + 90.0 * j as f64;
        let _ = writeln!(out, r#"<rect x="{x}" y="{}" width="8" height="8" fill="{}"/>"#, height + 45.0, colors[j]);
        let _ = writeln!(out, r#"<text x="{}" y="{}">{name}</text>"#, x + 12.0, height + 53.0);
    }
    out.push_str("</svg>\n");
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Accuracy,
    Sensitivity,
    Specificity,
}

impl std::str::FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "accuracy" => Ok(Metric::Accuracy),
            "sensitivity" => Ok(Metric::Sensitivity),
            "specificity" => Ok(Metric::Specificity),
            other => Err(format!("unknown metric `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedAnova {
    pub metric: Metric,
    pub groups: Vec<(DmType, usize)>,
    pub result: AnovaResult,
}

/// One-way ANOVA of a per-patient metric across diabetes types. Patients
/// whose metric is undefined are left out; groups left empty are dropped.
pub fn anova_by_dm_type(summary: &EvaluationSummary, metric: Metric) -> Result<GroupedAnova> {
    let mut groups: Vec<(DmType, Vec<f64>)> = Vec::new();
    for row in &summary.per_patient {
        let p = row.performance;
        let v = match metric {
            Metric::Accuracy => p.accuracy,
            Metric::Sensitivity => p.sensitivity,
            Metric::Specificity => p.specificity,
        };
        let Some(v) = v else { continue };
        match groups.iter_mut().find(|(t, _)| *t == row.dm_type) {
            Some((_, vals)) => vals.push(v),
            None => groups.push((row.dm_type, vec![v])),
        }
    }
    groups.sort_by_key(|(t, _)| *t);
    let values: Vec<Vec<f64>> = groups.iter().map(|(_, v)| v.clone()).collect();
    let result = evaluation::one_way_anova(&values).map_err(Error::from)?;
    Ok(GroupedAnova { metric, groups: groups.iter().map(|(t, v)| (*t, v.len())).collect(), result })
}
