//! Fixed pipeline constants and the [`PipelineConfig`] bundle that carries them.

use chrono::NaiveTime;
use serde::{Deserialize, Serialize};

use crate::cart::CostMatrix;
use crate::error::{Error, Result};

/// Hypoglycemia threshold in mmol/L (inclusive).
pub const HYPO_THRESHOLD_MMOL: f64 = 3.9;
/// Severe hypoglycemia threshold in mmol/L (inclusive).
pub const SEVERE_THRESHOLD_MMOL: f64 = 2.8;
/// Nominal CGM sampling period in minutes.
pub const SAMPLING_PERIOD_MIN: i64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub hypo_threshold: f64,
    pub severe_threshold: f64,
    /// Minimum warning time between a decision and the prediction horizon.
    pub lead_time_min: i64,
    /// Offsets of the horizon samples from the decision time.
    pub horizon_offsets_min: Vec<i64>,
    /// Length of the post-meal window searched for the glucose peak.
    pub peak_window_min: i64,
    /// Offsets of decision points from the meal time.
    pub decision_offsets_min: Vec<i64>,
    pub daytime_start: NaiveTime,
    pub daytime_end: NaiveTime,
    pub snap_tolerance_min: f64,
    pub costs: CostMatrix,
    pub prune_depth: usize,
    pub folds: usize,
    pub allocations: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            hypo_threshold: HYPO_THRESHOLD_MMOL,
            severe_threshold: SEVERE_THRESHOLD_MMOL,
            lead_time_min: 15,
            horizon_offsets_min: vec![15, 20, 25],
            peak_window_min: 120,
            decision_offsets_min: (0..7).map(|i| 120 + 15 * i).collect(),
            daytime_start: NaiveTime::from_hms_opt(7, 0, 0).unwrap(),
            daytime_end: NaiveTime::from_hms_opt(23, 0, 0).unwrap(),
            snap_tolerance_min: 2.5,
            costs: CostMatrix::default(),
            prune_depth: 3,
            folds: 5,
            allocations: 4,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if !(self.hypo_threshold.is_finite() && self.hypo_threshold > 0.0) {
            return bad("hypo_threshold must be positive");
        }
        if !(self.severe_threshold > 0.0 && self.severe_threshold <= self.hypo_threshold) {
            return bad("severe_threshold must be in (0, hypo_threshold]");
        }
        let h = &self.horizon_offsets_min;
        if h.is_empty() || h.windows(2).any(|w| w[0] >= w[1]) {
            return bad("horizon_offsets_min must be non-empty and strictly increasing");
        }
        if h[0] != self.lead_time_min {
            return bad("first horizon offset must equal lead_time_min");
        }
        let d = &self.decision_offsets_min;
        if d.is_empty() || d[0] != self.peak_window_min {
            return bad("decision_offsets_min must start at peak_window_min");
        }
        if d.windows(2).any(|w| w[1] - w[0] != 15) {
            return bad("decision_offsets_min must step by 15 min");
        }
        if self.daytime_start >= self.daytime_end {
            return bad("daytime_start must precede daytime_end");
        }
        if self.snap_tolerance_min.is_nan() || self.snap_tolerance_min < 0.0 {
            return bad("snap_tolerance_min must be non-negative");
        }
        self.costs.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.prune_depth == 0 {
            return bad("prune_depth must be at least 1");
        }
        if self.folds < 2 || self.allocations == 0 {
            return bad("need folds >= 2 and allocations >= 1");
        }
        Ok(())
    }
}
