//! Decision instances over the post-meal decision grid.
//!
//! For each meal the glucose peak `x_h` at time `h` is taken over the first
//! two hours. Decisions are then made every 15 minutes from two hours after
//! the meal; each decision at time `t` sees the current reading `x_t` and the
//! average rate of decrease since the peak, `(x_h - x_t) / (t - h)`, and is
//! labeled 1 when any sample in the horizon `t+15, t+20, t+25` is at or
//! below the hypoglycemia threshold.

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cgm::{DmType, PatientSeries};
use crate::config::PipelineConfig;
use crate::exec::Execution;

const TS_FMT: &str = "%Y-%m-%dT%H:%M";

pub const FEATURE_HEADER: [&str; 10] = [
    "patient_id",
    "meal_time",
    "peak_time",
    "peak_value",
    "decision_time",
    "x_t",
    "rate",
    "ph_min_bg",
    "label",
    "dm_type",
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatureError {
    #[error("decision time {t} does not follow peak time {h}")]
    DegenerateRate { h: NaiveDateTime, t: NaiveDateTime },
    #[error("feature table line {line}: {msg}")]
    Table { line: u64, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MealEpisode {
    pub meal_time: NaiveDateTime,
    pub peak_time: NaiveDateTime,
    pub peak_value: f64,
    pub decision_times: Vec<NaiveDateTime>,
}

/// One alarm decision: the two predictors, the horizon label and the
/// fields needed to audit it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionInstance {
    pub patient_id: String,
    pub dm_type: DmType,
    pub meal_time: NaiveDateTime,
    pub peak_time: NaiveDateTime,
    pub peak_value: f64,
    pub decision_time: NaiveDateTime,
    pub x_t: f64,
    /// Rate of decrease since the peak in mmol/L per minute; positive when falling.
    pub rate: f64,
    /// Lowest present reading in the prediction horizon.
    pub ph_min_bg: f64,
    pub label: bool,
}

impl DecisionInstance {
    pub fn features(&self) -> [f64; 2] {
        [self.x_t, self.rate]
    }
}

/// Highest present reading in `[meal_time, meal_time + peak_window]`,
/// earliest on ties.
pub fn find_postprandial_peak(
    series: &PatientSeries,
    meal_time: NaiveDateTime,
    cfg: &PipelineConfig,
) -> Option<(NaiveDateTime, f64)> {
    let end = meal_time + Duration::minutes(cfg.peak_window_min);
    series
        .range(meal_time, end)
        .iter()
        .filter_map(|s| s.bg.map(|bg| (s.timestamp, bg)))
        .fold(None, |best: Option<(NaiveDateTime, f64)>, cur| match best {
            Some(b) if b.1 >= cur.1 => Some(b),
            _ => Some(cur),
        })
}

fn horizon_in_daytime(t: NaiveDateTime, cfg: &PipelineConfig) -> bool {
    let first = t + Duration::minutes(cfg.horizon_offsets_min[0]);
    let last = t + Duration::minutes(*cfg.horizon_offsets_min.last().unwrap());
    first.date() == last.date() && first.time() >= cfg.daytime_start && last.time() <= cfg.daytime_end
}

/// Nominal decision times for a meal, dropping times at or after the next
/// meal and times whose horizon leaves the daytime window.
pub fn decision_grid(
    meal_time: NaiveDateTime,
    next_meal: Option<NaiveDateTime>,
    cfg: &PipelineConfig,
) -> Vec<NaiveDateTime> {
    cfg.decision_offsets_min
        .iter()
        .map(|&off| meal_time + Duration::minutes(off))
        .filter(|&t| next_meal.is_none_or(|next| t < next))
        .filter(|&t| horizon_in_daytime(t, cfg))
        .collect()
}

/// Horizon label at decision time `t` and the lowest horizon reading.
/// `None` when no horizon sample is present.
pub fn horizon_label(series: &PatientSeries, t: NaiveDateTime, cfg: &PipelineConfig) -> Option<(bool, f64)> {
    let min_bg = cfg
        .horizon_offsets_min
        .iter()
        .filter_map(|&off| series.sample_at(t + Duration::minutes(off), cfg.snap_tolerance_min))
        .filter_map(|s| s.bg)
        .reduce(f64::min)?;
    Some((min_bg <= cfg.hypo_threshold, min_bg))
}

/// `(x_h - x_t) / (t - h)` in mmol/L per minute.
pub fn rate_of_decrease(
    peak_value: f64,
    peak_time: NaiveDateTime,
    x_t: f64,
    t: NaiveDateTime,
) -> Result<f64, FeatureError> {
    let minutes = (t - peak_time).num_seconds() as f64 / 60.0;
    if minutes <= 0.0 {
        return Err(FeatureError::DegenerateRate { h: peak_time, t });
    }
    Ok((peak_value - x_t) / minutes)
}

/// Meal episodes of a series: peak plus surviving decision grid.
pub fn meal_episodes(series: &PatientSeries, cfg: &PipelineConfig) -> Vec<MealEpisode> {
    let meals: Vec<NaiveDateTime> = series.meal_times().collect();
    meals
        .iter()
        .enumerate()
        .filter_map(|(i, &meal_time)| {
            let (peak_time, peak_value) = find_postprandial_peak(series, meal_time, cfg)?;
            let decision_times = decision_grid(meal_time, meals.get(i + 1).copied(), cfg);
            Some(MealEpisode { meal_time, peak_time, peak_value, decision_times })
        })
        .collect()
}

/// All decision instances of one patient, ordered by `(meal_time, t)`.
pub fn build_instances(series: &PatientSeries, cfg: &PipelineConfig) -> Vec<DecisionInstance> {
    let mut out = Vec::new();
    for ep in meal_episodes(series, cfg) {
        for &t in &ep.decision_times {
            let Some(x_t) = series.sample_at(t, cfg.snap_tolerance_min).and_then(|s| s.bg) else {
                continue;
            };
            let Ok(rate) = rate_of_decrease(ep.peak_value, ep.peak_time, x_t, t) else {
                continue;
            };
            let Some((label, ph_min_bg)) = horizon_label(series, t, cfg) else {
                continue;
            };
            out.push(DecisionInstance {
                patient_id: series.patient_id().to_string(),
                dm_type: series.dm_type(),
                meal_time: ep.meal_time,
                peak_time: ep.peak_time,
                peak_value: ep.peak_value,
                decision_time: t,
                x_t,
                rate,
                ph_min_bg,
                label,
            });
        }
    }
    out
}

/// Instances for a whole cohort, concatenated in series order.
pub fn build_cohort_instances(
    cohort: &[PatientSeries],
    cfg: &PipelineConfig,
    exec: Execution,
) -> Vec<DecisionInstance> {
    exec.map(cohort, |s| build_instances(s, cfg)).into_iter().flatten().collect()
}

/// Renders the feature table, one instance per row.
pub fn write_feature_csv(instances: &[DecisionInstance]) -> String {
    let mut out = FEATURE_HEADER.join(",");
    out.push('\n');
    for i in instances {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            i.patient_id,
            i.meal_time.format(TS_FMT),
            i.peak_time.format(TS_FMT),
            i.peak_value,
            i.decision_time.format(TS_FMT),
            i.x_t,
            i.rate,
            i.ph_min_bg,
            u8::from(i.label),
            i.dm_type,
        ));
    }
    out
}

/// Parses a feature table. The trailing `dm_type` column is optional and
/// defaults to `other`.
pub fn parse_feature_csv(text: &str) -> Result<Vec<DecisionInstance>, FeatureError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| FeatureError::Table { line: 1, msg: e.to_string() })?
        .clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 9 || cols[..9] != FEATURE_HEADER[..9] || (cols.len() == 10 && cols[9] != "dm_type") || cols.len() > 10
    {
        return Err(FeatureError::Table { line: 1, msg: format!("unexpected header `{}`", cols.join(",")) });
    }

    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| FeatureError::Table { line: 0, msg: e.to_string() })?;
        let line = record.position().map_or(0, |p| p.line());
        let err = |msg: String| FeatureError::Table { line, msg };
        if record.len() != cols.len() {
            return Err(err(format!("expected {} fields, found {}", cols.len(), record.len())));
        }
        let ts = |i: usize| {
            NaiveDateTime::parse_from_str(&record[i], TS_FMT)
                .map_err(|_| err(format!("malformed timestamp `{}` in column {}", &record[i], cols[i])))
        };
        let num = |i: usize| {
            record[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("malformed number `{}` in column {}", &record[i], cols[i])))
        };
        let label = match &record[8] {
            "0" => false,
            "1" => true,
            other => return Err(err(format!("label must be 0 or 1, found `{other}`"))),
        };
        let dm_type = if cols.len() == 10 {
            record[9].parse::<DmType>().map_err(|e| err(e.to_string()))?
        } else {
            DmType::Other
        };
        out.push(DecisionInstance {
            patient_id: record[0].to_string(),
            dm_type,
            meal_time: ts(1)?,
            peak_time: ts(2)?,
            peak_value: num(3)?,
            decision_time: ts(4)?,
            x_t: num(5)?,
            rate: num(6)?,
            ph_min_bg: num(7)?,
            label,
        });
    }
    Ok(out)
}
