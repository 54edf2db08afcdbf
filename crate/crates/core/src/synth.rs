//! Seeded synthetic CGM cohorts.
//!
//! Each patient gets a continuous 5-minute trace over several days. Every
//! meal raises glucose linearly to a peak within the configured delay, after
//! which it decays at a per-meal rate toward a nadir. With probability
//! `hypo_pressure` a meal is a hypoglycemic one: its decay is tuned to cross
//! the hypoglycemia threshold between 140 and 225 minutes after the meal,
//! bottoms out below the threshold, holds, then recovers. Other meals settle
//! at or above `normal_floor`.
//!
//! Observed values carry bounded uniform noise, are rounded to 0.1 mmol/L and
//! never move by more than `max_drop_rate` (or `max_rise_rate`) per minute
//! between consecutive samples. With `max_drop_rate * 25 < 6.45 - 3.9`, a
//! reading at or above 6.45 cannot be followed by a hypoglycemic reading
//! within the 25-minute horizon.

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cgm::{DmType, GlucoseSample, PatientSeries};
use crate::config::{HYPO_THRESHOLD_MMOL, SAMPLING_PERIOD_MIN};
use crate::evaluation::derive_seed;
use crate::exec::Execution;

pub const MIN_BG: f64 = 1.5;
pub const MAX_BG: f64 = 25.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid synthetic cohort config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub days_min: u32,
    pub days_max: u32,
    /// Probability that a day has a lunch as well as breakfast and dinner.
    pub three_meal_prob: f64,
    /// Bounds of the uniform peak delay after a meal, minutes.
    pub peak_delay_min: (u32, u32),
    /// Bounds of the uniform post-meal rise, mmol/L.
    pub rise: (f64, f64),
    /// Bounds of the uniform decay rate of ordinary meals, mmol/L per minute.
    pub decay_rate: (f64, f64),
    /// Bounds of the uniform nadir of ordinary meals, mmol/L.
    pub normal_nadir: (f64, f64),
    /// Lowest level an ordinary meal may settle at.
    pub normal_floor: f64,
    /// Probability that a meal ends in hypoglycemia.
    pub hypo_pressure: f64,
    /// Bounds of the uniform nadir of hypoglycemic meals, mmol/L.
    pub hypo_nadir: (f64, f64),
    /// Steepest descent of a hypoglycemic meal, mmol/L per minute.
    pub hypo_decay_max: f64,
    pub max_drop_rate: f64,
    pub max_rise_rate: f64,
    /// Half-width of the uniform measurement noise, mmol/L.
    pub noise_amplitude: f64,
    pub missing_prob: f64,
    /// Relative weights of type 1, type 2 and other patients.
    pub dm_type_weights: [f64; 3],
    pub start_date: NaiveDate,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_patients: 33,
            days_min: 3,
            days_max: 4,
            three_meal_prob: 0.5,
            peak_delay_min: (25, 90),
            rise: (3.0, 8.0),
            decay_rate: (0.02, 0.07),
            normal_nadir: (5.3, 8.5),
            normal_floor: 5.3,
            hypo_pressure: 0.15,
            hypo_nadir: (2.2, 3.7),
            hypo_decay_max: 0.04,
            max_drop_rate: 0.1,
            max_rise_rate: 0.3,
            noise_amplitude: 0.1,
            missing_prob: 0.005,
            dm_type_weights: [21.0, 10.0, 2.0],
            start_date: NaiveDate::from_ymd_opt(2015, 9, 7).unwrap(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        let range = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.0 <= r.1;
        if self.n_patients == 0 {
            return bad("n_patients must be positive");
        }
        if self.days_min == 0 || self.days_min > self.days_max {
            return bad("need 1 <= days_min <= days_max");
        }
        if !(prob(self.three_meal_prob) && prob(self.hypo_pressure) && prob(self.missing_prob)) {
            return bad("probabilities must lie in [0, 1]");
        }
        let (d0, d1) = self.peak_delay_min;
        if d0 < 5 || d0 > d1 || d1 > 120 {
            return bad("peak delay bounds must satisfy 5 <= lo <= hi <= 120");
        }
        if !(range(self.rise) && range(self.decay_rate) && range(self.normal_nadir) && range(self.hypo_nadir)) {
            return bad("ranges must be finite with lo <= hi");
        }
        if self.rise.0 <= 0.0 || self.decay_rate.0 <= 0.0 {
            return bad("rise and decay rate must be positive");
        }
        if self.normal_floor <= HYPO_THRESHOLD_MMOL + self.noise_amplitude {
            return bad("normal_floor must exceed the hypoglycemia threshold by the noise amplitude");
        }
        if self.hypo_nadir.0 <= MIN_BG || self.hypo_nadir.1 >= HYPO_THRESHOLD_MMOL {
            return bad("hypo nadir must lie inside (1.5, 3.9)");
        }
        if !(self.max_drop_rate > 0.0 && self.max_drop_rate * 25.0 < 6.45 - HYPO_THRESHOLD_MMOL) {
            return bad("max_drop_rate must be positive and below 2.55 mmol/L per 25 min");
        }
        if !(self.hypo_decay_max > 0.01 && self.hypo_decay_max < self.max_drop_rate) {
            return bad("hypo_decay_max must lie in (0.01, max_drop_rate)");
        }
        if self.max_rise_rate <= 0.0 || self.noise_amplitude.is_nan() || self.noise_amplitude < 0.0 {
            return bad("max_rise_rate must be positive and noise_amplitude non-negative");
        }
        if self.dm_type_weights.iter().any(|w| w.is_nan() || *w < 0.0) || self.dm_type_weights.iter().sum::<f64>() <= 0.0 {
            return bad("dm_type_weights must be non-negative with a positive sum");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum MealKind {
    Normal,
    Hypo { hold_min: f64, recovery_rate: f64, steepness: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Meal {
    index: usize,
    delay: f64,
    rise: f64,
    decay: f64,
    nadir: f64,
    kind: MealKind,
    /// Hypoglycemic meals: minutes after the meal at which the decay crosses the threshold.
    crossing: f64,
    ref_noise: f64,
}

/// Per-sample deterministic trajectory state.
struct Episode {
    start_value: f64,
    peak: f64,
    meal: Meal,
}

impl Episode {
    fn new(meal: Meal, start_value: f64, cfg: &SynthConfig) -> Self {
        let max_rise = 0.9 * cfg.max_rise_rate * meal.delay;
        let mut meal = meal;
        let peak = match meal.kind {
            MealKind::Normal => {
                let peak = (start_value + meal.rise.min(max_rise)).min(MAX_BG - 1.0);
                meal.nadir = meal.nadir.min(peak - 0.5).max(cfg.normal_floor);
                peak
            }
            MealKind::Hypo { steepness, .. } => {
                // Fall near the steepest allowed rate and pick the peak that crosses on schedule.
                meal.decay = cfg.hypo_decay_max * steepness;
                let target = HYPO_THRESHOLD_MMOL + meal.decay * (meal.crossing - meal.delay);
                target.clamp(start_value + 1.0, start_value + max_rise.max(1.0)).min(MAX_BG - 1.0)
            }
        };
        Self { start_value, peak, meal }
    }

    /// Noise-free glucose `tau` minutes after the meal.
    fn value(&self, tau: f64, basal: f64) -> f64 {
        let m = &self.meal;
        if tau <= m.delay {
            return self.start_value + (self.peak - self.start_value) * tau / m.delay;
        }
        let falling = self.peak - m.decay * (tau - m.delay);
        if falling > m.nadir {
            return falling;
        }
        let reached = m.delay + (self.peak - m.nadir).max(0.0) / m.decay;
        let after = tau - reached;
        match m.kind {
            MealKind::Normal => {
                // Slow drift from the nadir back toward basal.
                let drift = 0.01 * after;
                if m.nadir < basal {
                    (m.nadir + drift).min(basal)
                } else {
                    (m.nadir - drift).max(basal)
                }
            }
            MealKind::Hypo { hold_min, recovery_rate, .. } => {
                if after <= hold_min {
                    m.nadir
                } else {
                    (m.nadir + recovery_rate * (after - hold_min)).min(basal.max(m.nadir))
                }
            }
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn round1(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

fn pick_dm_type(rng: &mut ChaCha8Rng, weights: &[f64; 3]) -> DmType {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (w, t) in weights.iter().zip(DmType::ALL) {
        if u < *w {
            return t;
        }
        u -= w;
    }
    DmType::ALL[weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)]
}

/// Generates one patient; the output depends only on `cfg` and `index`.
pub fn generate_patient(cfg: &SynthConfig, index: usize) -> PatientSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, index as u64));
    let step = SAMPLING_PERIOD_MIN as f64;
    let dm_type = pick_dm_type(&mut rng, &cfg.dm_type_weights);
    let days = rng.random_range(cfg.days_min..=cfg.days_max) as usize;
    let phase = rng.random_range(0..SAMPLING_PERIOD_MIN);
    let basal = uniform(&mut rng, (cfg.normal_floor.max(5.5), 8.0));
    let start: NaiveDateTime = cfg.start_date.and_hms_opt(0, 0, 0).unwrap() + Duration::minutes(phase);
    let per_day = (24 * 60 / SAMPLING_PERIOD_MIN) as usize;
    let n = days * per_day;

    // Meal schedule: breakfast 07:00-08:30, optional lunch 12:00-13:30, dinner 18:00-19:30.
    let slot = |rng: &mut ChaCha8Rng, day: usize, hour: usize| day * per_day + hour * 12 + rng.random_range(0..=18usize);
    let mut meals = Vec::new();
    for day in 0..days {
        let lunch = rng.random::<f64>() < cfg.three_meal_prob;
        let mut idx = vec![slot(&mut rng, day, 7)];
        let l = slot(&mut rng, day, 12);
        if lunch {
            idx.push(l);
        }
        idx.push(slot(&mut rng, day, 18));
        for index in idx {
            // A fixed number of draws per meal keeps streams aligned across configs.
            let u_kind = rng.random::<f64>();
            let delay = (rng.random_range(cfg.peak_delay_min.0..=cfg.peak_delay_min.1) / 5 * 5).max(5) as f64;
            let rise = uniform(&mut rng, cfg.rise);
            let decay = uniform(&mut rng, cfg.decay_rate);
            let normal_nadir = uniform(&mut rng, cfg.normal_nadir);
            let hypo_nadir = uniform(&mut rng, cfg.hypo_nadir);
            let crossing = uniform(&mut rng, (140.0, 225.0)).max(delay + 30.0);
            let hold_min = uniform(&mut rng, (10.0, 30.0));
            let recovery_rate = uniform(&mut rng, (0.08, 0.2));
            let ref_noise = uniform(&mut rng, (-0.5, 0.5));
            let steepness = uniform(&mut rng, (0.85, 1.0));
            let (kind, nadir) = if u_kind < cfg.hypo_pressure {
                (MealKind::Hypo { hold_min, recovery_rate, steepness }, hypo_nadir)
            } else {
                (MealKind::Normal, normal_nadir)
            };
            meals.push(Meal { index, delay, rise, decay, nadir, kind, crossing, ref_noise });
        }
    }

    let mut samples = Vec::with_capacity(n);
    let mut prev = round1(basal);
    let mut episode: Option<Episode> = None;
    let mut next_meal = 0;
    let mut meal_start = 0usize;
    for i in 0..n {
        let meal_here = meals.get(next_meal).filter(|m| m.index == i).copied();
        if let Some(m) = meal_here {
            episode = Some(Episode::new(m, prev, cfg));
            meal_start = i;
            next_meal += 1;
        }
        let truth = match &episode {
            Some(e) => e.value((i - meal_start) as f64 * step, basal),
            None => basal,
        };
        let noise = cfg.noise_amplitude * (2.0 * rng.random::<f64>() - 1.0);
        let missing = rng.random::<f64>() < cfg.missing_prob;
        let lo = round1(prev - cfg.max_drop_rate * step);
        let hi = round1(prev + cfg.max_rise_rate * step);
        let observed = round1(truth + noise).clamp(lo, hi).clamp(MIN_BG + 0.1, MAX_BG);
        prev = observed;

        let timestamp = start + Duration::minutes(i as i64 * SAMPLING_PERIOD_MIN);
        let meal_ref = meal_here.map(|m| round1(observed + m.ref_noise).clamp(MIN_BG + 0.1, MAX_BG));
        // Meal rows always carry a sensor reading.
        let bg = if missing && meal_here.is_none() { None } else { Some(observed) };
        samples.push(GlucoseSample { timestamp, bg, meal_ref });
    }

    PatientSeries::new(format!("P{index:02}"), dm_type, samples).expect("generator keeps series invariants")
}

/// Generates the whole cohort. Output is identical for every execution strategy.
pub fn generate_cohort(cfg: &SynthConfig, exec: Execution) -> Result<Vec<PatientSeries>, SynthError> {
    cfg.validate()?;
    let ids: Vec<usize> = (0..cfg.n_patients).collect();
    Ok(exec.map(&ids, |&i| generate_patient(cfg, i)))
}
