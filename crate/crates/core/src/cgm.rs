//! CGM record files: parsing, validation, canonical serialization and
//! time-grid lookup.
//!
//! The record format is a header-bearing CSV:
//!
//! ```text
//! Sample#,Date,Time,Meal,SensorBG
//! 0,7.Sep.15,9:22,.,11.8
//! 2,7.Sep.15,9:32,10.2,11.8
//! ```
//!
//! `Meal` holds `.` or a reference glucose reading that marks a meal at that
//! timestamp; `SensorBG` holds a reading or `N/A`.

use std::fmt;
use std::str::FromStr;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::HYPO_THRESHOLD_MMOL;

/// mg/dL per mmol/L of glucose (molar mass 180.16 g/mol).
pub const MG_PER_MMOL: f64 = 18.016;
/// Upper bound for a plausible sensor reading in mmol/L.
pub const MAX_BG_MMOL: f64 = 40.0;

pub const CSV_HEADER: [&str; 5] = ["Sample#", "Date", "Time", "Meal", "SensorBG"];

const DATE_FMT: &str = "%d.%b.%y";
const DATE_OUT_FMT: &str = "%-d.%b.%y";
const TIME_FMT: &str = "%H:%M";
const TIME_OUT_FMT: &str = "%-H:%M";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CgmError {
    #[error("bad header: expected `{expected}`, found `{0}`", expected = CSV_HEADER.join(","))]
    Header(String),
    #[error("line {line}: {kind}")]
    Row { line: u64, kind: RowError },
    #[error("file has no data rows")]
    Empty,
    #[error("glucose value must be finite and positive, got {0}")]
    NonPositive(f64),
    #[error("sample {index}: {kind}")]
    Sample { index: usize, kind: RowError },
    #[error("unknown diabetes type `{0}`")]
    DmType(String),
    #[error("malformed csv: {0}")]
    Csv(String),
}

impl CgmError {
    /// 1-based line number of the offending row, when known.
    pub fn line(&self) -> Option<u64> {
        match self {
            CgmError::Row { line, .. } => Some(*line),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RowError {
    #[error("expected 5 fields, found {0}")]
    FieldCount(usize),
    #[error("malformed sample number `{0}`")]
    SampleNumber(String),
    #[error("malformed timestamp `{0}`")]
    Timestamp(String),
    #[error("timestamp {0} does not follow the previous row")]
    NonMonotone(NaiveDateTime),
    #[error("malformed glucose value `{0}`")]
    Malformed(String),
    #[error("glucose value {0} outside (0, {MAX_BG_MMOL}] mmol/L")]
    OutOfRange(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GlucoseUnit {
    #[default]
    #[serde(rename = "mmol")]
    MmolPerL,
    #[serde(rename = "mg")]
    MgPerDl,
}

impl FromStr for GlucoseUnit {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mmol" | "mmol/l" | "mmol_per_l" => Ok(GlucoseUnit::MmolPerL),
            "mg" | "mg/dl" | "mg_per_dl" => Ok(GlucoseUnit::MgPerDl),
            other => Err(format!("unknown glucose unit `{other}`")),
        }
    }
}

/// Converts a glucose reading to mmol/L.
pub fn to_mmol(value: f64, unit: GlucoseUnit) -> Result<f64, CgmError> {
    if !(value.is_finite() && value > 0.0) {
        return Err(CgmError::NonPositive(value));
    }
    Ok(match unit {
        GlucoseUnit::MmolPerL => value,
        GlucoseUnit::MgPerDl => value / MG_PER_MMOL,
    })
}

/// Converts a mmol/L reading to mg/dL.
pub fn to_mg(mmol: f64) -> f64 {
    mmol * MG_PER_MMOL
}

/// Hypoglycemia label of a single reading: `Some(true)` iff `bg <= 3.9`,
/// `None` when the reading is missing.
pub fn label_hypoglycemia(bg: Option<f64>) -> Option<bool> {
    bg.map(|v| v <= HYPO_THRESHOLD_MMOL)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DmType {
    Type1,
    Type2,
    #[default]
    Other,
}

impl DmType {
    pub const ALL: [DmType; 3] = [DmType::Type1, DmType::Type2, DmType::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            DmType::Type1 => "type1",
            DmType::Type2 => "type2",
            DmType::Other => "other",
        }
    }
}

impl fmt::Display for DmType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DmType {
    type Err = CgmError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "type1" | "1" | "t1" | "t1dm" => Ok(DmType::Type1),
            "type2" | "2" | "t2" | "t2dm" => Ok(DmType::Type2),
            "other" | "ds" => Ok(DmType::Other),
            _ => Err(CgmError::DmType(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlucoseSample {
    pub timestamp: NaiveDateTime,
    /// Sensor reading in mmol/L; `None` for `N/A`.
    pub bg: Option<f64>,
    /// Reference reading taken at a meal; its presence marks the meal.
    pub meal_ref: Option<f64>,
}

impl GlucoseSample {
    pub fn is_meal(&self) -> bool {
        self.meal_ref.is_some()
    }
}

/// One patient's CGM trace. Immutable once constructed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientSeries {
    patient_id: String,
    dm_type: DmType,
    samples: Vec<GlucoseSample>,
}

fn check_bg(v: f64) -> Result<(), RowError> {
    if v.is_finite() && v > 0.0 && v <= MAX_BG_MMOL {
        Ok(())
    } else {
        Err(RowError::OutOfRange(v))
    }
}

impl PatientSeries {
    /// Builds a series, checking strictly increasing timestamps and the
    /// glucose range of every present value.
    pub fn new(
        patient_id: impl Into<String>,
        dm_type: DmType,
        samples: Vec<GlucoseSample>,
    ) -> Result<Self, CgmError> {
        for (index, s) in samples.iter().enumerate() {
            for v in s.bg.iter().chain(s.meal_ref.iter()) {
                check_bg(*v).map_err(|kind| CgmError::Sample { index, kind })?;
            }
            if index > 0 && samples[index - 1].timestamp >= s.timestamp {
                return Err(CgmError::Sample { index, kind: RowError::NonMonotone(s.timestamp) });
            }
        }
        Ok(Self { patient_id: patient_id.into(), dm_type, samples })
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn dm_type(&self) -> DmType {
        self.dm_type
    }

    pub fn samples(&self) -> &[GlucoseSample] {
        &self.samples
    }

    pub fn meal_times(&self) -> impl Iterator<Item = NaiveDateTime> + '_ {
        self.samples.iter().filter(|s| s.is_meal()).map(|s| s.timestamp)
    }

    pub fn missing_count(&self) -> usize {
        self.samples.iter().filter(|s| s.bg.is_none()).count()
    }

    /// Samples with timestamps in `[from, to]`.
    pub fn range(&self, from: NaiveDateTime, to: NaiveDateTime) -> &[GlucoseSample] {
        let lo = self.samples.partition_point(|s| s.timestamp < from);
        let hi = self.samples.partition_point(|s| s.timestamp <= to);
        if lo >= hi {
            &[]
        } else {
            &self.samples[lo..hi]
        }
    }

    /// Sample with a present reading nearest to `nominal`, within
    /// `tolerance_min` minutes either side. Ties go to the earlier sample.
    pub fn sample_at(&self, nominal: NaiveDateTime, tolerance_min: f64) -> Option<&GlucoseSample> {
        let tol_secs = tolerance_min * 60.0;
        let lo = nominal - chrono::Duration::seconds(tol_secs.floor() as i64);
        let hi = nominal + chrono::Duration::seconds(tol_secs.floor() as i64);
        let mut best: Option<(&GlucoseSample, i64)> = None;
        for s in self.range(lo, hi) {
            if s.bg.is_none() {
                continue;
            }
            let dist = (s.timestamp - nominal).num_seconds().abs();
            if dist as f64 > tol_secs {
                continue;
            }
            // Samples are ascending, so strict `<` keeps the earlier on ties.
            if best.is_none_or(|(_, d)| dist < d) {
                best = Some((s, dist));
            }
        }
        best.map(|(s, _)| s)
    }

    /// Serializes back to the record CSV format, mmol/L, LF line endings.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(32 * (self.samples.len() + 1));
        out.push_str(&CSV_HEADER.join(","));
        out.push('\n');
        for (i, s) in self.samples.iter().enumerate() {
            let meal = s.meal_ref.map_or_else(|| ".".to_string(), |v| v.to_string());
            let bg = s.bg.map_or_else(|| "N/A".to_string(), |v| v.to_string());
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                i,
                s.timestamp.format(DATE_OUT_FMT),
                s.timestamp.format(TIME_OUT_FMT),
                meal,
                bg
            ));
        }
        out
    }
}

fn parse_value(field: &str, unit: GlucoseUnit) -> Result<f64, RowError> {
    let v: f64 = field.parse().map_err(|_| RowError::Malformed(field.to_string()))?;
    if !v.is_finite() || v <= 0.0 {
        return Err(RowError::OutOfRange(v));
    }
    let mmol = to_mmol(v, unit).map_err(|_| RowError::OutOfRange(v))?;
    check_bg(mmol)?;
    Ok(mmol)
}

fn parse_timestamp(date: &str, time: &str) -> Result<NaiveDateTime, RowError> {
    let bad = || RowError::Timestamp(format!("{date} {time}"));
    let d = NaiveDate::parse_from_str(date, DATE_FMT).map_err(|_| bad())?;
    let t = NaiveTime::parse_from_str(time, TIME_FMT).map_err(|_| bad())?;
    Ok(d.and_time(t))
}

/// Parses a CGM record file. Readings given in mg/dL are converted to mmol/L.
pub fn parse_cgm_file(
    text: &str,
    patient_id: &str,
    dm_type: DmType,
    unit: GlucoseUnit,
) -> Result<PatientSeries, CgmError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let header = reader.headers().map_err(|e| CgmError::Csv(e.to_string()))?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(CgmError::Header(header.iter().collect::<Vec<_>>().join(",")));
    }

    let mut samples: Vec<GlucoseSample> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CgmError::Csv(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let row_err = |kind| CgmError::Row { line, kind };
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != 5 {
            return Err(row_err(RowError::FieldCount(record.len())));
        }
        record[0]
            .parse::<u64>()
            .map_err(|_| row_err(RowError::SampleNumber(record[0].to_string())))?;
        let timestamp = parse_timestamp(&record[1], &record[2]).map_err(row_err)?;
        if let Some(prev) = samples.last() {
            if prev.timestamp >= timestamp {
                return Err(row_err(RowError::NonMonotone(timestamp)));
            }
        }
        let meal_ref = match &record[3] {
            "." | "" => None,
            f => Some(parse_value(f, unit).map_err(row_err)?),
        };
        let bg = match &record[4] {
            f if f.eq_ignore_ascii_case("N/A") => None,
            f => Some(parse_value(f, unit).map_err(row_err)?),
        };
        samples.push(GlucoseSample { timestamp, bg, meal_ref });
    }
    if samples.is_empty() {
        return Err(CgmError::Empty);
    }
    Ok(PatientSeries { patient_id: patient_id.to_string(), dm_type, samples })
}

/// File listing a cohort directory: one row per patient record file.
pub const COHORT_INDEX_FILE: &str = "patients.csv";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortEntry {
    pub patient_id: String,
    pub dm_type: DmType,
    pub file: String,
}

pub fn write_cohort_index(entries: &[CohortEntry]) -> String {
    let mut out = String::from("patient_id,dm_type,file\n");
    for e in entries {
        out.push_str(&format!("{},{},{}\n", e.patient_id, e.dm_type, e.file));
    }
    out
}

pub fn parse_cohort_index(text: &str) -> Result<Vec<CohortEntry>, CgmError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| CgmError::Csv(e.to_string()))?.clone();
    if header.iter().ne(["patient_id", "dm_type", "file"]) {
        return Err(CgmError::Header(header.iter().collect::<Vec<_>>().join(",")));
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CgmError::Csv(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 3 {
            return Err(CgmError::Row { line, kind: RowError::FieldCount(record.len()) });
        }
        out.push(CohortEntry {
            patient_id: record[0].to_string(),
            dm_type: record[1].parse()?,
            file: record[2].to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dt(s: &str) -> NaiveDateTime {
        NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M").unwrap()
    }

    const SAMPLE_ROWS: &str = "Sample#,Date,Time,Meal,SensorBG\n\
        0,7.Sep.15,9:22,.,11.8\n\
        1,7.Sep.15,9:27,.,11.4\n\
        2,7.Sep.15,9:32,10.2,11.8\n\
        3,7.Sep.15,9:37,.,12.2\n";

    fn sample_rows() -> PatientSeries {
        parse_cgm_file(SAMPLE_ROWS, "p0", DmType::Type1, GlucoseUnit::MmolPerL).unwrap()
    }

    #[test]
    fn parses_record_rows() {
        let s = sample_rows();
        assert_eq!(s.samples().len(), 4);
        let meal = s.samples()[2];
        assert_eq!(meal.timestamp, dt("2015-09-07 09:32"));
        assert_eq!(meal.bg, Some(11.8));
        assert_eq!(meal.meal_ref, Some(10.2));
        let first = s.samples()[0];
        assert_eq!(first.timestamp, dt("2015-09-07 09:22"));
        assert_eq!(first.meal_ref, None);
        assert_eq!(s.meal_times().collect::<Vec<_>>(), vec![dt("2015-09-07 09:32")]);
    }

    #[test]
    fn missing_reading_is_kept() {
        let text = "Sample#,Date,Time,Meal,SensorBG\n0,7.Sep.15,9:22,.,N/A\n1,7.Sep.15,9:27,.,5\n";
        let s = parse_cgm_file(text, "p", DmType::Other, GlucoseUnit::MmolPerL).unwrap();
        assert_eq!(s.samples()[0].bg, None);
        assert_eq!(s.missing_count(), 1);
    }

    #[test]
    fn rejects_non_monotone_with_line() {
        let text = "Sample#,Date,Time,Meal,SensorBG\n0,7.Sep.15,9:22,.,5\n1,7.Sep.15,9:27,.,5\n2,7.Sep.15,9:27,.,5\n";
        let err = parse_cgm_file(text, "p", DmType::Other, GlucoseUnit::MmolPerL).unwrap_err();
        assert_eq!(err.line(), Some(4));
        assert!(matches!(err, CgmError::Row { kind: RowError::NonMonotone(_), .. }));
    }

    #[test]
    fn rejects_bad_timestamp_and_negative_bg() {
        let text = "Sample#,Date,Time,Meal,SensorBG\n0,7.Sepx.15,9:22,.,5\n";
        let err = parse_cgm_file(text, "p", DmType::Other, GlucoseUnit::MmolPerL).unwrap_err();
        assert!(matches!(err, CgmError::Row { line: 2, kind: RowError::Timestamp(_) }));

        let text = "Sample#,Date,Time,Meal,SensorBG\n0,7.Sep.15,9:22,.,5\n1,7.Sep.15,9:27,.,-1.0\n";
        let err = parse_cgm_file(text, "p", DmType::Other, GlucoseUnit::MmolPerL).unwrap_err();
        assert!(matches!(err, CgmError::Row { line: 3, kind: RowError::OutOfRange(_) }));
    }

    #[test]
    fn rejects_wrong_header() {
        let text = "n,Date,Time,Meal,SensorBG\n0,7.Sep.15,9:22,.,5\n";
        assert!(matches!(
            parse_cgm_file(text, "p", DmType::Other, GlucoseUnit::MmolPerL),
            Err(CgmError::Header(_))
        ));
    }

    #[test]
    fn mg_unit_converts_both_columns() {
        let text = "Sample#,Date,Time,Meal,SensorBG\n0,7.Sep.15,9:22,180.16,70\n";
        let s = parse_cgm_file(text, "p", DmType::Other, GlucoseUnit::MgPerDl).unwrap();
        assert!((s.samples()[0].bg.unwrap() - 3.8854).abs() < 1e-3);
        assert!((s.samples()[0].meal_ref.unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn cohort_index_round_trip() {
        let entries = vec![
            CohortEntry { patient_id: "P00".into(), dm_type: DmType::Type1, file: "P00.csv".into() },
            CohortEntry { patient_id: "P01".into(), dm_type: DmType::Other, file: "P01.csv".into() },
        ];
        assert_eq!(parse_cohort_index(&write_cohort_index(&entries)).unwrap(), entries);
        assert!(parse_cohort_index("id,type\n").is_err());
    }

    #[test]
    fn unit_conversion() {
        assert_eq!(to_mmol(5.5, GlucoseUnit::MmolPerL).unwrap(), 5.5);
        // 70 / 18.016 = 3.88543517...
        assert!((to_mmol(70.0, GlucoseUnit::MgPerDl).unwrap() - 3.885).abs() < 1e-3);
        assert!(to_mmol(0.0, GlucoseUnit::MgPerDl).is_err());
        assert!(to_mmol(-3.0, GlucoseUnit::MmolPerL).is_err());
    }

    #[test]
    fn hypoglycemia_labels() {
        assert_eq!(label_hypoglycemia(Some(3.9)), Some(true));
        assert_eq!(label_hypoglycemia(Some(3.95)), Some(false));
        assert_eq!(label_hypoglycemia(Some(2.8)), Some(true));
        assert_eq!(label_hypoglycemia(None), None);
    }

    #[test]
    fn sample_lookup() {
        let s = sample_rows();
        let hit = s.sample_at(dt("2015-09-07 09:32"), 2.5).unwrap();
        assert_eq!(hit.timestamp, dt("2015-09-07 09:32"));
        let near = s.sample_at(dt("2015-09-07 09:34"), 2.5).unwrap();
        assert_eq!(near.timestamp, dt("2015-09-07 09:32"));
        assert!(s.sample_at(dt("2015-09-07 09:45"), 2.5).is_none());
    }

    #[test]
    fn sample_lookup_tie_goes_earlier_and_skips_missing() {
        let mk = |m: u32, bg: Option<f64>| GlucoseSample {
            timestamp: dt("2020-01-01 10:00") + chrono::Duration::minutes(m as i64),
            bg,
            meal_ref: None,
        };
        let s = PatientSeries::new("p", DmType::Other, vec![mk(0, Some(5.0)), mk(4, Some(6.0)), mk(6, None)])
            .unwrap();
        let hit = s.sample_at(dt("2020-01-01 10:02"), 2.5).unwrap();
        assert_eq!(hit.bg, Some(5.0));
        assert!(s.sample_at(dt("2020-01-01 10:06"), 1.0).is_none());
    }

    fn arb_series() -> impl Strategy<Value = PatientSeries> {
        prop::collection::vec(
            (1i64..30, prop::option::weighted(0.9, 1.0f64..40.0), prop::option::weighted(0.1, 1.0f64..40.0)),
            1..60,
        )
        .prop_map(|rows| {
            let mut t = dt("2015-09-07 00:00");
            let samples = rows
                .into_iter()
                .map(|(gap, bg, meal)| {
                    t += chrono::Duration::minutes(gap);
                    GlucoseSample { timestamp: t, bg, meal_ref: meal }
                })
                .collect();
            PatientSeries::new("p", DmType::Type2, samples).unwrap()
        })
    }

    proptest! {
        #[test]
        fn csv_round_trip(series in arb_series()) {
            let text = series.to_csv();
            let back = parse_cgm_file(&text, "p", DmType::Type2, GlucoseUnit::MmolPerL).unwrap();
            prop_assert_eq!(back, series);
        }

        #[test]
        fn label_is_monotone(a in 0.1f64..40.0, b in 0.1f64..40.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(label_hypoglycemia(Some(lo)) >= label_hypoglycemia(Some(hi)));
        }

        #[test]
        fn unit_involution(x in 1e-6f64..40.0) {
            let back = to_mmol(to_mg(x), GlucoseUnit::MgPerDl).unwrap();
            prop_assert!((back - x).abs() < 1e-9);
        }

        #[test]
        fn lookup_within_tolerance(series in arb_series(), offset in 0i64..2000, tol in 0.0f64..10.0) {
            let nominal = dt("2015-09-07 00:00") + chrono::Duration::minutes(offset);
            if let Some(s) = series.sample_at(nominal, tol) {
                prop_assert!(((s.timestamp - nominal).num_seconds().abs() as f64) <= tol * 60.0);
                prop_assert!(s.bg.is_some());
            }
        }
    }
}
