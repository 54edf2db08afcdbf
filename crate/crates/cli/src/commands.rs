use std::fs;
use std::path::{Path, PathBuf};

use hypocart::cart::{self, TreeNode};
use hypocart::cgm::{self, CohortEntry, DmType, GlucoseUnit, PatientSeries, COHORT_INDEX_FILE};
use hypocart::evaluation;
use hypocart::features::{self, DecisionInstance};
use hypocart::report::{self, EvaluationSummary, Metric};
use hypocart::synth::{self, SynthConfig};
use hypocart::{Execution, PipelineConfig};
use serde_json::json;

use crate::error::CliError;
use crate::manifest::{emit, sidecar_path, RunManifest, MANIFEST_FILE};

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn to_json<T: serde::Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("plain data serializes")
}

pub fn load_pipeline_config(path: Option<&Path>) -> Result<PipelineConfig, CliError> {
    let cfg = match path {
        Some(p) => serde_json::from_str(&read_text(p)?)
            .map_err(|e| CliError::validation(format!("{}: {e}", p.display())))?,
        None => PipelineConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

pub struct SynthArgs<'a> {
    pub config: Option<&'a Path>,
    pub seed: u64,
    pub out: &'a Path,
    pub exec: Execution,
}

pub fn synth(args: SynthArgs) -> Result<String, CliError> {
    let mut cfg: SynthConfig = match args.config {
        Some(p) => serde_json::from_str(&read_text(p)?)
            .map_err(|e| CliError::validation(format!("{}: {e}", p.display())))?,
        None => SynthConfig::default(),
    };
    cfg.seed = args.seed;
    let cohort = synth::generate_cohort(&cfg, args.exec).map_err(hypocart::Error::from)?;
    ensure_dir(args.out)?;

    let mut manifest = RunManifest::new("synth", to_json(&cfg), json!({ "master": cfg.seed }));
    if let Some(p) = args.config {
        manifest.add_input(p)?;
    }
    let mut entries = Vec::with_capacity(cohort.len());
    for series in &cohort {
        let file = format!("{}.csv", series.patient_id());
        emit(&mut manifest, args.out, &file, series.to_csv().as_bytes())?;
        entries.push(CohortEntry { patient_id: series.patient_id().to_string(), dm_type: series.dm_type(), file });
    }
    emit(&mut manifest, args.out, COHORT_INDEX_FILE, cgm::write_cohort_index(&entries).as_bytes())?;
    let mut cfg_text = serde_json::to_string_pretty(&cfg).map_err(CliError::internal)?;
    cfg_text.push('\n');
    emit(&mut manifest, args.out, "config.json", cfg_text.as_bytes())?;
    manifest.write(&args.out.join(MANIFEST_FILE))?;
    Ok(format!("patients={} out={}\n", cohort.len(), args.out.display()))
}

/// Reads a cohort directory, or a single record file.
///
/// A directory with a `patients.csv` index is read as listed; otherwise
/// every `*.csv` file is read with its stem as patient id.
pub fn load_cohort(
    input: &Path,
    unit: GlucoseUnit,
    dm_type: DmType,
) -> Result<(Vec<PatientSeries>, Vec<PathBuf>), CliError> {
    let mut files: Vec<(String, DmType, PathBuf)> = Vec::new();
    if input.is_dir() {
        let index = input.join(COHORT_INDEX_FILE);
        if index.is_file() {
            let entries = cgm::parse_cohort_index(&read_text(&index)?).map_err(|e| CliError::from(e).in_file(&index))?;
            for e in entries {
                files.push((e.patient_id, e.dm_type, input.join(e.file)));
            }
        } else {
            let mut paths: Vec<PathBuf> = fs::read_dir(input)
                .map_err(|e| CliError::io(input, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            paths.sort();
            for p in paths {
                let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                files.push((id, dm_type, p));
            }
        }
        if files.is_empty() {
            return Err(CliError::validation(format!("{}: no record files found", input.display())));
        }
    } else {
        let id = input.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        files.push((id, dm_type, input.to_path_buf()));
    }

    let mut cohort = Vec::with_capacity(files.len());
    for (id, dm, path) in &files {
        let series = cgm::parse_cgm_file(&read_text(path)?, id, *dm, unit).map_err(|e| CliError::from(e).in_file(path))?;
        cohort.push(series);
    }
    Ok((cohort, files.into_iter().map(|f| f.2).collect()))
}

pub fn ingest(input: &Path, unit: GlucoseUnit, dm_type: DmType, manifest_path: Option<&Path>) -> Result<String, CliError> {
    let (cohort, files) = load_cohort(input, unit, dm_type)?;
    let mut out = String::from("patient_id,dm_type,samples,meals,missing\n");
    let (mut samples, mut meals, mut missing) = (0, 0, 0);
    for s in &cohort {
        let (n, m, x) = (s.samples().len(), s.meal_times().count(), s.missing_count());
        out.push_str(&format!("{},{},{n},{m},{x}\n", s.patient_id(), s.dm_type()));
        samples += n;
        meals += m;
        missing += x;
    }
    out.push_str(&format!("total,,{samples},{meals},{missing}\npatients={}\n", cohort.len()));
    if let Some(path) = manifest_path {
        let mut manifest = RunManifest::new("ingest", json!({ "unit": format!("{unit:?}") }), json!({}));
        for f in &files {
            manifest.add_input(f)?;
        }
        manifest.write(path)?;
    }
    Ok(out)
}

pub struct FeaturesArgs<'a> {
    pub input: &'a Path,
    pub out: &'a Path,
    pub unit: GlucoseUnit,
    pub dm_type: DmType,
    pub config: Option<&'a Path>,
    pub exec: Execution,
}

pub fn features(args: FeaturesArgs) -> Result<String, CliError> {
    let cfg = load_pipeline_config(args.config)?;
    let (cohort, files) = load_cohort(args.input, args.unit, args.dm_type)?;
    let instances = features::build_cohort_instances(&cohort, &cfg, args.exec);
    let text = features::write_feature_csv(&instances);
    fs::write(args.out, &text).map_err(|e| CliError::io(args.out, e))?;

    let mut manifest = RunManifest::new("features", to_json(&cfg), json!({}));
    for f in &files {
        manifest.add_input(f)?;
    }
    if let Some(c) = args.config {
        manifest.add_input(c)?;
    }
    manifest.add_output(&file_name(args.out), text.as_bytes());
    manifest.write(&sidecar_path(args.out))?;
    let n_hypo = instances.iter().filter(|i| i.label).count();
    Ok(format!("instances={} hypo={n_hypo} out={}\n", instances.len(), args.out.display()))
}

fn file_name(path: &Path) -> String {
    path.file_name().unwrap_or_default().to_string_lossy().into_owned()
}

pub fn load_features(path: &Path) -> Result<Vec<DecisionInstance>, CliError> {
    let instances = features::parse_feature_csv(&read_text(path)?)
        .map_err(|e| CliError::from(hypocart::Error::from(e)).in_file(path))?;
    if instances.is_empty() {
        return Err(CliError::validation(format!("{}: feature table has no rows", path.display())));
    }
    Ok(instances)
}

pub fn train(features_path: &Path, out: &Path, config: Option<&Path>) -> Result<String, CliError> {
    let cfg = load_pipeline_config(config)?;
    let instances = load_features(features_path)?;
    let points: Vec<cart::LabeledPoint> = instances.iter().map(cart::LabeledPoint::from).collect();
    let tree = evaluation::fit_tree(&points, &cfg).map_err(hypocart::Error::from)?;
    let mut text = tree.to_json_string();
    text.push('\n');
    fs::write(out, &text).map_err(|e| CliError::io(out, e))?;

    let mut manifest = RunManifest::new("train", to_json(&cfg), json!({}));
    manifest.add_input(features_path)?;
    if let Some(c) = config {
        manifest.add_input(c)?;
    }
    manifest.add_output(&file_name(out), text.as_bytes());
    manifest.write(&sidecar_path(out))?;
    Ok(format!("depth={} leaves={} out={}\n", tree.depth(), tree.leaf_count(), out.display()))
}

/// Files written by `evaluate`, in manifest order.
pub fn render_report(summary: &EvaluationSummary) -> Vec<(&'static str, String)> {
    let mut tree = summary.best_tree.to_json_string();
    tree.push('\n');
    vec![
        ("performance.csv", report::performance_csv(summary)),
        ("per_patient.csv", report::per_patient_csv(summary)),
        ("groups.csv", report::groups_csv(summary)),
        ("missed_events.csv", report::missed_events_csv(summary)),
        ("best_tree.json", tree),
        ("performance.svg", report::performance_svg(summary)),
        ("summary.json", report::summary_json(summary)),
    ]
}

pub struct EvaluateArgs<'a> {
    pub features: &'a Path,
    pub out: &'a Path,
    pub seed: u64,
    pub k: Option<usize>,
    pub allocations: Option<usize>,
    pub config: Option<&'a Path>,
    pub exec: Execution,
}

pub fn evaluate(args: EvaluateArgs) -> Result<String, CliError> {
    let mut cfg = load_pipeline_config(args.config)?;
    if let Some(k) = args.k {
        cfg.folds = k;
    }
    if let Some(r) = args.allocations {
        cfg.allocations = r;
    }
    cfg.validate()?;
    let instances = load_features(args.features)?;
    let summary = report::run_evaluation(&instances, &cfg, args.seed, args.exec)?;

    ensure_dir(args.out)?;
    let mut manifest = RunManifest::new("evaluate", to_json(&cfg), to_json(&summary.seeds));
    manifest.add_input(args.features)?;
    write_report(&mut manifest, &summary, args.out)?;
    Ok(summary_line(&summary, args.out))
}

fn write_report(manifest: &mut RunManifest, summary: &EvaluationSummary, out: &Path) -> Result<(), CliError> {
    for (name, text) in render_report(summary) {
        emit(manifest, out, name, text.as_bytes())?;
    }
    manifest.write(&out.join(MANIFEST_FILE))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.4}"))
}

fn summary_line(summary: &EvaluationSummary, out: &Path) -> String {
    let a = summary.aggregate;
    format!(
        "runs={} accuracy={} sensitivity={} specificity={} out={}\n",
        summary.per_run.len(),
        fmt_opt(a.accuracy),
        fmt_opt(a.sensitivity),
        fmt_opt(a.specificity),
        out.display()
    )
}

/// Regenerates an evaluation report from its manifest alone.
pub fn report(manifest_path: &Path, out: Option<&Path>, exec: Execution) -> Result<String, CliError> {
    let recorded = RunManifest::read(manifest_path)?;
    if recorded.command != "evaluate" {
        return Err(CliError::validation(format!(
            "{}: manifest of `{}` cannot be replayed as a report",
            manifest_path.display(),
            recorded.command
        )));
    }
    let cfg: PipelineConfig = serde_json::from_value(recorded.config.clone())
        .map_err(|e| CliError::validation(format!("{}: config: {e}", manifest_path.display())))?;
    cfg.validate()?;
    let seed = recorded
        .seeds
        .get("master")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| CliError::validation(format!("{}: missing master seed", manifest_path.display())))?;
    let features_path = recorded.verified_input(0)?;
    let instances = load_features(&features_path)?;
    let summary = report::run_evaluation(&instances, &cfg, seed, exec)?;

    let out = match out {
        Some(o) => o.to_path_buf(),
        None => manifest_path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf),
    };
    ensure_dir(&out)?;
    let mut manifest = RunManifest::new("evaluate", recorded.config.clone(), recorded.seeds.clone());
    manifest.add_input(&features_path)?;
    write_report(&mut manifest, &summary, &out)?;
    Ok(summary_line(&summary, &out))
}

pub fn predict(tree_path: &Path, x_t: f64, rate: f64) -> Result<String, CliError> {
    let tree = TreeNode::from_json_str(&read_text(tree_path)?)
        .map_err(|e| CliError::from(hypocart::Error::from(e)).in_file(tree_path))?;
    let class = cart::predict(&tree, x_t, rate).map_err(hypocart::Error::from)?;
    Ok(format!("{class}\n"))
}

pub fn anova(report_path: &Path, group_by: &str, metric: Metric) -> Result<String, CliError> {
    if group_by != "dm_type" {
        return Err(CliError::usage(format!("cannot group by `{group_by}`; supported: dm_type")));
    }
    let summary = report::parse_summary(&read_text(report_path)?)
        .map_err(|e| CliError::from(e).in_file(report_path))?;
    let res = report::anova_by_dm_type(&summary, metric)?;
    let groups: Vec<String> = res.groups.iter().map(|(t, n)| format!("{t}:{n}")).collect();
    Ok(format!(
        "F={} p={} df_between={} df_within={} groups={}\n",
        res.result.f,
        res.result.p,
        res.result.df_between,
        res.result.df_within,
        groups.join(";")
    ))
}
