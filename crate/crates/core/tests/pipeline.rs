use hypocart::cgm::{parse_cgm_file, GlucoseUnit};
use hypocart::evaluation::{cross_validate, depth_scan};
use hypocart::features::{build_cohort_instances, parse_feature_csv, write_feature_csv};
use hypocart::report::{self, Metric};
use hypocart::synth::{generate_cohort, SynthConfig};
use hypocart::{Execution, PipelineConfig};

fn small_cohort(seed: u64) -> SynthConfig {
    SynthConfig { n_patients: 10, seed, ..SynthConfig::default() }
}

#[test]
fn execution_strategies_agree() {
    let cfg = PipelineConfig::default();
    let synth = small_cohort(21);
    let seq = generate_cohort(&synth, Execution::Sequential).unwrap();
    let par = generate_cohort(&synth, Execution::Parallel).unwrap();
    assert_eq!(seq, par);

    let a = build_cohort_instances(&seq, &cfg, Execution::Sequential);
    let b = build_cohort_instances(&seq, &cfg, Execution::Parallel);
    assert_eq!(a, b);

    let ra = cross_validate(&a, &cfg, 5, Execution::Sequential).unwrap();
    let rb = cross_validate(&a, &cfg, 5, Execution::Parallel).unwrap();
    assert_eq!(ra, rb);

    let da = depth_scan(&a, &cfg, &[1, 2, 3, 4], 5, Execution::Sequential).unwrap();
    let db = depth_scan(&a, &cfg, &[1, 2, 3, 4], 5, Execution::Parallel).unwrap();
    assert_eq!(da, db);
}

#[test]
fn generated_records_survive_the_file_format() {
    let cohort = generate_cohort(&small_cohort(4), Execution::default()).unwrap();
    for series in &cohort {
        let back = parse_cgm_file(&series.to_csv(), series.patient_id(), series.dm_type(), GlucoseUnit::MmolPerL).unwrap();
        assert_eq!(&back, series);
    }
    let cfg = PipelineConfig::default();
    let instances = build_cohort_instances(&cohort, &cfg, Execution::default());
    assert_eq!(parse_feature_csv(&write_feature_csv(&instances)).unwrap(), instances);
}

#[test]
fn evaluation_summary_renders_and_round_trips() {
    let cfg = PipelineConfig::default();
    let cohort = generate_cohort(&SynthConfig::with_seed(8), Execution::default()).unwrap();
    let instances = build_cohort_instances(&cohort, &cfg, Execution::default());
    let summary = report::run_evaluation(&instances, &cfg, 99, Execution::default()).unwrap();

    assert_eq!(summary.per_run.len(), 20);
    assert_eq!(summary.seeds.allocations.len(), 4);
    assert_eq!(summary.per_patient.len(), cohort.len());
    assert!(summary.best_tree.depth() <= cfg.prune_depth);
    assert!(summary.cost_complexity_alphas.windows(2).all(|w| w[0] <= w[1]));

    let perf = report::performance_csv(&summary);
    assert_eq!(perf.lines().count(), 22);
    assert!(perf.lines().last().unwrap().starts_with("mean,"));
    let patients = report::per_patient_csv(&summary);
    assert_eq!(patients.lines().count(), cohort.len() + 1);
    // Patients without hypoglycemic points have an undefined sensitivity.
    for (row, line) in summary.per_patient.iter().zip(patients.lines().skip(1)) {
        assert_eq!(row.hypo_points == 0, line.split(',').nth(9) == Some("NA"), "{line}");
    }

    let json = report::summary_json(&summary);
    assert_eq!(report::summary_json(&report::parse_summary(&json).unwrap()), json);
    assert!(report::performance_svg(&summary).starts_with("<svg"));

    let anova = report::anova_by_dm_type(&summary, Metric::Specificity).unwrap();
    assert!((0.0..=1.0).contains(&anova.result.p));
    let grouped: usize = anova.groups.iter().map(|(_, n)| n).sum();
    assert_eq!(grouped, summary.per_patient.len());
}
