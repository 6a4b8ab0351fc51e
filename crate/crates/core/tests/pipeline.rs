use perfdiag::autoencoder::{train, TrainConfig};
use perfdiag::detector::Verdict;
use perfdiag::ingest::normalize;
use perfdiag::pipeline::{detect_pipeline, train_pipeline, DetectOptions, PipelineConfig};
use perfdiag::profile::{DefectType, ProfileSet};
use perfdiag::synthgen::{generate, inject, FunctionProfile, Scenario, WorkloadSpec};
use perfdiag::Error;

fn fast() -> PipelineConfig {
    PipelineConfig {
        train: TrainConfig {
            epochs: 60,
            ..TrainConfig::default()
        },
        ..PipelineConfig::default()
    }
}

fn preset(seed: u64, runs: usize, prefix: &str) -> ProfileSet {
    let mut spec = WorkloadSpec::preset(seed);
    spec.runs = runs;
    spec.run_prefix = prefix.into();
    generate(&spec).unwrap()
}

fn rows(set: &ProfileSet) -> Vec<Vec<f64>> {
    normalize(set)
        .unwrap()
        .samples
        .iter()
        .map(|s| s.values.as_normalized().unwrap().to_vec())
        .collect()
}

#[test]
fn single_function_bundle_matches_standalone_training() {
    let mut spec = WorkloadSpec::preset(4);
    spec.functions.truncate(1);
    spec.runs = 8;
    let set = generate(&spec).unwrap();
    let cfg = PipelineConfig { k: Some(1), ..fast() };
    let bundle = train_pipeline(&set, &[], &cfg).unwrap();
    assert_eq!(bundle.models.len(), 1);
    let standalone = train(&rows(&set), &cfg.topology(set.dim()).unwrap(), &cfg.train).unwrap();
    assert_eq!(bundle.models[0], standalone);
}

#[test]
fn k1_pipeline_equals_clustering_free_training() {
    let set = preset(5, 6, "run");
    let cfg = PipelineConfig { k: Some(1), ..fast() };
    let bundle = train_pipeline(&set, &[], &cfg).unwrap();
    let merged = train(&rows(&set), &cfg.topology(set.dim()).unwrap(), &cfg.train).unwrap();
    assert_eq!(bundle.models[0], merged);
    assert!(bundle.cluster_model.function_assignment.values().all(|c| *c == 0));
}

#[test]
fn seven_signatures_give_one_function_per_cluster() {
    let mut spec = WorkloadSpec::multi_function(7, 2);
    spec.runs = 6;
    let set = generate(&spec).unwrap();
    let cfg = PipelineConfig { k: Some(7), ..fast() };
    let bundle = train_pipeline(&set, &[], &cfg).unwrap();
    for c in 0..7 {
        assert_eq!(bundle.cluster_model.functions_in(c).len(), 1, "cluster {c}");
    }
}

#[test]
fn under_sampled_function_is_named_in_the_error() {
    let mut spec = WorkloadSpec::preset(6);
    spec.runs = 1;
    spec.samples_per_run = 10;
    let set = generate(&spec).unwrap();
    let err = train_pipeline(&set, &["update_shared".to_string()], &fast()).unwrap_err();
    assert!(matches!(err, Error::TooFewSamples { count: 10, min: 50, .. }));
    assert!(err.to_string().contains("update_shared"));
}

#[test]
fn held_out_normal_profiles_are_clean_and_injected_ones_are_named() {
    let bundle = train_pipeline(&preset(7, 40, "train"), &[], &PipelineConfig::default()).unwrap();

    let normal = preset(8, 20, "normal");
    let report = detect_pipeline(&bundle, &normal, &DetectOptions::default()).unwrap();
    assert_eq!(report.overall, Verdict::Normal);
    let flagged = report.runs.iter().filter(|r| r.verdict.is_anomalous()).count();
    assert!(flagged as f64 / 20.0 <= 0.1);

    let (bad, manifest) = inject(&preset(9, 20, "bad"), &Scenario::TrueSharing.defect(), 1).unwrap();
    let report = detect_pipeline(
        &bundle,
        &bad,
        &DetectOptions {
            labels: Some(manifest.run_labels(&bad)),
            ..DetectOptions::default()
        },
    )
    .unwrap();
    assert!(report.runs.iter().all(|r| r.verdict.is_anomalous()));
    for f in report.regressed_functions() {
        let ranking = f.ranking.as_ref().expect("regressed functions carry a ranking");
        assert_eq!(ranking.winner, "HITM");
        assert_eq!(f.defect, Some(DefectType::CacheContention));
    }
    let m = report.metrics.unwrap();
    assert_eq!(m.normal_runs + m.anomalous_runs, report.runs.len());
    assert_eq!(m.true_positives, 20);
}

#[test]
fn every_run_appears_once() {
    let bundle = train_pipeline(&preset(10, 8, "train"), &[], &fast()).unwrap();
    let new = preset(11, 9, "new").merge(preset(12, 3, "extra")).unwrap();
    let report = detect_pipeline(&bundle, &new, &DetectOptions::default()).unwrap();
    let mut ids: Vec<&str> = report.runs.iter().map(|r| r.run_id.as_str()).collect();
    ids.dedup();
    assert_eq!(ids.len(), 12);
    assert_eq!(report.runs.len(), 12);
}

#[test]
fn unseen_function_routes_by_nearest_centroid_unless_disabled() {
    let bundle = train_pipeline(&preset(13, 8, "train"), &[], &fast()).unwrap();
    let mut spec = WorkloadSpec::preset(14);
    spec.runs = 3;
    spec.functions = vec![FunctionProfile::with_signature("compute_kernel_v2", 11)];
    let unseen = generate(&spec).unwrap();

    let report = detect_pipeline(&bundle, &unseen, &DetectOptions::default()).unwrap();
    let routed = report.functions[0].cluster;
    assert_eq!(routed, bundle.cluster_model.function_assignment["compute_kernel"]);
    assert!(report.warnings.iter().any(|w| w.contains("compute_kernel_v2")));

    let mut strict = bundle.clone();
    strict.config.fallback = false;
    assert!(matches!(
        detect_pipeline(&strict, &unseen, &DetectOptions::default()),
        Err(Error::UnknownFunction(_))
    ));
}

#[test]
fn slowdown_gate_is_only_a_warning() {
    let bundle = train_pipeline(&preset(15, 30, "train"), &[], &fast()).unwrap();
    let same = detect_pipeline(&bundle, &preset(16, 30, "same"), &DetectOptions::default()).unwrap();
    assert!(same.warnings.iter().any(|w| w.contains("no observable slowdown")));

    let (slow, _) = inject(&preset(17, 8, "slow"), &Scenario::TrueSharing.defect(), 2).unwrap();
    let slow = detect_pipeline(&bundle, &slow, &DetectOptions::default()).unwrap();
    assert!(!slow.warnings.iter().any(|w| w.contains("no observable slowdown")));
}

#[test]
fn t_override_is_echoed() {
    let bundle = train_pipeline(&preset(18, 8, "train"), &[], &fast()).unwrap();
    let report = detect_pipeline(
        &bundle,
        &preset(19, 2, "new"),
        &DetectOptions {
            t: Some(3.0),
            ..DetectOptions::default()
        },
    )
    .unwrap();
    assert_eq!(report.config.t, 3.0);
    assert!(report.config.thresholds.iter().all(|th| th.t == 3.0 && th.is_consistent()));
}
