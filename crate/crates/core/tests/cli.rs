use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use perfdiag::pipeline::{load_bundle, DiagnosisReport};

fn perfdiag(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_perfdiag"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Small training budget so the debug binary stays quick.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("quick.toml"), "epochs = 40\nseed = 3\n").unwrap();
    dir
}

fn simulate(dir: &Path, out: &str, seed: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec!["--seed", seed, "--out", out, "simulate"];
    args.extend_from_slice(extra);
    let o = perfdiag(dir, &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    dir.join(out)
}

fn report(path: &Path) -> DiagnosisReport {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_writes_one_csv_without_defect_and_three_files_with_one() {
    let dir = workspace();
    let plain = simulate(dir.path(), "plain", "1", &[]);
    assert!(plain.join("old.csv").exists());
    assert!(!plain.join("new.csv").exists());
    assert!(!plain.join("manifest.json").exists());

    let hitm = simulate(dir.path(), "hitm", "1", &["--scenario", "true-sharing"]);
    for f in ["old.csv", "new.csv", "manifest.json"] {
        assert!(hitm.join(f).exists(), "{f}");
    }
}

#[test]
fn bad_workload_field_is_named() {
    let dir = workspace();
    fs::write(
        dir.path().join("w.toml"),
        "runs = 0\n[[functions]]\nname = \"f\"\nsignature_seed = 1\n",
    )
    .unwrap();
    let o = perfdiag(dir.path(), &["simulate", "--workload", "w.toml"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("runs"), "{}", stderr(&o));
}

#[test]
fn train_writes_a_loadable_bundle() {
    let dir = workspace();
    simulate(dir.path(), "data", "1", &[]);
    let o = perfdiag(dir.path(), &["--config", "quick.toml", "--out", "m.bundle", "train", "data/old.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let bundle = load_bundle(fs::File::open(dir.path().join("m.bundle")).unwrap()).unwrap();
    assert_eq!(bundle.cluster_model.k, 2);
}

#[test]
fn under_sampled_function_exits_2_and_names_it() {
    let dir = workspace();
    simulate(dir.path(), "tiny", "1", &["--runs", "2"]);
    let o = perfdiag(dir.path(), &["--config", "quick.toml", "train", "tiny/old.csv"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("compute_kernel"), "{}", stderr(&o));
}

#[test]
fn missing_config_exits_3() {
    let dir = workspace();
    let o = perfdiag(dir.path(), &["--config", "absent.toml", "train", "whatever.csv"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn usage_errors_exit_3() {
    let dir = workspace();
    assert_eq!(code(&perfdiag(dir.path(), &["train"])), 3);
    assert_eq!(code(&perfdiag(dir.path(), &["--rho", "2", "report", "x.json"])), 3);
}

#[test]
fn detect_exit_codes_follow_the_verdict() {
    let dir = workspace();
    let train = simulate(dir.path(), "train", "1", &["--scenario", "true-sharing"]);
    simulate(dir.path(), "holdout", "9", &[]);
    let o = perfdiag(
        dir.path(),
        &["--config", "quick.toml", "--out", "m.bundle", "train", train.join("old.csv").to_str().unwrap()],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let o = perfdiag(dir.path(), &["--out", "clean.json", "detect", "m.bundle", "holdout/old.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(!report(&dir.path().join("clean.json")).overall.is_anomalous());

    let o = perfdiag(
        dir.path(),
        &[
            "--out",
            "bad.json",
            "detect",
            "m.bundle",
            "train/new.csv",
            "--labels",
            "train/manifest.json",
        ],
    );
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("HITM") && stdout.contains("CacheContention"));
    let r = report(&dir.path().join("bad.json"));
    let m = r.metrics.expect("labels give metrics");
    assert_eq!(m.false_negative_rate, Some(0.0));
    assert_eq!(m.false_positive_rate, None);

    let o = perfdiag(dir.path(), &["report", "bad.json"]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("vote table"));
}

#[test]
fn diagnose_equals_train_then_detect() {
    let dir = workspace();
    simulate(dir.path(), "d", "4", &["--scenario", "numa"]);
    let p = dir.path();
    assert_eq!(code(&perfdiag(p, &["--config", "quick.toml", "--out", "m.bundle", "train", "d/old.csv"])), 0);
    assert_eq!(code(&perfdiag(p, &["--config", "quick.toml", "--out", "a.json", "detect", "m.bundle", "d/new.csv"])), 1);
    assert_eq!(code(&perfdiag(p, &["--config", "quick.toml", "--out", "b.json", "diagnose", "d/old.csv", "d/new.csv"])), 1);
    assert_eq!(fs::read(p.join("a.json")).unwrap(), fs::read(p.join("b.json")).unwrap());
    let r = report(&p.join("b.json"));
    assert!(r.regressed_functions().all(|f| f.ranking.as_ref().unwrap().winner == "OFFCORE_RESPONSE:REMOTE_DRAM"));
}

#[test]
fn t_override_is_echoed_in_the_report() {
    let dir = workspace();
    simulate(dir.path(), "d", "5", &["--scenario", "false-sharing"]);
    let o = perfdiag(
        dir.path(),
        &["--config", "quick.toml", "--t", "3.0", "--out", "r.json", "diagnose", "d/old.csv", "d/new.csv"],
    );
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let r = report(&dir.path().join("r.json"));
    assert_eq!(r.config.t, 3.0);
    assert!(r.config.thresholds.iter().all(|th| th.t == 3.0));
    assert_eq!(r.config.pipeline.seed, 3);
}

#[test]
fn mismatched_counter_specs_exit_2() {
    let dir = workspace();
    simulate(dir.path(), "d", "6", &["--scenario", "true-sharing"]);
    let p = dir.path();
    assert_eq!(code(&perfdiag(p, &["--config", "quick.toml", "--out", "m.bundle", "train", "d/old.csv"])), 0);
    fs::write(p.join("two.txt"), "HITM\nCYCLES\n").unwrap();
    fs::write(p.join("narrow.toml"), "counter_spec = \"two.txt\"\n").unwrap();
    let o = perfdiag(p, &["--config", "narrow.toml", "detect", "m.bundle", "d/new.csv"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn jsonl_output_round_trips_through_train() {
    let dir = workspace();
    let d = simulate(dir.path(), "j", "7", &["--format", "jsonl"]);
    assert!(d.join("old.jsonl").exists());
    let o = perfdiag(dir.path(), &["--config", "quick.toml", "--out", "m.bundle", "train", "j/old.jsonl"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}
