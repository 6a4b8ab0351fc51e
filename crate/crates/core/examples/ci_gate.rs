//! Drive the command-line front end in-process, the way a CI job would, and
//! branch on its exit code.

use perfdiag::cli::{run, EXIT_CLEAN, EXIT_REGRESSION};

fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let d = dir.path().display().to_string();
    let step = |args: &[&str]| {
        let mut full = vec!["perfdiag".to_string()];
        full.extend(args.iter().map(|a| a.to_string()));
        run(full)
    };

    assert_eq!(step(&["--seed", "3", "--out", &d, "simulate", "--scenario", "false-sharing"]), EXIT_CLEAN);
    let report = format!("{d}/report.json");
    let code = step(&[
        "--seed", "3", "--out", &report, "diagnose",
        &format!("{d}/old.csv"), &format!("{d}/new.csv"),
        "--labels", &format!("{d}/manifest.json"),
    ]);
    match code {
        EXIT_REGRESSION => println!("gate: regression found, blocking merge"),
        EXIT_CLEAN => println!("gate: clean"),
        other => println!("gate: tool failure (exit {other})"),
    }
}
