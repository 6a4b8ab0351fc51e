//! The three preset defect scenarios written as CSV plus their ground truth.

use perfdiag::ingest::{write_profiles, Format};
use perfdiag::synthgen::{generate, inject, Scenario, WorkloadSpec};

fn main() -> perfdiag::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let base = generate(&WorkloadSpec::preset(11))?;
    for (i, scenario) in Scenario::ALL.into_iter().enumerate() {
        let (set, manifest) = inject(&base, &scenario.defect(), i as u64)?;
        let path = dir.path().join(format!("{}.csv", scenario.name()));
        write_profiles(&set, Format::Csv, std::fs::File::create(&path).expect("create"))?;
        let shifts: Vec<String> = manifest
            .defect
            .targets
            .iter()
            .map(|t| format!("{} x{}", t.counter, t.factor))
            .collect();
        println!(
            "{:<14} {:<12} {} samples perturbed across {} runs; {}",
            scenario.name(),
            manifest.defect.defect.short(),
            manifest.sample_indices.len(),
            manifest.run_ids.len(),
            shifts.join(", ")
        );
    }
    println!("written under {}", dir.path().display());
    Ok(())
}
