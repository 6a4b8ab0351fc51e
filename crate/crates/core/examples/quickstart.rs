//! Train on a synthetic old version, inject true sharing into the new one,
//! and print the diagnosis.

use perfdiag::pipeline::{detect_pipeline, render_table, train_pipeline, DetectOptions, PipelineConfig};
use perfdiag::synthgen::{generate, inject, Scenario, WorkloadSpec};

fn main() -> perfdiag::Result<()> {
    let old = generate(&WorkloadSpec::preset(1))?;

    let mut next = WorkloadSpec::preset(2);
    next.run_prefix = "new".into();
    let (new, manifest) = inject(&generate(&next)?, &Scenario::TrueSharing.defect(), 3)?;

    let bundle = train_pipeline(&old, &[], &PipelineConfig::default())?;
    let report = detect_pipeline(
        &bundle,
        &new,
        &DetectOptions {
            labels: Some(manifest.run_labels(&new)),
            ..DetectOptions::default()
        },
    )?;
    print!("{}", render_table(&report));
    Ok(())
}
