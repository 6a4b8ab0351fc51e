//! Save a trained bundle, load it back, and confirm the reconstruction
//! errors are bit-for-bit identical.

use std::fs::File;
use std::io::{BufReader, BufWriter};

use perfdiag::ingest::normalize;
use perfdiag::pipeline::{load_bundle, save_bundle, train_pipeline, PipelineConfig};
use perfdiag::synthgen::{generate, WorkloadSpec};

fn main() -> perfdiag::Result<()> {
    let old = generate(&WorkloadSpec::preset(5))?;
    let bundle = train_pipeline(&old, &[], &PipelineConfig { seed: 5, ..PipelineConfig::default() })?;

    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("model.bundle");
    save_bundle(&bundle, BufWriter::new(File::create(&path).expect("create")))?;
    let header = std::fs::read_to_string(&path).expect("read");
    println!("header: {}", header.lines().next().unwrap_or_default());

    let loaded = load_bundle(BufReader::new(File::open(&path).expect("open")))?;
    let probe = normalize(&generate(&WorkloadSpec::preset(6))?)?;
    let mut same = 0;
    for s in &probe.samples {
        let z = s.values.as_normalized().expect("normalized");
        let c = bundle.cluster_model.function_assignment[&s.function];
        let a = bundle.models[c].reconstruction_error(z)?;
        let b = loaded.models[c].reconstruction_error(z)?;
        same += usize::from(a.to_bits() == b.to_bits());
    }
    println!("{same}/{} probe samples reproduce epsilon exactly", probe.len());
    for (c, th) in loaded.thresholds.iter().enumerate() {
        println!("cluster {c}: mu {:.4} sigma {:.4} gamma {:.4} (t = {})", th.mu, th.sigma, th.gamma, th.t);
    }
    Ok(())
}
