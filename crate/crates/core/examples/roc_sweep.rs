//! ROC curve over the threshold multiplier t for a +5 sigma HITM shift.

use perfdiag::autoencoder::{train, Topology, TrainConfig};
use perfdiag::detector::roc_sweep;
use perfdiag::ingest::normalize;
use perfdiag::profile::{DefectType, ProfileSet};
use perfdiag::synthgen::{generate, inject, CounterShift, DefectSpec, WorkloadSpec};

fn rows(set: &ProfileSet) -> Vec<Vec<f64>> {
    normalize(set)
        .expect("raw set")
        .samples
        .iter()
        .map(|s| s.values.as_normalized().expect("normalized").to_vec())
        .collect()
}

fn one_function(seed: u64) -> WorkloadSpec {
    let mut spec = WorkloadSpec::preset(seed);
    spec.functions.truncate(1);
    spec.runs = 40;
    spec
}

fn main() -> perfdiag::Result<()> {
    let training = rows(&generate(&one_function(1))?);
    let model = train(&training, &Topology::default_for(33)?, &TrainConfig::default())?;
    let train_errors = model.reconstruction_errors(&training)?;

    let normal = generate(&one_function(2))?;
    let shift = DefectSpec {
        defect: DefectType::CacheContention,
        targets: vec![CounterShift { counter: "HITM".into(), factor: 1.0, offset_std: 5.0 }],
        affected_functions: Vec::new(),
        affected_fraction: 0.5,
    };
    let (shifted, manifest) = inject(&generate(&one_function(3))?, &shift, 4)?;

    let mut test: Vec<(f64, bool)> = model
        .reconstruction_errors(&rows(&normal))?
        .into_iter()
        .map(|e| (e, false))
        .collect();
    for (i, e) in model.reconstruction_errors(&rows(&shifted))?.into_iter().enumerate() {
        test.push((e, manifest.is_perturbed(i)));
    }
    let ts: Vec<f64> = (0..=12).map(|i| i as f64 * 0.25).collect();
    println!("{:>5} {:>8} {:>6} {:>6}", "t", "gamma", "FPR", "TPR");
    for p in roc_sweep(&train_errors, &test, &ts)? {
        println!("{:>5.2} {:>8.4} {:>6.3} {:>6.3}", p.t, p.gamma, p.fpr, p.tpr);
    }
    Ok(())
}
