//! Per-counter reconstruction errors, the vote over anomalous samples, and a
//! custom defect mapping that separates true from false sharing.

use perfdiag::autoencoder::{train, Topology, TrainConfig};
use perfdiag::detector::{compute_threshold, classify_sample};
use perfdiag::ingest::normalize;
use perfdiag::profile::ProfileSet;
use perfdiag::rootcause::{per_counter_errors, rank_counters, DefectMapping};
use perfdiag::synthgen::{generate, inject, Scenario, WorkloadSpec};

fn rows(set: &ProfileSet) -> Vec<Vec<f64>> {
    normalize(set)
        .expect("raw set")
        .samples
        .iter()
        .map(|s| s.values.as_normalized().expect("normalized").to_vec())
        .collect()
}

fn main() -> perfdiag::Result<()> {
    let mut spec = WorkloadSpec::preset(8);
    spec.functions.truncate(1);
    spec.runs = 30;
    let old = generate(&spec)?;
    let training = rows(&old);
    let model = train(&training, &Topology::default_for(old.dim())?, &TrainConfig::default())?;
    let threshold = compute_threshold(&model.reconstruction_errors(&training)?, 2.0)?;

    spec.seed = 9;
    spec.runs = 5;
    let (new, _) = inject(&generate(&spec)?, &Scenario::Numa.defect(), 1)?;
    let anomalous: Vec<Vec<f64>> = rows(&new)
        .into_iter()
        .filter(|z| classify_sample(model.reconstruction_error(z).unwrap_or(0.0), &threshold).is_anomalous())
        .collect();
    println!("{} of {} samples exceed gamma = {:.3}", anomalous.len(), new.len(), threshold.gamma);

    let e = per_counter_errors(&model, &anomalous[0])?;
    let eps = model.reconstruction_error(&anomalous[0])?;
    println!("sum of e_j^2 = {:.6}, eps^2 = {:.6}", e.iter().map(|v| v * v).sum::<f64>(), eps * eps);

    let mapping = DefectMapping::parse(
        "# site-specific rules, first match wins\n\
         *HITM* = CacheContention\n\
         *REMOTE_DRAM* = NumaLatency\n\
         *REMOTE_CACHE* = NumaLatency\n",
    )?;
    let ranking = rank_counters(&model, &anomalous, &old.counter_spec, &mapping)?;
    for v in ranking.vote_counts.iter().take(5) {
        println!("{:<32} {:>4} votes  mean error {:.3}", v.counter, v.votes, v.mean_error);
    }
    println!("root cause: {} -> {}", ranking.winner, ranking.defect);
    Ok(())
}
