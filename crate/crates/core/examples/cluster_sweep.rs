//! F1 over (function, run) units as the number of clusters grows, on a
//! program where each function regresses on its own counter.

use std::collections::BTreeMap;

use perfdiag::detector::EvalMetrics;
use perfdiag::pipeline::{detect_pipeline, train_pipeline, DetectOptions, PipelineConfig};
use perfdiag::profile::DefectType;
use perfdiag::synthgen::{generate, inject, CounterShift, DefectSpec, WorkloadSpec};

fn workload(seed: u64, prefix: &str) -> WorkloadSpec {
    let mut spec = WorkloadSpec::multi_function(7, seed);
    spec.runs = 10;
    spec.run_prefix = prefix.into();
    spec
}

fn main() -> perfdiag::Result<()> {
    let old = generate(&workload(10, "run"))?;
    let mut bad = generate(&workload(12, "defect"))?;
    let counters = ["HITM", "OFFCORE_RESPONSE:REMOTE_DRAM", "L2_MISS", "BRANCH_MISPRED", "LLC_MISS", "DTLB_LOAD_MISS", "LOCK_LOADS"];
    let mut truth: BTreeMap<(String, String), bool> = BTreeMap::new();
    for (i, c) in counters.iter().enumerate() {
        let defect = DefectSpec {
            defect: DefectType::Unknown,
            targets: vec![CounterShift { counter: c.to_string(), factor: 1.6, offset_std: 0.0 }],
            affected_functions: vec![format!("func_{i}")],
            affected_fraction: 1.0,
        };
        let (next, manifest) = inject(&bad, &defect, i as u64)?;
        for (unit, hit) in manifest.unit_labels(&next) {
            *truth.entry(unit).or_insert(false) |= hit;
        }
        bad = next;
    }
    let new = generate(&workload(11, "normal"))?.merge(bad)?;

    for k in 1..=7 {
        let bundle = train_pipeline(&old, &[], &PipelineConfig { k: Some(k), seed: 5, ..PipelineConfig::default() })?;
        let report = detect_pipeline(&bundle, &new, &DetectOptions::default())?;
        let m = EvalMetrics::from_pairs(report.function_runs.iter().map(|u| {
            let key = (u.function.clone(), u.verdict.run_id.clone());
            (u.verdict.verdict.is_anomalous(), truth.get(&key).copied().unwrap_or(false))
        }));
        println!(
            "k={k}  F1 {:.3}  precision {:.3}  recall {:.3}",
            m.f1.unwrap_or(0.0),
            m.precision.unwrap_or(0.0),
            m.recall.unwrap_or(0.0)
        );
    }
    Ok(())
}
