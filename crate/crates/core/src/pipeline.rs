//! End-to-end workflow: normalize, cluster, train one autoencoder per
//! cluster, threshold, detect, root-cause, report. Also the on-disk model
//! bundle.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autoencoder::{self, fit_scaler, Activation, AutoencoderModel, TrainConfig, Topology};
use crate::clustering::{assign_functions, kmeans, ClusterModel, KMeansConfig};
use crate::detector::{self, check_rho, classify_errors, compute_threshold, EvalMetrics, RunVerdict, Threshold, Verdict};
use crate::error::{Error, Result};
use crate::ingest::ensure_normalized;
use crate::profile::{CounterSpec, DefectType, ProfileSet};
use crate::rootcause::{rank_counters, CounterRanking, DefectMapping};

pub const BUNDLE_FORMAT_VERSION: u32 = 1;
const BUNDLE_MAGIC: &str = "PERFDIAG-BUNDLE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Number of clusters; `min(4, #functions)` when absent.
    pub k: Option<usize>,
    pub t: f64,
    pub rho: f64,
    pub min_samples: usize,
    pub train: TrainConfig,
    /// Encoder hidden widths, mirrored for the decoder. Default topology when absent.
    pub hidden: Option<Vec<usize>>,
    pub activation: Activation,
    /// k-means seed.
    pub seed: u64,
    pub kmeans_max_iters: usize,
    pub kmeans_n_init: usize,
    /// Route functions absent from training to the nearest centroid.
    pub fallback: bool,
    pub defect_mapping: DefectMapping,
    /// Counter used for the old-vs-new slowdown check.
    pub cycles_counter: String,
    /// Mean cycle-rate change below which a warning notes no observable slowdown.
    pub gate_fraction: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k: None,
            t: 2.0,
            rho: 0.5,
            min_samples: 50,
            train: TrainConfig::default(),
            hidden: None,
            activation: Activation::Tanh,
            seed: 0,
            kmeans_max_iters: 300,
            kmeans_n_init: 10,
            fallback: true,
            defect_mapping: DefectMapping::default(),
            cycles_counter: "CYCLES".into(),
            gate_fraction: 0.05,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        Threshold::from_stats(0.0, 0.0, self.t)?;
        check_rho(self.rho)?;
        if self.k == Some(0) {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.kmeans_max_iters == 0 {
            return Err(Error::Config("kmeans_max_iters must be positive".into()));
        }
        if !(self.gate_fraction >= 0.0 && self.gate_fraction.is_finite()) {
            return Err(Error::Config("gate_fraction must be non-negative".into()));
        }
        self.train.validate()
    }

    pub fn topology(&self, dim: usize) -> Result<Topology> {
        match &self.hidden {
            Some(h) => Topology::from_hidden(dim, h, self.activation),
            None => {
                let d = Topology::default_for(dim)?;
                Topology::new(d.layer_sizes().to_vec(), self.activation)
            }
        }
    }

    /// Seed for the autoencoder of cluster `c`; cluster 0 uses the base seed.
    pub fn cluster_seed(&self, cluster: usize) -> u64 {
        self.train
            .seed
            .wrapping_add((cluster as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionStats {
    pub function: String,
    pub cluster: usize,
    pub samples: usize,
    /// Mean normalized counter vector over the training samples.
    pub mean: Vec<f64>,
}

/// Trained state carried from the training phase to detection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format_version: u32,
    pub program: String,
    pub counter_spec: CounterSpec,
    pub cluster_model: ClusterModel,
    /// One model per cluster, indexed by cluster.
    pub models: Vec<AutoencoderModel>,
    pub thresholds: Vec<Threshold>,
    pub functions: Vec<FunctionStats>,
    pub config: PipelineConfig,
}

impl ModelBundle {
    pub fn check(&self) -> Result<()> {
        let k = self.cluster_model.k;
        let bad = |m: String| Err(Error::MalformedBundle(m));
        if self.cluster_model.centroids.len() != k || self.models.len() != k || self.thresholds.len() != k {
            return bad(format!(
                "{k} clusters but {} centroids, {} models, {} thresholds",
                self.cluster_model.centroids.len(),
                self.models.len(),
                self.thresholds.len()
            ));
        }
        if let Some((f, c)) = self.cluster_model.function_assignment.iter().find(|(_, c)| **c >= k) {
            return bad(format!("function `{f}` assigned to missing cluster {c}"));
        }
        if let Some(i) = self.thresholds.iter().position(|t| !t.is_consistent()) {
            return bad(format!("threshold {i} does not satisfy gamma = mu + t * sigma"));
        }
        let dim = self.counter_spec.dim();
        if let Some(i) = self.models.iter().position(|m| m.dim() != dim) {
            return bad(format!("model {i} does not match the counter spec"));
        }
        Ok(())
    }

    pub fn function_stats(&self, function: &str) -> Option<&FunctionStats> {
        self.functions.iter().find(|f| f.function == function)
    }
}

fn mean_vector(rows: &[&Vec<f64>], dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim];
    for r in rows {
        for (a, v) in m.iter_mut().zip(r.iter()) {
            *a += v;
        }
    }
    m.iter_mut().for_each(|a| *a /= rows.len().max(1) as f64);
    m
}

fn normalized_rows(set: &ProfileSet) -> Vec<Vec<f64>> {
    set.samples
        .iter()
        .map(|s| s.values.as_normalized().expect("normalized set").to_vec())
        .collect()
}

/// Trains the per-cluster models on old-version profiles. An empty
/// `functions` list selects every function in `old`.
pub fn train_pipeline(old: &ProfileSet, functions: &[String], cfg: &PipelineConfig) -> Result<ModelBundle> {
    cfg.validate()?;
    if old.is_empty() {
        return Err(Error::NoSamples);
    }
    let set = ensure_normalized(old)?;
    let rows = normalized_rows(&set);
    let dim = set.dim();
    let topology = cfg.topology(dim)?;

    let functions: Vec<String> = if functions.is_empty() {
        set.functions()
    } else {
        functions.to_vec()
    };
    let mut selected = vec![false; set.len()];
    for f in &functions {
        let idx = set.sample_indices_for(f);
        if idx.len() < cfg.min_samples.max(1) {
            return Err(Error::TooFewSamples {
                function: f.clone(),
                count: idx.len(),
                min: cfg.min_samples.max(1),
            });
        }
        for i in idx {
            selected[i] = true;
        }
    }
    let order: Vec<usize> = (0..set.len()).filter(|&i| selected[i]).collect();

    let k = cfg.k.unwrap_or_else(|| functions.len().min(4));
    if k > functions.len() {
        return Err(Error::Config(format!(
            "k = {k} exceeds the {} functions being modeled",
            functions.len()
        )));
    }

    let data: Vec<Vec<f64>> = order.iter().map(|&i| rows[i].clone()).collect();
    let scaler = fit_scaler(&data)?;
    let standardized: Vec<Vec<f64>> = data.iter().map(|x| scaler.standardize(x)).collect();
    let km = kmeans(
        &standardized,
        &KMeansConfig {
            k,
            seed: cfg.seed,
            max_iters: cfg.kmeans_max_iters,
            n_init: cfg.kmeans_n_init,
        },
    )?;
    let mut per_function: BTreeMap<String, Vec<usize>> =
        functions.iter().map(|f| (f.clone(), Vec::new())).collect();
    for (pos, &i) in order.iter().enumerate() {
        per_function
            .get_mut(&set.samples[i].function)
            .expect("selected function")
            .push(km.assignment[pos]);
    }
    let function_assignment = assign_functions(&per_function)?;
    for c in 0..k {
        if !function_assignment.values().any(|v| *v == c) {
            return Err(Error::EmptyCluster(c));
        }
    }

    let trained: Vec<(AutoencoderModel, Threshold)> = (0..k)
        .into_par_iter()
        .map(|c| {
            let samples: Vec<Vec<f64>> = order
                .iter()
                .filter(|&&i| function_assignment[&set.samples[i].function] == c)
                .map(|&i| rows[i].clone())
                .collect();
            let train_cfg = TrainConfig {
                seed: cfg.cluster_seed(c),
                ..cfg.train.clone()
            };
            let model = autoencoder::train(&samples, &topology, &train_cfg)?;
            let errors = model.reconstruction_errors(&samples)?;
            let threshold = compute_threshold(&errors, cfg.t)?;
            Ok((model, threshold))
        })
        .collect::<Result<Vec<_>>>()?;
    let (models, thresholds): (Vec<_>, Vec<_>) = trained.into_iter().unzip();

    let stats = functions
        .iter()
        .map(|f| {
            let idx = set.sample_indices_for(f);
            let fr: Vec<&Vec<f64>> = idx.iter().map(|&i| &rows[i]).collect();
            FunctionStats {
                function: f.clone(),
                cluster: function_assignment[f],
                samples: idx.len(),
                mean: mean_vector(&fr, dim),
            }
        })
        .collect();

    let bundle = ModelBundle {
        format_version: BUNDLE_FORMAT_VERSION,
        program: set.program.clone(),
        counter_spec: set.counter_spec.clone(),
        cluster_model: ClusterModel {
            k,
            centroids: km.centroids,
            function_assignment,
            inertia: km.inertia,
            seed: cfg.seed,
            scaler,
        },
        models,
        thresholds,
        functions: stats,
        config: cfg.clone(),
    };
    bundle.check()?;
    Ok(bundle)
}

/// Detection-time overrides of the bundle's configuration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectOptions {
    pub t: Option<f64>,
    pub rho: Option<f64>,
    /// Run id -> anomalous ground truth; adds metrics to the report.
    pub labels: Option<BTreeMap<String, bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionRunReport {
    pub function: String,
    pub cluster: usize,
    pub verdict: RunVerdict,
    /// Present when the function's run is anomalous.
    pub ranking: Option<CounterRanking>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub verdict: Verdict,
    pub flagged_functions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSummary {
    pub function: String,
    pub cluster: usize,
    pub runs_analyzed: usize,
    pub runs_anomalous: usize,
    pub regressed: bool,
    /// Over every flagged sample of the function's anomalous runs.
    pub ranking: Option<CounterRanking>,
    pub defect: Option<DefectType>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveConfig {
    pub t: f64,
    pub rho: f64,
    pub pipeline: PipelineConfig,
    pub thresholds: Vec<Threshold>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisReport {
    pub program: String,
    pub overall: Verdict,
    pub runs: Vec<RunSummary>,
    pub functions: Vec<FunctionSummary>,
    pub function_runs: Vec<FunctionRunReport>,
    pub metrics: Option<EvalMetrics>,
    pub warnings: Vec<String>,
    pub config: EffectiveConfig,
}

impl DiagnosisReport {
    pub fn regressed_functions(&self) -> impl Iterator<Item = &FunctionSummary> {
        self.functions.iter().filter(|f| f.regressed)
    }

    pub fn run(&self, run_id: &str) -> Option<&RunSummary> {
        self.runs.iter().find(|r| r.run_id == run_id)
    }
}

/// Scores new-version profiles against a trained bundle.
pub fn detect_pipeline(bundle: &ModelBundle, new: &ProfileSet, opts: &DetectOptions) -> Result<DiagnosisReport> {
    bundle.check()?;
    if !bundle.counter_spec.same_counters(&new.counter_spec) {
        return Err(Error::CounterSpecMismatch(format!(
            "bundle has {} counters, profiles have {}; names or order differ",
            bundle.counter_spec.dim(),
            new.counter_spec.dim()
        )));
    }
    if new.is_empty() {
        return Err(Error::NoSamples);
    }
    let t = opts.t.unwrap_or(bundle.config.t);
    let rho = opts.rho.unwrap_or(bundle.config.rho);
    check_rho(rho)?;
    let thresholds: Vec<Threshold> = bundle
        .thresholds
        .iter()
        .map(|th| th.with_t(t))
        .collect::<Result<_>>()?;

    let set = ensure_normalized(new)?;
    let rows = normalized_rows(&set);
    let run_order = set.runs();
    let spec = &bundle.counter_spec;
    let mapping = &bundle.config.defect_mapping;

    type PerFunction = (FunctionSummary, Vec<FunctionRunReport>);
    let per_function: Vec<PerFunction> = set
        .functions()
        .into_par_iter()
        .map(|function| -> Result<PerFunction> {
            let idx = set.sample_indices_for(&function);
            let fn_rows: Vec<Vec<f64>> = idx.iter().map(|&i| rows[i].clone()).collect();
            let cluster = bundle
                .cluster_model
                .route(&function, &fn_rows, bundle.config.fallback)?;
            let model = &bundle.models[cluster];
            let threshold = &thresholds[cluster];

            let mut by_run: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for &i in &idx {
                by_run.entry(set.samples[i].run_id.as_str()).or_default().push(i);
            }
            let mut reports = Vec::new();
            let mut flagged_rows = Vec::new();
            for run in run_order.iter().filter(|r| by_run.contains_key(r.as_str())) {
                let members = &by_run[run.as_str()];
                let errors = members
                    .iter()
                    .map(|&i| model.reconstruction_error(&rows[i]))
                    .collect::<Result<Vec<_>>>()?;
                let verdict = classify_errors(run, errors, threshold, rho)?;
                let ranking = if verdict.verdict.is_anomalous() {
                    let anomalous: Vec<Vec<f64>> = members
                        .iter()
                        .zip(&verdict.flags)
                        .filter(|(_, f)| **f)
                        .map(|(&i, _)| rows[i].clone())
                        .collect();
                    let r = rank_counters(model, &anomalous, spec, mapping)?;
                    flagged_rows.extend(anomalous);
                    Some(r)
                } else {
                    None
                };
                reports.push(FunctionRunReport {
                    function: function.clone(),
                    cluster,
                    verdict,
                    ranking,
                });
            }
            let runs_anomalous = reports.iter().filter(|r| r.verdict.verdict.is_anomalous()).count();
            let ranking = if flagged_rows.is_empty() {
                None
            } else {
                Some(rank_counters(model, &flagged_rows, spec, mapping)?)
            };
            let summary = FunctionSummary {
                function: function.clone(),
                cluster,
                runs_analyzed: reports.len(),
                runs_anomalous,
                regressed: runs_anomalous > 0,
                defect: ranking.as_ref().map(|r| r.defect),
                ranking,
            };
            Ok((summary, reports))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut functions = Vec::with_capacity(per_function.len());
    let mut function_runs = Vec::new();
    for (summary, reports) in per_function {
        functions.push(summary);
        function_runs.extend(reports);
    }

    let runs: Vec<RunSummary> = run_order
        .iter()
        .map(|run| {
            let flagged_functions: Vec<String> = function_runs
                .iter()
                .filter(|r| &r.verdict.run_id == run && r.verdict.verdict.is_anomalous())
                .map(|r| r.function.clone())
                .collect();
            RunSummary {
                run_id: run.clone(),
                verdict: Verdict::from_flag(!flagged_functions.is_empty()),
                flagged_functions,
            }
        })
        .collect();
    let overall = Verdict::from_flag(runs.iter().any(|r| r.verdict.is_anomalous()));

    let metrics = match &opts.labels {
        Some(labels) => {
            let verdicts: Vec<(String, Verdict)> =
                runs.iter().map(|r| (r.run_id.clone(), r.verdict)).collect();
            Some(detector::evaluate(&verdicts, labels)?)
        }
        None => None,
    };

    let warnings = slowdown_warnings(bundle, &set, &rows);

    Ok(DiagnosisReport {
        program: set.program.clone(),
        overall,
        runs,
        functions,
        function_runs,
        metrics,
        warnings,
        config: EffectiveConfig {
            t,
            rho,
            pipeline: bundle.config.clone(),
            thresholds,
        },
    })
}

fn slowdown_warnings(bundle: &ModelBundle, set: &ProfileSet, rows: &[Vec<f64>]) -> Vec<String> {
    let Some(cyc) = bundle.counter_spec.index_of(&bundle.config.cycles_counter) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for function in set.functions() {
        let Some(stats) = bundle.function_stats(&function) else {
            out.push(format!("function `{function}` was not in the training set; routed by nearest centroid"));
            continue;
        };
        let idx = set.sample_indices_for(&function);
        let new_mean = idx.iter().map(|&i| rows[i][cyc]).sum::<f64>() / idx.len() as f64;
        let old_mean = stats.mean[cyc];
        if old_mean > 0.0 {
            let change = (new_mean - old_mean) / old_mean;
            if change.abs() < bundle.config.gate_fraction {
                out.push(format!(
                    "function `{function}`: mean {} rate changed by {:+.2}% (below {:.2}%); no observable slowdown",
                    bundle.config.cycles_counter,
                    change * 100.0,
                    bundle.config.gate_fraction * 100.0
                ));
            }
        }
    }
    out
}

/// Writes `PERFDIAG-BUNDLE <version> sha256=<hex>` followed by the JSON body.
pub fn save_bundle<W: Write>(bundle: &ModelBundle, mut sink: W) -> Result<()> {
    let body = serde_json::to_string(bundle)?;
    let digest = hex::encode(Sha256::digest(body.as_bytes()));
    writeln!(sink, "{BUNDLE_MAGIC} {} sha256={digest}", bundle.format_version)
        .and_then(|_| sink.write_all(body.as_bytes()))
        .and_then(|_| sink.write_all(b"\n"))
        .and_then(|_| sink.flush())
        .map_err(|e| Error::io("<bundle sink>", e))
}

pub fn load_bundle<R: Read>(mut source: R) -> Result<ModelBundle> {
    let mut text = String::new();
    source
        .read_to_string(&mut text)
        .map_err(|e| Error::io("<bundle source>", e))?;
    let (header, rest) = text
        .split_once('\n')
        .ok_or_else(|| Error::MalformedBundle("missing header line".into()))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(BUNDLE_MAGIC) {
        return Err(Error::MalformedBundle("not a model bundle".into()));
    }
    let version: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::MalformedBundle("missing format version".into()))?;
    if version != BUNDLE_FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: BUNDLE_FORMAT_VERSION,
        });
    }
    let expected = parts
        .next()
        .and_then(|p| p.strip_prefix("sha256="))
        .ok_or_else(|| Error::MalformedBundle("missing checksum".into()))?;
    let body = rest.strip_suffix('\n').unwrap_or(rest);
    if hex::encode(Sha256::digest(body.as_bytes())) != expected {
        return Err(Error::Checksum);
    }
    let bundle: ModelBundle = serde_json::from_str(body)?;
    if bundle.format_version != version {
        return Err(Error::MalformedBundle("header and body versions differ".into()));
    }
    bundle.check()?;
    Ok(bundle)
}

fn fmt_rate(r: Option<f64>) -> String {
    r.map_or_else(|| "undefined".to_string(), |v| format!("{v:.3}"))
}

/// Plain-text rendering of a report.
pub fn render_table(report: &DiagnosisReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "program: {}    verdict: {}", report.program, report.overall);
    let _ = writeln!(s, "t = {}    rho = {}", report.config.t, report.config.rho);
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<28} {:>7} {:>6} {:>9}  {:<30} {:<16}",
        "function", "cluster", "runs", "anomalous", "root-cause counter", "defect"
    );
    for f in &report.functions {
        let (counter, defect) = match &f.ranking {
            Some(r) => (format!("{} ({} votes)", r.winner, r.vote_counts[0].votes), r.defect.to_string()),
            None => ("-".into(), "-".into()),
        };
        let _ = writeln!(
            s,
            "{:<28} {:>7} {:>6} {:>9}  {:<30} {:<16}",
            f.function, f.cluster, f.runs_analyzed, f.runs_anomalous, counter, defect
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<24} {:<10} flagged functions", "run", "verdict");
    for r in &report.runs {
        let _ = writeln!(s, "{:<24} {:<10} {}", r.run_id, r.verdict, r.flagged_functions.join(", "));
    }
    for f in report.regressed_functions() {
        if let Some(r) = &f.ranking {
            let _ = writeln!(s);
            let _ = writeln!(s, "vote table for `{}`:", f.function);
            for v in r.vote_counts.iter().take(8) {
                let _ = writeln!(s, "  {:<32} {:>5} votes  mean error {:.4}", v.counter, v.votes, v.mean_error);
            }
        }
    }
    if let Some(m) = &report.metrics {
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "FPR {}  FNR {}  precision {}  recall {}  F1 {}  (normal runs {}, anomalous runs {})",
            fmt_rate(m.false_positive_rate),
            fmt_rate(m.false_negative_rate),
            fmt_rate(m.precision),
            fmt_rate(m.recall),
            fmt_rate(m.f1),
            m.normal_runs,
            m.anomalous_runs
        );
    }
    for w in &report.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}
