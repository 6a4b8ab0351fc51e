//! Seeded synthetic counter profiles, with optional defect injection, so the
//! pipeline can be exercised end to end without hardware.
//!
//! Each function has a per-counter base rate (events per instruction per
//! thread) and spread. A sample draws `m` shared latent factors plus
//! per-counter noise, maps them through the marginal, and scales the rate
//! back to a raw count with the sample's instruction and thread counts.
//!
//! The presets are illustrative. They imitate the direction of true sharing,
//! false sharing and NUMA defects, not their magnitude on real hardware.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::{CounterSpec, DefectType, HpcSample, ProfileSet, Values, VersionTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Marginal {
    /// `rate = mean * exp(std * z)`; `std` is in log space.
    #[default]
    LogNormal,
    /// `rate = max(0, mean + std * z)`.
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionProfile {
    pub name: String,
    /// Base rate per counter. Drawn from `signature_seed` when absent.
    #[serde(default)]
    pub means: Option<Vec<f64>>,
    /// Spread per counter. Defaults to the workload's `spread`, taken as a
    /// coefficient of variation under the normal marginal.
    #[serde(default)]
    pub stds: Option<Vec<f64>>,
    #[serde(default)]
    pub signature_seed: Option<u64>,
    /// Base-rate overrides by counter name, applied after `means`.
    #[serde(default)]
    pub overrides: BTreeMap<String, f64>,
    /// `D x m` factor loadings. Drawn per function when absent.
    #[serde(default)]
    pub loadings: Option<Vec<Vec<f64>>>,
}

impl FunctionProfile {
    pub fn with_signature(name: impl Into<String>, signature_seed: u64) -> Self {
        FunctionProfile {
            name: name.into(),
            means: None,
            stds: None,
            signature_seed: Some(signature_seed),
            overrides: BTreeMap::new(),
            loadings: None,
        }
    }
}

fn default_runs() -> usize {
    20
}
fn default_samples_per_run() -> usize {
    10
}
fn default_threads() -> Vec<u32> {
    vec![1, 2, 4, 8]
}
fn default_instructions() -> [u64; 2] {
    [1_000_000, 10_000_000]
}
fn default_latent_dim() -> usize {
    2
}
fn default_idiosyncratic() -> f64 {
    0.3
}
fn default_spread() -> f64 {
    0.25
}
fn default_run_prefix() -> String {
    "run".into()
}
fn default_program() -> String {
    "synthetic".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    #[serde(default = "default_program")]
    pub program: String,
    /// Counter names; the 33-counter reference set when absent.
    #[serde(default)]
    pub counters: Option<Vec<String>>,
    pub functions: Vec<FunctionProfile>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_samples_per_run")]
    pub samples_per_run: usize,
    #[serde(default = "default_threads")]
    pub thread_counts: Vec<u32>,
    /// Inclusive range of per-sample instruction counts.
    #[serde(default = "default_instructions")]
    pub instructions: [u64; 2],
    #[serde(default)]
    pub marginal: Marginal,
    /// Manifold dimensionality `m`; must be below the counter count.
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    /// Scale of per-counter noise relative to the unit-norm factor part.
    #[serde(default = "default_idiosyncratic")]
    pub idiosyncratic: f64,
    /// Default spread when a function has no explicit `stds`.
    #[serde(default = "default_spread")]
    pub spread: f64,
    #[serde(default = "default_run_prefix")]
    pub run_prefix: String,
    #[serde(default)]
    pub seed: u64,
}

impl WorkloadSpec {
    /// Two functions over the reference counters.
    pub fn preset(seed: u64) -> Self {
        WorkloadSpec {
            program: default_program(),
            counters: None,
            functions: vec![
                FunctionProfile::with_signature("compute_kernel", 11),
                FunctionProfile::with_signature("update_shared", 23),
            ],
            runs: default_runs(),
            samples_per_run: default_samples_per_run(),
            thread_counts: default_threads(),
            instructions: default_instructions(),
            marginal: Marginal::LogNormal,
            latent_dim: default_latent_dim(),
            idiosyncratic: default_idiosyncratic(),
            spread: default_spread(),
            run_prefix: default_run_prefix(),
            seed,
        }
    }

    /// `n` functions with distinct signatures.
    pub fn multi_function(n: usize, seed: u64) -> Self {
        let mut spec = Self::preset(seed);
        spec.functions = (0..n)
            .map(|i| FunctionProfile::with_signature(format!("func_{i}"), 101 + 7 * i as u64))
            .collect();
        spec
    }

    pub fn counter_spec(&self) -> Result<CounterSpec> {
        match &self.counters {
            Some(names) => CounterSpec::new(names.iter().cloned()),
            None => Ok(CounterSpec::reference()),
        }
    }

    pub fn validate(&self) -> Result<CounterSpec> {
        let spec = self.counter_spec()?;
        let d = spec.dim();
        let bad = |field: &str, why: String| Err(Error::Config(format!("workload `{field}`: {why}")));
        if self.functions.is_empty() {
            return bad("functions", "at least one function is required".into());
        }
        if self.runs == 0 {
            return bad("runs", "must be at least 1".into());
        }
        if self.samples_per_run == 0 {
            return bad("samples_per_run", "must be at least 1".into());
        }
        if self.thread_counts.is_empty() || self.thread_counts.contains(&0) {
            return bad("thread_counts", "must be a non-empty list of positive counts".into());
        }
        if self.instructions[0] == 0 || self.instructions[0] > self.instructions[1] {
            return bad("instructions", "must be a positive range [lo, hi]".into());
        }
        if self.latent_dim >= d {
            return bad("latent_dim", format!("{} must be below the {d} counters", self.latent_dim));
        }
        if !(self.idiosyncratic >= 0.0 && self.idiosyncratic.is_finite()) {
            return bad("idiosyncratic", "must be a finite non-negative scale".into());
        }
        if !(self.spread > 0.0 && self.spread.is_finite()) {
            return bad("spread", "must be positive".into());
        }
        let mut names = BTreeSet::new();
        for f in &self.functions {
            if !names.insert(f.name.as_str()) {
                return bad("functions", format!("duplicate function `{}`", f.name));
            }
            if f.means.is_none() && f.signature_seed.is_none() {
                return bad("functions", format!("`{}` needs `means` or `signature_seed`", f.name));
            }
            if let Some(m) = &f.means {
                if m.len() != d || m.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return bad("means", format!("`{}` needs {d} finite non-negative rates", f.name));
                }
            }
            if let Some(s) = &f.stds {
                if s.len() != d || s.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return bad("stds", format!("`{}` needs {d} positive spreads", f.name));
                }
            }
            for name in f.overrides.keys() {
                if spec.index_of(name).is_none() {
                    return bad("overrides", format!("unknown counter `{name}`"));
                }
            }
            if let Some(l) = &f.loadings {
                if l.len() != d || l.iter().any(|row| row.len() != self.latent_dim) {
                    return bad("loadings", format!("`{}` needs a {d} x {} matrix", f.name, self.latent_dim));
                }
            }
        }
        Ok(spec)
    }
}

struct ResolvedFunction {
    name: String,
    means: Vec<f64>,
    stds: Vec<f64>,
    loadings: Vec<Vec<f64>>,
}

fn resolve(f: &FunctionProfile, spec: &WorkloadSpec, counters: &CounterSpec, index: usize) -> ResolvedFunction {
    let d = counters.dim();
    let m = spec.latent_dim;
    let sig = f.signature_seed.unwrap_or(index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(sig ^ 0x5eed_f00d_u64);
    let mut means = match &f.means {
        Some(m) => m.clone(),
        // Rates spread over several decades, as real counters are.
        None => (0..d).map(|_| 10f64.powf(rng.random_range(-4.0..-0.5))).collect(),
    };
    for (name, v) in &f.overrides {
        if let Some(j) = counters.index_of(name) {
            means[j] = *v;
        }
    }
    let stds = f.stds.clone().unwrap_or_else(|| match spec.marginal {
        Marginal::LogNormal => vec![spec.spread; d],
        Marginal::Normal => means.iter().map(|m| spec.spread * m).collect(),
    });
    let loadings = match &f.loadings {
        Some(l) => l.clone(),
        None => (0..d)
            .map(|_| {
                let row: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = row.iter().map(|v: &f64| v * v).sum::<f64>().sqrt().max(1e-12);
                row.into_iter().map(|v| v / norm).collect()
            })
            .collect(),
    };
    ResolvedFunction {
        name: f.name.clone(),
        means,
        stds,
        loadings,
    }
}

/// Draws a raw profile set. Run `r` gets id `{run_prefix}-{r:03}`; every run
/// holds `samples_per_run` samples of every function.
pub fn generate(spec: &WorkloadSpec) -> Result<ProfileSet> {
    let counters = spec.validate()?;
    let d = counters.dim();
    let functions: Vec<ResolvedFunction> = spec
        .functions
        .iter()
        .enumerate()
        .map(|(i, f)| resolve(f, spec, &counters, i))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut samples = Vec::with_capacity(spec.runs * spec.functions.len() * spec.samples_per_run);
    let mut latent = vec![0.0; spec.latent_dim];
    for r in 0..spec.runs {
        let run_id = format!("{}-{r:03}", spec.run_prefix);
        let threads = *spec.thread_counts.choose(&mut rng).expect("validated non-empty");
        for f in &functions {
            for _ in 0..spec.samples_per_run {
                let instructions = rng.random_range(spec.instructions[0]..=spec.instructions[1]);
                for u in latent.iter_mut() {
                    *u = StandardNormal.sample(&mut rng);
                }
                let scale = instructions as f64 * threads as f64;
                let values: Vec<u64> = (0..d)
                    .map(|j| {
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        let z: f64 = f.loadings[j].iter().zip(&latent).map(|(l, u)| l * u).sum::<f64>()
                            + spec.idiosyncratic * noise;
                        let rate = match spec.marginal {
                            Marginal::LogNormal => f.means[j] * (f.stds[j] * z).exp(),
                            Marginal::Normal => (f.means[j] + f.stds[j] * z).max(0.0),
                        };
                        (rate * scale).round() as u64
                    })
                    .collect();
                samples.push(HpcSample {
                    function: f.name.clone(),
                    run_id: run_id.clone(),
                    thread_count: threads,
                    instruction_count: instructions,
                    values: Values::Raw(values),
                });
            }
        }
    }
    Ok(ProfileSet::new(spec.program.clone(), VersionTag::old(), counters, samples))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterShift {
    pub counter: String,
    #[serde(default = "one")]
    pub factor: f64,
    /// Added after scaling, in units of the counter's normalized std within
    /// the affected function.
    #[serde(default)]
    pub offset_std: f64,
}

fn one() -> f64 {
    1.0
}

fn default_fraction() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectSpec {
    pub defect: DefectType,
    pub targets: Vec<CounterShift>,
    /// Empty means every function.
    #[serde(default)]
    pub affected_functions: Vec<String>,
    #[serde(default = "default_fraction")]
    pub affected_fraction: f64,
}

impl DefectSpec {
    pub fn target_counters(&self) -> Vec<&str> {
        self.targets.iter().map(|t| t.counter.as_str()).collect()
    }

    /// The counter with the largest shift, which root-causing should name.
    pub fn primary_counter(&self) -> &str {
        &self.targets[0].counter
    }
}

/// Preset defect classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    TrueSharing,
    FalseSharing,
    Numa,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::TrueSharing, Scenario::FalseSharing, Scenario::Numa];

    /// TS-like: HITM x8 with a cycle hit; FS-like: HITM x4 with a smaller
    /// cycle hit; NUMA-like: remote DRAM x6.
    pub fn defect(self) -> DefectSpec {
        let shift = |counter: &str, factor: f64| CounterShift {
            counter: counter.into(),
            factor,
            offset_std: 0.0,
        };
        match self {
            Scenario::TrueSharing => DefectSpec {
                defect: DefectType::TrueSharing,
                targets: vec![shift("HITM", 8.0), shift("CYCLES", 1.3)],
                affected_functions: Vec::new(),
                affected_fraction: 1.0,
            },
            Scenario::FalseSharing => DefectSpec {
                defect: DefectType::FalseSharing,
                targets: vec![shift("HITM", 4.0), shift("CYCLES", 1.1)],
                affected_functions: Vec::new(),
                affected_fraction: 1.0,
            },
            Scenario::Numa => DefectSpec {
                defect: DefectType::NumaLatency,
                targets: vec![shift("OFFCORE_RESPONSE:REMOTE_DRAM", 6.0)],
                affected_functions: Vec::new(),
                affected_fraction: 1.0,
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::TrueSharing => "true-sharing",
            Scenario::FalseSharing => "false-sharing",
            Scenario::Numa => "numa",
        }
    }
}

/// Ground truth for an injected set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionManifest {
    pub defect: DefectSpec,
    pub seed: u64,
    /// Perturbed sample indices, ascending.
    pub sample_indices: Vec<usize>,
    /// Runs with at least one perturbed sample.
    pub run_ids: Vec<String>,
}

impl InjectionManifest {
    pub fn is_perturbed(&self, sample: usize) -> bool {
        self.sample_indices.binary_search(&sample).is_ok()
    }

    /// run id -> anomalous, for every run in `set`.
    pub fn run_labels(&self, set: &ProfileSet) -> BTreeMap<String, bool> {
        let hit: BTreeSet<&str> = self.run_ids.iter().map(String::as_str).collect();
        set.run_index
            .keys()
            .map(|r| (r.clone(), hit.contains(r.as_str())))
            .collect()
    }

    /// (function, run) -> anomalous, for every pair in `set`.
    pub fn unit_labels(&self, set: &ProfileSet) -> BTreeMap<(String, String), bool> {
        let mut out = BTreeMap::new();
        for (i, s) in set.samples.iter().enumerate() {
            let e = out.entry((s.function.clone(), s.run_id.clone())).or_insert(false);
            *e |= self.is_perturbed(i);
        }
        out
    }
}

/// Perturbs the target counters of a seeded subset of the affected
/// functions' samples. Everything else is copied unchanged.
pub fn inject(set: &ProfileSet, defect: &DefectSpec, seed: u64) -> Result<(ProfileSet, InjectionManifest)> {
    if !set.is_raw() {
        return Err(Error::WrongValueState { expected: "raw" });
    }
    if defect.targets.is_empty() {
        return Err(Error::Config("defect needs at least one target counter".into()));
    }
    if !(defect.affected_fraction > 0.0 && defect.affected_fraction <= 1.0) {
        return Err(Error::Config("affected_fraction must lie in (0, 1]".into()));
    }
    let mut targets = Vec::with_capacity(defect.targets.len());
    for t in &defect.targets {
        let j = set
            .counter_spec
            .index_of(&t.counter)
            .ok_or_else(|| Error::UnknownCounter(t.counter.clone()))?;
        if !(t.factor >= 0.0 && t.factor.is_finite() && t.offset_std.is_finite()) {
            return Err(Error::Config(format!("shift on `{}` must be finite", t.counter)));
        }
        targets.push((j, t));
    }
    let present = set.functions();
    let affected: Vec<String> = if defect.affected_functions.is_empty() {
        present.clone()
    } else {
        for f in &defect.affected_functions {
            if !present.contains(f) {
                return Err(Error::UnknownFunction(f.clone()));
            }
        }
        defect.affected_functions.clone()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = set.clone();
    let mut chosen = Vec::new();
    for f in &affected {
        let idx = set.sample_indices_for(f);
        let n_pick = ((idx.len() as f64) * defect.affected_fraction).round() as usize;
        let mut pool = idx.clone();
        pool.shuffle(&mut rng);
        let picked = &pool[..n_pick.min(pool.len())];

        // Per-counter normalized std over this function's samples.
        let stds: Vec<f64> = targets
            .iter()
            .map(|(j, _)| {
                let rates: Vec<f64> = idx
                    .iter()
                    .map(|&i| {
                        let s = &set.samples[i];
                        let raw = s.values.as_raw().expect("raw set")[*j] as f64;
                        raw / (s.instruction_count as f64 * s.thread_count as f64)
                    })
                    .collect();
                let mean = rates.iter().sum::<f64>() / rates.len() as f64;
                (rates.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / rates.len() as f64).sqrt()
            })
            .collect();

        for &i in picked {
            let sample = &mut out.samples[i];
            let scale = sample.instruction_count as f64 * sample.thread_count as f64;
            if let Values::Raw(values) = &mut sample.values {
                for ((j, shift), std) in targets.iter().zip(&stds) {
                    if shift.factor == 1.0 && shift.offset_std == 0.0 {
                        continue;
                    }
                    let v = values[*j] as f64 * shift.factor + shift.offset_std * std * scale;
                    values[*j] = v.max(0.0).round() as u64;
                }
            }
            chosen.push(i);
        }
    }
    chosen.sort_unstable();
    let run_ids: BTreeSet<String> = chosen.iter().map(|&i| set.samples[i].run_id.clone()).collect();
    out.version = VersionTag::new_version();
    Ok((
        out,
        InjectionManifest {
            defect: defect.clone(),
            seed,
            sample_indices: chosen,
            run_ids: run_ids.into_iter().collect(),
        },
    ))
}
