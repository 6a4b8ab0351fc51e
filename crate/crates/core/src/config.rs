//! Flat TOML configuration file and its layering under command-line flags.
//!
//! ```toml
//! counter_spec = "counters.txt"    # NAME[,description] per line
//! defect_mapping = "mapping.txt"   # pattern = DefectType per line
//! t = 2.0
//! rho = 0.5
//! k = 4
//! seed = 7
//! epochs = 500
//! hidden = [16, 8]
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autoencoder::{Activation, Optimizer};
use crate::error::{Error, Result};
use crate::ingest::Format;
use crate::pipeline::PipelineConfig;
use crate::profile::CounterSpec;
use crate::rootcause::DefectMapping;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub counter_spec: Option<PathBuf>,
    pub defect_mapping: Option<PathBuf>,
    pub t: Option<f64>,
    pub rho: Option<f64>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub min_samples: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub optimizer: Option<Optimizer>,
    pub early_stop_patience: Option<usize>,
    pub validation_fraction: Option<f64>,
    pub hidden: Option<Vec<usize>>,
    pub activation: Option<Activation>,
    pub kmeans_max_iters: Option<usize>,
    pub kmeans_n_init: Option<usize>,
    pub fallback: Option<bool>,
    pub cycles_counter: Option<String>,
    pub gate_fraction: Option<f64>,
    pub format: Option<Format>,
    pub out: Option<PathBuf>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: ConfigFile = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.counter_spec, &mut cfg.defect_mapping, &mut cfg.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Values given on the command line; they win over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub t: Option<f64>,
    pub rho: Option<f64>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub format: Option<Format>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub pipeline: PipelineConfig,
    pub counter_spec: CounterSpec,
    pub format: Option<Format>,
    pub out: Option<PathBuf>,
}

fn read_config_file(path: &Path, what: &str) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {what} {}: {e}", path.display())))
}

/// Defaults, then the file, then the flags.
pub fn resolve(file: &ConfigFile, flags: &Overrides) -> Result<Settings> {
    let mut p = PipelineConfig::default();
    macro_rules! set {
        ($dst:expr, $src:expr) => {
            if let Some(v) = $src.clone() {
                $dst = v;
            }
        };
    }
    set!(p.t, file.t);
    set!(p.rho, file.rho);
    p.k = file.k.or(p.k);
    set!(p.seed, file.seed);
    set!(p.min_samples, file.min_samples);
    set!(p.train.epochs, file.epochs);
    set!(p.train.batch_size, file.batch_size);
    set!(p.train.learning_rate, file.learning_rate);
    set!(p.train.optimizer, file.optimizer);
    set!(p.train.early_stop_patience, file.early_stop_patience);
    set!(p.train.validation_fraction, file.validation_fraction);
    p.hidden = file.hidden.clone().or(p.hidden);
    set!(p.activation, file.activation);
    set!(p.kmeans_max_iters, file.kmeans_max_iters);
    set!(p.kmeans_n_init, file.kmeans_n_init);
    set!(p.fallback, file.fallback);
    set!(p.cycles_counter, file.cycles_counter);
    set!(p.gate_fraction, file.gate_fraction);

    set!(p.t, flags.t);
    set!(p.rho, flags.rho);
    p.k = flags.k.or(p.k);
    set!(p.seed, flags.seed);
    // One seed drives both clustering and training.
    p.train.seed = p.seed;

    if let Some(path) = &file.defect_mapping {
        p.defect_mapping = DefectMapping::parse(&read_config_file(path, "defect mapping")?)?;
    }
    let counter_spec = match &file.counter_spec {
        Some(path) => CounterSpec::parse_list(&read_config_file(path, "counter spec")?)
            .map_err(|e| Error::Config(format!("counter spec {}: {e}", path.display())))?,
        None => CounterSpec::reference(),
    };
    p.validate()?;
    Ok(Settings {
        pipeline: p,
        counter_spec,
        format: flags.format.or(file.format),
        out: flags.out.clone().or_else(|| file.out.clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file: ConfigFile = toml::from_str("t = 3.0\nrho = 0.7\nepochs = 12\n").unwrap();
        let flags = Overrides {
            t: Some(1.5),
            ..Overrides::default()
        };
        let s = resolve(&file, &flags).unwrap();
        assert_eq!(s.pipeline.t, 1.5);
        assert_eq!(s.pipeline.rho, 0.7);
        assert_eq!(s.pipeline.train.epochs, 12);
        assert_eq!(s.pipeline.train.batch_size, 32);
        assert_eq!(s.counter_spec.dim(), 33);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        assert!(toml::from_str::<ConfigFile>("tee = 2.0\n").is_err());
        let file: ConfigFile = toml::from_str("rho = 1.5\n").unwrap();
        assert!(matches!(resolve(&file, &Overrides::default()), Err(Error::Config(_))));
    }

    #[test]
    fn included_files_resolve_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("c.txt"), "HITM\nCYCLES\n").unwrap();
        fs::write(dir.path().join("m.txt"), "HITM = FalseSharing\n").unwrap();
        fs::write(
            dir.path().join("cfg.toml"),
            "counter_spec = \"c.txt\"\ndefect_mapping = \"m.txt\"\n",
        )
        .unwrap();
        let file = ConfigFile::load(&dir.path().join("cfg.toml")).unwrap();
        let s = resolve(&file, &Overrides::default()).unwrap();
        assert_eq!(s.counter_spec.dim(), 2);
        assert_eq!(s.pipeline.defect_mapping.rules.len(), 1);
    }
}
