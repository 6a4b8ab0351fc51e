//! Command-line front end: `simulate`, `train`, `detect`, `diagnose`, `report`.
//!
//! Exit codes: 0 clean, 1 regression found, 2 data error, 3 config error,
//! 4 internal error.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use crate::config::{resolve, ConfigFile, Overrides, Settings};
use crate::error::{Error, ErrorKind, Result};
use crate::ingest::{parse_profiles, write_profiles, Format};
use crate::pipeline::{
    detect_pipeline, load_bundle, render_table, save_bundle, train_pipeline, DetectOptions, DiagnosisReport,
};
use crate::profile::ProfileSet;
use crate::synthgen::{generate, inject, DefectSpec, InjectionManifest, Scenario, WorkloadSpec};

pub const EXIT_CLEAN: i32 = 0;
pub const EXIT_REGRESSION: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_INTERNAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "perfdiag", version, about = "Diagnose performance regressions from hardware counter profiles")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Flat TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Threshold multiplier: gamma = mu + t * sigma.
    #[arg(long, global = true)]
    pub t: Option<f64>,
    /// Fraction of anomalous samples that makes a run anomalous.
    #[arg(long, global = true)]
    pub rho: Option<f64>,
    /// Number of function clusters.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Output file, or directory for `simulate`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Profile format; inferred from the file extension when omitted.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic old (and optionally defect-injected new) profiles.
    Simulate {
        /// Workload spec (TOML or JSON). The two-function preset when omitted.
        #[arg(long)]
        workload: Option<PathBuf>,
        /// Defect spec (TOML or JSON) to inject into the new version.
        #[arg(long, conflicts_with = "scenario")]
        defect: Option<PathBuf>,
        /// Preset defect to inject into the new version.
        #[arg(long, value_enum)]
        scenario: Option<Scenario>,
        /// Use an n-function preset instead of the two-function one.
        #[arg(long, conflicts_with = "workload")]
        functions: Option<usize>,
        /// Runs per version.
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Train a model bundle on old-version profiles.
    Train {
        old: PathBuf,
        /// Functions to model; all when omitted.
        #[arg(long, value_delimiter = ',')]
        functions: Vec<String>,
    },
    /// Score new-version profiles against a bundle.
    Detect {
        bundle: PathBuf,
        new: PathBuf,
        /// Ground truth: a simulate manifest (JSON) or `run_id,anomalous` CSV.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Train on old profiles and score new ones in one step.
    Diagnose {
        old: PathBuf,
        new: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Functions to model; those present in both versions when omitted.
        #[arg(long, value_delimiter = ',')]
        functions: Vec<String>,
    },
    /// Print a saved report as a table.
    Report {
        report: PathBuf,
        /// Print the machine-readable document instead.
        #[arg(long)]
        json: bool,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    match err.kind() {
        ErrorKind::Data => EXIT_DATA,
        ErrorKind::Config => EXIT_CONFIG,
        ErrorKind::Internal => EXIT_INTERNAL,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_CLEAN };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cli: &Cli) -> Result<i32> {
    let g = &cli.global;
    let file = match &g.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let settings = resolve(
        &file,
        &Overrides {
            t: g.t,
            rho: g.rho,
            k: g.k,
            seed: g.seed,
            format: g.format,
            out: g.out.clone(),
        },
    )?;
    match &cli.command {
        Command::Simulate {
            workload,
            defect,
            scenario,
            functions,
            runs,
        } => simulate(&settings, g.seed, workload.as_deref(), defect.as_deref(), *scenario, *functions, *runs),
        Command::Train { old, functions } => {
            let old = read_profiles(old, &settings)?;
            let bundle = train_pipeline(&old, functions, &settings.pipeline)?;
            let out = settings.out.clone().unwrap_or_else(|| PathBuf::from("model.bundle"));
            let mut buf = Vec::new();
            save_bundle(&bundle, &mut buf)?;
            write_atomic(&out, &buf)?;
            println!(
                "trained {} cluster(s) over {} function(s); bundle written to {}",
                bundle.cluster_model.k,
                bundle.functions.len(),
                out.display()
            );
            Ok(EXIT_CLEAN)
        }
        Command::Detect { bundle, new, labels } => {
            let file = File::open(bundle).map_err(|e| Error::io(bundle, e))?;
            let bundle = load_bundle(BufReader::new(file))?;
            let new = read_profiles(new, &settings)?;
            let report = detect_pipeline(&bundle, &new, &detect_options(&settings, labels.as_deref(), &new)?)?;
            emit_report(&report, &settings)
        }
        Command::Diagnose {
            old,
            new,
            labels,
            functions,
        } => {
            let old = read_profiles(old, &settings)?;
            let new = read_profiles(new, &settings)?;
            let functions = if functions.is_empty() {
                let in_new: BTreeSet<String> = new.functions().into_iter().collect();
                old.functions().into_iter().filter(|f| in_new.contains(f)).collect()
            } else {
                functions.clone()
            };
            if functions.is_empty() {
                return Err(Error::NoSamples);
            }
            let bundle = train_pipeline(&old, &functions, &settings.pipeline)?;
            let report = detect_pipeline(&bundle, &new, &detect_options(&settings, labels.as_deref(), &new)?)?;
            emit_report(&report, &settings)
        }
        Command::Report { report, json } => {
            let text = fs::read_to_string(report).map_err(|e| Error::io(report, e))?;
            let parsed: DiagnosisReport = serde_json::from_str(&text)?;
            if *json {
                println!("{}", serde_json::to_string_pretty(&parsed)?);
            } else {
                print!("{}", render_table(&parsed));
            }
            Ok(EXIT_CLEAN)
        }
    }
}

fn detect_options(settings: &Settings, labels: Option<&Path>, new: &ProfileSet) -> Result<DetectOptions> {
    Ok(DetectOptions {
        t: Some(settings.pipeline.t),
        rho: Some(settings.pipeline.rho),
        labels: labels.map(|p| read_labels(p, new)).transpose()?,
    })
}

fn emit_report(report: &DiagnosisReport, settings: &Settings) -> Result<i32> {
    let out = settings.out.clone().unwrap_or_else(|| PathBuf::from("report.json"));
    let mut doc = serde_json::to_vec_pretty(report)?;
    doc.push(b'\n');
    write_atomic(&out, &doc)?;
    print!("{}", render_table(report));
    println!("report written to {}", out.display());
    Ok(if report.overall.is_anomalous() {
        EXIT_REGRESSION
    } else {
        EXIT_CLEAN
    })
}

fn input_format(path: &Path, settings: &Settings) -> Format {
    settings
        .format
        .or_else(|| Format::from_path(path))
        .unwrap_or(Format::Csv)
}

pub fn read_profiles(path: &Path, settings: &Settings) -> Result<ProfileSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_profiles(BufReader::new(file), input_format(path, settings), &settings.counter_spec)
}

/// Reads a simulate manifest (JSON) or `run_id,anomalous` CSV. Runs of
/// `set` missing from a manifest are normal.
pub fn read_labels(path: &Path, set: &ProfileSet) -> Result<BTreeMap<String, bool>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        if let Ok(manifest) = serde_json::from_str::<InjectionManifest>(&text) {
            return Ok(manifest.run_labels(set));
        }
        return Ok(serde_json::from_str::<BTreeMap<String, bool>>(&text)?);
    }
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            line: i + 2,
            field: "labels".into(),
            reason: e.to_string(),
        })?;
        let flag = match rec.get(1).map(str::to_ascii_lowercase).as_deref() {
            Some("1" | "true" | "anomalous") => true,
            Some("0" | "false" | "normal") => false,
            other => {
                return Err(Error::Parse {
                    line: i + 2,
                    field: "anomalous".into(),
                    reason: format!("expected true/false, got {other:?}"),
                })
            }
        };
        out.insert(rec.get(0).unwrap_or_default().to_string(), flag);
    }
    Ok(out)
}

fn read_spec<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn simulate(
    settings: &Settings,
    seed: Option<u64>,
    workload: Option<&Path>,
    defect: Option<&Path>,
    scenario: Option<Scenario>,
    functions: Option<usize>,
    runs: Option<usize>,
) -> Result<i32> {
    let base_seed = seed.unwrap_or(settings.pipeline.seed);
    let mut spec = match (workload, functions) {
        (Some(p), _) => read_spec::<WorkloadSpec>(p)?,
        (None, Some(n)) => WorkloadSpec::multi_function(n, base_seed),
        (None, None) => WorkloadSpec::preset(base_seed),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(r) = runs {
        spec.runs = r;
    }
    let defect: Option<DefectSpec> = match (defect, scenario) {
        (Some(p), _) => Some(read_spec(p)?),
        (None, Some(s)) => Some(s.defect()),
        (None, None) => None,
    };

    let dir = settings.out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let format = settings.format.unwrap_or(Format::Csv);
    let old = generate(&spec)?;
    let old_path = dir.join(format!("old.{}", format.extension()));
    write_set(&old, format, &old_path)?;
    println!("wrote {} samples to {}", old.len(), old_path.display());

    if let Some(defect) = defect {
        let mut new_spec = spec.clone();
        new_spec.seed = spec.seed.wrapping_add(1);
        new_spec.run_prefix = format!("{}-new", spec.run_prefix);
        let (new, manifest) = inject(&generate(&new_spec)?, &defect, spec.seed.wrapping_add(2))?;
        let new_path = dir.join(format!("new.{}", format.extension()));
        write_set(&new, format, &new_path)?;
        let manifest_path = dir.join("manifest.json");
        let mut doc = serde_json::to_vec_pretty(&manifest)?;
        doc.push(b'\n');
        write_atomic(&manifest_path, &doc)?;
        println!(
            "wrote {} samples ({} perturbed) to {} and ground truth to {}",
            new.len(),
            manifest.sample_indices.len(),
            new_path.display(),
            manifest_path.display()
        );
    }
    Ok(EXIT_CLEAN)
}

fn write_set(set: &ProfileSet, format: Format, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_profiles(set, format, &mut buf)?;
    write_atomic(path, &buf)
}

/// Writes through a temporary file in the destination directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
