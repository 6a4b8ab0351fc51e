//! Reconstruction-error thresholding, sample and run classification, and
//! evaluation metrics.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `gamma = mu + t * sigma` over the training reconstruction errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub mu: f64,
    /// Population standard deviation.
    pub sigma: f64,
    pub t: f64,
    pub gamma: f64,
}

impl Threshold {
    pub fn from_stats(mu: f64, sigma: f64, t: f64) -> Result<Self> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::Config(format!("t must be a non-negative real, got {t}")));
        }
        if !(sigma >= 0.0 && sigma.is_finite() && mu.is_finite()) {
            return Err(Error::Config(format!("invalid error statistics mu={mu} sigma={sigma}")));
        }
        Ok(Threshold {
            mu,
            sigma,
            t,
            gamma: mu + t * sigma,
        })
    }

    /// Same statistics, different multiplier.
    pub fn with_t(&self, t: f64) -> Result<Self> {
        Self::from_stats(self.mu, self.sigma, t)
    }

    pub fn is_consistent(&self) -> bool {
        self.gamma == self.mu + self.t * self.sigma
    }
}

pub fn compute_threshold(training_errors: &[f64], t: f64) -> Result<Threshold> {
    if training_errors.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "threshold needs at least 2 training errors, got {}",
            training_errors.len()
        )));
    }
    if let Some(bad) = training_errors.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
        return Err(Error::InsufficientData(format!(
            "training errors must be finite and non-negative, found {bad}"
        )));
    }
    let n = training_errors.len() as f64;
    let mu = training_errors.iter().sum::<f64>() / n;
    let var = training_errors.iter().map(|e| (e - mu) * (e - mu)).sum::<f64>() / n;
    Threshold::from_stats(mu, var.sqrt(), t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Normal,
    Anomalous,
}

impl Verdict {
    pub fn is_anomalous(self) -> bool {
        self == Verdict::Anomalous
    }

    pub fn from_flag(anomalous: bool) -> Self {
        if anomalous {
            Verdict::Anomalous
        } else {
            Verdict::Normal
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Normal => "Normal",
            Verdict::Anomalous => "Anomalous",
        })
    }
}

/// Anomalous iff `epsilon > gamma`.
pub fn classify_sample(epsilon: f64, threshold: &Threshold) -> Verdict {
    Verdict::from_flag(epsilon > threshold.gamma)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunVerdict {
    pub run_id: String,
    pub errors: Vec<f64>,
    pub flags: Vec<bool>,
    pub anomalous_fraction: f64,
    pub verdict: Verdict,
}

pub fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 && rho <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("rho must lie in (0, 1], got {rho}")))
    }
}

/// Aggregates sample verdicts: the run is anomalous iff at least a fraction
/// `rho` of its samples are.
pub fn classify_run(run_id: &str, errors: Vec<f64>, flags: Vec<bool>, rho: f64) -> Result<RunVerdict> {
    check_rho(rho)?;
    if flags.is_empty() {
        return Err(Error::NoSamples);
    }
    if errors.len() != flags.len() {
        return Err(Error::DimensionMismatch {
            expected: flags.len(),
            got: errors.len(),
        });
    }
    let anomalous = flags.iter().filter(|f| **f).count();
    let anomalous_fraction = anomalous as f64 / flags.len() as f64;
    Ok(RunVerdict {
        run_id: run_id.to_string(),
        errors,
        flags,
        anomalous_fraction,
        verdict: Verdict::from_flag(anomalous_fraction >= rho),
    })
}

/// Thresholds each error and aggregates the run.
pub fn classify_errors(run_id: &str, errors: Vec<f64>, threshold: &Threshold, rho: f64) -> Result<RunVerdict> {
    let flags = errors
        .iter()
        .map(|e| classify_sample(*e, threshold).is_anomalous())
        .collect();
    classify_run(run_id, errors, flags, rho)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub t: f64,
    pub gamma: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Confusion counts and derived rates over the anomalous class. A rate whose
/// denominator is zero is `None` rather than 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub normal_runs: usize,
    pub anomalous_runs: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
    pub false_positive_rate: Option<f64>,
    pub false_negative_rate: Option<f64>,
    pub true_positive_rate: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    #[serde(default)]
    pub roc_points: Vec<RocPoint>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl EvalMetrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let anomalous = tp + fn_;
        let normal = fp + tn;
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, anomalous);
        let f1 = (anomalous > 0).then(|| {
            if tp == 0 {
                0.0
            } else {
                2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
            }
        });
        EvalMetrics {
            normal_runs: normal,
            anomalous_runs: anomalous,
            true_positives: tp,
            false_positives: fp,
            true_negatives: tn,
            false_negatives: fn_,
            false_positive_rate: ratio(fp, normal),
            false_negative_rate: ratio(fn_, anomalous),
            true_positive_rate: recall,
            precision,
            recall,
            f1,
            roc_points: Vec::new(),
        }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (predicted, actual) in pairs {
            match (predicted, actual) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        Self::from_counts(tp, fp, tn, fn_)
    }
}

/// Compares verdicts against ground truth keyed by run id. Every verdict
/// needs a label and every label a verdict.
pub fn evaluate(verdicts: &[(String, Verdict)], labels: &BTreeMap<String, bool>) -> Result<EvalMetrics> {
    let mut seen = BTreeMap::new();
    for (run, v) in verdicts {
        if seen.insert(run.as_str(), *v).is_some() {
            return Err(Error::RunMismatch(format!("run `{run}` has two verdicts")));
        }
    }
    if let Some(run) = seen.keys().find(|r| !labels.contains_key(**r)) {
        return Err(Error::RunMismatch(format!("run `{run}` has no ground-truth label")));
    }
    if let Some(run) = labels.keys().find(|r| !seen.contains_key(r.as_str())) {
        return Err(Error::RunMismatch(format!("labeled run `{run}` has no verdict")));
    }
    Ok(EvalMetrics::from_pairs(
        seen.iter().map(|(run, v)| (v.is_anomalous(), labels[*run])),
    ))
}

/// Sample-level (fpr, tpr) for each multiplier in `t_values`.
pub fn roc_sweep(training_errors: &[f64], test: &[(f64, bool)], t_values: &[f64]) -> Result<Vec<RocPoint>> {
    if t_values.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config("t values must be sorted ascending".into()));
    }
    let positives = test.iter().filter(|(_, a)| *a).count();
    let negatives = test.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::InsufficientData(
            "ROC needs both normal and anomalous test samples".into(),
        ));
    }
    let base = compute_threshold(training_errors, 0.0)?;
    t_values
        .iter()
        .map(|&t| {
            let th = base.with_t(t)?;
            let m = EvalMetrics::from_pairs(
                test.iter()
                    .map(|(e, a)| (classify_sample(*e, &th).is_anomalous(), *a)),
            );
            Ok(RocPoint {
                t,
                gamma: th.gamma,
                fpr: m.false_positive_rate.expect("negatives present"),
                tpr: m.true_positive_rate.expect("positives present"),
            })
        })
        .collect()
}
