//! Dense feedforward autoencoder.
//!
//! Inputs are standardized per feature before entering the network, and the
//! reconstruction error is measured in that standardized space so that no
//! single high-magnitude counter dominates the distance.

mod gradcheck;
mod train;

pub use gradcheck::{gradient_check, GradientCheck};
pub use train::{train, Optimizer, TrainConfig};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
    /// Identity; only useful for diagnostic constructions.
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Linear => x,
        }
    }

    /// Derivative, given the pre-activation and the activated value.
    #[inline]
    pub fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - post * post,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => post * (1.0 - post),
            Activation::Linear => 1.0,
        }
    }

    pub fn is_smooth(self) -> bool {
        !matches!(self, Activation::Relu)
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "linear" => Ok(Activation::Linear),
            other => Err(format!("unknown activation `{other}`")),
        }
    }
}

/// Layer widths from input to output plus the hidden activation. The output
/// layer is always linear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    layer_sizes: Vec<usize>,
    activation: Activation,
}

impl Topology {
    /// A symmetric autoencoder topology whose bottleneck is narrower than the input.
    pub fn new(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        let topo = Self::unconstrained(layer_sizes, activation)?;
        let rev: Vec<usize> = topo.layer_sizes.iter().rev().copied().collect();
        if rev != topo.layer_sizes {
            return Err(Error::Topology(format!(
                "layer sizes {:?} are not symmetric",
                topo.layer_sizes
            )));
        }
        if topo.bottleneck() >= topo.input_dim() {
            return Err(Error::Topology(format!(
                "bottleneck {} must be narrower than the input {}",
                topo.bottleneck(),
                topo.input_dim()
            )));
        }
        Ok(topo)
    }

    /// Skips the symmetry and bottleneck checks, keeping only
    /// `first == last`, at least three layers, and positive widths.
    pub fn unconstrained(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 3 {
            return Err(Error::Topology(format!(
                "need at least 3 layers, got {}",
                layer_sizes.len()
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::Topology("layer widths must be positive".into()));
        }
        if layer_sizes.first() != layer_sizes.last() {
            return Err(Error::Topology(
                "input and output widths must match".into(),
            ));
        }
        Ok(Topology {
            layer_sizes,
            activation,
        })
    }

    /// `[d, ceil(d/2), ceil(d/4), ceil(d/2), d]` with tanh.
    pub fn default_for(dim: usize) -> Result<Self> {
        let half = dim.div_ceil(2);
        let quarter = dim.div_ceil(4);
        Self::new(vec![dim, half, quarter, half, dim], Activation::Tanh)
    }

    /// Symmetric topology from the encoder's hidden widths, e.g. `[16, 8]`
    /// for `[d, 16, 8, 16, d]`.
    pub fn from_hidden(dim: usize, encoder_hidden: &[usize], activation: Activation) -> Result<Self> {
        let mut sizes = vec![dim];
        sizes.extend_from_slice(encoder_hidden);
        sizes.extend(encoder_hidden.iter().rev().skip(1));
        sizes.push(dim);
        Self::new(sizes, activation)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn bottleneck(&self) -> usize {
        *self.layer_sizes.iter().min().expect("non-empty")
    }

    pub fn num_parameters(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

/// Fully connected layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Uniform(-a, a) with `a = sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let a = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-a..a))
            .collect();
        Dense {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
        }
    }

    #[inline]
    pub fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.inputs + inp]
    }

    /// `W x + b` into `out`.
    pub fn affine_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.inputs).zip(&self.bias) {
            let dot: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
            out.push(dot + b);
        }
    }
}

/// Per-feature standardization fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Features with zero variance; their `std` is stored as 1.
    pub constant: Vec<bool>,
}

impl Scaler {
    pub fn identity(dim: usize) -> Self {
        Scaler {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
            constant: vec![false; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn destandardize(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, sd))| v * sd + m)
            .collect()
    }
}

/// Per-feature mean and population standard deviation.
pub fn fit_scaler(samples: &[Vec<f64>]) -> Result<Scaler> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "scaler needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let dim = samples[0].len();
    if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    let n = samples.len() as f64;
    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; dim];
    for s in samples {
        for ((acc, v), m) in var.iter_mut().zip(s).zip(&mean) {
            let d = v - m;
            *acc += d * d;
        }
    }
    let mut std = Vec::with_capacity(dim);
    let mut constant = Vec::with_capacity(dim);
    for v in var {
        let sd = (v / n).sqrt();
        if sd > 0.0 && sd.is_finite() {
            std.push(sd);
            constant.push(false);
        } else {
            std.push(1.0);
            constant.push(true);
        }
    }
    Ok(Scaler {
        mean,
        std,
        constant,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs_run: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Mean training loss after each epoch.
    pub loss_history: Vec<f64>,
    pub stopped_early: bool,
}

/// Per-layer parameter gradients, shaped like the layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(layers: &[Dense]) -> Self {
        Gradients {
            weights: layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    fn clear(&mut self) {
        self.weights.iter_mut().for_each(|w| w.fill(0.0));
        self.bias.iter_mut().for_each(|b| b.fill(0.0));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderModel {
    pub topology: Topology,
    pub layers: Vec<Dense>,
    pub scaler: Scaler,
    pub training_meta: TrainingMeta,
}

impl AutoencoderModel {
    /// Fresh Glorot-uniform weights drawn from `seed`.
    pub fn initialize(topology: Topology, scaler: Scaler, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::initialize_with(topology, scaler, &mut rng)
    }

    pub(crate) fn initialize_with<R: Rng>(topology: Topology, scaler: Scaler, rng: &mut R) -> Result<Self> {
        let layers = topology
            .layer_sizes
            .windows(2)
            .map(|w| Dense::glorot(w[0], w[1], rng))
            .collect();
        Self::from_parts(topology, layers, scaler)
    }

    /// Assembles a model from explicit layers, checking shapes.
    pub fn from_parts(topology: Topology, layers: Vec<Dense>, scaler: Scaler) -> Result<Self> {
        let sizes = &topology.layer_sizes;
        if layers.len() != sizes.len() - 1 {
            return Err(Error::Topology(format!(
                "expected {} layers, got {}",
                sizes.len() - 1,
                layers.len()
            )));
        }
        for (i, (layer, w)) in layers.iter().zip(sizes.windows(2)).enumerate() {
            if layer.inputs != w[0]
                || layer.outputs != w[1]
                || layer.weights.len() != w[0] * w[1]
                || layer.bias.len() != w[1]
            {
                return Err(Error::Topology(format!(
                    "layer {i} does not have shape {}x{}",
                    w[1], w[0]
                )));
            }
        }
        if scaler.dim() != topology.input_dim()
            || scaler.std.len() != scaler.dim()
            || scaler.constant.len() != scaler.dim()
        {
            return Err(Error::DimensionMismatch {
                expected: topology.input_dim(),
                got: scaler.dim(),
            });
        }
        if scaler.std.iter().any(|s| s.is_nan() || *s <= 0.0) {
            return Err(Error::Config("scaler std components must be positive".into()));
        }
        Ok(AutoencoderModel {
            topology,
            layers,
            scaler,
            training_meta: TrainingMeta::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.topology.input_dim()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if let Some(j) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(j));
        }
        Ok(())
    }

    /// Network output for an already standardized input.
    pub fn forward_scaled(&self, s: &[f64]) -> Vec<f64> {
        let act = self.topology.activation;
        let last = self.layers.len() - 1;
        let mut cur = s.to_vec();
        let mut next = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.affine_into(&cur, &mut next);
            if i < last {
                next.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Reconstruction of `x` in the original (normalized) feature space.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let s = self.scaler.standardize(x);
        Ok(self.scaler.destandardize(&self.forward_scaled(&s)))
    }

    /// `scaled(z) - network(scaled(z))`, one entry per counter.
    pub fn scaled_residual(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_input(z)?;
        let s = self.scaler.standardize(z);
        let r = self.forward_scaled(&s);
        Ok(s.iter().zip(&r).map(|(a, b)| a - b).collect())
    }

    /// Euclidean reconstruction error in standardized space.
    pub fn reconstruction_error(&self, z: &[f64]) -> Result<f64> {
        let res = self.scaled_residual(z)?;
        Ok(res.iter().map(|d| d * d).sum::<f64>().sqrt())
    }

    pub fn reconstruction_errors(&self, samples: &[Vec<f64>]) -> Result<Vec<f64>> {
        samples.iter().map(|z| self.reconstruction_error(z)).collect()
    }

    /// Squared reconstruction error of one standardized input and its
    /// gradient with respect to every parameter.
    pub fn loss_gradient(&self, s: &[f64]) -> (f64, Gradients) {
        let mut grads = Gradients::zeros_like(&self.layers);
        let mut ws = Workspace::default();
        let loss = self.accumulate_gradient(s, 1.0, &mut grads, &mut ws);
        (loss, grads)
    }

    /// Adds `scale * d||s - f(s)||^2 / dθ` into `grads`; returns the unscaled loss.
    fn accumulate_gradient(&self, s: &[f64], scale: f64, grads: &mut Gradients, ws: &mut Workspace) -> f64 {
        let act = self.topology.activation;
        let n_layers = self.layers.len();
        ws.pre.resize(n_layers, Vec::new());
        ws.post.resize(n_layers + 1, Vec::new());
        ws.post[0].clear();
        ws.post[0].extend_from_slice(s);
        for (i, layer) in self.layers.iter().enumerate() {
            let (head, tail) = ws.post.split_at_mut(i + 1);
            layer.affine_into(&head[i], &mut ws.pre[i]);
            let out = &mut tail[0];
            out.clear();
            if i + 1 < n_layers {
                out.extend(ws.pre[i].iter().map(|v| act.apply(*v)));
            } else {
                out.extend_from_slice(&ws.pre[i]);
            }
        }

        let output = &ws.post[n_layers];
        let mut loss = 0.0;
        ws.delta.clear();
        for (o, t) in output.iter().zip(s) {
            let r = o - t;
            loss += r * r;
            ws.delta.push(2.0 * r * scale);
        }

        for i in (0..n_layers).rev() {
            let layer = &self.layers[i];
            let input = &ws.post[i];
            let gw = &mut grads.weights[i];
            let gb = &mut grads.bias[i];
            for (o, d) in ws.delta.iter().enumerate() {
                gb[o] += d;
                let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            if i == 0 {
                break;
            }
            ws.next_delta.clear();
            ws.next_delta.resize(layer.inputs, 0.0);
            for (o, d) in ws.delta.iter().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (nd, w) in ws.next_delta.iter_mut().zip(row) {
                    *nd += d * w;
                }
            }
            for ((nd, pre), post) in ws.next_delta.iter_mut().zip(&ws.pre[i - 1]).zip(&ws.post[i]) {
                *nd *= act.derivative(*pre, *post);
            }
            std::mem::swap(&mut ws.delta, &mut ws.next_delta);
        }
        loss
    }

    /// Hidden-layer pre-activations for a standardized input.
    pub fn pre_activations(&self, s: &[f64]) -> Vec<Vec<f64>> {
        let act = self.topology.activation;
        let mut out = Vec::with_capacity(self.layers.len() - 1);
        let mut cur = s.to_vec();
        let mut pre = Vec::new();
        for layer in &self.layers[..self.layers.len() - 1] {
            layer.affine_into(&cur, &mut pre);
            cur = pre.iter().map(|v| act.apply(*v)).collect();
            out.push(pre.clone());
        }
        out
    }

    pub(crate) fn parameters_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }
}

#[derive(Debug, Default)]
pub(crate) struct Workspace {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    delta: Vec<f64>,
    next_delta: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `x = relu(x) - relu(-x)` as a `[d, 2d, d]` network.
    pub(crate) fn identity_model(dim: usize) -> AutoencoderModel {
        let topo = Topology::unconstrained(vec![dim, 2 * dim, dim], Activation::Relu).unwrap();
        let mut enc = Dense::zeros(dim, 2 * dim);
        let mut dec = Dense::zeros(2 * dim, dim);
        for j in 0..dim {
            enc.weights[j * dim + j] = 1.0;
            enc.weights[(dim + j) * dim + j] = -1.0;
            dec.weights[j * 2 * dim + j] = 1.0;
            dec.weights[j * 2 * dim + dim + j] = -1.0;
        }
        AutoencoderModel::from_parts(topo, vec![enc, dec], Scaler::identity(dim)).unwrap()
    }

    fn zero_model(scaler: Scaler) -> AutoencoderModel {
        let d = scaler.dim();
        let topo = Topology::default_for(d).unwrap();
        let layers = topo
            .layer_sizes()
            .windows(2)
            .map(|w| Dense::zeros(w[0], w[1]))
            .collect();
        AutoencoderModel::from_parts(topo, layers, scaler).unwrap()
    }

    #[test]
    fn scaler_uses_population_std() {
        let s = fit_scaler(&[vec![0.0, 0.0], vec![2.0, 4.0]]).unwrap();
        assert_eq!(s.mean, vec![1.0, 2.0]);
        assert_eq!(s.std, vec![1.0, 2.0]);
        assert_eq!(s.constant, vec![false, false]);
    }

    #[test]
    fn scaler_flags_constant_features() {
        let s = fit_scaler(&[vec![3.0, 1.0], vec![3.0, 1.0], vec![3.0, 1.0]]).unwrap();
        assert_eq!(s.std, vec![1.0, 1.0]);
        assert_eq!(s.constant, vec![true, true]);
    }

    #[test]
    fn scaler_needs_two_samples() {
        assert!(matches!(
            fit_scaler(&[vec![1.0]]),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn topology_validation() {
        assert!(Topology::new(vec![4, 2, 4], Activation::Tanh).is_ok());
        assert!(Topology::new(vec![4, 2, 3, 4], Activation::Tanh).is_err());
        assert!(Topology::new(vec![4, 4, 4], Activation::Tanh).is_err());
        assert!(Topology::new(vec![4, 4], Activation::Tanh).is_err());
        assert_eq!(
            Topology::default_for(33).unwrap().layer_sizes(),
            &[33, 17, 9, 17, 33]
        );
        assert_eq!(
            Topology::from_hidden(8, &[4, 2], Activation::Relu).unwrap().layer_sizes(),
            &[8, 4, 2, 4, 8]
        );
    }

    #[test]
    fn zero_network_reconstructs_the_mean() {
        let scaler = Scaler {
            mean: vec![1.0, -2.0, 0.5],
            std: vec![2.0, 0.5, 1.0],
            constant: vec![false; 3],
        };
        let model = zero_model(scaler.clone());
        let x = [4.0, 1.0, -3.0];
        assert_eq!(model.forward(&x).unwrap(), scaler.mean);
        let s = scaler.standardize(&x);
        let norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((model.reconstruction_error(&x).unwrap() - norm).abs() < 1e-15);
    }

    #[test]
    fn identity_network_is_exact() {
        let model = identity_model(4);
        let x = [0.3, -1.5, 2.0, 0.0];
        assert_eq!(model.forward(&x).unwrap(), x.to_vec());
        assert_eq!(model.reconstruction_error(&x).unwrap(), 0.0);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let model = identity_model(3);
        assert!(matches!(
            model.forward(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { expected: 3, got: 2 })
        ));
        assert!(matches!(
            model.forward(&[1.0, f64::NAN, 2.0]),
            Err(Error::NonFinite(1))
        ));
    }

    #[test]
    fn from_parts_checks_shapes() {
        let topo = Topology::default_for(4).unwrap();
        let layers = vec![Dense::zeros(4, 2)];
        assert!(AutoencoderModel::from_parts(topo, layers, Scaler::identity(4)).is_err());
    }
}
