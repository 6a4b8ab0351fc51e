use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Activation, AutoencoderModel, Scaler, Topology};

/// Finite-difference step.
const STEP: f64 = 1e-5;
/// Floor on the relative-error denominator so that vanishing gradients are
/// compared absolutely.
const DENOM_FLOOR: f64 = 1e-6;
/// Minimum |pre-activation| required for ReLU networks so that no step
/// crosses a kink.
const KINK_MARGIN: f64 = 1e-3;
const MAX_RESAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    pub parameters_checked: usize,
    /// Draws rejected because a ReLU unit sat too close to its kink.
    pub resamples: usize,
}

/// Compares backpropagated gradients against central finite differences on
/// random weights and a random input.
pub fn gradient_check(topology: &Topology, seed: u64) -> GradientCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = topology.input_dim();
    let mut resamples = 0;
    let (mut model, input) = loop {
        let mut model =
            AutoencoderModel::initialize_with(topology.clone(), Scaler::identity(dim), &mut rng)
                .expect("topology-shaped layers");
        for layer in &mut model.layers {
            for b in &mut layer.bias {
                *b = rng.random_range(-0.5..0.5);
            }
        }
        let input: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let clear_of_kinks = topology.activation() != Activation::Relu
            || model
                .pre_activations(&input)
                .iter()
                .flatten()
                .all(|z| z.abs() > KINK_MARGIN);
        if clear_of_kinks || resamples >= MAX_RESAMPLES {
            break (model, input);
        }
        resamples += 1;
    };

    let (_, analytic) = model.loss_gradient(&input);
    let loss_at = |m: &AutoencoderModel| -> f64 {
        m.forward_scaled(&input)
            .iter()
            .zip(&input)
            .map(|(r, x)| (x - r) * (x - r))
            .sum()
    };

    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    for li in 0..model.layers.len() {
        let n_w = model.layers[li].weights.len();
        let n_b = model.layers[li].bias.len();
        for pi in 0..n_w + n_b {
            let exact = if pi < n_w {
                analytic.weights[li][pi]
            } else {
                analytic.bias[li][pi - n_w]
            };
            let original = *param_mut(&mut model, li, pi);
            *param_mut(&mut model, li, pi) = original + STEP;
            let plus = loss_at(&model);
            *param_mut(&mut model, li, pi) = original - STEP;
            let minus = loss_at(&model);
            *param_mut(&mut model, li, pi) = original;

            let numeric = (plus - minus) / (2.0 * STEP);
            let denom = exact.abs().max(numeric.abs()).max(DENOM_FLOOR);
            max_rel = max_rel.max((exact - numeric).abs() / denom);
            checked += 1;
        }
    }
    GradientCheck {
        max_relative_error: max_rel,
        parameters_checked: checked,
        resamples,
    }
}

/// Weights first, then biases, within layer `layer`.
fn param_mut(model: &mut AutoencoderModel, layer: usize, index: usize) -> &mut f64 {
    let l = &mut model.layers[layer];
    let n_w = l.weights.len();
    if index < n_w {
        &mut l.weights[index]
    } else {
        &mut l.bias[index - n_w]
    }
}
