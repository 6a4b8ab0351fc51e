//! Backpropagation against central finite differences.

use perfdiag::autoencoder::{gradient_check, Activation, Topology};

fn main() -> perfdiag::Result<()> {
    let cases = [
        (vec![4, 2, 4], Activation::Tanh),
        (vec![6, 3, 2, 3, 6], Activation::Tanh),
        (vec![5, 3, 5], Activation::Relu),
        (vec![8, 4, 2, 4, 8], Activation::Relu),
        (vec![3, 2, 3], Activation::Sigmoid),
    ];
    for (seed, (sizes, act)) in cases.into_iter().enumerate() {
        let topo = Topology::new(sizes.clone(), act)?;
        let g = gradient_check(&topo, seed as u64);
        println!(
            "{:?} {act:?}: {} parameters, max relative error {:.2e}, {} kink resamples",
            sizes, g.parameters_checked, g.max_relative_error, g.resamples
        );
    }
    Ok(())
}
