//! k-means++ with Lloyd iterations on two point clouds, then clustering of
//! synthetic functions with their inertia for a sweep over k.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use perfdiag::clustering::{kmeans, KMeansConfig};
use perfdiag::pipeline::{train_pipeline, PipelineConfig};
use perfdiag::synthgen::{generate, WorkloadSpec};
use perfdiag::autoencoder::TrainConfig;

fn main() -> perfdiag::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise = Normal::new(0.0, 0.1).expect("valid std");
    let points: Vec<Vec<f64>> = (0..12)
        .map(|i| {
            let c = if i < 6 { 0.0 } else { 10.0 };
            vec![c + noise.sample(&mut rng), c + noise.sample(&mut rng)]
        })
        .collect();
    let r = kmeans(&points, &KMeansConfig::new(2, 7))?;
    println!("centroids {:?}", r.centroids);
    println!("inertia {:.4} after {} iterations", r.inertia, r.iterations);

    let mut spec = WorkloadSpec::multi_function(6, 3);
    spec.runs = 6;
    let set = generate(&spec)?;
    for k in 1..=6 {
        let cfg = PipelineConfig {
            k: Some(k),
            train: TrainConfig { epochs: 5, ..TrainConfig::default() },
            ..PipelineConfig::default()
        };
        let bundle = train_pipeline(&set, &[], &cfg)?;
        let groups: Vec<String> = (0..k)
            .map(|c| bundle.cluster_model.functions_in(c).join("+"))
            .collect();
        println!("k={k}: inertia {:>10.2}  {}", bundle.cluster_model.inertia, groups.join(" | "));
    }
    Ok(())
}
