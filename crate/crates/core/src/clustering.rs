//! k-means grouping of functions with similar counter signatures, so that one
//! autoencoder can serve a whole cluster.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autoencoder::Scaler;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    /// Independent k-means++ restarts; the lowest-inertia run is kept.
    pub n_init: usize,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig {
            k,
            seed,
            max_iters: 300,
            n_init: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after every assignment step, starting with the seeding.
    pub inertia_history: Vec<f64>,
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the lower index.
pub fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn count_distinct(samples: &[Vec<f64>]) -> usize {
    samples
        .iter()
        .map(|s| s.iter().map(|v| v.to_bits()).collect::<Vec<u64>>())
        .collect::<HashSet<_>>()
        .len()
}

fn kmeans_pp<R: Rng>(samples: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![samples[rng.random_range(0..samples.len())].clone()];
    let mut dists: Vec<f64> = samples.iter().map(|s| sq_dist(s, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dists.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = None;
            for (i, d) in dists.iter().enumerate() {
                if *d > 0.0 {
                    if target < *d {
                        chosen = Some(i);
                        break;
                    }
                    target -= d;
                }
            }
            // Rounding can leave `target` just past the last positive weight.
            chosen.unwrap_or_else(|| dists.iter().rposition(|d| *d > 0.0).expect("positive total"))
        } else {
            break;
        };
        let c = samples[pick].clone();
        for (d, s) in dists.iter_mut().zip(samples) {
            *d = d.min(sq_dist(s, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign_all(samples: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<(usize, f64)> {
    samples.par_iter().map(|s| nearest(s, centroids)).collect()
}

/// Lloyd iterations from fixed initial centroids.
///
/// A centroid that loses all its points is moved onto the point farthest
/// from its own centroid.
pub fn lloyd(samples: &[Vec<f64>], initial: Vec<Vec<f64>>, max_iters: usize) -> KMeansResult {
    let k = initial.len();
    let dim = samples[0].len();
    let mut centroids = initial;
    let mut current = assign_all(samples, &centroids);
    let mut history = vec![current.iter().map(|(_, d)| d).sum::<f64>()];
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (s, (c, _)) in samples.iter().zip(&current) {
            counts[*c] += 1;
            for (acc, v) in sums[*c].iter_mut().zip(s) {
                *acc += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let n = counts[c] as f64;
                centroids[c] = sums[c].iter().map(|v| v / n).collect();
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let (far, _) = samples
                    .iter()
                    .enumerate()
                    .map(|(i, s)| (i, sq_dist(s, &centroids[current[i].0])))
                    .fold((0, f64::NEG_INFINITY), |best, x| if x.1 > best.1 { x } else { best });
                centroids[c] = samples[far].clone();
                counts[current[far].0] -= 1;
                counts[c] = 1;
                current[far] = (c, 0.0);
            }
        }

        let next = assign_all(samples, &centroids);
        history.push(next.iter().map(|(_, d)| d).sum());
        let changed = next.iter().zip(&current).any(|(a, b)| a.0 != b.0);
        current = next;
        if !changed {
            break;
        }
    }

    KMeansResult {
        centroids,
        assignment: current.iter().map(|(c, _)| *c).collect(),
        inertia: *history.last().expect("non-empty"),
        iterations,
        inertia_history: history,
    }
}

/// Lloyd's algorithm with k-means++ seeding, deterministic for a fixed seed.
pub fn kmeans(samples: &[Vec<f64>], cfg: &KMeansConfig) -> Result<KMeansResult> {
    if samples.is_empty() {
        return Err(Error::NoSamples);
    }
    if cfg.k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let dim = samples[0].len();
    if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    let distinct = count_distinct(samples);
    if cfg.k > distinct {
        return Err(Error::InsufficientData(format!(
            "k = {} exceeds the {distinct} distinct samples",
            cfg.k
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..cfg.n_init.max(1) {
        let init = kmeans_pp(samples, cfg.k, &mut rng);
        let run = lloyd(samples, init, cfg.max_iters);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one run"))
}

/// Maps each function to the cluster holding most of its samples; ties go
/// to the lowest cluster index.
pub fn assign_functions(
    per_function_clusters: &BTreeMap<String, Vec<usize>>,
) -> Result<BTreeMap<String, usize>> {
    let mut out = BTreeMap::new();
    for (function, clusters) in per_function_clusters {
        if clusters.is_empty() {
            return Err(Error::InsufficientData(format!(
                "function `{function}` has no samples"
            )));
        }
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for c in clusters {
            *counts.entry(*c).or_default() += 1;
        }
        let mut winner = (usize::MAX, 0usize);
        for (c, n) in counts {
            if n > winner.1 {
                winner = (c, n);
            }
        }
        out.insert(function.clone(), winner.0);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    /// Centroids in the standardized space of `scaler`.
    pub centroids: Vec<Vec<f64>>,
    pub function_assignment: BTreeMap<String, usize>,
    pub inertia: f64,
    pub seed: u64,
    pub scaler: Scaler,
}

impl ClusterModel {
    pub fn functions_in(&self, cluster: usize) -> Vec<&str> {
        self.function_assignment
            .iter()
            .filter(|(_, c)| **c == cluster)
            .map(|(f, _)| f.as_str())
            .collect()
    }

    /// Cluster for `function`. Unseen functions go to the centroid nearest to
    /// the mean of `samples` (normalized) when `fallback` is set.
    pub fn route(&self, function: &str, samples: &[Vec<f64>], fallback: bool) -> Result<usize> {
        if let Some(c) = self.function_assignment.get(function) {
            return Ok(*c);
        }
        if !fallback || samples.is_empty() {
            return Err(Error::UnknownFunction(function.to_string()));
        }
        let dim = self.scaler.dim();
        let mut mean = vec![0.0; dim];
        for s in samples {
            if s.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: s.len(),
                });
            }
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= samples.len() as f64);
        Ok(nearest(&self.scaler.standardize(&mean), &self.centroids).0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(center: (f64, f64), n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                vec![
                    center.0 + rng.random_range(-0.1..0.1),
                    center.1 + rng.random_range(-0.1..0.1),
                ]
            })
            .collect()
    }

    #[test]
    fn separates_two_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pts = cloud((0.0, 0.0), 6, &mut rng);
        pts.extend(cloud((10.0, 10.0), 6, &mut rng));
        let res = kmeans(&pts, &KMeansConfig::new(2, 3)).unwrap();
        let mut cs = res.centroids.clone();
        cs.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert!(sq_dist(&cs[0], &[0.0, 0.0]).sqrt() < 0.2);
        assert!(sq_dist(&cs[1], &[10.0, 10.0]).sqrt() < 0.2);
        // Each point lies within 0.1*sqrt(2) of its cloud center.
        assert!(res.inertia < 12.0 * 0.02);
        assert_eq!(res.assignment[..6].iter().collect::<HashSet<_>>().len(), 1);
    }

    #[test]
    fn k_equal_to_n_has_zero_inertia() {
        let pts = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![5.0, -1.0], vec![7.0, 7.0]];
        let res = kmeans(&pts, &KMeansConfig::new(4, 0)).unwrap();
        assert_eq!(res.inertia, 0.0);
    }

    #[test]
    fn k_one_gives_the_mean() {
        let pts = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, -1.0]];
        let res = kmeans(&pts, &KMeansConfig::new(1, 0)).unwrap();
        assert!((res.centroids[0][0] - 2.0).abs() < 1e-15);
        assert!((res.centroids[0][1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn k_beyond_distinct_samples_is_rejected() {
        let pts = vec![vec![1.0], vec![1.0], vec![2.0]];
        assert!(kmeans(&pts, &KMeansConfig::new(3, 0)).is_err());
        assert!(matches!(kmeans(&[], &KMeansConfig::new(1, 0)), Err(Error::NoSamples)));
    }

    #[test]
    fn empty_cluster_is_reseeded() {
        let pts = vec![vec![0.0], vec![1.0], vec![10.0], vec![11.0]];
        // The far-away centroid never attracts a point at first.
        let res = lloyd(&pts, vec![vec![0.5], vec![100.0], vec![10.5]], 50);
        let used: HashSet<_> = res.assignment.iter().collect();
        assert_eq!(used.len(), 3);
        for w in res.inertia_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn plurality_assignment_with_low_index_ties() {
        let mut m = BTreeMap::new();
        m.insert("A".to_string(), [vec![0; 7], vec![1; 3]].concat());
        m.insert("B".to_string(), [vec![2; 5], vec![1; 5]].concat());
        m.insert("C".to_string(), vec![0]);
        let a = assign_functions(&m).unwrap();
        assert_eq!(a["A"], 0);
        assert_eq!(a["B"], 1);
        assert_eq!(a["C"], 0);
        m.insert("D".to_string(), vec![]);
        assert!(assign_functions(&m).is_err());
    }

    #[test]
    fn routing_known_unseen_and_disabled() {
        let model = ClusterModel {
            k: 3,
            centroids: vec![vec![0.0, 0.0], vec![5.0, 5.0], vec![-5.0, 5.0]],
            function_assignment: [("foo".to_string(), 1)].into_iter().collect(),
            inertia: 0.0,
            seed: 0,
            scaler: Scaler::identity(2),
        };
        assert_eq!(model.route("foo", &[], false).unwrap(), 1);
        let samples = vec![vec![-4.0, 4.0], vec![-6.0, 6.5]];
        assert_eq!(model.route("bar", &samples, true).unwrap(), 2);
        assert!(matches!(
            model.route("bar", &samples, false),
            Err(Error::UnknownFunction(_))
        ));
    }
}
