//! Lloyd's k-means with k-means++ seeding and independent restarts.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Cluster assignment with labels renumbered `0..n_clusters` in order of
/// first occurrence.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Partition {
    labels: Vec<usize>,
    n_clusters: usize,
}

impl Partition {
    /// Canonicalizes arbitrary integer labels.
    pub fn from_labels<T: Eq + std::hash::Hash + Clone>(raw: &[T]) -> Self {
        let mut ids = std::collections::HashMap::new();
        let labels = raw
            .iter()
            .map(|l| {
                let next = ids.len();
                *ids.entry(l.clone()).or_insert(next)
            })
            .collect();
        Self {
            labels,
            n_clusters: ids.len(),
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_lloyd_iterations: usize,
    pub seed: u64,
    /// Stop when the relative drop in within-cluster SS falls below this.
    pub tolerance: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            restarts: 50,
            max_lloyd_iterations: 300,
            seed: 1234,
            tolerance: 1e-10,
        }
    }
}

/// Best restart found by [`kmeans`].
#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    pub partition: Partition,
    pub within_ss: f64,
    pub restart: usize,
    pub iterations: usize,
}

struct Run {
    labels: Vec<usize>,
    within_ss: f64,
    iterations: usize,
}

#[inline]
fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn distinct_rows(values: &[f64], d: usize) -> usize {
    values
        .chunks_exact(d)
        .map(crate::data::row_key)
        .collect::<HashSet<_>>()
        .len()
}

fn plus_plus(values: &[f64], n: usize, d: usize, c: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut centroids = Vec::with_capacity(c * d);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(&values[first * d..(first + 1) * d]);
    let mut nearest: Vec<f64> = values
        .chunks_exact(d)
        .map(|x| dist2(x, &centroids[..d]))
        .collect();
    for _ in 1..c {
        let total: f64 = nearest.iter().sum();
        let target = rng.random::<f64>() * total;
        let mut cum = 0.0;
        let mut pick = None;
        for (i, &w) in nearest.iter().enumerate() {
            if w > 0.0 {
                cum += w;
                pick = Some(i);
                if cum > target {
                    break;
                }
            }
        }
        let pick = pick.expect("fewer distinct rows than clusters");
        let start = centroids.len();
        centroids.extend_from_slice(&values[pick * d..(pick + 1) * d]);
        for (x, w) in values.chunks_exact(d).zip(nearest.iter_mut()) {
            *w = w.min(dist2(x, &centroids[start..start + d]));
        }
    }
    centroids
}

fn lloyd(values: &[f64], n: usize, d: usize, c: usize, cfg: &KMeansConfig, rng: &mut ChaCha8Rng) -> Run {
    let mut centroids = plus_plus(values, n, d, c, rng);
    let mut labels = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    let mut prev_ss = f64::INFINITY;
    let mut within_ss = f64::INFINITY;
    let mut iterations = 0;

    while iterations < cfg.max_lloyd_iterations {
        iterations += 1;
        let mut changed = false;
        for (i, x) in values.chunks_exact(d).enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, cen) in centroids.chunks_exact(d).enumerate() {
                let dd = dist2(x, cen);
                if dd < best_d {
                    best_d = dd;
                    best = j;
                }
            }
            changed |= labels[i] != best;
            labels[i] = best;
            dists[i] = best_d;
        }

        // empty clusters take the point farthest from its centroid
        let mut sizes = vec![0usize; c];
        labels.iter().for_each(|&l| sizes[l] += 1);
        while let Some(empty) = sizes.iter().position(|&s| s == 0) {
            let mut far = None;
            for i in 0..n {
                if sizes[labels[i]] > 1 && far.map_or(true, |f: usize| dists[i] > dists[f]) {
                    far = Some(i);
                }
            }
            let far = far.expect("at least c points");
            sizes[labels[far]] -= 1;
            sizes[empty] += 1;
            labels[far] = empty;
            dists[far] = 0.0;
            centroids[empty * d..(empty + 1) * d].copy_from_slice(&values[far * d..(far + 1) * d]);
            changed = true;
        }

        centroids.iter_mut().for_each(|v| *v = 0.0);
        for (x, &l) in values.chunks_exact(d).zip(&labels) {
            for (cv, xv) in centroids[l * d..(l + 1) * d].iter_mut().zip(x) {
                *cv += xv;
            }
        }
        for (j, cen) in centroids.chunks_exact_mut(d).enumerate() {
            let inv = 1.0 / sizes[j] as f64;
            cen.iter_mut().for_each(|v| *v *= inv);
        }
        within_ss = values
            .chunks_exact(d)
            .zip(&labels)
            .map(|(x, &l)| dist2(x, &centroids[l * d..(l + 1) * d]))
            .sum();
        debug_assert!(
            within_ss <= prev_ss * (1.0 + 1e-9) + 1e-300,
            "within-cluster SS increased: {prev_ss} -> {within_ss}"
        );
        if !changed || prev_ss - within_ss <= cfg.tolerance * prev_ss {
            break;
        }
        prev_ss = within_ss;
    }
    Run {
        labels,
        within_ss,
        iterations,
    }
}

/// Clusters the rows of a row-major `n x d` matrix into `c` groups.
///
/// Runs `config.restarts` independent seeded restarts and keeps the one
/// with the smallest within-cluster sum of squares (lowest restart index on
/// ties).
pub fn kmeans(values: &[f64], d: usize, c: usize, config: &KMeansConfig) -> Result<Clustering> {
    if d == 0 || values.len() % d != 0 {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: values.len(),
        });
    }
    let n = values.len() / d;
    if c < 2 {
        return Err(Error::Usage(format!("need at least 2 clusters, got {c}")));
    }
    if config.restarts < 1 || config.max_lloyd_iterations < 1 {
        return Err(Error::Usage("restarts and iterations must be >= 1".into()));
    }
    let distinct = distinct_rows(values, d);
    if c > distinct {
        return Err(Error::Data(format!(
            "{c} clusters requested but only {distinct} distinct rows"
        )));
    }
    let runs: Vec<Run> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(r as u64);
            lloyd(values, n, d, c, config, &mut rng)
        })
        .collect();
    let (restart, best) = runs
        .into_iter()
        .enumerate()
        .reduce(|a, b| if b.1.within_ss < a.1.within_ss { b } else { a })
        .expect("restarts >= 1");
    Ok(Clustering {
        partition: Partition::from_labels(&best.labels),
        within_ss: best.within_ss,
        restart,
        iterations: best.iterations,
    })
}

pub fn kmeans_dataset(data: &Dataset, c: usize, config: &KMeansConfig) -> Result<Clustering> {
    if !data.is_complete() {
        return Err(Error::Data("cannot cluster a dataset with absent cells".into()));
    }
    kmeans(data.values(), data.n_cols(), c, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_labels() {
        let p = Partition::from_labels(&[5, 5, 2, 9, 2]);
        assert_eq!(p.labels(), &[0, 0, 1, 2, 1]);
        assert_eq!(p.n_clusters(), 3);
        let q = Partition::from_labels(&["b", "a", "b"]);
        assert_eq!(q.labels(), &[0, 1, 0]);
    }

    #[test]
    fn two_separated_pairs() {
        let x = [0.0, 0.0, 0.1, 0.0, 10.0, 0.0, 10.1, 0.0];
        let res = kmeans(&x, 2, 2, &KMeansConfig::default()).unwrap();
        assert_eq!(res.partition.labels(), &[0, 0, 1, 1]);
        assert!((res.within_ss - 0.01).abs() < 1e-12);
    }

    #[test]
    fn singleton_clusters_have_zero_ss() {
        let x = [0.0, 1.0, 4.0, 9.0, 16.0];
        let res = kmeans(&x, 1, 5, &KMeansConfig::default()).unwrap();
        assert_eq!(res.within_ss, 0.0);
        assert_eq!(res.partition.n_clusters(), 5);
    }

    #[test]
    fn duplicates_only_contribute() {
        let x = [0.0, 0.0, 1.0, 5.0];
        let res = kmeans(&x, 1, 3, &KMeansConfig::default()).unwrap();
        assert_eq!(res.within_ss, 0.0);
        assert_eq!(res.partition.labels(), &[0, 0, 1, 2]);
    }

    #[test]
    fn too_many_clusters() {
        let x = [1.0, 1.0, 1.0, 2.0];
        assert!(kmeans(&x, 1, 3, &KMeansConfig::default()).is_err());
        assert!(kmeans(&x, 1, 1, &KMeansConfig::default()).is_err());
    }

    #[test]
    fn empty_cluster_is_repaired() {
        // 1-d points where a bad seed pair could strand a centroid
        let x: Vec<f64> = (0..30).map(|i| if i < 28 { (i % 3) as f64 } else { 100.0 + i as f64 }).collect();
        let cfg = KMeansConfig {
            restarts: 20,
            ..KMeansConfig::default()
        };
        let res = kmeans(&x, 1, 4, &cfg).unwrap();
        assert_eq!(res.partition.n_clusters(), 4);
    }
}
