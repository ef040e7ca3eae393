use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{nearest, sq_dist, ClusterError, FeatureMatrix, Result};
use crate::report::join_reals;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KMeansInit {
    /// `k` distinct samples drawn uniformly.
    Random,
    /// Sequential seeding weighted by squared distance to the nearest
    /// center chosen so far (k-means++).
    DSquared,
}

#[derive(Debug, Clone)]
pub struct KMeansParams {
    pub k: usize,
    pub init: KMeansInit,
    pub max_iter: usize,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentroidModel {
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances from each sample to its nearest centroid.
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after every assignment step, the last entry equal to
    /// `inertia`.
    pub inertia_trace: Vec<f64>,
}

impl CentroidModel {
    pub fn to_csv(&self) -> String {
        self.centroids
            .iter()
            .map(|c| join_reals(c) + "\n")
            .collect()
    }
}

pub(crate) fn check_fit_input(features: &FeatureMatrix, k: usize) -> Result<()> {
    if k == 0 || k > features.n_samples() {
        return Err(ClusterError::InvalidK {
            k,
            n_samples: features.n_samples(),
        });
    }
    Ok(())
}

pub(crate) fn seed_centers(
    features: &FeatureMatrix,
    k: usize,
    init: KMeansInit,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let n = features.n_samples();
    match init {
        KMeansInit::Random => index::sample(rng, n, k)
            .into_iter()
            .map(|i| features.row(i).to_vec())
            .collect(),
        KMeansInit::DSquared => {
            let mut chosen = vec![false; n];
            let first = rng.gen_range(0..n);
            chosen[first] = true;
            let mut centers = vec![features.row(first).to_vec()];
            let mut d2: Vec<f64> = features
                .rows()
                .map(|r| sq_dist(r, &centers[0]))
                .collect();
            while centers.len() < k {
                let total: f64 = d2.iter().sum();
                let pick = if total > 0.0 {
                    let mut target = rng.gen::<f64>() * total;
                    let mut pick = None;
                    for (i, &w) in d2.iter().enumerate() {
                        if w > 0.0 {
                            pick = Some(i);
                            if target < w {
                                break;
                            }
                            target -= w;
                        }
                    }
                    pick.expect("positive total has a positive weight")
                } else {
                    // every sample coincides with a center: take any unused one
                    let unused: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
                    unused[rng.gen_range(0..unused.len())]
                };
                chosen[pick] = true;
                let c = features.row(pick).to_vec();
                for (w, r) in d2.iter_mut().zip(features.rows()) {
                    *w = w.min(sq_dist(r, &c));
                }
                centers.push(c);
            }
            centers
        }
    }
}

fn assign(features: &FeatureMatrix, centers: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    let pairs: Vec<(usize, f64)> = features
        .values()
        .par_chunks_exact(features.n_dims())
        .map(|r| nearest(r, centers))
        .collect();
    pairs.into_iter().unzip()
}

/// Lloyd's algorithm from the chosen seeding.
///
/// A cluster left empty by an assignment step is moved onto the sample
/// farthest from its own centroid. Labels break distance ties toward the
/// lowest centroid index.
pub fn kmeans_fit(
    features: &FeatureMatrix,
    params: &KMeansParams,
    seed: u64,
) -> Result<(CentroidModel, Vec<usize>)> {
    check_fit_input(features, params.k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = seed_centers(features, params.k, params.init, &mut rng);
    let d = features.n_dims();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let (mut labels, mut dists) = assign(features, &centers);
    trace.push(dists.iter().sum::<f64>());
    while iterations < params.max_iter {
        iterations += 1;
        let mut sums = vec![vec![0.0; d]; params.k];
        let mut counts = vec![0usize; params.k];
        for (r, &l) in features.rows().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(r) {
                *s += x;
            }
        }
        let mut taken = vec![false; features.n_samples()];
        let mut shift: f64 = 0.0;
        for j in 0..params.k {
            let new = if counts[j] > 0 {
                sums[j].iter().map(|s| s / counts[j] as f64).collect()
            } else {
                let far = (0..features.n_samples())
                    .filter(|&i| !taken[i])
                    .fold(None, |best: Option<usize>, i| match best {
                        Some(b) if dists[b] >= dists[i] => Some(b),
                        _ => Some(i),
                    })
                    .expect("k <= n_samples");
                taken[far] = true;
                dists[far] = 0.0;
                features.row(far).to_vec()
            };
            shift = shift.max(sq_dist(&new, &centers[j]).sqrt());
            centers[j] = new;
        }
        (labels, dists) = assign(features, &centers);
        trace.push(dists.iter().sum::<f64>());
        if shift < params.tol {
            break;
        }
    }
    let inertia = *trace.last().unwrap();
    Ok((
        CentroidModel {
            centroids: centers,
            inertia,
            iterations,
            inertia_trace: trace,
        },
        labels,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(k: usize, init: KMeansInit) -> KMeansParams {
        KMeansParams {
            k,
            init,
            max_iter: 100,
            tol: 1e-9,
        }
    }

    fn one_d(xs: &[f64]) -> FeatureMatrix {
        FeatureMatrix::new(xs.len(), 1, xs.to_vec()).unwrap()
    }

    /// Minimum inertia over every 2-partition of the samples.
    fn best_two_partition(xs: &[f64]) -> (f64, Vec<f64>) {
        let n = xs.len();
        let mut best = (f64::INFINITY, vec![]);
        for mask in 1..(1u32 << n) - 1 {
            let mut groups = [vec![], vec![]];
            for (i, &x) in xs.iter().enumerate() {
                groups[((mask >> i) & 1) as usize].push(x);
            }
            let mut cost = 0.0;
            let mut cents = vec![];
            for g in &groups {
                let m = g.iter().sum::<f64>() / g.len() as f64;
                cost += g.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
                cents.push(m);
            }
            if cost < best.0 {
                cents.sort_by(f64::total_cmp);
                best = (cost, cents);
            }
        }
        best
    }

    #[test]
    fn two_clusters_match_enumeration() {
        let xs = [0.0, 1.0, 9.0, 10.0];
        let (cost, cents) = best_two_partition(&xs);
        assert_eq!(cents, vec![0.5, 9.5]);
        for init in [KMeansInit::Random, KMeansInit::DSquared] {
            for seed in 0..5 {
                let (m, _) = kmeans_fit(&one_d(&xs), &params(2, init), seed).unwrap();
                let mut got: Vec<f64> = m.centroids.iter().map(|c| c[0]).collect();
                got.sort_by(f64::total_cmp);
                assert_eq!(got, cents);
                assert!((m.inertia - cost).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn k_equals_distinct_points() {
        let xs = [3.0, -1.0, 7.5, 2.0, 11.0];
        for init in [KMeansInit::Random, KMeansInit::DSquared] {
            let (m, labels) = kmeans_fit(&one_d(&xs), &params(5, init), 9).unwrap();
            assert_eq!(m.inertia, 0.0);
            for (i, &l) in labels.iter().enumerate() {
                assert_eq!(m.centroids[l][0], xs[i]);
            }
        }
    }

    #[test]
    fn single_cluster_is_mean() {
        let fm = FeatureMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 6.0], vec![5.0, 1.0]]).unwrap();
        let (m, labels) = kmeans_fit(&fm, &params(1, KMeansInit::DSquared), 1).unwrap();
        assert_eq!(m.centroids[0], vec![3.0, 3.0]);
        assert_eq!(labels, vec![0, 0, 0]);
    }

    #[test]
    fn dsquared_with_k_n_picks_every_point() {
        let xs: Vec<f64> = (0..12).map(|i| (i * i) as f64).collect();
        let fm = one_d(&xs);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut centers: Vec<f64> = seed_centers(&fm, 12, KMeansInit::DSquared, &mut rng)
            .into_iter()
            .map(|c| c[0])
            .collect();
        centers.sort_by(f64::total_cmp);
        assert_eq!(centers, xs);
    }

    #[test]
    fn duplicates_get_reseeded() {
        // 3 distinct locations, random init may pick duplicates
        let xs = [0.0, 0.0, 0.0, 5.0, 5.0, 9.0];
        for seed in 0..20 {
            let (m, _) = kmeans_fit(&one_d(&xs), &params(3, KMeansInit::Random), seed).unwrap();
            assert_eq!(m.inertia, 0.0, "seed {seed}");
        }
    }

    #[test]
    fn invalid_k() {
        let fm = one_d(&[1.0, 2.0]);
        assert!(kmeans_fit(&fm, &params(0, KMeansInit::Random), 0).is_err());
        assert!(kmeans_fit(&fm, &params(3, KMeansInit::Random), 0).is_err());
    }

    #[test]
    fn deterministic_for_seed() {
        let xs: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64).collect();
        let a = kmeans_fit(&one_d(&xs), &params(4, KMeansInit::DSquared), 42).unwrap();
        let b = kmeans_fit(&one_d(&xs), &params(4, KMeansInit::DSquared), 42).unwrap();
        assert_eq!(a, b);
    }
}
