use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{nearest, sq_dist, ClusterError, FeatureMatrix, Result};

#[derive(Debug, Clone)]
pub struct MeanShiftParams {
    pub bandwidth: f64,
    /// Converged points closer than this to an existing mode join it.
    pub merge_radius: f64,
    pub max_iter: usize,
    pub tol: f64,
    /// Samples used as starting points; evenly strided when exceeded.
    pub max_seeds: usize,
    /// Samples used for the kernel density; evenly strided when exceeded.
    pub max_reference: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanShiftModel {
    pub modes: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

fn strided(n: usize, m: usize) -> Vec<usize> {
    if m == 0 || n <= m {
        (0..n).collect()
    } else {
        (0..m).map(|i| i * n / m).collect()
    }
}

/// Quantile of pairwise distances over a seeded random subset.
pub fn estimate_bandwidth(features: &FeatureMatrix, quantile: f64, subset: usize, seed: u64) -> f64 {
    let n = features.n_samples();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = index::sample(&mut rng, n, subset.min(n)).into_vec();
    idx.sort_unstable();
    let mut d: Vec<f64> = Vec::with_capacity(idx.len() * idx.len() / 2);
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            d.push(sq_dist(features.row(i), features.row(j)).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let pos = ((d.len() - 1) as f64 * quantile.clamp(0.0, 1.0)).round() as usize;
    let (_, q, _) = d.select_nth_unstable_by(pos, f64::total_cmp);
    if *q > 0.0 {
        *q
    } else {
        1.0
    }
}

fn climb(start: &[f64], reference: &[&[f64]], p: &MeanShiftParams) -> Vec<f64> {
    let d = start.len();
    let inv = 1.0 / (2.0 * p.bandwidth * p.bandwidth);
    let mut x = start.to_vec();
    for _ in 0..p.max_iter {
        let mut num = vec![0.0; d];
        let mut den = 0.0;
        for r in reference {
            let w = (-sq_dist(&x, r) * inv).exp();
            if w > 0.0 {
                den += w;
                for (a, b) in num.iter_mut().zip(r.iter()) {
                    *a += w * b;
                }
            }
        }
        if den == 0.0 {
            break;
        }
        num.iter_mut().for_each(|v| *v /= den);
        let shift = sq_dist(&num, &x).sqrt();
        x = num;
        if shift < p.tol {
            break;
        }
    }
    x
}

/// Gaussian-kernel mean shift.
///
/// Each seed climbs the kernel density estimate; converged points within
/// `merge_radius` of an earlier mode join it. When every sample is a seed
/// its label is the mode it climbed to; otherwise samples take the
/// nearest mode.
pub fn mean_shift_fit(features: &FeatureMatrix, params: &MeanShiftParams) -> Result<MeanShiftModel> {
    if !(params.bandwidth > 0.0 && params.bandwidth.is_finite()) {
        return Err(ClusterError::InvalidParameter(format!(
            "bandwidth must be positive, got {}",
            params.bandwidth
        )));
    }
    if !(params.merge_radius >= 0.0) {
        return Err(ClusterError::InvalidParameter(
            "merge_radius must be non-negative".into(),
        ));
    }
    let n = features.n_samples();
    let seeds = strided(n, params.max_seeds);
    let reference: Vec<&[f64]> = strided(n, params.max_reference)
        .into_iter()
        .map(|i| features.row(i))
        .collect();
    let converged: Vec<Vec<f64>> = seeds
        .par_iter()
        .map(|&i| climb(features.row(i), &reference, params))
        .collect();
    let r2 = params.merge_radius * params.merge_radius;
    let mut modes: Vec<Vec<f64>> = Vec::new();
    let mut seed_mode = Vec::with_capacity(seeds.len());
    for c in converged {
        match modes.iter().position(|m| sq_dist(m, &c) <= r2) {
            Some(j) => seed_mode.push(j),
            None => {
                seed_mode.push(modes.len());
                modes.push(c);
            }
        }
    }
    let labels = if seeds.len() == n {
        seed_mode
    } else {
        features
            .values()
            .par_chunks_exact(features.n_dims())
            .map(|x| nearest(x, &modes).0)
            .collect()
    };
    Ok(MeanShiftModel { modes, labels })
}
