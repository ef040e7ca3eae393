//! Full-covariance Gaussian mixture fitted by expectation-maximization.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::kmeans::{check_fit_input, kmeans_fit, KMeansInit, KMeansParams};
use super::{ClusterError, FeatureMatrix, Result};
use crate::report::join_reals;

#[derive(Debug, Clone)]
pub struct GmmParams {
    pub k: usize,
    pub max_iter: usize,
    /// Stop once the mean per-sample log-likelihood gains less than this.
    pub tol: f64,
    /// Added to every covariance diagonal; `None` means 1e-6 times the mean
    /// feature variance.
    pub cov_reg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Row-major `d x d` covariance per component.
    pub covariances: Vec<Vec<f64>>,
    /// Mean per-sample log-likelihood at every E-step.
    pub log_likelihood_trace: Vec<f64>,
    pub cov_reg: f64,
    pub iterations: usize,
}

impl GmmModel {
    pub fn n_dims(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    /// One row per component: weight, mean vector, covariance row-major.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for j in 0..self.weights.len() {
            let mut row = vec![self.weights[j]];
            row.extend(&self.means[j]);
            row.extend(&self.covariances[j]);
            out.push_str(&join_reals(&row));
            out.push('\n');
        }
        out
    }

    /// Responsibilities for every sample (row-major `n x k`) plus the mean
    /// log-likelihood.
    pub fn responsibilities(&self, features: &FeatureMatrix) -> Result<(Vec<f64>, f64)> {
        let comps = self.prepare()?;
        Ok(e_step(features, &comps))
    }

    fn prepare(&self) -> Result<Vec<Component>> {
        let d = self.n_dims();
        (0..self.weights.len())
            .map(|j| {
                let cov = DMatrix::from_row_slice(d, d, &self.covariances[j]);
                let chol = cov.cholesky().ok_or(ClusterError::SingularCovariance(j))?;
                let l = chol.l();
                let log_det = 2.0 * (0..d).map(|i| l[(i, i)].ln()).sum::<f64>();
                let mut lower = vec![0.0; d * d];
                for r in 0..d {
                    for c in 0..=r {
                        lower[r * d + c] = l[(r, c)];
                    }
                }
                let norm = self.weights[j].ln()
                    - 0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
                Ok(Component {
                    mean: self.means[j].clone(),
                    lower,
                    norm,
                })
            })
            .collect()
    }
}

struct Component {
    mean: Vec<f64>,
    /// Cholesky factor, row-major lower triangle.
    lower: Vec<f64>,
    /// log weight - (d log 2pi + log det) / 2
    norm: f64,
}

impl Component {
    fn log_density(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        let d = self.mean.len();
        let mut maha = 0.0;
        for r in 0..d {
            let mut v = x[r] - self.mean[r];
            for c in 0..r {
                v -= self.lower[r * d + c] * scratch[c];
            }
            v /= self.lower[r * d + r];
            scratch[r] = v;
            maha += v * v;
        }
        self.norm - 0.5 * maha
    }
}

/// Normalized responsibilities (row-major `n x k`) and the mean per-sample
/// log-likelihood. Samples are independent, so the parallel map is exact;
/// the likelihood sum runs in sample order.
fn e_step(features: &FeatureMatrix, comps: &[Component]) -> (Vec<f64>, f64) {
    let k = comps.len();
    let d = features.n_dims();
    let rows: Vec<(Vec<f64>, f64)> = features
        .values()
        .par_chunks_exact(d)
        .map(|x| {
            let mut scratch = vec![0.0; d];
            let logs: Vec<f64> = comps.iter().map(|c| c.log_density(x, &mut scratch)).collect();
            let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = logs.iter().map(|l| (l - m).exp()).sum();
            let ll = m + s.ln();
            (logs.iter().map(|l| (l - ll).exp()).collect(), ll)
        })
        .collect();
    let mut resp = Vec::with_capacity(features.n_samples() * k);
    let mut total = 0.0;
    for (r, ll) in rows {
        resp.extend(r);
        total += ll;
    }
    (resp, total / features.n_samples() as f64)
}

fn m_step(features: &FeatureMatrix, resp: &[f64], k: usize, reg: f64) -> GmmModel {
    let d = features.n_dims();
    let mut nk = vec![0.0; k];
    let mut means = vec![vec![0.0; d]; k];
    for (x, r) in features.rows().zip(resp.chunks_exact(k)) {
        for j in 0..k {
            nk[j] += r[j];
            for (m, v) in means[j].iter_mut().zip(x) {
                *m += r[j] * v;
            }
        }
    }
    // keeps dead components finite, as a vanishing weight
    nk.iter_mut().for_each(|v| *v += 10.0 * f64::EPSILON);
    for j in 0..k {
        means[j].iter_mut().for_each(|m| *m /= nk[j]);
    }
    let mut covs = vec![vec![0.0; d * d]; k];
    let mut diff = vec![0.0; d];
    for (x, r) in features.rows().zip(resp.chunks_exact(k)) {
        for j in 0..k {
            if r[j] == 0.0 {
                continue;
            }
            for (t, (a, b)) in diff.iter_mut().zip(x.iter().zip(&means[j])) {
                *t = a - b;
            }
            let cov = &mut covs[j];
            for a in 0..d {
                let ra = r[j] * diff[a];
                for b in 0..=a {
                    cov[a * d + b] += ra * diff[b];
                }
            }
        }
    }
    for j in 0..k {
        let cov = &mut covs[j];
        for a in 0..d {
            for b in 0..=a {
                let v = cov[a * d + b] / nk[j];
                cov[a * d + b] = v;
                cov[b * d + a] = v;
            }
            cov[a * d + a] += reg;
        }
    }
    let total: f64 = nk.iter().sum();
    GmmModel {
        weights: nk.iter().map(|v| v / total).collect(),
        means,
        covariances: covs,
        log_likelihood_trace: Vec::new(),
        cov_reg: reg,
        iterations: 0,
    }
}

fn argmax_rows(resp: &[f64], k: usize) -> Vec<usize> {
    resp.chunks_exact(k)
        .map(|r| {
            let mut best = 0;
            for j in 1..k {
                if r[j] > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Fits a `k`-component mixture, seeded from k-means++ under `seed`.
///
/// Returns the model whose parameters produced the final E-step, and the
/// maximum-responsibility label of every sample.
pub fn gmm_fit(features: &FeatureMatrix, params: &GmmParams, seed: u64) -> Result<(GmmModel, Vec<usize>)> {
    check_fit_input(features, params.k)?;
    let k = params.k;
    let reg = match params.cov_reg {
        Some(r) if r > 0.0 && r.is_finite() => r,
        Some(r) => {
            return Err(ClusterError::InvalidParameter(format!(
                "cov_reg must be positive, got {r}"
            )))
        }
        None => {
            let var = features.variance();
            let mean_var = var.iter().sum::<f64>() / var.len() as f64;
            if mean_var > 0.0 {
                1e-6 * mean_var
            } else {
                1e-6
            }
        }
    };
    let km = KMeansParams {
        k,
        init: KMeansInit::DSquared,
        max_iter: 100,
        tol: 1e-6,
    };
    let (_, init_labels) = kmeans_fit(features, &km, seed)?;
    let mut hard = vec![0.0; features.n_samples() * k];
    for (i, &l) in init_labels.iter().enumerate() {
        hard[i * k + l] = 1.0;
    }
    let mut model = m_step(features, &hard, k, reg);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let resp = loop {
        let (resp, ll) = e_step(features, &model.prepare()?);
        let gain = trace.last().map(|prev| ll - prev);
        trace.push(ll);
        if iterations >= params.max_iter || gain.is_some_and(|g| g < params.tol) {
            break resp;
        }
        let next = m_step(features, &resp, k, reg);
        // reject the step only if it cannot be evaluated
        next.prepare()?;
        model = next;
        iterations += 1;
    };
    model.log_likelihood_trace = trace;
    model.iterations = iterations;
    let labels = argmax_rows(&resp, k);
    Ok((model, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn params(k: usize) -> GmmParams {
        GmmParams {
            k,
            max_iter: 200,
            tol: 1e-10,
            cov_reg: Some(1e-6),
        }
    }

    #[test]
    fn single_component_closed_form() {
        let rows = vec![
            vec![1.0, 2.0],
            vec![2.0, 1.0],
            vec![4.0, 3.0],
            vec![5.0, 6.0],
            vec![3.0, 3.0],
        ];
        let fm = FeatureMatrix::from_rows(&rows).unwrap();
        let (m, labels) = gmm_fit(&fm, &params(1), 0).unwrap();
        let mean = fm.mean();
        assert!((m.weights[0] - 1.0).abs() < 1e-12);
        for (a, b) in m.means[0].iter().zip(&mean) {
            assert!((a - b).abs() < 1e-9);
        }
        // population covariance + reg
        let n = rows.len() as f64;
        for a in 0..2 {
            for b in 0..2 {
                let s: f64 = rows.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / n;
                let expect = s + if a == b { 1e-6 } else { 0.0 };
                assert!((m.covariances[0][a * 2 + b] - expect).abs() < 1e-9);
            }
        }
        assert!(labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn responsibilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = Normal::new(0.0, 1.0).unwrap();
        let rows: Vec<Vec<f64>> = (0..300)
            .map(|i| vec![n.sample(&mut rng) + (i % 3) as f64 * 4.0, n.sample(&mut rng)])
            .collect();
        let fm = FeatureMatrix::from_rows(&rows).unwrap();
        let (m, _) = gmm_fit(&fm, &params(3), 5).unwrap();
        let (resp, _) = m.responsibilities(&fm).unwrap();
        for r in resp.chunks_exact(3) {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!((m.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for w in m.log_likelihood_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-7);
        }
    }

    #[test]
    fn rejects_bad_regularization() {
        let fm = FeatureMatrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let p = GmmParams {
            cov_reg: Some(0.0),
            ..params(1)
        };
        assert!(matches!(gmm_fit(&fm, &p, 0), Err(ClusterError::InvalidParameter(_))));
        assert!(gmm_fit(&fm, &params(3), 0).is_err());
    }

    #[test]
    fn identical_points_stay_finite() {
        let fm = FeatureMatrix::from_rows(&vec![vec![7.0, 7.0]; 20]).unwrap();
        let (m, labels) = gmm_fit(&fm, &params(2), 0).unwrap();
        assert!(m.log_likelihood_trace.iter().all(|v| v.is_finite()));
        assert_eq!(labels.len(), 20);
    }

    #[test]
    fn csv_row_per_component() {
        let fm = FeatureMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![5.0, 5.0]]).unwrap();
        let (m, _) = gmm_fit(&fm, &params(1), 0).unwrap();
        let csv = m.to_csv();
        assert_eq!(csv.lines().count(), 1);
        assert_eq!(csv.lines().next().unwrap().split(',').count(), 1 + 2 + 4);
    }
}
