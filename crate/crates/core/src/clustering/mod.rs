//! Per-pixel clustering over stacked wavelength channels.
//!
//! Every pixel becomes one sample whose coordinates are its gray values
//! across channels; samples are compared by plain Euclidean distance.

mod gmm;
mod kmeans;
mod meanshift;

pub use gmm::{gmm_fit, GmmModel, GmmParams};
pub use kmeans::{kmeans_fit, CentroidModel, KMeansInit, KMeansParams};
pub use meanshift::{estimate_bandwidth, mean_shift_fit, MeanShiftModel, MeanShiftParams};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{MultiChannelImage, Raster};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("feature matrix length {len} is not {n_samples} x {n_dims}")]
    ShapeMismatch {
        n_samples: usize,
        n_dims: usize,
        len: usize,
    },
    #[error("non-finite feature value at sample {0}")]
    NonFinite(usize),
    #[error("cluster count {k} invalid for {n_samples} samples")]
    InvalidK { k: usize, n_samples: usize },
    #[error("covariance of component {0} is not positive-definite; increase cov_reg")]
    SingularCovariance(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("label count {len} does not fill a {width}x{height} image")]
    LabelLength {
        len: usize,
        width: usize,
        height: usize,
    },
    #[error("label {label} at index {index} is not below k = {k}")]
    LabelOutOfRange { index: usize, label: usize, k: usize },
    #[error(transparent)]
    Image(#[from] crate::image::ImageError),
}

pub type Result<T> = std::result::Result<T, ClusterError>;

/// Samples in rows, one column per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_samples: usize,
    n_dims: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n_samples: usize, n_dims: usize, values: Vec<f64>) -> Result<Self> {
        if n_samples == 0 || n_dims == 0 || n_samples.checked_mul(n_dims) != Some(values.len()) {
            return Err(ClusterError::ShapeMismatch {
                n_samples,
                n_dims,
                len: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ClusterError::NonFinite(i / n_dims));
        }
        Ok(Self {
            n_samples,
            n_dims,
            values,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(ClusterError::DimensionMismatch(d, r.len()));
        }
        Self::new(rows.len(), d, rows.concat())
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_dims..(i + 1) * self.n_dims]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.n_dims)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n_dims];
        for r in self.rows() {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.n_samples as f64);
        m
    }

    /// Population variance per column.
    pub fn variance(&self) -> Vec<f64> {
        let mean = self.mean();
        let mut v = vec![0.0; self.n_dims];
        for r in self.rows() {
            for ((acc, x), m) in v.iter_mut().zip(r).zip(&mean) {
                *acc += (x - m) * (x - m);
            }
        }
        v.iter_mut().for_each(|x| *x /= self.n_samples as f64);
        v
    }

    /// Z-scored copy; constant columns are only centered.
    pub fn standardized(&self) -> Self {
        let mean = self.mean();
        let sd: Vec<f64> = self.variance().iter().map(|v| v.sqrt()).collect();
        let values = self
            .rows()
            .flat_map(|r| {
                r.iter()
                    .zip(&mean)
                    .zip(&sd)
                    .map(|((x, m), s)| if *s > 0.0 { (x - m) / s } else { x - m })
                    .collect::<Vec<_>>()
            })
            .collect();
        Self {
            n_samples: self.n_samples,
            n_dims: self.n_dims,
            values,
        }
    }
}

/// One sample per pixel (row-major), one column per channel in wavelength
/// order.
pub fn stack_channels(image: &MultiChannelImage) -> Result<FeatureMatrix> {
    let channels = image.channels();
    let n_dims = channels.len();
    let n_samples = channels[0].1.len();
    let mut values = Vec::with_capacity(n_samples * n_dims);
    for i in 0..n_samples {
        for (_, r) in channels {
            values.push(r.data()[i] as f64);
        }
    }
    FeatureMatrix::new(n_samples, n_dims, values)
}

/// Euclidean distance between cluster center and sample.
pub fn distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(ClusterError::DimensionMismatch(a.len(), b.len()));
    }
    Ok(sq_dist(a, b).sqrt())
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center; ties go to the lowest index.
pub(crate) fn nearest(x: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Raster of cluster indices `0..k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImage {
    raster: Raster,
    k: usize,
}

impl LabelImage {
    pub fn new(raster: Raster, k: usize) -> Result<Self> {
        if let Some(i) = raster.data().iter().position(|&v| v as usize >= k) {
            return Err(ClusterError::LabelOutOfRange {
                index: i,
                label: raster.data()[i] as usize,
                k,
            });
        }
        Ok(Self { raster, k })
    }

    pub fn raster(&self) -> &Raster {
        &self.raster
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dims(&self) -> (usize, usize) {
        self.raster.dims()
    }

    pub fn label(&self, x: usize, y: usize) -> usize {
        self.raster.get(x, y) as usize
    }
}

/// Row-major unflattening of per-sample labels.
pub fn labels_to_image(labels: &[usize], width: usize, height: usize, k: usize) -> Result<LabelImage> {
    if width.checked_mul(height) != Some(labels.len()) {
        return Err(ClusterError::LabelLength {
            len: labels.len(),
            width,
            height,
        });
    }
    if let Some(i) = labels.iter().position(|&l| l >= k) {
        return Err(ClusterError::LabelOutOfRange {
            index: i,
            label: labels[i],
            k,
        });
    }
    let max = k.saturating_sub(1).max(1) as u32;
    let data = labels.iter().map(|&l| l as u32).collect();
    let raster = Raster::new(width, height, max, data)?;
    Ok(LabelImage { raster, k })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMethod {
    Kmeans,
    Kmeanspp,
    Meanshift,
    Gmm,
}

impl ClusterMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::Kmeans => "kmeans",
            Self::Kmeanspp => "kmeanspp",
            Self::Meanshift => "meanshift",
            Self::Gmm => "gmm",
        }
    }
}

impl std::str::FromStr for ClusterMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "kmeans" => Ok(Self::Kmeans),
            "kmeanspp" => Ok(Self::Kmeanspp),
            "meanshift" => Ok(Self::Meanshift),
            "gmm" => Ok(Self::Gmm),
            other => Err(format!(
                "unknown clustering method {other:?} (expected kmeans, kmeanspp, meanshift or gmm)"
            )),
        }
    }
}

/// Result of any clustering method, in a method-independent shape.
#[derive(Debug, Clone)]
pub struct Clustering {
    pub labels: Vec<usize>,
    /// Number of clusters actually produced (mean-shift decides its own).
    pub k: usize,
    /// Cluster centers, one row per label.
    pub centers: Vec<Vec<f64>>,
    /// Model parameters as CSV, one row per component.
    pub model_csv: String,
}

/// Tunables shared by [`cluster`] across methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterParams {
    pub max_iter: usize,
    pub tol: f64,
    /// Diagonal covariance regularization; defaults to 1e-6 times the mean
    /// feature variance.
    pub cov_reg: Option<f64>,
    pub bandwidth: Option<f64>,
    pub merge_radius: Option<f64>,
    pub max_seeds: usize,
    pub max_reference: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            max_iter: 300,
            tol: 1e-6,
            cov_reg: None,
            bandwidth: None,
            merge_radius: None,
            max_seeds: 500,
            max_reference: 4000,
        }
    }
}

pub fn cluster(
    features: &FeatureMatrix,
    method: ClusterMethod,
    k: usize,
    seed: u64,
    params: &ClusterParams,
) -> Result<Clustering> {
    match method {
        ClusterMethod::Kmeans | ClusterMethod::Kmeanspp => {
            let init = if method == ClusterMethod::Kmeans {
                KMeansInit::Random
            } else {
                KMeansInit::DSquared
            };
            let p = KMeansParams {
                k,
                init,
                max_iter: params.max_iter,
                tol: params.tol,
            };
            let (model, labels) = kmeans_fit(features, &p, seed)?;
            Ok(Clustering {
                labels,
                k,
                model_csv: model.to_csv(),
                centers: model.centroids,
            })
        }
        ClusterMethod::Gmm => {
            let p = GmmParams {
                k,
                max_iter: params.max_iter,
                tol: params.tol,
                cov_reg: params.cov_reg,
            };
            let (model, labels) = gmm_fit(features, &p, seed)?;
            Ok(Clustering {
                labels,
                k,
                model_csv: model.to_csv(),
                centers: model.means.clone(),
            })
        }
        ClusterMethod::Meanshift => {
            let bandwidth = match params.bandwidth {
                Some(b) => b,
                None => estimate_bandwidth(features, 0.15, 2000, seed),
            };
            let p = MeanShiftParams {
                bandwidth,
                merge_radius: params.merge_radius.unwrap_or(bandwidth),
                max_iter: params.max_iter,
                tol: 1e-3 * bandwidth,
                max_seeds: params.max_seeds,
                max_reference: params.max_reference,
            };
            let model = mean_shift_fit(features, &p)?;
            let mut csv = String::new();
            for m in &model.modes {
                csv.push_str(&crate::report::join_reals(m));
                csv.push('\n');
            }
            Ok(Clustering {
                k: model.modes.len(),
                labels: model.labels,
                centers: model.modes,
                model_csv: csv,
            })
        }
    }
}
