//! Pipeline configuration: one TOML file with a section per stage.
//!
//! ```toml
//! seed = 7
//! output_dir = "out"
//!
//! [phantom]            # omit to read `input` rasters instead
//! frames = 700
//!
//! [preprocess]
//! median_window = 5
//!
//! [terrace]
//! n_segments = 35
//! gray_floor = 5000
//!
//! [pipeline]
//! compress = true
//! window = "window1"   # window1 | window2 | none
//!
//! [clustering]
//! method = "gmm"
//! k = 4
//!
//! [evaluation]
//! roi_pad = 5
//! subset_ids = [9, 10, 11, 12, 13, 14, 15, 16]
//!
//! [[channel]]
//! wavelength = 410
//! min_body_area = 900
//! window1 = { low = 0, high = 95 }
//! window2 = { low = 0, high = 55 }
//! ```
//!
//! Any scalar key can be overridden with a dotted path such as
//! `clustering.k=7` or `channel.0.min_body_area=1225`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{ClusterMethod, ClusterParams};
use crate::phantom::PhantomSpec;
use crate::terrace::AutoConfig;
use crate::window::WindowSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid override {0:?}: {1}")]
    Override(String, String),
    #[error("invalid config: {field}: {message}")]
    Invalid { field: String, message: String },
}

pub type Result<T> = std::result::Result<T, ConfigError>;

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub wavelength: u32,
    pub min_body_area: u64,
    pub window1: WindowSpec,
    pub window2: WindowSpec,
    /// Accumulated raster for this wavelength; required without a phantom.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowChoice {
    Window1,
    Window2,
    None,
}

impl std::str::FromStr for WindowChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "window1" => Ok(Self::Window1),
            "window2" => Ok(Self::Window2),
            "none" => Ok(Self::None),
            other => Err(format!("unknown window {other:?} (expected window1, window2 or none)")),
        }
    }
}

impl ChannelConfig {
    pub fn window(&self, choice: WindowChoice) -> Option<&WindowSpec> {
        match choice {
            WindowChoice::Window1 => Some(&self.window1),
            WindowChoice::Window2 => Some(&self.window2),
            WindowChoice::None => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Odd side of the square median window; 1 disables filtering.
    pub median_window: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { median_window: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub compress: bool,
    pub window: WindowChoice,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            compress: true,
            window: WindowChoice::Window1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub method: ClusterMethod,
    pub k: usize,
    /// Z-score each feature before clustering.
    pub standardize: bool,
    pub params: ClusterParams,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            method: ClusterMethod::Gmm,
            k: 4,
            standardize: false,
            params: ClusterParams::default(),
        }
    }
}

/// Which cluster label counts as a body's foreground.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyChoice {
    /// Best-scoring single label per body.
    BestMatch,
    /// The label whose center has the lowest mean over features.
    Darkest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub roi_pad: usize,
    pub subset_ids: Vec<usize>,
    pub policy: PolicyChoice,
    /// Template raster when no phantom is configured.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub template: Option<PathBuf>,
    /// Treat the template as grayscale and binarize it with Otsu instead
    /// of reading body ids.
    pub binarize_template: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            roi_pad: 5,
            subset_ids: (9..=16).collect(),
            policy: PolicyChoice::BestMatch,
            template: None,
            binarize_template: false,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phantom: Option<PhantomSpec>,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub terrace: AutoConfig,
    #[serde(default)]
    pub pipeline: StageConfig,
    #[serde(default)]
    pub clustering: ClusteringConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(rename = "channel")]
    pub channels: Vec<ChannelConfig>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with(text, &[])
    }

    /// Parses `text` after applying `key=value` overrides.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: toml::Value = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let config: Self = value.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_toml_with(&text, overrides)?;
        // relative input paths are relative to the config file
        if let Some(dir) = path.parent() {
            for c in &mut config.channels {
                if let Some(p) = &mut c.input {
                    if p.is_relative() {
                        *p = dir.join(&*p);
                    }
                }
            }
            if let Some(p) = &mut config.evaluation.template {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn wavelengths(&self) -> Vec<u32> {
        self.channels.iter().map(|c| c.wavelength).collect()
    }

    pub fn channel(&self, wavelength: u32) -> Option<&ChannelConfig> {
        self.channels.iter().find(|c| c.wavelength == wavelength)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(invalid("channel", "at least one channel is required"));
        }
        if self.channels.windows(2).any(|w| w[1].wavelength <= w[0].wavelength) {
            return Err(invalid("channel", "wavelengths must be strictly increasing"));
        }
        for (i, c) in self.channels.iter().enumerate() {
            let at = format!("channel.{i}");
            if c.min_body_area == 0 {
                return Err(invalid(format!("{at}.min_body_area"), "must be at least 1"));
            }
            for (name, w) in [("window1", &c.window1), ("window2", &c.window2)] {
                if w.low >= w.high {
                    return Err(invalid(
                        format!("{at}.{name}.low"),
                        format!("low ({}) must be below {at}.{name}.high ({})", w.low, w.high),
                    ));
                }
                if w.out_max == 0 {
                    return Err(invalid(format!("{at}.{name}.out_max"), "must be positive"));
                }
            }
            if self.phantom.is_none() && c.input.is_none() {
                return Err(invalid(format!("{at}.input"), "required when no phantom is configured"));
            }
        }
        if let Some(p) = &self.phantom {
            if p.wavelengths != self.wavelengths() {
                return Err(invalid(
                    "phantom.wavelengths",
                    "must list exactly the channel wavelengths",
                ));
            }
            p.validate().map_err(|e| invalid("phantom", e.to_string()))?;
        }
        let m = self.preprocess.median_window;
        if m == 0 || m.is_multiple_of(2) {
            return Err(invalid("preprocess.median_window", "must be odd and positive"));
        }
        self.terrace.validate().map_err(|e| invalid("terrace", e.to_string()))?;
        if self.clustering.k == 0 {
            return Err(invalid("clustering.k", "must be at least 1"));
        }
        let cp = &self.clustering.params;
        if cp.max_iter == 0 {
            return Err(invalid("clustering.params.max_iter", "must be at least 1"));
        }
        if !(cp.tol >= 0.0 && cp.tol.is_finite()) {
            return Err(invalid("clustering.params.tol", "must be finite and non-negative"));
        }
        if cp.cov_reg.is_some_and(|r| !(r > 0.0 && r.is_finite())) {
            return Err(invalid("clustering.params.cov_reg", "must be finite and positive"));
        }
        for (name, v) in [("bandwidth", cp.bandwidth), ("merge_radius", cp.merge_radius)] {
            if v.is_some_and(|v| !(v > 0.0 && v.is_finite())) {
                return Err(invalid(format!("clustering.params.{name}"), "must be finite and positive"));
            }
        }
        if cp.max_seeds == 0 || cp.max_reference == 0 {
            return Err(invalid("clustering.params", "max_seeds and max_reference must be at least 1"));
        }
        Ok(())
    }
}

/// Sets `path=value` in a parsed document. The value is read as a TOML
/// literal when possible and as a bare string otherwise; numeric path
/// segments index arrays.
pub fn apply_override(doc: &mut toml::Value, spec: &str) -> Result<()> {
    let err = |m: &str| ConfigError::Override(spec.to_string(), m.to_string());
    let (path, raw) = spec.split_once('=').ok_or_else(|| err("expected key=value"))?;
    let path = path.trim();
    let raw = raw.trim();
    if path.is_empty() {
        return Err(err("empty key"));
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    let mut node = doc;
    for (i, key) in keys.iter().enumerate() {
        let last = i + 1 == keys.len();
        node = match node {
            toml::Value::Table(t) => {
                if last {
                    t.insert(key.to_string(), value);
                    return Ok(());
                }
                t.entry(key.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            }
            toml::Value::Array(a) => {
                let idx: usize = key.parse().map_err(|_| err("array segment must be an index"))?;
                let len = a.len();
                let slot = a
                    .get_mut(idx)
                    .ok_or_else(|| err(&format!("index {idx} out of range (len {len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(err(&format!("{key} is below a scalar"))),
        };
    }
    unreachable!("loop returns on the last key")
}
