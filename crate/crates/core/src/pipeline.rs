//! End-to-end orchestration and the individual stages it is built from.
//!
//! Every stage function here is also what the command-line subcommands
//! call, so running the stages one by one from persisted intermediates
//! produces the same bytes as a single [`run_pipeline`] call.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::clustering::{cluster, labels_to_image, Clustering, FeatureMatrix, LabelImage};
use crate::config::{ClusteringConfig, PipelineConfig, PolicyChoice, WindowChoice};
use crate::evaluation::{
    binarize, dice_csv, evaluate, extract_bodies, BinarizeMethod, BodyTemplate, DiceReport, ForegroundPolicy,
};
use crate::image::{export_surface, median_filter, read_raster, surface_text, MultiChannelImage, Raster, RasterFormat};
use crate::phantom::{generate, Phantom};
use crate::seed::derive_seed;
use crate::terrace::{auto_compress, AutoCompressed, AutoConfig, ThresholdSelection, THRESHOLD_CSV_HEADER};
use crate::window::{window_transform, WindowSpec};
use crate::{Error, StageError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Config,
    Phantom,
    Accumulate,
    Filter,
    Compress,
    Window,
    Cluster,
    Evaluate,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Config => "config",
            Self::Phantom => "phantom",
            Self::Accumulate => "accumulate",
            Self::Filter => "filter",
            Self::Compress => "compress",
            Self::Window => "window",
            Self::Cluster => "cluster",
            Self::Evaluate => "evaluate",
            Self::Report => "report",
        };
        f.write_str(s)
    }
}

pub type Result<T> = std::result::Result<T, Error>;

fn at<E: Into<StageError>>(stage: Stage, wavelength: Option<u32>) -> impl FnOnce(E) -> Error {
    move |e| Error::stage(stage, wavelength, e)
}

/// Sub-stream name for clustering seeds.
pub const CLUSTER_STREAM: &str = "clustering";

/// Median-filters an accumulated raster; a window of 1 copies it.
pub fn filter_channel(image: &Raster, median_window: usize) -> std::result::Result<Raster, StageError> {
    if median_window == 1 {
        return Ok(image.clone());
    }
    Ok(median_filter(image, median_window)?)
}

pub fn compress_channel(
    image: &Raster,
    min_body_area: u64,
    config: &AutoConfig,
) -> std::result::Result<AutoCompressed, StageError> {
    Ok(auto_compress(image, min_body_area, config)?)
}

pub fn window_channel(image: &Raster, spec: &WindowSpec) -> std::result::Result<Raster, StageError> {
    Ok(window_transform(image, spec)?)
}

/// Clusters the stacked channels. `master_seed` is the pipeline seed; the
/// clustering stream is derived from it.
pub fn cluster_channels(
    channels: Vec<(u32, Raster)>,
    config: &ClusteringConfig,
    master_seed: u64,
) -> std::result::Result<(LabelImage, Clustering), StageError> {
    let image = MultiChannelImage::new(channels)?;
    let (w, h) = image.dims();
    let mut features = crate::clustering::stack_channels(&image)?;
    if config.standardize {
        features = features.standardized();
    }
    cluster_features(&features, w, h, config, master_seed)
}

pub fn cluster_features(
    features: &FeatureMatrix,
    width: usize,
    height: usize,
    config: &ClusteringConfig,
    master_seed: u64,
) -> std::result::Result<(LabelImage, Clustering), StageError> {
    let seed = derive_seed(master_seed, CLUSTER_STREAM);
    let result = cluster(features, config.method, config.k, seed, &config.params)?;
    let labels = labels_to_image(&result.labels, width, height, result.k.max(1))?;
    Ok((labels, result))
}

/// Reads a template raster either as body ids or as a grayscale image to
/// binarize (dark = body).
pub fn load_template(path: &Path, binarize_gray: bool) -> std::result::Result<BodyTemplate, StageError> {
    let raster = read_raster(path)?;
    if binarize_gray {
        Ok(extract_bodies(&binarize(&raster, BinarizeMethod::Otsu)?)?)
    } else {
        Ok(BodyTemplate::from_id_raster(&raster)?)
    }
}

/// Label whose center has the lowest mean over features.
pub fn darkest_label(centers: &[Vec<f64>]) -> usize {
    let mean = |c: &Vec<f64>| c.iter().sum::<f64>() / c.len().max(1) as f64;
    let mut best = 0;
    for (j, c) in centers.iter().enumerate() {
        if mean(c) < mean(&centers[best]) {
            best = j;
        }
    }
    best
}

/// Window table: one column per wavelength.
pub fn windows_csv(config: &PipelineConfig, post_ranges: &[(u32, u32)]) -> String {
    let mut rows = [
        String::from("wavelength"),
        String::from("post_compression_range"),
        String::from("window1"),
        String::from("window2"),
    ];
    for (c, r) in config.channels.iter().zip(post_ranges) {
        rows[0].push_str(&format!(",{}nm", c.wavelength));
        rows[1].push_str(&format!(",{}-{}", r.0, r.1));
        rows[2].push_str(&format!(",{}-{}", c.window1.low, c.window1.high));
        rows[3].push_str(&format!(",{}-{}", c.window2.low, c.window2.high));
    }
    rows.iter().map(|r| format!("{r}\n")).collect()
}

pub fn thresholds_csv(rows: &[(u32, ThresholdSelection)]) -> String {
    let mut out = format!("{THRESHOLD_CSV_HEADER}\n");
    for (w, s) in rows {
        out.push_str(&s.csv_row(*w));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct ArtifactRecord {
    pub file: String,
    pub stage: Stage,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wavelength: Option<u32>,
    pub bytes: usize,
    /// FNV-1a 64 of the contents, hex.
    pub fnv64: String,
}

/// Record of what a run wrote, rewritten after every artifact so an
/// interrupted run still describes its partial outputs.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub status: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<Stage>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_wavelength: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub completed_stages: Vec<Stage>,
    pub artifacts: Vec<ArtifactRecord>,
    #[serde(skip)]
    dir: PathBuf,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn fnv64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xCBF2_9CE4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

impl Manifest {
    fn new(dir: &Path, seed: u64) -> Self {
        Self {
            status: "running".into(),
            seed,
            failed_stage: None,
            failed_wavelength: None,
            error: None,
            completed_stages: Vec::new(),
            artifacts: Vec::new(),
            dir: dir.to_path_buf(),
        }
    }

    fn flush(&self) -> Result<()> {
        let path = self.dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|source| Error::stage(Stage::Report, None, StageError::Io { path, source }))
    }

    fn write(&mut self, file: &str, stage: Stage, wavelength: Option<u32>, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(file);
        fs::write(&path, bytes).map_err(|source| Error::stage(stage, wavelength, StageError::Io { path, source }))?;
        self.artifacts.push(ArtifactRecord {
            file: file.to_string(),
            stage,
            wavelength,
            bytes: bytes.len(),
            fnv64: format!("{:016x}", fnv64(bytes)),
        });
        self.flush()
    }

    fn write_raster(&mut self, file: &str, stage: Stage, wavelength: Option<u32>, raster: &Raster) -> Result<()> {
        let format = RasterFormat::from_path(Path::new(file)).unwrap_or_else(|| RasterFormat::for_raster(raster));
        let bytes = format.encode(raster).map_err(at(stage, wavelength))?;
        self.write(file, stage, wavelength, &bytes)
    }

    fn complete(&mut self, stage: Stage) -> Result<()> {
        self.completed_stages.push(stage);
        self.flush()
    }

    fn fail(&mut self, err: &Error) {
        self.status = "failed".into();
        if let Error::Stage { stage, wavelength, .. } = err {
            self.failed_stage = Some(*stage);
            self.failed_wavelength = *wavelength;
        }
        self.error = Some(err.to_string());
        let _ = self.flush();
    }
}

pub fn accumulated_file(w: u32) -> String {
    format!("accumulated_{w}.r32")
}

pub fn filtered_file(w: u32) -> String {
    format!("filtered_{w}.r32")
}

pub fn compressed_file(w: u32) -> String {
    format!("compressed_{w}.pgm")
}

pub fn window_file(w: u32) -> String {
    format!("window_{w}.pgm")
}

pub fn surface_file(w: u32) -> String {
    format!("surface_{w}.txt")
}

pub const TRUTH_FILE: &str = "truth.pgm";
pub const LABELS_FILE: &str = "labels.pgm";
pub const MODEL_FILE: &str = "model.csv";
pub const DICE_FILE: &str = "dice.csv";
pub const THRESHOLDS_FILE: &str = "thresholds.csv";
pub const WINDOWS_FILE: &str = "windows.csv";

#[derive(Debug, Clone)]
pub struct PipelineSummary {
    pub output_dir: PathBuf,
    pub selections: Vec<(u32, ThresholdSelection)>,
    pub cluster_count: usize,
    pub report: Option<DiceReport>,
    pub manifest: Manifest,
}

/// Runs each channel through `f` in parallel and returns the results in
/// channel order; the first failing channel (by order) wins.
fn per_channel<T: Send, F>(stage: Stage, wavelengths: &[u32], f: F) -> Result<Vec<T>>
where
    F: Fn(usize) -> std::result::Result<T, StageError> + Sync,
{
    let results: Vec<_> = (0..wavelengths.len()).into_par_iter().map(&f).collect();
    results
        .into_iter()
        .zip(wavelengths)
        .map(|(r, &w)| r.map_err(at(stage, Some(w))))
        .collect()
}

/// Runs the whole pipeline described by `config`, writing every artifact
/// into `config.output_dir`.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineSummary> {
    config.validate()?;
    let dir = config.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|source| {
        Error::stage(Stage::Report, None, StageError::Io { path: dir.clone(), source })
    })?;
    let mut manifest = Manifest::new(&dir, config.seed);
    manifest.flush()?;
    match run_stages(config, &mut manifest) {
        Ok(mut summary) => {
            manifest.status = "complete".into();
            manifest.flush()?;
            summary.manifest = manifest;
            Ok(summary)
        }
        Err(e) => {
            manifest.fail(&e);
            Err(e)
        }
    }
}

fn run_stages(config: &PipelineConfig, manifest: &mut Manifest) -> Result<PipelineSummary> {
    let wavelengths = config.wavelengths();

    let (phantom, template): (Option<Phantom>, Option<BodyTemplate>) = match &config.phantom {
        Some(spec) => {
            let p = generate(spec, config.seed).map_err(at(Stage::Phantom, None))?;
            let truth = p.truth().clone();
            manifest.write_raster(TRUTH_FILE, Stage::Phantom, None, &truth.to_id_raster())?;
            manifest.complete(Stage::Phantom)?;
            (Some(p), Some(truth))
        }
        None => {
            let t = match &config.evaluation.template {
                Some(path) => Some(
                    load_template(path, config.evaluation.binarize_template).map_err(at(Stage::Evaluate, None))?,
                ),
                None => None,
            };
            (None, t)
        }
    };

    let accumulated = per_channel(Stage::Accumulate, &wavelengths, |i| match &phantom {
        Some(p) => Ok(p.accumulate(i)?),
        None => {
            let path = config.channels[i].input.as_ref().expect("validated");
            Ok(read_raster(path)?)
        }
    })?;
    for (&w, r) in wavelengths.iter().zip(&accumulated) {
        manifest.write_raster(&accumulated_file(w), Stage::Accumulate, Some(w), r)?;
    }
    manifest.complete(Stage::Accumulate)?;

    let median = config.preprocess.median_window;
    let filtered = per_channel(Stage::Filter, &wavelengths, |i| filter_channel(&accumulated[i], median))?;
    drop(accumulated);
    for (&w, r) in wavelengths.iter().zip(&filtered) {
        manifest.write_raster(&filtered_file(w), Stage::Filter, Some(w), r)?;
        manifest.write(&surface_file(w), Stage::Filter, Some(w), surface_text(r).as_bytes())?;
    }
    manifest.complete(Stage::Filter)?;

    let mut selections = Vec::new();
    let mut current = filtered;
    if config.pipeline.compress {
        let compressed = per_channel(Stage::Compress, &wavelengths, |i| {
            compress_channel(&current[i], config.channels[i].min_body_area, &config.terrace)
        })?;
        current = Vec::with_capacity(compressed.len());
        for (&w, c) in wavelengths.iter().zip(compressed) {
            manifest.write_raster(&compressed_file(w), Stage::Compress, Some(w), &c.raster)?;
            selections.push((w, c.selection));
            current.push(c.raster);
        }
        manifest.write(THRESHOLDS_FILE, Stage::Compress, None, thresholds_csv(&selections).as_bytes())?;
        manifest.complete(Stage::Compress)?;
    }

    let post_ranges: Vec<(u32, u32)> = current.iter().map(|r| r.value_range()).collect();
    manifest.write(WINDOWS_FILE, Stage::Window, None, windows_csv(config, &post_ranges).as_bytes())?;
    if config.pipeline.window != WindowChoice::None {
        let choice = config.pipeline.window;
        current = per_channel(Stage::Window, &wavelengths, |i| {
            window_channel(&current[i], config.channels[i].window(choice).expect("window chosen"))
        })?;
        for (&w, r) in wavelengths.iter().zip(&current) {
            manifest.write_raster(&window_file(w), Stage::Window, Some(w), r)?;
        }
        manifest.complete(Stage::Window)?;
    }

    let channels: Vec<(u32, Raster)> = wavelengths.iter().copied().zip(current).collect();
    let (labels, clustering) =
        cluster_channels(channels, &config.clustering, config.seed).map_err(at(Stage::Cluster, None))?;
    manifest.write_raster(LABELS_FILE, Stage::Cluster, None, labels.raster())?;
    manifest.write(MODEL_FILE, Stage::Cluster, None, clustering.model_csv.as_bytes())?;
    manifest.complete(Stage::Cluster)?;

    let report = match &template {
        Some(t) => {
            let policy = match config.evaluation.policy {
                PolicyChoice::BestMatch => ForegroundPolicy::BestMatch,
                PolicyChoice::Darkest => ForegroundPolicy::Fixed(darkest_label(&clustering.centers)),
            };
            let report = evaluate(
                &labels,
                t,
                config.evaluation.roi_pad,
                policy,
                config.clustering.method.name(),
                &config.evaluation.subset_ids,
            )
            .map_err(at(Stage::Evaluate, None))?;
            let csv = dice_csv(std::slice::from_ref(&report)).map_err(at(Stage::Evaluate, None))?;
            manifest.write(DICE_FILE, Stage::Evaluate, None, csv.as_bytes())?;
            manifest.complete(Stage::Evaluate)?;
            Some(report)
        }
        None => None,
    };

    Ok(PipelineSummary {
        output_dir: config.output_dir.clone(),
        selections,
        cluster_count: clustering.k,
        report,
        manifest: manifest.clone(),
    })
}

/// Writes the surface grid of `raster` to `path`.
pub fn write_surface(raster: &Raster, path: &Path) -> std::result::Result<(), StageError> {
    Ok(export_surface(raster, path)?)
}
