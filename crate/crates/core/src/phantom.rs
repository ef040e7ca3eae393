//! Synthetic multispectral transmission phantom.
//!
//! A grid of square absorbers sits in a uniformly scattering medium lit by
//! a smooth, radially falling illumination field. Per wavelength the ideal
//! image is `illumination * exp(-absorbance * thickness)` inside a body and
//! the bare illumination elsewhere; the transmission of each depth class is
//! blurred by its own Gaussian (deep bodies blur more), and every frame adds
//! seeded noise on top. All values are synthetic stand-ins.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluation::BodyTemplate;
use crate::image::{Accumulator, FrameStack, ImageError, Raster};
use crate::seed::rng_for;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error("body slots {0} and {1} overlap")]
    Overlap(usize, usize),
    #[error("ideal intensity {value:.1} at wavelength {wavelength} exceeds frame maximum {frame_max}")]
    IntensityRange {
        wavelength: u32,
        value: f64,
        frame_max: u32,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Template(#[from] crate::evaluation::EvalError),
}

pub type Result<T> = std::result::Result<T, PhantomError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Depth {
    Shallow,
    Deep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Thickness {
    Thick,
    Thin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyType {
    pub name: String,
    /// Absorbance per unit thickness, one entry per wavelength.
    pub absorbance: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodySlot {
    /// Index into `body_types`.
    pub body_type: usize,
    pub depth: Depth,
    pub thickness: Thickness,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase", deny_unknown_fields)]
pub enum NoiseModel {
    /// Additive zero-mean Gaussian.
    Gaussian { sigma: f64 },
    /// Shot noise: each frame pixel is Poisson with the ideal mean.
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    pub rows: usize,
    pub cols: usize,
    /// Side of each square body in pixels.
    pub body_size: usize,
    pub wavelengths: Vec<u32>,
    pub body_types: Vec<BodyType>,
    /// Row-major, `rows * cols` entries. Empty means the standard layout:
    /// column = type, rows 1-2 shallow, rows 3-4 deep, odd rows thick.
    pub slots: Vec<BodySlot>,
    pub thick: f64,
    pub thin: f64,
    /// Mean counts per frame at the image center, per wavelength.
    pub illumination: Vec<f64>,
    /// Fractional intensity loss at the image corners (quadratic in radius).
    pub falloff: f64,
    pub blur_shallow: f64,
    pub blur_deep: f64,
    pub noise: NoiseModel,
    pub frame_max: u32,
    pub frames: usize,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        let types = [
            ("potato", [0.90, 0.80, 0.70, 0.55, 0.45, 0.40]),
            ("carrot", [1.50, 1.40, 1.00, 0.45, 0.35, 0.30]),
            ("lean_meat", [1.70, 1.30, 1.20, 0.85, 0.60, 0.45]),
            ("fatty_meat", [0.60, 0.55, 0.50, 0.45, 0.40, 0.35]),
        ];
        Self {
            width: 480,
            height: 444,
            rows: 4,
            cols: 4,
            body_size: 40,
            wavelengths: vec![410, 450, 500, 590, 660, 734],
            body_types: types
                .iter()
                .map(|(n, a)| BodyType {
                    name: n.to_string(),
                    absorbance: a.to_vec(),
                })
                .collect(),
            slots: Vec::new(),
            thick: 1.0,
            thin: 0.5,
            illumination: vec![41.0, 30.0, 44.0, 32.0, 25.0, 28.0],
            falloff: 0.6,
            blur_shallow: 1.0,
            blur_deep: 6.0,
            noise: NoiseModel::Gaussian { sigma: 2.0 },
            frame_max: 4095,
            frames: 700,
        }
    }
}

impl PhantomSpec {
    /// Slots in row-major order, filling in the standard layout if unset.
    pub fn resolved_slots(&self) -> Vec<BodySlot> {
        if !self.slots.is_empty() {
            return self.slots.clone();
        }
        let n_types = self.body_types.len().max(1);
        (0..self.rows * self.cols)
            .map(|i| {
                let (r, c) = (i / self.cols, i % self.cols);
                BodySlot {
                    body_type: c % n_types,
                    depth: if r < self.rows.div_ceil(2) {
                        Depth::Shallow
                    } else {
                        Depth::Deep
                    },
                    thickness: if r % 2 == 0 {
                        Thickness::Thick
                    } else {
                        Thickness::Thin
                    },
                }
            })
            .collect()
    }

    /// Top-left corner of each slot's square.
    pub fn slot_origins(&self) -> Vec<(usize, usize)> {
        (0..self.rows * self.cols)
            .map(|i| {
                let (r, c) = (i / self.cols, i % self.cols);
                let cx = self.width * (2 * c + 1) / (2 * self.cols);
                let cy = self.height * (2 * r + 1) / (2 * self.rows);
                (
                    cx.saturating_sub(self.body_size / 2),
                    cy.saturating_sub(self.body_size / 2),
                )
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PhantomError::InvalidSpec(m));
        if self.width == 0 || self.height == 0 || self.rows == 0 || self.cols == 0 || self.body_size == 0 {
            return bad("dimensions, grid and body_size must be positive".into());
        }
        if self.frames == 0 {
            return bad("frames must be at least 1".into());
        }
        if self.wavelengths.is_empty() || self.wavelengths.windows(2).any(|w| w[1] <= w[0]) {
            return bad("wavelengths must be non-empty and strictly increasing".into());
        }
        let nw = self.wavelengths.len();
        if self.illumination.len() != nw || self.illumination.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad(format!("illumination needs {nw} non-negative entries"));
        }
        for t in &self.body_types {
            if t.absorbance.len() != nw || t.absorbance.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return bad(format!("body type {} needs {nw} non-negative absorbances", t.name));
            }
        }
        let slots = self.resolved_slots();
        if slots.len() != self.rows * self.cols {
            return bad(format!("expected {} slots, got {}", self.rows * self.cols, slots.len()));
        }
        if slots.iter().any(|s| s.body_type >= self.body_types.len()) {
            return bad("slot refers to an unknown body type".into());
        }
        let lengths = [self.thick, self.thin, self.blur_shallow, self.blur_deep];
        if !lengths.iter().all(|v| *v >= 0.0 && v.is_finite()) {
            return bad("thickness and blur values must be finite and non-negative".into());
        }
        if !(0.0..1.0).contains(&self.falloff) {
            return bad("falloff must lie in [0, 1)".into());
        }
        if let NoiseModel::Gaussian { sigma } = self.noise {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return bad("noise sigma must be finite and non-negative".into());
            }
        }
        let s = self.body_size;
        let origins = self.slot_origins();
        for (i, &(x, y)) in origins.iter().enumerate() {
            if x + s > self.width || y + s > self.height {
                return bad(format!("slot {i} does not fit inside the image"));
            }
            for (j, &(x2, y2)) in origins.iter().enumerate().skip(i + 1) {
                if x < x2 + s && x2 < x + s && y < y2 + s && y2 < y + s {
                    return Err(PhantomError::Overlap(i, j));
                }
            }
        }
        Ok(())
    }
}

/// Separable Gaussian blur with edge replication; radius `ceil(3 sigma)`.
fn gaussian_blur(data: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= norm);
    let mut tmp = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let xx = (x as isize + k as isize - r).clamp(0, width as isize - 1) as usize;
                acc += w * data[y * width + xx];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let yy = (y as isize + k as isize - r).clamp(0, height as isize - 1) as usize;
                acc += w * tmp[yy * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Generated phantom: noiseless per-wavelength images plus ground truth.
#[derive(Debug, Clone)]
pub struct Phantom {
    spec: PhantomSpec,
    seed: u64,
    ideal: Vec<Vec<f64>>,
    truth: BodyTemplate,
}

/// Builds the ideal images and truth for `spec`; frames are drawn lazily
/// from per-wavelength sub-streams of `seed`.
pub fn generate(spec: &PhantomSpec, seed: u64) -> Result<Phantom> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let slots = spec.resolved_slots();
    let origins = spec.slot_origins();
    let s = spec.body_size;

    let mut ids = vec![0u32; w * h];
    for (i, &(x0, y0)) in origins.iter().enumerate() {
        for y in y0..y0 + s {
            ids[y * w + x0..y * w + x0 + s].fill(i as u32 + 1);
        }
    }
    let truth = BodyTemplate::from_id_raster(&Raster::from_data(w, h, ids.clone())?)?;

    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let r2max = cx * cx + cy * cy;
    let field: Vec<f64> = (0..w * h)
        .map(|i| {
            let (dx, dy) = ((i % w) as f64 - cx, (i / w) as f64 - cy);
            1.0 - spec.falloff * (dx * dx + dy * dy) / r2max.max(1.0)
        })
        .collect();

    let mut ideal = Vec::with_capacity(spec.wavelengths.len());
    for (wi, &wavelength) in spec.wavelengths.iter().enumerate() {
        let mut image: Vec<f64> = field.iter().map(|f| f * spec.illumination[wi]).collect();
        for (depth, sigma) in [(Depth::Shallow, spec.blur_shallow), (Depth::Deep, spec.blur_deep)] {
            let mut transmission = vec![1.0; w * h];
            for (i, &id) in ids.iter().enumerate() {
                if id == 0 {
                    continue;
                }
                let slot = slots[id as usize - 1];
                if slot.depth != depth {
                    continue;
                }
                let t = match slot.thickness {
                    Thickness::Thick => spec.thick,
                    Thickness::Thin => spec.thin,
                };
                transmission[i] = (-spec.body_types[slot.body_type].absorbance[wi] * t).exp();
            }
            let blurred = gaussian_blur(&transmission, w, h, sigma);
            image.iter_mut().zip(&blurred).for_each(|(v, t)| *v *= t);
        }
        if let Some(&peak) = image.iter().max_by(|a, b| a.total_cmp(b)) {
            if peak > spec.frame_max as f64 {
                return Err(PhantomError::IntensityRange {
                    wavelength,
                    value: peak,
                    frame_max: spec.frame_max,
                });
            }
        }
        ideal.push(image);
    }
    Ok(Phantom {
        spec: spec.clone(),
        seed,
        ideal,
        truth,
    })
}

impl Phantom {
    pub fn spec(&self) -> &PhantomSpec {
        &self.spec
    }

    pub fn wavelengths(&self) -> &[u32] {
        &self.spec.wavelengths
    }

    pub fn truth(&self) -> &BodyTemplate {
        &self.truth
    }

    /// Noiseless image of channel `index`.
    pub fn ideal(&self, index: usize) -> &[f64] {
        &self.ideal[index]
    }

    /// Lazily generated frames of channel `index`, in order.
    pub fn frames(&self, index: usize) -> Frames<'_> {
        let name = format!("phantom/{}", self.spec.wavelengths[index]);
        Frames {
            phantom: self,
            index,
            remaining: self.spec.frames,
            rng: rng_for(self.seed, &name),
        }
    }

    pub fn frame_stack(&self, index: usize) -> Result<FrameStack> {
        Ok(FrameStack::new(self.frames(index).collect())?)
    }

    /// Sum of all frames of channel `index`, without holding them at once.
    pub fn accumulate(&self, index: usize) -> Result<Raster> {
        let mut frames = self.frames(index);
        let first = frames.next().expect("frames >= 1");
        let mut acc = Accumulator::new(&first);
        for f in frames {
            acc.add(&f)?;
        }
        Ok(acc.finish())
    }
}

pub struct Frames<'a> {
    phantom: &'a Phantom,
    index: usize,
    remaining: usize,
    rng: ChaCha8Rng,
}

impl Iterator for Frames<'_> {
    type Item = Raster;

    fn next(&mut self) -> Option<Raster> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let spec = &self.phantom.spec;
        let max = spec.frame_max as f64;
        let ideal = &self.phantom.ideal[self.index];
        let data: Vec<u32> = match spec.noise {
            NoiseModel::Gaussian { sigma } if sigma > 0.0 => {
                let normal = Normal::new(0.0, sigma).expect("validated sigma");
                ideal
                    .iter()
                    .map(|&v| (v + normal.sample(&mut self.rng)).round().clamp(0.0, max) as u32)
                    .collect()
            }
            NoiseModel::Gaussian { .. } => ideal.iter().map(|&v| v.round().clamp(0.0, max) as u32).collect(),
            NoiseModel::Poisson => ideal
                .iter()
                .map(|&v| {
                    if v > 0.0 {
                        let p = Poisson::new(v).expect("positive mean");
                        p.sample(&mut self.rng).clamp(0.0, max) as u32
                    } else {
                        0
                    }
                })
                .collect(),
        };
        Some(Raster::new(spec.width, spec.height, spec.frame_max, data).expect("clamped to frame_max"))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}
