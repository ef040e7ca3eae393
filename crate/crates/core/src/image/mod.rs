//! Raster data model shared by every pipeline stage.
//!
//! A [`Raster`] is a single-channel grid of unsigned gray values with a
//! declared ceiling. Raw frames, accumulated sums, compressed levels and
//! label images all use it.

mod io;
mod preprocess;

pub use io::{
    decode_pgm, decode_r32, decode_raster, encode_pgm, encode_r32, export_surface,
    read_raster, surface_text, write_raster, RasterFormat,
};
pub use preprocess::{accumulate_frames, median_filter, Accumulator};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("raster dimensions must be positive, got {width}x{height}")]
    EmptyDimensions { width: usize, height: usize },
    #[error("raster data length {len} does not match {width}x{height}")]
    LengthMismatch {
        width: usize,
        height: usize,
        len: usize,
    },
    #[error("value {value} at ({x}, {y}) exceeds declared maximum {max_value}")]
    ValueAboveMax {
        x: usize,
        y: usize,
        value: u32,
        max_value: u32,
    },
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("declared maximum mismatch among frames: {expected} vs {found}")]
    MaxValueMismatch { expected: u32, found: u32 },
    #[error("frame stack is empty")]
    EmptyStack,
    #[error("accumulated value overflows 32 bits at pixel ({x}, {y})")]
    Overflow { x: usize, y: usize },
    #[error("median window must be odd and positive, got {0}")]
    InvalidWindow(usize),
    #[error("median window {window} larger than image side {side}")]
    WindowTooLarge { window: usize, side: usize },
    #[error("wavelengths must be strictly increasing ({previous} then {next})")]
    WavelengthOrder { previous: u32, next: u32 },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("maximum value {max_value} does not fit a {format} container")]
    FormatRange {
        format: &'static str,
        max_value: u32,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ImageError>;

/// Single-channel gray raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    max_value: u32,
    data: Vec<u32>,
}

impl Raster {
    /// Builds a raster, checking the length and ceiling invariants.
    pub fn new(width: usize, height: usize, max_value: u32, data: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyDimensions { width, height });
        }
        if width.checked_mul(height) != Some(data.len()) {
            return Err(ImageError::LengthMismatch {
                width,
                height,
                len: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|&v| v > max_value) {
            return Err(ImageError::ValueAboveMax {
                x: i % width,
                y: i / width,
                value: data[i],
                max_value,
            });
        }
        Ok(Self {
            width,
            height,
            max_value,
            data,
        })
    }

    /// Builds a raster whose declared maximum is the largest value present.
    pub fn from_data(width: usize, height: usize, data: Vec<u32>) -> Result<Self> {
        let max_value = data.iter().copied().max().unwrap_or(0);
        Self::new(width, height, max_value, data)
    }

    pub fn filled(width: usize, height: usize, value: u32) -> Result<Self> {
        Self::new(width, height, value, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn max_value(&self) -> u32 {
        self.max_value
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.data[y * self.width + x]
    }

    /// Smallest and largest value actually present.
    pub fn value_range(&self) -> (u32, u32) {
        let mut lo = u32::MAX;
        let mut hi = 0;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    pub(crate) fn check_same_dims(&self, other: &Raster) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(ImageError::DimensionMismatch {
                expected: self.dims(),
                found: other.dims(),
            });
        }
        Ok(())
    }
}

/// Frames of one wavelength, all with identical geometry and ceiling.
#[derive(Debug, Clone)]
pub struct FrameStack {
    frames: Vec<Raster>,
}

impl FrameStack {
    pub fn new(frames: Vec<Raster>) -> Result<Self> {
        let first = frames.first().ok_or(ImageError::EmptyStack)?;
        for f in &frames[1..] {
            first.check_same_dims(f)?;
            if f.max_value != first.max_value {
                return Err(ImageError::MaxValueMismatch {
                    expected: first.max_value,
                    found: f.max_value,
                });
            }
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Raster] {
        &self.frames
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }
}

/// One image per wavelength (nm), wavelengths strictly increasing.
#[derive(Debug, Clone)]
pub struct MultiChannelImage {
    channels: Vec<(u32, Raster)>,
}

impl MultiChannelImage {
    pub fn new(channels: Vec<(u32, Raster)>) -> Result<Self> {
        let (_, first) = channels.first().ok_or(ImageError::EmptyStack)?;
        for pair in channels.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(ImageError::WavelengthOrder {
                    previous: pair[0].0,
                    next: pair[1].0,
                });
            }
        }
        for (_, r) in &channels[1..] {
            first.check_same_dims(r)?;
        }
        Ok(Self { channels })
    }

    pub fn channels(&self) -> &[(u32, Raster)] {
        &self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        self.channels[0].1.dims()
    }

    pub fn wavelengths(&self) -> Vec<u32> {
        self.channels.iter().map(|(w, _)| *w).collect()
    }
}
