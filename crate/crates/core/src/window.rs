//! Piecewise-linear gray window.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Raster;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WindowError {
    #[error("window.low ({low}) must be below window.high ({high})")]
    EmptyWindow { low: u32, high: u32 },
    #[error("window.out_max must be positive")]
    ZeroOutput,
}

fn default_out_max() -> u32 {
    255
}

/// Keeps grays in `(low, high)` and flattens the rest: `<= low` to 0,
/// `>= high` to `out_max`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub low: u32,
    pub high: u32,
    #[serde(default = "default_out_max")]
    pub out_max: u32,
}

impl WindowSpec {
    pub fn new(low: u32, high: u32, out_max: u32) -> Result<Self, WindowError> {
        let spec = Self { low, high, out_max };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), WindowError> {
        if self.low >= self.high {
            return Err(WindowError::EmptyWindow {
                low: self.low,
                high: self.high,
            });
        }
        if self.out_max == 0 {
            return Err(WindowError::ZeroOutput);
        }
        Ok(())
    }

    pub fn apply(&self, g: u32) -> u32 {
        if g <= self.low {
            0
        } else if g >= self.high {
            self.out_max
        } else {
            // round half away from zero of out_max * (g - low) / (high - low)
            let num = self.out_max as u64 * (g - self.low) as u64;
            let den = (self.high - self.low) as u64;
            ((2 * num + den) / (2 * den)) as u32
        }
    }
}

pub fn window_transform(image: &Raster, spec: &WindowSpec) -> Result<Raster, WindowError> {
    spec.validate()?;
    let data = image.data().iter().map(|&g| spec.apply(g)).collect();
    Ok(Raster::new(image.width(), image.height(), spec.out_max, data).expect("bounded by out_max"))
}
