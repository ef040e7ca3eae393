//! Raster file formats.
//!
//! * Binary portable graymap (`P5`), maxval 1..=65535. Samples are one byte
//!   when maxval < 256 and two bytes big-endian otherwise.
//! * `R32` container for wide-range rasters: the ASCII header
//!   `R32 <width> <height> <max_value>\n` followed by row-major
//!   little-endian `u32` samples.
//! * Surface text: one `x y gray` line per pixel, row-major.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{ImageError, Raster, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterFormat {
    Pgm,
    R32,
}

impl RasterFormat {
    /// Format implied by a file extension, if any.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "pgm" | "pnm" => Some(Self::Pgm),
            "r32" => Some(Self::R32),
            _ => None,
        }
    }

    /// The narrowest container that holds the raster's declared range.
    pub fn for_raster(raster: &Raster) -> Self {
        match raster.max_value() {
            1..=65535 => Self::Pgm,
            _ => Self::R32,
        }
    }

    pub fn encode(self, raster: &Raster) -> Result<Vec<u8>> {
        match self {
            Self::Pgm => encode_pgm(raster),
            Self::R32 => Ok(encode_r32(raster)),
        }
    }
}

pub fn encode_pgm(raster: &Raster) -> Result<Vec<u8>> {
    let max_value = raster.max_value();
    if !(1..=65535).contains(&max_value) {
        return Err(ImageError::FormatRange {
            format: "16-bit graymap",
            max_value,
        });
    }
    let header = format!("P5\n{} {}\n{}\n", raster.width(), raster.height(), max_value);
    let wide = max_value > 255;
    let mut out = Vec::with_capacity(header.len() + raster.len() * if wide { 2 } else { 1 });
    out.extend_from_slice(header.as_bytes());
    if wide {
        for &v in raster.data() {
            out.extend_from_slice(&(v as u16).to_be_bytes());
        }
    } else {
        out.extend(raster.data().iter().map(|&v| v as u8));
    }
    Ok(out)
}

pub fn encode_r32(raster: &Raster) -> Vec<u8> {
    let header = format!(
        "R32 {} {} {}\n",
        raster.width(),
        raster.height(),
        raster.max_value()
    );
    let mut out = Vec::with_capacity(header.len() + raster.len() * 4);
    out.extend_from_slice(header.as_bytes());
    for &v in raster.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u64> {
        let start = self.pos;
        let mut value: u64 = 0;
        while let Some(&b) = self.bytes.get(self.pos) {
            if !b.is_ascii_digit() {
                break;
            }
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add((b - b'0') as u64))
                .ok_or_else(|| ImageError::MalformedHeader(format!("{what} too large")))?;
            self.pos += 1;
        }
        if self.pos == start {
            return Err(ImageError::MalformedHeader(format!("missing {what}")));
        }
        Ok(value)
    }
}

fn dimension(value: u64, what: &str) -> Result<usize> {
    if value == 0 {
        return Err(ImageError::MalformedHeader(format!("{what} must be positive")));
    }
    usize::try_from(value).map_err(|_| ImageError::MalformedHeader(format!("{what} too large")))
}

fn payload(bytes: &[u8], start: usize, pixels: usize, sample: usize) -> Result<&[u8]> {
    let expected = pixels
        .checked_mul(sample)
        .ok_or_else(|| ImageError::MalformedHeader("dimensions too large".into()))?;
    let found = bytes.len() - start;
    if found < expected {
        return Err(ImageError::Truncated { expected, found });
    }
    Ok(&bytes[start..start + expected])
}

fn pixel_count(width: usize, height: usize) -> Result<usize> {
    width
        .checked_mul(height)
        .ok_or_else(|| ImageError::MalformedHeader("dimensions too large".into()))
}

/// Decodes a binary `P5` graymap. Trailing bytes after the payload are
/// ignored, matching multi-image netpbm streams.
pub fn decode_pgm(bytes: &[u8]) -> Result<Raster> {
    if !bytes.starts_with(b"P5") {
        return Err(ImageError::MalformedHeader("expected P5 magic".into()));
    }
    let mut cur = Cursor { bytes, pos: 2 };
    cur.skip_space_and_comments();
    let width = dimension(cur.number("width")?, "width")?;
    cur.skip_space_and_comments();
    let height = dimension(cur.number("height")?, "height")?;
    cur.skip_space_and_comments();
    let maxval = cur.number("maxval")?;
    if !(1..=65535).contains(&maxval) {
        return Err(ImageError::MalformedHeader(format!(
            "maxval {maxval} outside 1..=65535"
        )));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => {
            return Err(ImageError::MalformedHeader(
                "missing whitespace after maxval".into(),
            ))
        }
    }
    let pixels = pixel_count(width, height)?;
    let sample = if maxval > 255 { 2 } else { 1 };
    let raw = payload(bytes, cur.pos, pixels, sample)?;
    let data: Vec<u32> = if sample == 2 {
        raw.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as u32)
            .collect()
    } else {
        raw.iter().map(|&b| b as u32).collect()
    };
    Raster::new(width, height, maxval as u32, data)
}

/// Decodes an `R32` container. The header must be exactly four
/// single-space separated fields terminated by `\n`.
pub fn decode_r32(bytes: &[u8]) -> Result<Raster> {
    let nl = bytes
        .iter()
        .take(64)
        .position(|&b| b == b'\n')
        .ok_or_else(|| ImageError::MalformedHeader("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| ImageError::MalformedHeader("header is not ASCII".into()))?;
    let fields: Vec<&str> = header.split(' ').collect();
    if fields.len() != 4 || fields[0] != "R32" {
        return Err(ImageError::MalformedHeader(format!(
            "expected `R32 <w> <h> <max>`, got {header:?}"
        )));
    }
    let parse = |s: &str, what: &str| -> Result<u64> {
        if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(ImageError::MalformedHeader(format!("invalid {what} {s:?}")));
        }
        s.parse()
            .map_err(|_| ImageError::MalformedHeader(format!("{what} too large")))
    };
    let width = dimension(parse(fields[1], "width")?, "width")?;
    let height = dimension(parse(fields[2], "height")?, "height")?;
    let max_value = u32::try_from(parse(fields[3], "max_value")?)
        .map_err(|_| ImageError::MalformedHeader("max_value exceeds 32 bits".into()))?;
    let pixels = pixel_count(width, height)?;
    let raw = payload(bytes, nl + 1, pixels, 4)?;
    let data = raw
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Raster::new(width, height, max_value, data)
}

/// Decodes either format, chosen by magic bytes.
pub fn decode_raster(bytes: &[u8]) -> Result<Raster> {
    if bytes.starts_with(b"P5") {
        decode_pgm(bytes)
    } else if bytes.starts_with(b"R32 ") {
        decode_r32(bytes)
    } else {
        Err(ImageError::MalformedHeader("unrecognized raster magic".into()))
    }
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<Raster> {
    decode_raster(&fs::read(path)?)
}

/// Writes in the format named by the extension (`.pgm`, `.r32`), falling
/// back to the narrowest format that fits. Asking for a graymap when the
/// raster exceeds 16 bits is an error; nothing is rescaled.
pub fn write_raster(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = RasterFormat::from_path(path).unwrap_or_else(|| RasterFormat::for_raster(raster));
    fs::write(path, format.encode(raster)?)?;
    Ok(())
}

pub fn surface_text(raster: &Raster) -> String {
    let mut out = String::with_capacity(raster.len() * 12);
    for y in 0..raster.height() {
        for x in 0..raster.width() {
            let _ = writeln!(out, "{x} {y} {}", raster.get(x, y));
        }
    }
    out
}

/// Writes `x y gray` triples for external surface plotting.
pub fn export_surface(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, surface_text(raster))?;
    Ok(())
}
