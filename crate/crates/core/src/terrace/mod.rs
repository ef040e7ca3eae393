//! Histogram-driven threshold selection and terrace compression.
//!
//! The selection runs in fixed steps over a wide-range raster:
//!
//! 1. split the gray range into uniform segments and count pixels,
//! 2. merge segments holding fewer pixels than 1% of the maximum gray,
//! 3. locate the demarcation segment (the background peak),
//! 4. take the sparsest bright-enough segment below it and derive the
//!    gradient threshold from the span up to the demarcation,
//! 5. grow the area threshold until the compressed image has at most
//!    `level_cap` levels.

mod compress;
mod histogram;

pub use compress::{
    auto_compress, gray_counts, grow_area, terrace_compress, terrace_count, AutoCompressed,
    AutoConfig, Terrace, TerraceMap, ThresholdSelection, THRESHOLD_CSV_HEADER,
};
pub use histogram::{
    build_segments, find_demarcation, merge_floor, merge_small_segments,
    select_gradient_threshold, Demarcation, DemarcationMode, GradientSelection, GraySegment,
    SegmentedHistogram,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TerraceError {
    #[error("degenerate gray range: every pixel equals {0}")]
    DegenerateRange(u64),
    #[error("need at least 2 segments, got {0}")]
    TooFewSegments(usize),
    #[error("gray range {range} is narrower than {n_segments} segments")]
    RangeTooNarrow { range: u64, n_segments: usize },
    #[error("histogram has no segments")]
    EmptyHistogram,
    #[error("segments are not contiguous over the source range")]
    InvalidHistogram,
    #[error("demarcation segment {0} leaves no room for a gradient range (need >= 4)")]
    DemarcationTooLow(usize),
    #[error("no segment below the demarcation starts above gray {gray_floor}")]
    NoCandidate { gray_floor: u64 },
    #[error("thresholds must be positive (area {area}, gradient {gradient})")]
    InvalidThresholds { area: u64, gradient: u64 },
    #[error("invalid threshold configuration: {0}")]
    InvalidConfig(String),
    #[error(
        "compression cannot reach {cap} levels: gray span {span} with gradient threshold {gradient}"
    )]
    NonConvergent { span: u64, gradient: u64, cap: u32 },
}

pub type Result<T> = std::result::Result<T, TerraceError>;
