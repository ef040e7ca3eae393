//! Segmented gray histogram and the threshold-selection steps that read it.

use serde::{Deserialize, Serialize};

use super::{Result, TerraceError};
use crate::image::Raster;

/// Half-open gray interval `[lower, upper)` with its pixel count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraySegment {
    pub lower: u64,
    pub upper: u64,
    pub count: u64,
}

impl GraySegment {
    pub fn width(&self) -> u64 {
        self.upper - self.lower
    }
}

/// Contiguous partition of a raster's gray range.
///
/// The last segment's stored `upper` is `source_max + 1` so the maximum gray
/// is counted; [`SegmentedHistogram::nominal_upper`] gives the printed bound.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentedHistogram {
    segments: Vec<GraySegment>,
    source_min: u64,
    source_max: u64,
}

impl SegmentedHistogram {
    pub fn segments(&self) -> &[GraySegment] {
        &self.segments
    }

    /// 1-based access, matching how segments are numbered in reports.
    pub fn segment(&self, index: usize) -> &GraySegment {
        &self.segments[index - 1]
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn source_min(&self) -> u64 {
        self.source_min
    }

    pub fn source_max(&self) -> u64 {
        self.source_max
    }

    pub fn nominal_upper(&self) -> u64 {
        self.source_max
    }

    pub fn total_count(&self) -> u64 {
        self.segments.iter().map(|s| s.count).sum()
    }

    pub fn counts(&self) -> Vec<u64> {
        self.segments.iter().map(|s| s.count).collect()
    }

    /// Builds a histogram from explicit segments, checking contiguity.
    pub fn from_segments(segments: Vec<GraySegment>, source_min: u64, source_max: u64) -> Result<Self> {
        let first = segments.first().ok_or(TerraceError::EmptyHistogram)?;
        let last = segments.last().unwrap();
        let contiguous = segments.windows(2).all(|p| p[0].upper == p[1].lower);
        let ordered = segments.iter().all(|s| s.lower < s.upper);
        if !contiguous
            || !ordered
            || first.lower != source_min
            || last.upper <= source_max
            || source_max < last.lower
        {
            return Err(TerraceError::InvalidHistogram);
        }
        Ok(Self {
            segments,
            source_min,
            source_max,
        })
    }
}

/// Uniform boundary `k` of `n`: `min + k*(max-min)/n` rounded half away
/// from zero, computed exactly in integers.
fn boundary(min: u64, range: u64, k: u64, n: u64) -> u64 {
    let twice = 2 * (min as u128 * n as u128 + k as u128 * range as u128) + n as u128;
    (twice / (2 * n as u128)) as u64
}

/// Splits the raster's gray range into `n_segments` uniform segments and
/// tallies pixels. The last segment also holds the maximum gray.
pub fn build_segments(image: &Raster, n_segments: usize) -> Result<SegmentedHistogram> {
    if n_segments < 2 {
        return Err(TerraceError::TooFewSegments(n_segments));
    }
    let (min, max) = image.value_range();
    let (min, max) = (min as u64, max as u64);
    if max == min {
        return Err(TerraceError::DegenerateRange(min));
    }
    let range = max - min;
    let n = n_segments as u64;
    if range < n {
        return Err(TerraceError::RangeTooNarrow { range, n_segments });
    }
    let bounds: Vec<u64> = (0..=n).map(|k| boundary(min, range, k, n)).collect();
    let mut counts = vec![0u64; n_segments];
    for &g in image.data() {
        // index of the last lower boundary <= g among bounds[0..n]
        let idx = bounds[..n_segments].partition_point(|&b| b <= g as u64) - 1;
        counts[idx] += 1;
    }
    let segments = (0..n_segments)
        .map(|i| GraySegment {
            lower: bounds[i],
            upper: if i + 1 == n_segments {
                max + 1
            } else {
                bounds[i + 1]
            },
            count: counts[i],
        })
        .collect();
    Ok(SegmentedHistogram {
        segments,
        source_min: min,
        source_max: max,
    })
}

/// Pixel-count floor used when merging: one percent of the raster maximum,
/// rounded up.
pub fn merge_floor(source_max: u64) -> u64 {
    source_max.div_ceil(100).max(1)
}

/// Folds undersized segments into their smaller neighbor until every
/// segment reaches `min_count` or only one remains.
///
/// Always resolves the leftmost undersized segment first; ties between
/// neighbors go left.
pub fn merge_small_segments(hist: &SegmentedHistogram, min_count: u64) -> SegmentedHistogram {
    let mut segs = hist.segments.clone();
    while segs.len() > 1 {
        let Some(i) = segs.iter().position(|s| s.count < min_count) else {
            break;
        };
        let left = i.checked_sub(1).map(|j| segs[j].count);
        let right = segs.get(i + 1).map(|s| s.count);
        let target = match (left, right) {
            (Some(l), Some(r)) if r < l => i + 1,
            (Some(_), _) => i - 1,
            (None, _) => i + 1,
        };
        let (a, b) = if target < i { (target, i) } else { (i, target) };
        let merged = GraySegment {
            lower: segs[a].lower,
            upper: segs[b].upper,
            count: segs[a].count + segs[b].count,
        };
        segs[a] = merged;
        segs.remove(b);
    }
    SegmentedHistogram {
        segments: segs,
        source_min: hist.source_min,
        source_max: hist.source_max,
    }
}

/// Which segments may serve as the background peak.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemarcationMode {
    /// Fullest segment overall; suits images where bodies are small.
    GlobalMax,
    /// Fullest segment among the brightest three fifths.
    TailMax,
}

impl std::str::FromStr for DemarcationMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "global_max" => Ok(Self::GlobalMax),
            "tail_max" => Ok(Self::TailMax),
            other => Err(format!("unknown demarcation mode {other:?}")),
        }
    }
}

/// The segment splitting body grays (below) from background grays (above).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Demarcation {
    /// 1-based segment index.
    pub index: usize,
    pub heterogeneous_range: (u64, u64),
    pub background_range: (u64, u64),
}

pub fn find_demarcation(hist: &SegmentedHistogram, mode: DemarcationMode) -> Result<Demarcation> {
    let n = hist.len();
    if n < 2 {
        return Err(TerraceError::TooFewSegments(n));
    }
    let skip = match mode {
        DemarcationMode::GlobalMax => 0,
        DemarcationMode::TailMax => 2 * n / 5,
    };
    let mut best = skip;
    for i in skip..n {
        if hist.segments[i].count > hist.segments[best].count {
            best = i;
        }
    }
    let seg = hist.segments[best];
    Ok(Demarcation {
        index: best + 1,
        heterogeneous_range: (hist.source_min, seg.lower),
        background_range: (seg.upper.min(hist.nominal_upper()), hist.nominal_upper()),
    })
}

/// Outcome of the gradient-threshold search.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradientSelection {
    /// 1-based index of the sparsest qualifying segment.
    pub candidate: usize,
    pub accurate_range: (u64, u64),
    pub gradient_threshold: u64,
    /// Set when the candidate sat too close to the demarcation and a
    /// single-segment range was used instead.
    pub fallback: bool,
}

/// Picks the sparsest segment below the demarcation whose lower bound
/// exceeds `gray_floor`, and measures the gray span from the segment after
/// it up to the lower edge of the segment just before the demarcation.
pub fn select_gradient_threshold(
    hist: &SegmentedHistogram,
    demarcation: usize,
    gray_floor: u64,
) -> Result<GradientSelection> {
    if demarcation < 4 || demarcation > hist.len() {
        return Err(TerraceError::DemarcationTooLow(demarcation));
    }
    let segs = &hist.segments;
    let mut candidate: Option<usize> = None;
    for (i, s) in segs[..demarcation - 1].iter().enumerate() {
        if s.lower <= gray_floor {
            continue;
        }
        // `<=` lets later (brighter) segments win ties
        if candidate.is_none_or(|c| s.count <= segs[c].count) {
            candidate = Some(i);
        }
    }
    let c = candidate.ok_or(TerraceError::NoCandidate { gray_floor })?;
    let hi = segs[demarcation - 2].lower;
    let lo = segs[c + 1].lower;
    let (range, fallback) = if hi > lo {
        ((lo, hi), false)
    } else {
        ((segs[demarcation - 3].lower, hi), true)
    };
    Ok(GradientSelection {
        candidate: c + 1,
        accurate_range: range,
        gradient_threshold: range.1 - range.0,
        fallback,
    })
}
