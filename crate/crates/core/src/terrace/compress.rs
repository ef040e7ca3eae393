//! Terrace compression and the automatic area-threshold loop.

use serde::{Deserialize, Serialize};

use super::histogram::{
    build_segments, find_demarcation, merge_floor, merge_small_segments,
    select_gradient_threshold, DemarcationMode,
};
use super::{Result, TerraceError};
use crate::image::Raster;

/// One terrace: the inclusive gray interval mapped to `level`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Terrace {
    pub start: u32,
    pub end: u32,
    pub level: u32,
}

/// Monotone gray-to-level mapping produced by [`terrace_compress`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TerraceMap {
    terraces: Vec<Terrace>,
}

impl TerraceMap {
    pub fn terraces(&self) -> &[Terrace] {
        &self.terraces
    }

    pub fn level_count(&self) -> u32 {
        self.terraces.len() as u32
    }

    /// Level for a gray value; grays between terraces take the level of the
    /// terrace below, grays under the first terrace take level 1.
    pub fn level_of(&self, gray: u32) -> u32 {
        let i = self.terraces.partition_point(|t| t.start <= gray);
        self.terraces[i.saturating_sub(1)].level
    }
}

/// Remaps a raster onto consecutive levels `1..=K`.
///
/// Distinct grays are visited in ascending order. Gray `g` starts a new
/// terrace when the current one already holds at least `area_threshold`
/// pixels or when `g` lies `gradient_threshold` or more above the current
/// terrace's first gray.
pub fn terrace_compress(
    image: &Raster,
    area_threshold: u64,
    gradient_threshold: u64,
) -> Result<(Raster, TerraceMap)> {
    if area_threshold == 0 || gradient_threshold == 0 {
        return Err(TerraceError::InvalidThresholds {
            area: area_threshold,
            gradient: gradient_threshold,
        });
    }
    let histogram = gray_counts(image);
    let mut terraces: Vec<Terrace> = Vec::new();
    let mut pixels = 0u64;
    for &(gray, count) in &histogram {
        let close = match terraces.last() {
            Some(t) => pixels >= area_threshold || (gray - t.start) as u64 >= gradient_threshold,
            None => true,
        };
        if close {
            let level = terraces.len() as u32 + 1;
            terraces.push(Terrace {
                start: gray,
                end: gray,
                level,
            });
            pixels = 0;
        }
        terraces.last_mut().unwrap().end = gray;
        pixels += count;
    }
    let map = TerraceMap { terraces };
    let data = image.data().iter().map(|&g| map.level_of(g)).collect();
    let out = Raster::new(image.width(), image.height(), map.level_count(), data)
        .expect("levels bounded by terrace count");
    Ok((out, map))
}

/// Number of terraces [`terrace_compress`] would produce, without building
/// the output raster.
pub fn terrace_count(histogram: &[(u32, u64)], area_threshold: u64, gradient_threshold: u64) -> u32 {
    let mut count = 0u32;
    let mut start = 0u32;
    let mut pixels = 0u64;
    for &(gray, n) in histogram {
        if count == 0 || pixels >= area_threshold || (gray - start) as u64 >= gradient_threshold {
            count += 1;
            start = gray;
            pixels = 0;
        }
        pixels += n;
    }
    count
}

/// Sorted `(gray, pixel count)` pairs for the grays present.
pub fn gray_counts(image: &Raster) -> Vec<(u32, u64)> {
    let mut values = image.data().to_vec();
    values.sort_unstable();
    let mut out: Vec<(u32, u64)> = Vec::new();
    for v in values {
        match out.last_mut() {
            Some((g, c)) if *g == v => *c += 1,
            _ => out.push((v, 1)),
        }
    }
    out
}

/// Parameters of the automatic threshold search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoConfig {
    pub n_segments: usize,
    pub gray_floor: u64,
    pub demarcation: DemarcationMode,
    pub growth_factor: f64,
    pub level_cap: u32,
    pub max_iterations: u32,
}

impl Default for AutoConfig {
    fn default() -> Self {
        Self {
            n_segments: 35,
            gray_floor: 5000,
            demarcation: DemarcationMode::TailMax,
            growth_factor: 1.2,
            level_cap: 255,
            max_iterations: 64,
        }
    }
}

impl AutoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_segments < 2 {
            return Err(TerraceError::TooFewSegments(self.n_segments));
        }
        if !(self.growth_factor.is_finite() && self.growth_factor > 1.0) {
            return Err(TerraceError::InvalidConfig(format!(
                "growth_factor must exceed 1, got {}",
                self.growth_factor
            )));
        }
        if self.level_cap == 0 {
            return Err(TerraceError::InvalidConfig("level_cap must be positive".into()));
        }
        Ok(())
    }
}

/// `ceil(factor * area)` with the factor resolved to 1e-6, so decimal
/// factors such as 1.2 grow exactly. Always strictly larger than `area`.
pub fn grow_area(area: u64, factor: f64) -> u64 {
    const SCALE: u128 = 1_000_000;
    let num = (factor * SCALE as f64).round() as u128;
    let grown = (area as u128 * num).div_ceil(SCALE);
    (grown.min(u64::MAX as u128) as u64).max(area.saturating_add(1))
}

/// Everything the automatic search decided, one report row per wavelength.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThresholdSelection {
    pub source_range: (u32, u32),
    pub input_area: u64,
    pub gradient_threshold: u64,
    pub area_threshold: u64,
    /// 1-based index into the merged histogram.
    pub demarcation_index: usize,
    pub candidate_index: usize,
    pub heterogeneous_range: (u64, u64),
    pub background_range: (u64, u64),
    pub accurate_range: (u64, u64),
    pub used_fallback: bool,
    pub iterations: u32,
    pub compressed_max_level: u32,
}

pub const THRESHOLD_CSV_HEADER: &str = "wavelength,pre_compression_range,input_parameter,\
gradient_threshold,area_threshold,post_compression_range";

impl ThresholdSelection {
    pub fn csv_row(&self, wavelength: u32) -> String {
        format!(
            "{}nm,{}-{},{},{},{},1-{}",
            wavelength,
            self.source_range.0,
            self.source_range.1,
            self.input_area,
            self.gradient_threshold,
            self.area_threshold,
            self.compressed_max_level
        )
    }
}

#[derive(Debug, Clone)]
pub struct AutoCompressed {
    pub raster: Raster,
    pub selection: ThresholdSelection,
    pub map: TerraceMap,
}

/// Derives the gradient threshold from the gray distribution, then grows
/// the area threshold from `min_body_area` until the compressed image fits
/// under the level cap.
pub fn auto_compress(image: &Raster, min_body_area: u64, config: &AutoConfig) -> Result<AutoCompressed> {
    config.validate()?;
    if min_body_area == 0 {
        return Err(TerraceError::InvalidThresholds {
            area: 0,
            gradient: 1,
        });
    }
    let hist = build_segments(image, config.n_segments)?;
    let hist = merge_small_segments(&hist, merge_floor(hist.source_max()));
    let demarcation = find_demarcation(&hist, config.demarcation)?;
    let gradient = select_gradient_threshold(&hist, demarcation.index, config.gray_floor)?;
    let g = gradient.gradient_threshold;

    let counts = gray_counts(image);
    let span = hist.source_max() - hist.source_min();
    if terrace_count(&counts, u64::MAX, g) > config.level_cap {
        return Err(TerraceError::NonConvergent {
            span,
            gradient: g,
            cap: config.level_cap,
        });
    }
    let mut area = min_body_area;
    let mut iterations = 0;
    while terrace_count(&counts, area, g) > config.level_cap {
        if iterations == config.max_iterations {
            return Err(TerraceError::NonConvergent {
                span,
                gradient: g,
                cap: config.level_cap,
            });
        }
        area = grow_area(area, config.growth_factor);
        iterations += 1;
    }
    let (raster, map) = terrace_compress(image, area, g)?;
    let selection = ThresholdSelection {
        source_range: (hist.source_min() as u32, hist.source_max() as u32),
        input_area: min_body_area,
        gradient_threshold: g,
        area_threshold: area,
        demarcation_index: demarcation.index,
        candidate_index: gradient.candidate,
        heterogeneous_range: demarcation.heterogeneous_range,
        background_range: demarcation.background_range,
        accurate_range: gradient.accurate_range,
        used_fallback: gradient.fallback,
        iterations,
        compressed_max_level: map.level_count(),
    };
    Ok(AutoCompressed {
        raster,
        selection,
        map,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raster(values: Vec<u32>) -> Raster {
        let n = values.len();
        Raster::from_data(n, 1, values).unwrap()
    }

    #[test]
    fn constant_raster_single_level() {
        let img = Raster::filled(4, 4, 123).unwrap();
        let (out, map) = terrace_compress(&img, 1, 1).unwrap();
        assert!(out.data().iter().all(|&v| v == 1));
        assert_eq!(map.level_count(), 1);
    }

    #[test]
    fn area_close() {
        let mut v = vec![0; 8];
        v.extend(vec![100; 8]);
        let (out, map) = terrace_compress(&raster(v), 8, 50).unwrap();
        assert_eq!(map.level_of(0), 1);
        assert_eq!(map.level_of(100), 2);
        assert_eq!(out.max_value(), 2);
    }

    #[test]
    fn span_close() {
        let v: Vec<u32> = (0..10).map(|i| i * 10).collect();
        let (out, map) = terrace_compress(&raster(v), u64::MAX, 50).unwrap();
        assert_eq!(out.data(), &[1, 1, 1, 1, 1, 2, 2, 2, 2, 2]);
        assert_eq!(
            map.terraces(),
            &[
                Terrace { start: 0, end: 40, level: 1 },
                Terrace { start: 50, end: 90, level: 2 }
            ]
        );
    }

    #[test]
    fn zero_thresholds_rejected() {
        let img = raster(vec![1, 2]);
        assert!(terrace_compress(&img, 0, 5).is_err());
        assert!(terrace_compress(&img, 5, 0).is_err());
    }

    #[test]
    fn growth_is_exact_ceiling() {
        assert_eq!(grow_area(1, 1.2), 2);
        assert_eq!(grow_area(2, 1.2), 3);
        assert_eq!(grow_area(3, 1.2), 4);
        assert_eq!(grow_area(4, 1.2), 5);
        assert_eq!(grow_area(5, 1.2), 6);
        assert_eq!(grow_area(900, 1.2), 1080);
        assert_eq!(grow_area(1080, 1.2), 1296);
    }

    #[test]
    fn csv_row_layout() {
        let sel = ThresholdSelection {
            source_range: (611, 28855),
            input_area: 900,
            gradient_threshold: 2421,
            area_threshold: 900,
            demarcation_index: 18,
            candidate_index: 13,
            heterogeneous_range: (611, 14330),
            background_range: (15136, 28855),
            accurate_range: (11102, 13523),
            used_fallback: false,
            iterations: 0,
            compressed_max_level: 126,
        };
        assert_eq!(sel.csv_row(410), "410nm,611-28855,900,2421,900,1-126");
        assert_eq!(THRESHOLD_CSV_HEADER.split(',').count(), 6);
    }

    #[test]
    fn auto_rejects_constant() {
        let img = Raster::filled(4, 4, 9000).unwrap();
        assert!(matches!(
            auto_compress(&img, 10, &AutoConfig::default()),
            Err(TerraceError::DegenerateRange(9000))
        ));
    }

    #[test]
    fn auto_reports_non_convergence() {
        // wide uniform ramp whose gradient threshold forces > cap terraces
        let v: Vec<u32> = (0..4000).collect();
        let img = Raster::from_data(100, 40, v).unwrap();
        let cfg = AutoConfig {
            gray_floor: 0,
            level_cap: 1,
            ..AutoConfig::default()
        };
        let err = auto_compress(&img, 1, &cfg).unwrap_err();
        assert!(matches!(err, TerraceError::NonConvergent { cap: 1, .. }));
        assert!(err.to_string().contains("span"));
    }

    fn arb_raster() -> impl Strategy<Value = Raster> {
        proptest::collection::vec(0u32..400, 1..200).prop_map(raster)
    }

    proptest! {
        #[test]
        fn levels_consecutive_and_monotone(img in arb_raster(), a in 1u64..50, g in 1u64..200) {
            let (out, map) = terrace_compress(&img, a, g).unwrap();
            let k = map.level_count();
            let mut seen = vec![false; k as usize];
            for &l in out.data() {
                prop_assert!(l >= 1 && l <= k);
                seen[l as usize - 1] = true;
            }
            prop_assert!(seen.iter().all(|&s| s));
            let mut pairs: Vec<(u32, u32)> = img.data().iter().copied().zip(out.data().iter().copied()).collect();
            pairs.sort();
            for w in pairs.windows(2) {
                prop_assert!(w[0].1 <= w[1].1);
            }
            prop_assert_eq!(terrace_count(&gray_counts(&img), a, g), k);
        }

        #[test]
        fn count_monotone_in_thresholds(img in arb_raster(), a in 1u64..50, g in 1u64..200, da in 0u64..50, dg in 0u64..200) {
            let h = gray_counts(&img);
            prop_assert!(terrace_count(&h, a + da, g) <= terrace_count(&h, a, g));
            prop_assert!(terrace_count(&h, a, g + dg) <= terrace_count(&h, a, g));
        }
    }
}
