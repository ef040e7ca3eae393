//! Segmentation scoring against a binarized template.
//!
//! Bodies are isolated as 4-connected components, numbered row by row, and
//! each is scored with the Dice coefficient inside a padded box around it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::LabelImage;
use crate::image::Raster;
use crate::report::fmt_real;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dimension mismatch: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("otsu threshold needs a non-constant image")]
    ConstantImage,
    #[error("mask has no foreground")]
    EmptyMask,
    #[error("label {label} is not below k = {k}")]
    InvalidLabel { label: usize, k: usize },
    #[error("reports cover different bodies")]
    BodyMismatch,
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width * height, "mask length");
        Self { width, height, bits }
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![false; width * height])
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinarizeMethod {
    Otsu,
    Fixed(u32),
}

/// Threshold maximizing between-class variance, foreground `<= t`. Ties
/// resolve to the smallest threshold.
pub fn otsu_threshold(image: &Raster) -> Result<u32> {
    let mut hist: BTreeMap<u32, u64> = BTreeMap::new();
    for &v in image.data() {
        *hist.entry(v).or_default() += 1;
    }
    if hist.len() < 2 {
        return Err(EvalError::ConstantImage);
    }
    let total = image.len() as f64;
    let sum_all: f64 = hist.iter().map(|(&g, &c)| g as f64 * c as f64).sum();
    let mut best = (f64::NEG_INFINITY, 0u32);
    let mut w0 = 0.0;
    let mut s0 = 0.0;
    // the last distinct value would leave the background empty
    for (&g, &c) in hist.iter().take(hist.len() - 1) {
        w0 += c as f64;
        s0 += g as f64 * c as f64;
        let w1 = total - w0;
        let m0 = s0 / w0;
        let m1 = (sum_all - s0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best.0 {
            best = (between, g);
        }
    }
    Ok(best.1)
}

/// Foreground is the darker side: gray `<= threshold`.
pub fn binarize(image: &Raster, method: BinarizeMethod) -> Result<BinaryMask> {
    let t = match method {
        BinarizeMethod::Otsu => otsu_threshold(image)?,
        BinarizeMethod::Fixed(t) => t,
    };
    Ok(BinaryMask::new(
        image.width(),
        image.height(),
        image.data().iter().map(|&v| v <= t).collect(),
    ))
}

/// Inclusive pixel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoundingBox {
    fn padded(&self, pad: usize, width: usize, height: usize) -> Self {
        Self {
            x0: self.x0.saturating_sub(pad),
            y0: self.y0.saturating_sub(pad),
            x1: (self.x1 + pad).min(width - 1),
            y1: (self.y1 + pad).min(height - 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Body {
    pub id: usize,
    pub bbox: BoundingBox,
    /// Row-major indices of the body's pixels.
    pub pixels: Vec<usize>,
}

impl Body {
    fn from_pixels(id: usize, pixels: Vec<usize>, width: usize) -> Self {
        let mut bbox = BoundingBox {
            x0: usize::MAX,
            y0: usize::MAX,
            x1: 0,
            y1: 0,
        };
        for &p in &pixels {
            let (x, y) = (p % width, p / width);
            bbox.x0 = bbox.x0.min(x);
            bbox.y0 = bbox.y0.min(y);
            bbox.x1 = bbox.x1.max(x);
            bbox.y1 = bbox.y1.max(y);
        }
        Self { id, bbox, pixels }
    }

    fn centroid(&self, width: usize) -> (f64, f64) {
        let n = self.pixels.len() as f64;
        let (sx, sy) = self.pixels.iter().fold((0.0, 0.0), |(sx, sy), &p| {
            (sx + (p % width) as f64, sy + (p / width) as f64)
        });
        (sx / n, sy / n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodyTemplate {
    mask: BinaryMask,
    bodies: Vec<Body>,
}

impl BodyTemplate {
    pub fn mask(&self) -> &BinaryMask {
        &self.mask
    }

    pub fn bodies(&self) -> &[Body] {
        &self.bodies
    }

    pub fn dims(&self) -> (usize, usize) {
        self.mask.dims()
    }

    /// Template from a raster of body ids (0 = background), keeping ids.
    pub fn from_id_raster(ids: &Raster) -> Result<Self> {
        let (w, h) = ids.dims();
        let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, &v) in ids.data().iter().enumerate() {
            if v > 0 {
                groups.entry(v).or_default().push(i);
            }
        }
        if groups.is_empty() {
            return Err(EvalError::EmptyMask);
        }
        let mask = BinaryMask::new(w, h, ids.data().iter().map(|&v| v > 0).collect());
        let bodies = groups
            .into_iter()
            .map(|(id, px)| Body::from_pixels(id as usize, px, w))
            .collect();
        Ok(Self { mask, bodies })
    }

    /// Raster of body ids, 0 for background.
    pub fn to_id_raster(&self) -> Raster {
        let (w, h) = self.dims();
        let mut data = vec![0u32; w * h];
        for b in &self.bodies {
            for &p in &b.pixels {
                data[p] = b.id as u32;
            }
        }
        Raster::from_data(w, h, data).expect("ids fit")
    }
}

/// Labels 4-connected foreground components and numbers them row-major by
/// centroid: components whose centroid falls inside the vertical extent of
/// a row's first member share that row, rows go top to bottom and members
/// left to right.
pub fn extract_bodies(mask: &BinaryMask) -> Result<BodyTemplate> {
    let (w, h) = mask.dims();
    let mut seen = vec![false; w * h];
    let mut comps: Vec<Vec<usize>> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.bits[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut px = Vec::new();
        while let Some(p) = stack.pop() {
            px.push(p);
            let (x, y) = (p % w, p / w);
            let mut visit = |q: usize| {
                if mask.bits[q] && !seen[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        px.sort_unstable();
        comps.push(px);
    }
    if comps.is_empty() {
        return Err(EvalError::EmptyMask);
    }
    let mut bodies: Vec<(Body, (f64, f64))> = comps
        .into_iter()
        .map(|px| {
            let b = Body::from_pixels(0, px, w);
            let c = b.centroid(w);
            (b, c)
        })
        .collect();
    bodies.sort_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(a.1 .0.total_cmp(&b.1 .0)));
    let mut rows: Vec<Vec<(Body, (f64, f64))>> = Vec::new();
    for item in bodies {
        let cy = item.1 .1;
        match rows.last_mut() {
            Some(row) if cy >= row[0].0.bbox.y0 as f64 && cy <= row[0].0.bbox.y1 as f64 => row.push(item),
            _ => rows.push(vec![item]),
        }
    }
    let mut ordered = Vec::new();
    for mut row in rows {
        row.sort_by(|a, b| a.1 .0.total_cmp(&b.1 .0));
        ordered.extend(row.into_iter().map(|(b, _)| b));
    }
    for (i, b) in ordered.iter_mut().enumerate() {
        b.id = i + 1;
    }
    Ok(BodyTemplate {
        mask: mask.clone(),
        bodies: ordered,
    })
}

/// `2|A∩B| / (|A| + |B|)`; two empty masks score 1.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(EvalError::DimensionMismatch(a.dims(), b.dims()));
    }
    let mut inter = 0usize;
    let mut na = 0usize;
    let mut nb = 0usize;
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        na += x as usize;
        nb += y as usize;
        inter += (x && y) as usize;
    }
    Ok(dice_from_counts(inter, na, nb))
}

fn dice_from_counts(inter: usize, na: usize, nb: usize) -> f64 {
    if na + nb == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (na + nb) as f64
    }
}

/// How a body's predicted foreground is chosen from the cluster labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForegroundPolicy {
    /// The single label whose region inside the box best matches the body.
    BestMatch,
    /// The same label for every body.
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiceReport {
    pub method: String,
    /// `(body id, dice)` in id order.
    pub per_body: Vec<(usize, f64)>,
    pub overall_average: f64,
    pub subset_ids: Vec<usize>,
    /// Mean over the bodies listed in `subset_ids`; `None` if none exist.
    pub subset_average: Option<f64>,
}

impl DiceReport {
    pub fn new(method: impl Into<String>, per_body: Vec<(usize, f64)>, subset_ids: &[usize]) -> Self {
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let all: Vec<f64> = per_body.iter().map(|p| p.1).collect();
        let sub: Vec<f64> = per_body
            .iter()
            .filter(|p| subset_ids.contains(&p.0))
            .map(|p| p.1)
            .collect();
        Self {
            method: method.into(),
            overall_average: mean(&all).unwrap_or(f64::NAN),
            subset_average: mean(&sub),
            subset_ids: subset_ids.to_vec(),
            per_body,
        }
    }

    pub fn dice_of(&self, id: usize) -> Option<f64> {
        self.per_body.iter().find(|p| p.0 == id).map(|p| p.1)
    }
}

/// Scores every template body against the label image.
pub fn evaluate(
    labels: &LabelImage,
    template: &BodyTemplate,
    roi_pad: usize,
    policy: ForegroundPolicy,
    method: &str,
    subset_ids: &[usize],
) -> Result<DiceReport> {
    if labels.dims() != template.dims() {
        return Err(EvalError::DimensionMismatch(labels.dims(), template.dims()));
    }
    let k = labels.k();
    if let ForegroundPolicy::Fixed(l) = policy {
        if l >= k {
            return Err(EvalError::InvalidLabel { label: l, k });
        }
    }
    let (w, h) = template.dims();
    let data = labels.raster().data();
    let per_body = template
        .bodies()
        .iter()
        .map(|body| {
            let roi = body.bbox.padded(roi_pad, w, h);
            let mut in_roi = vec![0usize; k];
            for y in roi.y0..=roi.y1 {
                for &l in &data[y * w + roi.x0..=y * w + roi.x1] {
                    in_roi[l as usize] += 1;
                }
            }
            let mut inter = vec![0usize; k];
            for &p in &body.pixels {
                inter[data[p] as usize] += 1;
            }
            let size = body.pixels.len();
            let score = |l: usize| dice_from_counts(inter[l], size, in_roi[l]);
            let d = match policy {
                ForegroundPolicy::BestMatch => (0..k).map(score).fold(0.0, f64::max),
                ForegroundPolicy::Fixed(l) => score(l),
            };
            (body.id, d)
        })
        .collect();
    Ok(DiceReport::new(method, per_body, subset_ids))
}

/// Body rows, one column per method, then the two average rows.
pub fn dice_csv(reports: &[DiceReport]) -> Result<String> {
    let Some(first) = reports.first() else {
        return Ok(String::new());
    };
    let ids: Vec<usize> = first.per_body.iter().map(|p| p.0).collect();
    if reports
        .iter()
        .any(|r| r.per_body.iter().map(|p| p.0).ne(ids.iter().copied()))
    {
        return Err(EvalError::BodyMismatch);
    }
    let mut out = String::from("body");
    for r in reports {
        out.push(',');
        out.push_str(&r.method);
    }
    out.push('\n');
    for (i, id) in ids.iter().enumerate() {
        out.push_str(&id.to_string());
        for r in reports {
            out.push(',');
            out.push_str(&fmt_real(r.per_body[i].1));
        }
        out.push('\n');
    }
    out.push_str("overall_average");
    for r in reports {
        out.push(',');
        out.push_str(&fmt_real(r.overall_average));
    }
    out.push('\n');
    out.push_str("subset_average");
    for r in reports {
        out.push(',');
        out.push_str(&r.subset_average.map(fmt_real).unwrap_or_else(|| "nan".into()));
    }
    out.push('\n');
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::labels_to_image;

    fn mask(w: usize, h: usize, on: &[usize]) -> BinaryMask {
        let mut bits = vec![false; w * h];
        for &i in on {
            bits[i] = true;
        }
        BinaryMask::new(w, h, bits)
    }

    #[test]
    fn dice_axioms() {
        let a = mask(4, 1, &[0, 1]);
        let b = mask(4, 1, &[1]);
        let c = mask(4, 1, &[2, 3]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &c).unwrap(), 0.0);
        assert!((dice(&a, &b).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
        let e = BinaryMask::empty(4, 1);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        assert_eq!(dice(&e, &a).unwrap(), 0.0);
        assert!(dice(&a, &BinaryMask::empty(2, 2)).is_err());
    }

    #[test]
    fn otsu_splits_bimodal() {
        let mut d = vec![10u32; 50];
        d.extend(vec![200; 50]);
        let img = Raster::from_data(10, 10, d).unwrap();
        let t = otsu_threshold(&img).unwrap();
        // exhaustive search over every integer threshold
        let mut best = (f64::NEG_INFINITY, 0);
        for t in 0..200u32 {
            let fg: Vec<f64> = img.data().iter().filter(|&&v| v <= t).map(|&v| v as f64).collect();
            let bg: Vec<f64> = img.data().iter().filter(|&&v| v > t).map(|&v| v as f64).collect();
            if fg.is_empty() || bg.is_empty() {
                continue;
            }
            let m0 = fg.iter().sum::<f64>() / fg.len() as f64;
            let m1 = bg.iter().sum::<f64>() / bg.len() as f64;
            let v = fg.len() as f64 * bg.len() as f64 * (m0 - m1).powi(2);
            if v > best.0 {
                best = (v, t);
            }
        }
        assert_eq!(t, best.1);
        let m = binarize(&img, BinarizeMethod::Otsu).unwrap();
        assert_eq!(m.count(), 50);
        assert!(m.bits()[..50].iter().all(|&b| b));
    }

    #[test]
    fn fixed_thresholds() {
        let img = Raster::from_data(3, 1, vec![1, 5, 9]).unwrap();
        assert_eq!(binarize(&img, BinarizeMethod::Fixed(0)).unwrap().count(), 0);
        assert_eq!(binarize(&img, BinarizeMethod::Fixed(9)).unwrap().count(), 3);
        assert!(matches!(
            binarize(&Raster::filled(2, 2, 3).unwrap(), BinarizeMethod::Otsu),
            Err(EvalError::ConstantImage)
        ));
    }

    #[test]
    fn grid_numbered_row_major() {
        let (w, h) = (40, 40);
        let mut m = BinaryMask::empty(w, h);
        for r in 0..4 {
            for c in 0..4 {
                for y in 0..5 {
                    for x in 0..5 {
                        m.set(c * 10 + 2 + x, r * 10 + 2 + y, true);
                    }
                }
            }
        }
        let t = extract_bodies(&m).unwrap();
        assert_eq!(t.bodies().len(), 16);
        for (i, b) in t.bodies().iter().enumerate() {
            assert_eq!(b.id, i + 1);
            assert_eq!(b.bbox.x0, (i % 4) * 10 + 2);
            assert_eq!(b.bbox.y0, (i / 4) * 10 + 2);
            assert_eq!(b.pixels.len(), 25);
        }
        let round = BodyTemplate::from_id_raster(&t.to_id_raster()).unwrap();
        assert_eq!(round, t);
    }

    #[test]
    fn diagonal_pixels_are_separate() {
        let m = mask(2, 2, &[0, 3]);
        assert_eq!(extract_bodies(&m).unwrap().bodies().len(), 2);
        assert!(matches!(extract_bodies(&BinaryMask::empty(3, 3)), Err(EvalError::EmptyMask)));
    }

    #[test]
    fn perfect_labels_score_one() {
        let m = mask(6, 6, &[7, 8, 13, 14, 28, 29]);
        let t = extract_bodies(&m).unwrap();
        let labels: Vec<usize> = m.bits().iter().map(|&b| b as usize).collect();
        let li = labels_to_image(&labels, 6, 6, 2).unwrap();
        let r = evaluate(&li, &t, 1, ForegroundPolicy::BestMatch, "x", &[2]).unwrap();
        assert!(r.per_body.iter().all(|p| p.1 == 1.0));
        assert_eq!(r.overall_average, 1.0);
        assert_eq!(r.subset_average, Some(1.0));
    }

    #[test]
    fn uniform_labels_closed_form() {
        // 3x3 body in a 9x9 image, pad 2 -> 7x7 ROI
        let mut m = BinaryMask::empty(9, 9);
        for y in 3..6 {
            for x in 3..6 {
                m.set(x, y, true);
            }
        }
        let t = extract_bodies(&m).unwrap();
        let li = labels_to_image(&[0; 81], 9, 9, 3).unwrap();
        let r = evaluate(&li, &t, 2, ForegroundPolicy::BestMatch, "x", &[]).unwrap();
        assert!((r.per_body[0].1 - 2.0 * 9.0 / (9.0 + 49.0)).abs() < 1e-15);
        assert_eq!(r.subset_average, None);
        let r = evaluate(&li, &t, 2, ForegroundPolicy::Fixed(1), "x", &[]).unwrap();
        assert_eq!(r.per_body[0].1, 0.0);
    }

    #[test]
    fn evaluate_rejects_mismatch() {
        let t = extract_bodies(&mask(3, 3, &[4])).unwrap();
        let li = labels_to_image(&[0; 4], 2, 2, 1).unwrap();
        assert!(matches!(
            evaluate(&li, &t, 0, ForegroundPolicy::BestMatch, "x", &[]),
            Err(EvalError::DimensionMismatch(..))
        ));
    }

    #[test]
    fn csv_layout() {
        let a = DiceReport::new("gmm", vec![(1, 0.5), (2, 1.0)], &[2]);
        let b = DiceReport::new("kmeans", vec![(1, 0.25), (2, 0.75)], &[2]);
        let csv = dice_csv(&[a, b]).unwrap();
        assert_eq!(
            csv,
            "body,gmm,kmeans\n1,0.500000,0.250000\n2,1.00000,0.750000\n\
             overall_average,0.750000,0.500000\nsubset_average,1.00000,0.750000\n"
        );
    }
}
