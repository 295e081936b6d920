//! mIoU, boundary-band mIoU and offset-field statistics.
//!
//! A pixel is in the band of width `n` when some pixel with a different
//! ground-truth label lies within Chebyshev distance `n`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::label::LabelMap;
use crate::ops::deform::OffsetField;

pub const BAND_WIDTHS: [usize; 3] = [1, 2, 3];

/// Entry `(g, p)` counts pixels with ground truth `g` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    fn check(&self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        pred.same_dims(gt, "confusion")?;
        let top = pred.max_class().max(gt.max_class());
        if top >= self.classes {
            return Err(Error::Data(format!("class id {top} >= {} classes", self.classes)));
        }
        Ok(())
    }

    pub fn add(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        self.check(pred, gt)?;
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            self.counts[g * self.classes + p] += 1;
        }
        Ok(())
    }

    /// Counts only pixels where `mask` is set.
    pub fn add_masked(&mut self, pred: &LabelMap, gt: &LabelMap, mask: &[bool]) -> Result<()> {
        self.check(pred, gt)?;
        if mask.len() != gt.data().len() {
            return Err(Error::shape("confusion", format!("mask of {} for {} pixels", mask.len(), gt.data().len())));
        }
        for ((&p, &g), &m) in pred.data().iter().zip(gt.data()).zip(mask) {
            if m {
                self.counts[g * self.classes + p] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::shape("confusion merge", format!("{} vs {} classes", self.classes, other.classes)));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn gt_count(&self, c: usize) -> u64 {
        (0..self.classes).map(|p| self.get(c, p)).sum()
    }

    /// `TP / (TP + FP + FN)`, or `None` when `c` never occurs in the ground truth.
    pub fn iou(&self, c: usize) -> Option<f64> {
        let gt = self.gt_count(c);
        if gt == 0 {
            return None;
        }
        let tp = self.get(c, c);
        let pred: u64 = (0..self.classes).map(|g| self.get(g, c)).sum();
        Some(tp as f64 / (gt + pred - tp) as f64)
    }

    /// Mean IoU over classes present in the ground truth; `None` if the
    /// matrix is empty.
    pub fn miou(&self) -> Option<f64> {
        let ious: Vec<f64> = (0..self.classes).filter_map(|c| self.iou(c)).collect();
        if ious.is_empty() {
            None
        } else {
            Some(ious.iter().sum::<f64>() / ious.len() as f64)
        }
    }
}

pub fn miou(pred: &LabelMap, gt: &LabelMap, classes: usize) -> Result<f64> {
    let mut cm = ConfusionMatrix::new(classes);
    cm.add(pred, gt)?;
    Ok(cm.miou().unwrap_or(1.0))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoundaryBand {
    pub n: usize,
    pub height: usize,
    pub width: usize,
    pub mask: Vec<bool>,
}

impl BoundaryBand {
    pub fn is_empty(&self) -> bool {
        !self.mask.iter().any(|&m| m)
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn at(&self, y: usize, x: usize) -> bool {
        self.mask[y * self.width + x]
    }
}

/// Sliding min and max of `src` along rows (`horizontal`) or columns with
/// radius `n`, clipped at the borders.
fn window_extrema(src: &[(usize, usize)], h: usize, w: usize, n: usize, horizontal: bool) -> Vec<(usize, usize)> {
    let mut out = vec![(0, 0); src.len()];
    for y in 0..h {
        for x in 0..w {
            let (lo, hi, fixed) = if horizontal {
                (x.saturating_sub(n), (x + n).min(w - 1), y)
            } else {
                (y.saturating_sub(n), (y + n).min(h - 1), x)
            };
            let mut acc = (usize::MAX, 0);
            for t in lo..=hi {
                let idx = if horizontal { fixed * w + t } else { t * w + fixed };
                acc.0 = acc.0.min(src[idx].0);
                acc.1 = acc.1.max(src[idx].1);
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Square windows are separable, so the band is computed from row then
/// column min/max filters of the label map.
pub fn boundary_band(gt: &LabelMap, n: usize) -> Result<BoundaryBand> {
    if n == 0 {
        return Err(Error::Contract("boundary_band: n must be >= 1".into()));
    }
    let (h, w) = (gt.height(), gt.width());
    let init: Vec<(usize, usize)> = gt.data().iter().map(|&c| (c, c)).collect();
    let rows = window_extrema(&init, h, w, n, true);
    let both = window_extrema(&rows, h, w, n, false);
    let mask = gt
        .data()
        .iter()
        .zip(&both)
        .map(|(&c, &(lo, hi))| lo != c || hi != c)
        .collect();
    Ok(BoundaryBand {
        n,
        height: h,
        width: w,
        mask,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryScore {
    pub miou: f64,
    /// The band held no pixels; `miou` is then defined as 1.0.
    pub empty_band: bool,
}

pub fn boundary_confusion(pred: &LabelMap, gt: &LabelMap, classes: usize, n: usize) -> Result<ConfusionMatrix> {
    pred.same_dims(gt, "boundary_miou")?;
    let band = boundary_band(gt, n)?;
    let mut cm = ConfusionMatrix::new(classes);
    cm.add_masked(pred, gt, &band.mask)?;
    Ok(cm)
}

pub fn score(cm: &ConfusionMatrix) -> BoundaryScore {
    match cm.miou() {
        Some(miou) => BoundaryScore { miou, empty_band: false },
        None => BoundaryScore {
            miou: 1.0,
            empty_band: true,
        },
    }
}

pub fn boundary_miou(pred: &LabelMap, gt: &LabelMap, classes: usize, n: usize) -> Result<BoundaryScore> {
    Ok(score(&boundary_confusion(pred, gt, classes, n)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct OffsetStats {
    /// Mean Euclidean length of `(dy, dx)` over taps and positions.
    pub mean_abs: f64,
    pub max_abs: f64,
    pub per_tap_mean: Vec<f64>,
}

pub fn offset_stats(field: &OffsetField) -> OffsetStats {
    let t = field.tensor();
    let d = t.dims();
    let taps = field.taps();
    let mut per_tap = vec![0.0; taps];
    let mut max_abs: f64 = 0.0;
    for n in 0..d.n {
        for (k, acc) in per_tap.iter_mut().enumerate() {
            for y in 0..d.h {
                for x in 0..d.w {
                    let (dy, dx) = field.get(n, k, y, x);
                    let m = dy.hypot(dx);
                    *acc += m;
                    max_abs = max_abs.max(m);
                }
            }
        }
    }
    let per_pos = (d.n * d.h * d.w) as f64;
    let per_tap_mean: Vec<f64> = per_tap.iter().map(|s| s / per_pos).collect();
    let mean_abs = per_tap_mean.iter().sum::<f64>() / taps as f64;
    OffsetStats {
        mean_abs,
        max_abs,
        per_tap_mean,
    }
}

/// Dataset-level confusion matrices: full-image plus one per band width.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalAccumulator {
    pub full: ConfusionMatrix,
    pub bands: Vec<ConfusionMatrix>,
}

impl EvalAccumulator {
    pub fn new(classes: usize) -> Self {
        EvalAccumulator {
            full: ConfusionMatrix::new(classes),
            bands: BAND_WIDTHS.iter().map(|_| ConfusionMatrix::new(classes)).collect(),
        }
    }

    pub fn add(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        self.full.add(pred, gt)?;
        for (cm, &n) in self.bands.iter_mut().zip(&BAND_WIDTHS) {
            let band = boundary_band(gt, n)?;
            cm.add_masked(pred, gt, &band.mask)?;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &EvalAccumulator) -> Result<()> {
        self.full.merge(&other.full)?;
        for (a, b) in self.bands.iter_mut().zip(&other.bands) {
            a.merge(b)?;
        }
        Ok(())
    }

    pub fn summary(&self) -> EvalSummary {
        let bmiou: Vec<f64> = self.bands.iter().map(|cm| score(cm).miou).collect();
        EvalSummary {
            miou: self.full.miou().unwrap_or(1.0),
            bmiou_mean: bmiou.iter().sum::<f64>() / bmiou.len() as f64,
            bmiou,
        }
    }

    /// `class,iou,biou_n1,biou_n2,biou_n3`; classes absent from the ground
    /// truth print `nan`.
    pub fn report_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"));
        let mut s = String::from("class,iou,biou_n1,biou_n2,biou_n3\n");
        for c in 0..self.full.classes() {
            let _ = write!(s, "{c},{}", fmt(self.full.iou(c)));
            for cm in &self.bands {
                let _ = write!(s, ",{}", fmt(cm.iou(c)));
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub miou: f64,
    /// One per entry of [`BAND_WIDTHS`].
    pub bmiou: Vec<f64>,
    pub bmiou_mean: f64,
}
