//! Segmentation and depth evaluation metrics.

use crate::error::{Error, Result};

/// `C×C` confusion counts indexed `[truth][prediction]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionAccumulator {
    pub num_classes: usize,
    pub ignore_index: Option<usize>,
    counts: Vec<u64>,
}

impl ConfusionAccumulator {
    pub fn new(num_classes: usize, ignore_index: Option<usize>) -> Self {
        Self {
            num_classes,
            ignore_index,
            counts: vec![0; num_classes * num_classes],
        }
    }

    /// Adds pixel pairs; ignored or out-of-range truths are skipped.
    pub fn update(&mut self, pred: &[usize], truth: &[usize]) {
        assert_eq!(pred.len(), truth.len(), "prediction and truth lengths differ");
        let c = self.num_classes;
        for (&p, &t) in pred.iter().zip(truth) {
            if Some(t) == self.ignore_index || t >= c {
                continue;
            }
            assert!(p < c, "predicted class {p} out of range");
            self.counts[t * c + p] += 1;
        }
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn merge(&mut self, other: &Self) {
        assert_eq!(self.num_classes, other.num_classes, "merging different class counts");
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
    }

    /// Per-class `(TP, FP, FN)`.
    pub fn class_counts(&self) -> Vec<(u64, u64, u64)> {
        let c = self.num_classes;
        (0..c)
            .map(|k| {
                let tp = self.count(k, k);
                let fn_ = (0..c).map(|p| self.count(k, p)).sum::<u64>() - tp;
                let fp = (0..c).map(|t| self.count(t, k)).sum::<u64>() - tp;
                (tp, fp, fn_)
            })
            .collect()
    }

    /// Per-class IoU; `None` for classes absent from both truth and prediction.
    pub fn class_iou(&self) -> Vec<Option<f64>> {
        self.class_counts().into_iter().map(iou_from_counts).collect()
    }
}

/// `TP / (TP + FP + FN)`, or `None` for an empty union.
pub fn iou_from_counts((tp, fp, fn_): (u64, u64, u64)) -> Option<f64> {
    let union = tp + fp + fn_;
    (union > 0).then(|| tp as f64 / union as f64)
}

/// Mean over the classes that have an IoU.
pub fn mean_iou(ious: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = ious.iter().flatten().copied().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

/// Mean IoU over classes with a nonzero union.
pub fn miou(acc: &ConfusionAccumulator) -> Result<f64> {
    if acc.total() == 0 {
        return Err(Error::EmptyAccumulator);
    }
    mean_iou(&acc.class_iou()).ok_or(Error::EmptyAccumulator)
}

fn masked<T: Copy + Into<f64>>(pred: &[T], gt: &[T], mask: Option<&[bool]>) -> Result<Vec<(f64, f64)>> {
    assert_eq!(pred.len(), gt.len(), "prediction and truth lengths differ");
    let pairs: Vec<_> = pred
        .iter()
        .zip(gt)
        .enumerate()
        .filter(|(i, _)| mask.is_none_or(|m| m[*i]))
        .map(|(_, (&p, &g))| (p.into(), g.into()))
        .collect();
    if pairs.is_empty() {
        return Err(Error::NoValidPixels);
    }
    Ok(pairs)
}

/// Mean of `|pred − gt| / gt` over the mask.
pub fn abs_rel<T: Copy + Into<f64>>(pred: &[T], gt: &[T], mask: Option<&[bool]>) -> Result<f64> {
    let pairs = masked(pred, gt, mask)?;
    Ok(pairs.iter().map(|(p, g)| (p - g).abs() / g).sum::<f64>() / pairs.len() as f64)
}

pub fn rmse<T: Copy + Into<f64>>(pred: &[T], gt: &[T], mask: Option<&[bool]>) -> Result<f64> {
    let pairs = masked(pred, gt, mask)?;
    Ok((pairs.iter().map(|(p, g)| (p - g).powi(2)).sum::<f64>() / pairs.len() as f64).sqrt())
}

/// Fraction of pixels with `max(pred/gt, gt/pred) < 1.25^k`.
pub fn delta_threshold<T: Copy + Into<f64>>(pred: &[T], gt: &[T], mask: Option<&[bool]>, k: i32) -> Result<f64> {
    let pairs = masked(pred, gt, mask)?;
    let thr = 1.25f64.powi(k);
    let hits = pairs.iter().filter(|(p, g)| (p / g).max(g / p) < thr).count();
    Ok(hits as f64 / pairs.len() as f64)
}

/// Valid-pixel mask for depth targets: finite and strictly positive.
pub fn depth_mask(gt: &[f32]) -> Vec<bool> {
    gt.iter().map(|&g| g.is_finite() && g > 0.0).collect()
}
