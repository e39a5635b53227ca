//! Segmentation and EF evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keypoints::KeypointSet;

/// Maximum edge length, in pixels, after contour densification for the
/// Hausdorff distance.
pub const HAUSDORFF_STEP_PX: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationScores {
    pub dice: f64,
    pub hausdorff: f64,
    pub mke: f64,
}

fn to_pixels(kp: &KeypointSet, height: usize, width: usize) -> Vec<[f64; 2]> {
    kp.points()
        .iter()
        .map(|p| [p[0] * width as f64, p[1] * height as f64])
        .collect()
}

/// x coordinate where edge `a → b` crosses the horizontal line `y`.
#[inline]
pub fn edge_crossing(a: [f64; 2], b: [f64; 2], y: f64) -> f64 {
    a[0] + (y - a[1]) / (b[1] - a[1]) * (b[0] - a[0])
}

/// Half-open crossing rule: an edge counts when exactly one endpoint lies
/// on or above (`≤`) the scanline.
#[inline]
pub fn edge_straddles(a: [f64; 2], b: [f64; 2], y: f64) -> bool {
    (a[1] <= y) != (b[1] <= y)
}

/// Even-odd fill of a closed polygon given in pixel coordinates; a pixel is
/// inside when its center is. Returns a row-major `height × width` mask.
pub fn rasterize_polygon(points: &[[f64; 2]], height: usize, width: usize) -> Vec<bool> {
    let mut mask = vec![false; height * width];
    let n = points.len();
    let mut xs = Vec::new();
    for row in 0..height {
        let yc = row as f64 + 0.5;
        xs.clear();
        for i in 0..n {
            let (a, b) = (points[i], points[(i + 1) % n]);
            if edge_straddles(a, b, yc) {
                xs.push(edge_crossing(a, b, yc));
            }
        }
        xs.sort_by(f64::total_cmp);
        let line = &mut mask[row * width..(row + 1) * width];
        for pair in xs.chunks_exact(2) {
            // centers in [x0, x1): an odd number of crossings lie to the right
            let first = (pair[0] - 0.5).ceil().max(0.0);
            let mut col = first as usize;
            while col < width && (col as f64 + 0.5) < pair[1] {
                if (col as f64 + 0.5) >= pair[0] {
                    line[col] = true;
                }
                col += 1;
            }
        }
    }
    mask
}

/// Mask of the contour polygon on a `height × width` pixel grid.
pub fn contour_mask(kp: &KeypointSet, height: usize, width: usize) -> Vec<bool> {
    rasterize_polygon(&to_pixels(kp, height, width), height, width)
}

/// `2|A∩B| / (|A|+|B|)` of the rasterized contours; 1.0 when both are empty.
pub fn dice(a: &KeypointSet, b: &KeypointSet, height: usize, width: usize) -> f64 {
    let ma = contour_mask(a, height, width);
    let mb = contour_mask(b, height, width);
    dice_masks(&ma, &mb)
}

pub fn dice_masks(a: &[bool], b: &[bool]) -> f64 {
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += usize::from(x && y);
        na += usize::from(x);
        nb += usize::from(y);
    }
    if na + nb == 0 {
        return 1.0;
    }
    2.0 * inter as f64 / (na + nb) as f64
}

/// Subdivides every edge of the closed contour so no piece is longer than
/// `max_step`.
pub fn densify(points: &[[f64; 2]], max_step: f64) -> Vec<[f64; 2]> {
    let n = points.len();
    let mut out = Vec::with_capacity(n * 4);
    for i in 0..n {
        let (a, b) = (points[i], points[(i + 1) % n]);
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        let pieces = ((len / max_step).ceil() as usize).max(1);
        for k in 0..pieces {
            let t = k as f64 / pieces as f64;
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    out
}

#[inline]
fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    dx * dx + dy * dy
}

/// Directed Hausdorff distance with the early-break scan: the inner loop
/// stops once a point of `b` is closer than the running maximum, since that
/// `a` can no longer raise it. The result is exact.
pub fn directed_hausdorff(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let mut cmax = 0.0f64;
    for &p in a {
        let mut cmin = f64::INFINITY;
        for &q in b {
            let d = dist2(p, q);
            if d < cmax {
                cmin = d;
                break;
            }
            cmin = cmin.min(d);
        }
        if cmin > cmax && cmin.is_finite() {
            cmax = cmin;
        }
    }
    cmax.sqrt()
}

/// Symmetric Hausdorff distance in pixels between the densified contours.
pub fn hausdorff(a: &KeypointSet, b: &KeypointSet, height: usize, width: usize) -> f64 {
    let da = densify(&to_pixels(a, height, width), HAUSDORFF_STEP_PX);
    let db = densify(&to_pixels(b, height, width), HAUSDORFF_STEP_PX);
    directed_hausdorff(&da, &db).max(directed_hausdorff(&db, &da))
}

/// Mean absolute coordinate difference in normalized units, in percent.
pub fn mean_keypoint_error(pred: &KeypointSet, gt: &KeypointSet) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::dim(format!(
            "MKE: {} predicted points vs {} ground-truth points",
            pred.len(),
            gt.len()
        )));
    }
    let total: f64 = pred
        .points()
        .iter()
        .zip(gt.points())
        .map(|(p, g)| (p[0] - g[0]).abs() + (p[1] - g[1]).abs())
        .sum();
    Ok(100.0 * total / (2 * pred.len()) as f64)
}

pub fn segmentation_scores(pred: &KeypointSet, gt: &KeypointSet, height: usize, width: usize) -> Result<SegmentationScores> {
    Ok(SegmentationScores {
        mke: mean_keypoint_error(pred, gt)?,
        dice: dice(pred, gt, height, width),
        hausdorff: hausdorff(pred, gt, height, width),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfMetrics {
    pub n: usize,
    pub mae: f64,
    pub rmse: f64,
    /// `None` when the ground truth has zero variance.
    pub r2: Option<f64>,
}

pub fn ef_metrics(pred: &[f64], gt: &[f64]) -> Result<EfMetrics> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::dim(format!(
            "EF metrics need equal nonempty lists, got {} and {}",
            pred.len(),
            gt.len()
        )));
    }
    let n = pred.len() as f64;
    let mae = pred.iter().zip(gt).map(|(p, g)| (p - g).abs()).sum::<f64>() / n;
    let ss_res: f64 = pred.iter().zip(gt).map(|(p, g)| (p - g) * (p - g)).sum();
    let mean = gt.iter().sum::<f64>() / n;
    let ss_tot: f64 = gt.iter().map(|g| (g - mean) * (g - mean)).sum();
    Ok(EfMetrics {
        n: pred.len(),
        mae,
        rmse: (ss_res / n).sqrt(),
        r2: (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot),
    })
}

/// Distribution summary for box plots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub max: f64,
}

/// Linear-interpolation percentile of sorted data, `q` in [0, 1].
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Population statistics; `None` for an empty slice.
pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some(Summary {
        count: values.len(),
        mean,
        std: var.sqrt(),
        min: sorted[0],
        p25: percentile(&sorted, 0.25),
        median: percentile(&sorted, 0.5),
        p75: percentile(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> KeypointSet {
        KeypointSet::new(vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]], 1, [0, 3]).unwrap()
    }

    #[test]
    fn rectangle_mask_counts_centres() {
        // 10..30 × 20..40 pixels on a 100 grid → 20 × 20 centres
        let m = contour_mask(&rect(0.1, 0.2, 0.3, 0.4), 100, 100);
        assert_eq!(m.iter().filter(|&&v| v).count(), 400);
    }

    #[test]
    fn dice_examples() {
        let a = rect(0.1, 0.1, 0.5, 0.5);
        assert_eq!(dice(&a, &a, 100, 100), 1.0);
        assert_eq!(dice(&a, &rect(0.6, 0.6, 0.9, 0.9), 100, 100), 0.0);
        // half overlap
        let b = rect(0.3, 0.1, 0.7, 0.5);
        assert!((dice(&a, &b, 100, 100) - 0.5).abs() < 1e-12);
        assert_eq!(dice_masks(&[false; 4], &[false; 4]), 1.0);
    }

    #[test]
    fn hausdorff_examples() {
        let a = rect(0.1, 0.1, 0.5, 0.5);
        assert_eq!(hausdorff(&a, &a, 100, 100), 0.0);
        let b = a.translated(0.03, 0.04);
        assert!((hausdorff(&a, &b, 100, 100) - 5.0).abs() < 1e-9);
    }

    #[test]
    fn densify_respects_step() {
        let pts = [[0.0, 0.0], [3.0, 0.0], [3.0, 1.2]];
        let d = densify(&pts, 0.5);
        let n = d.len();
        for i in 0..n {
            let (a, b) = (d[i], d[(i + 1) % n]);
            assert!((a[0] - b[0]).hypot(a[1] - b[1]) <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn mke_examples() {
        let a = rect(0.1, 0.1, 0.5, 0.5);
        assert_eq!(mean_keypoint_error(&a, &a).unwrap(), 0.0);
        let b = a.translated(0.023, 0.0);
        assert!((mean_keypoint_error(&b, &a).unwrap() - 1.15).abs() < 1e-9);
    }

    #[test]
    fn ef_metric_examples() {
        let gt = [0.3, 0.5, 0.7];
        let m = ef_metrics(&gt, &gt).unwrap();
        assert_eq!((m.mae, m.rmse, m.r2), (0.0, 0.0, Some(1.0)));
        let shifted: Vec<f64> = gt.iter().map(|g| g + 2.0).collect();
        let m = ef_metrics(&shifted, &gt).unwrap();
        assert!((m.mae - 2.0).abs() < 1e-12 && (m.rmse - 2.0).abs() < 1e-12);
        assert_eq!(ef_metrics(&[0.5, 0.5], &[0.4, 0.4]).unwrap().r2, None);
        assert!(ef_metrics(&[0.5], &[0.4, 0.4]).is_err());
    }

    #[test]
    fn summary_percentiles() {
        let s = summarize(&[4.0, 1.0, 3.0, 2.0, 5.0]).unwrap();
        assert_eq!((s.min, s.p25, s.median, s.p75, s.max), (1.0, 2.0, 3.0, 4.0, 5.0));
        assert!((s.std - 2f64.sqrt()).abs() < 1e-12);
        assert!(summarize(&[]).is_none());
    }
}
