//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use echographs::syndata::ShapeParams;
use echographs::KeypointSet;
use rand::Rng;

/// Random star-shaped polygon in normalized coordinates.
pub fn random_star<R: Rng>(rng: &mut R, n: usize) -> KeypointSet {
    let c = [rng.random_range(0.3..0.7), rng.random_range(0.3..0.7)];
    let r0 = rng.random_range(0.1..0.25);
    let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    angles.sort_by(f64::total_cmp);
    let points = angles
        .iter()
        .map(|t| {
            let r = r0 * rng.random_range(0.6..1.0);
            [c[0] + r * t.cos(), c[1] + r * t.sin()]
        })
        .collect();
    KeypointSet::new(points, n / 2, [0, n - 1]).unwrap()
}

/// Crossing-number point-in-polygon test at every pixel center.
pub fn ray_cast_mask(kp: &KeypointSet, height: usize, width: usize) -> Vec<bool> {
    let poly: Vec<[f64; 2]> = kp
        .points()
        .iter()
        .map(|p| [p[0] * width as f64, p[1] * height as f64])
        .collect();
    let mut mask = Vec::with_capacity(height * width);
    for row in 0..height {
        for col in 0..width {
            let (x, y) = (col as f64 + 0.5, row as f64 + 0.5);
            let mut inside = false;
            let mut j = poly.len() - 1;
            for i in 0..poly.len() {
                let (pi, pj) = (poly[i], poly[j]);
                if (pi[1] > y) != (pj[1] > y) && x < (pj[0] - pi[0]) * (y - pi[1]) / (pj[1] - pi[1]) + pi[0] {
                    inside = !inside;
                }
                j = i;
            }
            mask.push(inside);
        }
    }
    mask
}

pub fn pixel_dice(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let total = a.iter().filter(|x| **x).count() + b.iter().filter(|x| **x).count();
    if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    }
}

fn dense_pixels(kp: &KeypointSet, height: usize, width: usize, step: f64) -> Vec<[f64; 2]> {
    let p: Vec<[f64; 2]> = kp
        .points()
        .iter()
        .map(|q| [q[0] * width as f64, q[1] * height as f64])
        .collect();
    let mut out = Vec::new();
    for i in 0..p.len() {
        let (a, b) = (p[i], p[(i + 1) % p.len()]);
        let pieces = (((b[0] - a[0]).hypot(b[1] - a[1]) / step).ceil() as usize).max(1);
        for k in 0..pieces {
            let t = k as f64 / pieces as f64;
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    out
}

/// Full double loop over both densified contours.
pub fn brute_hausdorff(a: &KeypointSet, b: &KeypointSet, height: usize, width: usize, step: f64) -> f64 {
    let da = dense_pixels(a, height, width, step);
    let db = dense_pixels(b, height, width, step);
    let directed = |x: &[[f64; 2]], y: &[[f64; 2]]| {
        x.iter()
            .map(|p| {
                y.iter()
                    .map(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    directed(&da, &db).max(directed(&db, &da))
}

/// (MAE, RMSE, R²) computed with compensated sums.
pub fn ef_reference(pred: &[f64], gt: &[f64]) -> (f64, f64, f64) {
    fn kahan(it: impl Iterator<Item = f64>) -> f64 {
        let (mut s, mut c) = (0.0f64, 0.0f64);
        for v in it {
            let y = v - c;
            let t = s + y;
            c = (t - s) - y;
            s = t;
        }
        s
    }
    let n = pred.len() as f64;
    let mae = kahan(pred.iter().zip(gt).map(|(p, g)| (p - g).abs())) / n;
    let sse = kahan(pred.iter().zip(gt).map(|(p, g)| (p - g).powi(2)));
    let mean = kahan(gt.iter().copied()) / n;
    let sst = kahan(gt.iter().map(|g| (g - mean).powi(2)));
    (mae, (sse / n).sqrt(), 1.0 - sse / sst)
}

/// Closed ellipse traced from the bottom of the long axis around and back,
/// so the two basal points coincide at the axis end and the apex sits at
/// the opposite end. `a` is the semi-axis along the long axis.
pub fn ellipse(a: f64, b: f64, n: usize) -> KeypointSet {
    let c = [0.5, 0.5];
    let points: Vec<[f64; 2]> = (0..=n)
        .map(|i| {
            let t = -PI / 2.0 + 2.0 * PI * i as f64 / n as f64;
            [c[0] + b * t.cos(), c[1] + a * t.sin()]
        })
        .collect();
    KeypointSet::new(points, n / 2, [0, n]).unwrap()
}

/// Default-sized synthetic ventricle contour.
pub fn ventricle(tilt: f64) -> KeypointSet {
    ShapeParams {
        half_width: 0.18,
        axis_length: 0.55,
        sharpness: 1.1,
        tilt,
        base_center: [0.5, 0.8],
    }
    .contour()
}
