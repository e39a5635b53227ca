use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::keypoints::KeypointSet;
use crate::metrics::rasterize_polygon;

const BAND_SIGMA_PX: f64 = 1.5;
const BAND_GAIN: f64 = 0.85;
const POOL_LEVEL: f64 = 0.05;
const TISSUE_LEVEL: f64 = 0.3;
const BLUR_SIGMA_PX: f64 = 1.0;
const BLUR_RADIUS: usize = 2;
const ADDITIVE_SIGMA: f64 = 0.05;

fn segment_distance2(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * d[0] - p[0], a[1] + t * d[1] - p[1]];
    q[0] * q[0] + q[1] * q[1]
}

fn blur(img: &[f64], height: usize, width: usize) -> Vec<f64> {
    let r = BLUR_RADIUS as isize;
    let kernel: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * BLUR_SIGMA_PX * BLUR_SIGMA_PX)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; img.len()];
    for y in 0..height {
        for x in 0..width {
            tmp[y * width + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * img[y * width + clampi(x as isize + k as isize - r, width)])
                .sum();
        }
    }
    let mut out = vec![0.0; img.len()];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * tmp[clampi(y as isize + k as isize - r, height) * width + x])
                .sum();
        }
    }
    out
}

/// One grayscale frame in [0, 1]: a bright band along the ventricle wall
/// (the open polyline from basal point to basal point), a dark blood pool
/// inside, mid-gray tissue outside, then Rayleigh speckle, blur and
/// additive noise scaled by `noise_level`.
pub fn render_frame(kp: &KeypointSet, height: usize, width: usize, noise_level: f64, seed: u64) -> Vec<f64> {
    let px: Vec<[f64; 2]> = kp
        .points()
        .iter()
        .map(|p| [p[0] * width as f64, p[1] * height as f64])
        .collect();
    let inside = rasterize_polygon(&px, height, width);
    let reach2 = (4.0 * BAND_SIGMA_PX).powi(2);
    let mut img = vec![0.0; height * width];
    for y in 0..height {
        for x in 0..width {
            let c = [x as f64 + 0.5, y as f64 + 0.5];
            let d2 = px
                .windows(2)
                .map(|s| segment_distance2(c, s[0], s[1]))
                .fold(f64::INFINITY, f64::min);
            let band = if d2 < reach2 {
                (-d2 / (2.0 * BAND_SIGMA_PX * BAND_SIGMA_PX)).exp()
            } else {
                0.0
            };
            let bg = if inside[y * width + x] { POOL_LEVEL } else { TISSUE_LEVEL };
            img[y * width + x] = bg + BAND_GAIN * band;
        }
    }
    if noise_level > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Rayleigh amplitude with unit mean: sigma = sqrt(2 / pi)
        let sigma = (2.0 / std::f64::consts::PI).sqrt();
        for v in img.iter_mut() {
            let u: f64 = rng.random::<f64>();
            let speckle = sigma * (-2.0 * (1.0 - u).ln()).sqrt();
            *v *= 1.0 - noise_level + noise_level * speckle;
        }
        img = blur(&img, height, width);
        let normal = Normal::new(0.0, ADDITIVE_SIGMA * noise_level).expect("valid sigma");
        for v in img.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    } else {
        img = blur(&img, height, width);
    }
    img.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syndata::ShapeParams;

    #[test]
    fn band_ridge_follows_contour() {
        let shape = ShapeParams {
            half_width: 0.2,
            axis_length: 0.55,
            sharpness: 1.1,
            tilt: -0.15,
            base_center: [0.5, 0.82],
        };
        let kp = shape.contour();
        let (h, w) = (112, 112);
        let img = render_frame(&kp, h, w, 0.0, 0);
        let sample = |x: f64, y: f64| {
            let (xi, yi) = ((x - 0.5).round() as isize, (y - 0.5).round() as isize);
            if xi < 0 || yi < 0 || xi >= w as isize || yi >= h as isize {
                return 0.0;
            }
            img[yi as usize * w + xi as usize]
        };
        let pts = kp.points();
        for i in 2..40 {
            let (a, b) = (pts[i - 1], pts[i + 1]);
            let t = [(b[0] - a[0]) * w as f64, (b[1] - a[1]) * h as f64];
            let len = t[0].hypot(t[1]);
            let n = [-t[1] / len, t[0] / len];
            let c = [pts[i][0] * w as f64, pts[i][1] * h as f64];
            let best = (-8..=8)
                .map(|k| k as f64 * 0.5)
                .max_by(|&s, &r| sample(c[0] + s * n[0], c[1] + s * n[1]).total_cmp(&sample(c[0] + r * n[0], c[1] + r * n[1])))
                .unwrap();
            assert!(best.abs() <= 1.0, "point {i}: ridge offset {best}");
        }
    }

    #[test]
    fn noise_free_levels() {
        let kp = ShapeParams {
            half_width: 0.2,
            axis_length: 0.55,
            sharpness: 1.0,
            tilt: 0.0,
            base_center: [0.5, 0.82],
        }
        .contour();
        let img = render_frame(&kp, 112, 112, 0.0, 0);
        // ventricle centre is dark, image corner is tissue
        let centre = img[(0.6 * 112.0) as usize * 112 + 56];
        assert!(centre < 0.1, "{centre}");
        assert!((img[0] - TISSUE_LEVEL).abs() < 1e-9);
        assert!(img.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
