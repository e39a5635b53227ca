//! Procedural synthetic echocardiography with exact ground truth.

mod annotations;
mod render;
mod split;
mod video;

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ef_from_keypoints;
use crate::keypoints::{KeypointSet, N_KEYPOINTS};

pub use annotations::{annotations_to_string, parse_annotations, read_annotations, write_annotations, AnnotationRecord, Phase, Split};
pub use render::render_frame;
pub use split::{split_dataset, SplitAssignment};
pub use video::{decode_video, encode_video, read_video, write_video, Video};

/// Disks used for ground-truth volumes.
pub const GT_N_DISKS: usize = 200;

/// Ventricle outline in normalized image coordinates at full (ED) size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    /// Half the basal width.
    pub half_width: f64,
    /// Base-to-apex distance.
    pub axis_length: f64,
    /// Exponent on the lateral profile; below 1 gives a fuller, blunter
    /// ventricle.
    pub sharpness: f64,
    /// Rotation of the long axis from vertical, radians.
    pub tilt: f64,
    pub base_center: [f64; 2],
}

impl ShapeParams {
    /// The 42-point contour: basal-left (0), apex (21), basal-right (41).
    pub fn contour(&self) -> KeypointSet {
        let (sin, cos) = self.tilt.sin_cos();
        // apex direction (image y points down) and lateral direction
        let u = [sin, -cos];
        let v = [cos, sin];
        let b = self.base_center;
        let points = (0..N_KEYPOINTS)
            .map(|i| {
                let phi = if i <= 21 {
                    PI - FRAC_PI_2 * i as f64 / 21.0
                } else {
                    FRAC_PI_2 - FRAC_PI_2 * (i - 21) as f64 / 20.0
                };
                let c = phi.cos();
                let lateral = self.half_width * c.signum() * c.abs().powf(self.sharpness);
                let axial = self.axis_length * phi.sin();
                [b[0] + axial * u[0] + lateral * v[0], b[1] + axial * u[1] + lateral * v[1]]
            })
            .collect();
        KeypointSet::standard(points).expect("42 finite points")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motion {
    /// Repeating cycles: cosine contraction over systole, cosine relaxation
    /// over diastole.
    Periodic,
    /// Control case: the ventricle shrinks steadily over the whole video,
    /// so the volume curve has no cycle.
    Monotone,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseParams {
    pub shape: ShapeParams,
    pub target_ef: f64,
    /// Frames per cardiac cycle.
    pub cycle_len: usize,
    /// Frames from ED to ES.
    pub systole_len: usize,
    /// Frame index of the first ED (the video may start mid-cycle).
    pub phase_offset: usize,
    pub n_frames: usize,
    /// Speckle and additive noise strength in [0, 1].
    pub noise_level: f64,
    pub motion: Motion,
    pub image_height: usize,
    pub image_width: usize,
}

/// Documented sampling ranges for [`random_params`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamRanges {
    pub half_width: (f64, f64),
    pub axis_length: (f64, f64),
    pub sharpness: (f64, f64),
    pub tilt: (f64, f64),
    pub base_x: (f64, f64),
    pub base_y: (f64, f64),
    pub ef: (f64, f64),
    pub cycle_len: (usize, usize),
    /// Systole as a fraction of the cycle.
    pub systole_fraction: (f64, f64),
    pub n_cycles: usize,
    pub noise_level: (f64, f64),
    pub image_size: usize,
}

impl Default for ParamRanges {
    fn default() -> Self {
        Self {
            half_width: (0.14, 0.22),
            axis_length: (0.45, 0.65),
            sharpness: (0.8, 1.3),
            tilt: (-0.25, 0.25),
            base_x: (0.45, 0.55),
            base_y: (0.78, 0.85),
            ef: (0.2, 0.8),
            cycle_len: (16, 64),
            systole_fraction: (0.35, 0.45),
            n_cycles: 3,
            noise_level: (0.3, 0.7),
            image_size: 112,
        }
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Draws case parameters from `ranges`; deterministic in `seed`.
pub fn random_params(seed: u64, ranges: &ParamRanges) -> CaseParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_ca5e);
    let shape = ShapeParams {
        half_width: uniform(&mut rng, ranges.half_width),
        axis_length: uniform(&mut rng, ranges.axis_length),
        sharpness: uniform(&mut rng, ranges.sharpness),
        tilt: uniform(&mut rng, ranges.tilt),
        base_center: [uniform(&mut rng, ranges.base_x), uniform(&mut rng, ranges.base_y)],
    };
    let target_ef = uniform(&mut rng, ranges.ef);
    let (c_lo, c_hi) = ranges.cycle_len;
    let cycle_len = rng.random_range(c_lo..=c_hi.max(c_lo));
    let frac = uniform(&mut rng, ranges.systole_fraction);
    let systole_len = ((cycle_len as f64 * frac).round() as usize).clamp(1, cycle_len - 1);
    // ED no later than cycle_len − systole_len, so every cycle is complete
    let phase_offset = rng.random_range(0..cycle_len - systole_len);
    CaseParams {
        shape,
        target_ef,
        cycle_len,
        systole_len,
        phase_offset,
        n_frames: cycle_len * ranges.n_cycles.max(1),
        noise_level: uniform(&mut rng, ranges.noise_level),
        motion: Motion::Periodic,
        image_height: ranges.image_size,
        image_width: ranges.image_size,
    }
}

impl CaseParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Generation(m));
        if !(0.2..=0.8).contains(&self.target_ef) {
            return bad(format!("target EF {} outside [0.2, 0.8]", self.target_ef));
        }
        if self.motion == Motion::Periodic {
            if !(16..=64).contains(&self.cycle_len) {
                return bad(format!("cycle length {} outside [16, 64]", self.cycle_len));
            }
            if self.systole_len == 0 || self.systole_len >= self.cycle_len {
                return bad(format!(
                    "systole of {} frames does not fit a {}-frame cycle",
                    self.systole_len, self.cycle_len
                ));
            }
        }
        if self.n_frames < 2 {
            return bad("a video needs at least 2 frames".into());
        }
        if !(0.0..=1.0).contains(&self.noise_level) {
            return bad(format!("noise level {} outside [0, 1]", self.noise_level));
        }
        if self.image_height < 16 || self.image_width < 16 {
            return bad("image must be at least 16×16".into());
        }
        let s = &self.shape;
        if !(s.half_width > 0.0 && s.axis_length > 0.0 && s.sharpness > 0.0) {
            return bad("shape dimensions must be positive".into());
        }
        let outside = s
            .contour()
            .points()
            .iter()
            .flatten()
            .any(|&v| !(0.0..=1.0).contains(&v));
        if outside {
            return bad("ventricle does not fit inside the image".into());
        }
        Ok(())
    }

    /// ES scale factor: volumes scale with the cube of a uniform scaling.
    pub fn es_scale(&self) -> f64 {
        (1.0 - self.target_ef).cbrt()
    }

    /// Contour scale at frame `t`.
    pub fn scale_at(&self, t: usize) -> f64 {
        let s_es = self.es_scale();
        match self.motion {
            Motion::Monotone => {
                let x = t as f64 / (self.n_frames - 1) as f64;
                1.0 - (1.0 - s_es) * x
            }
            Motion::Periodic => {
                let p = self.cycle_len;
                let tau = (t + p - self.phase_offset % p) % p;
                let depth = if tau <= self.systole_len {
                    0.5 * (1.0 - (PI * tau as f64 / self.systole_len as f64).cos())
                } else {
                    let d = (p - self.systole_len) as f64;
                    0.5 * (1.0 + (PI * (tau - self.systole_len) as f64 / d).cos())
                };
                1.0 - (1.0 - s_es) * depth
            }
        }
    }

    /// Annotated (ED, ES) frame pairs fully inside the video.
    pub fn cycles(&self) -> Vec<(usize, usize)> {
        if self.motion == Motion::Monotone {
            return Vec::new();
        }
        let mut out = Vec::new();
        let mut ed = self.phase_offset % self.cycle_len;
        while ed + self.systole_len < self.n_frames {
            out.push((ed, ed + self.systole_len));
            ed += self.cycle_len;
        }
        out
    }
}

/// A generated video with its analytic annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCase {
    pub seed: u64,
    pub params: CaseParams,
    pub video: Video,
    /// One contour per frame.
    pub keypoints: Vec<KeypointSet>,
    /// (ED, ES) frame indices per annotated cycle.
    pub cycles: Vec<(usize, usize)>,
    /// EF of the ES/ED contours by the method of disks with
    /// [`GT_N_DISKS`] disks.
    pub true_ef: f64,
}

impl SyntheticCase {
    pub fn ed_indices(&self) -> Vec<usize> {
        self.cycles.iter().map(|c| c.0).collect()
    }

    pub fn es_indices(&self) -> Vec<usize> {
        self.cycles.iter().map(|c| c.1).collect()
    }
}

/// Renders a case. The seed drives only the noise; geometry comes from
/// `params`, so changing the noise level never changes annotations.
pub fn generate_case(seed: u64, params: &CaseParams) -> Result<SyntheticCase> {
    params.validate()?;
    let ed_contour = params.shape.contour();
    let center = ed_contour.base_midpoint();
    let keypoints: Vec<KeypointSet> = (0..params.n_frames)
        .map(|t| ed_contour.scaled_about(center, params.scale_at(t)))
        .collect();
    let es_contour = ed_contour.scaled_about(center, params.es_scale());
    let true_ef = ef_from_keypoints(&ed_contour, &es_contour, GT_N_DISKS)?.ef;
    if (true_ef - params.target_ef).abs() > 1e-3 {
        return Err(Error::Generation(format!(
            "calibrated EF {true_ef} misses target {}",
            params.target_ef
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames: Vec<Arc<[u8]>> = keypoints
        .iter()
        .map(|kp| {
            let frame_seed: u64 = rng.random();
            let img = render_frame(kp, params.image_height, params.image_width, params.noise_level, frame_seed);
            img.iter().map(|&v| (v * 255.0).round() as u8).collect::<Vec<u8>>().into()
        })
        .collect();
    Ok(SyntheticCase {
        seed,
        cycles: params.cycles(),
        video: Video::new(params.image_height, params.image_width, frames)?,
        keypoints,
        true_ef,
        params: *params,
    })
}

/// `random_params(seed)` then `generate_case(seed)`.
pub fn generate_random_case(seed: u64, ranges: &ParamRanges) -> Result<SyntheticCase> {
    generate_case(seed, &random_params(seed, ranges))
}

/// Mean method-of-disks EF of the stored contours, for checking cases.
pub fn keypoint_ef(case: &SyntheticCase, n_disks: usize) -> Result<Option<f64>> {
    let Some(&(ed, es)) = case.cycles.first() else {
        return Ok(None);
    };
    Ok(Some(ef_from_keypoints(&case.keypoints[ed], &case.keypoints[es], n_disks)?.ef))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{method_of_disks_volume, polygon_area};

    fn params(ef: f64, noise: f64) -> CaseParams {
        CaseParams {
            shape: ShapeParams {
                half_width: 0.18,
                axis_length: 0.55,
                sharpness: 1.0,
                tilt: 0.1,
                base_center: [0.5, 0.8],
            },
            target_ef: ef,
            cycle_len: 20,
            systole_len: 8,
            phase_offset: 3,
            n_frames: 40,
            noise_level: noise,
            motion: Motion::Periodic,
            image_height: 64,
            image_width: 64,
        }
    }

    #[test]
    fn contour_landmarks() {
        let kp = params(0.6, 0.0).shape.contour();
        let apex = kp.apex();
        let base = kp.base_midpoint();
        assert!(apex[1] < base[1]);
        assert!((base[0] - 0.5).abs() < 1e-12 && (base[1] - 0.8).abs() < 1e-12);
        assert!(polygon_area(&kp).is_ok());
    }

    #[test]
    fn noiseless_ef_is_calibrated() {
        let case = generate_case(1, &params(0.6, 0.0)).unwrap();
        assert!((case.true_ef - 0.6).abs() < 1e-3);
        assert!((keypoint_ef(&case, GT_N_DISKS).unwrap().unwrap() - 0.6).abs() < 1e-3);
    }

    #[test]
    fn same_seed_same_case() {
        let a = generate_case(9, &params(0.5, 0.5)).unwrap();
        let b = generate_case(9, &params(0.5, 0.5)).unwrap();
        assert_eq!(a, b);
        let c = generate_case(10, &params(0.5, 0.5)).unwrap();
        assert_ne!(a.video, c.video);
    }

    #[test]
    fn ed_and_es_are_area_extremes() {
        let case = generate_case(2, &params(0.45, 0.3)).unwrap();
        let areas: Vec<f64> = case.keypoints.iter().map(|k| polygon_area(k).unwrap()).collect();
        let cycle = case.params.cycle_len;
        for &(ed, es) in &case.cycles {
            let lo = ed.saturating_sub(cycle / 2);
            let hi = (ed + cycle / 2).min(areas.len());
            assert!(areas[lo..hi].iter().all(|&a| a <= areas[ed] + 1e-12));
            let lo = es.saturating_sub(cycle / 2);
            let hi = (es + cycle / 2).min(areas.len());
            assert!(areas[lo..hi].iter().all(|&a| a >= areas[es] - 1e-12));
        }
        assert_eq!(case.cycles, vec![(3, 11), (23, 31)]);
    }

    #[test]
    fn noise_changes_pixels_only() {
        let quiet = generate_case(4, &params(0.5, 0.0)).unwrap();
        let loud = generate_case(4, &params(0.5, 0.9)).unwrap();
        assert_eq!(quiet.keypoints, loud.keypoints);
        assert_eq!(quiet.cycles, loud.cycles);
        assert_ne!(quiet.video, loud.video);
    }

    #[test]
    fn unreachable_parameters_fail() {
        let mut p = params(0.95, 0.0);
        assert!(matches!(generate_case(0, &p), Err(Error::Generation(_))));
        p.target_ef = 0.5;
        p.shape.axis_length = 0.95;
        assert!(matches!(generate_case(0, &p), Err(Error::Generation(_))));
    }

    #[test]
    fn monotone_case_has_no_cycles() {
        let mut p = params(0.5, 0.2);
        p.motion = Motion::Monotone;
        let case = generate_case(0, &p).unwrap();
        assert!(case.cycles.is_empty());
        let v: Vec<f64> = case
            .keypoints
            .iter()
            .map(|k| method_of_disks_volume(k, 20).unwrap().volume)
            .collect();
        assert!(v.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn random_params_fit_in_image() {
        let ranges = ParamRanges::default();
        for seed in 0..200 {
            let p = random_params(seed, &ranges);
            p.validate().unwrap();
        }
    }
}
