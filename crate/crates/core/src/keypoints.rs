use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Keypoints per contour in the annotation convention: 40 wall points plus
/// the apex and two basal (mitral annulus) points.
pub const N_KEYPOINTS: usize = 42;
/// Index 0 is the first basal point; indices run clockwise through the apex.
pub const APEX_INDEX: usize = 21;
pub const BASAL_INDICES: [usize; 2] = [0, 41];

/// Ordered contour points in normalized image coordinates (`x` right, `y`
/// down, both in [0, 1] for in-image points).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    points: Vec<[f64; 2]>,
    apex_index: usize,
    basal_indices: [usize; 2],
}

impl KeypointSet {
    pub fn new(points: Vec<[f64; 2]>, apex_index: usize, basal_indices: [usize; 2]) -> Result<Self> {
        let n = points.len();
        if n < 3 {
            return Err(Error::dim(format!("a contour needs at least 3 points, got {n}")));
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("keypoint coordinates".into()));
        }
        let [b0, b1] = basal_indices;
        if apex_index >= n || b0 >= n || b1 >= n {
            return Err(Error::dim(format!(
                "landmark indices ({apex_index}, {b0}, {b1}) outside {n} points"
            )));
        }
        if apex_index == b0 || apex_index == b1 || b0 == b1 {
            return Err(Error::dim("apex and basal indices must be distinct"));
        }
        Ok(Self {
            points,
            apex_index,
            basal_indices,
        })
    }

    /// 42-point contour with the standard landmark indices.
    pub fn standard(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() != N_KEYPOINTS {
            return Err(Error::dim(format!(
                "expected {N_KEYPOINTS} keypoints, got {}",
                points.len()
            )));
        }
        Self::new(points, APEX_INDEX, BASAL_INDICES)
    }

    /// Builds a set from interleaved `x0, y0, x1, y1, …` values.
    pub fn from_flat(flat: &[f64], apex_index: usize, basal_indices: [usize; 2]) -> Result<Self> {
        if flat.len() % 2 != 0 {
            return Err(Error::dim("odd number of coordinates"));
        }
        let points = flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        Self::new(points, apex_index, basal_indices)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p[0], p[1]]).collect()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn apex_index(&self) -> usize {
        self.apex_index
    }

    pub fn basal_indices(&self) -> [usize; 2] {
        self.basal_indices
    }

    pub fn apex(&self) -> [f64; 2] {
        self.points[self.apex_index]
    }

    pub fn base_midpoint(&self) -> [f64; 2] {
        let [a, b] = self.basal_indices.map(|i| self.points[i]);
        [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0]
    }

    /// Applies `f` to every point, keeping landmark indices.
    pub fn map_points(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        Self {
            points: self.points.iter().map(|&p| f(p)).collect(),
            apex_index: self.apex_index,
            basal_indices: self.basal_indices,
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        self.map_points(|[x, y]| [x + dx, y + dy])
    }

    pub fn scaled_about(&self, center: [f64; 2], s: f64) -> Self {
        self.map_points(|[x, y]| [center[0] + s * (x - center[0]), center[1] + s * (y - center[1])])
    }

    pub fn rotated_about(&self, center: [f64; 2], angle: f64) -> Self {
        let (sin, cos) = angle.sin_cos();
        self.map_points(|[x, y]| {
            let (dx, dy) = (x - center[0], y - center[1]);
            [center[0] + cos * dx - sin * dy, center[1] + sin * dx + cos * dy]
        })
    }
}
