//! Contour geometry: area, long axis, method-of-disks volume and ejection
//! fraction.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keypoints::KeypointSet;

pub const DEFAULT_N_DISKS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LongAxis {
    pub apex: [f64; 2],
    pub base_midpoint: [f64; 2],
    pub length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeEstimate {
    pub volume: f64,
    pub n_disks: usize,
    pub long_axis_length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EfStatus {
    Ok,
    /// ESV exceeded EDV; the (negative) EF is still returned.
    EsvExceedsEdv,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfEstimate {
    pub ef: f64,
    pub status: EfStatus,
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn on_segment(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> bool {
    r[0] >= p[0].min(q[0]) && r[0] <= p[0].max(q[0]) && r[1] >= p[1].min(q[1]) && r[1] <= p[1].max(q[1])
}

fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// True when no two non-adjacent edges of the closed polygon meet.
pub fn is_simple_polygon(points: &[[f64; 2]]) -> bool {
    let n = points.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let (a1, a2) = (points[i], points[(i + 1) % n]);
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_intersect(a1, a2, points[j], points[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

fn shoelace(points: &[[f64; 2]]) -> f64 {
    let n = points.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (points[i], points[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    twice.abs() / 2.0
}

/// Absolute area of the closed contour (the base is closed by the edge from
/// the last point back to the first).
pub fn polygon_area(kp: &KeypointSet) -> Result<f64> {
    if !is_simple_polygon(kp.points()) {
        return Err(Error::DegenerateContour("contour is self-intersecting".into()));
    }
    Ok(shoelace(kp.points()))
}

pub fn long_axis(kp: &KeypointSet) -> Result<LongAxis> {
    let apex = kp.apex();
    let base_midpoint = kp.base_midpoint();
    let length = (apex[0] - base_midpoint[0]).hypot(apex[1] - base_midpoint[1]);
    if !(length > 0.0) {
        return Err(Error::DegenerateContour(
            "apex coincides with the base midpoint".into(),
        ));
    }
    Ok(LongAxis {
        apex,
        base_midpoint,
        length,
    })
}

/// Monoplane method of disks. The long axis is cut into `n_disks` slabs of
/// equal height; at the middle of each slab the contour's chord
/// perpendicular to the axis is taken as a disk diameter (outermost pair of
/// crossings when the contour folds).
pub fn method_of_disks_volume(kp: &KeypointSet, n_disks: usize) -> Result<VolumeEstimate> {
    if n_disks == 0 {
        return Err(Error::DegenerateContour("n_disks must be positive".into()));
    }
    let axis = long_axis(kp)?;
    let b = axis.base_midpoint;
    let u = [(axis.apex[0] - b[0]) / axis.length, (axis.apex[1] - b[1]) / axis.length];
    let v = [-u[1], u[0]];
    // (axial, lateral) coordinates of every vertex
    let local: Vec<(f64, f64)> = kp
        .points()
        .iter()
        .map(|p| {
            let d = [p[0] - b[0], p[1] - b[1]];
            (d[0] * u[0] + d[1] * u[1], d[0] * v[0] + d[1] * v[1])
        })
        .collect();
    let n = local.len();
    let h = axis.length / n_disks as f64;
    let mut volume = 0.0;
    for k in 0..n_disks {
        let level = (k as f64 + 0.5) * h;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut crossings = 0usize;
        for i in 0..n {
            let (a0, l0) = local[i];
            let (a1, l1) = local[(i + 1) % n];
            if (a0 - level) * (a1 - level) > 0.0 || a0 == a1 {
                continue;
            }
            let t = (level - a0) / (a1 - a0);
            let lateral = l0 + t * (l1 - l0);
            lo = lo.min(lateral);
            hi = hi.max(lateral);
            crossings += 1;
        }
        if crossings < 2 {
            return Err(Error::DegenerateContour(format!(
                "no chord at disk {k} of {n_disks} along the long axis"
            )));
        }
        let radius = (hi - lo) / 2.0;
        volume += PI * radius * radius * h;
    }
    Ok(VolumeEstimate {
        volume,
        n_disks,
        long_axis_length: axis.length,
    })
}

/// `EF = (EDV − ESV) / EDV`.
pub fn ef_from_volumes(edv: f64, esv: f64) -> Result<EfEstimate> {
    if !(edv > 0.0) || !esv.is_finite() {
        return Err(Error::DegenerateVolume(format!(
            "EDV must be positive and finite (EDV {edv}, ESV {esv})"
        )));
    }
    let ef = (edv - esv) / edv;
    let status = if esv > edv { EfStatus::EsvExceedsEdv } else { EfStatus::Ok };
    Ok(EfEstimate { ef, status })
}

pub fn ef_from_keypoints(ed: &KeypointSet, es: &KeypointSet, n_disks: usize) -> Result<EfEstimate> {
    let edv = method_of_disks_volume(ed, n_disks)?.volume;
    let esv = method_of_disks_volume(es, n_disks)?.volume;
    ef_from_volumes(edv, esv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> KeypointSet {
        KeypointSet::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]], 2, [0, 1]).unwrap()
    }

    #[test]
    fn simple_areas() {
        assert!((polygon_area(&square()).unwrap() - 1.0).abs() < 1e-15);
        let tri = KeypointSet::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], 2, [0, 1]).unwrap();
        assert!((polygon_area(&tri).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn regular_polygon_area_matches_closed_form() {
        let n = 42;
        let r = 0.4;
        let pts = (0..n)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / n as f64;
                [0.5 + r * a.cos(), 0.5 + r * a.sin()]
            })
            .collect();
        let kp = KeypointSet::new(pts, 21, [0, 41]).unwrap();
        let expect = 0.5 * n as f64 * r * r * (2.0 * PI / n as f64).sin();
        assert!((polygon_area(&kp).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn bowtie_is_degenerate() {
        let kp = KeypointSet::new(vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]], 2, [0, 1]).unwrap();
        assert!(matches!(polygon_area(&kp), Err(Error::DegenerateContour(_))));
    }

    #[test]
    fn long_axis_example() {
        let kp = KeypointSet::new(vec![[0.3, 0.9], [0.5, 0.1], [0.7, 0.9]], 1, [0, 2]).unwrap();
        let ax = long_axis(&kp).unwrap();
        assert!((ax.base_midpoint[0] - 0.5).abs() < 1e-15);
        assert!((ax.base_midpoint[1] - 0.9).abs() < 1e-15);
        assert!((ax.length - 0.8).abs() < 1e-12);

        let flat = KeypointSet::new(vec![[0.3, 0.5], [0.5, 0.5], [0.7, 0.5]], 1, [0, 2]).unwrap();
        assert!(matches!(long_axis(&flat), Err(Error::DegenerateContour(_))));
    }

    #[test]
    fn ef_formula() {
        let e = ef_from_volumes(100.0, 40.0).unwrap();
        assert!((e.ef - 0.6).abs() < 1e-15);
        assert_eq!(e.status, EfStatus::Ok);
        assert_eq!(ef_from_volumes(50.0, 50.0).unwrap().ef, 0.0);
        let neg = ef_from_volumes(40.0, 50.0).unwrap();
        assert!(neg.ef < 0.0);
        assert_eq!(neg.status, EfStatus::EsvExceedsEdv);
        assert!(matches!(ef_from_volumes(0.0, 1.0), Err(Error::DegenerateVolume(_))));
    }
}
