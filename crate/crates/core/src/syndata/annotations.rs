//! Annotation CSV: `case_id,frame_idx,phase,ef,x0,y0,…,x41,y41,split`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_string, write_atomic};
use crate::keypoints::{KeypointSet, N_KEYPOINTS};
use crate::syndata::SyntheticCase;

const FIXED_COLUMNS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "ED")]
    Ed,
    #[serde(rename = "ES")]
    Es,
    #[serde(rename = "other")]
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Ed => "ED",
            Phase::Es => "ES",
            Phase::Other => "other",
        })
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ED" => Ok(Phase::Ed),
            "ES" => Ok(Phase::Es),
            "other" => Ok(Phase::Other),
            _ => Err(format!("unknown phase '{s}'")),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split '{s}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub case_id: String,
    pub frame_idx: usize,
    pub phase: Phase,
    pub ef: f64,
    pub points: Vec<[f64; 2]>,
    pub split: Split,
}

/// Rounds to the 6 decimals the file stores, so records survive a write and
/// read unchanged.
fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

impl AnnotationRecord {
    pub fn keypoints(&self) -> Result<KeypointSet> {
        KeypointSet::standard(self.points.clone())
    }

    /// Records for a generated case: every frame when `all_frames`,
    /// otherwise only the ED and ES frames of each cycle.
    pub fn from_case(case: &SyntheticCase, case_id: &str, split: Split, all_frames: bool) -> Vec<Self> {
        let phase_of = |t: usize| {
            if case.cycles.iter().any(|c| c.0 == t) {
                Phase::Ed
            } else if case.cycles.iter().any(|c| c.1 == t) {
                Phase::Es
            } else {
                Phase::Other
            }
        };
        (0..case.keypoints.len())
            .filter(|&t| all_frames || phase_of(t) != Phase::Other)
            .map(|t| AnnotationRecord {
                case_id: case_id.to_string(),
                frame_idx: t,
                phase: phase_of(t),
                ef: round6(case.true_ef),
                points: case.keypoints[t].points().iter().map(|p| [round6(p[0]), round6(p[1])]).collect(),
                split,
            })
            .collect()
    }
}

pub fn header() -> Vec<String> {
    let mut h: Vec<String> = ["case_id", "frame_idx", "phase", "ef"].map(String::from).to_vec();
    for i in 0..N_KEYPOINTS {
        h.push(format!("x{i}"));
        h.push(format!("y{i}"));
    }
    h.push("split".into());
    h
}

pub fn annotations_to_string(records: &[AnnotationRecord]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Config(format!("CSV encoding failed: {e}"));
    w.write_record(header()).map_err(csv_err)?;
    for r in records {
        if r.points.len() != N_KEYPOINTS {
            return Err(Error::dim(format!(
                "record {}:{} has {} points",
                r.case_id,
                r.frame_idx,
                r.points.len()
            )));
        }
        let mut row = vec![r.case_id.clone(), r.frame_idx.to_string(), r.phase.to_string(), format!("{:.6}", r.ef)];
        for p in &r.points {
            row.push(format!("{:.6}", p[0]));
            row.push(format!("{:.6}", p[1]));
        }
        row.push(r.split.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("CSV encoding failed: {e}")))?;
    Ok(String::from_utf8(bytes).expect("CSV of UTF-8 fields"))
}

pub fn parse_annotations(text: &str) -> Result<Vec<AnnotationRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = Vec::new();
    let want = header();
    for (i, row) in reader.records().enumerate() {
        let line = i as u64 + 1;
        let row = row.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let bad = |message: String| Error::Parse { line, message };
        if i == 0 {
            if row.iter().ne(want.iter().map(String::as_str)) {
                return Err(bad("header does not match case_id,frame_idx,phase,ef,x0,y0,…,x41,y41,split".into()));
            }
            continue;
        }
        if row.len() != FIXED_COLUMNS + 2 * N_KEYPOINTS {
            return Err(bad(format!(
                "expected {} fields ({N_KEYPOINTS} coordinate pairs), found {}",
                FIXED_COLUMNS + 2 * N_KEYPOINTS,
                row.len()
            )));
        }
        let num = |j: usize| -> Result<f64> {
            let v: f64 = row[j].parse().map_err(|_| bad(format!("field {} is not a number: '{}'", j + 1, &row[j])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad(format!("field {} is not finite", j + 1)))
            }
        };
        let points = (0..N_KEYPOINTS)
            .map(|k| Ok([num(4 + 2 * k)?, num(5 + 2 * k)?]))
            .collect::<Result<Vec<_>>>()?;
        records.push(AnnotationRecord {
            case_id: row[0].to_string(),
            frame_idx: row[1].parse().map_err(|_| bad(format!("bad frame index '{}'", &row[1])))?,
            phase: row[2].parse().map_err(bad)?,
            ef: num(3)?,
            points,
            split: row[row.len() - 1].parse().map_err(bad)?,
        });
    }
    if records.is_empty() && text.trim().is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "empty annotation file".into(),
        });
    }
    Ok(records)
}

pub fn write_annotations(records: &[AnnotationRecord], path: &Path) -> Result<()> {
    write_atomic(path, annotations_to_string(records)?.as_bytes())
}

pub fn read_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    parse_annotations(&read_string(path)?)
}
