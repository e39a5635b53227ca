//! Python bindings: checkpoints and inference, contour geometry, metrics,
//! peak detection and the synthetic data generator.

use std::path::PathBuf;
use std::sync::Arc;

use echographs::geometry;
use echographs::metrics;
use echographs::model::{load_checkpoint, save_checkpoint, Mode, Model, ModelConfig};
use echographs::syndata::{generate_random_case, ParamRanges, Video};
use echographs::temporal::{self, PeakConfig};
use echographs::KeypointSet;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: echographs::Error) -> PyErr {
    match e {
        echographs::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Contour from points; 42-point contours get the standard landmarks.
fn contour(points: Vec<[f64; 2]>, apex: Option<usize>, basal: Option<[usize; 2]>) -> PyResult<KeypointSet> {
    let r = match (apex, basal) {
        (Some(a), Some(b)) => KeypointSet::new(points, a, b),
        (None, None) => KeypointSet::standard(points),
        _ => return Err(PyValueError::new_err("give both apex and basal indices or neither")),
    };
    r.map_err(py_err)
}

fn unit(pixels: &[u8]) -> Vec<f32> {
    pixels.iter().map(|&p| p as f32 / 255.0).collect()
}

fn parse_mode(name: &str) -> PyResult<Mode> {
    match name {
        "single_frame" => Ok(Mode::SingleFrame),
        "multi_frame_known" => Ok(Mode::MultiFrameKnown),
        "multi_frame_classifier" => Ok(Mode::MultiFrameClassifier),
        _ => Err(PyValueError::new_err(format!("unknown mode {name:?}"))),
    }
}

fn video(frames: Vec<Vec<u8>>, height: usize, width: usize) -> PyResult<Video> {
    let frames: Vec<Arc<[u8]>> = frames.into_iter().map(Into::into).collect();
    Video::new(height, width, frames).map_err(py_err)
}

/// A trained or freshly initialized network.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    inner: Model,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (mode, seed = 0, image_size = 112, clip_len = 16, spiral_len = 5))]
    fn new(mode: &str, seed: u64, image_size: usize, clip_len: usize, spiral_len: usize) -> PyResult<Self> {
        let cfg = ModelConfig {
            mode: parse_mode(mode)?,
            image_height: image_size,
            image_width: image_size,
            clip_len,
            spiral_len,
            ..ModelConfig::default()
        };
        Ok(Self {
            inner: Model::new(cfg, seed).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_checkpoint(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.inner, &path).map_err(py_err)
    }

    #[getter]
    fn mode(&self) -> &'static str {
        self.inner.config().mode.name()
    }

    #[getter]
    fn image_size(&self) -> (usize, usize) {
        let c = self.inner.config();
        (c.image_height, c.image_width)
    }

    #[getter]
    fn clip_len(&self) -> usize {
        self.inner.config().clip_len
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        use echographs::layerkit::Params;
        self.inner.parameter_count()
    }

    #[getter]
    fn analytic_parameter_count(&self) -> usize {
        self.inner.config().analytic_parameter_count()
    }

    /// Contour for one 8-bit grayscale frame (row-major bytes).
    fn predict_frame(&self, py: Python<'_>, pixels: Vec<u8>) -> PyResult<Vec<[f64; 2]>> {
        let image = unit(&pixels);
        let kp = py.detach(|| self.inner.predict_frame(&image)).map_err(py_err)?;
        Ok(kp.points().to_vec())
    }

    /// ED/ES contours and EF for a clip of `clip_len` frames.
    #[pyo3(signature = (frames, n_disks = 20))]
    fn predict_clip<'py>(&self, py: Python<'py>, frames: Vec<Vec<u8>>, n_disks: usize) -> PyResult<Bound<'py, PyDict>> {
        let frames: Vec<Vec<f32>> = frames.iter().map(|f| unit(f)).collect();
        let refs: Vec<&[f32]> = frames.iter().map(Vec::as_slice).collect();
        let p = py.detach(|| self.inner.predict_clip(&refs, n_disks)).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("ef_regressed", p.ef_regressed)?;
        d.set_item("ef_from_keypoints", p.ef_from_keypoints)?;
        d.set_item("ed_keypoints", p.ed_keypoints.points().to_vec())?;
        d.set_item("es_keypoints", p.es_keypoints.points().to_vec())?;
        d.set_item("ed_likelihood", p.ed_likelihood)?;
        d.set_item("es_likelihood", p.es_likelihood)?;
        Ok(d)
    }

    /// Classifier-mode EF averaged over sliding windows of a whole video.
    #[pyo3(signature = (frames, stride = None, n_disks = 20))]
    fn sliding_window_ef<'py>(
        &self,
        py: Python<'py>,
        frames: Vec<Vec<u8>>,
        stride: Option<usize>,
        n_disks: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let (h, w) = self.image_size();
        let v = video(frames, h, w)?;
        let window = self.clip_len();
        let stride = stride.unwrap_or((window / 2).max(1));
        let r = py
            .detach(|| temporal::sliding_window_ef(&self.inner, &v, window, stride, n_disks))
            .map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("mean_ef", r.mean_ef)?;
        d.set_item("window_starts", r.windows.iter().map(|w| w.start).collect::<Vec<_>>())?;
        d.set_item("ef_regressed", r.windows.iter().map(|w| w.ef_regressed).collect::<Vec<_>>())?;
        d.set_item("cycle_pairs", r.windows.iter().map(|w| (w.ed_index, w.es_index)).collect::<Vec<_>>())?;
        Ok(d)
    }
}

/// Two-stage whole-video EF: per-frame contours, volume peaks, then the
/// known-ED/ES clip model on every detected cycle. `mean_ef` is `None`
/// when no cycle is found.
#[pyfunction]
#[pyo3(signature = (single, multi, frames, smoothing = 3, min_separation = 5, min_prominence = 0.25, n_disks = 20))]
fn two_stage_ef<'py>(
    py: Python<'py>,
    single: &PyModel,
    multi: &PyModel,
    frames: Vec<Vec<u8>>,
    smoothing: usize,
    min_separation: usize,
    min_prominence: f64,
    n_disks: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let (h, w) = single.image_size();
    let v = video(frames, h, w)?;
    let peaks = PeakConfig {
        smoothing,
        min_separation,
        min_prominence,
    };
    let r = py
        .detach(|| temporal::two_stage_ef(&single.inner, &multi.inner, &v, peaks, n_disks))
        .map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("mean_ef", r.mean_ef)?;
    d.set_item("cycle_pairs", r.cycles.iter().map(|c| (c.ed_index, c.es_index)).collect::<Vec<_>>())?;
    d.set_item("ef_regressed", r.cycles.iter().map(|c| c.ef_regressed).collect::<Vec<_>>())?;
    d.set_item("volumes", r.volumes)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (points, n_disks = 20, apex = None, basal = None))]
fn disk_volume(points: Vec<[f64; 2]>, n_disks: usize, apex: Option<usize>, basal: Option<[usize; 2]>) -> PyResult<f64> {
    let kp = contour(points, apex, basal)?;
    Ok(geometry::method_of_disks_volume(&kp, n_disks).map_err(py_err)?.volume)
}

#[pyfunction]
#[pyo3(signature = (ed, es, n_disks = 20))]
fn ef_from_keypoints(ed: Vec<[f64; 2]>, es: Vec<[f64; 2]>, n_disks: usize) -> PyResult<f64> {
    let (ed, es) = (contour(ed, None, None)?, contour(es, None, None)?);
    Ok(geometry::ef_from_keypoints(&ed, &es, n_disks).map_err(py_err)?.ef)
}

#[pyfunction]
fn dice(a: Vec<[f64; 2]>, b: Vec<[f64; 2]>, height: usize, width: usize) -> PyResult<f64> {
    Ok(metrics::dice(&contour(a, None, None)?, &contour(b, None, None)?, height, width))
}

#[pyfunction]
fn hausdorff(a: Vec<[f64; 2]>, b: Vec<[f64; 2]>, height: usize, width: usize) -> PyResult<f64> {
    Ok(metrics::hausdorff(&contour(a, None, None)?, &contour(b, None, None)?, height, width))
}

/// Mean L1 coordinate error in percent of the image size.
#[pyfunction]
fn mean_keypoint_error(pred: Vec<[f64; 2]>, gt: Vec<[f64; 2]>) -> PyResult<f64> {
    metrics::mean_keypoint_error(&contour(pred, None, None)?, &contour(gt, None, None)?).map_err(py_err)
}

/// (ED, ES) index pairs of a volume curve.
#[pyfunction]
#[pyo3(signature = (volumes, smoothing = 3, min_separation = 5, min_prominence = 0.25))]
fn detect_peaks(volumes: Vec<f64>, smoothing: usize, min_separation: usize, min_prominence: f64) -> Vec<(usize, usize)> {
    let cfg = PeakConfig {
        smoothing,
        min_separation,
        min_prominence,
    };
    temporal::detect_peaks(&volumes, cfg)
        .into_iter()
        .map(|p| (p.ed_index, p.es_index))
        .collect()
}

/// Random synthetic case: frames as bytes, one contour per frame, the
/// annotated (ED, ES) pairs and the exact EF.
#[pyfunction]
#[pyo3(signature = (seed, image_size = 112, n_cycles = 3))]
fn synthetic_case(py: Python<'_>, seed: u64, image_size: usize, n_cycles: usize) -> PyResult<Bound<'_, PyDict>> {
    let ranges = ParamRanges {
        image_size,
        n_cycles,
        ..ParamRanges::default()
    };
    let case = py.detach(|| generate_random_case(seed, &ranges)).map_err(py_err)?;
    let d = PyDict::new(py);
    let frames: Vec<&[u8]> = (0..case.video.len()).map(|t| &case.video.frame(t)[..]).collect();
    d.set_item("frames", frames)?;
    d.set_item("height", image_size)?;
    d.set_item("width", image_size)?;
    let contours: Vec<Vec<[f64; 2]>> = case.keypoints.iter().map(|k| k.points().to_vec()).collect();
    d.set_item("keypoints", contours)?;
    d.set_item("cycles", case.cycles)?;
    d.set_item("ef", case.true_ef)?;
    Ok(d)
}

#[pymodule]
fn echographs_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(two_stage_ef, m)?)?;
    m.add_function(wrap_pyfunction!(disk_volume, m)?)?;
    m.add_function(wrap_pyfunction!(ef_from_keypoints, m)?)?;
    m.add_function(wrap_pyfunction!(dice, m)?)?;
    m.add_function(wrap_pyfunction!(hausdorff, m)?)?;
    m.add_function(wrap_pyfunction!(mean_keypoint_error, m)?)?;
    m.add_function(wrap_pyfunction!(detect_peaks, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_case, m)?)?;
    Ok(())
}
