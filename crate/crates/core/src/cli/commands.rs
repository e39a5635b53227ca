use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::RunConfig;
use crate::dataset::{load_dataset, samples_for, video_path, LabeledVideo, ANNOTATIONS_FILE};
use crate::error::{Error, Result};
use crate::geometry::ef_from_keypoints;
use crate::io::write_atomic;
use crate::keypoints::KeypointSet;
use crate::layerkit::Params;
use crate::metrics::{ef_metrics, segmentation_scores, summarize, EfMetrics, Summary};
use crate::model::{
    load_checkpoint, save_checkpoint, ClassWeights, EpochLog, LossWeights, Mode, Model, ModelConfig,
    TrainSchedule, Trainer,
};
use crate::syndata::{
    generate_random_case, read_annotations, read_video, split_dataset, write_annotations, write_video,
    AnnotationRecord, Phase, Split, Video,
};
use crate::temporal::{resample_indices, sliding_window_ef, two_stage_ef, PeakConfig, SlidingWindowResult, TwoStageResult};

fn csv_err(e: impl std::fmt::Display) -> Error {
    Error::Config(format!("CSV encoding failed: {e}"))
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Config(format!("JSON encoding failed: {e}")))?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &json_bytes(value)?)
}

/// `loss.csv` → `loss.config.json`.
pub fn config_sidecar(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("config.json")
}

/// Writes the CSV and the effective config beside it.
fn write_csv(path: &Path, rows: Vec<Vec<String>>, cfg: &RunConfig) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(csv_err)?;
    write_atomic(path, &bytes)?;
    write_json(&config_sidecar(path), cfg)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn case_id(i: usize) -> String {
    format!("case_{i:05}")
}

// ---------------------------------------------------------------- gen-data

/// Synthetic dataset: one seed per case drawn from `cfg.seed`, split by the
/// configured ratios. Cases whose sampled geometry fails validation are
/// redrawn with the next seed from the same stream.
pub fn gen_data(cfg: &RunConfig) -> Result<()> {
    let out = cfg.require_out()?;
    let ranges = cfg.ranges;
    let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed);
    let case_seeds: Vec<Vec<u64>> = (0..cfg.count)
        .map(|_| (0..16).map(|_| seeds.random()).collect())
        .collect();
    let ids: Vec<String> = (0..cfg.count).map(case_id).collect();
    let split = split_dataset(&ids, cfg.split_ratios, cfg.seed)?;
    let split_of: HashMap<&str, Split> = [(&split.train, Split::Train), (&split.val, Split::Val), (&split.test, Split::Test)]
        .into_iter()
        .flat_map(|(ids, s)| ids.iter().map(move |id| (id.as_str(), s)))
        .collect();
    let records = ids
        .par_iter()
        .zip(&case_seeds)
        .map(|(id, candidates)| {
            let mut last_err = None;
            for &seed in candidates {
                match generate_random_case(seed, &ranges) {
                    Ok(case) => {
                        write_video(&case.video, &video_path(out, id))?;
                        return Ok(AnnotationRecord::from_case(&case, id, split_of[id.as_str()], cfg.all_frames));
                    }
                    Err(e @ Error::Generation(_)) => last_err = Some(e),
                    Err(e) => return Err(e),
                }
            }
            Err(last_err.unwrap_or_else(|| Error::Generation(format!("no valid parameters for {id}"))))
        })
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<AnnotationRecord> = records.into_iter().flatten().collect();
    write_annotations(&records, &out.join(ANNOTATIONS_FILE))?;
    // the directory is the output, so the echo leaves out its own path and
    // regenerating elsewhere gives identical bytes
    let echo = RunConfig { out: None, ..cfg.clone() };
    write_json(&out.join("dataset.config.json"), &echo)?;
    println!(
        "wrote {} cases ({} train / {} val / {} test) to {}",
        cfg.count,
        split.train.len(),
        split.val.len(),
        split.test.len(),
        out.display()
    );
    Ok(())
}

// ------------------------------------------------------------------- train

fn model_config(cfg: &RunConfig, mode: Mode, height: usize, width: usize) -> ModelConfig {
    ModelConfig {
        mode,
        spiral_len: cfg.spiral_len,
        clip_len: cfg.window,
        image_height: height,
        image_width: width,
        ..ModelConfig::default()
    }
}

pub fn schedule(cfg: &RunConfig) -> TrainSchedule {
    TrainSchedule {
        epochs: cfg.epochs,
        batch_size: cfg.batch,
        lr: cfg.lr,
        warmup_steps: cfg.warmup_steps,
        min_lr_fraction: cfg.min_lr_fraction,
        grad_clip: (cfg.grad_clip > 0.0).then_some(cfg.grad_clip),
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        adam_eps: cfg.adam_eps,
        weights: LossWeights {
            lambda_ef: cfg.lambda_ef,
            lambda_cls: cfg.lambda_cls,
            class_weights: ClassWeights {
                gt_weight: cfg.gt_weight,
                other_weight: cfg.other_weight,
            },
        },
        seed: cfg.seed,
        shuffle: cfg.shuffle,
    }
}

const LOSS_HEADER: [&str; 11] = [
    "epoch",
    "step",
    "lr",
    "train_keypoint",
    "train_ef",
    "train_classifier",
    "train_total",
    "val_keypoint",
    "val_ef",
    "val_classifier",
    "val_total",
];

fn loss_row(log: &EpochLog) -> Vec<String> {
    let t = &log.train;
    let v = log.val.as_ref();
    vec![
        log.epoch.to_string(),
        log.step.to_string(),
        log.lr.to_string(),
        t.keypoint.to_string(),
        t.ef.to_string(),
        t.classifier.to_string(),
        t.total.to_string(),
        opt(v.map(|p| p.keypoint)),
        opt(v.map(|p| p.ef)),
        opt(v.map(|p| p.classifier)),
        opt(v.map(|p| p.total)),
    ]
}

#[derive(Debug, Serialize)]
struct TrainSummary<'a> {
    config: &'a RunConfig,
    model: &'a ModelConfig,
    parameter_count: usize,
    start: &'static str,
    train_samples: usize,
    val_samples: usize,
    best_epoch: usize,
    best_val_keypoint: Option<f64>,
    steps: u64,
}

/// Trains on the dataset's train split, selecting by validation keypoint
/// loss. With `--ckpt`, a checkpoint of the same architecture is resumed
/// (step counter continues); any other checkpoint warm-starts the matching
/// tensors.
pub fn train(cfg: &RunConfig) -> Result<()> {
    let out = cfg.require_out()?;
    let videos = load_dataset(cfg.require_data()?)?;
    let first = videos
        .first()
        .ok_or_else(|| Error::Config("dataset has no cases".into()))?;
    let mode = cfg.model_mode()?;
    let mcfg = model_config(cfg, mode, first.video.height(), first.video.width());
    let (model, start) = match cfg.ckpt.as_slice() {
        [] => (Model::new(mcfg.clone(), cfg.seed)?, "fresh"),
        [path] => {
            let prev = load_checkpoint(path)?;
            if prev.config() == &mcfg {
                (prev, "resumed")
            } else {
                let mut m = Model::new(mcfg.clone(), cfg.seed)?;
                if m.transfer_from(&prev) == 0 {
                    return Err(Error::Config(format!("{} shares no tensors with a {} model", path.display(), mode.name())));
                }
                (m, "warm_start")
            }
        }
        _ => return Err(Error::Config("train takes at most one --ckpt".into())),
    };
    let stride = cfg.stride();
    let train_set = samples_for(&videos, Split::Train, &mcfg, stride)?;
    let val_set = samples_for(&videos, Split::Val, &mcfg, stride)?;
    eprintln!(
        "{start} {} model, {} parameters, {} train / {} val samples",
        mode.name(),
        model.parameter_count(),
        train_set.len(),
        val_set.len()
    );
    let mut trainer = Trainer::new(model, schedule(cfg))?;
    let mut rows = vec![LOSS_HEADER.map(String::from).to_vec()];
    let report = trainer.fit(&train_set, &val_set, |log| {
        eprintln!(
            "epoch {:>4}  step {:>6}  lr {:.2e}  train {:.5}  val {}",
            log.epoch,
            log.step,
            log.lr,
            log.train.total,
            log.val.map_or("-".into(), |v| format!("{:.5}", v.total))
        );
        rows.push(loss_row(log));
    })?;
    write_csv(&out.join("loss.csv"), rows, cfg)?;
    save_checkpoint(trainer.model(), &out.join("last.egrf"))?;
    save_checkpoint(trainer.best_model(), &out.join("model.egrf"))?;
    write_json(
        &out.join("train.json"),
        &TrainSummary {
            config: cfg,
            model: &mcfg,
            parameter_count: trainer.model().parameter_count(),
            start,
            train_samples: train_set.len(),
            val_samples: val_set.len(),
            best_epoch: report.best_epoch,
            best_val_keypoint: report.best_val_keypoint,
            steps: report.steps,
        },
    )?;
    Ok(())
}

// ------------------------------------------------------------- infer-frame

fn load_image(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = image::open(path)
        .map_err(|e| Error::Config(format!("cannot read image {}: {e}", path.display())))?
        .into_luma8();
    let (w, h) = img.dimensions();
    Ok((h as usize, w as usize, img.into_raw()))
}

fn single_model(cfg: &RunConfig) -> Result<Model> {
    let [path] = cfg.ckpt.as_slice() else {
        return Err(Error::Config("exactly one --ckpt is required".into()));
    };
    load_checkpoint(path)
}

/// Predicted keypoints as a one-row annotation file (EF column 0).
pub fn infer_frame(cfg: &RunConfig) -> Result<()> {
    let model = single_model(cfg)?;
    if model.config().mode != Mode::SingleFrame {
        return Err(Error::Config(format!(
            "infer-frame needs a single_frame model, got {}",
            model.config().mode.name()
        )));
    }
    let (id, frame_idx, (h, w, pixels)) = match (&cfg.image, &cfg.video) {
        (Some(path), None) => (stem(path), 0, load_image(path)?),
        (None, Some(path)) => {
            let video = read_video(path)?;
            if cfg.frame >= video.len() {
                return Err(Error::Config(format!("frame {} beyond video of {} frames", cfg.frame, video.len())));
            }
            (stem(path), cfg.frame, (video.height(), video.width(), video.frame(cfg.frame).to_vec()))
        }
        _ => return Err(Error::Config("give exactly one of --image or --video".into())),
    };
    let mc = model.config();
    if (h, w) != (mc.image_height, mc.image_width) {
        return Err(Error::dim(format!(
            "image is {h}×{w}, model expects {}×{}",
            mc.image_height, mc.image_width
        )));
    }
    let kp = model.predict_frame(&crate::model::train::to_unit(&pixels))?;
    let record = AnnotationRecord {
        case_id: id,
        frame_idx,
        phase: Phase::Other,
        ef: 0.0,
        points: kp.points().to_vec(),
        split: Split::Test,
    };
    match &cfg.out {
        Some(path) => {
            write_annotations(&[record], path)?;
            write_json(&config_sidecar(path), cfg)
        }
        None => {
            print!("{}", crate::syndata::annotations_to_string(&[record])?);
            Ok(())
        }
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "input".into(), |s| s.to_string_lossy().into_owned())
}

// ------------------------------------------------------------- infer-video

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    TwoStage,
    Classifier,
}

/// Loaded models for a whole-video pipeline.
pub enum VideoModels {
    TwoStage { single: Model, known: Model },
    Classifier(Model),
}

fn video_models(cfg: &RunConfig) -> Result<VideoModels> {
    let models = cfg.ckpt.iter().map(|p| load_checkpoint(p)).collect::<Result<Vec<_>>>()?;
    let requested = match cfg.mode.as_deref().map(|m| m.replace('-', "_")) {
        None => None,
        Some(m) if m == "two_stage" => Some(Pipeline::TwoStage),
        Some(m) if m == "classifier" || m == "multi_frame_classifier" => Some(Pipeline::Classifier),
        Some(m) => return Err(Error::Config(format!("video pipeline must be two_stage or classifier, got '{m}'"))),
    };
    let find = |mode: Mode| models.iter().find(|m| m.config().mode == mode).cloned();
    let classifier = find(Mode::MultiFrameClassifier);
    match (requested, classifier) {
        (Some(Pipeline::Classifier) | None, Some(m)) if models.len() == 1 => Ok(VideoModels::Classifier(m)),
        (Some(Pipeline::Classifier), _) => Err(Error::Config(
            "classifier pipeline needs exactly one multi_frame_classifier checkpoint".into(),
        )),
        _ => match (find(Mode::SingleFrame), find(Mode::MultiFrameKnown)) {
            (Some(single), Some(known)) if models.len() == 2 => Ok(VideoModels::TwoStage { single, known }),
            _ => Err(Error::Config(
                "two-stage pipeline needs a single_frame and a multi_frame_known checkpoint".into(),
            )),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum VideoOutcome {
    TwoStage(TwoStageResult),
    Classifier(SlidingWindowResult),
}

#[derive(Debug, Clone, Serialize)]
pub struct VideoReport<'a> {
    pub config: &'a RunConfig,
    pub pipeline: Pipeline,
    pub n_frames: usize,
    pub status: &'static str,
    /// Mean regressed EF; null when no cycle was found.
    pub mean_ef: Option<f64>,
    /// Mean keypoint-derived EF over the cycles or windows that produced one.
    pub mean_ef_from_keypoints: Option<f64>,
    /// (ED, ES) frame pairs the pipeline used.
    pub cycle_pairs: Vec<(usize, usize)>,
    pub result: VideoOutcome,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn run_video<'a>(cfg: &'a RunConfig, models: &VideoModels, video: &Video) -> Result<VideoReport<'a>> {
    Ok(match models {
        VideoModels::TwoStage { single, known } => {
            let peaks = PeakConfig {
                smoothing: cfg.smoothing,
                min_separation: cfg.min_separation,
                min_prominence: cfg.min_prominence,
            };
            let r = two_stage_ef(single, known, video, peaks, cfg.n_disks)?;
            VideoReport {
                config: cfg,
                pipeline: Pipeline::TwoStage,
                n_frames: video.len(),
                status: if r.mean_ef.is_some() { "ok" } else { "no_cycle_found" },
                mean_ef: r.mean_ef,
                mean_ef_from_keypoints: mean(r.cycles.iter().filter_map(|c| c.ef_from_keypoints)),
                cycle_pairs: r.cycles.iter().map(|c| (c.ed_index, c.es_index)).collect(),
                result: VideoOutcome::TwoStage(r),
            }
        }
        VideoModels::Classifier(model) => {
            let r = sliding_window_ef(model, video, cfg.window, cfg.stride(), cfg.n_disks)?;
            VideoReport {
                config: cfg,
                pipeline: Pipeline::Classifier,
                n_frames: video.len(),
                status: "ok",
                mean_ef: Some(r.mean_ef),
                mean_ef_from_keypoints: mean(r.windows.iter().filter_map(|w| w.ef_from_keypoints)),
                cycle_pairs: r.windows.iter().map(|w| (w.ed_index, w.es_index)).collect(),
                result: VideoOutcome::Classifier(r),
            }
        }
    })
}

pub fn infer_video(cfg: &RunConfig) -> Result<()> {
    let path = cfg
        .video
        .as_deref()
        .ok_or_else(|| Error::Config("--video is required".into()))?;
    let models = video_models(cfg)?;
    let video = read_video(path)?;
    let report = run_video(cfg, &models, &video)?;
    match &cfg.out {
        Some(out) => write_json(out, &report),
        None => {
            print!("{}", String::from_utf8(json_bytes(&report)?).expect("JSON is UTF-8"));
            Ok(())
        }
    }
}

// -------------------------------------------------------------------- eval

#[derive(Debug, Clone)]
struct SegRow {
    case_id: String,
    frame_idx: usize,
    phase: Phase,
    dice: f64,
    mke: f64,
    hausdorff: f64,
}

#[derive(Debug, Clone)]
struct EfRow {
    case_id: String,
    ed_index: Option<usize>,
    es_index: Option<usize>,
    ef_true: f64,
    ef_regressed: Option<f64>,
    ef_from_keypoints: Option<f64>,
}

#[derive(Debug, Default)]
struct CaseEval {
    seg: Vec<SegRow>,
    ef: Vec<EfRow>,
}

fn phase_of(v: &LabeledVideo, t: usize) -> Phase {
    if v.cycles.iter().any(|c| c.0 == t) {
        Phase::Ed
    } else if v.cycles.iter().any(|c| c.1 == t) {
        Phase::Es
    } else {
        Phase::Other
    }
}

fn seg_row(v: &LabeledVideo, t: usize, pred: &KeypointSet) -> Result<SegRow> {
    let gt = &v.keypoints[&t];
    let s = segmentation_scores(pred, gt, v.video.height(), v.video.width())?;
    Ok(SegRow {
        case_id: v.id.clone(),
        frame_idx: t,
        phase: phase_of(v, t),
        dice: s.dice,
        mke: s.mke,
        hausdorff: s.hausdorff,
    })
}

fn kp_ef(ed: &KeypointSet, es: &KeypointSet, n_disks: usize) -> Option<f64> {
    ef_from_keypoints(ed, es, n_disks).ok().map(|e| e.ef)
}

/// Scores stored keypoints: predicted ED/ES pairs give keypoint EF.
fn eval_predictions(v: &LabeledVideo, preds: &BTreeMap<usize, KeypointSet>, n_disks: usize) -> Result<CaseEval> {
    let mut out = CaseEval::default();
    for (&t, kp) in preds {
        if v.keypoints.contains_key(&t) {
            out.seg.push(seg_row(v, t, kp)?);
        }
    }
    for &(ed, es) in &v.cycles {
        if let (Some(a), Some(b)) = (preds.get(&ed), preds.get(&es)) {
            out.ef.push(EfRow {
                case_id: v.id.clone(),
                ed_index: Some(ed),
                es_index: Some(es),
                ef_true: v.ef,
                ef_regressed: None,
                ef_from_keypoints: kp_ef(a, b, n_disks),
            });
        }
    }
    Ok(out)
}

fn eval_model(cfg: &RunConfig, models: &EvalModels, v: &LabeledVideo) -> Result<CaseEval> {
    match models {
        EvalModels::Single(model) => {
            let preds = v
                .keypoints
                .keys()
                .map(|&t| Ok((t, model.predict_frame(&v.video.frame_f32(t))?)))
                .collect::<Result<BTreeMap<_, _>>>()?;
            eval_predictions(v, &preds, cfg.n_disks)
        }
        EvalModels::Known(model) => {
            let mut out = CaseEval::default();
            for &(ed, es) in &v.cycles {
                let idx = resample_indices(ed, es, model.config().clip_len);
                let frames: Vec<Vec<f32>> = idx.iter().map(|&i| v.video.frame_f32(i)).collect();
                let refs: Vec<&[f32]> = frames.iter().map(Vec::as_slice).collect();
                let p = model.predict_clip(&refs, cfg.n_disks)?;
                out.seg.push(seg_row(v, ed, &p.ed_keypoints)?);
                out.seg.push(seg_row(v, es, &p.es_keypoints)?);
                out.ef.push(EfRow {
                    case_id: v.id.clone(),
                    ed_index: Some(ed),
                    es_index: Some(es),
                    ef_true: v.ef,
                    ef_regressed: Some(p.ef_regressed),
                    ef_from_keypoints: p.ef_from_keypoints,
                });
            }
            Ok(out)
        }
        EvalModels::Video(models) => {
            let r = run_video(cfg, models, &v.video)?;
            Ok(CaseEval {
                seg: Vec::new(),
                ef: vec![EfRow {
                    case_id: v.id.clone(),
                    ed_index: None,
                    es_index: None,
                    ef_true: v.ef,
                    ef_regressed: r.mean_ef,
                    ef_from_keypoints: r.mean_ef_from_keypoints,
                }],
            })
        }
    }
}

enum EvalModels {
    Single(Model),
    Known(Model),
    Video(VideoModels),
}

fn eval_models(cfg: &RunConfig) -> Result<EvalModels> {
    if cfg.ckpt.len() == 1 {
        let m = load_checkpoint(&cfg.ckpt[0])?;
        return Ok(match m.config().mode {
            Mode::SingleFrame => EvalModels::Single(m),
            Mode::MultiFrameKnown => EvalModels::Known(m),
            Mode::MultiFrameClassifier => EvalModels::Video(VideoModels::Classifier(m)),
        });
    }
    Ok(EvalModels::Video(video_models(cfg)?))
}

#[derive(Debug, Serialize)]
pub struct SegSummary {
    pub dice: Summary,
    pub mke: Summary,
    pub hausdorff: Summary,
}

#[derive(Debug, Serialize)]
pub struct EvalReport<'a> {
    pub config: &'a RunConfig,
    pub split: Split,
    pub cases: usize,
    pub frames: usize,
    pub segmentation: Option<SegSummary>,
    pub ef_regressed: Option<EfMetrics>,
    pub ef_from_keypoints: Option<EfMetrics>,
}

fn ef_summary(rows: &[EfRow], pick: impl Fn(&EfRow) -> Option<f64>) -> Result<Option<EfMetrics>> {
    let (pred, gt): (Vec<f64>, Vec<f64>) = rows.iter().filter_map(|r| pick(r).map(|p| (p, r.ef_true))).unzip();
    if pred.is_empty() {
        return Ok(None);
    }
    ef_metrics(&pred, &gt).map(Some)
}

/// Writes `segmentation.csv`, `ef.csv` (each with a config sidecar) and
/// `summary.json` into `--out`. With `--predictions` the stored keypoints
/// are scored instead of running a model, over every case they cover.
pub fn eval(cfg: &RunConfig) -> Result<()> {
    let out = cfg.require_out()?;
    let videos = load_dataset(cfg.require_data()?)?;
    let cases: Vec<CaseEval> = match &cfg.predictions {
        Some(path) => {
            let mut preds: BTreeMap<String, BTreeMap<usize, KeypointSet>> = BTreeMap::new();
            for r in read_annotations(path)? {
                preds.entry(r.case_id.clone()).or_default().insert(r.frame_idx, r.keypoints()?);
            }
            videos
                .par_iter()
                .filter_map(|v| preds.get(&v.id).map(|p| eval_predictions(v, p, cfg.n_disks)))
                .collect::<Result<_>>()?
        }
        None => {
            let models = eval_models(cfg)?;
            videos
                .par_iter()
                .filter(|v| v.split == cfg.split)
                .map(|v| eval_model(cfg, &models, v))
                .collect::<Result<_>>()?
        }
    };
    let n_cases = cases.len();
    let seg: Vec<SegRow> = cases.iter().flat_map(|c| c.seg.iter().cloned()).collect();
    let efs: Vec<EfRow> = cases.iter().flat_map(|c| c.ef.iter().cloned()).collect();

    let mut rows = vec![["case_id", "frame_idx", "phase", "dice", "mke", "hausdorff"].map(String::from).to_vec()];
    rows.extend(seg.iter().map(|r| {
        vec![
            r.case_id.clone(),
            r.frame_idx.to_string(),
            r.phase.to_string(),
            r.dice.to_string(),
            r.mke.to_string(),
            r.hausdorff.to_string(),
        ]
    }));
    write_csv(&out.join("segmentation.csv"), rows, cfg)?;
    let mut rows = vec![["case_id", "ed_index", "es_index", "ef_true", "ef_regressed", "ef_from_keypoints"]
        .map(String::from)
        .to_vec()];
    rows.extend(efs.iter().map(|r| {
        vec![
            r.case_id.clone(),
            r.ed_index.map(|i| i.to_string()).unwrap_or_default(),
            r.es_index.map(|i| i.to_string()).unwrap_or_default(),
            r.ef_true.to_string(),
            opt(r.ef_regressed),
            opt(r.ef_from_keypoints),
        ]
    }));
    write_csv(&out.join("ef.csv"), rows, cfg)?;

    let col = |f: fn(&SegRow) -> f64| summarize(&seg.iter().map(f).collect::<Vec<_>>());
    let segmentation = match (col(|r| r.dice), col(|r| r.mke), col(|r| r.hausdorff)) {
        (Some(dice), Some(mke), Some(hausdorff)) => Some(SegSummary { dice, mke, hausdorff }),
        _ => None,
    };
    let report = EvalReport {
        config: cfg,
        split: cfg.split,
        cases: n_cases,
        frames: seg.len(),
        segmentation,
        ef_regressed: ef_summary(&efs, |r| r.ef_regressed)?,
        ef_from_keypoints: ef_summary(&efs, |r| r.ef_from_keypoints)?,
    };
    write_json(&out.join("summary.json"), &report)?;
    if let Some(s) = &report.segmentation {
        println!(
            "{} frames: Dice {:.4}  MKE {:.3}%  Hausdorff {:.2} px (medians)",
            report.frames, s.dice.median, s.mke.median, s.hausdorff.median
        );
    }
    for (name, m) in [("regressed", &report.ef_regressed), ("keypoint", &report.ef_from_keypoints)] {
        if let Some(m) = m {
            println!("EF {name}: n {}  MAE {:.4}  RMSE {:.4}  R² {}", m.n, m.mae, m.rmse, opt(m.r2));
        }
    }
    Ok(())
}

// ------------------------------------------------------------------- bench

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyStats {
    pub median: f64,
    pub p5: f64,
    pub p95: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Stable field order; only `latency_ms_per_frame` depends on the clock.
#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub config: RunConfig,
    pub mode: String,
    pub model: ModelConfig,
    pub parameter_count: usize,
    pub analytic_parameter_count: usize,
    pub frames_per_forward: usize,
    pub repetitions: usize,
    pub warmup_runs: usize,
    pub threads: usize,
    pub latency_ms_per_frame: LatencyStats,
}

fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let idx = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

/// Times `model.forward` on frames converted beforehand, so decoding and
/// normalization stay outside the measurement.
pub fn bench_model(cfg: &RunConfig, model: &Model) -> Result<BenchReport> {
    let mc = model.config().clone();
    let frames: Vec<Vec<f32>> = {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        (0..mc.frames_in())
            .map(|_| (0..mc.image_len()).map(|_| rng.random::<f32>()).collect())
            .collect()
    };
    let refs: Vec<&[f32]> = frames.iter().map(Vec::as_slice).collect();
    for _ in 0..cfg.warmup_runs {
        std::hint::black_box(model.forward(&refs)?);
    }
    let per_frame = mc.frames_in() as f64;
    let mut times = Vec::with_capacity(cfg.repetitions);
    for _ in 0..cfg.repetitions {
        let t = Instant::now();
        std::hint::black_box(model.forward(std::hint::black_box(&refs))?);
        times.push(t.elapsed().as_secs_f64() * 1e3 / per_frame);
    }
    times.sort_by(f64::total_cmp);
    let latency = LatencyStats {
        median: summarize(&times).map_or(0.0, |s| s.median),
        p5: nearest_rank(&times, 0.05),
        p95: nearest_rank(&times, 0.95),
        mean: times.iter().sum::<f64>() / times.len() as f64,
        min: times[0],
        max: times[times.len() - 1],
    };
    Ok(BenchReport {
        config: cfg.clone(),
        mode: mc.mode.name().to_string(),
        parameter_count: model.parameter_count(),
        analytic_parameter_count: mc.analytic_parameter_count(),
        frames_per_forward: mc.frames_in(),
        repetitions: cfg.repetitions,
        warmup_runs: cfg.warmup_runs,
        threads: rayon::current_num_threads(),
        latency_ms_per_frame: latency,
        model: mc,
    })
}

/// Benchmarks `--ckpt`, or a freshly initialized model of `--mode`.
pub fn bench(cfg: &RunConfig) -> Result<()> {
    let model = match cfg.ckpt.as_slice() {
        [] => {
            let size = cfg.ranges.image_size;
            Model::new(model_config(cfg, cfg.model_mode()?, size, size), cfg.seed)?
        }
        [path] => load_checkpoint(path)?,
        _ => return Err(Error::Config("bench takes at most one --ckpt".into())),
    };
    let report = bench_model(cfg, &model)?;
    let bytes = json_bytes(&report)?;
    match &cfg.out {
        Some(path) => write_atomic(path, &bytes),
        None => {
            print!("{}", String::from_utf8(bytes).expect("JSON is UTF-8"));
            Ok(())
        }
    }
}
