//! The EchoGraphs model: configuration, network, losses, training and
//! checkpoints.

pub mod checkpoint;
pub mod config;
pub mod loss;
pub mod network;
pub mod train;

pub use crate::keypoints::KeypointSet;
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use config::{Mode, ModelConfig};
pub use loss::{edes_classifier_loss, ef_loss, keypoint_loss, ClassWeights, LossParts, LossWeights};
pub use network::{clamp_ef, EchoGraph, EfPrediction, ForwardOutput, Model, OutputGrads};
pub use train::{evaluate_loss, sample_loss, EpochLog, Sample, TrainReport, TrainSchedule, Trainer};
