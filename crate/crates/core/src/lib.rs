//! Contactless detection of sleep apnea and periodic limb movement from Wi-Fi
//! channel state information (CSI).
//!
//! The crate is organised along the processing chain:
//!
//! * [`csi_data`]: CSI records, session files, label tracks and windowing.
//! * [`synthgen`]: multipath channel renderer producing labeled synthetic sessions.
//! * [`preprocess`]: resampling, normalisation, Butterworth band-pass, PCA and STFT.
//! * [`nn`]: a small differentiable operator kernel (dense, conv1d, batch norm,
//!   GRU, self-attention, softmax cross-entropy) with a finite-difference checker.
//! * [`model`]: the attention network with time attention and antenna-pair
//!   attention branches, its training loop and ablation variants.
//! * [`eval`]: confusion-matrix metrics and the MLP comparison baseline.
//! * [`pipeline`]: glue from sessions to labeled feature windows.
//! * [`experiment`]: multi-seed ablation and baseline runs.

pub mod csi_data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod preprocess;
pub mod synthgen;

pub use csi_data::{CsiRecord, CsiWindow, LabelInterval, Session, SessionMeta, SleepClass};
pub use error::{Error, Result};
pub use eval::EvalReport;
pub use model::{AblationConfig, AlesalModel, ModelConfig, TrainConfig};
pub use nn::Tensor;
pub use pipeline::LabeledExample;
pub use preprocess::{PairSeries, PreprocessParams, Spectrogram, WindowFeatures};
pub use synthgen::{DatasetConfig, ScenarioSpec};

/// Number of output classes (normal breathing, apnea, PLMD).
pub const NUM_CLASSES: usize = 3;
