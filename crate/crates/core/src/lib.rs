//! Chest X-ray classification with an Extreme Learning Machine.
//!
//! The pipeline has three stages:
//!
//! 1. [`preprocess`]: bilinear resize to 512×512, min-max normalization and CLAHE.
//! 2. [`features`]: a fixed 168-element vector built from 14 summary statistics
//!    over ten texture maps (spatial, GLCM ×4, GLDM ×4, HOG) and two frequency
//!    maps (FFT log-magnitude, Haar LL3).
//! 3. [`elm`]: a single-hidden-layer network with random hidden nodes whose
//!    output weights are solved in closed form through the Moore-Penrose
//!    pseudoinverse ([`linalg`]).
//!
//! [`eval`] and [`metrics`] implement stratified k-fold cross-validation and the
//! reported metrics; [`ingest`] and [`persist`] handle manifests, feature caches
//! and model files.

pub mod elm;
pub mod error;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod linalg;
pub mod metrics;
pub mod persist;
pub mod preprocess;

pub use elm::{Activation, ElmModel, Standardizer, TrainConfig};
pub use error::{Error, Result};
pub use eval::{CvConfig, CvReport, FoldPlan};
pub use features::{FeatureConfig, FeatureSubset, FeatureVector, StatBlock};
pub use ingest::{Label, ManifestRecord};
pub use linalg::Matrix;
pub use metrics::{ClassReport, ConfusionMatrix, RocCurve};
pub use preprocess::{ClaheParams, GrayImage, ValueRange};

/// Class ordering used by the chest X-ray task. Score columns, confusion
/// matrix rows and one-hot targets all follow this order.
pub const CLASS_ORDER: [&str; 3] = ["covid", "normal", "pneumonia"];

/// Side length of the preprocessed image fed to feature extraction.
pub const IMAGE_SIDE: usize = 512;
