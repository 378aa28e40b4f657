//! Synthetic-image forensics toolkit.
//!
//! A classifier's GradCAM saliency weights patch-level votes from a
//! joint image-text embedder into per-artifact scores, and a vision-language
//! model explains the artifacts that pass a threshold. Around that pipeline
//! sit ensemble weight search, metric-learning losses, L∞ adversarial attacks
//! and CIFAKE dataset ingestion.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common `f64` instantiations.

pub mod backends;
pub mod dataset;
pub mod ensemble;
pub mod explainer;
pub mod forensic;
pub mod image;
pub mod metric;
pub mod robustness;
pub mod saliency;
pub mod scalar;
pub mod wavelet;

pub use image::{FeatureMaps, Heatmap, ImageError, ImageTensor, InputGradient, Label};
pub use scalar::Scalar;

pub type Image = ImageTensor<f64>;
pub type Image32 = ImageTensor<f32>;
pub type Saliency = Heatmap<f64>;
pub type Report = explainer::AnalysisReport<f64>;
pub type Backends = backends::BackendSet<f64>;
pub type Weights = ensemble::EnsembleWeights<f64>;
pub type AttackSettings = robustness::AttackConfig<f64>;
pub type LossSettings = metric::LossConfig<f64>;
