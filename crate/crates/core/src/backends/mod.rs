//! Model-facing interfaces plus deterministic mock implementations.
//!
//! Traits are the raw adapter surface. The free functions in this module
//! (`classify`, `input_gradient`, ...) are what the rest of the crate calls:
//! they check inputs and enforce each backend's output contract.

mod bicubic;
mod embedding;
pub mod mock;
pub mod process;
mod registry;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{FeatureMaps, ImageError, ImageTensor, InputGradient, Label};
use crate::scalar::Scalar;

pub use bicubic::{bicubic_weight, BicubicUpscaler};
pub use embedding::{cosine_similarity, Embedding};
pub use registry::{
    build_backends, BackendFamily, BackendNames, BackendSet, RegistryOptions, UnavailableBackend,
    MODEL_DIR_ENV,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Classifier,
    Embedder,
    SuperResolver,
    Vlm,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Classifier => "classifier",
            BackendKind::Embedder => "embedder",
            BackendKind::SuperResolver => "super_resolver",
            BackendKind::Vlm => "vlm",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub name: String,
    pub deterministic: bool,
}

impl BackendDescriptor {
    pub fn new(kind: BackendKind, name: impl Into<String>, deterministic: bool) -> Self {
        Self {
            kind,
            name: name.into(),
            deterministic,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        actual: (usize, usize, usize),
    },
    #[error("{kind} backend unavailable: {reason}")]
    BackendUnavailable { kind: BackendKind, reason: String },
    #[error("backend {0} does not expose gradients")]
    GradientsUnsupported(String),
    #[error("unsupported super-resolution factor {0} (expected 2 or 4)")]
    UnsupportedFactor(usize),
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("generation timed out after {0} ms")]
    GenerationTimeout(u64),
    #[error("backend {backend} violated its contract: {detail}")]
    Contract { backend: String, detail: String },
    #[error("adapter protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Logits over `[real, fake]`, optional saliency-layer activations and the
/// argmax label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct ClassifierOutput<T> {
    pub logits: [T; 2],
    pub activations: Option<FeatureMaps<T>>,
    pub prediction: Label,
}

impl<T: Scalar> ClassifierOutput<T> {
    pub fn from_logits(logits: [T; 2]) -> Self {
        Self {
            logits,
            activations: None,
            prediction: argmax_label(&logits),
        }
    }

    /// Softmax probability of the fake class.
    pub fn fake_probability(&self) -> T {
        softmax2(&self.logits)[Label::Fake.index()]
    }
}

/// Saliency-layer activations and the gradient of a target class score with
/// respect to them; both are `(K, h, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyTensors<T> {
    pub activations: FeatureMaps<T>,
    pub gradients: FeatureMaps<T>,
}

pub trait Classifier<T: Scalar>: Send {
    fn descriptor(&self) -> BackendDescriptor;

    /// Native `(height, width, channels)` input shape.
    fn input_shape(&self) -> (usize, usize, usize);

    fn classify(&self, img: &ImageTensor<T>) -> Result<ClassifierOutput<T>, BackendError>;

    /// Gradient of the cross-entropy loss for `label` with respect to the input.
    fn input_gradient(
        &self,
        _img: &ImageTensor<T>,
        _label: Label,
    ) -> Result<InputGradient<T>, BackendError> {
        Err(BackendError::GradientsUnsupported(self.descriptor().name))
    }

    fn saliency_tensors(
        &self,
        _img: &ImageTensor<T>,
        _target: Label,
    ) -> Result<SaliencyTensors<T>, BackendError> {
        Err(BackendError::GradientsUnsupported(self.descriptor().name))
    }

    /// Cross-entropy loss of `label` under the classifier's logits.
    fn loss(&self, img: &ImageTensor<T>, label: Label) -> Result<T, BackendError> {
        Ok(cross_entropy(&self.classify(img)?.logits, label))
    }
}

pub trait Embedder<T: Scalar>: Send {
    fn descriptor(&self) -> BackendDescriptor;
    fn dim(&self) -> usize;
    fn embed_image(&self, img: &ImageTensor<T>) -> Result<Embedding<T>, BackendError>;
    fn embed_text(&self, text: &str) -> Result<Embedding<T>, BackendError>;
}

pub trait SuperResolver<T: Scalar>: Send {
    fn descriptor(&self) -> BackendDescriptor;
    fn super_resolve(
        &self,
        img: &ImageTensor<T>,
        factor: usize,
    ) -> Result<ImageTensor<T>, BackendError>;
}

pub trait VisionLanguageModel<T: Scalar>: Send {
    fn descriptor(&self) -> BackendDescriptor;
    fn generate(&mut self, prompt: &str, img: &ImageTensor<T>) -> Result<String, BackendError>;
}

pub fn argmax_label<T: Scalar>(logits: &[T; 2]) -> Label {
    // Ties go to `real`.
    if logits[1] > logits[0] {
        Label::Fake
    } else {
        Label::Real
    }
}

pub fn softmax2<T: Scalar>(logits: &[T; 2]) -> [T; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let z = e0 + e1;
    [e0 / z, e1 / z]
}

/// `-log softmax(logits)[label]`, computed with a stable log-sum-exp.
pub fn cross_entropy<T: Scalar>(logits: &[T; 2], label: Label) -> T {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    lse - logits[label.index()]
}

fn check_shape<T: Scalar>(
    expected: (usize, usize, usize),
    img: &ImageTensor<T>,
) -> Result<(), BackendError> {
    if img.shape() != expected {
        return Err(BackendError::ShapeMismatch {
            expected,
            actual: img.shape(),
        });
    }
    Ok(())
}

fn contract(backend: &BackendDescriptor, detail: impl Into<String>) -> BackendError {
    BackendError::Contract {
        backend: backend.name.clone(),
        detail: detail.into(),
    }
}

/// Classifies `img`; rejects non-native shapes and non-finite logits.
pub fn classify<T: Scalar>(
    backend: &dyn Classifier<T>,
    img: &ImageTensor<T>,
) -> Result<ClassifierOutput<T>, BackendError> {
    check_shape(backend.input_shape(), img)?;
    let mut out = backend.classify(img)?;
    if out.logits.iter().any(|l| !l.is_finite()) {
        return Err(contract(&backend.descriptor(), "non-finite logits"));
    }
    out.prediction = argmax_label(&out.logits);
    Ok(out)
}

pub fn input_gradient<T: Scalar>(
    backend: &dyn Classifier<T>,
    img: &ImageTensor<T>,
    label: Label,
) -> Result<InputGradient<T>, BackendError> {
    check_shape(backend.input_shape(), img)?;
    let g = backend.input_gradient(img, label)?;
    if g.shape() != img.shape() {
        return Err(contract(
            &backend.descriptor(),
            "gradient shape differs from image shape",
        ));
    }
    Ok(g)
}

pub fn saliency_tensors<T: Scalar>(
    backend: &dyn Classifier<T>,
    img: &ImageTensor<T>,
    target: Label,
) -> Result<SaliencyTensors<T>, BackendError> {
    check_shape(backend.input_shape(), img)?;
    let t = backend.saliency_tensors(img, target)?;
    if t.activations.shape() != t.gradients.shape() {
        return Err(contract(
            &backend.descriptor(),
            "activation and gradient shapes differ",
        ));
    }
    Ok(t)
}

pub fn embed_image<T: Scalar>(
    backend: &dyn Embedder<T>,
    img: &ImageTensor<T>,
) -> Result<Embedding<T>, BackendError> {
    let e = backend.embed_image(img)?;
    check_embedding(backend, e)
}

pub fn embed_text<T: Scalar>(
    backend: &dyn Embedder<T>,
    text: &str,
) -> Result<Embedding<T>, BackendError> {
    if text.trim().is_empty() {
        return Err(BackendError::EmptyInput);
    }
    let e = backend.embed_text(text)?;
    check_embedding(backend, e)
}

fn check_embedding<T: Scalar>(
    backend: &dyn Embedder<T>,
    e: Embedding<T>,
) -> Result<Embedding<T>, BackendError> {
    if e.dim() != backend.dim() {
        return Err(BackendError::DimMismatch(e.dim(), backend.dim()));
    }
    // Adapters may hand back unnormalized vectors.
    Embedding::normalized(e.into_values())
}

pub const SUPPORTED_SR_FACTORS: [usize; 2] = [2, 4];

pub fn super_resolve<T: Scalar>(
    backend: &dyn SuperResolver<T>,
    img: &ImageTensor<T>,
    factor: usize,
) -> Result<ImageTensor<T>, BackendError> {
    if !SUPPORTED_SR_FACTORS.contains(&factor) {
        return Err(BackendError::UnsupportedFactor(factor));
    }
    let out = backend.super_resolve(img, factor)?;
    let expected = (img.height() * factor, img.width() * factor, img.channels());
    if out.shape() != expected {
        return Err(contract(
            &backend.descriptor(),
            format!("output shape {:?}, expected {:?}", out.shape(), expected),
        ));
    }
    Ok(out)
}

pub fn vlm_generate<T: Scalar>(
    backend: &mut dyn VisionLanguageModel<T>,
    prompt: &str,
    img: &ImageTensor<T>,
) -> Result<String, BackendError> {
    if prompt.trim().is_empty() {
        return Err(BackendError::EmptyInput);
    }
    backend.generate(prompt, img)
}
