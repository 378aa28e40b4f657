//! Deterministic, analytically tractable stand-ins for the neural backends.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    softmax2, BackendDescriptor, BackendError, BackendKind, Classifier, ClassifierOutput, Embedder,
    Embedding, SaliencyTensors, VisionLanguageModel,
};
use crate::image::{FeatureMaps, ImageTensor, InputGradient, Label};
use crate::scalar::Scalar;

/// Transposes an HWC image (or gradient buffer) into `C` maps of `H x W`.
fn to_maps<T: Scalar>(data: &[T], h: usize, w: usize, c: usize) -> FeatureMaps<T> {
    let mut out = vec![T::zero(); data.len()];
    for p in 0..h * w {
        for k in 0..c {
            out[k * h * w + p] = data[p * c + k];
        }
    }
    FeatureMaps::new(c, h, w, out).expect("consistent dims")
}

/// `dJ/dz` of the cross-entropy loss for logits `[-z, z]`.
fn ce_slope<T: Scalar>(z: T, label: Label) -> T {
    let two = T::of(2.0);
    let p = softmax2(&[-z, z]);
    match label {
        // J = -log p_fake, dJ/dz = -2 p_real
        Label::Fake => -two * p[0],
        // J = -log p_real, dJ/dz = 2 p_fake
        Label::Real => two * p[1],
    }
}

/// Linear classifier `z = w.x + b` with logits `[-z, z]`.
///
/// Its saliency layer is the identity: activations are the input channels.
#[derive(Debug, Clone, PartialEq)]
pub struct MockLinearClassifier<T> {
    shape: (usize, usize, usize),
    weights: Vec<T>,
    bias: T,
    name: String,
}

impl<T: Scalar> MockLinearClassifier<T> {
    pub fn new(
        shape: (usize, usize, usize),
        weights: Vec<T>,
        bias: T,
    ) -> Result<Self, BackendError> {
        let n = shape.0 * shape.1 * shape.2;
        if weights.len() != n {
            return Err(BackendError::DimMismatch(weights.len(), n));
        }
        Ok(Self {
            shape,
            weights,
            bias,
            name: "mock-linear".into(),
        })
    }

    /// Weights uniform in `[-scale, scale]` drawn from a ChaCha8 stream.
    pub fn seeded(shape: (usize, usize, usize), seed: u64, scale: f64, bias: T) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.0 * shape.1 * shape.2;
        let weights = (0..n)
            .map(|_| T::of(rng.gen_range(-scale..=scale)))
            .collect();
        Self {
            shape,
            weights,
            bias,
            name: "mock-linear-random".into(),
        }
    }

    /// `z = gain * (mean(red) - mean(blue)) + bias` on an RGB input.
    pub fn red_minus_blue(height: usize, width: usize, gain: T, bias: T) -> Self {
        let per_pixel = gain / T::of_usize(height * width);
        let mut weights = vec![T::zero(); height * width * 3];
        for p in 0..height * width {
            weights[p * 3] = per_pixel;
            weights[p * 3 + 2] = -per_pixel;
        }
        Self {
            shape: (height, width, 3),
            weights,
            bias,
            name: "mock-linear".into(),
        }
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn bias(&self) -> T {
        self.bias
    }

    pub fn decision_value(&self, img: &ImageTensor<T>) -> T {
        self.weights
            .iter()
            .zip(img.data())
            .map(|(&w, &x)| w * x)
            .sum::<T>()
            + self.bias
    }
}

impl<T: Scalar> Classifier<T> for MockLinearClassifier<T> {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(BackendKind::Classifier, self.name.clone(), true)
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    fn classify(&self, img: &ImageTensor<T>) -> Result<ClassifierOutput<T>, BackendError> {
        let z = self.decision_value(img);
        Ok(ClassifierOutput::from_logits([-z, z]))
    }

    fn input_gradient(
        &self,
        img: &ImageTensor<T>,
        label: Label,
    ) -> Result<InputGradient<T>, BackendError> {
        let slope = ce_slope(self.decision_value(img), label);
        Ok(InputGradient {
            height: self.shape.0,
            width: self.shape.1,
            channels: self.shape.2,
            data: self.weights.iter().map(|&w| slope * w).collect(),
        })
    }

    fn saliency_tensors(
        &self,
        img: &ImageTensor<T>,
        target: Label,
    ) -> Result<SaliencyTensors<T>, BackendError> {
        let (h, w, c) = self.shape;
        let sign = match target {
            Label::Fake => T::one(),
            Label::Real => -T::one(),
        };
        let grads: Vec<T> = self.weights.iter().map(|&v| sign * v).collect();
        Ok(SaliencyTensors {
            activations: to_maps(img.data(), h, w, c),
            gradients: to_maps(&grads, h, w, c),
        })
    }
}

/// Classifier whose only saliency map is `A = gain * x[channel] + shift`,
/// average-pooled by `pool`, with fake-class score `mean(A)`.
///
/// GradCAM on it reduces to `ReLU(A) / (h * w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanMapClassifier<T> {
    pub shape: (usize, usize, usize),
    pub channel: usize,
    pub gain: T,
    pub shift: T,
    pub pool: usize,
}

impl<T: Scalar> MeanMapClassifier<T> {
    pub fn new(
        shape: (usize, usize, usize),
        channel: usize,
        gain: T,
        shift: T,
        pool: usize,
    ) -> Self {
        assert!(pool >= 1 && shape.0.is_multiple_of(pool) && shape.1.is_multiple_of(pool));
        assert!(channel < shape.2);
        Self {
            shape,
            channel,
            gain,
            shift,
            pool,
        }
    }

    /// The single activation map at layer resolution.
    pub fn activation_map(&self, img: &ImageTensor<T>) -> FeatureMaps<T> {
        let (lh, lw) = (self.shape.0 / self.pool, self.shape.1 / self.pool);
        let area = T::of_usize(self.pool * self.pool);
        let mut data = Vec::with_capacity(lh * lw);
        for i in 0..lh {
            for j in 0..lw {
                let mut s = T::zero();
                for r in i * self.pool..(i + 1) * self.pool {
                    for c in j * self.pool..(j + 1) * self.pool {
                        s = s + img.get(r, c, self.channel);
                    }
                }
                data.push(self.gain * (s / area) + self.shift);
            }
        }
        FeatureMaps::new(1, lh, lw, data).expect("consistent dims")
    }

    fn score(&self, img: &ImageTensor<T>) -> T {
        let a = self.activation_map(img);
        a.data.iter().copied().sum::<T>() / T::of_usize(a.data.len())
    }
}

impl<T: Scalar> Classifier<T> for MeanMapClassifier<T> {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(BackendKind::Classifier, "mock-mean-map", true)
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    fn classify(&self, img: &ImageTensor<T>) -> Result<ClassifierOutput<T>, BackendError> {
        let z = self.score(img);
        Ok(ClassifierOutput::from_logits([-z, z]))
    }

    fn input_gradient(
        &self,
        img: &ImageTensor<T>,
        label: Label,
    ) -> Result<InputGradient<T>, BackendError> {
        let slope = ce_slope(self.score(img), label);
        // d mean(A) / d x[r, c, channel] = gain / (H * W)
        let d = slope * self.gain / T::of_usize(self.shape.0 * self.shape.1);
        let mut g = InputGradient::zeros_like(img);
        for p in 0..self.shape.0 * self.shape.1 {
            g.data[p * self.shape.2 + self.channel] = d;
        }
        Ok(g)
    }

    fn saliency_tensors(
        &self,
        img: &ImageTensor<T>,
        target: Label,
    ) -> Result<SaliencyTensors<T>, BackendError> {
        let activations = self.activation_map(img);
        let n = activations.data.len();
        let g = T::one() / T::of_usize(n);
        let g = if target == Label::Fake { g } else { -g };
        let gradients = FeatureMaps::new(1, activations.height, activations.width, vec![g; n])?;
        Ok(SaliencyTensors {
            activations,
            gradients,
        })
    }
}

/// Constant logits regardless of input: flat loss, zero gradients, and a
/// prediction no attack can flip.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantClassifier<T> {
    pub shape: (usize, usize, usize),
    pub logits: [T; 2],
}

impl<T: Scalar> Classifier<T> for ConstantClassifier<T> {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(BackendKind::Classifier, "mock-constant", true)
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    fn classify(&self, _img: &ImageTensor<T>) -> Result<ClassifierOutput<T>, BackendError> {
        Ok(ClassifierOutput::from_logits(self.logits))
    }

    fn input_gradient(
        &self,
        img: &ImageTensor<T>,
        _label: Label,
    ) -> Result<InputGradient<T>, BackendError> {
        Ok(InputGradient::zeros_like(img))
    }

    fn saliency_tensors(
        &self,
        img: &ImageTensor<T>,
        _target: Label,
    ) -> Result<SaliencyTensors<T>, BackendError> {
        let (h, w, c) = self.shape;
        Ok(SaliencyTensors {
            activations: to_maps(img.data(), h, w, c),
            gradients: FeatureMaps::zeros(c, h, w),
        })
    }
}

/// Embedder over a fixed orthonormal basis.
///
/// Text maps to the normalized sum of the basis vectors of the keywords it
/// contains (axis 0 when none match). Images map to the basis vector of their
/// mean-intensity bucket: `axis = floor(mean * dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KeywordEmbedder {
    dim: usize,
    keywords: BTreeMap<String, usize>,
}

impl KeywordEmbedder {
    pub const DEFAULT_DIM: usize = 16;
    pub const FALLBACK_AXIS: usize = 0;

    pub fn new(
        dim: usize,
        keywords: impl IntoIterator<Item = (String, usize)>,
    ) -> Result<Self, BackendError> {
        let keywords: BTreeMap<String, usize> = keywords
            .into_iter()
            .map(|(k, v)| (k.to_lowercase(), v))
            .collect();
        if dim == 0 {
            return Err(BackendError::EmptyInput);
        }
        if let Some((_, &axis)) = keywords.iter().find(|(_, &a)| a >= dim) {
            return Err(BackendError::DimMismatch(axis, dim));
        }
        Ok(Self { dim, keywords })
    }

    /// Axis 1 "unnatural", 2 "realistic", 3 "irrelevant", 4 "animal",
    /// 5 "vehicle"; matches the shipped descriptor library phrasing.
    pub fn with_default_vocabulary() -> Self {
        Self::new(
            Self::DEFAULT_DIM,
            [
                ("unnatural", 1),
                ("realistic", 2),
                ("irrelevant", 3),
                ("animal", 4),
                ("vehicle", 5),
            ]
            .map(|(k, a)| (k.to_string(), a)),
        )
        .expect("valid vocabulary")
    }

    pub fn axis_of(&self, keyword: &str) -> Option<usize> {
        self.keywords.get(&keyword.to_lowercase()).copied()
    }

    /// Mean intensity at the centre of the bucket for `axis`.
    pub fn intensity_for_axis(&self, axis: usize) -> f64 {
        (axis as f64 + 0.5) / self.dim as f64
    }

    pub fn image_axis<T: Scalar>(&self, img: &ImageTensor<T>) -> usize {
        let bucket = (img.mean_intensity() * T::of_usize(self.dim)).floor();
        bucket.to_usize().unwrap_or(0).min(self.dim - 1)
    }
}

impl<T: Scalar> Embedder<T> for KeywordEmbedder {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(BackendKind::Embedder, "mock-keyword", true)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_image(&self, img: &ImageTensor<T>) -> Result<Embedding<T>, BackendError> {
        Ok(Embedding::basis(self.dim, self.image_axis(img)))
    }

    fn embed_text(&self, text: &str) -> Result<Embedding<T>, BackendError> {
        if text.trim().is_empty() {
            return Err(BackendError::EmptyInput);
        }
        let mut hits = vec![false; self.dim];
        for word in text.split(|c: char| !c.is_alphanumeric()) {
            if let Some(&axis) = self.keywords.get(&word.to_lowercase()) {
                hits[axis] = true;
            }
        }
        if !hits.iter().any(|&h| h) {
            hits[Self::FALLBACK_AXIS] = true;
        }
        Embedding::normalized(
            hits.into_iter()
                .map(|h| if h { T::one() } else { T::zero() })
                .collect(),
        )
    }
}

/// Returns its scripted responses in order, repeating the last one forever.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedVlm {
    responses: Vec<String>,
    calls: usize,
}

impl ScriptedVlm {
    pub fn new(responses: Vec<String>) -> Self {
        assert!(
            !responses.is_empty(),
            "scripted VLM needs at least one response"
        );
        Self {
            responses,
            calls: 0,
        }
    }

    pub fn canned(response: impl Into<String>) -> Self {
        Self::new(vec![response.into()])
    }

    pub fn malformed_then_valid(valid: impl Into<String>) -> Self {
        Self::new(vec![
            "I cannot produce JSON for this image.".into(),
            valid.into(),
        ])
    }

    pub fn calls(&self) -> usize {
        self.calls
    }
}

impl<T: Scalar> VisionLanguageModel<T> for ScriptedVlm {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(BackendKind::Vlm, "mock-scripted", true)
    }

    fn generate(&mut self, _prompt: &str, _img: &ImageTensor<T>) -> Result<String, BackendError> {
        let i = self.calls.min(self.responses.len() - 1);
        self.calls += 1;
        Ok(self.responses[i].clone())
    }
}

/// Answers every artifact prompt with a schema-conforming object built from the
/// error code and artifact description lines of the prompt.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TemplateVlm;

impl TemplateVlm {
    fn field<'a>(prompt: &'a str, key: &str) -> Option<&'a str> {
        prompt
            .lines()
            .find_map(|l| l.strip_prefix(key))
            .map(str::trim)
            .filter(|s| !s.is_empty())
    }
}

impl<T: Scalar> VisionLanguageModel<T> for TemplateVlm {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(BackendKind::Vlm, "mock-template", true)
    }

    fn generate(&mut self, prompt: &str, img: &ImageTensor<T>) -> Result<String, BackendError> {
        let Some(code) = Self::field(prompt, crate::explainer::ERROR_CODE_PREFIX) else {
            return Ok("No error code was given.".into());
        };
        let detail = Self::field(prompt, crate::explainer::ARTIFACT_DESCRIPTION_PREFIX)
            .unwrap_or("the artifact");
        let mut description = format!(
            "Subtle {} visible in the {}x{} image.",
            detail.trim_end_matches('.'),
            img.width(),
            img.height()
        );
        description.truncate(
            description
                .char_indices()
                .nth(280)
                .map_or(description.len(), |(i, _)| i),
        );
        Ok(serde_json::json!({ "artifact": code, "description": description }).to_string())
    }
}
