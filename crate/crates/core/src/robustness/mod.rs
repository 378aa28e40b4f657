//! Gradient-based L∞ attacks (FGSM, PGD, a Haar-domain attack and a
//! sequential try-all ensemble) plus an accuracy-under-attack harness.
//!
//! Every attack ascends the cross-entropy loss of the *true* label `y`. An
//! adversarial example counts as successful when the classifier's prediction
//! on it differs from `y`.

mod eval;

pub use eval::{
    evaluate_robustness, write_robustness_csv, AttackPlan, LabeledImage, RobustnessRow,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{self, BackendError, Classifier};
use crate::image::{ImageError, ImageTensor, Label};
use crate::scalar::Scalar;
use crate::wavelet::{self, WaveletError};

#[derive(Debug, Error)]
pub enum RobustnessError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("adversarial image is invalid: {0}")]
    Image(#[from] ImageError),
    #[error(transparent)]
    Wavelet(#[from] WaveletError),
    #[error("invalid attack configuration: {0}")]
    InvalidConfig(String),
    #[error("attack suite is empty")]
    EmptySuite,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("unknown attack `{0}`")]
    UnknownAttack(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Fgsm,
    Pgd,
    Wavelet,
}

impl AttackKind {
    pub const DEFAULT_SUITE: [AttackKind; 3] =
        [AttackKind::Fgsm, AttackKind::Pgd, AttackKind::Wavelet];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Pgd => "pgd",
            AttackKind::Wavelet => "wavelet",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackKind {
    type Err = RobustnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fgsm" => Ok(AttackKind::Fgsm),
            "pgd" => Ok(AttackKind::Pgd),
            "wavelet" | "wavelet_attack" => Ok(AttackKind::Wavelet),
            other => Err(RobustnessError::UnknownAttack(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"), default, deny_unknown_fields)]
pub struct AttackConfig<T> {
    /// L∞ budget in pixel units (`[0, 1]` scale).
    pub epsilon: T,
    /// PGD step size; zero turns PGD into a no-op.
    pub alpha: T,
    /// PGD iteration count.
    pub iterations: usize,
    /// Haar decomposition depth for the wavelet attack.
    pub wavelet_levels: usize,
    pub clamp_valid_range: bool,
    /// Symmetrically pad non power-of-two planes before the Haar transform.
    /// When off such inputs fail with [`WaveletError::NonDyadicDims`].
    pub pad_non_dyadic: bool,
}

impl<T: Scalar> Default for AttackConfig<T> {
    fn default() -> Self {
        Self {
            epsilon: T::of(8.0 / 255.0),
            alpha: T::of(2.0 / 255.0),
            iterations: 10,
            wavelet_levels: 1,
            clamp_valid_range: true,
            pad_non_dyadic: true,
        }
    }
}

impl<T: Scalar> AttackConfig<T> {
    pub fn validate(&self) -> Result<(), RobustnessError> {
        if !self.epsilon.is_finite() || self.epsilon < T::zero() {
            return Err(RobustnessError::InvalidConfig(format!(
                "epsilon {} must be >= 0",
                self.epsilon
            )));
        }
        if !self.alpha.is_finite() || self.alpha < T::zero() {
            return Err(RobustnessError::InvalidConfig(format!(
                "alpha {} must be >= 0",
                self.alpha
            )));
        }
        if self.iterations == 0 {
            return Err(RobustnessError::InvalidConfig(
                "iterations must be >= 1".into(),
            ));
        }
        if self.wavelet_levels == 0 {
            return Err(RobustnessError::InvalidConfig(
                "wavelet_levels must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn with_epsilon(mut self, epsilon: T) -> Self {
        self.epsilon = epsilon;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct AttackResult<T> {
    pub attack: AttackKind,
    pub adversarial: ImageTensor<T>,
    /// The prediction on `adversarial` differs from the true label.
    pub success: bool,
    pub prediction: Label,
    pub linf_distance: T,
    /// Backend calls (gradients plus classifications) spent.
    pub queries: usize,
}

/// Outcome of [`autoattack`]: the selected member result plus the order in
/// which members actually ran.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoAttackOutcome<T> {
    pub result: AttackResult<T>,
    pub executed: Vec<AttackKind>,
    pub total_queries: usize,
}

/// Elementwise clip of `x_adv` into `[x - eps, x + eps]`.
pub fn project_linf<T: Scalar>(
    x_adv: &ImageTensor<T>,
    x: &ImageTensor<T>,
    epsilon: T,
) -> Result<ImageTensor<T>, RobustnessError> {
    if x_adv.shape() != x.shape() {
        return Err(
            ImageError::DimMismatch(format!("{:?} vs {:?}", x_adv.shape(), x.shape())).into(),
        );
    }
    let data = project_values(x_adv.data(), x.data(), epsilon);
    let (h, w, c) = x.shape();
    Ok(ImageTensor::new(h, w, c, data)?)
}

fn project_values<T: Scalar>(adv: &[T], x: &[T], epsilon: T) -> Vec<T> {
    adv.iter()
        .zip(x)
        .map(|(&a, &o)| a.max(o - epsilon).min(o + epsilon))
        .collect()
}

/// Turns raw values into an image, clamping to `[0, 1]` when configured.
/// Without the clamp an out-of-range value is an error.
fn finish<T: Scalar>(
    x: &ImageTensor<T>,
    values: Vec<T>,
    clamp: bool,
) -> Result<ImageTensor<T>, RobustnessError> {
    let (h, w, c) = x.shape();
    if clamp {
        Ok(ImageTensor::from_clamped(h, w, c, values)?)
    } else {
        Ok(ImageTensor::new(h, w, c, values)?)
    }
}

fn conclude<T: Scalar>(
    backend: &dyn Classifier<T>,
    attack: AttackKind,
    x: &ImageTensor<T>,
    y: Label,
    adversarial: ImageTensor<T>,
    gradient_calls: usize,
) -> Result<AttackResult<T>, RobustnessError> {
    let prediction = backends::classify(backend, &adversarial)?.prediction;
    let linf_distance = adversarial.linf_distance(x)?;
    Ok(AttackResult {
        attack,
        success: prediction != y,
        prediction,
        linf_distance,
        adversarial,
        queries: gradient_calls + 1,
    })
}

fn sign_step<T: Scalar>(x: &[T], grad: &[T], step: T) -> Vec<T> {
    x.iter()
        .zip(grad)
        .map(|(&v, &g)| v + step * g.sign())
        .collect()
}

/// `x' = clamp(x + eps * sign(grad_x J(x, y)))`.
pub fn fgsm<T: Scalar>(
    backend: &dyn Classifier<T>,
    x: &ImageTensor<T>,
    y: Label,
    cfg: &AttackConfig<T>,
) -> Result<AttackResult<T>, RobustnessError> {
    cfg.validate()?;
    let g = backends::input_gradient(backend, x, y)?;
    let stepped = sign_step(x.data(), &g.data, cfg.epsilon);
    let adv = finish(x, stepped, cfg.clamp_valid_range)?;
    conclude(backend, AttackKind::Fgsm, x, y, adv, 1)
}

/// `T` rounds of sign-gradient ascent with step `alpha`, each followed by
/// projection onto the ε-ball around `x` and the valid-range clamp.
pub fn pgd<T: Scalar>(
    backend: &dyn Classifier<T>,
    x: &ImageTensor<T>,
    y: Label,
    cfg: &AttackConfig<T>,
) -> Result<AttackResult<T>, RobustnessError> {
    cfg.validate()?;
    let mut current = x.clone();
    for _ in 0..cfg.iterations {
        let g = backends::input_gradient(backend, &current, y)?;
        let stepped = sign_step(current.data(), &g.data, cfg.alpha);
        let projected = project_values(&stepped, x.data(), cfg.epsilon);
        current = finish(x, projected, cfg.clamp_valid_range)?;
    }
    conclude(backend, AttackKind::Pgd, x, y, current, cfg.iterations)
}

/// Perturbs the Haar detail coefficients of levels `1..=L` (per channel) along
/// the coefficient-space gradient, leaving the coarsest approximation band
/// untouched.
///
/// Because the transform is orthonormal the coefficient gradient is simply
/// the forward transform of the input gradient. The raw step `W + c * g_W` is
/// scaled so the reconstructed perturbation has L∞ norm exactly ε; a final
/// projection absorbs transform rounding.
pub fn wavelet_attack<T: Scalar>(
    backend: &dyn Classifier<T>,
    x: &ImageTensor<T>,
    y: Label,
    cfg: &AttackConfig<T>,
) -> Result<AttackResult<T>, RobustnessError> {
    cfg.validate()?;
    let (h, w, channels) = x.shape();
    let dyadic = h.is_power_of_two() && w.is_power_of_two();
    if !dyadic && !cfg.pad_non_dyadic {
        return Err(WaveletError::NonDyadicDims {
            height: h,
            width: w,
        }
        .into());
    }
    let (ph, pw) = (h.next_power_of_two(), w.next_power_of_two());
    let levels = cfg.wavelet_levels;
    let mask = wavelet::detail_mask(ph, pw, levels);
    let g = backends::input_gradient(backend, x, y)?;

    // By linearity, reconstructing `W + c * g_W` equals `x + c * inverse(g_W)`;
    // adding the perturbation directly keeps `x` free of transform rounding.
    let mut deltas = Vec::with_capacity(channels);
    let mut max_delta = T::zero();
    for ch in 0..channels {
        // Zero-padding is the adjoint of cropping.
        let mut gpad = vec![T::zero(); ph * pw];
        for r in 0..h {
            for c in 0..w {
                gpad[r * pw + c] = g.data[(r * w + c) * channels + ch];
            }
        }
        let mut gw = wavelet::haar2d_forward(&gpad, ph, pw, levels)?;
        for (v, &m) in gw.iter_mut().zip(&mask) {
            if !m {
                *v = T::zero();
            }
        }
        let delta = wavelet::haar2d_inverse(&gw, ph, pw, levels)?;
        let delta = wavelet::crop_plane(&delta, pw, h, w);
        max_delta = delta.iter().fold(max_delta, |m, v| m.max(v.abs()));
        deltas.push(delta);
    }

    let scale = if max_delta > T::zero() {
        cfg.epsilon / max_delta
    } else {
        T::zero()
    };
    let mut values = x.data().to_vec();
    for (ch, delta) in deltas.iter().enumerate() {
        for (i, &d) in delta.iter().enumerate() {
            values[i * channels + ch] = values[i * channels + ch] + scale * d;
        }
    }
    let projected = project_values(&values, x.data(), cfg.epsilon);
    let adv = finish(x, projected, cfg.clamp_valid_range)?;
    conclude(backend, AttackKind::Wavelet, x, y, adv, 1)
}

pub fn run_attack<T: Scalar>(
    kind: AttackKind,
    backend: &dyn Classifier<T>,
    x: &ImageTensor<T>,
    y: Label,
    cfg: &AttackConfig<T>,
) -> Result<AttackResult<T>, RobustnessError> {
    match kind {
        AttackKind::Fgsm => fgsm(backend, x, y, cfg),
        AttackKind::Pgd => pgd(backend, x, y, cfg),
        AttackKind::Wavelet => wavelet_attack(backend, x, y, cfg),
    }
}

/// Runs `suite` in order and stops at the first successful member; if none
/// succeeds the last member's result is returned.
pub fn autoattack<T: Scalar>(
    backend: &dyn Classifier<T>,
    x: &ImageTensor<T>,
    y: Label,
    cfg: &AttackConfig<T>,
    suite: &[AttackKind],
) -> Result<AutoAttackOutcome<T>, RobustnessError> {
    if suite.is_empty() {
        return Err(RobustnessError::EmptySuite);
    }
    let mut executed = Vec::with_capacity(suite.len());
    let mut total_queries = 0;
    let mut last = None;
    for &kind in suite {
        let result = run_attack(kind, backend, x, y, cfg)?;
        executed.push(kind);
        total_queries += result.queries;
        let success = result.success;
        last = Some(result);
        if success {
            break;
        }
    }
    Ok(AutoAttackOutcome {
        result: last.expect("suite is non-empty"),
        executed,
        total_queries,
    })
}
