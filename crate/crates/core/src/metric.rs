//! Metric-learning losses: pairwise contrastive, triplet, their weighted
//! combination, and a temperature-scaled supervised contrastive loss.
//!
//! Each loss has an analytic gradient companion so it can drive an optimizer
//! and be checked against finite differences.
//!
//! Note the asymmetry in the pairwise contrastive loss: similar pairs pay the
//! squared distance `d^2`, dissimilar pairs pay the squared hinge on the plain
//! distance, `max(0, m - d)^2`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("pair list is empty")]
    EmptyPairList,
    #[error("triplet list is empty")]
    EmptyTripletList,
    #[error("embedding dims differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("no anchor has a same-label partner")]
    NoPositivePairs,
    #[error("{0} embeddings but {1} labels")]
    LabelCountMismatch(usize, usize),
    #[error("batch needs at least two embeddings, got {0}")]
    BatchTooSmall(usize),
    #[error("embedding {0} has zero norm")]
    ZeroNorm(usize),
    #[error("invalid loss configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct LossConfig<T> {
    pub alpha: T,
    pub beta: T,
    pub margin: T,
    pub temperature: T,
}

impl<T: Scalar> Default for LossConfig<T> {
    /// `alpha = beta = 0.5` are arbitrary; nothing prescribes their values.
    fn default() -> Self {
        Self {
            alpha: T::of(0.5),
            beta: T::of(0.5),
            margin: T::one(),
            temperature: T::of(0.1),
        }
    }
}

impl<T: Scalar> LossConfig<T> {
    pub fn validate(&self) -> Result<(), LossError> {
        if !self.temperature.is_finite() || self.temperature <= T::zero() {
            return Err(LossError::InvalidConfig(format!(
                "temperature {} must be > 0",
                self.temperature
            )));
        }
        if !self.margin.is_finite() || self.margin < T::zero() {
            return Err(LossError::InvalidConfig(format!(
                "margin {} must be >= 0",
                self.margin
            )));
        }
        if !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(LossError::InvalidConfig(
                "alpha and beta must be finite".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingPair<'a, T> {
    pub left: &'a [T],
    pub right: &'a [T],
    /// `true` for a similar pair (`y = 1`).
    pub similar: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triplet<'a, T> {
    pub anchor: &'a [T],
    pub positive: &'a [T],
    pub negative: &'a [T],
}

/// Gradients of a loss with respect to each member of a pair.
pub type PairGradient<T> = (Vec<T>, Vec<T>);
/// Gradients with respect to anchor, positive and negative.
pub type TripletGradient<T> = [Vec<T>; 3];

fn check_dims<T>(a: &[T], b: &[T]) -> Result<(), LossError> {
    if a.len() != b.len() {
        return Err(LossError::DimMismatch(a.len(), b.len()));
    }
    Ok(())
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

fn check_margin<T: Scalar>(margin: T) -> Result<(), LossError> {
    if !margin.is_finite() || margin < T::zero() {
        return Err(LossError::InvalidConfig(format!(
            "margin {margin} must be >= 0"
        )));
    }
    Ok(())
}

/// Mean over pairs of `y d^2 + (1 - y) max(0, m - d)^2`, `d` the Euclidean distance.
pub fn contrastive_pair_loss<T: Scalar>(
    pairs: &[EmbeddingPair<'_, T>],
    margin: T,
) -> Result<T, LossError> {
    check_margin(margin)?;
    if pairs.is_empty() {
        return Err(LossError::EmptyPairList);
    }
    let mut total = T::zero();
    for p in pairs {
        check_dims(p.left, p.right)?;
        let d2 = sq_dist(p.left, p.right);
        total = total
            + if p.similar {
                d2
            } else {
                let hinge = (margin - d2.sqrt()).max(T::zero());
                hinge * hinge
            };
    }
    Ok(total / T::of_usize(pairs.len()))
}

/// Gradient of [`contrastive_pair_loss`]. At `d = 0` on a dissimilar pair the
/// direction is undefined and the zero subgradient is used.
pub fn contrastive_pair_loss_grad<T: Scalar>(
    pairs: &[EmbeddingPair<'_, T>],
    margin: T,
) -> Result<Vec<PairGradient<T>>, LossError> {
    check_margin(margin)?;
    if pairs.is_empty() {
        return Err(LossError::EmptyPairList);
    }
    let n = T::of_usize(pairs.len());
    let two = T::of(2.0);
    pairs
        .iter()
        .map(|p| {
            check_dims(p.left, p.right)?;
            let d = sq_dist(p.left, p.right).sqrt();
            let coeff = if p.similar {
                two / n
            } else if d < margin && d > T::zero() {
                -two * (margin - d) / (d * n)
            } else {
                T::zero()
            };
            let gl: Vec<T> = p
                .left
                .iter()
                .zip(p.right)
                .map(|(&a, &b)| coeff * (a - b))
                .collect();
            let gr = gl.iter().map(|&g| -g).collect();
            Ok((gl, gr))
        })
        .collect()
}

/// Mean of `max(0, d(a,p)^2 - d(a,n)^2 + m)`.
pub fn triplet_loss<T: Scalar>(triplets: &[Triplet<'_, T>], margin: T) -> Result<T, LossError> {
    check_margin(margin)?;
    if triplets.is_empty() {
        return Err(LossError::EmptyTripletList);
    }
    let mut total = T::zero();
    for t in triplets {
        check_dims(t.anchor, t.positive)?;
        check_dims(t.anchor, t.negative)?;
        let h = sq_dist(t.anchor, t.positive) - sq_dist(t.anchor, t.negative) + margin;
        total = total + h.max(T::zero());
    }
    Ok(total / T::of_usize(triplets.len()))
}

pub fn triplet_loss_grad<T: Scalar>(
    triplets: &[Triplet<'_, T>],
    margin: T,
) -> Result<Vec<TripletGradient<T>>, LossError> {
    check_margin(margin)?;
    if triplets.is_empty() {
        return Err(LossError::EmptyTripletList);
    }
    let scale = T::of(2.0) / T::of_usize(triplets.len());
    triplets
        .iter()
        .map(|t| {
            check_dims(t.anchor, t.positive)?;
            check_dims(t.anchor, t.negative)?;
            let dim = t.anchor.len();
            let h = sq_dist(t.anchor, t.positive) - sq_dist(t.anchor, t.negative) + margin;
            if h <= T::zero() {
                return Ok([
                    vec![T::zero(); dim],
                    vec![T::zero(); dim],
                    vec![T::zero(); dim],
                ]);
            }
            let mut ga = Vec::with_capacity(dim);
            let mut gp = Vec::with_capacity(dim);
            let mut gn = Vec::with_capacity(dim);
            for i in 0..dim {
                let (a, p, n) = (t.anchor[i], t.positive[i], t.negative[i]);
                ga.push(scale * (n - p));
                gp.push(-scale * (a - p));
                gn.push(scale * (a - n));
            }
            Ok([ga, gp, gn])
        })
        .collect()
}

/// `alpha * contrastive + beta * triplet`.
pub fn combined_loss<T: Scalar>(contrastive: T, triplet: T, config: &LossConfig<T>) -> T {
    config.alpha * contrastive + config.beta * triplet
}

/// Feature matrix (one row per sample) with integer class labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct LabeledEmbeddingBatch<T> {
    embeddings: Vec<Vec<T>>,
    labels: Vec<i64>,
}

impl<T: Scalar> LabeledEmbeddingBatch<T> {
    pub fn new(embeddings: Vec<Vec<T>>, labels: Vec<i64>) -> Result<Self, LossError> {
        if embeddings.len() != labels.len() {
            return Err(LossError::LabelCountMismatch(
                embeddings.len(),
                labels.len(),
            ));
        }
        if embeddings.len() < 2 {
            return Err(LossError::BatchTooSmall(embeddings.len()));
        }
        let dim = embeddings[0].len();
        for (i, e) in embeddings.iter().enumerate() {
            check_dims(&embeddings[0], e)?;
            if e.iter().all(|v| v.is_zero()) {
                return Err(LossError::ZeroNorm(i));
            }
        }
        if dim == 0 {
            return Err(LossError::DimMismatch(0, 0));
        }
        Ok(Self { embeddings, labels })
    }

    pub fn embeddings(&self) -> &[Vec<T>] {
        &self.embeddings
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Intermediate matrices of the supervised contrastive loss, row-major `N x N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupConTrace<T> {
    pub normalized: Vec<Vec<T>>,
    pub similarity: Vec<T>,
    pub positive_mask: Vec<bool>,
    /// Computed for inspection only; the loss does not use it.
    pub negative_mask: Vec<bool>,
    pub log_prob: Vec<T>,
    pub positive_pairs: usize,
    pub loss: T,
}

fn validate_temperature<T: Scalar>(temperature: T) -> Result<(), LossError> {
    if !temperature.is_finite() || temperature <= T::zero() {
        return Err(LossError::InvalidConfig(format!(
            "temperature {temperature} must be > 0"
        )));
    }
    Ok(())
}

/// Full computation with all intermediates:
/// row-normalize `F`, `S = F F^T / tau`, `M+ = [y_i = y_j] - I`,
/// `log_prob_ij = S_ij - log sum_k exp(S_ik)` and
/// `L = -sum(M+ * log_prob) / sum(M+)`.
///
/// Anchors without a same-label partner have an all-zero mask row and so drop
/// out of both sums.
pub fn supervised_contrastive_trace<T: Scalar>(
    batch: &LabeledEmbeddingBatch<T>,
    temperature: T,
) -> Result<SupConTrace<T>, LossError> {
    validate_temperature(temperature)?;
    let n = batch.len();
    let normalized: Vec<Vec<T>> = batch
        .embeddings
        .iter()
        .map(|row| {
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            row.iter().map(|&v| v / norm).collect()
        })
        .collect();
    let mut similarity = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            let dot: T = normalized[i]
                .iter()
                .zip(&normalized[j])
                .map(|(&a, &b)| a * b)
                .sum();
            similarity[i * n + j] = dot / temperature;
        }
    }
    let mut positive_mask = vec![false; n * n];
    let mut negative_mask = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            let same = batch.labels[i] == batch.labels[j];
            positive_mask[i * n + j] = same && i != j;
            negative_mask[i * n + j] = !same;
        }
    }
    let mut log_prob = vec![T::zero(); n * n];
    for i in 0..n {
        let row = &similarity[i * n..(i + 1) * n];
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + row.iter().map(|&s| (s - m).exp()).sum::<T>().ln();
        for j in 0..n {
            log_prob[i * n + j] = row[j] - lse;
        }
    }
    let positive_pairs = positive_mask.iter().filter(|&&m| m).count();
    if positive_pairs == 0 {
        return Err(LossError::NoPositivePairs);
    }
    let masked: T = log_prob
        .iter()
        .zip(&positive_mask)
        .filter(|(_, &m)| m)
        .map(|(&lp, _)| lp)
        .sum();
    let loss = -masked / T::of_usize(positive_pairs);
    Ok(SupConTrace {
        normalized,
        similarity,
        positive_mask,
        negative_mask,
        log_prob,
        positive_pairs,
        loss,
    })
}

pub fn supervised_contrastive_loss<T: Scalar>(
    batch: &LabeledEmbeddingBatch<T>,
    temperature: T,
) -> Result<T, LossError> {
    Ok(supervised_contrastive_trace(batch, temperature)?.loss)
}

/// Gradient of [`supervised_contrastive_loss`] with respect to the raw
/// (unnormalized) embeddings.
pub fn supervised_contrastive_loss_grad<T: Scalar>(
    batch: &LabeledEmbeddingBatch<T>,
    temperature: T,
) -> Result<Vec<Vec<T>>, LossError> {
    let trace = supervised_contrastive_trace(batch, temperature)?;
    let n = batch.len();
    let dim = batch.embeddings[0].len();
    let p = T::of_usize(trace.positive_pairs);
    // dL/dS_ij = -(M_ij - n_i softmax_ij) / P
    let mut ds = vec![T::zero(); n * n];
    for i in 0..n {
        let row_mask = &trace.positive_mask[i * n..(i + 1) * n];
        let n_i = T::of_usize(row_mask.iter().filter(|&&m| m).count());
        for j in 0..n {
            let softmax = trace.log_prob[i * n + j].exp();
            let m = if row_mask[j] { T::one() } else { T::zero() };
            ds[i * n + j] = -(m - n_i * softmax) / p;
        }
    }
    let mut grads = Vec::with_capacity(n);
    for i in 0..n {
        // dL/df_i = (1/tau) sum_j (G_ij + G_ji) f_j
        let mut gf = vec![T::zero(); dim];
        for j in 0..n {
            let c = (ds[i * n + j] + ds[j * n + i]) / temperature;
            for (g, &f) in gf.iter_mut().zip(&trace.normalized[j]) {
                *g = *g + c * f;
            }
        }
        // Through f = x / |x|: dL/dx = (gf - (gf . f) f) / |x|
        let x = &batch.embeddings[i];
        let norm = x.iter().map(|&v| v * v).sum::<T>().sqrt();
        let f = &trace.normalized[i];
        let proj: T = gf.iter().zip(f).map(|(&g, &fv)| g * fv).sum();
        grads.push(
            gf.iter()
                .zip(f)
                .map(|(&g, &fv)| (g - proj * fv) / norm)
                .collect(),
        );
    }
    Ok(grads)
}
