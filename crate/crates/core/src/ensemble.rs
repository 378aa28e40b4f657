//! Weighted ensembles of member classifiers and seeded weight search.
//!
//! Members are consumed as precomputed fake-probability tables. The search
//! samples raw weights uniformly on `[0, 1]^n`, normalizes them onto the
//! simplex, scores each trial by validation accuracy and keeps the best.

use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Label;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("all raw weights are zero")]
    AllZeroWeights,
    #[error("weight {0} is negative or non-finite")]
    InvalidWeight(f64),
    #[error("no weights given")]
    Empty,
    #[error("dimension mismatch: {0} member outputs, {1} weights")]
    DimMismatch(usize, usize),
    #[error("member probability {0} outside [0, 1]")]
    ProbabilityOutOfRange(f64),
    #[error("validation set is empty")]
    EmptyValidationSet,
    #[error("trial count must be at least 1")]
    NoTrials,
    #[error("cannot read member table: {0}")]
    Table(String),
}

/// Non-negative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EnsembleWeights<T>(Vec<T>);

impl<T: Scalar> EnsembleWeights<T> {
    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn one_hot(n: usize, k: usize) -> Self {
        let mut w = vec![T::zero(); n];
        w[k] = T::one();
        Self(w)
    }
}

/// `w_i / sum(w)`; proportions are preserved.
pub fn normalize_weights<T: Scalar>(raw: &[T]) -> Result<EnsembleWeights<T>, EnsembleError> {
    if raw.is_empty() {
        return Err(EnsembleError::Empty);
    }
    if let Some(&bad) = raw.iter().find(|w| !w.is_finite() || **w < T::zero()) {
        return Err(EnsembleError::InvalidWeight(bad.as_f64()));
    }
    let total: T = raw.iter().copied().sum();
    if total <= T::zero() {
        return Err(EnsembleError::AllZeroWeights);
    }
    Ok(EnsembleWeights(raw.iter().map(|&w| w / total).collect()))
}

/// Convex combination of member fake-probabilities.
pub fn ensemble_predict<T: Scalar>(
    member_probs: &[T],
    weights: &EnsembleWeights<T>,
) -> Result<T, EnsembleError> {
    if member_probs.len() != weights.len() {
        return Err(EnsembleError::DimMismatch(
            member_probs.len(),
            weights.len(),
        ));
    }
    let mut lo = T::infinity();
    let mut hi = T::neg_infinity();
    let mut acc = T::zero();
    for (&p, &w) in member_probs.iter().zip(weights.as_slice()) {
        if !(T::zero()..=T::one()).contains(&p) {
            return Err(EnsembleError::ProbabilityOutOfRange(p.as_f64()));
        }
        lo = lo.min(p);
        hi = hi.max(p);
        acc = acc + w * p;
    }
    // The weights sum to one only up to rounding.
    Ok(acc.max(lo).min(hi))
}

/// Per-sample member probabilities with ground-truth labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationTable<T> {
    pub member_names: Vec<String>,
    pub sample_ids: Vec<String>,
    pub labels: Vec<Label>,
    /// `probs[sample][member]`
    pub probs: Vec<Vec<T>>,
}

impl<T: Scalar> ValidationTable<T> {
    pub fn new(
        member_names: Vec<String>,
        rows: Vec<(String, Label, Vec<T>)>,
    ) -> Result<Self, EnsembleError> {
        let n = member_names.len();
        let mut table = Self {
            member_names,
            sample_ids: Vec::with_capacity(rows.len()),
            labels: Vec::with_capacity(rows.len()),
            probs: Vec::with_capacity(rows.len()),
        };
        for (id, label, probs) in rows {
            if probs.len() != n {
                return Err(EnsembleError::DimMismatch(probs.len(), n));
            }
            if let Some(&p) = probs.iter().find(|p| !(T::zero()..=T::one()).contains(*p)) {
                return Err(EnsembleError::ProbabilityOutOfRange(p.as_f64()));
            }
            table.sample_ids.push(id);
            table.labels.push(label);
            table.probs.push(probs);
        }
        Ok(table)
    }

    /// Parses CSV with header `sample_id,label,<member>...`; labels are
    /// `real`/`fake` or `0`/`1`.
    pub fn from_csv(reader: impl Read) -> Result<Self, EnsembleError> {
        let table_err = |e: String| EnsembleError::Table(e);
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers().map_err(|e| table_err(e.to_string()))?.clone();
        if headers.len() < 3 || &headers[0] != "sample_id" || &headers[1] != "label" {
            return Err(table_err(
                "header must be sample_id,label,<member>...".into(),
            ));
        }
        let members: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
        let mut rows = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| table_err(e.to_string()))?;
            let label: Label = record[1]
                .parse()
                .map_err(|e| table_err(format!("row {}: {e}", line + 1)))?;
            let probs = record
                .iter()
                .skip(2)
                .map(|v| {
                    v.parse::<f64>()
                        .map(T::of)
                        .map_err(|e| table_err(format!("row {}: {v:?}: {e}", line + 1)))
                })
                .collect::<Result<Vec<T>, _>>()?;
            rows.push((record[0].to_string(), label, probs));
        }
        Self::new(members, rows)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EnsembleError> {
        let f = std::fs::File::open(path.as_ref())
            .map_err(|e| EnsembleError::Table(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_csv(f)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn members(&self) -> usize {
        self.member_names.len()
    }
}

/// Fraction of samples whose ensemble probability lands on the right side of
/// 0.5 (`p >= 0.5` predicts fake).
pub fn accuracy<T: Scalar>(
    table: &ValidationTable<T>,
    weights: &EnsembleWeights<T>,
) -> Result<T, EnsembleError> {
    if table.is_empty() {
        return Err(EnsembleError::EmptyValidationSet);
    }
    let half = T::of(0.5);
    let mut correct = 0usize;
    for (probs, &label) in table.probs.iter().zip(&table.labels) {
        let p = ensemble_predict(probs, weights)?;
        let predicted = if p >= half { Label::Fake } else { Label::Real };
        correct += usize::from(predicted == label);
    }
    Ok(T::of_usize(correct) / T::of_usize(table.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchOptions {
    pub trials: usize,
    pub seed: u64,
    /// Force the first `n` trials to the one-hot vectors, so the result is
    /// never worse than the best single member (given `trials >= n`).
    pub inject_one_hot: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            trials: 100,
            seed: 0,
            inject_one_hot: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct TrialRecord<T> {
    pub index: usize,
    pub raw_weights: Vec<T>,
    pub validation_score: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct SearchOutcome<T> {
    pub weights: EnsembleWeights<T>,
    pub best_score: T,
    pub best_trial: usize,
    pub trials: Vec<TrialRecord<T>>,
}

/// Raw weights for each trial, drawn sequentially from one ChaCha8 stream.
pub fn trial_weights<T: Scalar>(members: usize, options: &SearchOptions) -> Vec<Vec<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    (0..options.trials)
        .map(|i| {
            if options.inject_one_hot && i < members {
                return EnsembleWeights::<T>::one_hot(members, i).0;
            }
            loop {
                let raw: Vec<f64> = (0..members).map(|_| rng.gen::<f64>()).collect();
                if raw.iter().any(|&w| w > 0.0) {
                    return raw.into_iter().map(T::of).collect();
                }
            }
        })
        .collect()
}

/// Runs the trials (in parallel) and returns the best one; ties keep the
/// earliest trial.
pub fn search_weights<T: Scalar>(
    table: &ValidationTable<T>,
    options: &SearchOptions,
) -> Result<SearchOutcome<T>, EnsembleError> {
    if options.trials == 0 {
        return Err(EnsembleError::NoTrials);
    }
    if table.is_empty() {
        return Err(EnsembleError::EmptyValidationSet);
    }
    let raws = trial_weights::<T>(table.members(), options);
    let trials = raws
        .into_par_iter()
        .enumerate()
        .map(|(index, raw_weights)| {
            let w = normalize_weights(&raw_weights)?;
            Ok(TrialRecord {
                index,
                validation_score: accuracy(table, &w)?,
                raw_weights,
            })
        })
        .collect::<Result<Vec<_>, EnsembleError>>()?;
    let best = trials.iter().fold(&trials[0], |best, t| {
        if t.validation_score > best.validation_score {
            t
        } else {
            best
        }
    });
    Ok(SearchOutcome {
        weights: normalize_weights(&best.raw_weights)?,
        best_score: best.validation_score,
        best_trial: best.index,
        trials,
    })
}
