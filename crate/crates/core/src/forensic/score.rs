use serde::{Deserialize, Serialize};

use super::vote::{encode_vote, PatchVote, VoteKind};
use super::ForensicError;
use crate::scalar::Scalar;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteCounts {
    pub positive: usize,
    pub negative: usize,
    pub neutral: usize,
}

impl VoteCounts {
    pub fn tally<'a, T: 'a>(votes: impl IntoIterator<Item = &'a PatchVote<T>>) -> Self {
        let mut counts = Self::default();
        for v in votes {
            match v.kind {
                VoteKind::Positive => counts.positive += 1,
                VoteKind::Negative => counts.negative += 1,
                VoteKind::Neutral => counts.neutral += 1,
            }
        }
        counts
    }

    pub fn total(&self) -> usize {
        self.positive + self.negative + self.neutral
    }
}

/// Weighted-vote evidence for one artifact in one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar"))]
pub struct ArtifactScore<T> {
    pub artifact_name: String,
    pub score: T,
    pub counts: VoteCounts,
    pub retained: bool,
}

/// `S = sum(w_k v_k) / sum(w_k)` over non-neutral patches.
///
/// Neutral patches contribute to neither sum. If nothing is left to average
/// the artifact does not apply to the image and `NoRelevantPatches` is
/// returned instead of a score.
pub fn artifact_score<T: Scalar>(
    artifact_name: &str,
    weights: &[T],
    votes: &[PatchVote<T>],
    threshold: T,
) -> Result<ArtifactScore<T>, ForensicError> {
    if weights.len() != votes.len() {
        return Err(ForensicError::LengthMismatch {
            weights: weights.len(),
            votes: votes.len(),
        });
    }
    let mut numerator = T::zero();
    let mut denominator = T::zero();
    for (&w, vote) in weights.iter().zip(votes) {
        if !w.is_finite() || w < T::zero() {
            return Err(ForensicError::InvalidWeight(w.as_f64()));
        }
        if let Some(v) = encode_vote(vote) {
            numerator = numerator + w * v;
            denominator = denominator + w;
        }
    }
    if denominator <= T::zero() {
        return Err(ForensicError::NoRelevantPatches);
    }
    let score = numerator / denominator;
    Ok(ArtifactScore {
        artifact_name: artifact_name.to_string(),
        score,
        counts: VoteCounts::tally(votes),
        retained: score >= threshold,
    })
}
