use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoteKind {
    Positive,
    Negative,
    Neutral,
}

/// A patch's vote for one artifact, with the similarities it was derived from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchVote<T> {
    pub kind: VoteKind,
    /// Similarities to the positive, negative and neutral descriptions.
    pub similarities: [T; 3],
}

impl<T: Scalar> PatchVote<T> {
    /// Votes for the most similar description. Ties resolve with priority
    /// neutral > negative > positive.
    pub fn from_similarities(positive: T, negative: T, neutral: T) -> Self {
        let kind = if neutral >= positive && neutral >= negative {
            VoteKind::Neutral
        } else if negative >= positive {
            VoteKind::Negative
        } else {
            VoteKind::Positive
        };
        Self {
            kind,
            similarities: [positive, negative, neutral],
        }
    }

    pub fn of_kind(kind: VoteKind) -> Self {
        let z = T::zero();
        Self {
            kind,
            similarities: [z, z, z],
        }
    }
}

/// Positive votes count 1, negative 0; neutral votes are excluded (`None`).
pub fn encode_vote<T: Scalar>(vote: &PatchVote<T>) -> Option<T> {
    match vote.kind {
        VoteKind::Positive => Some(T::one()),
        VoteKind::Negative => Some(T::zero()),
        VoteKind::Neutral => None,
    }
}
