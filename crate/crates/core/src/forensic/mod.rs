//! Deterministic patch geometry, heatmap interpolation, patch weighting and
//! weighted-vote aggregation.

mod interp;
mod patch;
mod score;
mod vote;

use thiserror::Error;

pub use interp::{bilinear_source_coord, interpolate_heatmap, resize_bilinear};
pub use patch::{build_patch_grid, patch_weight, Patch, PatchGrid, DEFAULT_PATCH_SIZE};
pub use score::{artifact_score, ArtifactScore, VoteCounts, DEFAULT_THRESHOLD};
pub use vote::{encode_vote, PatchVote, VoteKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForensicError {
    #[error("zero dimension (dims {height}x{width}, patch size {patch_size})")]
    ZeroDimension {
        height: usize,
        width: usize,
        patch_size: usize,
    },
    #[error("patch {height}x{width}+{row}+{col} outside heatmap {map_height}x{map_width}")]
    PatchOutOfBounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
        map_height: usize,
        map_width: usize,
    },
    #[error("{weights} weights but {votes} votes")]
    LengthMismatch { weights: usize, votes: usize },
    #[error("invalid patch weight {0}")]
    InvalidWeight(f64),
    #[error(
        "no relevant patches: every vote is neutral or the relevant patches carry zero weight"
    )]
    NoRelevantPatches,
}
