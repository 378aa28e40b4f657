//! End-to-end artifact analysis: descriptor library, patch voting, score
//! aggregation, model-written explanations, reports and batch execution.

mod batch;
mod descriptors;
mod pipeline;
mod prompt;
mod report;
mod scoring;

pub use batch::{
    run_batch, write_atomic, BatchError, BatchFailure, BatchItem, BatchOptions, BatchSummary,
    IndexEntry, INDEX_FILE,
};
pub use descriptors::{ArtifactDescriptor, Category, DescriptorLibrary, DEFAULT_LIBRARY_SOURCE};
pub use pipeline::{analyze, Analysis, PipelineConfig, PipelineError, Stage};
pub use prompt::{
    build_prompt, explain_retained, parse_vlm_response, ArtifactExplanation, AttemptStatus,
    ExplanationAttempt, ARTIFACT_DESCRIPTION_PREFIX, DEFAULT_RETRIES, ERROR_CODE_PREFIX,
    EXAMPLE_OBJECT, GUIDELINES, INSTRUCTION, MAX_DESCRIPTION_CHARS, SCHEMA_LINE,
};
pub use report::{parse_report, validate_report, AnalysisReport, PipelineMeta, ReportError};
pub use scoring::{
    category_gate, classify_category, score_image_artifacts, vote_patch, CategoryTexts,
    DescriptorEmbeddings, InapplicableArtifact, InapplicableReason, ScoredArtifacts,
};

use thiserror::Error;

use crate::backends::BackendError;
use crate::forensic::ForensicError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExplainerError {
    #[error("descriptor library line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("artifact name `{0}` appears more than once")]
    DuplicateArtifactName(String),
    #[error("descriptor `{name}` is missing `{field}`")]
    MissingTupleField { name: String, field: String },
    #[error("descriptor `{name}` is invalid: {reason}")]
    InvalidDescriptor { name: String, reason: String },
    #[error("descriptor library is empty")]
    EmptyLibrary,
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed model response: {0}")]
    MalformedResponse(String),
    #[error("response names artifact `{found}`{}", .expected.as_ref().map(|e| format!(", expected `{e}`")).unwrap_or_else(|| " which is not in the library".into()))]
    ArtifactMismatch {
        expected: Option<String>,
        found: String,
    },
    #[error("image {image:?}, heatmap {heatmap:?} and patch grid {grid:?} dims differ")]
    DimMismatch {
        image: (usize, usize),
        heatmap: (usize, usize),
        grid: (usize, usize),
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Forensic(#[from] ForensicError),
}
