use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::descriptors::Category;
use super::prompt::{
    ArtifactExplanation, AttemptStatus, ExplanationAttempt, MAX_DESCRIPTION_CHARS,
};
use super::scoring::InapplicableArtifact;
use crate::backends::BackendNames;
use crate::forensic::ArtifactScore;
use crate::image::Label;
use crate::scalar::Scalar;

/// Every setting that influenced a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineMeta {
    pub sr_factor: usize,
    pub patch_size: usize,
    pub threshold: f64,
    pub retries: usize,
    pub explain_real: bool,
    pub normalize_heatmap: bool,
    pub seed: u64,
    pub backends: BackendNames,
    pub descriptor_library: String,
    pub descriptor_count: usize,
}

/// Per-image result. `generated_at` is the only field that varies between
/// identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "T: Scalar"))]
pub struct AnalysisReport<T> {
    pub image_id: String,
    pub verdict: Label,
    pub fake_probability: T,
    /// `None` when artifact analysis was skipped.
    pub category: Option<Category>,
    /// Some artifact reached the threshold.
    pub artifact_bearing: bool,
    /// Why artifact analysis did not run, if it did not.
    pub skipped: Option<String>,
    pub artifact_scores: Vec<ArtifactScore<T>>,
    pub inapplicable: Vec<InapplicableArtifact>,
    pub explanations: Vec<ArtifactExplanation>,
    pub explanation_attempts: Vec<ExplanationAttempt>,
    pub pipeline_meta: PipelineMeta,
    /// RFC 3339 UTC timestamp.
    pub generated_at: String,
}

impl<T: Scalar> AnalysisReport<T> {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports always serialize");
        s.push('\n');
        s
    }

    pub fn retained(&self) -> impl Iterator<Item = &ArtifactScore<T>> {
        self.artifact_scores.iter().filter(|s| s.retained)
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("report does not match the schema: {0}")]
    Schema(#[from] serde_json::Error),
    #[error("report violates invariants: {}", .0.join("; "))]
    Invariants(Vec<String>),
}

/// Checks the cross-field invariants that the type system cannot express.
pub fn validate_report<T: Scalar>(r: &AnalysisReport<T>) -> Result<(), ReportError> {
    let mut problems = Vec::new();
    let mut fail = |m: String| problems.push(m);
    let unit = |v: f64| (0.0..=1.0).contains(&v);

    if r.image_id.trim().is_empty() {
        fail("image_id is empty".into());
    }
    if !unit(r.fake_probability.as_f64()) {
        fail(format!(
            "fake_probability {} outside [0, 1]",
            r.fake_probability
        ));
    }
    if chrono::DateTime::parse_from_rfc3339(&r.generated_at).is_err() {
        fail(format!("generated_at `{}` is not RFC 3339", r.generated_at));
    }
    let meta = &r.pipeline_meta;
    if ![2, 4].contains(&meta.sr_factor) {
        fail(format!("sr_factor {} not in {{2, 4}}", meta.sr_factor));
    }
    if meta.patch_size == 0 {
        fail("patch_size is 0".into());
    }
    if r.skipped.is_some()
        && (r.category.is_some()
            || !r.artifact_scores.is_empty()
            || !r.inapplicable.is_empty()
            || !r.explanation_attempts.is_empty())
    {
        fail("skipped report carries analysis results".into());
    }
    if r.skipped.is_none() && r.category.is_none() {
        fail("analysed report has no category".into());
    }

    let mut names = HashSet::new();
    for s in &r.artifact_scores {
        if !names.insert(s.artifact_name.as_str()) {
            fail(format!("artifact `{}` reported twice", s.artifact_name));
        }
        let score = s.score.as_f64();
        if !unit(score) {
            fail(format!("score of `{}` outside [0, 1]", s.artifact_name));
        }
        if s.retained != (score >= meta.threshold) {
            fail(format!(
                "retained flag of `{}` disagrees with the threshold",
                s.artifact_name
            ));
        }
    }
    for i in &r.inapplicable {
        if !names.insert(i.artifact_name.as_str()) {
            fail(format!("artifact `{}` reported twice", i.artifact_name));
        }
    }
    if r.artifact_bearing != r.artifact_scores.iter().any(|s| s.retained) {
        fail("artifact_bearing disagrees with the retained scores".into());
    }

    let retained: HashSet<&str> = r.retained().map(|s| s.artifact_name.as_str()).collect();
    let attempted: HashSet<&str> = r
        .explanation_attempts
        .iter()
        .map(|a| a.artifact.as_str())
        .collect();
    if retained != attempted || attempted.len() != r.explanation_attempts.len() {
        fail("explanation attempts must cover exactly the retained artifacts, once each".into());
    }
    let explained: HashSet<&str> = r
        .explanation_attempts
        .iter()
        .filter(|a| a.status == AttemptStatus::Explained)
        .map(|a| a.artifact.as_str())
        .collect();
    let described: HashSet<&str> = r.explanations.iter().map(|e| e.artifact.as_str()).collect();
    if explained != described || described.len() != r.explanations.len() {
        fail("explanations must match the successful attempts, once each".into());
    }
    for a in &r.explanation_attempts {
        if a.calls > meta.retries + 1 {
            fail(format!(
                "`{}` used {} calls, more than 1 + retries",
                a.artifact, a.calls
            ));
        }
        if (a.status == AttemptStatus::Unavailable) != a.error.is_some() {
            fail(format!(
                "attempt for `{}` has inconsistent error field",
                a.artifact
            ));
        }
    }
    for e in &r.explanations {
        let n = e.description.trim().chars().count();
        if n == 0 || n > MAX_DESCRIPTION_CHARS {
            fail(format!(
                "description of `{}` has {n} characters",
                e.artifact
            ));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(ReportError::Invariants(problems))
    }
}

/// Strict parse (unknown or missing fields are errors) followed by
/// [`validate_report`].
pub fn parse_report(text: &str) -> Result<AnalysisReport<f64>, ReportError> {
    let report: AnalysisReport<f64> = serde_json::from_str(text)?;
    validate_report(&report)?;
    Ok(report)
}
