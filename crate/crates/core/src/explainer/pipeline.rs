use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::descriptors::DescriptorLibrary;
use super::prompt::{explain_retained, DEFAULT_RETRIES};
use super::report::{AnalysisReport, PipelineMeta};
use super::scoring::{classify_category, score_image_artifacts, CategoryTexts};
use super::ExplainerError;
use crate::backends::{self, BackendSet, SUPPORTED_SR_FACTORS};
use crate::forensic::{
    build_patch_grid, interpolate_heatmap, DEFAULT_PATCH_SIZE, DEFAULT_THRESHOLD,
};
use crate::image::{Heatmap, ImageTensor, Label};
use crate::saliency::{gradcam, normalize_heatmap};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub sr_factor: usize,
    pub patch_size: usize,
    pub threshold: f64,
    pub retries: usize,
    /// Also analyse images the classifier calls real.
    pub explain_real: bool,
    /// Rescale the heatmap to a unit maximum before weighting. Scores are
    /// ratios of weights, so this never changes them.
    pub normalize_heatmap: bool,
    pub seed: u64,
    pub category_texts: CategoryTexts,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            sr_factor: 4,
            patch_size: DEFAULT_PATCH_SIZE,
            threshold: DEFAULT_THRESHOLD,
            retries: DEFAULT_RETRIES,
            explain_real: false,
            normalize_heatmap: false,
            seed: 0,
            category_texts: CategoryTexts::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !SUPPORTED_SR_FACTORS.contains(&self.sr_factor) {
            return Err(PipelineError::InvalidConfig(format!(
                "sr_factor {} is not one of {SUPPORTED_SR_FACTORS:?}",
                self.sr_factor
            )));
        }
        if self.patch_size == 0 {
            return Err(PipelineError::InvalidConfig(
                "patch_size must be >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(PipelineError::InvalidConfig(format!(
                "threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Load,
    Classify,
    Gradcam,
    SuperResolve,
    Interpolate,
    Embed,
    Score,
    Vlm,
    Write,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Load => "load",
            Stage::Classify => "classify",
            Stage::Gradcam => "gradcam",
            Stage::SuperResolve => "super_resolve",
            Stage::Interpolate => "interpolate",
            Stage::Embed => "embed",
            Stage::Score => "score",
            Stage::Vlm => "vlm",
            Stage::Write => "write",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("invalid pipeline configuration: {0}")]
    InvalidConfig(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: ExplainerError,
    },
}

impl PipelineError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Stage { stage, .. } => Some(*stage),
            PipelineError::InvalidConfig(_) => None,
        }
    }
}

fn at<E: Into<ExplainerError>>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        source: e.into(),
    }
}

/// A report plus the low-resolution heatmap it was built from (absent when
/// analysis was skipped).
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis<T> {
    pub report: AnalysisReport<T>,
    pub heatmap: Option<Heatmap<T>>,
}

/// Runs the whole pipeline on one classifier-native image:
/// classify, GradCAM (on this image, never on the upscaled one), super-resolve,
/// resample the heatmap, tile, vote, score and explain.
pub fn analyze<T: Scalar>(
    image_id: &str,
    img: &ImageTensor<T>,
    backends: &mut BackendSet<T>,
    library: &DescriptorLibrary,
    config: &PipelineConfig,
) -> Result<Analysis<T>, PipelineError> {
    config.validate()?;
    let meta = PipelineMeta {
        sr_factor: config.sr_factor,
        patch_size: config.patch_size,
        threshold: config.threshold,
        retries: config.retries,
        explain_real: config.explain_real,
        normalize_heatmap: config.normalize_heatmap,
        seed: config.seed,
        backends: backends.names(),
        descriptor_library: library.source.clone(),
        descriptor_count: library.len(),
    };
    let generated_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);

    let classified =
        backends::classify(backends.classifier.as_ref(), img).map_err(at(Stage::Classify))?;
    let mut report = AnalysisReport {
        image_id: image_id.to_string(),
        verdict: classified.prediction,
        fake_probability: classified.fake_probability(),
        category: None,
        artifact_bearing: false,
        skipped: None,
        artifact_scores: Vec::new(),
        inapplicable: Vec::new(),
        explanations: Vec::new(),
        explanation_attempts: Vec::new(),
        pipeline_meta: meta,
        generated_at,
    };
    if classified.prediction == Label::Real && !config.explain_real {
        report.skipped = Some("classified real; explain_real is off".into());
        return Ok(Analysis {
            report,
            heatmap: None,
        });
    }

    let mut heatmap =
        gradcam(backends.classifier.as_ref(), img, Label::Fake).map_err(at(Stage::Gradcam))?;
    if config.normalize_heatmap {
        heatmap = normalize_heatmap(&heatmap);
    }
    let sr = backends::super_resolve(backends.super_resolver.as_ref(), img, config.sr_factor)
        .map_err(at(Stage::SuperResolve))?;
    let sr_heatmap = interpolate_heatmap(&heatmap, sr.dims()).map_err(at(Stage::Interpolate))?;
    let category = classify_category(&sr, &config.category_texts, backends.embedder.as_ref())
        .map_err(at(Stage::Embed))?;
    let grid = build_patch_grid(sr.dims(), config.patch_size).map_err(at(Stage::Score))?;
    let descriptors = library.select(category);
    let scored = score_image_artifacts(
        &sr,
        &sr_heatmap,
        &grid,
        &descriptors,
        backends.embedder.as_ref(),
        T::of(config.threshold),
    )
    .map_err(|e| {
        let stage = if matches!(e, ExplainerError::Backend(_)) {
            Stage::Embed
        } else {
            Stage::Score
        };
        at::<ExplainerError>(stage)(e)
    })?;

    let (explanations, attempts) = explain_retained(
        &scored.scores,
        library,
        backends.vlm.as_mut(),
        &sr,
        config.retries,
    );
    report.category = Some(category);
    report.artifact_bearing = scored.scores.iter().any(|s| s.retained);
    report.artifact_scores = scored.scores;
    report.inapplicable = scored.inapplicable;
    report.explanations = explanations;
    report.explanation_attempts = attempts;
    Ok(Analysis {
        report,
        heatmap: Some(heatmap),
    })
}
