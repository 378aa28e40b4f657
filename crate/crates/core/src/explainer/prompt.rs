use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::descriptors::{ArtifactDescriptor, DescriptorLibrary};
use super::ExplainerError;
use crate::backends::{vlm_generate, VisionLanguageModel};
use crate::forensic::ArtifactScore;
use crate::image::ImageTensor;
use crate::scalar::Scalar;

/// Line prefix carrying the artifact name in every prompt.
pub const ERROR_CODE_PREFIX: &str = "Error code: ";
/// Line prefix carrying the artifact's positive description in every prompt.
pub const ARTIFACT_DESCRIPTION_PREFIX: &str = "Artifact description: ";

pub const INSTRUCTION: &str =
    "You are a helpful assistant that identifies errors and artifacts in images. \
Given the error code, describe instances in the image where the error occurs.";
pub const SCHEMA_LINE: &str = r#"{"artifact": "...", "description": "..." }"#;
pub const EXAMPLE_OBJECT: &str = r#"{"artifact": "biological_asymmetry", "description": "In the given image, the horse has unsymmetrical eyes" }"#;
pub const GUIDELINES: [&str; 5] = [
    "Only describe the given artifact. Do not mention unrelated defects.",
    "Limit each response to 1\u{2013}2 lines.",
    "Use directional or anatomical terms (e.g., \u{201c}left paw,\u{201d} \u{201c}lower trunk\u{201d}).",
    "Highlight visibility using terms like \u{201c}noticeable,\u{201d} \u{201c}clearly seen,\u{201d} or \u{201c}subtle.\u{201d}",
    "Follow the JSON schema strictly.",
];
pub const MAX_DESCRIPTION_CHARS: usize = 300;

/// The structured answer expected from the vision-language model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactExplanation {
    pub artifact: String,
    pub description: String,
}

impl ArtifactExplanation {
    pub fn validate(&self, library: &DescriptorLibrary) -> Result<(), ExplainerError> {
        let description = self.description.trim();
        if description.is_empty() {
            return Err(ExplainerError::MalformedResponse(
                "empty description".into(),
            ));
        }
        let chars = description.chars().count();
        if chars > MAX_DESCRIPTION_CHARS {
            return Err(ExplainerError::MalformedResponse(format!(
                "description has {chars} characters, limit is {MAX_DESCRIPTION_CHARS}"
            )));
        }
        if !library.contains(&self.artifact) {
            return Err(ExplainerError::ArtifactMismatch {
                expected: None,
                found: self.artifact.clone(),
            });
        }
        Ok(())
    }
}

/// Builds the explanation prompt for one artifact. The output depends only on
/// the descriptor, so identical descriptors give identical bytes.
pub fn build_prompt(descriptor: &ArtifactDescriptor) -> String {
    let mut p = String::with_capacity(1024);
    p.push_str("Instruction: ");
    p.push_str(INSTRUCTION);
    p.push_str("\n\nJSON Schema:\n");
    p.push_str(SCHEMA_LINE);
    p.push_str("\n\nExample:\n");
    p.push_str(EXAMPLE_OBJECT);
    p.push_str("\n\nGuidelines:\n");
    for g in GUIDELINES {
        p.push_str("- ");
        p.push_str(g);
        p.push('\n');
    }
    p.push('\n');
    p.push_str(ERROR_CODE_PREFIX);
    p.push_str(&descriptor.name);
    p.push('\n');
    p.push_str(ARTIFACT_DESCRIPTION_PREFIX);
    p.push_str(&descriptor.positive_text);
    p.push('\n');
    p
}

/// First JSON object embedded anywhere in `text`.
fn first_object(text: &str) -> Option<Map<String, Value>> {
    text.char_indices()
        .filter(|&(_, c)| c == '{')
        .find_map(|(i, _)| {
            let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
            match stream.next() {
                Some(Ok(Value::Object(map))) => Some(map),
                _ => None,
            }
        })
}

/// Extracts and validates the first JSON object in a model reply. Surrounding
/// prose is tolerated; typographic double quotes are accepted when the text
/// contains no plain JSON object.
pub fn parse_vlm_response(
    text: &str,
    library: &DescriptorLibrary,
) -> Result<ArtifactExplanation, ExplainerError> {
    let map = first_object(text)
        .or_else(|| first_object(&text.replace(['\u{201c}', '\u{201d}'], "\"")))
        .ok_or_else(|| ExplainerError::MalformedResponse("no JSON object found".into()))?;
    let explanation: ArtifactExplanation = serde_json::from_value(Value::Object(map))
        .map_err(|e| ExplainerError::MalformedResponse(e.to_string()))?;
    explanation.validate(library)?;
    Ok(ArtifactExplanation {
        artifact: explanation.artifact,
        description: explanation.description.trim().to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttemptStatus {
    Explained,
    Unavailable,
}

/// Bookkeeping for one retained artifact's explanation round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplanationAttempt {
    pub artifact: String,
    pub calls: usize,
    pub status: AttemptStatus,
    /// Last failure, when no valid explanation was obtained.
    pub error: Option<String>,
}

pub const DEFAULT_RETRIES: usize = 2;

/// Asks the model about every retained artifact, with up to `1 + retries`
/// calls each. Failures are recorded per artifact and never abort the round.
pub fn explain_retained<T: Scalar>(
    scores: &[ArtifactScore<T>],
    library: &DescriptorLibrary,
    vlm: &mut dyn VisionLanguageModel<T>,
    image: &ImageTensor<T>,
    retries: usize,
) -> (Vec<ArtifactExplanation>, Vec<ExplanationAttempt>) {
    let mut explanations = Vec::new();
    let mut attempts = Vec::new();
    for score in scores.iter().filter(|s| s.retained) {
        let Some(descriptor) = library.get(&score.artifact_name) else {
            attempts.push(ExplanationAttempt {
                artifact: score.artifact_name.clone(),
                calls: 0,
                status: AttemptStatus::Unavailable,
                error: Some("artifact is not in the descriptor library".into()),
            });
            continue;
        };
        let prompt = build_prompt(descriptor);
        let mut calls = 0;
        let mut last_error = None;
        let mut explained = None;
        while calls <= retries {
            calls += 1;
            let outcome = vlm_generate(vlm, &prompt, image)
                .map_err(ExplainerError::from)
                .and_then(|reply| parse_vlm_response(&reply, library))
                .and_then(|e| {
                    if e.artifact == descriptor.name {
                        Ok(e)
                    } else {
                        Err(ExplainerError::ArtifactMismatch {
                            expected: Some(descriptor.name.clone()),
                            found: e.artifact,
                        })
                    }
                });
            match outcome {
                Ok(e) => {
                    explained = Some(e);
                    break;
                }
                Err(e) => last_error = Some(e.to_string()),
            }
        }
        let status = if explained.is_some() {
            AttemptStatus::Explained
        } else {
            AttemptStatus::Unavailable
        };
        attempts.push(ExplanationAttempt {
            artifact: descriptor.name.clone(),
            calls,
            status,
            error: if explained.is_some() {
                None
            } else {
                last_error
            },
        });
        explanations.extend(explained);
    }
    (explanations, attempts)
}
