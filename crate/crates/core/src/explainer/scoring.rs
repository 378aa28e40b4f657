use serde::{Deserialize, Serialize};

use super::descriptors::{ArtifactDescriptor, Category};
use super::ExplainerError;
use crate::backends::{
    cosine_similarity, embed_image, embed_text, BackendError, Embedder, Embedding,
};
use crate::forensic::{
    artifact_score, ArtifactScore, ForensicError, PatchGrid, PatchVote, VoteCounts,
};
use crate::image::{Heatmap, ImageTensor};
use crate::scalar::Scalar;

/// Prompts used by the animal / vehicle gate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CategoryTexts {
    pub animal: String,
    pub vehicle: String,
}

impl Default for CategoryTexts {
    fn default() -> Self {
        Self {
            animal: "a photo of an animal".into(),
            vehicle: "a photo of a vehicle".into(),
        }
    }
}

/// Picks the category whose text is most similar to the image; an exact tie
/// yields [`Category::Generic`], which keeps every descriptor active.
pub fn category_gate<T: Scalar>(
    image: &Embedding<T>,
    animal: &Embedding<T>,
    vehicle: &Embedding<T>,
) -> Result<Category, BackendError> {
    let sa = cosine_similarity(image, animal)?;
    let sv = cosine_similarity(image, vehicle)?;
    Ok(if sa > sv {
        Category::Animal
    } else if sv > sa {
        Category::Vehicle
    } else {
        Category::Generic
    })
}

/// Embeds the gate texts and applies [`category_gate`] to `img`.
pub fn classify_category<T: Scalar>(
    img: &ImageTensor<T>,
    texts: &CategoryTexts,
    embedder: &dyn Embedder<T>,
) -> Result<Category, BackendError> {
    let image = embed_image(embedder, img)?;
    let animal = embed_text(embedder, &texts.animal)?;
    let vehicle = embed_text(embedder, &texts.vehicle)?;
    category_gate(&image, &animal, &vehicle)
}

/// Text embeddings of one descriptor's three descriptions.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorEmbeddings<T> {
    pub name: String,
    pub positive: Embedding<T>,
    pub negative: Embedding<T>,
    pub neutral: Embedding<T>,
}

impl<T: Scalar> DescriptorEmbeddings<T> {
    pub fn compute(
        descriptor: &ArtifactDescriptor,
        embedder: &dyn Embedder<T>,
    ) -> Result<Self, BackendError> {
        Ok(Self {
            name: descriptor.name.clone(),
            positive: embed_text(embedder, &descriptor.positive_text)?,
            negative: embed_text(embedder, &descriptor.negative_text)?,
            neutral: embed_text(embedder, &descriptor.neutral_text)?,
        })
    }

    pub fn vote(&self, patch: &Embedding<T>) -> Result<PatchVote<T>, BackendError> {
        Ok(PatchVote::from_similarities(
            cosine_similarity(patch, &self.positive)?,
            cosine_similarity(patch, &self.negative)?,
            cosine_similarity(patch, &self.neutral)?,
        ))
    }
}

/// Votes one patch against one descriptor (embeds everything from scratch).
pub fn vote_patch<T: Scalar>(
    patch: &ImageTensor<T>,
    descriptor: &ArtifactDescriptor,
    embedder: &dyn Embedder<T>,
) -> Result<PatchVote<T>, BackendError> {
    let e = embed_image(embedder, patch)?;
    DescriptorEmbeddings::compute(descriptor, embedder)?.vote(&e)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InapplicableReason {
    /// Every patch voted neutral.
    AllNeutral,
    /// Non-neutral patches exist but carry no saliency weight.
    ZeroWeight,
}

/// An artifact for which no score could be formed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InapplicableArtifact {
    pub artifact_name: String,
    pub counts: VoteCounts,
    pub reason: InapplicableReason,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoredArtifacts<T> {
    pub scores: Vec<ArtifactScore<T>>,
    pub inapplicable: Vec<InapplicableArtifact>,
}

/// Votes every patch of `image` against every descriptor and aggregates the
/// votes with heatmap-derived patch weights. Each patch is embedded once.
pub fn score_image_artifacts<T: Scalar>(
    image: &ImageTensor<T>,
    heatmap: &Heatmap<T>,
    grid: &PatchGrid<T>,
    descriptors: &[&ArtifactDescriptor],
    embedder: &dyn Embedder<T>,
    threshold: T,
) -> Result<ScoredArtifacts<T>, ExplainerError> {
    if heatmap.dims() != image.dims() || grid.source_dims != image.dims() {
        return Err(ExplainerError::DimMismatch {
            image: image.dims(),
            heatmap: heatmap.dims(),
            grid: grid.source_dims,
        });
    }
    let weighted = grid.weighted_by(heatmap)?;
    let weights = weighted.weights();
    let patch_embeddings = weighted
        .patches
        .iter()
        .map(|p| {
            let crop = image.crop(p.row_offset, p.col_offset, p.height, p.width)?;
            embed_image(embedder, &crop)
        })
        .collect::<Result<Vec<_>, BackendError>>()?;

    let mut out = ScoredArtifacts::default();
    for descriptor in descriptors {
        let texts = DescriptorEmbeddings::compute(descriptor, embedder)?;
        let votes = patch_embeddings
            .iter()
            .map(|e| texts.vote(e))
            .collect::<Result<Vec<_>, BackendError>>()?;
        match artifact_score(&descriptor.name, &weights, &votes, threshold) {
            Ok(score) => out.scores.push(score),
            Err(ForensicError::NoRelevantPatches) => {
                let counts = VoteCounts::tally(&votes);
                let reason = if counts.positive + counts.negative == 0 {
                    InapplicableReason::AllNeutral
                } else {
                    InapplicableReason::ZeroWeight
                };
                out.inapplicable.push(InapplicableArtifact {
                    artifact_name: descriptor.name.clone(),
                    counts,
                    reason,
                });
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}
