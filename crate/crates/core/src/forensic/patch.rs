use serde::{Deserialize, Serialize};

use super::ForensicError;
use crate::image::Heatmap;
use crate::scalar::Scalar;

/// Default patch edge on the super-resolved image.
pub const DEFAULT_PATCH_SIZE: usize = 32;

/// Rectangle inside a parent image together with its saliency weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Patch<T> {
    pub row_offset: usize,
    pub col_offset: usize,
    pub height: usize,
    pub width: usize,
    pub weight: T,
}

impl<T: Scalar> Patch<T> {
    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn fits_within(&self, dims: (usize, usize)) -> bool {
        self.row_offset + self.height <= dims.0 && self.col_offset + self.width <= dims.1
    }
}

/// Exact, non-overlapping tiling of an image, in row-major patch order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchGrid<T> {
    pub patches: Vec<Patch<T>>,
    pub source_dims: (usize, usize),
}

impl<T: Scalar> PatchGrid<T> {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn weights(&self) -> Vec<T> {
        self.patches.iter().map(|p| p.weight).collect()
    }

    /// Returns a copy with every patch weight set from `heatmap`.
    pub fn weighted_by(&self, heatmap: &Heatmap<T>) -> Result<Self, ForensicError> {
        let patches = self
            .patches
            .iter()
            .map(|p| {
                Ok(Patch {
                    weight: patch_weight(heatmap, p)?,
                    ..*p
                })
            })
            .collect::<Result<Vec<_>, ForensicError>>()?;
        Ok(Self {
            patches,
            source_dims: self.source_dims,
        })
    }
}

/// Tiles `dims` with `patch_size` squares; the last row and column absorb the
/// remainder as smaller patches.
pub fn build_patch_grid<T: Scalar>(
    dims: (usize, usize),
    patch_size: usize,
) -> Result<PatchGrid<T>, ForensicError> {
    let (height, width) = dims;
    if height == 0 || width == 0 || patch_size == 0 {
        return Err(ForensicError::ZeroDimension {
            height,
            width,
            patch_size,
        });
    }
    let rows = height.div_ceil(patch_size);
    let cols = width.div_ceil(patch_size);
    let mut patches = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let row_offset = i * patch_size;
        let ph = patch_size.min(height - row_offset);
        for j in 0..cols {
            let col_offset = j * patch_size;
            let pw = patch_size.min(width - col_offset);
            patches.push(Patch {
                row_offset,
                col_offset,
                height: ph,
                width: pw,
                weight: T::zero(),
            });
        }
    }
    Ok(PatchGrid {
        patches,
        source_dims: dims,
    })
}

/// Sum of heatmap intensities over the pixels of `patch`.
pub fn patch_weight<T: Scalar>(heatmap: &Heatmap<T>, patch: &Patch<T>) -> Result<T, ForensicError> {
    if !patch.fits_within(heatmap.dims()) {
        return Err(ForensicError::PatchOutOfBounds {
            row: patch.row_offset,
            col: patch.col_offset,
            height: patch.height,
            width: patch.width,
            map_height: heatmap.height(),
            map_width: heatmap.width(),
        });
    }
    let w = heatmap.width();
    let values = heatmap.values();
    let mut total = T::zero();
    for r in patch.row_offset..patch.row_offset + patch.height {
        let start = r * w + patch.col_offset;
        total = total
            + values[start..start + patch.width]
                .iter()
                .copied()
                .sum::<T>();
    }
    Ok(total)
}
