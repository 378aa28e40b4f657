//! Orthonormal 2-D Haar transform on single-channel planes, multi-level in
//! the usual Mallat layout: each level transforms the top-left approximation
//! block of the previous one, leaving the detail bands in place.

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WaveletError {
    #[error("plane {height}x{width} is not dyadic")]
    NonDyadicDims { height: usize, width: usize },
    #[error("{levels} levels requested but a {height}x{width} plane supports at most {max}")]
    TooManyLevels {
        levels: usize,
        max: usize,
        height: usize,
        width: usize,
    },
    #[error("at least one decomposition level is required")]
    ZeroLevels,
    #[error("expected {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
}

/// Number of levels a `height x width` dyadic plane supports.
pub fn max_levels(height: usize, width: usize) -> usize {
    height.min(width).max(1).trailing_zeros() as usize
}

fn check(len: usize, height: usize, width: usize, levels: usize) -> Result<(), WaveletError> {
    if len != height * width {
        return Err(WaveletError::LengthMismatch {
            expected: height * width,
            actual: len,
        });
    }
    if !height.is_power_of_two() || !width.is_power_of_two() {
        return Err(WaveletError::NonDyadicDims { height, width });
    }
    if levels == 0 {
        return Err(WaveletError::ZeroLevels);
    }
    let max = max_levels(height, width);
    if levels > max {
        return Err(WaveletError::TooManyLevels {
            levels,
            max,
            height,
            width,
        });
    }
    Ok(())
}

fn forward_1d<T: Scalar>(values: &mut [T], scratch: &mut Vec<T>) {
    let half = values.len() / 2;
    let k = T::of(std::f64::consts::FRAC_1_SQRT_2);
    scratch.clear();
    scratch.extend_from_slice(values);
    for i in 0..half {
        let (a, b) = (scratch[2 * i], scratch[2 * i + 1]);
        values[i] = (a + b) * k;
        values[half + i] = (a - b) * k;
    }
}

fn inverse_1d<T: Scalar>(values: &mut [T], scratch: &mut Vec<T>) {
    let half = values.len() / 2;
    let k = T::of(std::f64::consts::FRAC_1_SQRT_2);
    scratch.clear();
    scratch.extend_from_slice(values);
    for i in 0..half {
        let (s, d) = (scratch[i], scratch[half + i]);
        values[2 * i] = (s + d) * k;
        values[2 * i + 1] = (s - d) * k;
    }
}

/// Applies `op` to every row and then every column of the top-left `h x w`
/// block of a row-major plane of width `stride`.
fn separable<T: Scalar>(
    data: &mut [T],
    stride: usize,
    h: usize,
    w: usize,
    rows_first: bool,
    op: fn(&mut [T], &mut Vec<T>),
) {
    let mut scratch = Vec::with_capacity(h.max(w));
    let mut column = vec![T::zero(); h];
    let rows = |data: &mut [T], scratch: &mut Vec<T>| {
        for r in 0..h {
            op(&mut data[r * stride..r * stride + w], scratch);
        }
    };
    let mut cols = |data: &mut [T], scratch: &mut Vec<T>| {
        for c in 0..w {
            for r in 0..h {
                column[r] = data[r * stride + c];
            }
            op(&mut column, scratch);
            for r in 0..h {
                data[r * stride + c] = column[r];
            }
        }
    };
    if rows_first {
        rows(data, &mut scratch);
        cols(data, &mut scratch);
    } else {
        cols(data, &mut scratch);
        rows(data, &mut scratch);
    }
}

/// Forward transform of a row-major `height x width` plane.
pub fn haar2d_forward<T: Scalar>(
    plane: &[T],
    height: usize,
    width: usize,
    levels: usize,
) -> Result<Vec<T>, WaveletError> {
    check(plane.len(), height, width, levels)?;
    let mut out = plane.to_vec();
    for level in 0..levels {
        separable(
            &mut out,
            width,
            height >> level,
            width >> level,
            true,
            forward_1d,
        );
    }
    Ok(out)
}

pub fn haar2d_inverse<T: Scalar>(
    coeffs: &[T],
    height: usize,
    width: usize,
    levels: usize,
) -> Result<Vec<T>, WaveletError> {
    check(coeffs.len(), height, width, levels)?;
    let mut out = coeffs.to_vec();
    for level in (0..levels).rev() {
        separable(
            &mut out,
            width,
            height >> level,
            width >> level,
            false,
            inverse_1d,
        );
    }
    Ok(out)
}

/// `true` for every coefficient in a detail band of levels `1..=levels`;
/// `false` on the final approximation block.
pub fn detail_mask(height: usize, width: usize, levels: usize) -> Vec<bool> {
    let (ah, aw) = (height >> levels, width >> levels);
    (0..height * width)
        .map(|i| !(i / width < ah && i % width < aw))
        .collect()
}

/// Half-sample symmetric extension at the bottom/right edges:
/// `x[n-1], x[n-1], x[n-2], ...`.
pub fn pad_symmetric<T: Scalar>(
    plane: &[T],
    height: usize,
    width: usize,
    new_height: usize,
    new_width: usize,
) -> Vec<T> {
    fn mirror(i: usize, n: usize) -> usize {
        let period = 2 * n;
        let m = i % period;
        if m < n {
            m
        } else {
            period - 1 - m
        }
    }
    let mut out = Vec::with_capacity(new_height * new_width);
    for r in 0..new_height {
        let sr = mirror(r, height);
        for c in 0..new_width {
            out.push(plane[sr * width + mirror(c, width)]);
        }
    }
    out
}

pub fn crop_plane<T: Scalar>(plane: &[T], width: usize, height: usize, new_width: usize) -> Vec<T> {
    (0..height)
        .flat_map(|r| plane[r * width..r * width + new_width].iter().copied())
        .collect()
}
