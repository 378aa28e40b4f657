use super::ForensicError;
use crate::image::Heatmap;
use crate::scalar::Scalar;

/// Source coordinate sampled by output index `dst` under half-pixel-centre
/// alignment, clamped to the valid source range.
pub fn bilinear_source_coord<T: Scalar>(dst: usize, src_len: usize, dst_len: usize) -> T {
    let scale = T::of_usize(src_len) / T::of_usize(dst_len);
    let half = T::of(0.5);
    let x = (T::of_usize(dst) + half) * scale - half;
    x.max(T::zero()).min(T::of_usize(src_len - 1))
}

/// Bilinear resize of a row-major plane. Equal source and target dims return
/// the input unchanged.
pub fn resize_bilinear<T: Scalar>(
    values: &[T],
    src: (usize, usize),
    dst: (usize, usize),
) -> Vec<T> {
    if src == dst {
        return values.to_vec();
    }
    let (sh, sw) = src;
    let (dh, dw) = dst;
    let cols: Vec<(usize, usize, T)> = (0..dw)
        .map(|c| {
            let x = bilinear_source_coord::<T>(c, sw, dw);
            let x0 = x.floor().to_usize().unwrap_or(0).min(sw - 1);
            let x1 = (x0 + 1).min(sw - 1);
            (x0, x1, x - T::of_usize(x0))
        })
        .collect();
    let mut out = Vec::with_capacity(dh * dw);
    for r in 0..dh {
        let y = bilinear_source_coord::<T>(r, sh, dh);
        let y0 = y.floor().to_usize().unwrap_or(0).min(sh - 1);
        let y1 = (y0 + 1).min(sh - 1);
        let fy = y - T::of_usize(y0);
        for &(x0, x1, fx) in &cols {
            let top = values[y0 * sw + x0] * (T::one() - fx) + values[y0 * sw + x1] * fx;
            let bottom = values[y1 * sw + x0] * (T::one() - fx) + values[y1 * sw + x1] * fx;
            out.push(top * (T::one() - fy) + bottom * fy);
        }
    }
    out
}

/// Resamples a heatmap onto `target` dims with bilinear interpolation.
///
/// Every output value is a convex combination of input values, so the output
/// stays inside `[min(h), max(h)]`.
pub fn interpolate_heatmap<T: Scalar>(
    h: &Heatmap<T>,
    target: (usize, usize),
) -> Result<Heatmap<T>, ForensicError> {
    if target.0 == 0 || target.1 == 0 {
        return Err(ForensicError::ZeroDimension {
            height: target.0,
            width: target.1,
            patch_size: 1,
        });
    }
    let mut values = resize_bilinear(h.values(), h.dims(), target);
    // Rounding in the blend can produce -0.0 or tiny negatives from exact zeros.
    for v in values.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    Ok(Heatmap::new(target.0, target.1, values)
        .expect("convex combination of valid heatmap values"))
}
