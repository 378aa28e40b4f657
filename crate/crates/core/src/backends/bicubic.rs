use super::{BackendDescriptor, BackendError, BackendKind, SuperResolver, SUPPORTED_SR_FACTORS};
use crate::image::ImageTensor;
use crate::scalar::Scalar;

/// Keys cubic convolution kernel with `a = -0.5`.
pub fn bicubic_weight<T: Scalar>(x: T) -> T {
    let a = T::of(-0.5);
    let x = x.abs();
    let one = T::one();
    let two = T::of(2.0);
    if x <= one {
        ((a + two) * x - (a + T::of(3.0))) * x * x + one
    } else if x < two {
        ((a * x - T::of(5.0) * a) * x + T::of(8.0) * a) * x - T::of(4.0) * a
    } else {
        T::zero()
    }
}

/// Interpolating upscaler used when no learned super-resolution model is
/// configured. It is not DRCT and reports itself as `bicubic-fallback`.
#[derive(Debug, Clone, Copy, Default)]
pub struct BicubicUpscaler;

impl BicubicUpscaler {
    pub const NAME: &'static str = "bicubic-fallback";

    fn taps<T: Scalar>(dst: usize, src_len: usize, dst_len: usize) -> ([usize; 4], [T; 4]) {
        let scale = T::of_usize(src_len) / T::of_usize(dst_len);
        let half = T::of(0.5);
        // Unclamped half-pixel coordinate; edge samples replicate the border.
        let x = (T::of_usize(dst) + half) * scale - half;
        let base = x.floor();
        let frac = x - base;
        let base = base.to_i64().unwrap_or(0);
        let mut idx = [0usize; 4];
        let mut w = [T::zero(); 4];
        for k in 0..4 {
            let offset = k as i64 - 1;
            idx[k] = (base + offset).clamp(0, src_len as i64 - 1) as usize;
            w[k] = bicubic_weight(frac - T::of(offset as f64));
        }
        (idx, w)
    }
}

impl<T: Scalar> SuperResolver<T> for BicubicUpscaler {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor::new(BackendKind::SuperResolver, Self::NAME, true)
    }

    fn super_resolve(
        &self,
        img: &ImageTensor<T>,
        factor: usize,
    ) -> Result<ImageTensor<T>, BackendError> {
        if !SUPPORTED_SR_FACTORS.contains(&factor) {
            return Err(BackendError::UnsupportedFactor(factor));
        }
        let (h, w, ch) = img.shape();
        let (oh, ow) = (h * factor, w * factor);
        let rows: Vec<_> = (0..oh).map(|r| Self::taps::<T>(r, h, oh)).collect();
        let cols: Vec<_> = (0..ow).map(|c| Self::taps::<T>(c, w, ow)).collect();
        let mut data = Vec::with_capacity(oh * ow * ch);
        for (ri, rw) in &rows {
            for (ci, cw) in &cols {
                for k in 0..ch {
                    let mut acc = T::zero();
                    for a in 0..4 {
                        let mut row_acc = T::zero();
                        for b in 0..4 {
                            row_acc = row_acc + cw[b] * img.get(ri[a], ci[b], k);
                        }
                        acc = acc + rw[a] * row_acc;
                    }
                    data.push(acc);
                }
            }
        }
        Ok(ImageTensor::from_clamped(oh, ow, ch, data)?)
    }
}
