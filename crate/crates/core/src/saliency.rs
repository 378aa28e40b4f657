//! GradCAM heatmaps and heatmap post-processing.

use std::path::Path;

use crate::backends::{saliency_tensors, BackendError, Classifier};
use crate::forensic::interpolate_heatmap;
use crate::image::{Heatmap, ImageError, ImageTensor, Label};
use crate::scalar::Scalar;

/// GradCAM at the saliency layer's own resolution:
/// `ReLU(sum_k alpha_k A_k)` with `alpha_k` the spatial mean of `dy/dA_k`.
pub fn gradcam_layer<T: Scalar>(
    backend: &dyn Classifier<T>,
    img: &ImageTensor<T>,
    target: Label,
) -> Result<Heatmap<T>, BackendError> {
    let t = saliency_tensors(backend, img, target)?;
    let (count, h, w) = t.activations.shape();
    let n = T::of_usize(h * w);
    let mut cam = vec![T::zero(); h * w];
    for k in 0..count {
        let alpha = t.gradients.map(k).iter().copied().sum::<T>() / n;
        if alpha.is_zero() {
            continue;
        }
        for (c, &a) in cam.iter_mut().zip(t.activations.map(k)) {
            *c = *c + alpha * a;
        }
    }
    for c in cam.iter_mut() {
        *c = c.max(T::zero());
    }
    Ok(Heatmap::new(h, w, cam)?)
}

/// GradCAM upsampled (bilinear) to the classifier input's spatial dims.
///
/// Must be given the classifier-native image, not a resized or
/// super-resolved one.
pub fn gradcam<T: Scalar>(
    backend: &dyn Classifier<T>,
    img: &ImageTensor<T>,
    target: Label,
) -> Result<Heatmap<T>, BackendError> {
    let layer = gradcam_layer(backend, img, target)?;
    Ok(interpolate_heatmap(&layer, img.dims()).expect("image dims are non-zero"))
}

/// Divides by the maximum value; an all-zero map is returned unchanged.
pub fn normalize_heatmap<T: Scalar>(h: &Heatmap<T>) -> Heatmap<T> {
    let max = h.max();
    if max.is_zero() {
        return h.clone();
    }
    let values = h.values().iter().map(|&v| v / max).collect();
    Heatmap::new(h.height(), h.width(), values)
        .expect("dividing by a positive max keeps values in [0, 1]")
}

/// Jet-like colormap for a value in `[0, 1]`.
fn colormap(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    let r = (1.5 - (4.0 * v - 3.0).abs()).clamp(0.0, 1.0);
    let g = (1.5 - (4.0 * v - 2.0).abs()).clamp(0.0, 1.0);
    let b = (1.5 - (4.0 * v - 1.0).abs()).clamp(0.0, 1.0);
    [r, g, b]
}

/// Blends a colour-mapped, normalized heatmap over `img` (resampled to the
/// image's dims) with opacity `alpha` scaled by saliency.
pub fn overlay<T: Scalar>(
    img: &ImageTensor<T>,
    heatmap: &Heatmap<T>,
    alpha: f64,
) -> Result<ImageTensor<T>, ImageError> {
    let h = if heatmap.dims() == img.dims() {
        normalize_heatmap(heatmap)
    } else {
        normalize_heatmap(
            &interpolate_heatmap(heatmap, img.dims())
                .map_err(|e| ImageError::DimMismatch(e.to_string()))?,
        )
    };
    ImageTensor::from_fn(img.height(), img.width(), 3, |r, c, ch| {
        let s = h.get(r, c).as_f64();
        let base = img
            .get(r, c, if img.channels() == 1 { 0 } else { ch })
            .as_f64();
        let a = alpha * s;
        T::of(((1.0 - a) * base + a * colormap(s)[ch]).clamp(0.0, 1.0))
    })
}

pub fn save_overlay_png<T: Scalar>(
    img: &ImageTensor<T>,
    heatmap: &Heatmap<T>,
    path: impl AsRef<Path>,
) -> Result<(), ImageError> {
    overlay(img, heatmap, 0.6)?.save_png(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::{ConstantClassifier, MeanMapClassifier, MockLinearClassifier};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(seed: u64) -> ImageTensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::from_fn(8, 8, 3, |_, _, _| rng.gen()).unwrap()
    }

    #[test]
    fn mean_map_gradcam_is_scaled_relu_of_map() {
        // alpha = 1/(h w) for the single map, so the cam is ReLU(A) / (h w).
        let clf = MeanMapClassifier::new((8, 8, 3), 1, 2.0, -1.0, 1);
        let img = random_image(1);
        let cam = gradcam(&clf, &img, Label::Fake).unwrap();
        let a = clf.activation_map(&img);
        for (i, &v) in cam.values().iter().enumerate() {
            assert!((v - a.data[i].max(0.0) / 64.0).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gradients_give_zero_map() {
        let clf = ConstantClassifier {
            shape: (8, 8, 3),
            logits: [0.0, 1.0],
        };
        assert!(gradcam(&clf, &random_image(2), Label::Fake)
            .unwrap()
            .is_all_zero());
    }

    #[test]
    fn output_is_non_negative_and_image_sized() {
        let clf = MockLinearClassifier::seeded((8, 8, 3), 4, 1.0, 0.0);
        for target in [Label::Real, Label::Fake] {
            let cam = gradcam(&clf, &random_image(3), target).unwrap();
            assert_eq!(cam.dims(), (8, 8));
            assert!(cam.values().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn pooled_layer_is_upsampled() {
        let clf = MeanMapClassifier::new((8, 8, 3), 0, 1.0, -0.5, 4);
        let img = random_image(5);
        assert_eq!(
            gradcam_layer(&clf, &img, Label::Fake).unwrap().dims(),
            (2, 2)
        );
        assert_eq!(gradcam(&clf, &img, Label::Fake).unwrap().dims(), (8, 8));
    }

    #[test]
    fn normalization_cases() {
        let h = Heatmap::new(2, 2, vec![0.0, 2.0, 4.0, 8.0]).unwrap();
        assert_eq!(normalize_heatmap(&h).values(), &[0.0, 0.25, 0.5, 1.0]);
        let z = Heatmap::<f64>::filled(2, 2, 0.0).unwrap();
        assert_eq!(normalize_heatmap(&z), z);
        let n = normalize_heatmap(&Heatmap::new(1, 3, vec![0.3, 0.7, 0.1]).unwrap());
        assert_eq!(n.max(), 1.0);
        assert_eq!(normalize_heatmap(&n), n);
    }

    #[test]
    fn overlay_has_image_dims() {
        let img = random_image(6);
        let h = Heatmap::from_fn(2, 2, |r, c| (r + c) as f64).unwrap();
        let o = overlay(&img, &h, 0.5).unwrap();
        assert_eq!(o.shape(), (8, 8, 3));
    }
}
