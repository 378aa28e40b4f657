use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use veritas_core::backends::mock::{ConstantClassifier, MeanMapClassifier, MockLinearClassifier};
use veritas_core::backends::{self, BicubicUpscaler, Classifier};
use veritas_core::saliency::{gradcam, gradcam_layer, normalize_heatmap};
use veritas_core::{Image, Image32, ImageTensor, Label};

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    ImageTensor::from_fn(h, w, 3, |_, _, _| rng.gen_range(0.01..0.99)).unwrap()
}

/// Central differences of the backend's own loss.
fn finite_difference(m: &dyn Classifier<f64>, img: &Image, label: Label, step: f64) -> Vec<f64> {
    let (h, w, c) = img.shape();
    let mut grad = Vec::with_capacity(img.len());
    let mut data = img.data().to_vec();
    for i in 0..data.len() {
        let x = data[i];
        data[i] = x + step;
        let up = m
            .loss(&ImageTensor::new(h, w, c, data.clone()).unwrap(), label)
            .unwrap();
        data[i] = x - step;
        let down = m
            .loss(&ImageTensor::new(h, w, c, data.clone()).unwrap(), label)
            .unwrap();
        data[i] = x;
        grad.push((up - down) / (2.0 * step));
    }
    grad
}

#[test]
fn linear_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let models = [
        MockLinearClassifier::red_minus_blue(16, 16, 8.0, 0.1),
        MockLinearClassifier::seeded((16, 16, 3), 9, 2.0 / (768f64).sqrt(), -0.2),
    ];
    for m in &models {
        for _ in 0..5 {
            let img = random_image(&mut rng, 16, 16);
            for label in [Label::Real, Label::Fake] {
                let g = backends::input_gradient(m, &img, label).unwrap();
                let fd = finite_difference(m, &img, label, 1e-6);
                let err = g
                    .data
                    .iter()
                    .zip(&fd)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(err <= 1e-5, "max abs error {err}");
            }
        }
    }
}

#[test]
fn mean_map_mock_cam_is_relu_of_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // Shift makes part of the activation map negative, so the ReLU matters.
    let m = MeanMapClassifier::new((8, 8, 3), 0, 1.0, -0.5, 1);
    let img = random_image(&mut rng, 8, 8);
    let cam = normalize_heatmap(&gradcam(&m, &img, Label::Fake).unwrap());
    let map = m.activation_map(&img);
    let relu: Vec<f64> = map.map(0).iter().map(|v| v.max(0.0)).collect();
    let peak = relu.iter().copied().fold(0.0, f64::max);
    for (a, b) in cam.values().iter().zip(&relu) {
        assert!((a - b / peak).abs() <= 1e-9);
    }
}

#[test]
fn zero_gradient_mock_gives_zero_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = ConstantClassifier {
        shape: (8, 8, 3),
        logits: [0.0, 1.0],
    };
    let cam = gradcam(&m, &random_image(&mut rng, 8, 8), Label::Fake).unwrap();
    assert!(cam.is_all_zero());
}

#[test]
fn pooled_layer_is_upsampled_to_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let m = MeanMapClassifier::new((16, 16, 3), 1, 2.0, 0.0, 4);
    let img = random_image(&mut rng, 16, 16);
    assert_eq!(gradcam_layer(&m, &img, Label::Fake).unwrap().dims(), (4, 4));
    assert_eq!(gradcam(&m, &img, Label::Fake).unwrap().dims(), (16, 16));
}

#[test]
fn normalization_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let m = MockLinearClassifier::red_minus_blue(8, 8, 8.0, 0.0);
    for _ in 0..20 {
        let cam = gradcam(&m, &random_image(&mut rng, 8, 8), Label::Fake).unwrap();
        let n = normalize_heatmap(&cam);
        if cam.is_all_zero() {
            assert!(n.is_all_zero());
        } else {
            assert_eq!(n.max(), 1.0);
            assert_eq!(normalize_heatmap(&n), n);
        }
    }
}

#[test]
fn super_resolution_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let img = random_image(&mut rng, 8, 8);
    for factor in [2, 4] {
        let up = backends::super_resolve(&BicubicUpscaler, &img, factor).unwrap();
        assert_eq!(up.shape(), (8 * factor, 8 * factor, 3));
    }
    assert!(backends::super_resolve(&BicubicUpscaler, &img, 3).is_err());
}

#[test]
fn single_precision_pipeline_pieces() {
    let m = MockLinearClassifier::<f32>::red_minus_blue(8, 8, 8.0, 0.0);
    let img = Image32::from_fn(
        8,
        8,
        3,
        |r, c, ch| if ch == 0 { (r + c) as f32 / 16.0 } else { 0.25 },
    )
    .unwrap();
    let out = backends::classify(&m, &img).unwrap();
    assert_eq!(out.prediction, Label::Fake);
    let cam = gradcam(&m, &img, Label::Fake).unwrap();
    assert!(cam.values().iter().all(|&v| v >= 0.0));
    let g = backends::input_gradient(&m, &img, Label::Fake).unwrap();
    assert_eq!(g.data.len(), img.len());
}
