use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use veritas_core::ensemble::{
    accuracy, ensemble_predict, normalize_weights, search_weights, EnsembleError, EnsembleWeights,
    SearchOptions, ValidationTable,
};
use veritas_core::Label;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn normalized_weights_lie_on_simplex(raw in prop::collection::vec(0.0f64..10.0, 1..10)) {
        match normalize_weights(&raw) {
            Ok(w) => {
                let sum: f64 = w.as_slice().iter().sum();
                prop_assert!((sum - 1.0).abs() <= 1e-12);
                prop_assert!(w.as_slice().iter().all(|&v| v >= 0.0));
                let again = normalize_weights(w.as_slice()).unwrap();
                for (a, b) in again.as_slice().iter().zip(w.as_slice()) {
                    prop_assert!((a - b).abs() <= 1e-15);
                }
            }
            Err(e) => {
                prop_assert_eq!(e, EnsembleError::AllZeroWeights);
                prop_assert!(raw.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn prediction_is_convex_combination(
        probs in prop::collection::vec(0.0f64..=1.0, 1..10),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw: Vec<f64> = probs.iter().map(|_| rng.gen_range(0.0..1.0)).collect();
        prop_assume!(raw.iter().any(|&v| v > 0.0));
        let w = normalize_weights(&raw).unwrap();
        let p = ensemble_predict(&probs, &w).unwrap();
        let lo = probs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(p >= lo && p <= hi);
        let oracle: f64 = probs.iter().zip(w.as_slice()).map(|(a, b)| a * b).sum();
        prop_assert!((p - oracle).abs() <= 1e-12);
    }

    #[test]
    fn one_hot_selects_member(probs in prop::collection::vec(0.0f64..=1.0, 1..10), k in any::<prop::sample::Index>()) {
        let k = k.index(probs.len());
        let p = ensemble_predict(&probs, &EnsembleWeights::one_hot(probs.len(), k)).unwrap();
        prop_assert_eq!(p, probs[k]);
    }
}

/// Member `m` is right on exactly the samples where `correct[m][i]` holds.
fn controlled_table(
    rng: &mut ChaCha8Rng,
    members: usize,
    samples: usize,
) -> (ValidationTable<f64>, Vec<f64>) {
    let mut rows = Vec::new();
    let rates: Vec<f64> = (0..members).map(|_| rng.gen_range(0.3..0.95)).collect();
    for i in 0..samples {
        let label = if rng.gen() { Label::Fake } else { Label::Real };
        let probs = rates
            .iter()
            .map(|&rate| {
                let right = rng.gen_bool(rate);
                let says_fake = (label == Label::Fake) == right;
                if says_fake {
                    rng.gen_range(0.5..1.0)
                } else {
                    rng.gen_range(0.0..0.49)
                }
            })
            .collect();
        rows.push((format!("s{i}"), label, probs));
    }
    let names = (0..members).map(|m| format!("m{m}")).collect();
    let table = ValidationTable::new(names, rows).unwrap();
    let singles = (0..members)
        .map(|m| accuracy(&table, &EnsembleWeights::one_hot(members, m)).unwrap())
        .collect();
    (table, singles)
}

#[test]
fn search_never_underperforms_best_member() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for case in 0..20 {
        let members = rng.gen_range(1..6);
        let (table, singles) = controlled_table(&mut rng, members, 80);
        let best_single = singles.iter().copied().fold(0.0, f64::max);
        let options = SearchOptions {
            trials: members + 25,
            seed: case,
            inject_one_hot: true,
        };
        let out = search_weights(&table, &options).unwrap();
        assert!(
            out.best_score >= best_single,
            "{} < {best_single}",
            out.best_score
        );
        assert_eq!(out.best_score, accuracy(&table, &out.weights).unwrap());
        // Same seed, same answer.
        assert_eq!(search_weights(&table, &options).unwrap(), out);
    }
}
