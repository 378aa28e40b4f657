use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use veritas_core::forensic::{
    artifact_score, build_patch_grid, interpolate_heatmap, patch_weight, ForensicError, PatchVote,
    VoteKind,
};
use veritas_core::Heatmap;

fn kind_of(i: u8) -> VoteKind {
    match i % 3 {
        0 => VoteKind::Positive,
        1 => VoteKind::Negative,
        _ => VoteKind::Neutral,
    }
}

/// Straight-line weighted mean over the non-neutral entries.
fn oracle(weights: &[f64], kinds: &[VoteKind]) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (w, k) in weights.iter().zip(kinds) {
        match k {
            VoteKind::Positive => {
                num += w;
                den += w;
            }
            VoteKind::Negative => den += w,
            VoteKind::Neutral => {}
        }
    }
    (den > 0.0).then(|| num / den)
}

fn votes(kinds: &[VoteKind]) -> Vec<PatchVote<f64>> {
    kinds.iter().map(|&k| PatchVote::of_kind(k)).collect()
}

#[test]
fn score_matches_weighted_mean_on_fifty_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let n = rng.gen_range(1..40);
        let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..5.0)).collect();
        let kinds: Vec<VoteKind> = (0..n).map(|_| kind_of(rng.gen())).collect();
        match (
            artifact_score("a", &weights, &votes(&kinds), 0.5),
            oracle(&weights, &kinds),
        ) {
            (Ok(s), Some(o)) => assert!((s.score - o).abs() <= 1e-12),
            (Err(ForensicError::NoRelevantPatches), None) => {}
            other => panic!("disagreement: {other:?}"),
        }
    }
}

#[test]
fn hundred_by_hundred_grid_remainders() {
    let grid = build_patch_grid::<f64>((100, 100), 32).unwrap();
    assert_eq!(grid.len(), 16);
    let last = grid.patches.last().unwrap();
    assert_eq!(
        (last.row_offset, last.col_offset, last.height, last.width),
        (96, 96, 4, 4)
    );
    assert_eq!(build_patch_grid::<f64>((128, 128), 32).unwrap().len(), 16);
    assert_eq!(build_patch_grid::<f64>((32, 32), 32).unwrap().len(), 1);
    assert!(build_patch_grid::<f64>((0, 4), 2).is_err());
    assert!(build_patch_grid::<f64>((4, 4), 0).is_err());
}

#[test]
fn ramp_upsampling_rows_identical_and_monotone() {
    let h = Heatmap::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
    let up = interpolate_heatmap(&h, (4, 4)).unwrap();
    let row0: Vec<f64> = (0..4).map(|c| up.get(0, c)).collect();
    for r in 1..4 {
        let row: Vec<f64> = (0..4).map(|c| up.get(r, c)).collect();
        assert_eq!(row, row0);
    }
    assert!(row0.windows(2).all(|w| w[0] <= w[1]));
    // Half-pixel centres: x_src = (x + 0.5) / 2 - 0.5, clamped.
    let expect = [0.0, 0.25, 0.75, 1.0];
    for (a, b) in row0.iter().zip(expect) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn patch_weights_match_pixel_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let values: Vec<f64> = (0..256).map(|_| rng.gen_range(0.0..2.0)).collect();
    let h = Heatmap::new(16, 16, values.clone()).unwrap();
    let grid = build_patch_grid::<f64>((16, 16), 4).unwrap();
    for p in &grid.patches {
        let mut acc = 0.0;
        for r in p.row_offset..p.row_offset + p.height {
            for c in p.col_offset..p.col_offset + p.width {
                acc += values[r * 16 + c];
            }
        }
        assert!((patch_weight(&h, p).unwrap() - acc).abs() < 1e-12);
    }
}

fn heatmap_strategy() -> impl Strategy<Value = Heatmap<f64>> {
    (1usize..40, 1usize..40).prop_flat_map(|(h, w)| {
        prop::collection::vec(0.0f64..10.0, h * w).prop_map(move |v| Heatmap::new(h, w, v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn grid_tiles_exactly(h in 1usize..200, w in 1usize..200, p in 1usize..70) {
        let grid = build_patch_grid::<f64>((h, w), p).unwrap();
        prop_assert_eq!(grid.len(), h.div_ceil(p) * w.div_ceil(p));
        let mut cover = vec![0u8; h * w];
        for patch in &grid.patches {
            prop_assert!(patch.fits_within((h, w)));
            for r in patch.row_offset..patch.row_offset + patch.height {
                for c in patch.col_offset..patch.col_offset + patch.width {
                    cover[r * w + c] += 1;
                }
            }
        }
        prop_assert!(cover.iter().all(|&n| n == 1));
    }

    #[test]
    fn weights_conserve_heatmap_mass(hm in heatmap_strategy(), p in 1usize..20) {
        let grid = build_patch_grid::<f64>(hm.dims(), p).unwrap().weighted_by(&hm).unwrap();
        let total: f64 = grid.weights().iter().sum();
        let expect = hm.sum();
        prop_assert!((total - expect).abs() <= 1e-9 * expect.max(1.0));
        prop_assert!(grid.weights().iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn score_bounded_and_scale_invariant(
        raw in prop::collection::vec((0.0f64..10.0, any::<u8>()), 1..50),
        c in 1e-3f64..1e3,
    ) {
        let weights: Vec<f64> = raw.iter().map(|r| r.0).collect();
        let kinds: Vec<VoteKind> = raw.iter().map(|r| kind_of(r.1)).collect();
        let scaled: Vec<f64> = weights.iter().map(|w| w * c).collect();
        match (artifact_score("a", &weights, &votes(&kinds), 0.5), artifact_score("a", &scaled, &votes(&kinds), 0.5)) {
            (Ok(a), Ok(b)) => {
                prop_assert!((0.0..=1.0).contains(&a.score));
                prop_assert!((a.score - b.score).abs() <= 1e-12);
                prop_assert_eq!(a.retained, a.score >= 0.5);
            }
            (Err(_), Err(_)) => {}
            other => prop_assert!(false, "scaling changed applicability: {:?}", other),
        }
    }

    #[test]
    fn flipping_negative_to_positive_never_lowers_score(
        raw in prop::collection::vec((0.0f64..10.0, any::<u8>()), 1..50),
        pick in any::<prop::sample::Index>(),
    ) {
        let weights: Vec<f64> = raw.iter().map(|r| r.0).collect();
        let kinds: Vec<VoteKind> = raw.iter().map(|r| kind_of(r.1)).collect();
        let negatives: Vec<usize> = (0..kinds.len()).filter(|&i| kinds[i] == VoteKind::Negative).collect();
        prop_assume!(!negatives.is_empty());
        let mut flipped = kinds.clone();
        flipped[negatives[pick.index(negatives.len())]] = VoteKind::Positive;
        if let (Ok(a), Ok(b)) = (artifact_score("a", &weights, &votes(&kinds), 0.5), artifact_score("a", &weights, &votes(&flipped), 0.5)) {
            prop_assert!(b.score >= a.score - 1e-15);
        }
    }

    #[test]
    fn interpolation_stays_in_range(hm in heatmap_strategy(), th in 1usize..80, tw in 1usize..80) {
        let out = interpolate_heatmap(&hm, (th, tw)).unwrap();
        prop_assert_eq!(out.dims(), (th, tw));
        let (lo, hi) = (hm.min(), hm.max());
        for &v in out.values() {
            prop_assert!(v >= 0.0);
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn interpolation_identity(hm in heatmap_strategy()) {
        prop_assert_eq!(interpolate_heatmap(&hm, hm.dims()).unwrap(), hm);
    }

    #[test]
    fn vote_kind_is_argmax_with_tie_priority(p in -1.0f64..1.0, n in -1.0f64..1.0, u in -1.0f64..1.0) {
        let v = PatchVote::from_similarities(p, n, u);
        let max = p.max(n).max(u);
        let expect = if u == max { VoteKind::Neutral } else if n == max { VoteKind::Negative } else { VoteKind::Positive };
        prop_assert_eq!(v.kind, expect);
    }
}
