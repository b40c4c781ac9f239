//! Property tests for the numeric invariants that hold on all inputs.

use proptest::prelude::*;
use xmodal_core::eval::{map_at_k, ApNorm, Direction, ScoreMatrix};
use xmodal_core::projector::reshape_k_eval;
use xmodal_core::tensor::{self, Tensor};

fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, len)
}

proptest! {
    #[test]
    fn cosine_distance_range_and_symmetry(
        a in finite_vec(6),
        b in finite_vec(6),
    ) {
        let ta = Tensor::row_vector(a);
        let tb = Tensor::row_vector(b);
        let d_ab = tensor::cosine_distance(&ta, &tb);
        let d_ba = tensor::cosine_distance(&tb, &ta);
        match (d_ab, d_ba) {
            (Ok(x), Ok(y)) => {
                prop_assert!((0.0..=2.0).contains(&x));
                prop_assert_eq!(x, y);
            }
            (Err(_), Err(_)) => {} // both zero-norm
            _ => prop_assert!(false, "symmetry of the error case violated"),
        }
    }

    #[test]
    fn cosine_distance_zero_iff_positive_scaling(
        a in finite_vec(5),
        scale in 0.01f64..100.0,
    ) {
        let ta = Tensor::row_vector(a.clone());
        prop_assume!(a.iter().any(|&v| v.abs() > 1e-6));
        let scaled = Tensor::row_vector(a.iter().map(|&v| v * scale).collect());
        let d = tensor::cosine_distance(&ta, &scaled).unwrap();
        prop_assert!(d.abs() < 1e-9, "distance {d}");
    }

    #[test]
    fn softmax_columns_are_distributions(
        // Logit gaps beyond ~36 make the top entry round to exactly 1.0 in
        // f64; the open-interval property is meaningful below that.
        data in prop::collection::vec(-15.0f64..15.0, 12),
    ) {
        let t = Tensor::new(4, 3, data).unwrap();
        let s = tensor::softmax_cols(&t);
        for c in 0..3 {
            let sum: f64 = (0..4).map(|r| s.get(r, c)).sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            for r in 0..4 {
                let v = s.get(r, c);
                prop_assert!(v > 0.0 && v < 1.0);
            }
        }
    }

    #[test]
    fn reshape_blocks_round_trip(
        data in finite_vec(12),
        k in prop::sample::select(vec![1usize, 2, 3, 4, 6, 12]),
    ) {
        let reshaped = reshape_k_eval(&data, k).unwrap();
        let h = 12 / k;
        // Flattening column-by-column restores the vector.
        let mut flat = Vec::with_capacity(12);
        for c in 0..k {
            for r in 0..h {
                flat.push(reshaped.get(r, c));
            }
        }
        prop_assert_eq!(flat, data);
    }

    #[test]
    fn map_invariant_under_strictly_monotone_score_transform(
        data in prop::collection::vec(0.0f64..2.0, 25),
        labels_q in prop::collection::vec(0u32..3, 5),
        labels_c in prop::collection::vec(0u32..3, 5),
        k in 1usize..6,
    ) {
        let base = ScoreMatrix {
            distances: Tensor::new(5, 5, data.clone()).unwrap(),
            direction: Direction::Img2Txt,
        };
        let transformed = ScoreMatrix {
            distances: Tensor::new(
                5,
                5,
                data.iter().map(|&v| (2.0 * v).exp() + 1.0).collect(),
            )
            .unwrap(),
            direction: Direction::Img2Txt,
        };
        let a = map_at_k(&base, &labels_q, &labels_c, k, ApNorm::MinRelK).unwrap();
        let b = map_at_k(&transformed, &labels_q, &labels_c, k, ApNorm::MinRelK).unwrap();
        prop_assert_eq!(a.map, b.map);
        prop_assert_eq!(a.n_excluded, b.n_excluded);
    }

    #[test]
    fn map_invariant_under_candidate_permutation(
        data in prop::collection::vec(0.0f64..2.0, 24),
        labels_q in prop::collection::vec(0u32..3, 4),
        labels_c in prop::collection::vec(0u32..3, 6),
        seed in 0u64..64,
    ) {
        // Tie-breaking is by candidate index, so invariance is only
        // guaranteed for distinct scores; perturb duplicates away.
        let mut data = data;
        for (i, v) in data.iter_mut().enumerate() {
            *v += i as f64 * 1e-9;
        }
        let base = ScoreMatrix {
            distances: Tensor::new(4, 6, data.clone()).unwrap(),
            direction: Direction::Img2Txt,
        };

        // Deterministic permutation of candidates from the seed.
        let mut perm: Vec<usize> = (0..6).collect();
        let mut state = seed.wrapping_add(1);
        for i in (1..6).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let j = (state >> 33) as usize % (i + 1);
            perm.swap(i, j);
        }
        let mut permuted = vec![0.0; 24];
        for q in 0..4 {
            for c in 0..6 {
                permuted[q * 6 + c] = data[q * 6 + perm[c]];
            }
        }
        let labels_p: Vec<u32> = perm.iter().map(|&c| labels_c[c]).collect();
        let shuffled = ScoreMatrix {
            distances: Tensor::new(4, 6, permuted).unwrap(),
            direction: Direction::Img2Txt,
        };
        let a = map_at_k(&base, &labels_q, &labels_c, 4, ApNorm::MinRelK).unwrap();
        let b = map_at_k(&shuffled, &labels_q, &labels_p, 4, ApNorm::MinRelK).unwrap();
        prop_assert!((a.map - b.map).abs() < 1e-12);
    }

    #[test]
    fn attention_distance_pairs_stay_in_range(
        x in finite_vec(8),
        y in finite_vec(8),
    ) {
        prop_assume!(x.iter().any(|&v| v.abs() > 1e-3));
        prop_assume!(y.iter().any(|&v| v.abs() > 1e-3));
        let xh = reshape_k_eval(&x, 4).unwrap();
        let yh = reshape_k_eval(&y, 4).unwrap();
        let map = xmodal_core::projector::uniform_map(4);
        let (fx, fy) = xmodal_core::projector::fuse_pair_eval(&xh, &yh, &map, &map).unwrap();
        if let Ok(d) = tensor::cosine_distance(&fx, &fy) {
            prop_assert!((0.0..=2.0).contains(&d));
        }
    }
}
