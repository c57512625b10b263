//! Property-based invariants of the kernels and the scheduler.
#![allow(clippy::needless_range_loop)]

mod support;

use dphr_core::eval::{average_precision, evaluate};
use dphr_core::grad::{grad_dphr, Objective, Weighting};
use dphr_core::rda::{hardness_scores, weighted_triplet_loss};
use dphr_core::{
    build_triplets, generate_dataset, mean_triplet_loss, pairwise_sq_euclidean, train, Direction,
    Directions, EmbeddingBatch, EncoderMode, HardnessWeights, PalwConfig, PalwState, SynthConfig,
    TrainConfig, Variant, WeightInterval,
};
use ndarray::{Array2, Axis};
use proptest::prelude::*;
use support::oracles::{naive_sq_dist, random_matrix, rng};

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn distances_scale_quadratically(seed in any::<u64>(), b in 2usize..8, d in 1usize..6, c in 0.01f64..100.0) {
        let mut r = rng(seed);
        let x = random_matrix(&mut r, b, d);
        let y = random_matrix(&mut r, b, d);
        let base = pairwise_sq_euclidean(&x, &y).unwrap();
        let scaled = pairwise_sq_euclidean(&(&x * c), &(&y * c)).unwrap();
        for (u, v) in base.values().iter().zip(scaled.values().iter()) {
            prop_assert!(close(u * c * c, *v, 1e-12));
        }
        let naive = naive_sq_dist(&x, &y);
        for i in 0..b {
            for j in 0..b {
                prop_assert!(close(base.values()[[i, j]], naive[i][j], 1e-12));
            }
        }
        let own = pairwise_sq_euclidean(&x, &x).unwrap();
        for i in 0..b {
            prop_assert_eq!(own.values()[[i, i]], 0.0);
        }
    }

    #[test]
    fn triplet_loss_ignores_common_translation(seed in any::<u64>(), b in 2usize..8, shift in -5.0f64..5.0) {
        let mut r = rng(seed);
        let x = random_matrix(&mut r, b, 3);
        let y = random_matrix(&mut r, b, 3);
        let l = |x: &Array2<f64>, y: &Array2<f64>| {
            mean_triplet_loss(&build_triplets(&pairwise_sq_euclidean(x, y).unwrap(), 0.3).unwrap())
        };
        let shifted = l(&(&x + shift), &(&y + shift));
        prop_assert!((l(&x, &y) - shifted).abs() <= 1e-9);
    }

    #[test]
    fn triplet_loss_is_monotone_in_margin(seed in any::<u64>(), b in 2usize..8, m1 in 0.0f64..1.0, dm in 0.0f64..1.0) {
        let mut r = rng(seed);
        let dist = pairwise_sq_euclidean(&random_matrix(&mut r, b, 4), &random_matrix(&mut r, b, 4)).unwrap();
        let lo = mean_triplet_loss(&build_triplets(&dist, m1).unwrap());
        let hi = mean_triplet_loss(&build_triplets(&dist, m1 + dm).unwrap());
        prop_assert!(lo <= hi);
    }

    #[test]
    fn hardness_is_scale_invariant_and_bounded(seed in any::<u64>(), b in 2usize..8, c in 1e-3f64..1e3) {
        let mut r = rng(seed);
        let dist = pairwise_sq_euclidean(&random_matrix(&mut r, b, 4), &random_matrix(&mut r, b, 4)).unwrap();
        let scaled = dphr_core::DistanceMatrix::new(dist.values() * c).unwrap();
        let h1 = hardness_scores(&build_triplets(&dist, 0.3).unwrap());
        let h2 = hardness_scores(&build_triplets(&scaled, 0.3).unwrap());
        for (u, v) in h1.iter().zip(h2.iter()) {
            prop_assert!((0.0..=1.0).contains(u));
            prop_assert!(close(*u, *v, 1e-12));
        }
    }

    #[test]
    fn weights_increase_with_hardness(p in 0.0f64..10.0, n1 in 0.01f64..10.0, dn in 0.01f64..10.0) {
        // same positive, closer negative => harder => larger weight
        let w = WeightInterval::default();
        let weight = |n: f64| {
            let dm = dphr_core::DistanceMatrix::new(ndarray::array![[p, n], [n, p]]).unwrap();
            HardnessWeights::from_geometry(&build_triplets(&dm, 0.3).unwrap(), w).unwrap().weights[[0, 0]]
        };
        prop_assert!(weight(n1) >= weight(n1 + dn));
    }

    #[test]
    fn weighted_loss_is_bracketed(seed in any::<u64>(), b in 2usize..8) {
        let mut r = rng(seed);
        let dist = pairwise_sq_euclidean(&random_matrix(&mut r, b, 4), &random_matrix(&mut r, b, 4)).unwrap();
        let tg = build_triplets(&dist, 0.3).unwrap();
        let hw = HardnessWeights::from_geometry(&tg, WeightInterval::default()).unwrap();
        let l = mean_triplet_loss(&tg);
        let lw = weighted_triplet_loss(&tg, &hw).unwrap();
        prop_assert!(hw.w_min * l <= lw + 1e-12);
        prop_assert!(lw <= hw.w_max * l + 1e-12);
        prop_assert!(hw.weights.iter().all(|w| (0.5..=2.0).contains(w)));
    }

    #[test]
    fn scheduler_stays_in_bounds(losses in prop::collection::vec(0.0f64..5.0, 1..200), window in 1usize..32) {
        let cfg = PalwConfig { window, ..PalwConfig::default() };
        let mut s = PalwState::from_config(&cfg).unwrap();
        for &l in &losses {
            let tr = s.step(l, &cfg).unwrap();
            prop_assert!((0.0..=1.0).contains(&tr.alpha_hat));
            prop_assert!((cfg.delta_min..=cfg.delta_max).contains(&tr.lambda_inst));
            prop_assert!((cfg.delta_min..=cfg.delta_max).contains(&tr.lambda));
        }
    }

    #[test]
    fn unit_window_tracks_the_latest_loss(losses in prop::collection::vec(0.0f64..5.0, 1..50)) {
        let cfg = PalwConfig { window: 1, ..PalwConfig::default() };
        let mut s = PalwState::from_config(&cfg).unwrap();
        for &l in &losses {
            prop_assert_eq!(s.step(l, &cfg).unwrap().alpha, l);
        }
    }

    #[test]
    fn scheduler_is_deterministic(losses in prop::collection::vec(0.0f64..5.0, 1..100)) {
        let cfg = PalwConfig::default();
        let run = || {
            let mut s = PalwState::from_config(&cfg).unwrap();
            losses.iter().map(|&l| s.step(l, &cfg).unwrap()).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn falling_loss_never_lowers_the_instantaneous_coefficient(start in 0.0f64..3.0, steps in prop::collection::vec(0.0f64..0.2, 1..80)) {
        let cfg = PalwConfig::default();
        let mut s = PalwState::from_config(&cfg).unwrap();
        let mut loss = start;
        let mut prev: Option<f64> = None;
        for (t, drop) in steps.iter().enumerate() {
            loss = (loss - drop).max(0.0);
            let tr = s.step(loss, &cfg).unwrap();
            // once the window is full the moving average is non-increasing
            if t >= cfg.window {
                if let Some(p) = prev {
                    prop_assert!(tr.lambda_inst >= p - 1e-12);
                }
            }
            prev = Some(tr.lambda_inst);
        }
    }

    #[test]
    fn retrieval_ignores_monotone_rescaling_and_gallery_order(seed in any::<u64>(), n in 2usize..10, c in 0.1f64..10.0) {
        let mut r = rng(seed);
        let q = random_matrix(&mut r, n, 3);
        let g = random_matrix(&mut r, n, 3);
        let ids: Vec<usize> = (0..n).collect();
        let ks = [1, 3, n];
        let base = evaluate(q.view(), g.view(), &ids, &ids, &ks, Direction::AToB).unwrap();
        // uniform scaling is a strictly increasing transform of every distance
        let scaled = evaluate((&q * c).view(), (&g * c).view(), &ids, &ids, &ks, Direction::AToB).unwrap();
        prop_assert_eq!(&base.recall_at, &scaled.recall_at);
        prop_assert!((base.ap - scaled.ap).abs() < 1e-9);
        let perm: Vec<usize> = (0..n).rev().collect();
        let gp = g.select(Axis(0), &perm);
        let pids: Vec<usize> = perm.clone();
        let permuted = evaluate(q.view(), gp.view(), &ids, &pids, &[n], Direction::AToB).unwrap();
        prop_assert_eq!(permuted.recall(n), Some(100.0));
        prop_assert_eq!(base.recall(n), Some(100.0));
    }

    #[test]
    fn ap_lies_in_unit_interval(rel in prop::collection::vec(any::<bool>(), 1..40)) {
        let ap = average_precision(rel.iter().copied());
        prop_assert!((0.0..=1.0).contains(&ap));
        if rel[0] {
            prop_assert!(ap > 0.0);
        }
    }
}

#[test]
fn gallery_permutation_without_ties_keeps_metrics() {
    let mut r = rng(3);
    let n = 9;
    let q = random_matrix(&mut r, n, 4);
    let g = random_matrix(&mut r, n, 4);
    let ids: Vec<usize> = (0..n).collect();
    let perm = [4, 0, 8, 2, 7, 1, 5, 3, 6];
    let gp = g.select(Axis(0), &perm);
    let a = evaluate(q.view(), g.view(), &ids, &ids, &[1, 5], Direction::AToB).unwrap();
    let b = evaluate(q.view(), gp.view(), &ids, &perm, &[1, 5], Direction::AToB).unwrap();
    assert_eq!(a.recall_at, b.recall_at);
    assert_eq!(a.per_query_ranks, b.per_query_ranks);
    assert!((a.ap - b.ap).abs() < 1e-12);
}

#[test]
fn full_batch_free_embedding_step_is_plain_gradient_descent() {
    let synth = SynthConfig {
        n_classes: 8,
        dim: 4,
        noise_sigma: 0.5,
        seed: 11,
        ..SynthConfig::default()
    };
    let ds = generate_dataset(&synth).unwrap();
    let cfg = TrainConfig {
        mode: EncoderMode::FreeEmbedding,
        lr: 0.05,
        epochs: 1,
        batch_size: 8,
        variant: Variant::RdaOnly,
        seed: 5,
        ..TrainConfig::default()
    };
    let out = train(&ds, &cfg).unwrap();
    let batch = EmbeddingBatch::new(ds.view_a.clone(), ds.view_b.clone(), ds.ids.clone()).unwrap();
    let obj = Objective {
        margin: cfg.margin,
        directions: Directions::Both,
        weighting: Weighting::Rda(cfg.weights),
        lambda: 1.0,
        normalize: cfg.normalize,
    };
    let g = grad_dphr(&batch, &obj).unwrap().grads;
    let expect_a = &ds.view_a - &(&g.grad_a * cfg.lr);
    let expect_b = &ds.view_b - &(&g.grad_b * cfg.lr);
    for (x, y) in out
        .embeddings_a
        .iter()
        .zip(expect_a.iter())
        .chain(out.embeddings_b.iter().zip(expect_b.iter()))
    {
        assert!((x - y).abs() < 1e-12, "{x} vs {y}");
    }
}
