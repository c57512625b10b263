//! Brute-force reference implementations. Written independently of the
//! vectorized kernels; shared by the core integration tests and the harness
//! acceptance suite.
#![allow(dead_code, clippy::needless_range_loop)]

use dphr_core::grad::{finite_diff_gradient, frozen_objective_value, grad_dphr, Objective};
use dphr_core::{l2_normalize, EmbeddingBatch};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

pub fn random_batch(rng: &mut ChaCha8Rng, b: usize, d: usize) -> EmbeddingBatch {
    let a = random_matrix(rng, b, d);
    let p = random_matrix(rng, b, d);
    EmbeddingBatch::from_views(a, p).unwrap()
}

pub fn naive_sq_dist(a: &Array2<f64>, b: &Array2<f64>) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; b.nrows()]; a.nrows()];
    for i in 0..a.nrows() {
        for j in 0..b.nrows() {
            let mut s = 0.0;
            for k in 0..a.ncols() {
                let diff = a[[i, k]] - b[[j, k]];
                s += diff * diff;
            }
            out[i][j] = s;
        }
    }
    out
}

/// Hinge losses for every (query, negative), negatives in gallery order.
pub fn naive_triplet_losses(dm: &[Vec<f64>], margin: f64) -> Vec<Vec<f64>> {
    let b = dm.len();
    let mut out = Vec::with_capacity(b);
    for i in 0..b {
        let mut row = Vec::with_capacity(b - 1);
        for j in 0..b {
            if j == i {
                continue;
            }
            let z = dm[i][i] - dm[i][j] + margin;
            row.push(if z > 0.0 { z } else { 0.0 });
        }
        out.push(row);
    }
    out
}

pub fn naive_mean(m: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for row in m {
        for v in row {
            s += v;
            n += 1;
        }
    }
    s / n as f64
}

pub fn naive_hardness(dm: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let b = dm.len();
    (0..b)
        .map(|i| {
            (0..b)
                .filter(|&j| j != i)
                .map(|j| {
                    let (p, n) = (dm[i][i], dm[i][j]);
                    if p + n < 1e-12 {
                        0.5
                    } else {
                        p / (p + n)
                    }
                })
                .collect()
        })
        .collect()
}

pub fn naive_weighted_mean(losses: &[Vec<f64>], weights: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for (lr, wr) in losses.iter().zip(weights) {
        for (l, w) in lr.iter().zip(wr) {
            s += l * w;
            n += 1;
        }
    }
    s / n as f64
}

/// Area under the step precision-recall curve of one query:
/// `sum_k P(k) * (R(k) - R(k-1))` over every cutoff `k`.
pub fn pr_curve_ap(distances: &[f64], relevant: &[bool]) -> f64 {
    let g = distances.len();
    let mut idx: Vec<usize> = (0..g).collect();
    // selection sort by (distance, index)
    for pos in 0..g {
        let mut best = pos;
        for cand in pos + 1..g {
            let (c, b) = (idx[cand], idx[best]);
            if distances[c] < distances[b] || (distances[c] == distances[b] && c < b) {
                best = cand;
            }
        }
        idx.swap(pos, best);
    }
    let total = relevant.iter().filter(|r| **r).count() as f64;
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    let mut hits = 0.0;
    for (k, &item) in idx.iter().enumerate() {
        if relevant[item] {
            hits += 1.0;
        }
        let precision = hits / (k + 1) as f64;
        let recall = hits / total;
        area += precision * (recall - prev_recall);
        prev_recall = recall;
    }
    area
}

/// Signs of every hinge argument of the objective, used to spot kinks.
fn active_pattern(batch: &EmbeddingBatch, obj: &Objective) -> Vec<(bool, f64)> {
    let (a, b) = if obj.normalize {
        (l2_normalize(batch.view_a()), l2_normalize(batch.view_b()))
    } else {
        (batch.view_a().clone(), batch.view_b().clone())
    };
    let mut out = Vec::new();
    for &dir in obj.directions.list() {
        let dm = match dir {
            dphr_core::Direction::AToB => naive_sq_dist(&a, &b),
            dphr_core::Direction::BToA => naive_sq_dist(&b, &a),
        };
        for i in 0..dm.len() {
            for j in 0..dm.len() {
                if i != j {
                    let z = dm[i][i] - dm[i][j] + obj.margin;
                    out.push((z > 0.0, z));
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GradCheck {
    pub checked: usize,
    pub excluded: usize,
    pub within_tol: usize,
    pub max_rel_err: f64,
}

impl GradCheck {
    pub fn merge(self, o: GradCheck) -> GradCheck {
        GradCheck {
            checked: self.checked + o.checked,
            excluded: self.excluded + o.excluded,
            within_tol: self.within_tol + o.within_tol,
            max_rel_err: self.max_rel_err.max(o.max_rel_err),
        }
    }

    pub fn fraction_within(&self) -> f64 {
        self.within_tol as f64 / self.checked.max(1) as f64
    }
}

/// Denominator floor of the relative error, so exactly-zero partials compare
/// on an absolute scale.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares the analytic gradient with central differences. Coordinates
/// whose +-step perturbation flips any hinge, or that sit within `kink_eps`
/// of a hinge, are excluded.
pub fn gradient_check(
    batch: &EmbeddingBatch,
    obj: &Objective,
    step: f64,
    kink_eps: f64,
    tol: f64,
) -> GradCheck {
    let analytic = grad_dphr(batch, obj).unwrap().grads;
    let numeric = finite_diff_gradient(
        |x| frozen_objective_value(x, batch, obj).unwrap(),
        batch,
        step,
    )
    .unwrap();
    let base = active_pattern(batch, obj);
    let mut res = GradCheck::default();
    let (b, d) = (batch.batch_size(), batch.dim());
    for view in 0..2 {
        for r in 0..b {
            for c in 0..d {
                let mut crosses = false;
                for delta in [step, -step] {
                    let mut probe = batch.clone();
                    {
                        let (va, vb) = probe.views_mut();
                        let m = if view == 0 { va } else { vb };
                        m[[r, c]] += delta;
                    }
                    let pat = active_pattern(&probe, obj);
                    if pat
                        .iter()
                        .zip(&base)
                        .any(|(p, q)| p.0 != q.0 || (q.1.abs() < kink_eps && p.1 != q.1))
                    {
                        crosses = true;
                    }
                }
                if crosses {
                    res.excluded += 1;
                    continue;
                }
                let (ga, gn) = if view == 0 {
                    (analytic.grad_a[[r, c]], numeric.grad_a[[r, c]])
                } else {
                    (analytic.grad_b[[r, c]], numeric.grad_b[[r, c]])
                };
                let err = relative_error(ga, gn);
                res.checked += 1;
                if err <= tol {
                    res.within_tol += 1;
                }
                res.max_rel_err = res.max_rel_err.max(err);
            }
        }
    }
    res
}
