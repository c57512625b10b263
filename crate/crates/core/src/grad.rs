//! Closed-form gradient of the combined objective with respect to both
//! embedding views, and a central-difference oracle to check it.
//!
//! Conventions: per-negative weights and the batch coefficient are constants
//! (no gradient flows through them); the hinge is treated as inactive at its
//! kink; when normalization is enabled the row-normalization Jacobian
//! `(I - x_hat x_hat^T) / |x|` is applied.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};
use crate::her::{gap_weights, HerParams};
use crate::par::Exec;
use crate::rda::{weighted_mean, HardnessWeights, WeightInterval};
use crate::tensor::{cross_sq_euclidean, DistanceMatrix, EmbeddingBatch, NORM_EPS};
use crate::triplet::{build_triplets, mean_triplet_loss, Direction, Directions, TripletGeometry};

/// Per-negative weighting used in the second loss term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weighting {
    /// No second term: the objective is the plain triplet loss.
    None,
    /// Every negative weighted 1.
    Uniform,
    /// Ratio-based hardness weights mapped onto the interval.
    Rda(WeightInterval),
    /// Clipped gap-based weights.
    Her(HerParams),
}

/// Everything needed to evaluate `L_tri + lambda * L_w` on a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub margin: f64,
    pub directions: Directions,
    pub weighting: Weighting,
    pub lambda: f64,
    pub normalize: bool,
}

impl Default for Objective {
    fn default() -> Self {
        Self {
            margin: crate::DEFAULT_MARGIN,
            directions: Directions::Both,
            weighting: Weighting::Rda(WeightInterval::default()),
            lambda: 1.0,
            normalize: true,
        }
    }
}

impl Objective {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::validation(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        match self.weighting {
            Weighting::Rda(w) => w.validate(),
            Weighting::Her(h) => h.validate(),
            Weighting::None | Weighting::Uniform => Ok(()),
        }
    }
}

/// Gradients with respect to `view_a` and `view_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradPair {
    pub grad_a: Array2<f64>,
    pub grad_b: Array2<f64>,
}

impl GradPair {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            grad_a: Array2::zeros((rows, cols)),
            grad_b: Array2::zeros((rows, cols)),
        }
    }

    /// Frobenius norm over both views.
    pub fn norm(&self) -> f64 {
        (self
            .grad_a
            .iter()
            .chain(self.grad_b.iter())
            .map(|g| g * g)
            .sum::<f64>())
        .sqrt()
    }

    pub fn max_abs_diff(&self, other: &GradPair) -> f64 {
        self.grad_a
            .iter()
            .zip(other.grad_a.iter())
            .chain(self.grad_b.iter().zip(other.grad_b.iter()))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }
}

/// Loss terms and gradient of one objective evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEval {
    pub loss: f64,
    /// Unweighted triplet loss, averaged over directions.
    pub l_tri: f64,
    /// Weighted term, absent for [`Weighting::None`].
    pub l_wtri: Option<f64>,
    pub grads: GradPair,
}

struct DirectionTerms {
    direction: Direction,
    l_tri: f64,
    l_w: Option<f64>,
    /// B x B coefficient matrix on active triplets, zero diagonal.
    coef: Array2<f64>,
}

fn weights_for(tg: &TripletGeometry, weighting: Weighting) -> Result<Option<Array2<f64>>> {
    Ok(match weighting {
        Weighting::None => None,
        Weighting::Uniform => Some(Array2::ones(tg.losses.dim())),
        Weighting::Rda(interval) => Some(HardnessWeights::from_geometry(tg, interval)?.weights),
        Weighting::Her(params) => Some(gap_weights(tg, params)?),
    })
}

fn direction_terms(
    dm: &DistanceMatrix,
    direction: Direction,
    obj: &Objective,
    dir_scale: f64,
    frozen: Option<Option<Array2<f64>>>,
) -> Result<DirectionTerms> {
    let tg = build_triplets(dm, obj.margin)?;
    let b = tg.batch_size();
    let weights = match frozen {
        Some(w) => w,
        None => weights_for(&tg, obj.weighting)?,
    };
    let l_tri = mean_triplet_loss(&tg);
    let l_w = weights
        .as_ref()
        .map(|w| weighted_mean(&tg.losses, w))
        .transpose()?;
    let norm = dir_scale / (b * (b - 1)) as f64;
    let mut coef = Array2::zeros((b, b));
    for i in 0..b {
        for k in 0..b - 1 {
            if tg.hinge_argument(i, k) > 0.0 {
                let w = weights.as_ref().map_or(0.0, |w| w[[i, k]]);
                coef[[i, TripletGeometry::negative_index(i, k)]] = norm * (1.0 + obj.lambda * w);
            }
        }
    }
    Ok(DirectionTerms {
        direction,
        l_tri,
        l_w,
        coef,
    })
}

/// Adds the gradient of `sum_ij coef_ij * (d(q_i, g_i) - d(q_i, g_j))` to
/// `grad_q` / `grad_g`.
fn accumulate(
    queries: ArrayView2<'_, f64>,
    gallery: ArrayView2<'_, f64>,
    coef: &Array2<f64>,
    grad_q: &mut Array2<f64>,
    grad_g: &mut Array2<f64>,
    exec: Exec,
) {
    let b = coef.nrows();
    let row_sums: Array1<f64> = coef.sum_axis(Axis(1));
    let col_sums: Array1<f64> = coef.sum_axis(Axis(0));
    let rows = exec.map(b, |i| {
        // d/dq_i = 2 (sum_j c_ij g_j - S_i g_i)
        let mut gq = coef.row(i).dot(&gallery);
        gq.scaled_add(-row_sums[i], &gallery.row(i));
        gq *= 2.0;
        // positive g_i: 2 S_i (g_i - q_i); as negative g_i: 2 (sum_k c_ki q_k - T_i g_i)
        let mut gg = coef.column(i).dot(&queries);
        gg.scaled_add(-col_sums[i], &gallery.row(i));
        gg.scaled_add(row_sums[i], &gallery.row(i));
        gg.scaled_add(-row_sums[i], &queries.row(i));
        gg *= 2.0;
        (gq, gg)
    });
    for (i, (gq, gg)) in rows.into_iter().enumerate() {
        let mut rq = grad_q.row_mut(i);
        rq += &gq;
        let mut rg = grad_g.row_mut(i);
        rg += &gg;
    }
}

/// Maps a gradient with respect to normalized rows back to the raw rows.
fn backprop_normalize(raw: &Array2<f64>, grad: &mut Array2<f64>) {
    Zip::from(grad.rows_mut())
        .and(raw.rows())
        .for_each(|mut g, x| {
            let norm = x.dot(&x).sqrt();
            if norm >= NORM_EPS {
                let proj = x.dot(&g) / (norm * norm);
                Zip::from(&mut g)
                    .and(&x)
                    .for_each(|gi, &xi| *gi = (*gi - proj * xi) / norm);
            }
        });
}

fn evaluate_terms(
    batch: &EmbeddingBatch,
    obj: &Objective,
    exec: Exec,
) -> Result<(EmbeddingBatch, Vec<DirectionTerms>)> {
    obj.validate()?;
    let x = if obj.normalize {
        batch.normalized()
    } else {
        batch.clone()
    };
    let dm_ab = DistanceMatrix::new(cross_sq_euclidean(
        x.view_a().view(),
        x.view_b().view(),
        exec,
    )?)?;
    let dirs = obj.directions.list();
    let scale = 1.0 / dirs.len() as f64;
    let terms = dirs
        .iter()
        .map(|&d| match d {
            Direction::AToB => direction_terms(&dm_ab, d, obj, scale, None),
            Direction::BToA => direction_terms(&dm_ab.transposed(), d, obj, scale, None),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((x, terms))
}

fn combine(obj: &Objective, terms: &[DirectionTerms]) -> (f64, f64, Option<f64>) {
    let n = terms.len() as f64;
    let l_tri = terms.iter().map(|t| t.l_tri).sum::<f64>() / n;
    let l_w = match obj.weighting {
        Weighting::None => None,
        _ => Some(terms.iter().map(|t| t.l_w.unwrap_or(0.0)).sum::<f64>() / n),
    };
    let loss = match l_w {
        Some(w) => crate::palw::dphr_loss(l_tri, w, obj.lambda),
        None => l_tri,
    };
    (loss, l_tri, l_w)
}

/// Value of the objective without the gradient. Weights are recomputed from
/// `batch`, so this is not the function whose gradient [`grad_dphr`] returns
/// when the weighting depends on distances; see [`frozen_objective_value`].
pub fn objective_value(batch: &EmbeddingBatch, obj: &Objective) -> Result<f64> {
    let (_, terms) = evaluate_terms(batch, obj, Exec::Sequential)?;
    Ok(combine(obj, &terms).0)
}

/// Per-direction weight matrices the objective would use on `batch`.
fn direction_weights(batch: &EmbeddingBatch, obj: &Objective) -> Result<Vec<Option<Array2<f64>>>> {
    let x = if obj.normalize {
        batch.normalized()
    } else {
        batch.clone()
    };
    let dm_ab = DistanceMatrix::new(cross_sq_euclidean(
        x.view_a().view(),
        x.view_b().view(),
        Exec::Sequential,
    )?)?;
    obj.directions
        .list()
        .iter()
        .map(|&d| {
            let dm = match d {
                Direction::AToB => dm_ab.clone(),
                Direction::BToA => dm_ab.transposed(),
            };
            weights_for(&build_triplets(&dm, obj.margin)?, obj.weighting)
        })
        .collect()
}

/// Objective value on `batch` with the per-negative weights computed from
/// `reference` and held fixed. Differentiating this numerically at
/// `batch == reference` reproduces the stop-gradient convention of
/// [`grad_dphr`].
pub fn frozen_objective_value(
    batch: &EmbeddingBatch,
    reference: &EmbeddingBatch,
    obj: &Objective,
) -> Result<f64> {
    obj.validate()?;
    if batch.view_a().dim() != reference.view_a().dim() {
        return Err(Error::shape(reference.view_a().dim(), batch.view_a().dim()));
    }
    let weights = direction_weights(reference, obj)?;
    let x = if obj.normalize {
        batch.normalized()
    } else {
        batch.clone()
    };
    let dm_ab = DistanceMatrix::new(cross_sq_euclidean(
        x.view_a().view(),
        x.view_b().view(),
        Exec::Sequential,
    )?)?;
    let dirs = obj.directions.list();
    let scale = 1.0 / dirs.len() as f64;
    let terms = dirs
        .iter()
        .zip(weights)
        .map(|(&d, w)| match d {
            Direction::AToB => direction_terms(&dm_ab, d, obj, scale, Some(w)),
            Direction::BToA => direction_terms(&dm_ab.transposed(), d, obj, scale, Some(w)),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(combine(obj, &terms).0)
}

/// Objective value and exact gradient with respect to both views.
pub fn grad_dphr(batch: &EmbeddingBatch, obj: &Objective) -> Result<ObjectiveEval> {
    grad_dphr_with(batch, obj, Exec::default())
}

pub fn grad_dphr_with(
    batch: &EmbeddingBatch,
    obj: &Objective,
    exec: Exec,
) -> Result<ObjectiveEval> {
    let (x, terms) = evaluate_terms(batch, obj, exec)?;
    let (loss, l_tri, l_wtri) = combine(obj, &terms);
    let mut grads = GradPair::zeros(batch.batch_size(), batch.dim());
    for t in &terms {
        match t.direction {
            Direction::AToB => accumulate(
                x.view_a().view(),
                x.view_b().view(),
                &t.coef,
                &mut grads.grad_a,
                &mut grads.grad_b,
                exec,
            ),
            Direction::BToA => accumulate(
                x.view_b().view(),
                x.view_a().view(),
                &t.coef,
                &mut grads.grad_b,
                &mut grads.grad_a,
                exec,
            ),
        }
    }
    if obj.normalize {
        backprop_normalize(batch.view_a(), &mut grads.grad_a);
        backprop_normalize(batch.view_b(), &mut grads.grad_b);
    }
    Ok(ObjectiveEval {
        loss,
        l_tri,
        l_wtri,
        grads,
    })
}

/// Central-difference gradient `(f(x + h e) - f(x - h e)) / 2h` over every
/// entry of both views.
pub fn finite_diff_gradient<F>(f: F, batch: &EmbeddingBatch, step: f64) -> Result<GradPair>
where
    F: Fn(&EmbeddingBatch) -> f64 + Sync + Send,
{
    finite_diff_gradient_with(f, batch, step, Exec::default())
}

pub fn finite_diff_gradient_with<F>(
    f: F,
    batch: &EmbeddingBatch,
    step: f64,
    exec: Exec,
) -> Result<GradPair>
where
    F: Fn(&EmbeddingBatch) -> f64 + Sync + Send,
{
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::validation(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let (b, d) = (batch.batch_size(), batch.dim());
    let per_view = b * d;
    let values = exec.map(2 * per_view, |idx| {
        let (view, flat) = (idx / per_view, idx % per_view);
        let (r, c) = (flat / d, flat % d);
        let mut probe = batch.clone();
        let eval_at = |probe: &mut EmbeddingBatch, delta: f64| {
            let (va, vb) = probe.views_mut();
            let m = if view == 0 { va } else { vb };
            let orig = m[[r, c]];
            m[[r, c]] = orig + delta;
            let v = f(probe);
            let (va, vb) = probe.views_mut();
            let m = if view == 0 { va } else { vb };
            m[[r, c]] = orig;
            v
        };
        let plus = eval_at(&mut probe, step);
        let minus = eval_at(&mut probe, -step);
        (plus - minus) / (2.0 * step)
    });
    let grad_a = Array2::from_shape_vec((b, d), values[..per_view].to_vec()).expect("shape");
    let grad_b = Array2::from_shape_vec((b, d), values[per_view..].to_vec()).expect("shape");
    Ok(GradPair { grad_a, grad_b })
}
