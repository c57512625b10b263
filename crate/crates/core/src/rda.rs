//! Ratio-based difficulty weighting of individual negatives.
//!
//! A negative's hardness is the share of the positive distance in the sum of
//! positive and negative distances, `h = d(q,p) / (d(q,p) + d(q,n))`. It lies
//! in `[0, 1]`, is invariant to a global rescaling of distances, and grows as
//! the negative moves closer to the query than the positive. Hardness is
//! mapped linearly into a weight interval and used to reweight the hinge
//! losses.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::triplet::TripletGeometry;

/// Denominators below this are treated as "both distances vanish".
pub const DEGENERATE_EPS: f64 = 1e-12;

/// Hardness assigned when positive and negative both coincide with the query.
pub const DEGENERATE_SCORE: f64 = 0.5;

/// Closed interval `[lo, hi]` that hardness scores are mapped onto.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightInterval {
    pub lo: f64,
    pub hi: f64,
}

impl Default for WeightInterval {
    fn default() -> Self {
        Self { lo: 0.5, hi: 2.0 }
    }
}

impl WeightInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let w = Self { lo, hi };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lo.is_finite() || !self.hi.is_finite() || self.lo > self.hi {
            return Err(Error::validation(format!(
                "weight interval must satisfy lo <= hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn contains(&self, w: f64) -> bool {
        self.lo <= w && w <= self.hi
    }
}

/// Linear map of `x in [0, 1]` onto `[lo, hi]`.
///
/// The result is clamped to `[lo, hi]` so floating-point rounding can never
/// leave the interval.
pub fn linear_scale(x: f64, lo: f64, hi: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::validation(format!(
            "scale input must lie in [0, 1], got {x}"
        )));
    }
    if lo.is_nan() || hi.is_nan() || lo > hi {
        return Err(Error::validation(format!(
            "scale bounds must satisfy lo <= hi, got [{lo}, {hi}]"
        )));
    }
    Ok((lo + (hi - lo) * x).clamp(lo, hi))
}

/// Hardness of a single negative.
#[inline]
pub fn hardness(pos: f64, neg: f64) -> f64 {
    let denom = pos + neg;
    if denom < DEGENERATE_EPS {
        DEGENERATE_SCORE
    } else {
        (pos / denom).clamp(0.0, 1.0)
    }
}

/// Hardness of every negative, shaped like `tg.losses`.
pub fn hardness_scores(tg: &TripletGeometry) -> Array2<f64> {
    Array2::from_shape_fn(tg.neg_dist.dim(), |(i, k)| {
        hardness(tg.pos_dist[i], tg.neg_dist[[i, k]])
    })
}

/// Hardness scores with their linearly mapped weights.
#[derive(Debug, Clone, PartialEq)]
pub struct HardnessWeights {
    pub scores: Array2<f64>,
    pub weights: Array2<f64>,
    pub w_min: f64,
    pub w_max: f64,
}

impl HardnessWeights {
    pub fn from_geometry(tg: &TripletGeometry, interval: WeightInterval) -> Result<Self> {
        interval.validate()?;
        let scores = hardness_scores(tg);
        let weights = scores.mapv(|h| {
            (interval.lo + (interval.hi - interval.lo) * h).clamp(interval.lo, interval.hi)
        });
        Ok(Self {
            scores,
            weights,
            w_min: interval.lo,
            w_max: interval.hi,
        })
    }
}

/// `(1 / (B(B-1))) * sum w_ik * l_ik`.
pub fn weighted_mean(losses: &Array2<f64>, weights: &Array2<f64>) -> Result<f64> {
    if losses.dim() != weights.dim() {
        return Err(Error::shape(losses.dim(), weights.dim()));
    }
    let b = losses.nrows();
    let total: f64 = losses.iter().zip(weights.iter()).map(|(l, w)| l * w).sum();
    Ok(total / (b * (b - 1)) as f64)
}

/// Hardness-weighted triplet loss.
pub fn weighted_triplet_loss(tg: &TripletGeometry, hw: &HardnessWeights) -> Result<f64> {
    weighted_mean(&tg.losses, &hw.weights)
}
