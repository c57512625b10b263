//! Gap-based negative weighting with a hard clip, kept as a comparison
//! baseline for the ratio-based weights in [`crate::rda`].
//!
//! `w = min(exp(-(d(q,n) - d(q,p)) / temperature), clip)`. Every negative
//! whose gap is below `-temperature * ln(clip)` receives the same weight.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::triplet::TripletGeometry;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HerParams {
    pub temperature: f64,
    pub clip: f64,
}

impl Default for HerParams {
    fn default() -> Self {
        Self {
            temperature: 0.3,
            clip: 2.0,
        }
    }
}

impl HerParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::validation(format!(
                "her temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.clip.is_finite() && self.clip > 0.0) {
            return Err(Error::validation(format!(
                "her clip must be positive, got {}",
                self.clip
            )));
        }
        Ok(())
    }
}

pub fn gap_weights(tg: &TripletGeometry, params: HerParams) -> Result<Array2<f64>> {
    params.validate()?;
    Ok(Array2::from_shape_fn(tg.neg_dist.dim(), |(i, k)| {
        let gap = tg.neg_dist[[i, k]] - tg.pos_dist[i];
        (-gap / params.temperature).exp().min(params.clip)
    }))
}
