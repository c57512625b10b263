//! Synthetic paired cross-view data with controllable hard negatives.
//!
//! Each class gets a prototype on the unit sphere. A fraction of the classes
//! is arranged in near-duplicate pairs whose prototypes are separated by a
//! small fixed angle, so that each member of a pair is a hard negative for
//! the other. Every view adds its own systematic offset plus per-coordinate
//! Gaussian noise to the prototype.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub dim: usize,
    /// Standard deviation of per-coordinate noise.
    pub noise_sigma: f64,
    /// Length of each view's systematic offset vector.
    pub view_offset_sigma: f64,
    /// Fraction of classes placed in near-duplicate pairs.
    pub hard_pair_fraction: f64,
    /// Angle between the prototypes of a hard pair, in radians.
    pub hard_pair_angle: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 32,
            dim: 16,
            noise_sigma: 0.25,
            view_offset_sigma: 0.1,
            hard_pair_fraction: 0.5,
            hard_pair_angle: 0.3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Number of classes that belong to a hard pair.
    pub fn paired_classes(&self) -> usize {
        (self.hard_pair_fraction * self.n_classes as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::validation(format!(
                "n_classes must be at least 2, got {}",
                self.n_classes
            )));
        }
        if self.dim == 0 {
            return Err(Error::validation("dim must be at least 1"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::validation(format!(
                "noise_sigma must be non-negative, got {}",
                self.noise_sigma
            )));
        }
        if !(self.view_offset_sigma.is_finite() && self.view_offset_sigma >= 0.0) {
            return Err(Error::validation(format!(
                "view_offset_sigma must be non-negative, got {}",
                self.view_offset_sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.hard_pair_fraction) {
            return Err(Error::validation(format!(
                "hard_pair_fraction must lie in [0, 1], got {}",
                self.hard_pair_fraction
            )));
        }
        let paired = self.paired_classes();
        if !paired.is_multiple_of(2) {
            return Err(Error::validation(format!(
                "hard_pair_fraction * n_classes rounds to {paired}, which is not an even number of classes"
            )));
        }
        if paired > 0 {
            if self.dim < 2 {
                return Err(Error::validation("hard pairs need dim >= 2"));
            }
            if !(self.hard_pair_angle > 0.0 && self.hard_pair_angle < std::f64::consts::FRAC_PI_2) {
                return Err(Error::validation(format!(
                    "hard_pair_angle must lie in (0, pi/2), got {}",
                    self.hard_pair_angle
                )));
            }
        }
        Ok(())
    }

    /// Euclidean distance between the two prototypes of a hard pair.
    pub fn hard_pair_distance(&self) -> f64 {
        2.0 * (self.hard_pair_angle / 2.0).sin()
    }
}

/// One `(view-a point, view-b point)` pair per class.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Class id of row `i`; always `i`.
    pub ids: Vec<usize>,
    pub view_a: Array2<f64>,
    pub view_b: Array2<f64>,
    pub prototypes: Array2<f64>,
    pub hard_pairs: Vec<(usize, usize)>,
}

impl Dataset {
    pub fn n_classes(&self) -> usize {
        self.ids.len()
    }

    pub fn dim(&self) -> usize {
        self.view_a.ncols()
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Array1<f64> {
    loop {
        let v: Array1<f64> =
            Array1::from_iter((0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let n = v.dot(&v).sqrt();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Unit vector orthogonal to the unit vector `u`.
fn orthogonal_unit(rng: &mut ChaCha8Rng, u: &Array1<f64>) -> Array1<f64> {
    loop {
        let v = unit_vector(rng, u.len());
        let w = &v - &(u * u.dot(&v));
        let n = w.dot(&w).sqrt();
        if n > 1e-6 {
            return w / n;
        }
    }
}

/// Draws a dataset. Fully determined by `cfg`.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let (k, d) = (cfg.n_classes, cfg.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let paired = cfg.paired_classes();
    let mut prototypes = Array2::zeros((k, d));
    let mut hard_pairs = Vec::with_capacity(paired / 2);
    let mut c = 0;
    while c < k {
        let u = unit_vector(&mut rng, d);
        prototypes.row_mut(c).assign(&u);
        if c + 1 < paired {
            let v = orthogonal_unit(&mut rng, &u);
            let twin = &u * cfg.hard_pair_angle.cos() + &v * cfg.hard_pair_angle.sin();
            prototypes.row_mut(c + 1).assign(&twin);
            hard_pairs.push((c, c + 1));
            c += 2;
        } else {
            c += 1;
        }
    }

    let offset_a = unit_vector(&mut rng, d) * cfg.view_offset_sigma;
    let offset_b = unit_vector(&mut rng, d) * cfg.view_offset_sigma;
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::validation(e.to_string()))?;

    let mut view_a = Array2::zeros((k, d));
    let mut view_b = Array2::zeros((k, d));
    for i in 0..k {
        for j in 0..d {
            view_a[[i, j]] = prototypes[[i, j]] + offset_a[j] + noise.sample(&mut rng);
        }
        for j in 0..d {
            view_b[[i, j]] = prototypes[[i, j]] + offset_b[j] + noise.sample(&mut rng);
        }
    }

    Ok(Dataset {
        ids: (0..k).collect(),
        view_a,
        view_b,
        prototypes,
        hard_pairs,
    })
}
