//! Progress-driven batch-level loss coefficient.
//!
//! Each iteration the scheduler
//!
//! 1. averages the unweighted triplet loss over the last `min(window, t+1)`
//!    iterations (`alpha`),
//! 2. maps it onto `[0, 1]` using `[sigma_min, sigma_max]` (`alpha_hat`),
//! 3. computes `lambda_inst = delta_min + (delta_max - delta_min) * (1 - alpha_hat)^gamma`,
//! 4. smooths it with an EMA of factor `beta` (`lambda`).
//!
//! High recent loss keeps `lambda` near `delta_min`; as the loss falls below
//! `sigma_min` it approaches `delta_max`.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::rda::linear_scale;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PalwConfig {
    /// Maximum moving-average window, in iterations.
    pub window: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    /// Transition-rate exponent.
    pub gamma: f64,
    /// EMA smoothing factor, in `[0, 1)`.
    pub beta: f64,
}

impl Default for PalwConfig {
    fn default() -> Self {
        Self {
            window: 16,
            sigma_min: 0.8,
            sigma_max: 1.5,
            delta_min: 0.2,
            delta_max: 1.0,
            gamma: 1.5,
            beta: 0.9,
        }
    }
}

impl PalwConfig {
    pub fn validate(&self) -> Result<()> {
        let all_finite = [
            self.sigma_min,
            self.sigma_max,
            self.delta_min,
            self.delta_max,
            self.gamma,
            self.beta,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::validation("scheduler parameters must be finite"));
        }
        if self.window == 0 {
            return Err(Error::validation("scheduler window must be at least 1"));
        }
        if self.sigma_min >= self.sigma_max {
            return Err(Error::validation(format!(
                "sigma_min ({}) must be below sigma_max ({})",
                self.sigma_min, self.sigma_max
            )));
        }
        if self.delta_min > self.delta_max {
            return Err(Error::validation(format!(
                "delta_min ({}) must not exceed delta_max ({})",
                self.delta_min, self.delta_max
            )));
        }
        if self.gamma <= 0.0 {
            return Err(Error::validation(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::validation(format!(
                "beta must lie in [0, 1), got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// Intermediates of one scheduler step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PalwTrace {
    /// Zero-based iteration index of this step.
    pub t: usize,
    pub alpha: f64,
    pub alpha_hat: f64,
    pub lambda_inst: f64,
    pub lambda: f64,
}

/// Mutable scheduler state for one training run. Not meant to be shared for
/// concurrent stepping.
#[derive(Debug, Clone, PartialEq)]
pub struct PalwState {
    window: usize,
    history: VecDeque<f64>,
    t: usize,
    lambda_prev: Option<f64>,
}

impl PalwState {
    pub fn new(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::validation("scheduler window must be at least 1"));
        }
        Ok(Self {
            window,
            history: VecDeque::with_capacity(window),
            t: 0,
            lambda_prev: None,
        })
    }

    pub fn from_config(cfg: &PalwConfig) -> Result<Self> {
        cfg.validate()?;
        Self::new(cfg.window)
    }

    /// Number of completed steps.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn history(&self) -> &VecDeque<f64> {
        &self.history
    }

    pub fn lambda_prev(&self) -> Option<f64> {
        self.lambda_prev
    }

    /// Pushes `loss` into the window and returns the mean of the stored losses.
    pub fn progress_signal(&mut self, loss: f64) -> Result<f64> {
        if !loss.is_finite() || loss < 0.0 {
            return Err(Error::validation(format!(
                "loss fed to the scheduler must be finite and non-negative, got {loss}"
            )));
        }
        if self.history.len() == self.window {
            self.history.pop_front();
        }
        self.history.push_back(loss);
        // incremental mean: exact for constant streams
        let mean = self
            .history
            .iter()
            .enumerate()
            .fold(0.0, |m, (i, x)| m + (x - m) / (i + 1) as f64);
        Ok(mean)
    }

    /// EMA of the instantaneous coefficient. The first call adopts
    /// `lambda_inst` as is.
    pub fn ema_update(&mut self, lambda_inst: f64, cfg: &PalwConfig) -> Result<f64> {
        if !(cfg.delta_min <= lambda_inst && lambda_inst <= cfg.delta_max) {
            return Err(Error::validation(format!(
                "instantaneous coefficient {lambda_inst} outside [{}, {}]",
                cfg.delta_min, cfg.delta_max
            )));
        }
        let lambda = match self.lambda_prev {
            None => lambda_inst,
            Some(prev) => (cfg.beta * prev + (1.0 - cfg.beta) * lambda_inst)
                .clamp(cfg.delta_min, cfg.delta_max),
        };
        self.lambda_prev = Some(lambda);
        Ok(lambda)
    }

    /// Runs one full scheduler update for the current iteration's unweighted
    /// loss and advances `t`. On error the state is left untouched.
    pub fn step(&mut self, loss: f64, cfg: &PalwConfig) -> Result<PalwTrace> {
        cfg.validate()?;
        if cfg.window != self.window {
            return Err(Error::validation(format!(
                "config window {} does not match state window {}",
                cfg.window, self.window
            )));
        }
        let t = self.t;
        let alpha = self.progress_signal(loss)?;
        let alpha_hat = normalize_progress(alpha, cfg);
        let lambda_inst = instantaneous_coefficient(alpha_hat, cfg)?;
        let lambda = self.ema_update(lambda_inst, cfg)?;
        self.t += 1;
        Ok(PalwTrace {
            t,
            alpha,
            alpha_hat,
            lambda_inst,
            lambda,
        })
    }
}

/// `clamp((alpha - sigma_min) / (sigma_max - sigma_min), 0, 1)`.
pub fn normalize_progress(alpha: f64, cfg: &PalwConfig) -> f64 {
    ((alpha - cfg.sigma_min) / (cfg.sigma_max - cfg.sigma_min)).clamp(0.0, 1.0)
}

pub fn instantaneous_coefficient(alpha_hat: f64, cfg: &PalwConfig) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha_hat) {
        return Err(Error::validation(format!(
            "normalized progress must lie in [0, 1], got {alpha_hat}"
        )));
    }
    linear_scale(
        (1.0 - alpha_hat).powf(cfg.gamma),
        cfg.delta_min,
        cfg.delta_max,
    )
}

/// Combined objective `l_tri + lambda * l_wtri`.
pub fn dphr_loss(l_tri: f64, l_wtri: f64, lambda: f64) -> f64 {
    l_tri + lambda * l_wtri
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> PalwConfig {
        PalwConfig::default()
    }

    #[test]
    fn defaults() {
        let c = cfg();
        assert_eq!((c.sigma_min, c.sigma_max), (0.8, 1.5));
        assert_eq!((c.delta_min, c.delta_max), (0.2, 1.0));
        assert_eq!(c.gamma, 1.5);
        assert_eq!(c.beta, 0.9);
        assert_eq!(c.window, 16);
    }

    #[test]
    fn progress_signal_examples() {
        let mut s = PalwState::new(16).unwrap();
        assert_eq!(s.progress_signal(1.2).unwrap(), 1.2);

        let mut s = PalwState::new(3).unwrap();
        let mut last = 0.0;
        for l in [1.0, 2.0, 3.0, 4.0] {
            last = s.progress_signal(l).unwrap();
        }
        assert_eq!(last, 3.0);
        assert_eq!(s.history().len(), 3);

        let mut s = PalwState::new(4).unwrap();
        for _ in 0..10 {
            assert_eq!(s.progress_signal(0.7).unwrap(), 0.7);
        }
    }

    #[test]
    fn progress_signal_rejects_non_finite_without_mutation() {
        let mut s = PalwState::new(3).unwrap();
        s.progress_signal(1.0).unwrap();
        let before = s.clone();
        assert!(s.progress_signal(f64::NAN).is_err());
        assert!(s.progress_signal(f64::INFINITY).is_err());
        assert_eq!(s, before);
    }

    #[test]
    fn normalize_examples() {
        let c = cfg();
        assert_eq!(normalize_progress(0.8, &c), 0.0);
        assert_eq!(normalize_progress(1.5, &c), 1.0);
        assert_eq!(normalize_progress(2.0, &c), 1.0);
        assert_eq!(normalize_progress(0.1, &c), 0.0);
        assert!((normalize_progress(1.15, &c) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn coefficient_examples() {
        let c = cfg();
        assert_eq!(instantaneous_coefficient(1.0, &c).unwrap(), 0.2);
        assert_eq!(instantaneous_coefficient(0.0, &c).unwrap(), 1.0);
        let mid = instantaneous_coefficient(0.5, &c).unwrap();
        assert!((mid - 0.482_842_712_474_619).abs() < 1e-5);
        let lin = PalwConfig {
            gamma: 1.0,
            delta_min: 0.0,
            delta_max: 1.0,
            ..c
        };
        for x in [0.0, 0.125, 0.5, 0.9, 1.0] {
            assert!((instantaneous_coefficient(x, &lin).unwrap() - (1.0 - x)).abs() < 1e-15);
        }
        assert!(instantaneous_coefficient(1.5, &c).is_err());
    }

    #[test]
    fn ema_examples() {
        let c = cfg();
        let mut s = PalwState::new(4).unwrap();
        assert_eq!(s.ema_update(0.3, &c).unwrap(), 0.3);

        let mut s = PalwState::new(4).unwrap();
        s.ema_update(0.2, &c).unwrap();
        assert!((s.ema_update(1.0, &c).unwrap() - 0.28).abs() < 1e-12);

        let mut s = PalwState::new(4).unwrap();
        let l0 = s.ema_update(0.2, &c).unwrap();
        let target = 0.9;
        for n in 1..=60 {
            let l = s.ema_update(target, &c).unwrap();
            assert!((l - target).abs() <= (l0 - target).abs() * c.beta.powi(n) + 1e-12);
        }
        assert!(s.ema_update(1.5, &c).is_err());
    }

    #[test]
    fn combined_loss_examples() {
        assert_eq!(dphr_loss(0.4, 0.9, 0.0), 0.4);
        assert!((dphr_loss(0.25, 0.125, 0.28) - 0.285).abs() < 1e-12);
        assert_eq!(dphr_loss(0.25, 0.25, 1.0), 0.5);
    }

    #[test]
    fn step_constant_high_loss_pins_lambda_low() {
        let c = cfg();
        let mut s = PalwState::from_config(&c).unwrap();
        for t in 0..3 {
            let tr = s.step(2.0, &c).unwrap();
            assert_eq!(tr.t, t);
            assert_eq!(tr.alpha_hat, 1.0);
            assert_eq!(tr.lambda, 0.2);
        }
        assert_eq!(s.t(), 3);
    }

    #[test]
    fn step_matches_hand_chaining() {
        let c = cfg();
        let mut s = PalwState::from_config(&c).unwrap();
        let tr = s.step(1.0, &c).unwrap();
        let alpha_hat = (1.0 - 0.8) / 0.7;
        let inst = 0.2 + 0.8 * (1.0f64 - alpha_hat).powf(1.5);
        assert_eq!(tr.alpha, 1.0);
        assert!((tr.alpha_hat - alpha_hat).abs() < 1e-15);
        assert!((tr.lambda_inst - inst).abs() < 1e-15);
        assert_eq!(tr.lambda, tr.lambda_inst);
    }

    #[test]
    fn descending_stream_gives_non_decreasing_lambda() {
        let c = cfg();
        let mut s = PalwState::from_config(&c).unwrap();
        let n = 200;
        let lambdas: Vec<f64> = (0..n)
            .map(|i| {
                s.step(2.0 * (1.0 - i as f64 / (n - 1) as f64), &c)
                    .unwrap()
                    .lambda
            })
            .collect();
        for w in lambdas.windows(2) {
            assert!(w[1] >= w[0]);
        }
        assert!(*lambdas.last().unwrap() > 0.9);
    }

    #[test]
    fn invalid_config() {
        let bad = [
            PalwConfig { window: 0, ..cfg() },
            PalwConfig {
                sigma_min: 1.5,
                ..cfg()
            },
            PalwConfig {
                delta_min: 1.1,
                ..cfg()
            },
            PalwConfig {
                gamma: 0.0,
                ..cfg()
            },
            PalwConfig { beta: 1.0, ..cfg() },
        ];
        for b in bad {
            assert!(b.validate().is_err(), "{b:?}");
        }
        let mut s = PalwState::new(16).unwrap();
        assert!(s.step(1.0, &PalwConfig { window: 8, ..cfg() }).is_err());
        assert_eq!(s.t(), 0);
    }
}
