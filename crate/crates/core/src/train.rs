//! Plain-SGD training loop over a synthetic dataset for every loss variant.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grad::{grad_dphr, objective_value, Objective, Weighting};
use crate::her::HerParams;
use crate::palw::{PalwConfig, PalwState};
use crate::rda::WeightInterval;
use crate::synth::Dataset;
use crate::tensor::EmbeddingBatch;
use crate::triplet::Directions;

/// Loss variant used for training.
///
/// | variant     | objective                               |
/// |-------------|-----------------------------------------|
/// | `baseline`  | `L_tri`                                 |
/// | `rda-only`  | `L_tri + L_wtri` (lambda fixed at 1)    |
/// | `palw-only` | `L_tri + lambda_t * L_tri` (unit weights) |
/// | `dphr`      | `L_tri + lambda_t * L_wtri`             |
/// | `her-clip`  | `L_tri + L_her` (clipped gap weights)   |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Baseline,
    RdaOnly,
    PalwOnly,
    Dphr,
    HerClip,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Baseline,
        Variant::RdaOnly,
        Variant::PalwOnly,
        Variant::Dphr,
        Variant::HerClip,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::RdaOnly => "rda-only",
            Variant::PalwOnly => "palw-only",
            Variant::Dphr => "dphr",
            Variant::HerClip => "her-clip",
        }
    }

    pub fn uses_scheduler(self) -> bool {
        matches!(self, Variant::PalwOnly | Variant::Dphr)
    }

    fn weighting(self, interval: WeightInterval, her: HerParams) -> Weighting {
        match self {
            Variant::Baseline => Weighting::None,
            Variant::PalwOnly => Weighting::Uniform,
            Variant::RdaOnly | Variant::Dphr => Weighting::Rda(interval),
            Variant::HerClip => Weighting::Her(her),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::validation(format!("unknown variant '{s}'")))
    }
}

/// What the optimizer updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderMode {
    /// The per-class embeddings of both views are the parameters.
    FreeEmbedding,
    /// One projection matrix shared by both views, applied to the fixed data
    /// points.
    LinearEncoder,
}

impl EncoderMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EncoderMode::FreeEmbedding => "free-embedding",
            EncoderMode::LinearEncoder => "linear-encoder",
        }
    }
}

impl fmt::Display for EncoderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EncoderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "free-embedding" => Ok(EncoderMode::FreeEmbedding),
            "linear-encoder" => Ok(EncoderMode::LinearEncoder),
            other => Err(Error::validation(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: EncoderMode,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub margin: f64,
    pub weights: WeightInterval,
    pub palw: PalwConfig,
    pub her: HerParams,
    pub variant: Variant,
    pub normalize: bool,
    pub directions: Directions,
    /// Output width of the linear encoder; defaults to the data dimension.
    pub embed_dim: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: EncoderMode::FreeEmbedding,
            lr: 0.2,
            epochs: 50,
            batch_size: 8,
            margin: crate::DEFAULT_MARGIN,
            weights: WeightInterval::default(),
            palw: PalwConfig::default(),
            her: HerParams::default(),
            variant: Variant::Dphr,
            normalize: true,
            directions: Directions::Both,
            embed_dim: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_classes: usize) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::validation(format!(
                "lr must be finite and non-negative, got {}",
                self.lr
            )));
        }
        if self.epochs == 0 {
            return Err(Error::validation("epochs must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::validation(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if self.batch_size > n_classes {
            return Err(Error::validation(format!(
                "batch_size {} exceeds the number of classes {n_classes}",
                self.batch_size
            )));
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(Error::validation(format!(
                "margin must be non-negative, got {}",
                self.margin
            )));
        }
        if self.embed_dim == Some(0) {
            return Err(Error::validation("embed_dim must be at least 1"));
        }
        self.weights.validate()?;
        self.palw.validate()?;
        self.her.validate()
    }

    pub fn iterations_per_epoch(&self, n_classes: usize) -> usize {
        n_classes.div_ceil(self.batch_size)
    }
}

/// Telemetry for one iteration. Optional fields are `None` when the variant
/// does not have the corresponding term.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub t: usize,
    pub epoch: usize,
    pub l_tri: f64,
    pub l_wtri: Option<f64>,
    pub alpha: Option<f64>,
    pub alpha_hat: Option<f64>,
    pub lambda_inst: Option<f64>,
    pub lambda: Option<f64>,
    /// Norm of the gradient with respect to the trained parameters.
    pub grad_norm: f64,
    /// Value of the optimized objective.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    /// Final embeddings of every class, view a.
    pub embeddings_a: Array2<f64>,
    pub embeddings_b: Array2<f64>,
    /// Learned projection (`embed_dim x dim`) in linear-encoder mode.
    pub encoder: Option<Array2<f64>>,
    pub trace: Vec<RunRecord>,
}

enum Params {
    Free { a: Array2<f64>, b: Array2<f64> },
    Linear { w: Array2<f64> },
}

impl Params {
    fn embed(&self, ds: &Dataset, rows: &[usize]) -> (Array2<f64>, Array2<f64>) {
        match self {
            Params::Free { a, b } => (a.select(Axis(0), rows), b.select(Axis(0), rows)),
            Params::Linear { w } => (
                ds.view_a.select(Axis(0), rows).dot(&w.t()),
                ds.view_b.select(Axis(0), rows).dot(&w.t()),
            ),
        }
    }

    fn embed_all(&self, ds: &Dataset) -> (Array2<f64>, Array2<f64>) {
        match self {
            Params::Free { a, b } => (a.clone(), b.clone()),
            Params::Linear { w } => (ds.view_a.dot(&w.t()), ds.view_b.dot(&w.t())),
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            Params::Free { a, b } => a.iter().chain(b.iter()).all(|v| v.is_finite()),
            Params::Linear { w } => w.iter().all(|v| v.is_finite()),
        }
    }
}

fn diverged(iteration: usize, detail: impl Into<String>) -> Error {
    Error::Divergence {
        iteration,
        detail: detail.into(),
    }
}

/// The classes of every batch of one epoch: consecutive chunks of a random
/// permutation, the last one topped up from the start of the permutation.
fn epoch_batches(rng: &mut ChaCha8Rng, n_classes: usize, batch_size: usize) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n_classes).collect();
    perm.shuffle(rng);
    perm.chunks(batch_size)
        .map(|chunk| {
            let mut ids = chunk.to_vec();
            if ids.len() < batch_size {
                ids.extend_from_slice(&perm[..batch_size - ids.len()]);
            }
            ids
        })
        .collect()
}

/// Trains on `dataset` and returns the final embeddings plus one
/// [`RunRecord`] per iteration.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutput> {
    let k = dataset.n_classes();
    cfg.validate(k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut params = match cfg.mode {
        EncoderMode::FreeEmbedding => Params::Free {
            a: dataset.view_a.clone(),
            b: dataset.view_b.clone(),
        },
        EncoderMode::LinearEncoder => {
            let out = cfg.embed_dim.unwrap_or(dataset.dim());
            let scale = 1.0 / (out as f64).sqrt();
            let w = Array2::from_shape_simple_fn((out, dataset.dim()), || {
                rng.sample::<f64, _>(StandardNormal) * scale
            });
            Params::Linear { w }
        }
    };

    let mut scheduler = if cfg.variant.uses_scheduler() {
        Some(PalwState::from_config(&cfg.palw)?)
    } else {
        None
    };
    let weighting = cfg.variant.weighting(cfg.weights, cfg.her);
    let plain = Objective {
        margin: cfg.margin,
        directions: cfg.directions,
        weighting: Weighting::None,
        lambda: 0.0,
        normalize: cfg.normalize,
    };

    let mut trace = Vec::with_capacity(cfg.epochs * cfg.iterations_per_epoch(k));
    let mut t = 0;
    for epoch in 0..cfg.epochs {
        for ids in epoch_batches(&mut rng, k, cfg.batch_size) {
            let (va, vb) = params.embed(dataset, &ids);
            let batch =
                EmbeddingBatch::new(va, vb, ids.clone()).map_err(|e| diverged(t, e.to_string()))?;

            // config is already validated, so evaluation failures come from
            // overflowing parameters
            let l_tri = objective_value(&batch, &plain).map_err(|e| diverged(t, e.to_string()))?;
            if !l_tri.is_finite() {
                return Err(diverged(t, format!("triplet loss is {l_tri}")));
            }
            let sched = scheduler
                .as_mut()
                .map(|s| s.step(l_tri, &cfg.palw))
                .transpose()?;
            let lambda = match (cfg.variant, sched) {
                (Variant::Baseline, _) => 0.0,
                (_, Some(tr)) => tr.lambda,
                (_, None) => 1.0,
            };
            let obj = Objective {
                weighting,
                lambda,
                ..plain
            };
            let ev = grad_dphr(&batch, &obj).map_err(|e| diverged(t, e.to_string()))?;
            if !ev.loss.is_finite() || !ev.grads.norm().is_finite() {
                return Err(diverged(t, format!("objective is {}", ev.loss)));
            }

            let grad_norm = match &mut params {
                Params::Free { a, b } => {
                    for (r, &id) in ids.iter().enumerate() {
                        a.row_mut(id).scaled_add(-cfg.lr, &ev.grads.grad_a.row(r));
                        b.row_mut(id).scaled_add(-cfg.lr, &ev.grads.grad_b.row(r));
                    }
                    ev.grads.norm()
                }
                Params::Linear { w } => {
                    let xa = dataset.view_a.select(Axis(0), &ids);
                    let xb = dataset.view_b.select(Axis(0), &ids);
                    let gw = ev.grads.grad_a.t().dot(&xa) + ev.grads.grad_b.t().dot(&xb);
                    w.scaled_add(-cfg.lr, &gw);
                    gw.iter().map(|g| g * g).sum::<f64>().sqrt()
                }
            };
            if !params.is_finite() {
                return Err(diverged(t, "parameters became non-finite"));
            }

            trace.push(RunRecord {
                t,
                epoch,
                l_tri: ev.l_tri,
                l_wtri: ev.l_wtri,
                alpha: sched.map(|s| s.alpha),
                alpha_hat: sched.map(|s| s.alpha_hat),
                lambda_inst: sched.map(|s| s.lambda_inst),
                lambda: sched.map(|s| s.lambda),
                grad_norm,
                objective: ev.loss,
            });
            t += 1;
        }
    }

    let (embeddings_a, embeddings_b) = params.embed_all(dataset);
    let encoder = match params {
        Params::Linear { w } => Some(w),
        Params::Free { .. } => None,
    };
    Ok(TrainOutput {
        embeddings_a,
        embeddings_b,
        encoder,
        trace,
    })
}
