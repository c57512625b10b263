//! Hardness-aware triplet reweighting for metric learning.
//!
//! The crate implements a dual-level reweighting objective:
//!
//! * a per-negative weight derived from the ratio `d(q,p) / (d(q,p) + d(q,n))`
//!   and mapped linearly into `[w_min, w_max]` ([`rda`]);
//! * a batch-level coefficient driven by a moving average of recent
//!   unweighted triplet losses, normalized, power-curved and EMA-smoothed
//!   ([`palw`]).
//!
//! The combined objective is `L_tri + lambda * L_wtri`. [`grad`] provides its
//! closed-form gradient plus a central-difference oracle, [`synth`] and
//! [`train`] a deterministic synthetic benchmark, and [`eval`] Recall@K / AP
//! retrieval metrics.
//!
//! Data-parallel inner loops go through [`par`]; with the `parallel` feature
//! disabled every kernel runs sequentially and produces identical results.

pub mod error;
pub mod eval;
pub mod grad;
pub mod her;
pub mod palw;
pub mod par;
pub mod rda;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod triplet;

pub use error::{Error, Result};
pub use eval::{evaluate, RetrievalResult};
pub use grad::{
    finite_diff_gradient, frozen_objective_value, grad_dphr, GradPair, Objective, ObjectiveEval,
    Weighting,
};
pub use her::HerParams;
pub use palw::{dphr_loss, PalwConfig, PalwState, PalwTrace};
pub use par::Exec;
pub use rda::{HardnessWeights, WeightInterval};
pub use synth::{generate_dataset, Dataset, SynthConfig};
pub use tensor::{l2_normalize, pairwise_sq_euclidean, DistanceMatrix, EmbeddingBatch};
pub use train::{train, EncoderMode, RunRecord, TrainConfig, TrainOutput, Variant};
pub use triplet::{
    bidirectional_triplet_loss, build_triplets, mean_triplet_loss, Direction, Directions,
    TripletGeometry,
};

/// Default triplet margin `m`.
pub const DEFAULT_MARGIN: f64 = 0.3;
