//! In-batch triplet construction and the max-margin triplet loss.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::tensor::{pairwise_sq_euclidean, DistanceMatrix, EmbeddingBatch};

/// Which view supplies the queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    /// Queries from view a, gallery (positives and negatives) from view b.
    AToB,
    BToA,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::AToB => "a_to_b",
            Direction::BToA => "b_to_a",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Query directions included in the training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Directions {
    /// Both directions, averaged.
    #[default]
    Both,
    Only(Direction),
}

impl Directions {
    pub fn list(self) -> &'static [Direction] {
        match self {
            Directions::Both => &[Direction::AToB, Direction::BToA],
            Directions::Only(Direction::AToB) => &[Direction::AToB],
            Directions::Only(Direction::BToA) => &[Direction::BToA],
        }
    }
}

impl FromStr for Directions {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(Directions::Both),
            "a_to_b" => Ok(Directions::Only(Direction::AToB)),
            "b_to_a" => Ok(Directions::Only(Direction::BToA)),
            other => Err(Error::validation(format!(
                "unknown direction set '{other}'"
            ))),
        }
    }
}

impl fmt::Display for Directions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Directions::Both => f.write_str("both"),
            Directions::Only(d) => d.fmt(f),
        }
    }
}

/// Per-(query, negative) distances and hinge losses for one direction.
///
/// Row `i` of `neg_dist` / `losses` lists the negatives of query `i`, i.e. the
/// gallery rows `j != i` in ascending `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletGeometry {
    pub pos_dist: Array1<f64>,
    pub neg_dist: Array2<f64>,
    pub margin: f64,
    pub losses: Array2<f64>,
}

impl TripletGeometry {
    pub fn batch_size(&self) -> usize {
        self.pos_dist.len()
    }

    /// Gallery row index of the `k`-th negative of query `i`.
    #[inline]
    pub fn negative_index(i: usize, k: usize) -> usize {
        if k < i {
            k
        } else {
            k + 1
        }
    }

    /// Hinge argument `d(q,p) - d(q,n) + m` before clamping.
    pub fn hinge_argument(&self, i: usize, k: usize) -> f64 {
        self.pos_dist[i] - self.neg_dist[[i, k]] + self.margin
    }
}

#[inline]
pub(crate) fn hinge(pos: f64, neg: f64, margin: f64) -> f64 {
    (pos - neg + margin).max(0.0)
}

/// Splits a distance matrix into positives (diagonal) and in-batch negatives
/// and evaluates the hinge for every triplet.
pub fn build_triplets(dm: &DistanceMatrix, margin: f64) -> Result<TripletGeometry> {
    let b = dm.size();
    if b < 2 {
        return Err(Error::BatchTooSmall(b));
    }
    if !(margin.is_finite() && margin >= 0.0) {
        return Err(Error::validation(format!(
            "margin must be finite and non-negative, got {margin}"
        )));
    }
    let v = dm.values();
    let pos_dist = Array1::from_iter((0..b).map(|i| v[[i, i]]));
    let neg_dist = Array2::from_shape_fn((b, b - 1), |(i, k)| {
        v[[i, TripletGeometry::negative_index(i, k)]]
    });
    let losses = Array2::from_shape_fn((b, b - 1), |(i, k)| {
        hinge(pos_dist[i], neg_dist[[i, k]], margin)
    });
    Ok(TripletGeometry {
        pos_dist,
        neg_dist,
        margin,
        losses,
    })
}

/// Mean hinge loss over all `B(B-1)` triplets.
pub fn mean_triplet_loss(tg: &TripletGeometry) -> f64 {
    let b = tg.batch_size();
    tg.losses.sum() / (b * (b - 1)) as f64
}

/// Distance matrix with queries taken from the given view.
pub fn directional_distances(
    batch: &EmbeddingBatch,
    direction: Direction,
) -> Result<DistanceMatrix> {
    match direction {
        Direction::AToB => pairwise_sq_euclidean(batch.view_a(), batch.view_b()),
        Direction::BToA => pairwise_sq_euclidean(batch.view_b(), batch.view_a()),
    }
}

/// Triplet loss averaged over the selected query directions.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionalLoss {
    pub loss: f64,
    pub geometries: Vec<(Direction, TripletGeometry)>,
}

impl DirectionalLoss {
    pub fn geometry(&self, direction: Direction) -> Option<&TripletGeometry> {
        self.geometries
            .iter()
            .find(|(d, _)| *d == direction)
            .map(|(_, g)| g)
    }
}

/// Evaluates the mean triplet loss with each selected view as the query side
/// and returns the arithmetic mean of the per-direction losses.
pub fn bidirectional_triplet_loss(
    batch: &EmbeddingBatch,
    margin: f64,
    directions: Directions,
) -> Result<DirectionalLoss> {
    let dm_ab = pairwise_sq_euclidean(batch.view_a(), batch.view_b())?;
    let mut geometries = Vec::with_capacity(2);
    for &dir in directions.list() {
        let dm = match dir {
            Direction::AToB => build_triplets(&dm_ab, margin)?,
            Direction::BToA => build_triplets(&dm_ab.transposed(), margin)?,
        };
        geometries.push((dir, dm));
    }
    let loss = geometries
        .iter()
        .map(|(_, g)| mean_triplet_loss(g))
        .sum::<f64>()
        / geometries.len() as f64;
    Ok(DirectionalLoss { loss, geometries })
}
