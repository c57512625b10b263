//! Dense primitives: paired embedding batches, squared Euclidean distance
//! matrices and row normalization.

use std::collections::HashSet;

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::par::Exec;

/// Row norms below this are treated as zero.
pub const NORM_EPS: f64 = 1e-12;

/// Paired cross-view embeddings for one mini-batch. Row `i` of `view_b` is
/// the positive for row `i` of `view_a`; every other row is a negative.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    view_a: Array2<f64>,
    view_b: Array2<f64>,
    ids: Vec<usize>,
}

impl EmbeddingBatch {
    pub fn new(view_a: Array2<f64>, view_b: Array2<f64>, ids: Vec<usize>) -> Result<Self> {
        if view_a.dim() != view_b.dim() {
            return Err(Error::shape(view_a.dim(), view_b.dim()));
        }
        let (b, d) = view_a.dim();
        if b < 2 {
            return Err(Error::BatchTooSmall(b));
        }
        if d == 0 {
            return Err(Error::validation("embedding dimension must be at least 1"));
        }
        if ids.len() != b {
            return Err(Error::Dimension {
                expected: format!("{b} ids"),
                got: format!("{} ids", ids.len()),
            });
        }
        let mut seen = HashSet::with_capacity(b);
        if let Some(dup) = ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::validation(format!(
                "duplicate class id {dup} in batch"
            )));
        }
        check_finite(view_a.view(), "view_a")?;
        check_finite(view_b.view(), "view_b")?;
        Ok(Self {
            view_a,
            view_b,
            ids,
        })
    }

    /// Batch with ids `0..B`.
    pub fn from_views(view_a: Array2<f64>, view_b: Array2<f64>) -> Result<Self> {
        let b = view_a.nrows();
        Self::new(view_a, view_b, (0..b).collect())
    }

    pub fn view_a(&self) -> &Array2<f64> {
        &self.view_a
    }

    pub fn view_b(&self) -> &Array2<f64> {
        &self.view_b
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn batch_size(&self) -> usize {
        self.view_a.nrows()
    }

    pub fn dim(&self) -> usize {
        self.view_a.ncols()
    }

    /// Mutable access for perturbation-based checks. Callers must keep the
    /// entries finite.
    pub fn views_mut(&mut self) -> (&mut Array2<f64>, &mut Array2<f64>) {
        (&mut self.view_a, &mut self.view_b)
    }

    /// Same batch with both views row-normalized.
    pub fn normalized(&self) -> Self {
        Self {
            view_a: l2_normalize(&self.view_a),
            view_b: l2_normalize(&self.view_b),
            ids: self.ids.clone(),
        }
    }
}

/// Square matrix of squared Euclidean distances; entry `(i, j)` is the
/// distance between query row `i` and gallery row `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    values: Array2<f64>,
}

impl DistanceMatrix {
    /// Wraps precomputed distances. Entries must be finite and non-negative.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::validation(format!(
                "distance matrix must be square, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::validation(
                "distances must be finite and non-negative",
            ));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn size(&self) -> usize {
        self.values.nrows()
    }

    pub fn transposed(&self) -> Self {
        Self {
            values: self.values.t().to_owned(),
        }
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }
}

pub(crate) fn check_finite(a: ArrayView2<'_, f64>, what: &str) -> Result<()> {
    if let Some(pos) = a.iter().position(|v| !v.is_finite()) {
        let (r, c) = (pos / a.ncols().max(1), pos % a.ncols().max(1));
        return Err(Error::validation(format!(
            "{what} has non-finite entry at ({r}, {c})"
        )));
    }
    Ok(())
}

/// Squared Euclidean distances between every row of `a` and every row of `b`.
/// Both inputs must be `B x D`.
pub fn pairwise_sq_euclidean(a: &Array2<f64>, b: &Array2<f64>) -> Result<DistanceMatrix> {
    if a.dim() != b.dim() {
        return Err(Error::shape(a.dim(), b.dim()));
    }
    let values = cross_sq_euclidean(a.view(), b.view(), Exec::default())?;
    Ok(DistanceMatrix { values })
}

/// Rectangular variant of [`pairwise_sq_euclidean`]: `a` is `Q x D`, `b` is
/// `G x D`, result is `Q x G`.
///
/// Each entry is accumulated as `sum_k (a_ik - b_jk)^2` in coordinate order,
/// which is non-negative without clamping and exactly zero for identical rows.
pub fn cross_sq_euclidean(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    exec: Exec,
) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::Dimension {
            expected: format!("{} columns", a.ncols()),
            got: format!("{} columns", b.ncols()),
        });
    }
    check_finite(a, "left operand")?;
    check_finite(b, "right operand")?;
    let (q, g) = (a.nrows(), b.nrows());
    let rows = exec.map(q, |i| {
        let ai = a.row(i);
        b.outer_iter()
            .map(|bj| {
                let s: f64 = ai
                    .iter()
                    .zip(bj.iter())
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                s.max(0.0)
            })
            .collect::<Vec<f64>>()
    });
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Array2::from_shape_vec((q, g), flat).expect("row lengths match gallery size"))
}

/// Scales every row to unit Euclidean norm. Rows with norm below
/// [`NORM_EPS`] are returned unchanged.
pub fn l2_normalize(a: &Array2<f64>) -> Array2<f64> {
    let mut out = a.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let norm = row.dot(&row).sqrt();
        if norm >= NORM_EPS {
            row.mapv_inplace(|v| v / norm);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identical_points_have_zero_distance() {
        let d = pairwise_sq_euclidean(&array![[0.0, 0.0]], &array![[0.0, 0.0]]).unwrap();
        assert_eq!(d.values(), &array![[0.0]]);
    }

    #[test]
    fn hand_expanded_two_by_two() {
        let a = array![[1.0, 0.0], [0.0, 0.0]];
        let b = array![[0.0, 0.0], [0.0, 1.0]];
        let d = pairwise_sq_euclidean(&a, &b).unwrap();
        assert_eq!(d.values(), &array![[1.0, 2.0], [0.0, 1.0]]);
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let a = Array2::<f64>::zeros((2, 3));
        let b = Array2::<f64>::zeros((2, 4));
        assert!(matches!(
            pairwise_sq_euclidean(&a, &b),
            Err(Error::Dimension { .. })
        ));
        let c = Array2::<f64>::zeros((3, 3));
        assert!(matches!(
            pairwise_sq_euclidean(&a, &c),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn non_finite_is_validation_error() {
        let a = array![[f64::NAN, 0.0]];
        let b = array![[0.0, 0.0]];
        assert!(matches!(
            pairwise_sq_euclidean(&a, &b),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn normalize_examples() {
        let n = l2_normalize(&array![[3.0, 4.0]]);
        assert!((n[[0, 0]] - 0.6).abs() < 1e-15 && (n[[0, 1]] - 0.8).abs() < 1e-15);
        assert_eq!(l2_normalize(&array![[0.0, 0.0]]), array![[0.0, 0.0]]);
        let tiny = array![[1e-13, 0.0]];
        assert_eq!(l2_normalize(&tiny), tiny);
    }

    #[test]
    fn batch_invariants() {
        let z = Array2::<f64>::zeros((2, 2));
        assert!(EmbeddingBatch::new(z.clone(), z.clone(), vec![1, 1]).is_err());
        assert!(matches!(
            EmbeddingBatch::from_views(Array2::zeros((1, 2)), Array2::zeros((1, 2))),
            Err(Error::BatchTooSmall(1))
        ));
        assert!(EmbeddingBatch::from_views(Array2::zeros((2, 0)), Array2::zeros((2, 0))).is_err());
        assert!(EmbeddingBatch::new(z.clone(), z, vec![4, 9]).is_ok());
    }

    #[test]
    fn distance_matrix_rejects_negative() {
        assert!(DistanceMatrix::new(array![[0.0, -1.0], [0.0, 0.0]]).is_err());
        assert!(DistanceMatrix::new(Array2::zeros((2, 3))).is_err());
    }
}
