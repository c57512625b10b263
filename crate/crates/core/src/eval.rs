//! Recall@K and average precision for cross-view retrieval.

use std::collections::{BTreeMap, HashSet};

use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::par::Exec;
use crate::tensor::cross_sq_euclidean;
use crate::triplet::Direction;

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalResult {
    pub direction: Direction,
    /// Percentage of queries with a relevant item in the top K.
    pub recall_at: BTreeMap<usize, f64>,
    /// Mean average precision, in percent.
    pub ap: f64,
    /// 1-based rank of the first relevant gallery item, per query.
    pub per_query_ranks: Vec<usize>,
}

impl RetrievalResult {
    pub fn recall(&self, k: usize) -> Option<f64> {
        self.recall_at.get(&k).copied()
    }
}

/// Gallery indices ordered by ascending distance, ties by ascending index.
pub fn ranking(distances: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&x, &y| distances[x].total_cmp(&distances[y]).then(x.cmp(&y)));
    order
}

/// Average precision of one ranked list: mean of precision@rank over the
/// ranks of the relevant items.
pub fn average_precision(relevant_in_order: impl IntoIterator<Item = bool>) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (pos, rel) in relevant_in_order.into_iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (pos + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

/// Ranks `gallery` for every query by squared Euclidean distance and scores
/// the rankings. A gallery item is relevant when its id equals the query id.
pub fn evaluate(
    queries: ArrayView2<'_, f64>,
    gallery: ArrayView2<'_, f64>,
    query_ids: &[usize],
    gallery_ids: &[usize],
    ks: &[usize],
    direction: Direction,
) -> Result<RetrievalResult> {
    evaluate_with(
        queries,
        gallery,
        query_ids,
        gallery_ids,
        ks,
        direction,
        Exec::default(),
    )
}

pub fn evaluate_with(
    queries: ArrayView2<'_, f64>,
    gallery: ArrayView2<'_, f64>,
    query_ids: &[usize],
    gallery_ids: &[usize],
    ks: &[usize],
    direction: Direction,
    exec: Exec,
) -> Result<RetrievalResult> {
    if queries.nrows() == 0 || gallery.nrows() == 0 {
        return Err(Error::validation(
            "query and gallery sets must be non-empty",
        ));
    }
    if queries.nrows() != query_ids.len() || gallery.nrows() != gallery_ids.len() {
        return Err(Error::Dimension {
            expected: format!(
                "{} query ids and {} gallery ids",
                queries.nrows(),
                gallery.nrows()
            ),
            got: format!("{} and {}", query_ids.len(), gallery_ids.len()),
        });
    }
    if ks.contains(&0) {
        return Err(Error::validation("recall cutoffs must be at least 1"));
    }
    let available: HashSet<usize> = gallery_ids.iter().copied().collect();
    let missing: Vec<String> = query_ids
        .iter()
        .filter(|id| !available.contains(id))
        .map(|id| id.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::validation(format!(
            "queries without a relevant gallery item: {}",
            missing.join(", ")
        )));
    }

    let dist = cross_sq_euclidean(queries, gallery, exec)?;
    let per_query = exec.map(queries.nrows(), |q| {
        let row = dist.row(q).to_vec();
        let order = ranking(&row);
        let rel = order.iter().map(|&g| gallery_ids[g] == query_ids[q]);
        let first = rel.clone().position(|r| r).expect("relevant item exists") + 1;
        (first, average_precision(rel))
    });

    let n = per_query.len() as f64;
    let per_query_ranks: Vec<usize> = per_query.iter().map(|(r, _)| *r).collect();
    let recall_at = ks
        .iter()
        .map(|&k| {
            let hit = per_query_ranks.iter().filter(|&&r| r <= k).count();
            (k, 100.0 * hit as f64 / n)
        })
        .collect();
    let ap = 100.0 * per_query.iter().map(|(_, ap)| ap).sum::<f64>() / n;
    Ok(RetrievalResult {
        direction,
        recall_at,
        ap,
        per_query_ranks,
    })
}
