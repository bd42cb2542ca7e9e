//! k-reciprocal encoding re-ranking.
//!
//! Works on the union of query and gallery. Each sample gets a sparse
//! encoding vector over its (expanded) k-reciprocal neighbors, weighted by
//! `exp(-d)`; encodings are averaged over the `k2` nearest neighbors, and the
//! Jaccard distance between encodings is mixed with the original distance:
//!
//! `final = lambda * original + (1 - lambda) * jaccard`
//!
//! The neighbor ranking and the encoding weights use squared distances
//! scaled by each row's maximum. `original` is the plain Euclidean distance
//! between L2-normalized rows, so `lambda = 1` reproduces it.

use rayon::prelude::*;
use thiserror::Error;

use crate::distance::{pairwise_distances, DistanceError, DistanceMatrix, Metric};
use crate::features::FeatureSet;

#[derive(Debug, Error, PartialEq)]
pub enum RerankError {
    #[error("gallery has {size} samples, re-ranking needs at least k1+1={needed}")]
    GalleryTooSmall { size: usize, needed: usize },
    #[error("invalid re-ranking parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Distance(#[from] DistanceError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RerankParams {
    pub k1: usize,
    pub k2: usize,
    pub lambda: f64,
}

impl Default for RerankParams {
    fn default() -> Self {
        Self {
            k1: 20,
            k2: 6,
            lambda: 0.3,
        }
    }
}

impl RerankParams {
    pub fn validate(&self) -> Result<(), RerankError> {
        if self.k2 == 0 || self.k1 < self.k2 {
            return Err(RerankError::InvalidParams(format!(
                "need k1 >= k2 >= 1, got k1={} k2={}",
                self.k1, self.k2
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(RerankError::InvalidParams(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

type SparseRow = Vec<(u32, f64)>;

/// Row-max-scaled squared distances over the union, plus each row's
/// `k1 + 1` nearest neighbors (self usually first).
struct UnionGraph {
    scaled: Vec<f64>,
    n: usize,
    top: Vec<Vec<u32>>,
}

impl UnionGraph {
    fn build(all: &FeatureSet, k1: usize) -> Result<Self, RerankError> {
        let n = all.len();
        let d = pairwise_distances(all, all, Metric::Euclidean)?;
        let mut scaled = vec![0.0f64; n * n];
        scaled
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(i, out)| {
                let row = d.row(i);
                let max = row
                    .iter()
                    .map(|&v| (v as f64) * (v as f64))
                    .fold(0.0, f64::max);
                for (o, &v) in out.iter_mut().zip(row) {
                    let sq = (v as f64) * (v as f64);
                    *o = if max > 0.0 { sq / max } else { 0.0 };
                }
            });
        let keep = (k1 + 1).min(n);
        let top = (0..n)
            .into_par_iter()
            .map(|i| {
                let row = &scaled[i * n..(i + 1) * n];
                let mut idx: Vec<u32> = (0..n as u32).collect();
                let cmp = |a: &u32, b: &u32| {
                    row[*a as usize].total_cmp(&row[*b as usize]).then(a.cmp(b))
                };
                if keep < n {
                    idx.select_nth_unstable_by(keep - 1, cmp);
                    idx.truncate(keep);
                }
                idx.sort_unstable_by(cmp);
                idx
            })
            .collect();
        Ok(Self { scaled, n, top })
    }

    fn dist(&self, i: usize, j: usize) -> f64 {
        self.scaled[i * self.n + j]
    }

    /// Members of `top[i][..=k]` whose own `top[..=k]` contains `i`.
    fn reciprocal(&self, i: usize, k: usize) -> Vec<u32> {
        self.top[i][..=k]
            .iter()
            .copied()
            .filter(|&f| self.top[f as usize][..=k].contains(&(i as u32)))
            .collect()
    }
}

fn half_k(k1: usize) -> usize {
    (k1 as f64 / 2.0).round_ties_even() as usize
}

/// Encoding of one sample: normalized Gaussian weights over its expanded
/// k-reciprocal set.
fn encode(graph: &UnionGraph, i: usize, k1: usize) -> SparseRow {
    let base = graph.reciprocal(i, k1);
    let half = half_k(k1);
    let mut expanded = base.clone();
    for &c in &base {
        let cand = graph.reciprocal(c as usize, half);
        let overlap = cand.iter().filter(|x| base.contains(x)).count();
        if overlap as f64 > 2.0 / 3.0 * cand.len() as f64 {
            expanded.extend_from_slice(&cand);
        }
    }
    expanded.sort_unstable();
    expanded.dedup();
    let weights: Vec<f64> = expanded.iter().map(|&j| (-graph.dist(i, j as usize)).exp()).collect();
    let total: f64 = weights.iter().sum();
    expanded
        .into_iter()
        .zip(weights)
        .map(|(j, w)| (j, w / total))
        .collect()
}

/// Averages each encoding over the row's `k2` nearest neighbors.
fn expand_queries(graph: &UnionGraph, v: &[SparseRow], k2: usize) -> Vec<SparseRow> {
    let n = graph.n;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut dense = vec![0.0f64; n];
            let picks = &graph.top[i][..k2.min(graph.top[i].len())];
            for &r in picks {
                for &(j, w) in &v[r as usize] {
                    dense[j as usize] += w;
                }
            }
            let scale = picks.len() as f64;
            dense
                .into_iter()
                .enumerate()
                .filter(|&(_, w)| w != 0.0)
                .map(|(j, w)| (j as u32, w / scale))
                .collect()
        })
        .collect()
}

/// Jaccard distance between the encodings of every query and gallery item.
pub fn jaccard_distances(
    query: &FeatureSet,
    gallery: &FeatureSet,
    params: &RerankParams,
) -> Result<DistanceMatrix, RerankError> {
    params.validate()?;
    if gallery.len() < params.k1 + 1 {
        return Err(RerankError::GalleryTooSmall {
            size: gallery.len(),
            needed: params.k1 + 1,
        });
    }
    let all = query.concat(gallery).map_err(|_| DistanceError::DimensionMismatch {
        left: query.dim(),
        right: gallery.dim(),
    })?;
    let q = query.len();
    let n = all.len();
    let graph = UnionGraph::build(&all, params.k1)?;
    let mut v: Vec<SparseRow> = (0..n)
        .into_par_iter()
        .map(|i| encode(&graph, i, params.k1))
        .collect();
    if params.k2 != 1 {
        v = expand_queries(&graph, &v, params.k2);
    }

    // inverted index: column -> rows with a non-zero weight there
    let mut inverted: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
    for (row, enc) in v.iter().enumerate() {
        for &(col, w) in enc {
            inverted[col as usize].push((row as u32, w));
        }
    }
    let g = gallery.len();
    let mut values = vec![0.0f32; q * g];
    values
        .par_chunks_mut(g)
        .enumerate()
        .for_each(|(i, out)| {
            let mut shared = vec![0.0f64; n];
            for &(col, wi) in &v[i] {
                for &(row, wj) in &inverted[col as usize] {
                    shared[row as usize] += wi.min(wj);
                }
            }
            for (o, s) in out.iter_mut().zip(&shared[q..]) {
                *o = (1.0 - s / (2.0 - s)) as f32;
            }
        });
    Ok(DistanceMatrix::from_values(q, g, Metric::Reranked, values))
}

/// Re-ranked `query x gallery` distances.
pub fn k_reciprocal_rerank(
    query: &FeatureSet,
    gallery: &FeatureSet,
    params: &RerankParams,
) -> Result<DistanceMatrix, RerankError> {
    params.validate()?;
    let original = pairwise_distances(query, gallery, Metric::Euclidean)?;
    if params.lambda == 1.0 {
        if gallery.len() < params.k1 + 1 {
            return Err(RerankError::GalleryTooSmall {
                size: gallery.len(),
                needed: params.k1 + 1,
            });
        }
        return Ok(DistanceMatrix::from_values(
            original.rows(),
            original.cols(),
            Metric::Reranked,
            original.into_values(),
        ));
    }
    let jaccard = jaccard_distances(query, gallery, params)?;
    Ok(mix(&original, &jaccard, params.lambda))
}

/// `lambda * original + (1 - lambda) * jaccard`, entry-wise.
pub fn mix(original: &DistanceMatrix, jaccard: &DistanceMatrix, lambda: f64) -> DistanceMatrix {
    let values = original
        .values()
        .iter()
        .zip(jaccard.values())
        .map(|(&o, &j)| (lambda * o as f64 + (1.0 - lambda) * j as f64) as f32)
        .collect();
    DistanceMatrix::from_values(original.rows(), original.cols(), Metric::Reranked, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn points(coords: &[(f32, f32)]) -> FeatureSet {
        FeatureSet::new(
            (0..coords.len()).map(|i| format!("x{i}")).collect(),
            vec![0; coords.len()],
            None,
            2,
            coords.iter().flat_map(|&(a, b)| [a, b]).collect(),
        )
        .unwrap()
    }

    #[test]
    fn half_k_rounds_to_even() {
        assert_eq!(half_k(20), 10);
        assert_eq!(half_k(3), 2);
        assert_eq!(half_k(5), 2);
        assert_eq!(half_k(7), 4);
    }

    #[test]
    fn parameter_checks() {
        let bad = RerankParams { k1: 2, k2: 3, lambda: 0.3 };
        assert!(matches!(bad.validate(), Err(RerankError::InvalidParams(_))));
        let bad = RerankParams { lambda: 1.5, ..RerankParams::default() };
        assert!(matches!(bad.validate(), Err(RerankError::InvalidParams(_))));
    }

    #[test]
    fn gallery_too_small() {
        let q = points(&[(1.0, 0.0)]);
        let g = points(&[(1.0, 0.1), (0.0, 1.0)]);
        let p = RerankParams { k1: 2, k2: 1, lambda: 0.3 };
        assert_eq!(
            k_reciprocal_rerank(&q, &g, &p).unwrap_err(),
            RerankError::GalleryTooSmall { size: 2, needed: 3 }
        );
    }

    #[test]
    fn self_match_has_zero_jaccard() {
        let g = points(&[(1.0, 0.0), (0.9, 0.1), (0.0, 1.0), (0.1, 0.9)]);
        let q = points(&[(1.0, 0.0)]);
        let j = jaccard_distances(&q, &g, &RerankParams { k1: 1, k2: 1, lambda: 0.0 }).unwrap();
        assert!(j.get(0, 0).abs() < 1e-6);
        assert!(j.values().iter().all(|v| v.is_finite() && *v >= -1e-6 && *v <= 1.0 + 1e-6));
    }
}
