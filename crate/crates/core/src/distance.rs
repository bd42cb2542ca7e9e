//! Dense pairwise distances on L2-normalized embeddings.
//!
//! Rows are normalized in f64 and distances come out of blocked
//! `A * B^T` products (`matrixmultiply::dgemm`), parallel over row blocks.
//! The Gram identity `|a - b|^2 = |a|^2 + |b|^2 - 2 a.b` is clamped at zero.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::features::{row_norm, FeatureSet};

const ROW_BLOCK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Metric {
    /// Euclidean distance between L2-normalized rows, in `[0, 2]`.
    #[default]
    Euclidean,
    /// `1 - cos(a, b)`, in `[0, 2]`.
    Cosine,
    /// Output of k-reciprocal re-ranking.
    Reranked,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
            Metric::Reranked => "reranked",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            "reranked" => Ok(Metric::Reranked),
            other => Err(format!("unknown metric {other:?}")),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DistanceError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("metric {0} cannot be computed from raw features")]
    UnsupportedMetric(Metric),
}

/// Row-major `rows x cols` distance block.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    rows: usize,
    cols: usize,
    metric: Metric,
    values: Vec<f32>,
}

impl DistanceMatrix {
    /// Panics if `values.len() != rows * cols`.
    pub fn from_values(rows: usize, cols: usize, metric: Metric, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), rows * cols, "distance matrix shape");
        Self {
            rows,
            cols,
            metric,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

/// Embeddings prepared for the Gram kernel: unit rows in f64.
pub(crate) struct Prepared {
    pub n: usize,
    pub dim: usize,
    pub data: Vec<f64>,
    pub sq_norms: Vec<f64>,
}

impl Prepared {
    pub fn new(fs: &FeatureSet) -> Self {
        let dim = fs.dim();
        let mut data = Vec::with_capacity(fs.len() * dim);
        let mut sq_norms = Vec::with_capacity(fs.len());
        for row in fs.rows() {
            let norm = row_norm(row);
            if norm == 0.0 {
                data.extend(std::iter::repeat_n(0.0, dim));
                sq_norms.push(0.0);
            } else {
                let start = data.len();
                data.extend(row.iter().map(|&v| v as f64 / norm));
                let r = &data[start..];
                sq_norms.push(r.iter().map(|v| v * v).sum());
            }
        }
        Self {
            n: fs.len(),
            dim,
            data,
            sq_norms,
        }
    }

    /// Wraps row-major `n x dim` data as-is, without normalizing.
    pub fn raw(data: Vec<f64>, n: usize, dim: usize) -> Self {
        let sq_norms = data
            .chunks_exact(dim)
            .map(|r| r.iter().map(|v| v * v).sum())
            .collect();
        Self {
            n,
            dim,
            data,
            sq_norms,
        }
    }

    fn rows(&self, start: usize, end: usize) -> &[f64] {
        &self.data[start * self.dim..end * self.dim]
    }
}

/// Writes distances between rows `a[r0..r1]` and `b[c0..c1]` into `out`
/// (row-major, `(r1 - r0) x (c1 - c0)`).
pub(crate) fn distance_block(
    a: &Prepared,
    b: &Prepared,
    (r0, r1): (usize, usize),
    (c0, c1): (usize, usize),
    metric: Metric,
    out: &mut [f64],
) {
    let m = r1 - r0;
    let n = c1 - c0;
    let k = a.dim;
    debug_assert_eq!(out.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let lhs = a.rows(r0, r1);
    let rhs = b.rows(c0, c1);
    // SAFETY: lhs is m x k row-major, rhs is n x k row-major read as its
    // k x n transpose, out is m x n row-major; all slices have those sizes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            lhs.as_ptr(),
            k as isize,
            1,
            rhs.as_ptr(),
            1,
            k as isize,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    for (i, row) in out.chunks_exact_mut(n).enumerate() {
        let na = a.sq_norms[r0 + i];
        for (j, v) in row.iter_mut().enumerate() {
            let dot = *v;
            *v = match metric {
                Metric::Cosine => (1.0 - dot).max(0.0),
                _ => (na + b.sq_norms[c0 + j] - 2.0 * dot).max(0.0).sqrt(),
            };
        }
    }
}

fn check_metric(metric: Metric) -> Result<(), DistanceError> {
    match metric {
        Metric::Reranked => Err(DistanceError::UnsupportedMetric(metric)),
        _ => Ok(()),
    }
}

/// `a.len() x b.len()` distances under `metric`.
pub fn pairwise_distances(
    a: &FeatureSet,
    b: &FeatureSet,
    metric: Metric,
) -> Result<DistanceMatrix, DistanceError> {
    if a.dim() != b.dim() {
        return Err(DistanceError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    check_metric(metric)?;
    let pa = Prepared::new(a);
    let pb = Prepared::new(b);
    Ok(pairwise_prepared(&pa, &pb, metric))
}

pub(crate) fn pairwise_prepared(pa: &Prepared, pb: &Prepared, metric: Metric) -> DistanceMatrix {
    let cols = pb.n;
    let mut values = vec![0.0f32; pa.n * cols];
    values
        .par_chunks_mut(ROW_BLOCK * cols.max(1))
        .enumerate()
        .for_each(|(blk, out)| {
            let r0 = blk * ROW_BLOCK;
            let r1 = (r0 + ROW_BLOCK).min(pa.n);
            let mut buf = vec![0.0f64; (r1 - r0) * cols];
            distance_block(pa, pb, (r0, r1), (0, cols), metric, &mut buf);
            for (o, v) in out.iter_mut().zip(&buf) {
                *o = *v as f32;
            }
        });
    DistanceMatrix::from_values(pa.n, cols, metric, values)
}

/// Square distance matrix of `a` against itself. Only the upper triangle is
/// computed; the diagonal is exactly zero.
pub fn self_distances(a: &FeatureSet, metric: Metric) -> Result<DistanceMatrix, DistanceError> {
    check_metric(metric)?;
    let pa = Prepared::new(a);
    Ok(self_prepared(&pa, metric))
}

pub(crate) fn self_prepared(pa: &Prepared, metric: Metric) -> DistanceMatrix {
    let n = pa.n;
    let mut values = vec![0.0f32; n * n];
    values
        .par_chunks_mut(ROW_BLOCK * n)
        .enumerate()
        .for_each(|(blk, out)| {
            let r0 = blk * ROW_BLOCK;
            let r1 = (r0 + ROW_BLOCK).min(n);
            let width = n - r0;
            let mut buf = vec![0.0f64; (r1 - r0) * width];
            distance_block(pa, pa, (r0, r1), (r0, n), metric, &mut buf);
            for (i, src) in buf.chunks_exact(width).enumerate() {
                let dst = &mut out[i * n + r0..(i + 1) * n];
                for (o, v) in dst.iter_mut().zip(src) {
                    *o = *v as f32;
                }
                dst[i] = 0.0;
            }
        });
    mirror_upper(&mut values, n);
    DistanceMatrix::from_values(n, n, metric, values)
}

/// Copies the strict upper triangle onto the lower one, tile by tile.
fn mirror_upper(values: &mut [f32], n: usize) {
    const TILE: usize = 64;
    for bi in (0..n).step_by(TILE) {
        for bj in (bi..n).step_by(TILE) {
            for i in bi..(bi + TILE).min(n) {
                for j in bj.max(i + 1)..(bj + TILE).min(n) {
                    values[j * n + i] = values[i * n + j];
                }
            }
        }
    }
}

/// For every row, the indices (ascending) and distances of all rows within
/// `eps` (closed ball, self included). Distances are kept in f64.
pub(crate) fn radius_neighbors(pa: &Prepared, eps: f64, metric: Metric) -> Vec<Vec<(u32, f64)>> {
    let n = pa.n;
    let starts: Vec<usize> = (0..n).step_by(ROW_BLOCK).collect();
    let pairs: Vec<Vec<(u32, u32, f64)>> = starts
        .par_iter()
        .map(|&r0| {
            let r1 = (r0 + ROW_BLOCK).min(n);
            let width = n - r0;
            let mut buf = vec![0.0f64; (r1 - r0) * width];
            distance_block(pa, pa, (r0, r1), (r0, n), metric, &mut buf);
            let mut found = Vec::new();
            for (i, row) in buf.chunks_exact(width).enumerate() {
                let gi = r0 + i;
                for (j, &d) in row.iter().enumerate().skip(i + 1) {
                    if d <= eps {
                        found.push((gi as u32, (r0 + j) as u32, d));
                    }
                }
            }
            found
        })
        .collect();
    let mut lists: Vec<Vec<(u32, f64)>> = (0..n).map(|i| vec![(i as u32, 0.0)]).collect();
    for block in pairs {
        for (i, j, d) in block {
            lists[i as usize].push((j, d));
            lists[j as usize].push((i, d));
        }
    }
    lists
        .par_iter_mut()
        .for_each(|l| l.sort_unstable_by_key(|&(j, _)| j));
    lists
}
