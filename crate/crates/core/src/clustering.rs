//! DBSCAN and k-means over L2-normalized embeddings.

use std::collections::VecDeque;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::distance::{distance_block, radius_neighbors, Metric, Prepared};
use crate::features::FeatureSet;

pub const NOISE: i32 = -1;
/// Assumed images per identity when picking k for k-means.
pub const IMAGES_PER_IDENTITY: usize = 15;
pub const KMEANS_MAX_ITER: usize = 300;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("invalid k={k} for {n} samples")]
    InvalidK { k: usize, n: usize },
    #[error("k heuristic gives zero clusters for {n} samples")]
    HeuristicZero { n: usize },
    #[error("invalid DBSCAN parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DbscanParams {
    pub eps: f64,
    pub min_samples: usize,
    pub metric: Metric,
}

impl Default for DbscanParams {
    fn default() -> Self {
        Self {
            eps: 0.42,
            min_samples: 4,
            metric: Metric::Euclidean,
        }
    }
}

impl DbscanParams {
    pub fn validate(&self) -> Result<(), ClusterError> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(ClusterError::InvalidParams(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if self.min_samples == 0 {
            return Err(ClusterError::InvalidParams("min_samples must be >= 1".into()));
        }
        if self.metric == Metric::Reranked {
            return Err(ClusterError::InvalidParams(
                "clustering supports euclidean or cosine".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClusterParams {
    Dbscan(DbscanParams),
    Kmeans { k: usize, seed: u64 },
}

impl fmt::Display for ClusterParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClusterParams::Dbscan(p) => write!(
                f,
                "dbscan(eps={}, min_samples={}, metric={})",
                p.eps, p.min_samples, p.metric
            ),
            ClusterParams::Kmeans { k, seed } => write!(f, "kmeans(k={k}, seed={seed})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    /// Cluster id per sample, or [`NOISE`].
    pub labels: Vec<i32>,
    pub n_clusters: usize,
    pub params: ClusterParams,
}

impl ClusterAssignment {
    pub fn n_noise(&self) -> usize {
        self.labels.iter().filter(|&&l| l == NOISE).count()
    }

    /// Member indices of each cluster, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_clusters];
        for (i, &l) in self.labels.iter().enumerate() {
            if l != NOISE {
                out[l as usize].push(i);
            }
        }
        out
    }
}

/// Density-based clustering with a closed, self-inclusive ε-ball.
///
/// Clusters are numbered in order of their lowest-index core point. A border
/// point reachable from several clusters joins the cluster of its nearest
/// core neighbor (ties broken by sample id), so the partition does not depend
/// on row order.
pub fn dbscan(fs: &FeatureSet, params: &DbscanParams) -> Result<ClusterAssignment, ClusterError> {
    params.validate()?;
    let prepared = Prepared::new(fs);
    let neighbors = radius_neighbors(&prepared, params.eps, params.metric);
    Ok(dbscan_from_neighbors(fs, &neighbors, params))
}

fn dbscan_from_neighbors(
    fs: &FeatureSet,
    neighbors: &[Vec<(u32, f64)>],
    params: &DbscanParams,
) -> ClusterAssignment {
    let n = neighbors.len();
    let is_core: Vec<bool> = neighbors
        .iter()
        .map(|nb| nb.len() >= params.min_samples)
        .collect();
    let mut labels = vec![NOISE; n];
    let mut n_clusters = 0i32;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if !is_core[start] || labels[start] != NOISE {
            continue;
        }
        labels[start] = n_clusters;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for &(q, _) in &neighbors[p] {
                let q = q as usize;
                if is_core[q] && labels[q] == NOISE {
                    labels[q] = n_clusters;
                    queue.push_back(q);
                }
            }
        }
        n_clusters += 1;
    }
    let ids = fs.ids();
    for i in 0..n {
        if is_core[i] {
            continue;
        }
        let nearest = neighbors[i]
            .iter()
            .filter(|&&(q, _)| is_core[q as usize])
            .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| ids[a.0 as usize].cmp(&ids[b.0 as usize])));
        if let Some(&(q, _)) = nearest {
            labels[i] = labels[q as usize];
        }
    }
    ClusterAssignment {
        labels,
        n_clusters: n_clusters as usize,
        params: ClusterParams::Dbscan(*params),
    }
}

/// One point of an ε sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub eps: f64,
    pub n_clusters: usize,
    pub n_noise: usize,
    /// Percentage of samples labeled noise.
    pub noise_portion: f64,
}

/// Runs DBSCAN at every ε of `grid`, sharing one neighbor computation.
pub fn sweep_eps(
    fs: &FeatureSet,
    grid: &[f64],
    min_samples: usize,
    metric: Metric,
) -> Result<Vec<SweepPoint>, ClusterError> {
    let Some(max_eps) = grid.iter().copied().reduce(f64::max) else {
        return Ok(Vec::new());
    };
    for &eps in grid {
        DbscanParams {
            eps,
            min_samples,
            metric,
        }
        .validate()?;
    }
    let prepared = Prepared::new(fs);
    let widest = radius_neighbors(&prepared, max_eps, metric);
    let n = fs.len();
    Ok(grid
        .iter()
        .map(|&eps| {
            let params = DbscanParams {
                eps,
                min_samples,
                metric,
            };
            let narrowed: Vec<Vec<(u32, f64)>> = widest
                .iter()
                .map(|nb| nb.iter().copied().filter(|&(_, d)| d <= eps).collect())
                .collect();
            let ca = dbscan_from_neighbors(fs, &narrowed, &params);
            let n_noise = ca.n_noise();
            SweepPoint {
                eps,
                n_clusters: ca.n_clusters,
                n_noise,
                noise_portion: 100.0 * n_noise as f64 / n as f64,
            }
        })
        .collect())
}

/// `floor(n / 15)`: one cluster per fifteen images.
pub fn k_heuristic(n: usize) -> Result<usize, ClusterError> {
    match n / IMAGES_PER_IDENTITY {
        0 => Err(ClusterError::HeuristicZero { n }),
        k => Ok(k),
    }
}

/// Full k-means result, including the objective after every assignment step.
#[derive(Debug, Clone)]
pub struct KmeansRun {
    pub assignment: ClusterAssignment,
    /// Row-major `k x dim` centroids, indexed by the relabeled cluster id.
    pub centroids: Vec<f64>,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn kmeans(fs: &FeatureSet, k: usize, seed: u64) -> Result<ClusterAssignment, ClusterError> {
    kmeans_run(fs, k, seed).map(|r| r.assignment)
}

/// Lloyd's algorithm on L2-normalized rows with k-means++ seeding.
pub fn kmeans_run(fs: &FeatureSet, k: usize, seed: u64) -> Result<KmeansRun, ClusterError> {
    let n = fs.len();
    if k == 0 || k > n {
        return Err(ClusterError::InvalidK { k, n });
    }
    let points = Prepared::new(fs);
    let dim = points.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(&points, k, &mut rng);

    let mut assign = vec![usize::MAX; n];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITER {
        iterations += 1;
        let next = nearest_centroid(&points, &centroids, k);
        let changed = next != assign;
        assign = next;
        trace.push(objective(&points, &centroids, &assign));
        if !changed {
            converged = true;
            break;
        }
        update_centroids(&points, &assign, &mut centroids, k);
    }

    // relabel by first occurrence
    let mut remap = vec![usize::MAX; k];
    let mut next_id = 0;
    let mut labels = Vec::with_capacity(n);
    for &a in &assign {
        if remap[a] == usize::MAX {
            remap[a] = next_id;
            next_id += 1;
        }
        labels.push(remap[a] as i32);
    }
    let mut ordered = vec![0.0; next_id * dim];
    for (old, &new) in remap.iter().enumerate() {
        if new != usize::MAX {
            ordered[new * dim..(new + 1) * dim]
                .copy_from_slice(&centroids[old * dim..(old + 1) * dim]);
        }
    }
    Ok(KmeansRun {
        assignment: ClusterAssignment {
            labels,
            n_clusters: next_id,
            params: ClusterParams::Kmeans { k, seed },
        },
        centroids: ordered,
        objective_trace: trace,
        iterations,
        converged,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_pp(points: &Prepared, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.n;
    let dim = points.dim;
    let row = |i: usize| &points.data[i * dim..(i + 1) * dim];
    let mut chosen = vec![false; n];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.extend_from_slice(row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(first))).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave `target` past the final sum
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centroids.extend_from_slice(row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), row(pick)));
        }
    }
    centroids
}

fn nearest_centroid(points: &Prepared, centroids: &[f64], k: usize) -> Vec<usize> {
    use rayon::prelude::*;
    const BLOCK: usize = 256;
    let cents = Prepared::raw(centroids.to_vec(), k, points.dim);
    let starts: Vec<usize> = (0..points.n).step_by(BLOCK).collect();
    starts
        .par_iter()
        .flat_map_iter(|&r0| {
            let r1 = (r0 + BLOCK).min(points.n);
            let mut buf = vec![0.0; (r1 - r0) * k];
            distance_block(points, &cents, (r0, r1), (0, k), Metric::Euclidean, &mut buf);
            buf.chunks_exact(k)
                .map(|row| {
                    let mut best = 0;
                    for (j, &d) in row.iter().enumerate().skip(1) {
                        if d < row[best] {
                            best = j;
                        }
                    }
                    best
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

fn objective(points: &Prepared, centroids: &[f64], assign: &[usize]) -> f64 {
    let dim = points.dim;
    assign
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            sq_dist(
                &points.data[i * dim..(i + 1) * dim],
                &centroids[c * dim..(c + 1) * dim],
            )
        })
        .sum()
}

/// Mean of each cluster's members; empty clusters keep their centroid.
fn update_centroids(points: &Prepared, assign: &[usize], centroids: &mut [f64], k: usize) {
    let dim = points.dim;
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (i, &c) in assign.iter().enumerate() {
        counts[c] += 1;
        for (s, v) in sums[c * dim..(c + 1) * dim]
            .iter_mut()
            .zip(&points.data[i * dim..(i + 1) * dim])
        {
            *s += v;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            for (dst, s) in centroids[c * dim..(c + 1) * dim]
                .iter_mut()
                .zip(&sums[c * dim..(c + 1) * dim])
            {
                *dst = s / counts[c] as f64;
            }
        }
    }
}
