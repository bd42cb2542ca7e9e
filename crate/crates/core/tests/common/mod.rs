//! Independent reference implementations shared by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;

use plr_core::features::FeatureSet;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn feature_set(rows: &[Vec<f64>], cameras: &[u32], persons: Option<&[i64]>) -> FeatureSet {
    let dim = rows[0].len();
    let ids = (0..rows.len()).map(|i| format!("s{i:05}")).collect();
    let matrix = rows.iter().flatten().map(|&v| v as f32).collect();
    FeatureSet::new(ids, cameras.to_vec(), persons.map(<[i64]>::to_vec), dim, matrix).unwrap()
}

/// Rows as f64 after the crate's own f32 storage, L2-normalized.
pub fn unit_rows(fs: &FeatureSet) -> Vec<Vec<f64>> {
    fs.rows()
        .map(|r| {
            let v: Vec<f64> = r.iter().map(|&x| x as f64).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n == 0.0 {
                v
            } else {
                v.into_iter().map(|x| x / n).collect()
            }
        })
        .collect()
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn normal(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

/// Five 2-D Gaussian blobs of 38 points plus 10 uniform outliers.
pub fn blobs_2d(seed: u64) -> FeatureSet {
    let mut r = rng(seed);
    let mut rows = Vec::new();
    for c in 0..5 {
        let angle = c as f64 * std::f64::consts::TAU / 5.0 + r.random_range(-0.2..0.2);
        let (cx, cy) = (5.0 * angle.cos(), 5.0 * angle.sin());
        for _ in 0..38 {
            rows.push(vec![cx + 0.25 * normal(&mut r), cy + 0.25 * normal(&mut r)]);
        }
    }
    for _ in 0..10 {
        rows.push(vec![r.random_range(-6.0..6.0), r.random_range(-6.0..6.0)]);
    }
    let cams: Vec<u32> = (0..rows.len()).map(|i| (i % 3) as u32).collect();
    feature_set(&rows, &cams, None)
}

/// Textbook DBSCAN: all-pairs distances, union-find over core points, each
/// border point attached to its nearest core point (lowest index on ties).
/// Returns the noise flags and a canonical partition of non-noise points.
pub fn naive_dbscan(fs: &FeatureSet, eps: f64, min_samples: usize) -> (Vec<bool>, Vec<Vec<usize>>) {
    let x = unit_rows(fs);
    let n = x.len();
    let d: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| euclid(&x[i], &x[j])).collect()).collect();
    let core: Vec<bool> = (0..n)
        .map(|i| (0..n).filter(|&j| d[i][j] <= eps).count() >= min_samples)
        .collect();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        p[i] = r;
        r
    }
    for i in 0..n {
        for j in 0..n {
            if core[i] && core[j] && d[i][j] <= eps {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let mut root = vec![None; n];
    for i in 0..n {
        if core[i] {
            root[i] = Some(find(&mut parent, i));
        } else {
            let mut best: Option<usize> = None;
            for j in 0..n {
                if core[j] && d[i][j] <= eps && best.is_none_or(|b| d[i][j] < d[i][b]) {
                    best = Some(j);
                }
            }
            root[i] = best.map(|b| find(&mut parent, b));
        }
    }
    let noise = root.iter().map(Option::is_none).collect();
    (noise, partition(&root))
}

/// Groups of indices sharing a label, sorted, independent of label values.
pub fn partition<L: Ord + Clone>(labels: &[Option<L>]) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<L, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        if let Some(l) = l {
            groups.entry(l.clone()).or_default().push(i);
        }
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort();
    out
}

pub fn partition_of(labels: &[i32]) -> Vec<Vec<usize>> {
    let opt: Vec<Option<i32>> = labels.iter().map(|&l| (l >= 0).then_some(l)).collect();
    partition(&opt)
}

/// Rand index between two flat labelings.
pub fn rand_index(a: &[i32], b: &[i32]) -> f64 {
    let n = a.len();
    let mut agree = 0usize;
    let mut total = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            total += 1;
            if (a[i] == a[j]) == (b[i] == b[j]) {
                agree += 1;
            }
        }
    }
    agree as f64 / total as f64
}

/// Brute-force Market-1501 style evaluation with continuous distances.
/// For every kept gallery item the rank is the number of kept items that
/// are strictly closer; no sorting involved.
pub fn naive_eval(
    dist: &[Vec<f64>],
    qp: &[i64],
    qc: &[u32],
    gp: &[i64],
    gc: &[u32],
    max_rank: usize,
) -> (Vec<f64>, f64) {
    let mut first_hits = vec![0usize; max_rank];
    let mut ap_sum = 0.0;
    let mut valid = 0usize;
    for q in 0..dist.len() {
        let kept: Vec<usize> = (0..gp.len())
            .filter(|&j| gp[j] != -1 && !(gp[j] == qp[q] && gc[j] == qc[q]))
            .collect();
        let rank_of = |j: usize| kept.iter().filter(|&&k| dist[q][k] < dist[q][j]).count();
        let mut hit_ranks: Vec<usize> = kept.iter().filter(|&&j| gp[j] == qp[q]).map(|&j| rank_of(j)).collect();
        if hit_ranks.is_empty() {
            continue;
        }
        valid += 1;
        hit_ranks.sort();
        if hit_ranks[0] < max_rank {
            first_hits[hit_ranks[0]] += 1;
        }
        let ap: f64 = hit_ranks
            .iter()
            .enumerate()
            .map(|(i, &r)| (i + 1) as f64 / (r + 1) as f64)
            .sum::<f64>()
            / hit_ranks.len() as f64;
        ap_sum += ap;
    }
    let mut cmc = Vec::with_capacity(max_rank);
    let mut cum = 0;
    for h in first_hits {
        cum += h;
        cmc.push(cum as f64 / valid as f64);
    }
    (cmc, ap_sum / valid as f64)
}

/// A random evaluation instance: distances, query and gallery labels with
/// same-camera matches and junk gallery items present.
pub struct EvalInstance {
    pub dist: Vec<Vec<f64>>,
    pub qp: Vec<i64>,
    pub qc: Vec<u32>,
    pub gp: Vec<i64>,
    pub gc: Vec<u32>,
}

pub fn eval_instance(seed: u64, nq: usize, ng: usize) -> EvalInstance {
    let mut r = rng(seed);
    let n_persons = 60;
    let gp: Vec<i64> = (0..ng)
        .map(|_| if r.random_bool(0.05) { -1 } else { r.random_range(0..n_persons) })
        .collect();
    let gc: Vec<u32> = (0..ng).map(|_| r.random_range(0..6)).collect();
    let qp: Vec<i64> = (0..nq).map(|_| r.random_range(0..n_persons)).collect();
    let qc: Vec<u32> = (0..nq).map(|_| r.random_range(0..6)).collect();
    // distinct values per row: a shuffled grid, matches scaled by 0.6
    // (0.6 (a + 1/4) = b + 1/4 has no integer solution)
    let dist = (0..nq)
        .map(|q| {
            let mut grid: Vec<usize> = (0..ng).collect();
            grid.shuffle(&mut r);
            (0..ng)
                .map(|j| {
                    let base = 2.0 * (grid[j] as f64 + 0.25) / ng as f64;
                    let v = if gp[j] == qp[q] { base * 0.6 } else { base };
                    (v as f32) as f64
                })
                .collect()
        })
        .collect();
    EvalInstance { dist, qp, qc, gp, gc }
}

/// The k1=3, k2=2 re-ranking fixture: 11 unit vectors in the plane at the
/// given angles (degrees). Queries are the first three.
pub const RERANK_ANGLES: [f64; 11] = [0.0, 90.0, 200.0, 2.0, -3.0, 5.0, 93.0, 86.0, 97.0, 204.0, 195.0];

pub fn rerank_fixture() -> (FeatureSet, FeatureSet) {
    let rows: Vec<Vec<f64>> = RERANK_ANGLES
        .iter()
        .map(|a| {
            let t = a.to_radians();
            vec![t.cos(), t.sin()]
        })
        .collect();
    let all = feature_set(&rows, &[0; 11], None);
    (all.subset(&[0, 1, 2]).unwrap(), all.subset(&(3..11).collect::<Vec<_>>()).unwrap())
}

/// Set-based Jaccard distances for the fixture, from hand-enumerated
/// neighbor sets over the union (indices into `RERANK_ANGLES`).
///
/// With k1 = 3 every point's 4 nearest neighbors within its group are
/// mutual, and the third group (3 points) borrows point 8 whose own list
/// excludes it, so every k-reciprocal set is the point's group. The
/// half-k1 expansion adds nothing (candidate sets lie inside the group).
/// With k2 = 2 each encoding is averaged with its single nearest neighbor.
pub fn rerank_oracle(all_rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let groups: [&[usize]; 3] = [&[0, 3, 4, 5], &[1, 6, 7, 8], &[2, 9, 10]];
    let nearest: [usize; 11] = [3, 6, 9, 0, 0, 3, 1, 1, 6, 2, 2];
    let n = all_rows.len();
    let d2 = |i: usize, j: usize| euclid(&all_rows[i], &all_rows[j]).powi(2);
    let group_of = |i: usize| groups.iter().find(|g| g.contains(&i)).unwrap();
    let encode = |i: usize| -> Vec<f64> {
        let max = (0..n).map(|j| d2(i, j)).fold(0.0, f64::max);
        let mut v = vec![0.0; n];
        for &j in group_of(i).iter() {
            v[j] = (-d2(i, j) / max).exp();
        }
        let s: f64 = v.iter().sum();
        v.iter().map(|w| w / s).collect()
    };
    let raw: Vec<Vec<f64>> = (0..n).map(encode).collect();
    let expanded: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|c| (raw[i][c] + raw[nearest[i]][c]) / 2.0).collect())
        .collect();
    (0..3)
        .map(|q| {
            (3..n)
                .map(|g| {
                    let mn: f64 = (0..n).map(|c| expanded[q][c].min(expanded[g][c])).sum();
                    let mx: f64 = (0..n).map(|c| expanded[q][c].max(expanded[g][c])).sum();
                    1.0 - mn / mx
                })
                .collect()
        })
        .collect()
}

/// Plain Lloyd iterations from `restarts` uniformly random initial picks on
/// L2-normalized rows; returns the labels of the lowest-objective run.
pub fn reference_kmeans(fs: &FeatureSet, k: usize, restarts: usize, seed: u64) -> Vec<i32> {
    let x = unit_rows(fs);
    let n = x.len();
    let mut r = rng(seed);
    let mut best: Option<(f64, Vec<i32>)> = None;
    for _ in 0..restarts {
        let picks = rand::seq::index::sample(&mut r, n, k);
        let mut cents: Vec<Vec<f64>> = picks.iter().map(|i| x[i].clone()).collect();
        let mut assign = vec![usize::MAX; n];
        for _ in 0..300 {
            let next: Vec<usize> = x
                .iter()
                .map(|p| {
                    (0..k)
                        .min_by(|&a, &b| euclid(p, &cents[a]).total_cmp(&euclid(p, &cents[b])))
                        .unwrap()
                })
                .collect();
            if next == assign {
                break;
            }
            assign = next;
            for (c, cent) in cents.iter_mut().enumerate() {
                let members: Vec<&Vec<f64>> = x.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
                if !members.is_empty() {
                    for d in 0..cent.len() {
                        cent[d] = members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64;
                    }
                }
            }
        }
        let obj: f64 = x.iter().zip(&assign).map(|(p, &a)| euclid(p, &cents[a]).powi(2)).sum();
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, assign.iter().map(|&a| a as i32).collect()));
        }
    }
    best.unwrap().1
}
