//! Camera-guided feature normalization.
//!
//! Every embedding is standardized with the statistics of the camera that
//! captured it: `(f - mean[c]) / std[c]`, component-wise. This removes the
//! per-view bias that otherwise makes clustering group samples by camera
//! instead of by person.

use rayon::prelude::*;

use crate::features::FeatureSet;

/// Lower bound applied to every per-component standard deviation.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CameraStats {
    pub camera: u32,
    pub count: usize,
    pub mean: Vec<f64>,
    /// Population standard deviation, floored at [`STD_FLOOR`].
    pub std: Vec<f64>,
}

impl CameraStats {
    pub fn mean_norm(&self) -> f64 {
        self.mean.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn std_min(&self) -> f64 {
        self.std.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn std_max(&self) -> f64 {
        self.std.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Row indices of each camera present, ascending by camera then by index.
fn camera_groups(fs: &FeatureSet) -> Vec<(u32, Vec<usize>)> {
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); fs.n_cameras()];
    for (i, &c) in fs.cameras().iter().enumerate() {
        groups[c as usize].push(i);
    }
    groups
        .into_iter()
        .enumerate()
        .filter(|(_, g)| !g.is_empty())
        .map(|(c, g)| (c as u32, g))
        .collect()
}

/// Component-wise pairwise sum of `f(row)` over `rows`, in index order.
fn pairwise_sum(rows: &[usize], dim: usize, f: &impl Fn(usize, &mut [f64])) -> Vec<f64> {
    const LEAF: usize = 8;
    let mut acc = vec![0.0; dim];
    if rows.len() <= LEAF {
        let mut tmp = vec![0.0; dim];
        for &r in rows {
            f(r, &mut tmp);
            for (a, t) in acc.iter_mut().zip(&tmp) {
                *a += t;
            }
        }
        return acc;
    }
    let (lo, hi) = rows.split_at(rows.len() / 2);
    let left = pairwise_sum(lo, dim, f);
    let right = pairwise_sum(hi, dim, f);
    for ((a, l), r) in acc.iter_mut().zip(left).zip(right) {
        *a = l + r;
    }
    acc
}

fn stats_for(fs: &FeatureSet, camera: u32, rows: &[usize]) -> CameraStats {
    let dim = fs.dim();
    let count = rows.len() as f64;
    let sum = pairwise_sum(rows, dim, &|r, out| {
        for (o, &v) in out.iter_mut().zip(fs.row(r)) {
            *o = v as f64;
        }
    });
    let mean: Vec<f64> = sum.into_iter().map(|s| s / count).collect();
    let sq = pairwise_sum(rows, dim, &|r, out| {
        for ((o, &v), m) in out.iter_mut().zip(fs.row(r)).zip(&mean) {
            let d = v as f64 - m;
            *o = d * d;
        }
    });
    let std = sq
        .into_iter()
        .map(|s| (s / count).sqrt().max(STD_FLOOR))
        .collect();
    CameraStats {
        camera,
        count: rows.len(),
        mean,
        std,
    }
}

/// One entry per camera present in `fs`, ordered by camera index.
pub fn camera_statistics(fs: &FeatureSet) -> Vec<CameraStats> {
    camera_groups(fs)
        .par_iter()
        .map(|(c, rows)| stats_for(fs, *c, rows))
        .collect()
}

/// Applies `(f - mean) / std` using the statistics of each row's camera.
pub fn camera_normalize(fs: &FeatureSet) -> FeatureSet {
    let stats = camera_statistics(fs);
    apply_camera_stats(fs, &stats)
}

/// Normalizes with precomputed statistics. Rows whose camera has no entry in
/// `stats` are left unchanged.
pub fn apply_camera_stats(fs: &FeatureSet, stats: &[CameraStats]) -> FeatureSet {
    let dim = fs.dim();
    let mut lookup: Vec<Option<&CameraStats>> = vec![None; fs.n_cameras()];
    for s in stats {
        if let Some(slot) = lookup.get_mut(s.camera as usize) {
            *slot = Some(s);
        }
    }
    let mut matrix = vec![0.0f32; fs.len() * dim];
    matrix
        .par_chunks_mut(dim)
        .zip(fs.cameras().par_iter())
        .enumerate()
        .for_each(|(i, (out, &c))| {
            let row = fs.row(i);
            match lookup[c as usize] {
                Some(s) => {
                    for (j, o) in out.iter_mut().enumerate() {
                        *o = ((row[j] as f64 - s.mean[j]) / s.std[j]) as f32;
                    }
                }
                None => out.copy_from_slice(row),
            }
        });
    fs.with_matrix(matrix)
        .expect("normalized output keeps the input's shape and stays finite")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(cameras: Vec<u32>, dim: usize, matrix: Vec<f32>) -> FeatureSet {
        let ids = (0..cameras.len()).map(|i| format!("s{i}")).collect();
        FeatureSet::new(ids, cameras, None, dim, matrix).unwrap()
    }

    #[test]
    fn two_camera_stats() {
        let fs = set(vec![0, 1, 0], 2, vec![1.0, 1.0, 5.0, -2.0, 3.0, 3.0]);
        let stats = camera_statistics(&fs);
        assert_eq!(stats.len(), 2);
        assert_eq!(stats[0].camera, 0);
        assert_eq!(stats[0].count, 2);
        assert_eq!(stats[0].mean, vec![2.0, 2.0]);
        assert_eq!(stats[0].std, vec![1.0, 1.0]);
    }

    #[test]
    fn single_row_camera_is_floored() {
        let fs = set(vec![4], 3, vec![0.5, -1.0, 2.0]);
        let stats = camera_statistics(&fs);
        assert_eq!(stats.len(), 1);
        assert_eq!(stats[0].mean, vec![0.5, -1.0, 2.0]);
        assert_eq!(stats[0].std, vec![STD_FLOOR; 3]);
    }

    #[test]
    fn constant_camera_maps_to_zero() {
        let fs = set(vec![0; 5], 2, [0.3f32, -7.0].repeat(5));
        let out = camera_normalize(&fs);
        assert!(out.matrix().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_dimensional_example() {
        let fs = set(vec![0, 0], 1, vec![1.0, 3.0]);
        let out = camera_normalize(&fs);
        assert_eq!(out.matrix(), &[-1.0, 1.0]);
    }

    #[test]
    fn metadata_preserved() {
        let fs = FeatureSet::new(
            vec!["a".into(), "b".into()],
            vec![1, 1],
            Some(vec![3, 9]),
            1,
            vec![0.0, 2.0],
        )
        .unwrap();
        let out = camera_normalize(&fs);
        assert_eq!(out.ids(), fs.ids());
        assert_eq!(out.cameras(), fs.cameras());
        assert_eq!(out.persons(), fs.persons());
    }

    #[test]
    fn pairwise_sum_matches_naive_on_many_rows() {
        let n = 37;
        let fs = set(vec![0; n], 1, (0..n).map(|i| i as f32).collect());
        let s = camera_statistics(&fs);
        assert_eq!(s[0].mean[0], 18.0);
    }
}
