//! Trainers: the mock centroid-pull model and the external process protocol.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::Command;

use crate::csv_io::{write_batches, write_pseudo};
use crate::features::{l2_normalize_rows, load_features, save_features, FeatureSet};
use crate::sampler::Batch;
use crate::selection::PseudoLabelDataset;

use super::PipelineError;

/// Placeholder replaced by the manifest path in external command templates.
pub const MANIFEST_PLACEHOLDER: &str = "{manifest}";

/// Everything a trainer sees in one iteration.
pub struct TrainInput<'a> {
    pub iteration: usize,
    pub seed: u64,
    pub train: &'a FeatureSet,
    pub dataset: &'a PseudoLabelDataset,
    pub batches: &'a [Batch],
    pub query: &'a FeatureSet,
    pub gallery: &'a FeatureSet,
}

/// Updated features. `None` keeps the previous query/gallery features.
pub struct TrainOutput {
    pub train: FeatureSet,
    pub query: Option<FeatureSet>,
    pub gallery: Option<FeatureSet>,
}

pub trait Trainer {
    fn train(&mut self, input: &TrainInput<'_>) -> Result<TrainOutput, PipelineError>;
}

/// Per-pseudo-id centroids of `fs` rows (f64, row-major `n_ids x dim`).
fn centroids(fs: &FeatureSet, ds: &PseudoLabelDataset) -> Vec<f64> {
    let dim = fs.dim();
    let mut sums = vec![0.0; ds.n_identities * dim];
    let mut counts = vec![0usize; ds.n_identities];
    for (s, &pid) in ds.samples.iter().zip(&ds.pseudo_ids) {
        counts[pid] += 1;
        for (acc, &v) in sums[pid * dim..(pid + 1) * dim].iter_mut().zip(fs.row(s.index)) {
            *acc += v as f64;
        }
    }
    for (pid, &c) in counts.iter().enumerate() {
        for v in &mut sums[pid * dim..(pid + 1) * dim] {
            *v /= c as f64;
        }
    }
    sums
}

/// Pulls every selected row toward its pseudo-id centroid,
/// `f' = (1 - alpha) f + alpha * centroid`, then L2-normalizes all rows.
/// `alpha = 0` returns the input unchanged.
pub fn mock_train(fs: &FeatureSet, ds: &PseudoLabelDataset, alpha: f64) -> FeatureSet {
    if alpha == 0.0 {
        return fs.clone();
    }
    let dim = fs.dim();
    let cents = centroids(fs, ds);
    let mut matrix = fs.matrix().to_vec();
    for (s, &pid) in ds.samples.iter().zip(&ds.pseudo_ids) {
        let c = &cents[pid * dim..(pid + 1) * dim];
        for (v, &m) in matrix[s.index * dim..(s.index + 1) * dim].iter_mut().zip(c) {
            *v = ((1.0 - alpha) * *v as f64 + alpha * m) as f32;
        }
    }
    let pulled = fs.with_matrix(matrix).expect("convex combination of finite rows");
    l2_normalize_rows(&pulled).features
}

/// Mean within-pseudo-identity scatter `R^T R / m` of the selected rows,
/// `R` holding each row minus its pseudo-id centroid (`dim x dim`).
fn within_scatter(fs: &FeatureSet, ds: &PseudoLabelDataset) -> Vec<f64> {
    let dim = fs.dim();
    let cents = centroids(fs, ds);
    let m = ds.samples.len();
    let mut resid = Vec::with_capacity(m * dim);
    for (s, &pid) in ds.samples.iter().zip(&ds.pseudo_ids) {
        let c = &cents[pid * dim..(pid + 1) * dim];
        resid.extend(fs.row(s.index).iter().zip(c).map(|(&v, &c)| v as f64 - c));
    }
    let mut scatter = vec![0.0; dim * dim];
    // SAFETY: `resid` is m x dim and `scatter` is dim x dim, both row-major.
    unsafe {
        matrixmultiply::dgemm(
            dim,
            m,
            dim,
            1.0 / m.max(1) as f64,
            resid.as_ptr(),
            1,
            dim as isize,
            resid.as_ptr(),
            dim as isize,
            1,
            0.0,
            scatter.as_mut_ptr(),
            dim as isize,
            1,
        );
    }
    scatter
}

fn mat_vec(a: &[f64], x: &[f64], out: &mut [f64]) {
    let dim = x.len();
    for (o, row) in out.iter_mut().zip(a.chunks_exact(dim)) {
        *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
fn spectral_radius(a: &[f64], dim: usize) -> f64 {
    let mut x = vec![1.0 / (dim as f64).sqrt(); dim];
    let mut y = vec![0.0; dim];
    let mut lambda = 0.0;
    for _ in 0..200 {
        mat_vec(a, &x, &mut y);
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm;
        x.iter_mut().zip(&y).for_each(|(x, y)| *x = y / norm);
        if (next - lambda).abs() <= 1e-10 * next {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Closed-loop stand-in for fine-tuning.
///
/// Each iteration learns a linear map from the pseudo labels,
/// `T = I - alpha * S_w / lambda_max(S_w)`, where `S_w` is the
/// within-pseudo-identity scatter of the L2-normalized training rows. `T`
/// shrinks the directions along which samples sharing a pseudo id still
/// disagree; it is applied to the training, query and gallery rows, and the
/// selected training rows are then pulled toward their centroids with
/// [`mock_train`]. Pure multi-camera pseudo identities teach `T` to suppress
/// camera bias; impure ones teach it to suppress identity information.
#[derive(Debug, Clone)]
pub struct MockTrainer {
    pub alpha: f64,
}

impl MockTrainer {
    /// The learned map, or `None` when the scatter vanishes.
    fn learn(&self, train: &FeatureSet, ds: &PseudoLabelDataset) -> Option<Vec<f64>> {
        let dim = train.dim();
        let mut t = within_scatter(train, ds);
        let lmax = spectral_radius(&t, dim);
        if lmax.is_nan() || lmax <= 0.0 {
            return None;
        }
        let scale = -self.alpha / lmax;
        t.iter_mut().for_each(|v| *v *= scale);
        for i in 0..dim {
            t[i * dim + i] += 1.0;
        }
        Some(t)
    }

    fn apply(fs: &FeatureSet, t: Option<&[f64]>) -> FeatureSet {
        let unit = l2_normalize_rows(fs).features;
        let Some(t) = t else { return unit };
        let dim = fs.dim();
        let mut x = vec![0.0; dim];
        let mut y = vec![0.0; dim];
        let mut matrix = Vec::with_capacity(unit.matrix().len());
        for i in 0..unit.len() {
            x.iter_mut().zip(unit.row(i)).for_each(|(x, &v)| *x = v as f64);
            mat_vec(t, &x, &mut y);
            matrix.extend(y.iter().map(|&v| v as f32));
        }
        l2_normalize_rows(&unit.with_matrix(matrix).expect("finite linear map")).features
    }
}

impl Trainer for MockTrainer {
    fn train(&mut self, input: &TrainInput<'_>) -> Result<TrainOutput, PipelineError> {
        let unit = l2_normalize_rows(input.train).features;
        let t = self.learn(&unit, input.dataset);
        let mapped = Self::apply(&unit, t.as_deref());
        Ok(TrainOutput {
            train: mock_train(&mapped, input.dataset, self.alpha),
            query: Some(Self::apply(input.query, t.as_deref())),
            gallery: Some(Self::apply(input.gallery, t.as_deref())),
        })
    }
}

/// Runs an external command once per iteration.
///
/// The orchestrator writes `iter_<i>/` under `workdir` with the training,
/// query and gallery features, `pseudo.csv`, `batches.csv` and a
/// `manifest.txt` of `key=value` lines, then runs the command template
/// through `sh -c` with `{manifest}` replaced by the manifest path. The
/// command must exit 0 after writing `features_out.plrf` (same ids, same
/// order); `query_out.plrf` and `gallery_out.plrf` are optional.
#[derive(Debug, Clone)]
pub struct ExternalTrainer {
    pub command: String,
    pub workdir: PathBuf,
}

fn failure(iteration: usize, reason: impl Into<String>) -> PipelineError {
    PipelineError::TrainerFailure {
        iteration,
        reason: reason.into(),
    }
}

fn load_matching(path: &Path, like: &FeatureSet, iteration: usize) -> Result<FeatureSet, PipelineError> {
    let fs = load_features(path).map_err(|e| failure(iteration, format!("{}: {e}", path.display())))?;
    if fs.ids() != like.ids() || fs.cameras() != like.cameras() {
        return Err(failure(
            iteration,
            format!("{}: ids or cameras differ from the input features", path.display()),
        ));
    }
    Ok(fs)
}

impl Trainer for ExternalTrainer {
    fn train(&mut self, input: &TrainInput<'_>) -> Result<TrainOutput, PipelineError> {
        let it = input.iteration;
        let dir = self.workdir.join(format!("iter_{it}"));
        fs::create_dir_all(&dir)?;
        let path = |name: &str| dir.join(name);
        save_features(input.train, path("features.plrf"))?;
        save_features(input.query, path("query.plrf"))?;
        save_features(input.gallery, path("gallery.plrf"))?;
        write_pseudo(BufWriter::new(fs::File::create(path("pseudo.csv"))?), input.dataset)?;
        write_batches(BufWriter::new(fs::File::create(path("batches.csv"))?), input.batches)?;
        for stale in ["features_out.plrf", "query_out.plrf", "gallery_out.plrf"] {
            let _ = fs::remove_file(path(stale));
        }
        let entries = [
            ("iteration", it.to_string()),
            ("seed", input.seed.to_string()),
            ("features", path("features.plrf").display().to_string()),
            ("pseudo", path("pseudo.csv").display().to_string()),
            ("batches", path("batches.csv").display().to_string()),
            ("query", path("query.plrf").display().to_string()),
            ("gallery", path("gallery.plrf").display().to_string()),
            ("features_out", path("features_out.plrf").display().to_string()),
            ("query_out", path("query_out.plrf").display().to_string()),
            ("gallery_out", path("gallery_out.plrf").display().to_string()),
        ];
        let manifest: String = entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        let manifest_path = path("manifest.txt");
        fs::write(&manifest_path, manifest)?;

        let cmd = self
            .command
            .replace(MANIFEST_PLACEHOLDER, &manifest_path.display().to_string());
        log::info!("iteration {it}: running trainer: {cmd}");
        let status = Command::new("sh")
            .arg("-c")
            .arg(&cmd)
            .status()
            .map_err(|e| failure(it, format!("cannot spawn trainer: {e}")))?;
        if !status.success() {
            return Err(failure(it, format!("trainer exited with {status}")));
        }
        let out = path("features_out.plrf");
        if !out.exists() {
            return Err(failure(it, "trainer did not write features_out.plrf"));
        }
        let train = load_matching(&out, input.train, it)?;
        let optional = |name: &str, like: &FeatureSet| -> Result<Option<FeatureSet>, PipelineError> {
            let p = path(name);
            if p.exists() {
                load_matching(&p, like, it).map(Some)
            } else {
                Ok(None)
            }
        };
        Ok(TrainOutput {
            train,
            query: optional("query_out.plrf", input.query)?,
            gallery: optional("gallery_out.plrf", input.gallery)?,
        })
    }
}
