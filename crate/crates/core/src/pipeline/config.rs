//! `key = value` configuration files for `plr loop` and `plr synth`.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! errors. Relative paths resolve against the file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{ClusterMethod, KChoice, LoopConfig, PipelineError, SyntheticSpec, TrainerKind};
use crate::clustering::DbscanParams;
use crate::distance::Metric;

fn pairs(text: &str) -> Result<Vec<(usize, String, String)>, PipelineError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| PipelineError::Config(format!("line {}: expected key=value", n + 1)))?;
        out.push((n + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T, PipelineError> {
    v.parse()
        .map_err(|_| PipelineError::Config(format!("line {line}: invalid value {v:?} for {key}")))
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool, PipelineError> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(PipelineError::Config(format!("line {line}: invalid boolean {v:?} for {key}"))),
    }
}

/// A parsed loop file: configuration plus the feature files it names.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopFile {
    pub config: LoopConfig,
    pub train: PathBuf,
    pub query: PathBuf,
    pub gallery: PathBuf,
}

pub fn parse_loop_config(text: &str, base: &Path) -> Result<LoopFile, PipelineError> {
    let mut cfg = LoopConfig::default();
    let mut dbscan = DbscanParams::default();
    let mut method = "dbscan".to_string();
    let mut k_choice = KChoice::Auto;
    let mut trainer = "mock".to_string();
    let mut alpha = 0.5;
    let mut command = None;
    let mut paths: BTreeMap<&str, PathBuf> = BTreeMap::new();
    let mut seen = std::collections::HashSet::new();

    for (line, key, v) in pairs(text)? {
        if !seen.insert(key.clone()) {
            return Err(PipelineError::Config(format!("line {line}: duplicate key {key}")));
        }
        let k = key.as_str();
        match k {
            "train" | "query" | "gallery" => {
                let name = match k {
                    "train" => "train",
                    "query" => "query",
                    _ => "gallery",
                };
                paths.insert(name, base.join(&v));
            }
            "clustering" => method = v,
            "eps" => dbscan.eps = parse(line, k, &v)?,
            "min_samples" => dbscan.min_samples = parse(line, k, &v)?,
            "metric" => dbscan.metric = parse::<Metric>(line, k, &v)?,
            "kmeans_k" => {
                k_choice = if v == "auto" {
                    KChoice::Auto
                } else {
                    KChoice::Fixed(parse(line, k, &v)?)
                }
            }
            "min_size" => cfg.rules.min_size = parse(line, k, &v)?,
            "min_cameras" => cfg.rules.min_cameras = parse(line, k, &v)?,
            "p" => cfg.pk.p = parse(line, k, &v)?,
            "k" => cfg.pk.k = parse(line, k, &v)?,
            "use_camera_norm" => cfg.use_camera_norm = parse_bool(line, k, &v)?,
            "max_iterations" => cfg.max_iterations = parse(line, k, &v)?,
            "patience" => cfg.patience = parse(line, k, &v)?,
            "min_delta" => cfg.min_delta = parse(line, k, &v)?,
            "trainer" => trainer = v,
            "alpha" => alpha = parse(line, k, &v)?,
            "command" => command = Some(v),
            "seed" => cfg.seed = parse(line, k, &v)?,
            "eval_metric" => cfg.eval_metric = parse(line, k, &v)?,
            "max_rank" => cfg.max_rank = parse(line, k, &v)?,
            _ => {
                if let Some(it) = k.strip_prefix("eps.") {
                    let it: usize = parse(line, k, it)?;
                    cfg.eps_overrides.insert(it, parse(line, k, &v)?);
                } else {
                    return Err(PipelineError::Config(format!("line {line}: unknown key {k}")));
                }
            }
        }
    }
    cfg.clustering = match method.as_str() {
        "dbscan" => ClusterMethod::Dbscan(dbscan),
        "kmeans" => ClusterMethod::Kmeans(k_choice),
        other => return Err(PipelineError::Config(format!("unknown clustering {other:?}"))),
    };
    cfg.trainer = match (trainer.as_str(), command) {
        ("mock", _) => TrainerKind::Mock { alpha },
        ("external", Some(command)) => TrainerKind::External { command },
        ("external", None) => {
            return Err(PipelineError::Config("trainer=external requires command".into()))
        }
        (other, _) => return Err(PipelineError::Config(format!("unknown trainer {other:?}"))),
    };
    cfg.validate()?;
    let mut take = |name: &str| {
        paths
            .remove(name)
            .ok_or_else(|| PipelineError::Config(format!("missing required key {name}")))
    };
    Ok(LoopFile {
        train: take("train")?,
        query: take("query")?,
        gallery: take("gallery")?,
        config: cfg,
    })
}

pub fn parse_synthetic_spec(text: &str) -> Result<SyntheticSpec, PipelineError> {
    let mut spec = SyntheticSpec::default();
    for (line, key, v) in pairs(text)? {
        let k = key.as_str();
        match k {
            "n_identities" => spec.n_identities = parse(line, k, &v)?,
            "samples_per_identity" => spec.samples_per_identity = parse(line, k, &v)?,
            "n_cameras" => spec.n_cameras = parse(line, k, &v)?,
            "dim" => spec.dim = parse(line, k, &v)?,
            "class_separation" => spec.class_separation = parse(line, k, &v)?,
            "camera_shift" => spec.camera_shift = parse(line, k, &v)?,
            "noise_sigma" => spec.noise_sigma = parse(line, k, &v)?,
            "seed" => spec.seed = parse(line, k, &v)?,
            _ => return Err(PipelineError::Config(format!("line {line}: unknown key {k}"))),
        }
    }
    Ok(spec)
}
