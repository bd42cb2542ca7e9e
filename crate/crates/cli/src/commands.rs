use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use plr_core::camera_norm::{apply_camera_stats, camera_statistics};
use plr_core::clustering::{dbscan, k_heuristic, kmeans, sweep_eps, ClusterError, ClusterParams, DbscanParams};
use plr_core::csv_io::{
    read_labels, read_pseudo, write_batches, write_camera_stats, write_eval_result, write_history, write_labels,
    write_pseudo, write_selection_report, write_sweep, write_timings,
};
use plr_core::features::{load_features, save_features, FeatureError, FeatureSet};
use plr_core::metrics::{evaluate, MetricsError};
use plr_core::pipeline::{generate_synthetic, parse_loop_config, parse_synthetic_spec, run_loop, PipelineError, SyntheticError};
use plr_core::rerank::{k_reciprocal_rerank, RerankError, RerankParams};
use plr_core::sampler::{pk_epoch, PkConfig, SamplerError};
use plr_core::selection::{select_clusters, SelectionError, SelectionRules};
use plr_core::{camera_normalize, pairwise_distances, Metric};

/// Pseudo-label refinement for unsupervised person re-identification.
#[derive(Debug, Parser)]
#[command(name = "plr")]
pub struct Cli {
    /// Cap the number of worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<NonZeroUsize>,
    /// More log output on standard error (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-camera standardization of a feature file.
    Normalize(NormalizeArgs),
    /// DBSCAN or k-means cluster labels.
    Cluster(ClusterArgs),
    /// Cluster count and noise portion over a grid of eps values.
    SweepEps(SweepArgs),
    /// Keep reliable clusters and assign pseudo identities.
    Select(SelectArgs),
    /// One epoch of PK batches from a pseudo-label file.
    Sample(SampleArgs),
    /// CMC and mAP of a query/gallery split.
    Eval(EvalArgs),
    /// The full iterative refinement loop.
    Loop(LoopArgs),
    /// Write a synthetic train/query/gallery split.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MetricArg {
    Euclidean,
    Cosine,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Euclidean => Metric::Euclidean,
            MetricArg::Cosine => Metric::Cosine,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Algo {
    Dbscan,
    Kmeans,
}

#[derive(Debug, Clone, Copy)]
enum KArg {
    Auto,
    Fixed(usize),
}

impl FromStr for KArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(KArg::Auto);
        }
        s.parse()
            .map(KArg::Fixed)
            .map_err(|_| format!("expected a positive integer or `auto`, got {s:?}"))
    }
}

#[derive(Debug, Args)]
pub struct NormalizeArgs {
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Per-camera statistics CSV.
    #[arg(long, value_name = "CSV")]
    stats_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    #[arg(long, value_enum)]
    algo: Algo,
    #[arg(long, default_value_t = 0.42, conflicts_with = "k")]
    eps: f64,
    #[arg(long, default_value_t = 4, conflicts_with = "k")]
    min_samples: usize,
    #[arg(long, value_enum, default_value = "euclidean")]
    metric: MetricArg,
    /// Number of k-means clusters, or `auto` for floor(N/15).
    #[arg(long, value_name = "N|auto")]
    k: Option<KArg>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "CSV")]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Comma-separated eps grid.
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    eps: Vec<f64>,
    #[arg(long, default_value_t = 4)]
    min_samples: usize,
    #[arg(long, value_enum, default_value = "euclidean")]
    metric: MetricArg,
    /// Output CSV (standard output when omitted).
    #[arg(long, value_name = "CSV")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    #[arg(long, value_name = "CSV")]
    labels: PathBuf,
    #[arg(long, default_value_t = 4)]
    min_size: usize,
    #[arg(long, default_value_t = 2)]
    min_cameras: usize,
    #[arg(long, value_name = "CSV")]
    out: PathBuf,
    #[arg(long, value_name = "CSV")]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long, value_name = "CSV")]
    pseudo: PathBuf,
    #[arg(long, default_value_t = 16)]
    p: usize,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "CSV")]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    query: PathBuf,
    #[arg(long, value_name = "FILE")]
    gallery: PathBuf,
    #[arg(long, value_enum, default_value = "euclidean", conflicts_with = "rerank")]
    metric: MetricArg,
    /// k-reciprocal re-ranking on top of the Euclidean distance.
    #[arg(long)]
    rerank: bool,
    #[arg(long, default_value_t = 20, requires = "rerank")]
    k1: usize,
    #[arg(long, default_value_t = 6, requires = "rerank")]
    k2: usize,
    #[arg(long, default_value_t = 0.3, requires = "rerank")]
    lambda: f64,
    /// Camera-normalize query and gallery together before matching.
    #[arg(long)]
    camera_norm: bool,
    #[arg(long, default_value_t = NonZeroUsize::new(10).unwrap())]
    max_rank: NonZeroUsize,
    /// Output CSV (standard output when omitted).
    #[arg(long, value_name = "CSV")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LoopArgs {
    /// `key = value` configuration file.
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Receives history.csv, timings.csv and external trainer files.
    #[arg(long, value_name = "DIR")]
    workdir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// `key = value` spec file; omitted keys keep their defaults.
    #[arg(long, value_name = "FILE")]
    spec: Option<PathBuf>,
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
    /// Files are written as `<prefix>train.plrf`, `<prefix>query.plrf` and
    /// `<prefix>gallery.plrf`.
    #[arg(long, value_name = "PATH")]
    out_prefix: String,
}

/// `"message [Variant]"` for library errors, the plain chain otherwise.
pub fn describe(err: &anyhow::Error) -> String {
    fn variant(debug: String) -> String {
        let head = debug.split([' ', '{']).next().unwrap_or_default();
        head.split('(').filter(|s| !s.is_empty()).collect::<Vec<_>>().join("::")
    }
    let kind = if let Some(e) = err.downcast_ref::<PipelineError>() {
        Some(variant(format!("{e:?}")))
    } else if let Some(e) = err.downcast_ref::<ClusterError>() {
        Some(variant(format!("{e:?}")))
    } else if let Some(e) = err.downcast_ref::<SelectionError>() {
        Some(variant(format!("{e:?}")))
    } else if let Some(e) = err.downcast_ref::<SamplerError>() {
        Some(variant(format!("{e:?}")))
    } else if let Some(e) = err.downcast_ref::<MetricsError>() {
        Some(variant(format!("{e:?}")))
    } else if let Some(e) = err.downcast_ref::<RerankError>() {
        Some(variant(format!("{e:?}")))
    } else if let Some(e) = err.downcast_ref::<FeatureError>() {
        Some(variant(format!("{e:?}")))
    } else {
        err.downcast_ref::<SyntheticError>().map(|e| variant(format!("{e:?}")))
    };
    match kind {
        Some(k) => format!("{err:#} [{k}]"),
        None => format!("{err:#}"),
    }
}

fn load(path: &Path) -> Result<FeatureSet> {
    load_features(path).map_err(|e| anyhow::Error::new(e).context(format!("reading {}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Normalize(a) => normalize(a),
        Command::Cluster(a) => cluster(a),
        Command::SweepEps(a) => sweep(a),
        Command::Select(a) => select(a),
        Command::Sample(a) => sample(a),
        Command::Eval(a) => eval(a),
        Command::Loop(a) => run_loop_cmd(a),
        Command::Synth(a) => synth(a),
    }
}

fn normalize(a: NormalizeArgs) -> Result<()> {
    let fs = load(&a.input)?;
    let stats = camera_statistics(&fs);
    let out = apply_camera_stats(&fs, &stats);
    save_features(&out, &a.out)?;
    if let Some(p) = a.stats_out {
        write_camera_stats(create(&p)?, &stats)?;
    }
    log::info!("normalized {} samples over {} cameras", fs.len(), stats.len());
    Ok(())
}

fn cluster(a: ClusterArgs) -> Result<()> {
    let fs = load(&a.input)?;
    let ca = match a.algo {
        Algo::Dbscan => {
            if a.k.is_some() {
                Cli::command()
                    .error(ErrorKind::ArgumentConflict, "--k only applies to --algo kmeans")
                    .exit();
            }
            dbscan(
                &fs,
                &DbscanParams {
                    eps: a.eps,
                    min_samples: a.min_samples,
                    metric: a.metric.into(),
                },
            )?
        }
        Algo::Kmeans => {
            let k = match a.k.unwrap_or(KArg::Auto) {
                KArg::Auto => k_heuristic(fs.len())?,
                KArg::Fixed(k) => k,
            };
            kmeans(&fs, k, a.seed)?
        }
    };
    write_labels(create(&a.out)?, &fs, &ca)?;
    eprintln!(
        "{}: {} clusters, {} noise of {} samples",
        ca.params,
        ca.n_clusters,
        ca.n_noise(),
        fs.len()
    );
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let fs = load(&a.input)?;
    let points = sweep_eps(&fs, &a.eps, a.min_samples, a.metric.into())?;
    write_sweep(output(a.out.as_deref())?, &points)?;
    Ok(())
}

fn select(a: SelectArgs) -> Result<()> {
    let fs = load(&a.input)?;
    let params = ClusterParams::Dbscan(DbscanParams::default());
    let ca = read_labels(open(&a.labels)?, &fs, params).with_context(|| format!("reading {}", a.labels.display()))?;
    let rules = SelectionRules {
        min_size: a.min_size,
        min_cameras: a.min_cameras,
    };
    let ds = select_clusters(&fs, &ca, &rules)?;
    write_pseudo(create(&a.out)?, &ds)?;
    if let Some(p) = a.report {
        write_selection_report(create(&p)?, &fs, &ds.report)?;
    }
    eprintln!(
        "kept {} of {} clusters, {} samples ({:.2}%)",
        ds.n_identities, ca.n_clusters, ds.report.n_selected_samples, ds.report.portion_selected
    );
    Ok(())
}

fn sample(a: SampleArgs) -> Result<()> {
    let ds = read_pseudo(open(&a.pseudo)?).with_context(|| format!("reading {}", a.pseudo.display()))?;
    let batches = pk_epoch(
        &ds,
        &PkConfig {
            p: a.p,
            k: a.k,
            seed: a.seed,
        },
    )?;
    write_batches(create(&a.out)?, &batches)?;
    log::info!("{} batches of {}", batches.len(), a.p * a.k);
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let mut query = load(&a.query)?;
    let mut gallery = load(&a.gallery)?;
    if a.camera_norm {
        let joint = camera_normalize(&query.concat(&gallery)?);
        let q: Vec<usize> = (0..query.len()).collect();
        let g: Vec<usize> = (query.len()..joint.len()).collect();
        query = joint.subset(&q)?;
        gallery = joint.subset(&g)?;
    }
    let qp = query
        .persons()
        .context("query features carry no person ids")?;
    let gp = gallery
        .persons()
        .context("gallery features carry no person ids")?;
    let dist = if a.rerank {
        k_reciprocal_rerank(
            &query,
            &gallery,
            &RerankParams {
                k1: a.k1,
                k2: a.k2,
                lambda: a.lambda,
            },
        )?
    } else {
        pairwise_distances(&query, &gallery, a.metric.into())?
    };
    let r = evaluate(&dist, qp, query.cameras(), gp, gallery.cameras(), a.max_rank.get())?;
    write_eval_result(output(a.out.as_deref())?, &r)?;
    log::info!("{} valid queries", r.n_valid_queries);
    Ok(())
}

fn run_loop_cmd(a: LoopArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let base = a.config.parent().unwrap_or(Path::new("."));
    let file = parse_loop_config(&text, base)?;
    let train = load(&file.train)?;
    let query = load(&file.query)?;
    let gallery = load(&file.gallery)?;
    std::fs::create_dir_all(&a.workdir).with_context(|| format!("creating {}", a.workdir.display()))?;
    let outcome = run_loop(&train, &query, &gallery, &file.config, Some(&a.workdir))?;
    write_history(create(&a.workdir.join("history.csv"))?, &outcome)?;
    write_timings(create(&a.workdir.join("timings.csv"))?, &outcome)?;
    let best = outcome.best_record();
    eprintln!(
        "{} iterations ({:?}); best iteration {}: rank-1 {:.4}, mAP {:.4}",
        outcome.records.len(),
        outcome.stop,
        best.iteration,
        best.eval.rank(1),
        best.eval.map
    );
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_synthetic_spec(&text)?
        }
        None => Default::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let data = generate_synthetic(&spec)?;
    for (name, fs) in [("train", &data.train), ("query", &data.query), ("gallery", &data.gallery)] {
        let path = PathBuf::from(format!("{}{name}.plrf", a.out_prefix));
        save_features(fs, &path).map_err(|e| anyhow::Error::new(e).context(format!("writing {}", path.display())))?;
    }
    eprintln!(
        "train {} / query {} / gallery {} samples",
        data.train.len(),
        data.query.len(),
        data.gallery.len()
    );
    Ok(())
}
