//! CSV interchange formats (labels, pseudo labels, batches, reports, results).
//!
//! Every file starts with a header row. Writers take any `io::Write` so the
//! same bytes can go to a file or to standard output.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use thiserror::Error;

use crate::camera_norm::CameraStats;
use crate::clustering::{ClusterAssignment, ClusterParams, SweepPoint, NOISE};
use crate::features::{FeatureSet, SampleRef};
use crate::metrics::EvalResult;
use crate::pipeline::LoopOutcome;
use crate::sampler::Batch;
use crate::selection::{Decision, PseudoLabelDataset, SelectionReport};

#[derive(Debug, Error)]
pub enum CsvError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Invalid { line: usize, reason: String },
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w)
}

fn invalid(line: usize, reason: impl Into<String>) -> CsvError {
    CsvError::Invalid {
        line,
        reason: reason.into(),
    }
}

fn records<R: Read>(r: R, header: &[&str]) -> Result<Vec<csv::StringRecord>, CsvError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let got: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if got != header {
        return Err(invalid(1, format!("expected header {}, got {}", header.join(","), got.join(","))));
    }
    rdr.records().map(|r| r.map_err(CsvError::from)).collect()
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: usize) -> Result<T, CsvError> {
    let raw = rec.get(i).ok_or_else(|| invalid(line, "missing field"))?;
    raw.parse()
        .map_err(|_| invalid(line, format!("cannot parse {raw:?}")))
}

/// `id,camera,cluster`; noise is `-1`.
pub fn write_labels<W: Write>(w: W, fs: &FeatureSet, ca: &ClusterAssignment) -> Result<(), CsvError> {
    let mut out = writer(w);
    out.write_record(["id", "camera", "cluster"])?;
    for (i, &label) in ca.labels.iter().enumerate() {
        out.write_record([fs.ids()[i].as_str(), &fs.cameras()[i].to_string(), &label.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a labels file written for `fs`; ids must match row by row.
pub fn read_labels<R: Read>(r: R, fs: &FeatureSet, params: ClusterParams) -> Result<ClusterAssignment, CsvError> {
    let rows = records(r, &["id", "camera", "cluster"])?;
    if rows.len() != fs.len() {
        return Err(invalid(rows.len() + 1, format!("{} label rows for {} samples", rows.len(), fs.len())));
    }
    let mut labels = Vec::with_capacity(rows.len());
    let mut seen = BTreeSet::new();
    for (i, rec) in rows.iter().enumerate() {
        let line = i + 2;
        if rec.get(0) != Some(fs.ids()[i].as_str()) {
            return Err(invalid(line, format!("id {:?} does not match feature row {i}", rec.get(0).unwrap_or(""))));
        }
        let label: i32 = field(rec, 2, line)?;
        if label < NOISE {
            return Err(invalid(line, format!("invalid cluster {label}")));
        }
        if label != NOISE {
            seen.insert(label);
        }
        labels.push(label);
    }
    let n_clusters = seen.len();
    if seen.iter().enumerate().any(|(i, &l)| l != i as i32) {
        return Err(invalid(1, "cluster ids are not contiguous from 0"));
    }
    Ok(ClusterAssignment {
        labels,
        n_clusters,
        params,
    })
}

/// `id,camera,pseudo_id`.
pub fn write_pseudo<W: Write>(w: W, ds: &PseudoLabelDataset) -> Result<(), CsvError> {
    let mut out = writer(w);
    out.write_record(["id", "camera", "pseudo_id"])?;
    for (s, pid) in ds.samples.iter().zip(&ds.pseudo_ids) {
        out.write_record([s.id.as_str(), &s.camera.to_string(), &pid.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Rebuilds a dataset from a pseudo-label file. Sample indices are row
/// positions in the file; the report only carries counts.
pub fn read_pseudo<R: Read>(r: R) -> Result<PseudoLabelDataset, CsvError> {
    let rows = records(r, &["id", "camera", "pseudo_id"])?;
    let mut samples = Vec::with_capacity(rows.len());
    let mut pseudo_ids = Vec::with_capacity(rows.len());
    for (i, rec) in rows.iter().enumerate() {
        let line = i + 2;
        samples.push(SampleRef {
            index: i,
            id: rec.get(0).unwrap_or_default().to_string(),
            camera: field(rec, 1, line)?,
        });
        pseudo_ids.push(field::<usize>(rec, 2, line)?);
    }
    let distinct: BTreeSet<usize> = pseudo_ids.iter().copied().collect();
    if distinct.iter().enumerate().any(|(i, &p)| p != i) {
        return Err(invalid(1, "pseudo ids are not contiguous from 0"));
    }
    let n = samples.len();
    Ok(PseudoLabelDataset {
        samples,
        pseudo_ids,
        n_identities: distinct.len(),
        report: SelectionReport {
            n_input_samples: n,
            n_clustered: n,
            n_selected_clusters: distinct.len(),
            n_selected_samples: n,
            portion_selected: if n == 0 { 0.0 } else { 100.0 },
            clusters: Vec::new(),
            sample_decisions: vec![Decision::Kept; n],
        },
    })
}

/// `batch,slot,id,pseudo_id`.
pub fn write_batches<W: Write>(w: W, batches: &[Batch]) -> Result<(), CsvError> {
    let mut out = writer(w);
    out.write_record(["batch", "slot", "id", "pseudo_id"])?;
    for (b, batch) in batches.iter().enumerate() {
        for (slot, e) in batch.entries.iter().enumerate() {
            out.write_record([&b.to_string(), &slot.to_string(), e.sample.id.as_str(), &e.pseudo_id.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// One row per cluster plus a trailing `-1` row for noise.
pub fn write_selection_report<W: Write>(w: W, fs: &FeatureSet, report: &SelectionReport) -> Result<(), CsvError> {
    let mut out = writer(w);
    out.write_record(["cluster", "size", "cameras", "decision", "pseudo_id"])?;
    for c in &report.clusters {
        out.write_record([
            c.cluster.to_string(),
            c.size.to_string(),
            c.n_cameras.to_string(),
            c.decision.to_string(),
            c.pseudo_id.map(|p| p.to_string()).unwrap_or_default(),
        ])?;
    }
    let noise: Vec<usize> = report
        .sample_decisions
        .iter()
        .enumerate()
        .filter(|(_, &d)| d == Decision::Noise)
        .map(|(i, _)| i)
        .collect();
    let cams: BTreeSet<u32> = noise.iter().map(|&i| fs.cameras()[i]).collect();
    out.write_record([
        NOISE.to_string(),
        noise.len().to_string(),
        cams.len().to_string(),
        Decision::Noise.to_string(),
        String::new(),
    ])?;
    out.flush()?;
    Ok(())
}

/// `metric,value` rows for rank-1, rank-5, rank-10 and mAP.
pub fn write_eval_result<W: Write>(w: W, r: &EvalResult) -> Result<(), CsvError> {
    let mut out = writer(w);
    out.write_record(["metric", "value"])?;
    for (name, v) in [
        ("rank-1", r.rank(1)),
        ("rank-5", r.rank(5)),
        ("rank-10", r.rank(10)),
        ("mAP", r.map),
    ] {
        out.write_record([name, &format!("{v:.4}")])?;
    }
    out.flush()?;
    Ok(())
}

/// `camera,count,mean_norm,std_min,std_max`.
pub fn write_camera_stats<W: Write>(w: W, stats: &[CameraStats]) -> Result<(), CsvError> {
    let mut out = writer(w);
    out.write_record(["camera", "count", "mean_norm", "std_min", "std_max"])?;
    for s in stats {
        out.write_record([
            s.camera.to_string(),
            s.count.to_string(),
            s.mean_norm().to_string(),
            s.std_min().to_string(),
            s.std_max().to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// `eps,n_clusters,n_noise,noise_portion`.
pub fn write_sweep<W: Write>(w: W, points: &[SweepPoint]) -> Result<(), CsvError> {
    let mut out = writer(w);
    out.write_record(["eps", "n_clusters", "n_noise", "noise_portion"])?;
    for p in points {
        out.write_record([
            p.eps.to_string(),
            p.n_clusters.to_string(),
            p.n_noise.to_string(),
            format!("{:.4}", p.noise_portion),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// One row per iteration; `best` marks the iteration kept as the result.
/// Wall time is left out so identical runs give identical files.
pub fn write_history<W: Write>(w: W, outcome: &LoopOutcome) -> Result<(), CsvError> {
    let mut out = writer(w);
    out.write_record([
        "iteration",
        "n_clusters_raw",
        "n_clusters_selected",
        "portion_selected",
        "selected_purity",
        "rank1",
        "rank5",
        "rank10",
        "map",
        "n_valid_queries",
        "best",
    ])?;
    for (i, r) in outcome.records.iter().enumerate() {
        out.write_record([
            r.iteration.to_string(),
            r.n_clusters_raw.to_string(),
            r.n_clusters_selected.to_string(),
            format!("{:.4}", r.portion_selected),
            r.selected_purity.map(|p| format!("{p:.6}")).unwrap_or_default(),
            format!("{:.6}", r.eval.rank(1)),
            format!("{:.6}", r.eval.rank(5)),
            format!("{:.6}", r.eval.rank(10)),
            format!("{:.6}", r.eval.map),
            r.eval.n_valid_queries.to_string(),
            ((i == outcome.best) as u8).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// `iteration,wall_time_s`.
pub fn write_timings<W: Write>(w: W, outcome: &LoopOutcome) -> Result<(), CsvError> {
    let mut out = writer(w);
    out.write_record(["iteration", "wall_time_s"])?;
    for r in &outcome.records {
        out.write_record([r.iteration.to_string(), format!("{:.6}", r.wall_time.as_secs_f64())])?;
    }
    out.flush()?;
    Ok(())
}
