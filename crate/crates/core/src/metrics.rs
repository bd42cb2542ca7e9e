//! CMC and mAP under the single-gallery-shot Market-1501 protocol.
//!
//! For each query, gallery entries of the same person seen by the same
//! camera are removed, as are junk entries (person `-1`). The remaining
//! gallery is ranked by `(distance, person, index)`.

use rayon::prelude::*;
use thiserror::Error;

use crate::distance::DistanceMatrix;

/// Person id marking junk gallery images.
pub const JUNK_PERSON: i64 = -1;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no query has a valid gallery match")]
    NoValidQuery,
    #[error("label length mismatch: {what} has {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("max_rank must be at least 1")]
    InvalidRank,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    /// `cmc[r - 1]` is the match rate at rank `r`.
    pub cmc: Vec<f64>,
    pub map: f64,
    pub n_valid_queries: usize,
}

impl EvalResult {
    /// Match rate at 1-based `rank`; ranks past the end saturate.
    pub fn rank(&self, rank: usize) -> f64 {
        let r = rank.clamp(1, self.cmc.len());
        self.cmc[r - 1]
    }
}

/// Per-query outcome: 0-based position of the first hit and average precision.
fn score_query(
    dist: &[f32],
    q_person: i64,
    q_cam: u32,
    g_persons: &[i64],
    g_cams: &[u32],
) -> Option<(usize, f64)> {
    let mut kept: Vec<usize> = (0..dist.len())
        .filter(|&j| {
            let p = g_persons[j];
            p != JUNK_PERSON && !(p == q_person && g_cams[j] == q_cam)
        })
        .collect();
    if !kept.iter().any(|&j| g_persons[j] == q_person) {
        return None;
    }
    kept.sort_unstable_by(|&a, &b| {
        dist[a]
            .total_cmp(&dist[b])
            .then(g_persons[a].cmp(&g_persons[b]))
            .then(a.cmp(&b))
    });
    let mut first = None;
    let mut hits = 0usize;
    let mut precision_sum = 0.0;
    for (pos, &j) in kept.iter().enumerate() {
        if g_persons[j] == q_person {
            hits += 1;
            precision_sum += hits as f64 / (pos + 1) as f64;
            first.get_or_insert(pos);
        }
    }
    Some((first.unwrap(), precision_sum / hits as f64))
}

fn check_len(what: &'static str, got: usize, expected: usize) -> Result<(), MetricsError> {
    if got == expected {
        Ok(())
    } else {
        Err(MetricsError::LengthMismatch {
            what,
            got,
            expected,
        })
    }
}

pub fn evaluate(
    dist: &DistanceMatrix,
    q_persons: &[i64],
    q_cams: &[u32],
    g_persons: &[i64],
    g_cams: &[u32],
    max_rank: usize,
) -> Result<EvalResult, MetricsError> {
    check_len("query persons", q_persons.len(), dist.rows())?;
    check_len("query cameras", q_cams.len(), dist.rows())?;
    check_len("gallery persons", g_persons.len(), dist.cols())?;
    check_len("gallery cameras", g_cams.len(), dist.cols())?;
    if max_rank == 0 {
        return Err(MetricsError::InvalidRank);
    }
    let scored: Vec<Option<(usize, f64)>> = (0..dist.rows())
        .into_par_iter()
        .map(|i| score_query(dist.row(i), q_persons[i], q_cams[i], g_persons, g_cams))
        .collect();

    let mut first_hits = vec![0usize; max_rank];
    let mut ap_sum = 0.0;
    let mut valid = 0usize;
    for (first, ap) in scored.into_iter().flatten() {
        valid += 1;
        ap_sum += ap;
        if first < max_rank {
            first_hits[first] += 1;
        }
    }
    if valid == 0 {
        return Err(MetricsError::NoValidQuery);
    }
    let mut cmc = Vec::with_capacity(max_rank);
    let mut cum = 0usize;
    for h in first_hits {
        cum += h;
        cmc.push(cum as f64 / valid as f64);
    }
    Ok(EvalResult {
        cmc,
        map: ap_sum / valid as f64,
        n_valid_queries: valid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::Metric;

    fn dm(rows: usize, cols: usize, v: Vec<f32>) -> DistanceMatrix {
        DistanceMatrix::from_values(rows, cols, Metric::Euclidean, v)
    }

    #[test]
    fn perfect_single_query() {
        let d = dm(1, 2, vec![0.1, 0.5]);
        let r = evaluate(&d, &[3], &[0], &[3, 4], &[1, 1], 5).unwrap();
        assert_eq!(r.rank(1), 1.0);
        assert_eq!(r.map, 1.0);
        assert_eq!(r.n_valid_queries, 1);
        assert_eq!(r.cmc.len(), 5);
    }

    #[test]
    fn same_camera_match_is_filtered() {
        let d = dm(1, 2, vec![0.1, 0.5]);
        let err = evaluate(&d, &[3], &[0], &[3, 4], &[0, 1], 1).unwrap_err();
        assert_eq!(err, MetricsError::NoValidQuery);
    }

    #[test]
    fn junk_is_removed_before_ranking() {
        // junk at the top would otherwise push the hit to rank 2
        let d = dm(1, 3, vec![0.0, 0.2, 0.1]);
        let r = evaluate(&d, &[5], &[0], &[-1, 5, 9], &[1, 1, 1], 3).unwrap();
        assert_eq!(r.cmc, vec![0.0, 1.0, 1.0]);
        assert_eq!(r.map, 0.5);
    }

    #[test]
    fn average_precision_by_hand() {
        // ranking: hit, miss, hit, miss, hit -> AP = (1 + 2/3 + 3/5) / 3
        let d = dm(1, 5, vec![0.1, 0.2, 0.3, 0.4, 0.5]);
        let r = evaluate(&d, &[1], &[0], &[1, 2, 1, 3, 1], &[1; 5], 1).unwrap();
        assert!((r.map - (1.0 + 2.0 / 3.0 + 0.6) / 3.0).abs() < 1e-12);
        assert_eq!(r.cmc, vec![1.0]);
    }

    #[test]
    fn ties_break_on_person_id() {
        // equal distances: the smaller person id ranks first
        let d = dm(1, 2, vec![0.3, 0.3]);
        let r = evaluate(&d, &[1], &[0], &[2, 1], &[1, 1], 1).unwrap();
        assert_eq!(r.rank(1), 1.0);
        let r = evaluate(&d, &[5], &[0], &[5, 4], &[1, 1], 2).unwrap();
        assert_eq!(r.cmc, vec![0.0, 1.0]);
    }

    #[test]
    fn length_mismatch_reported() {
        let d = dm(1, 2, vec![0.1, 0.2]);
        assert!(matches!(
            evaluate(&d, &[1], &[0], &[1], &[0, 0], 1),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert_eq!(
            evaluate(&d, &[1], &[0], &[1, 2], &[1, 1], 0),
            Err(MetricsError::InvalidRank)
        );
    }
}
