//! Cluster selection: turn a clustering into a pseudo-labeled dataset.
//!
//! A cluster survives when it has at least `min_size` samples and those
//! samples come from at least `min_cameras` distinct cameras. Survivors are
//! renumbered `0..` in ascending order of their original cluster id.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::clustering::{ClusterAssignment, NOISE};
use crate::features::{FeatureSet, SampleRef};

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("no cluster survived selection ({n_clusters} candidates)")]
    EmptySelection { n_clusters: usize },
    #[error("assignment has {got} labels for {expected} samples")]
    LengthMismatch { got: usize, expected: usize },
    #[error("invalid selection rules: {0}")]
    InvalidRules(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectionRules {
    pub min_size: usize,
    pub min_cameras: usize,
}

impl Default for SelectionRules {
    fn default() -> Self {
        Self {
            min_size: 4,
            min_cameras: 2,
        }
    }
}

impl SelectionRules {
    pub fn validate(&self) -> Result<(), SelectionError> {
        if self.min_size == 0 || self.min_cameras == 0 {
            return Err(SelectionError::InvalidRules(
                "min_size and min_cameras must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decision {
    Kept,
    TooSmall,
    SingleCamera,
    Noise,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Kept => "kept",
            Decision::TooSmall => "too_small",
            Decision::SingleCamera => "single_camera",
            Decision::Noise => "noise",
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRecord {
    pub cluster: usize,
    pub size: usize,
    pub n_cameras: usize,
    pub decision: Decision,
    /// Pseudo id given to the cluster when kept.
    pub pseudo_id: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    pub n_input_samples: usize,
    pub n_clustered: usize,
    pub n_selected_clusters: usize,
    pub n_selected_samples: usize,
    /// Percentage of input samples retained.
    pub portion_selected: f64,
    pub clusters: Vec<ClusterRecord>,
    /// Per-sample outcome, indexed like the source feature set.
    pub sample_decisions: Vec<Decision>,
}

impl SelectionReport {
    /// Number of samples excluded for `reason`.
    pub fn dropped(&self, reason: Decision) -> usize {
        self.sample_decisions.iter().filter(|&&d| d == reason).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelDataset {
    /// Selected samples in ascending source index.
    pub samples: Vec<SampleRef>,
    pub pseudo_ids: Vec<usize>,
    pub n_identities: usize,
    pub report: SelectionReport,
}

impl PseudoLabelDataset {
    /// Sample positions (within `samples`) of each pseudo id.
    pub fn identity_members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_identities];
        for (slot, &pid) in self.pseudo_ids.iter().enumerate() {
            out[pid].push(slot);
        }
        out
    }

    /// Labels over the full source set: the pseudo id for selected samples,
    /// [`NOISE`] for everything else.
    pub fn induced_labels(&self) -> Vec<i32> {
        let mut labels = vec![NOISE; self.report.n_input_samples];
        for (s, &pid) in self.samples.iter().zip(&self.pseudo_ids) {
            labels[s.index] = pid as i32;
        }
        labels
    }
}

pub fn select_clusters(
    fs: &FeatureSet,
    ca: &ClusterAssignment,
    rules: &SelectionRules,
) -> Result<PseudoLabelDataset, SelectionError> {
    rules.validate()?;
    if ca.labels.len() != fs.len() {
        return Err(SelectionError::LengthMismatch {
            got: ca.labels.len(),
            expected: fs.len(),
        });
    }
    let members = ca.members();
    let mut sample_decisions: Vec<Decision> = ca
        .labels
        .iter()
        .map(|&l| if l == NOISE { Decision::Noise } else { Decision::Kept })
        .collect();
    let mut clusters = Vec::with_capacity(members.len());
    let mut pseudo_of = vec![None; members.len()];
    let mut next_pseudo = 0;
    for (cluster, idx) in members.iter().enumerate() {
        let cams: BTreeSet<u32> = idx.iter().map(|&i| fs.cameras()[i]).collect();
        let decision = if idx.len() < rules.min_size {
            Decision::TooSmall
        } else if cams.len() < rules.min_cameras {
            Decision::SingleCamera
        } else {
            Decision::Kept
        };
        let pseudo_id = (decision == Decision::Kept).then(|| {
            next_pseudo += 1;
            next_pseudo - 1
        });
        pseudo_of[cluster] = pseudo_id;
        if decision != Decision::Kept {
            for &i in idx {
                sample_decisions[i] = decision;
            }
        }
        clusters.push(ClusterRecord {
            cluster,
            size: idx.len(),
            n_cameras: cams.len(),
            decision,
            pseudo_id,
        });
    }

    let mut samples = Vec::new();
    let mut pseudo_ids = Vec::new();
    for (i, &l) in ca.labels.iter().enumerate() {
        if l == NOISE {
            continue;
        }
        if let Some(pid) = pseudo_of[l as usize] {
            samples.push(fs.sample(i));
            pseudo_ids.push(pid);
        }
    }
    let n_input_samples = fs.len();
    let report = SelectionReport {
        n_input_samples,
        n_clustered: n_input_samples - ca.n_noise(),
        n_selected_clusters: next_pseudo,
        n_selected_samples: samples.len(),
        portion_selected: 100.0 * samples.len() as f64 / n_input_samples as f64,
        clusters,
        sample_decisions,
    };
    if next_pseudo == 0 {
        return Err(SelectionError::EmptySelection {
            n_clusters: ca.n_clusters,
        });
    }
    Ok(PseudoLabelDataset {
        samples,
        pseudo_ids,
        n_identities: next_pseudo,
        report,
    })
}
