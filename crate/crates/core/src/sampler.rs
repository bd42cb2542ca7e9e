//! PK batches: `p` pseudo identities with `k` samples each.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::features::SampleRef;
use crate::selection::PseudoLabelDataset;

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("need at least {p} identities, dataset has {available}")]
    TooFewIdentities { p: usize, available: usize },
    #[error("pseudo id {pseudo_id} has {size} samples, fewer than k={k}")]
    IdentityTooSmall {
        pseudo_id: usize,
        size: usize,
        k: usize,
    },
    #[error("invalid PK configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PkConfig {
    pub p: usize,
    pub k: usize,
    pub seed: u64,
}

impl Default for PkConfig {
    fn default() -> Self {
        Self {
            p: 16,
            k: 4,
            seed: 0,
        }
    }
}

impl PkConfig {
    pub fn batch_size(&self) -> usize {
        self.p * self.k
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.p < 2 || self.k < 2 {
            return Err(SamplerError::InvalidConfig(format!(
                "p and k must be >= 2 (got p={}, k={})",
                self.p, self.k
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchEntry {
    pub sample: SampleRef,
    pub pseudo_id: usize,
}

/// `p * k` entries, identities in consecutive runs of `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub entries: Vec<BatchEntry>,
}

/// One epoch of PK batches.
///
/// Identities are shuffled and consumed `p` at a time; the last
/// `n_identities % p` are skipped. Each chosen identity contributes `k`
/// samples drawn without replacement.
pub fn pk_epoch(ds: &PseudoLabelDataset, cfg: &PkConfig) -> Result<Vec<Batch>, SamplerError> {
    cfg.validate()?;
    if ds.n_identities < cfg.p {
        return Err(SamplerError::TooFewIdentities {
            p: cfg.p,
            available: ds.n_identities,
        });
    }
    let members = ds.identity_members();
    if let Some((pseudo_id, m)) = members.iter().enumerate().find(|(_, m)| m.len() < cfg.k) {
        return Err(SamplerError::IdentityTooSmall {
            pseudo_id,
            size: m.len(),
            k: cfg.k,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..ds.n_identities).collect();
    order.shuffle(&mut rng);
    let batches = order
        .chunks_exact(cfg.p)
        .map(|ids| {
            let mut entries = Vec::with_capacity(cfg.batch_size());
            for &pid in ids {
                let pool = &members[pid];
                for pick in index::sample(&mut rng, pool.len(), cfg.k) {
                    let slot = pool[pick];
                    entries.push(BatchEntry {
                        sample: ds.samples[slot].clone(),
                        pseudo_id: pid,
                    });
                }
            }
            Batch { entries }
        })
        .collect();
    Ok(batches)
}
