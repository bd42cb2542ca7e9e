//! Synthetic re-identification data with a per-camera domain shift.
//!
//! Every sample is `identity_mean + camera_offset + noise`:
//!
//! * identity means are i.i.d. `N(0, sep^2 / (2 dim) I)`, so two identities
//!   are `class_separation` apart on average;
//! * each camera adds a fixed random vector of norm `camera_shift`;
//! * noise is `N(0, sigma^2 / dim I)`, norm about `noise_sigma`.
//!
//! The first half of the identities (rounded up) forms the training set;
//! the rest is split into query and gallery.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::features::{FeatureSet, MAX_CAMERAS};

#[derive(Debug, Error, PartialEq)]
pub enum SyntheticError {
    #[error("infeasible synthetic spec: {0}")]
    InfeasibleSpec(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_identities: usize,
    pub samples_per_identity: usize,
    pub n_cameras: usize,
    pub dim: usize,
    pub class_separation: f64,
    pub camera_shift: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_identities: 200,
            samples_per_identity: 12,
            n_cameras: 4,
            dim: 64,
            class_separation: 6.0,
            camera_shift: 4.0,
            noise_sigma: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        let fail = |m: &str| Err(SyntheticError::InfeasibleSpec(m.to_string()));
        if self.n_identities < 2 {
            return fail("need at least 2 identities (one for training, one for testing)");
        }
        if self.n_cameras < 2 {
            return fail("every identity must be seen by at least 2 cameras");
        }
        if self.n_cameras > MAX_CAMERAS as usize {
            return fail("too many cameras");
        }
        if self.samples_per_identity < 2 {
            return fail("every identity needs at least 2 samples to span 2 cameras");
        }
        if self.dim < 2 {
            return fail("dim must be at least 2");
        }
        for (name, v) in [
            ("class_separation", self.class_separation),
            ("camera_shift", self.camera_shift),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SyntheticError::InfeasibleSpec(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    pub fn n_train_identities(&self) -> usize {
        self.n_identities.div_ceil(2)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: FeatureSet,
    pub query: FeatureSet,
    pub gallery: FeatureSet,
}

struct Builder {
    ids: Vec<String>,
    cameras: Vec<u32>,
    persons: Vec<i64>,
    matrix: Vec<f32>,
    prefix: char,
}

impl Builder {
    fn new(prefix: char) -> Self {
        Self {
            ids: Vec::new(),
            cameras: Vec::new(),
            persons: Vec::new(),
            matrix: Vec::new(),
            prefix,
        }
    }

    fn push(&mut self, person: usize, camera: usize, row: &[f64]) {
        self.ids.push(format!("{}{:06}", self.prefix, self.ids.len()));
        self.cameras.push(camera as u32);
        self.persons.push(person as i64);
        self.matrix.extend(row.iter().map(|&v| v as f32));
    }

    fn finish(self, dim: usize) -> Result<FeatureSet, SyntheticError> {
        FeatureSet::new(self.ids, self.cameras, Some(self.persons), dim, self.matrix)
            .map_err(|e| SyntheticError::InfeasibleSpec(e.to_string()))
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData, SyntheticError> {
    spec.validate()?;
    let dim = spec.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let offsets: Vec<Vec<f64>> = (0..spec.n_cameras)
        .map(|_| {
            let g = gaussian(&mut rng, dim, 1.0);
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            g.into_iter().map(|v| spec.camera_shift * v / norm).collect()
        })
        .collect();
    let mean_scale = spec.class_separation / (2.0 * dim as f64).sqrt();
    let noise_scale = spec.noise_sigma / (dim as f64).sqrt();

    let n_train = spec.n_train_identities();
    let mut train = Builder::new('t');
    let mut query = Builder::new('q');
    let mut gallery = Builder::new('g');
    for person in 0..spec.n_identities {
        let mean = gaussian(&mut rng, dim, mean_scale);
        let first_cam = rng.random_range(0..spec.n_cameras);
        let mut samples: Vec<(usize, Vec<f64>)> = (0..spec.samples_per_identity)
            .map(|j| {
                let cam = (first_cam + j) % spec.n_cameras;
                let noise = gaussian(&mut rng, dim, noise_scale);
                let row = mean
                    .iter()
                    .zip(&offsets[cam])
                    .zip(noise)
                    .map(|((m, o), e)| m + o + e)
                    .collect();
                (cam, row)
            })
            .collect();
        samples.sort_by_key(|(cam, _)| *cam);

        if person < n_train {
            for (cam, row) in &samples {
                train.push(person, *cam, row);
            }
            continue;
        }
        // one query per camera holding >= 2 of this identity's samples; if no
        // camera has two, the first sample alone is the query
        let mut per_cam = vec![0usize; spec.n_cameras];
        for (cam, _) in &samples {
            per_cam[*cam] += 1;
        }
        let mut is_query = vec![false; samples.len()];
        let mut taken = vec![false; spec.n_cameras];
        for (slot, (cam, _)) in samples.iter().enumerate() {
            if per_cam[*cam] >= 2 && !taken[*cam] {
                taken[*cam] = true;
                is_query[slot] = true;
            }
        }
        if !is_query.contains(&true) {
            is_query[0] = true;
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        order.sort_by_key(|&s| !is_query[s]);
        for s in order {
            let (cam, row) = &samples[s];
            if is_query[s] {
                query.push(person, *cam, row);
            } else {
                gallery.push(person, *cam, row);
            }
        }
    }
    Ok(SyntheticData {
        train: train.finish(dim)?,
        query: query.finish(dim)?,
        gallery: gallery.finish(dim)?,
    })
}
