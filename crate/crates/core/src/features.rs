//! Embedding data model and the canonical `PLRF` feature file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "PLRF" | version: u8 (=1) | n: u32 | d: u32 | has_persons: u8
//! n * d f32 values, row-major
//! n metadata lines: id \t camera [\t person] \n
//! ```
//!
//! The reader only accepts canonical encodings, so `save(load(f)) == f`
//! holds byte-for-byte for every file `load` accepts.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"PLRF";
pub const FORMAT_VERSION: u8 = 1;
/// Camera indices must be strictly below this bound.
pub const MAX_CAMERAS: u32 = 256;

const HEADER_LEN: usize = 4 + 1 + 4 + 4 + 1;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("dimension mismatch at record {record}: {reason}")]
    DimensionMismatch { record: usize, reason: String },
    #[error("non-finite value at record {record}, component {component}")]
    NonFiniteValue { record: usize, component: usize },
    #[error("malformed metadata at record {record}: {reason}")]
    MalformedMetadata { record: usize, reason: String },
    #[error("I/O failure: {0}")]
    IoFailure(#[from] io::Error),
}

/// Position of a sample inside its [`FeatureSet`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SampleRef {
    pub index: usize,
    pub id: String,
    pub camera: u32,
}

/// `n` embeddings of width `dim` with per-sample metadata.
///
/// Immutable once built; every constructor validates the invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    ids: Vec<String>,
    cameras: Vec<u32>,
    persons: Option<Vec<i64>>,
    dim: usize,
    matrix: Vec<f32>,
}

impl FeatureSet {
    pub fn new(
        ids: Vec<String>,
        cameras: Vec<u32>,
        persons: Option<Vec<i64>>,
        dim: usize,
        matrix: Vec<f32>,
    ) -> Result<Self, FeatureError> {
        let n = ids.len();
        if n == 0 {
            return Err(FeatureError::DimensionMismatch {
                record: 0,
                reason: "feature set is empty".into(),
            });
        }
        if dim == 0 {
            return Err(FeatureError::DimensionMismatch {
                record: 0,
                reason: "embedding dimension is zero".into(),
            });
        }
        if cameras.len() != n {
            return Err(FeatureError::DimensionMismatch {
                record: cameras.len().min(n),
                reason: format!("{} camera entries for {n} ids", cameras.len()),
            });
        }
        if let Some(p) = &persons {
            if p.len() != n {
                return Err(FeatureError::DimensionMismatch {
                    record: p.len().min(n),
                    reason: format!("{} person entries for {n} ids", p.len()),
                });
            }
        }
        if matrix.len() != n * dim {
            return Err(FeatureError::DimensionMismatch {
                record: (matrix.len() / dim).min(n),
                reason: format!("matrix has {} values, expected {n}x{dim}", matrix.len()),
            });
        }
        for (record, id) in ids.iter().enumerate() {
            validate_id(record, id)?;
        }
        for (record, &cam) in cameras.iter().enumerate() {
            if cam >= MAX_CAMERAS {
                return Err(FeatureError::MalformedMetadata {
                    record,
                    reason: format!("camera {cam} out of range"),
                });
            }
        }
        if let Some(pos) = matrix.iter().position(|v| !v.is_finite()) {
            return Err(FeatureError::NonFiniteValue {
                record: pos / dim,
                component: pos % dim,
            });
        }
        Ok(Self {
            ids,
            cameras,
            persons,
            dim,
            matrix,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    /// Always false; empty sets cannot be constructed.
    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn cameras(&self) -> &[u32] {
        &self.cameras
    }

    pub fn persons(&self) -> Option<&[i64]> {
        self.persons.as_deref()
    }

    /// Row-major `len() x dim()` values.
    pub fn matrix(&self) -> &[f32] {
        &self.matrix
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.matrix.chunks_exact(self.dim)
    }

    pub fn sample(&self, index: usize) -> SampleRef {
        SampleRef {
            index,
            id: self.ids[index].clone(),
            camera: self.cameras[index],
        }
    }

    /// Number of cameras implied by the largest camera index.
    pub fn n_cameras(&self) -> usize {
        self.cameras.iter().max().map_or(0, |&c| c as usize + 1)
    }

    /// Same metadata, new matrix.
    pub fn with_matrix(&self, matrix: Vec<f32>) -> Result<Self, FeatureError> {
        Self::new(
            self.ids.clone(),
            self.cameras.clone(),
            self.persons.clone(),
            self.dim,
            matrix,
        )
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self, FeatureError> {
        let mut matrix = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            matrix.extend_from_slice(self.row(i));
        }
        Self::new(
            indices.iter().map(|&i| self.ids[i].clone()).collect(),
            indices.iter().map(|&i| self.cameras[i]).collect(),
            self.persons
                .as_ref()
                .map(|p| indices.iter().map(|&i| p[i]).collect()),
            self.dim,
            matrix,
        )
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &FeatureSet) -> Result<Self, FeatureError> {
        if self.dim != other.dim {
            return Err(FeatureError::DimensionMismatch {
                record: self.len(),
                reason: format!("cannot concatenate D={} with D={}", self.dim, other.dim),
            });
        }
        let persons = match (&self.persons, &other.persons) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Self::new(
            self.ids.iter().chain(&other.ids).cloned().collect(),
            self.cameras.iter().chain(&other.cameras).copied().collect(),
            persons,
            self.dim,
            self.matrix.iter().chain(&other.matrix).copied().collect(),
        )
    }

    /// Canonical byte encoding.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.len();
        let mut out = Vec::with_capacity(HEADER_LEN + self.matrix.len() * 4 + n * 16);
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.push(self.persons.is_some() as u8);
        for v in &self.matrix {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for i in 0..n {
            out.extend_from_slice(self.ids[i].as_bytes());
            out.push(b'\t');
            out.extend_from_slice(self.cameras[i].to_string().as_bytes());
            if let Some(p) = &self.persons {
                out.push(b'\t');
                out.extend_from_slice(p[i].to_string().as_bytes());
            }
            out.push(b'\n');
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FeatureError> {
        if bytes.len() < HEADER_LEN {
            return Err(FeatureError::MalformedHeader(format!(
                "file is {} bytes, header needs {HEADER_LEN}",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(FeatureError::MalformedHeader("missing PLRF magic".into()));
        }
        if bytes[4] != FORMAT_VERSION {
            return Err(FeatureError::MalformedHeader(format!(
                "unsupported format version {}",
                bytes[4]
            )));
        }
        let n = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
        let has_persons = match bytes[13] {
            0 => false,
            1 => true,
            other => {
                return Err(FeatureError::MalformedHeader(format!(
                    "has_persons flag must be 0 or 1, got {other}"
                )))
            }
        };
        if n == 0 || dim == 0 {
            return Err(FeatureError::DimensionMismatch {
                record: 0,
                reason: format!("header declares N={n}, D={dim}"),
            });
        }
        let payload_len = n
            .checked_mul(dim)
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| FeatureError::MalformedHeader("N*D overflows".into()))?;
        let payload = bytes
            .get(HEADER_LEN..HEADER_LEN + payload_len)
            .ok_or_else(|| FeatureError::DimensionMismatch {
                record: (bytes.len() - HEADER_LEN) / (4 * dim),
                reason: format!("payload truncated, expected {n}x{dim} floats"),
            })?;
        let mut matrix = Vec::with_capacity(n * dim);
        for (pos, chunk) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(FeatureError::NonFiniteValue {
                    record: pos / dim,
                    component: pos % dim,
                });
            }
            matrix.push(v);
        }

        let meta = &bytes[HEADER_LEN + payload_len..];
        let text = std::str::from_utf8(meta).map_err(|e| FeatureError::MalformedMetadata {
            record: meta[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count(),
            reason: "metadata is not UTF-8".into(),
        })?;
        let mut ids = Vec::with_capacity(n);
        let mut cameras = Vec::with_capacity(n);
        let mut persons = has_persons.then(|| Vec::with_capacity(n));
        let mut rest = text;
        for record in 0..n {
            let end = rest.find('\n').ok_or_else(|| FeatureError::DimensionMismatch {
                record,
                reason: format!("metadata has {record} lines, expected {n}"),
            })?;
            let line = &rest[..end];
            rest = &rest[end + 1..];
            let mut fields = line.split('\t');
            let id = fields.next().unwrap_or_default();
            let cam_field = fields.next().ok_or_else(|| FeatureError::MalformedMetadata {
                record,
                reason: "missing camera field".into(),
            })?;
            let camera = parse_canonical::<u32>(record, cam_field, "camera")?;
            if let Some(p) = persons.as_mut() {
                let field = fields.next().ok_or_else(|| FeatureError::MalformedMetadata {
                    record,
                    reason: "missing person field".into(),
                })?;
                p.push(parse_canonical::<i64>(record, field, "person")?);
            }
            if fields.next().is_some() {
                return Err(FeatureError::MalformedMetadata {
                    record,
                    reason: "too many fields".into(),
                });
            }
            ids.push(id.to_string());
            cameras.push(camera);
        }
        if !rest.is_empty() {
            return Err(FeatureError::DimensionMismatch {
                record: n,
                reason: "trailing bytes after the last metadata line".into(),
            });
        }
        Self::new(ids, cameras, persons, dim, matrix)
    }
}

fn validate_id(record: usize, id: &str) -> Result<(), FeatureError> {
    if id.is_empty() {
        return Err(FeatureError::MalformedMetadata {
            record,
            reason: "empty sample id".into(),
        });
    }
    if id.contains(['\t', '\n']) {
        return Err(FeatureError::MalformedMetadata {
            record,
            reason: "sample id contains a tab or newline".into(),
        });
    }
    Ok(())
}

// `str::parse` accepts "+3" and "007"; only the canonical spelling round-trips.
fn parse_canonical<T>(record: usize, field: &str, what: &str) -> Result<T, FeatureError>
where
    T: std::str::FromStr + ToString,
{
    match field.parse::<T>() {
        Ok(v) if v.to_string() == field => Ok(v),
        _ => Err(FeatureError::MalformedMetadata {
            record,
            reason: format!("invalid {what} field {field:?}"),
        }),
    }
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureSet, FeatureError> {
    let bytes = fs::read(path)?;
    FeatureSet::from_bytes(&bytes)
}

pub fn save_features(fs: &FeatureSet, path: impl AsRef<Path>) -> Result<(), FeatureError> {
    fs::write(path, fs.to_bytes())?;
    Ok(())
}

/// Result of [`l2_normalize_rows`].
#[derive(Debug, Clone)]
pub struct Normalized {
    pub features: FeatureSet,
    /// Rows that were all zero and left untouched.
    pub zero_rows: usize,
}

/// Scales every row to unit Euclidean norm (norm accumulated in f64).
pub fn l2_normalize_rows(fs: &FeatureSet) -> Normalized {
    let mut zero_rows = 0;
    let mut matrix = Vec::with_capacity(fs.matrix.len());
    for row in fs.rows() {
        let norm = row_norm(row);
        if norm == 0.0 {
            zero_rows += 1;
            matrix.extend_from_slice(row);
        } else {
            matrix.extend(row.iter().map(|&v| (v as f64 / norm) as f32));
        }
    }
    let features = FeatureSet {
        matrix,
        ..fs.clone()
    };
    Normalized {
        features,
        zero_rows,
    }
}

pub(crate) fn row_norm(row: &[f32]) -> f64 {
    row.iter()
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt()
}
