//! Preserved-key second-moment statistics.
//!
//! The running sum of k kᵀ over sampled token positions of a retain
//! corpus, accumulated per layer. Accumulation is associative: chunked
//! partial sums merge to the same matrix, so corpora can be split across
//! workers.
//!
//! File format: 8-byte little-endian header length, a JSON header
//! `{schema, layer, n_keys, d_mlp, corpus_digest}`, then the matrix as
//! row-major little-endian f64 — reloads are bit-exact.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use rocr_model::forward::{forward, CaptureSpec};
use rocr_model::ModelBundle;

use crate::error::{EditError, Result};

pub const COVARIANCE_SCHEMA: &str = "rocr.covariance.v1";

#[derive(Debug, Clone)]
pub struct CovarianceStats {
    pub layer: usize,
    second_moment: DMatrix<f64>,
    pub n_keys: usize,
}

impl CovarianceStats {
    pub fn new(layer: usize, d_mlp: usize) -> Self {
        CovarianceStats {
            layer,
            second_moment: DMatrix::zeros(d_mlp, d_mlp),
            n_keys: 0,
        }
    }

    pub fn from_parts(layer: usize, second_moment: DMatrix<f64>, n_keys: usize) -> Result<Self> {
        if !second_moment.is_square() {
            return Err(EditError::Shape("second moment must be square".into()));
        }
        Ok(CovarianceStats {
            layer,
            second_moment,
            n_keys,
        })
    }

    pub fn d_mlp(&self) -> usize {
        self.second_moment.nrows()
    }

    pub fn second_moment(&self) -> &DMatrix<f64> {
        &self.second_moment
    }

    /// Rank-one accumulation of a single key.
    pub fn add_key(&mut self, key: &[f64]) -> Result<()> {
        let d = self.d_mlp();
        if key.len() != d {
            return Err(EditError::Shape(format!(
                "key has width {}, expected {d}",
                key.len()
            )));
        }
        for i in 0..d {
            for j in 0..d {
                self.second_moment[(i, j)] += key[i] * key[j];
            }
        }
        self.n_keys += 1;
        Ok(())
    }

    /// Merge a partial sum computed elsewhere. Order-independent.
    pub fn merge(&mut self, other: &CovarianceStats) -> Result<()> {
        if other.layer != self.layer {
            return Err(EditError::Shape(format!(
                "cannot merge covariance for layer {} into layer {}",
                other.layer, self.layer
            )));
        }
        if other.d_mlp() != self.d_mlp() {
            return Err(EditError::Shape("covariance dimensions differ".into()));
        }
        self.second_moment += &other.second_moment;
        self.n_keys += other.n_keys;
        Ok(())
    }

    /// Symmetry defect; exact accumulation keeps this at rounding level.
    pub fn symmetry_defect(&self) -> f64 {
        (&self.second_moment - self.second_moment.transpose()).norm()
    }

    /// Eigenvalues in descending order.
    pub fn spectrum(&self) -> Vec<f64> {
        let eig = nalgebra::SymmetricEigen::new(self.second_moment.clone());
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
        vals
    }
}

/// Accumulate k kᵀ at `layer` over every token position of every corpus
/// line, up to `max_keys` positions. Lines that fail to tokenize are
/// skipped; producing zero usable positions is an error.
pub fn accumulate_covariance(
    bundle: &ModelBundle,
    corpus: &str,
    layer: usize,
    max_keys: usize,
) -> Result<CovarianceStats> {
    if layer >= bundle.config.n_layers {
        return Err(EditError::Layer {
            layer,
            max: bundle.config.n_layers,
        });
    }
    let mut stats = CovarianceStats::new(layer, bundle.config.d_mlp);
    let capture = CaptureSpec {
        mlp_key: true,
        ..CaptureSpec::none()
    };
    'lines: for line in corpus.lines() {
        if stats.n_keys >= max_keys {
            break;
        }
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Ok(mut ids) = bundle.encode(line) else {
            continue;
        };
        if ids.is_empty() {
            continue;
        }
        ids.truncate(bundle.config.max_seq_len);
        let trace = forward(bundle, &ids, capture)?;
        for pos in 0..ids.len() {
            if stats.n_keys >= max_keys {
                break 'lines;
            }
            stats.add_key(trace.mlp_key_at(layer, pos)?)?;
        }
    }
    if stats.n_keys == 0 {
        return Err(EditError::EmptyCovariance);
    }
    Ok(stats)
}

#[derive(Debug, Serialize, Deserialize)]
struct CovarianceHeader {
    schema: String,
    layer: usize,
    n_keys: usize,
    d_mlp: usize,
    corpus_digest: String,
}

/// Covariance statistics loaded from disk, with provenance.
#[derive(Debug, Clone)]
pub struct CovarianceFile {
    pub stats: CovarianceStats,
    pub corpus_digest: String,
}

pub fn write_covariance(
    path: &std::path::Path,
    stats: &CovarianceStats,
    corpus_digest: &str,
) -> Result<()> {
    let header = serde_json::to_string(&CovarianceHeader {
        schema: COVARIANCE_SCHEMA.to_string(),
        layer: stats.layer,
        n_keys: stats.n_keys,
        d_mlp: stats.d_mlp(),
        corpus_digest: corpus_digest.to_string(),
    })
    .unwrap();
    let d = stats.d_mlp();
    let mut bytes = Vec::with_capacity(8 + header.len() + d * d * 8);
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(header.as_bytes());
    for i in 0..d {
        for j in 0..d {
            bytes.extend_from_slice(&stats.second_moment[(i, j)].to_le_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(|e| EditError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn read_covariance(path: &std::path::Path) -> Result<CovarianceFile> {
    let bytes = std::fs::read(path).map_err(|e| EditError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    if bytes.len() < 8 {
        return Err(EditError::Format("file shorter than header length".into()));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    if 8 + header_len > bytes.len() {
        return Err(EditError::Format("declared header exceeds file size".into()));
    }
    let header: CovarianceHeader = serde_json::from_slice(&bytes[8..8 + header_len])
        .map_err(|e| EditError::Format(format!("invalid header: {e}")))?;
    if header.schema != COVARIANCE_SCHEMA {
        return Err(EditError::Format(format!(
            "unsupported schema `{}`",
            header.schema
        )));
    }
    let blob = &bytes[8 + header_len..];
    let d = header.d_mlp;
    if blob.len() != d * d * 8 {
        return Err(EditError::Format(format!(
            "matrix blob has {} bytes, expected {}",
            blob.len(),
            d * d * 8
        )));
    }
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let off = (i * d + j) * 8;
            m[(i, j)] = f64::from_le_bytes(blob[off..off + 8].try_into().unwrap());
        }
    }
    Ok(CovarianceFile {
        stats: CovarianceStats::from_parts(header.layer, m, header.n_keys)?,
        corpus_digest: header.corpus_digest,
    })
}
