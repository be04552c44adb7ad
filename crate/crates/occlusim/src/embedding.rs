//! Joint-embedding scoring math over precomputed embeddings: temperature
//! similarity, query-conditioned view attention, instance- and
//! category-level contrastive losses, and cosine-ranked retrieval.
//!
//! No gradients and no encoders live here — the losses are evaluation
//! scalars over embeddings supplied from outside. Loss ratios are evaluated
//! in log space (log-sum-exp), which matters at the default temperature 0.1
//! where raw similarities reach `e^{10}`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_DIM: usize = 128;
pub const DEFAULT_TEMPERATURE: f64 = 0.1;
pub const DEFAULT_CATEGORY_WEIGHT: f64 = 0.2;

#[derive(Error, Debug)]
pub enum EmbeddingError {
    #[error("zero vector where a direction is required")]
    ZeroVector,
    #[error("non-finite component in embedding")]
    NonFinite,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("category weight must be non-negative, got {0}")]
    BadCategoryWeight(f64),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("shape {0} has no view embeddings")]
    EmptyViews(usize),
    #[error("{labels} labels for {queries} queries")]
    LabelCountMismatch { labels: usize, queries: usize },
    #[error("database is empty after filtering")]
    EmptyDatabase,
    #[error("shape {0:?} has no category entry")]
    UnknownCategory(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed embedding file {path}: {message}")]
    Format { path: PathBuf, message: String },
}

fn check_finite(v: &[f64]) -> Result<(), EmbeddingError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(EmbeddingError::NonFinite)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; errors on zero or non-finite vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, EmbeddingError> {
    if a.len() != b.len() {
        return Err(EmbeddingError::DimensionMismatch(a.len(), b.len()));
    }
    check_finite(a)?;
    check_finite(b)?;
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroVector);
    }
    Ok(dot(a, b) / (na * nb))
}

/// `D(x, y) = exp(cos(x, y) / τ)`: the temperature similarity between two
/// embeddings. Invariant to positive rescaling of either argument.
pub fn similarity_d(x: &[f64], y: &[f64], tau: f64) -> Result<f64, EmbeddingError> {
    if !(tau > 0.0) {
        return Err(EmbeddingError::BadTemperature(tau));
    }
    Ok((cosine(x, y)? / tau).exp())
}

/// Whether attention logits are divided by √dim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttentionScale {
    #[default]
    Scaled,
    Unscaled,
}

/// Query-conditioned shape feature: softmax over `query · view_k` (scaled
/// by 1/√dim by default) weights the views into one vector.
pub fn attend_views_with(
    query: &[f64],
    views: &[Vec<f64>],
    scale: AttentionScale,
) -> Result<Vec<f64>, EmbeddingError> {
    if views.is_empty() {
        return Err(EmbeddingError::EmptyViews(0));
    }
    check_finite(query)?;
    let dim = query.len();
    let denom = match scale {
        AttentionScale::Scaled => (dim as f64).sqrt(),
        AttentionScale::Unscaled => 1.0,
    };
    let mut logits = Vec::with_capacity(views.len());
    for v in views {
        if v.len() != dim {
            return Err(EmbeddingError::DimensionMismatch(dim, v.len()));
        }
        check_finite(v)?;
        logits.push(dot(query, v) / denom);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    let mut out = vec![0.0; dim];
    for (w, v) in weights.iter().zip(views) {
        for (o, x) in out.iter_mut().zip(v) {
            *o += w * x;
        }
    }
    Ok(out)
}

pub fn attend_views(query: &[f64], views: &[Vec<f64>]) -> Result<Vec<f64>, EmbeddingError> {
    attend_views_with(query, views, AttentionScale::Scaled)
}

/// A batch of query embeddings paired with per-shape view embeddings and
/// category labels; query `i` matches shape `i`.
#[derive(Debug, Clone)]
pub struct EmbeddingBatch {
    queries: Vec<Vec<f64>>,
    shape_views: Vec<Vec<Vec<f64>>>,
    categories: Vec<String>,
    tau: f64,
    beta1: f64,
}

impl EmbeddingBatch {
    pub fn new(
        queries: Vec<Vec<f64>>,
        shape_views: Vec<Vec<Vec<f64>>>,
        categories: Vec<String>,
        tau: f64,
        beta1: f64,
    ) -> Result<Self, EmbeddingError> {
        if queries.is_empty() {
            return Err(EmbeddingError::EmptyBatch);
        }
        if shape_views.len() != queries.len() {
            return Err(EmbeddingError::DimensionMismatch(
                queries.len(),
                shape_views.len(),
            ));
        }
        if categories.len() != queries.len() {
            return Err(EmbeddingError::LabelCountMismatch {
                labels: categories.len(),
                queries: queries.len(),
            });
        }
        if !(tau > 0.0) {
            return Err(EmbeddingError::BadTemperature(tau));
        }
        if beta1 < 0.0 {
            return Err(EmbeddingError::BadCategoryWeight(beta1));
        }
        let dim = queries[0].len();
        for q in &queries {
            if q.len() != dim {
                return Err(EmbeddingError::DimensionMismatch(dim, q.len()));
            }
            check_finite(q)?;
        }
        for (k, views) in shape_views.iter().enumerate() {
            if views.is_empty() {
                return Err(EmbeddingError::EmptyViews(k));
            }
            for v in views {
                if v.len() != dim {
                    return Err(EmbeddingError::DimensionMismatch(dim, v.len()));
                }
                check_finite(v)?;
            }
        }
        Ok(EmbeddingBatch {
            queries,
            shape_views,
            categories,
            tau,
            beta1,
        })
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Cosines between query `i` and the conditioned feature of every shape
    /// `j` (each shape attended by query `i`).
    fn cosine_matrix(&self) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        let b = self.len();
        let mut rows = Vec::with_capacity(b);
        for i in 0..b {
            let mut row = Vec::with_capacity(b);
            for j in 0..b {
                let conditioned = attend_views(&self.queries[i], &self.shape_views[j])?;
                row.push(cosine(&self.queries[i], &conditioned)?);
            }
            rows.push(row);
        }
        Ok(rows)
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// Instance-level contrastive loss: each query's matching shape is the one
/// positive against all other shapes in the batch.
pub fn instance_loss(batch: &EmbeddingBatch) -> Result<f64, EmbeddingError> {
    let cos = batch.cosine_matrix()?;
    let mut total = 0.0;
    for (i, row) in cos.iter().enumerate() {
        let logits: Vec<f64> = row.iter().map(|&c| c / batch.tau).collect();
        total += log_sum_exp(&logits) - logits[i];
    }
    if !total.is_finite() {
        return Err(EmbeddingError::NonFinite);
    }
    Ok(total)
}

/// Category-level contrastive loss: for each query, every other same-
/// category shape counts as a positive, averaged per query. Queries whose
/// category is unique in the batch contribute 0.
pub fn category_loss(batch: &EmbeddingBatch) -> Result<f64, EmbeddingError> {
    let cos = batch.cosine_matrix()?;
    let mut total = 0.0;
    for (i, row) in cos.iter().enumerate() {
        let peers: Vec<usize> = (0..batch.len())
            .filter(|&j| j != i && batch.categories[j] == batch.categories[i])
            .collect();
        if peers.is_empty() {
            continue;
        }
        let logits: Vec<f64> = row.iter().map(|&c| c / batch.tau).collect();
        let lse = log_sum_exp(&logits);
        let mut per_query = 0.0;
        for &c in &peers {
            per_query += lse - logits[c];
        }
        total += per_query / peers.len() as f64;
    }
    if !total.is_finite() {
        return Err(EmbeddingError::NonFinite);
    }
    Ok(total)
}

/// `L_inst + β₁ · L_cat`.
pub fn total_loss(batch: &EmbeddingBatch) -> Result<f64, EmbeddingError> {
    Ok(instance_loss(batch)? + batch.beta1 * category_loss(batch)?)
}

/// Ranks database shapes against the query by cosine between the query and
/// each shape's query-conditioned feature, descending; ties break toward
/// the lexicographically smaller shape id. An optional category filter
/// restricts candidates before ranking.
pub fn rank_candidates(
    query: &[f64],
    db: &BTreeMap<String, Vec<Vec<f64>>>,
    category_filter: Option<&str>,
    db_categories: &BTreeMap<String, String>,
) -> Result<Vec<(String, f64)>, EmbeddingError> {
    let mut scored = Vec::new();
    for (shape_id, views) in db {
        if let Some(filter) = category_filter {
            let category = db_categories
                .get(shape_id)
                .ok_or_else(|| EmbeddingError::UnknownCategory(shape_id.clone()))?;
            if category != filter {
                continue;
            }
        }
        let conditioned = attend_views(query, views)?;
        let score = cosine(query, &conditioned)?;
        scored.push((shape_id.clone(), score));
    }
    if scored.is_empty() {
        return Err(EmbeddingError::EmptyDatabase);
    }
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("scores are finite")
            .then_with(|| a.0.cmp(&b.0))
    });
    Ok(scored)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct RowRange {
    pub start: usize,
    pub len: usize,
}

/// Embedding file layout: u64 row count, u32 dimension, then row-major
/// little-endian f32 components. A JSON index maps ids to row ranges.
pub fn write_embeddings(path: &Path, rows: &[Vec<f64>]) -> Result<(), EmbeddingError> {
    let io_err = |source| EmbeddingError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dim = rows.first().map_or(0, |r| r.len());
    for r in rows {
        if r.len() != dim {
            return Err(EmbeddingError::DimensionMismatch(dim, r.len()));
        }
    }
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(&(rows.len() as u64).to_le_bytes()).map_err(io_err)?;
    w.write_all(&(dim as u32).to_le_bytes()).map_err(io_err)?;
    for row in rows {
        for &v in row {
            w.write_all(&(v as f32).to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn read_embeddings(path: &Path) -> Result<Vec<Vec<f64>>, EmbeddingError> {
    let io_err = |source| EmbeddingError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io_err)?;
    let mut r = std::io::BufReader::new(file);
    let mut b8 = [0u8; 8];
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b8).map_err(io_err)?;
    let count = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b4).map_err(io_err)?;
    let dim = u32::from_le_bytes(b4) as usize;
    let mut rows = Vec::with_capacity(count);
    for _ in 0..count {
        let mut row = Vec::with_capacity(dim);
        for _ in 0..dim {
            r.read_exact(&mut b4).map_err(|_| EmbeddingError::Format {
                path: path.to_path_buf(),
                message: "truncated rows".into(),
            })?;
            row.push(f32::from_le_bytes(b4) as f64);
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_embedding_index(
    path: &Path,
    index: &BTreeMap<String, RowRange>,
) -> Result<(), EmbeddingError> {
    std::fs::write(path, serde_json::to_string_pretty(index).unwrap()).map_err(|source| {
        EmbeddingError::Io {
            path: path.to_path_buf(),
            source,
        }
    })
}

pub fn read_embedding_index(path: &Path) -> Result<BTreeMap<String, RowRange>, EmbeddingError> {
    let text = std::fs::read_to_string(path).map_err(|source| EmbeddingError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| EmbeddingError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
