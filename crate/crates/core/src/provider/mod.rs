//! Boundary to every learned component.
//!
//! The engine never runs a model itself. Dense image/text embeddings, the
//! 32-row fused image+text token matrices, the text passage scorer and the
//! generator are all reached through [`Provider`].

mod deterministic;
mod http;
pub mod wire;

use serde::{Deserialize, Serialize};

use crate::corpus::ImageRef;

pub use deterministic::{parse_seed_tag, DeterministicConfig, DeterministicProvider};
pub(crate) use deterministic::hash64;
pub use http::{HttpProvider, ProviderEndpoint, RetryPolicy};

/// Rows in every fused query/candidate matrix.
pub const FUSED_ROWS: usize = 32;

/// Norm tolerance for vectors flagged as normalized.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum ProviderError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("service error {status} ({code}): {message}")]
    Service {
        status: u16,
        code: String,
        message: String,
    },
    #[error("cannot resolve image {ref_id:?}: {reason}")]
    Resolution { ref_id: String, reason: String },
    #[error("precondition failed: {0}")]
    Precondition(String),
}

#[derive(Debug, thiserror::Error)]
#[error("shape mismatch: {0}")]
pub struct ShapeError(pub String);

impl From<ShapeError> for ProviderError {
    fn from(e: ShapeError) -> Self {
        ProviderError::Protocol(e.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseVector {
    values: Vec<f64>,
    normalized: bool,
}

impl DenseVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self {
            values,
            normalized: false,
        }
    }

    /// L2-normalizes `values`. Returns `None` for a zero or non-finite norm.
    pub fn unit(mut values: Vec<f64>) -> Option<Self> {
        let n = l2_norm(&values);
        if n == 0.0 || !n.is_finite() {
            return None;
        }
        values.iter_mut().for_each(|v| *v /= n);
        Some(Self {
            values,
            normalized: true,
        })
    }

    /// Wraps values that are claimed to be unit length, checking the claim.
    pub fn from_normalized(values: Vec<f64>) -> Result<Self, ShapeError> {
        let n = l2_norm(&values);
        if (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(ShapeError(format!("vector norm {n} is not 1 ± {NORM_TOLERANCE}")));
        }
        Ok(Self {
            values,
            normalized: true,
        })
    }

    pub fn dims(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    pub fn dot(&self, other: &DenseVector) -> f64 {
        dot(&self.values, &other.values)
    }

    /// Normalized copy; `self` if already normalized.
    pub fn to_unit(&self) -> Option<DenseVector> {
        if self.normalized {
            Some(self.clone())
        } else {
            DenseVector::unit(self.values.clone())
        }
    }
}

/// Row-major `rows × dims` matrix of token embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    rows: usize,
    dims: usize,
    values: Vec<f64>,
}

impl TokenMatrix {
    pub fn new(rows: usize, dims: usize, values: Vec<f64>) -> Result<Self, ShapeError> {
        if rows == 0 || dims == 0 {
            return Err(ShapeError(format!("empty matrix {rows}×{dims}")));
        }
        if rows * dims != values.len() {
            return Err(ShapeError(format!(
                "{rows}×{dims} matrix needs {} values, got {}",
                rows * dims,
                values.len()
            )));
        }
        Ok(Self { rows, dims, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ShapeError> {
        let dims = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dims) {
            return Err(ShapeError("ragged rows".into()));
        }
        Self::new(rows.len(), dims, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dims..(i + 1) * self.dims]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dims)
    }
}

/// Sequential left-to-right dot product. Exact-search oracles rely on this
/// summation order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateParams {
    pub max_tokens: usize,
}

impl Default for GenerateParams {
    fn default() -> Self {
        Self { max_tokens: 64 }
    }
}

/// Text embeddings plus per-item truncation flags.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbeddings {
    pub vectors: Vec<DenseVector>,
    pub truncated: Vec<bool>,
}

/// A source of embeddings, passage scores and completions.
///
/// Implementations must be safe to call concurrently. Outputs from two
/// providers with different [`Provider::id`]s live in unrelated spaces and
/// must not be compared.
pub trait Provider: Send + Sync {
    /// Stable identity of the embedding space, recorded in index metadata.
    fn id(&self) -> String;

    fn embed_text_detailed(&self, texts: &[&str]) -> Result<TextEmbeddings, ProviderError>;

    fn embed_text(&self, texts: &[&str]) -> Result<Vec<DenseVector>, ProviderError> {
        Ok(self.embed_text_detailed(texts)?.vectors)
    }

    fn embed_image(&self, images: &[ImageRef]) -> Result<Vec<DenseVector>, ProviderError>;

    fn embed_fused(&self, image: &ImageRef, text: &str) -> Result<TokenMatrix, ProviderError> {
        let mut out = self.embed_fused_batch(&[(image, text)])?;
        out.pop()
            .ok_or_else(|| ProviderError::Protocol("empty fused response".into()))
    }

    fn embed_fused_batch(&self, items: &[(&ImageRef, &str)]) -> Result<Vec<TokenMatrix>, ProviderError>;

    fn score_text_pairs(&self, question: &str, passages: &[&str]) -> Result<Vec<f64>, ProviderError>;

    fn generate(&self, prompt: &str, params: &GenerateParams) -> Result<String, ProviderError>;
}

pub(crate) fn check_texts(texts: &[&str]) -> Result<(), ProviderError> {
    if texts.is_empty() {
        return Err(ProviderError::Precondition("empty text batch".into()));
    }
    if let Some(i) = texts.iter().position(|t| t.is_empty()) {
        return Err(ProviderError::Precondition(format!("text {i} is empty")));
    }
    Ok(())
}

pub(crate) fn check_uniform_dims(vectors: &[DenseVector]) -> Result<(), ProviderError> {
    if let Some(first) = vectors.first() {
        if let Some(v) = vectors.iter().find(|v| v.dims() != first.dims()) {
            return Err(ProviderError::Protocol(format!(
                "mixed dims in batch: {} and {}",
                first.dims(),
                v.dims()
            )));
        }
    }
    Ok(())
}
