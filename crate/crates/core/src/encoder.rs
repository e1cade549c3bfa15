//! Text encoders: a deterministic feature-hashing encoder and a port for
//! pretrained contextual encoders.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh64::xxh64;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{lit, Scalar};

/// Seed offset for the sign hash, so bucket and sign are independent.
const SIGN_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Signed feature hashing over lowercase whitespace tokens (xxHash64).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashingEncoder {
    pub dim: usize,
    pub seed: u64,
}

impl HashingEncoder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("encoder dim must be at least 1".into()));
        }
        Ok(HashingEncoder { dim, seed })
    }

    pub fn bucket(&self, token: &str) -> (usize, f64) {
        let h = xxh64(token.as_bytes(), self.seed);
        let s = xxh64(token.as_bytes(), self.seed ^ SIGN_SALT);
        let sign = if s & 1 == 0 { 1.0 } else { -1.0 };
        ((h % self.dim as u64) as usize, sign)
    }

    /// L2-normalized signed bag of tokens; all-zero when no token survives.
    pub fn encode<F: Scalar>(&self, text: &str) -> Vec<F> {
        let mut acc = vec![0.0f64; self.dim];
        for tok in text.to_lowercase().split_whitespace() {
            let (b, s) = self.bucket(tok);
            acc[b] += s;
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            acc.iter_mut().for_each(|x| *x /= norm);
        }
        acc.into_iter().map(lit).collect()
    }
}

/// Free function form of [`HashingEncoder::encode`].
pub fn hashing_encode<F: Scalar>(text: &str, dim: usize, seed: u64) -> Result<Vec<F>> {
    Ok(HashingEncoder::new(dim, seed)?.encode(text))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Mean,
}

/// Backend that runs a pretrained contextual encoder (e.g. a BERT service).
pub trait ContextualBackend: Send + Sync {
    fn dim(&self) -> usize;

    fn embed(
        &self,
        model_id: &str,
        texts: &[&str],
        max_seq_len: usize,
        pooling: Pooling,
    ) -> Result<Vec<Vec<f64>>>;

    /// Whether the backend can update encoder weights during training.
    fn trainable(&self) -> bool {
        false
    }
}

#[derive(Clone, Serialize, Deserialize)]
pub struct ContextualAdapter {
    pub model_id: String,
    #[serde(default = "default_max_seq_len")]
    pub max_seq_len: usize,
    #[serde(default)]
    pub pooling: Pooling,
    #[serde(skip)]
    backend: Option<Arc<dyn ContextualBackend>>,
}

fn default_max_seq_len() -> usize {
    512
}

impl fmt::Debug for ContextualAdapter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContextualAdapter")
            .field("model_id", &self.model_id)
            .field("max_seq_len", &self.max_seq_len)
            .field("pooling", &self.pooling)
            .field("backend", &self.backend.is_some())
            .finish()
    }
}

impl ContextualAdapter {
    pub fn new(model_id: impl Into<String>) -> Self {
        ContextualAdapter {
            model_id: model_id.into(),
            max_seq_len: default_max_seq_len(),
            pooling: Pooling::Mean,
            backend: None,
        }
    }

    pub fn with_backend(mut self, backend: Arc<dyn ContextualBackend>) -> Self {
        self.backend = Some(backend);
        self
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Encoder {
    Hashing(HashingEncoder),
    ContextualAdapter(ContextualAdapter),
}

impl Encoder {
    pub fn hashing(dim: usize, seed: u64) -> Result<Self> {
        Ok(Encoder::Hashing(HashingEncoder::new(dim, seed)?))
    }

    pub fn dim(&self) -> Result<usize> {
        match self {
            Encoder::Hashing(h) => Ok(h.dim),
            Encoder::ContextualAdapter(a) => a
                .backend
                .as_ref()
                .map(|b| b.dim())
                .ok_or_else(|| Error::AdapterUnavailable(a.model_id.clone())),
        }
    }

    /// Encodes every text; row `i` equals the encoding of `texts[i]` regardless
    /// of batch composition or thread count.
    pub fn encode_batch<F: Scalar>(&self, texts: &[&str]) -> Result<Matrix<F>> {
        match self {
            Encoder::Hashing(h) => {
                let rows: Vec<Vec<F>> = texts.par_iter().map(|t| h.encode(t)).collect();
                Ok(Matrix::from_rows(h.dim, rows))
            }
            Encoder::ContextualAdapter(a) => {
                let backend = a
                    .backend
                    .as_ref()
                    .ok_or_else(|| Error::AdapterUnavailable(a.model_id.clone()))?;
                let rows = backend.embed(&a.model_id, texts, a.max_seq_len, a.pooling)?;
                let rows = rows
                    .into_iter()
                    .map(|r| r.into_iter().map(lit).collect())
                    .collect();
                Ok(Matrix::from_rows(backend.dim(), rows))
            }
        }
    }
}
