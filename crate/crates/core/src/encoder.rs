//! Question-side token representations.
//!
//! The synthetic encoder maps every token to a fixed pseudo-random unit
//! vector (its *base embedding*) and applies a trainable affine projection.
//! Base embeddings depend only on `(seed, token)`: the token bytes and seed
//! are hashed with SHA-256 and the digest seeds a ChaCha8 stream from which
//! standard-normal coordinates are drawn and normalized.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binary::{self, read_embedding_block, write_embedding_block};
use crate::error::{ElqError, Result};
use crate::matrix::{dot, Matrix};

pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_BASE_DIM: usize = 64;

const PRECOMPUTED_MAGIC: &[u8; 4] = b"ELQQ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedQuestion {
    pub id: String,
    pub raw_text: String,
    pub tokens: Vec<String>,
}

impl TokenizedQuestion {
    pub fn new(id: impl Into<String>, raw_text: impl Into<String>) -> Self {
        let raw_text = raw_text.into();
        let tokens = tokenize(&raw_text);
        TokenizedQuestion {
            id: id.into(),
            raw_text,
            tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Lowercases, splits on whitespace and strips punctuation from token edges.
/// Tokens that are pure punctuation disappear.
pub fn tokenize(raw_text: &str) -> Vec<String> {
    raw_text
        .to_lowercase()
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Per-token vectors `q_1..q_n` of one question.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionEmbeddings {
    pub question: TokenizedQuestion,
    pub matrix: Matrix,
}

impl QuestionEmbeddings {
    pub fn new(question: TokenizedQuestion, matrix: Matrix) -> Result<Self> {
        if matrix.rows() != question.len() {
            return Err(ElqError::DimensionMismatch(format!(
                "question {:?}: {} rows for {} tokens",
                question.id,
                matrix.rows(),
                question.len()
            )));
        }
        if !matrix.is_finite() {
            return Err(ElqError::NonFinite(format!(
                "question {:?} embeddings",
                question.id
            )));
        }
        Ok(QuestionEmbeddings { question, matrix })
    }

    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn token(&self, i: usize) -> &[f64] {
        self.matrix.row(i)
    }
}

/// Deterministic unit-norm base vector for `token`.
pub fn base_embedding(seed: u64, token: &str, base_dim: usize) -> Vec<f64> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(token.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    let mut v: Vec<f64> = (0..base_dim)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let norm = dot(&v, &v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Fixed base vectors plus a trainable affine projection `q = Wᵀ b + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEncoder {
    seed: u64,
    /// `base_dim x dim`, row-major.
    pub projection: Matrix,
    pub bias: Vec<f64>,
}

impl SyntheticEncoder {
    /// Identity-initialized projection (zero-padded or truncated when the
    /// dimensions differ) and zero bias.
    pub fn new(seed: u64, base_dim: usize, dim: usize) -> Self {
        SyntheticEncoder {
            seed,
            projection: Matrix::identity(base_dim, dim),
            bias: vec![0.0; dim],
        }
    }

    pub fn with_parameters(seed: u64, projection: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != projection.cols() {
            return Err(ElqError::DimensionMismatch(format!(
                "bias has {} entries, projection has {} columns",
                bias.len(),
                projection.cols()
            )));
        }
        if !projection.is_finite() || bias.iter().any(|v| !v.is_finite()) {
            return Err(ElqError::NonFinite("encoder parameters".into()));
        }
        Ok(SyntheticEncoder {
            seed,
            projection,
            bias,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn base_dim(&self) -> usize {
        self.projection.rows()
    }

    pub fn dim(&self) -> usize {
        self.projection.cols()
    }

    pub fn base_embedding(&self, token: &str) -> Vec<f64> {
        base_embedding(self.seed, token, self.base_dim())
    }

    /// `n x base_dim` matrix of base vectors for the question's tokens.
    pub fn base_features(&self, question: &TokenizedQuestion) -> Matrix {
        let mut m = Matrix::zeros(question.len(), self.base_dim());
        for (i, token) in question.tokens.iter().enumerate() {
            m.row_mut(i).copy_from_slice(&self.base_embedding(token));
        }
        m
    }

    pub fn encode_question(&self, question: &TokenizedQuestion) -> Result<QuestionEmbeddings> {
        self.encode_features(question, &self.base_features(question))
    }

    /// Projects externally supplied base features (e.g. a precomputed,
    /// noise-perturbed feature file) for `question`.
    pub fn encode_features(
        &self,
        question: &TokenizedQuestion,
        features: &Matrix,
    ) -> Result<QuestionEmbeddings> {
        if question.is_empty() {
            return Err(ElqError::Empty(format!(
                "question {:?} has no tokens",
                question.id
            )));
        }
        if features.rows() != question.len() || features.cols() != self.base_dim() {
            return Err(ElqError::DimensionMismatch(format!(
                "question {:?}: features are {}x{}, expected {}x{}",
                question.id,
                features.rows(),
                features.cols(),
                question.len(),
                self.base_dim()
            )));
        }
        QuestionEmbeddings::new(question.clone(), self.project(features))
    }

    /// Row `i` of the output is `Wᵀ features_i + bias`.
    pub fn project(&self, features: &Matrix) -> Matrix {
        let dim = self.dim();
        let mut out = Matrix::zeros(features.rows(), dim);
        for (i, f) in features.iter_rows().enumerate() {
            let row = out.row_mut(i);
            row.copy_from_slice(&self.bias);
            for (k, &fk) in f.iter().enumerate() {
                if fk != 0.0 {
                    for (o, &w) in row.iter_mut().zip(self.projection.row(k)) {
                        *o += fk * w;
                    }
                }
            }
        }
        out
    }

    /// Unit-normalized mean of the title's base vectors, zero-padded or
    /// truncated to `dim`. Independent of the trainable projection.
    pub fn synthetic_entity_embedding(&self, title: &str) -> Result<Vec<f32>> {
        let tokens = tokenize(title);
        if tokens.is_empty() {
            return Err(ElqError::Empty(format!("title {title:?} has no tokens")));
        }
        let mut mean = vec![0.0; self.base_dim()];
        for t in &tokens {
            for (m, b) in mean.iter_mut().zip(self.base_embedding(t)) {
                *m += b;
            }
        }
        let mut out = vec![0.0f64; self.dim()];
        for (o, m) in out.iter_mut().zip(&mean) {
            *o = *m;
        }
        let norm = dot(&out, &out).sqrt();
        if norm == 0.0 {
            return Err(ElqError::InvalidInput(format!(
                "title {title:?} maps to a zero vector"
            )));
        }
        Ok(out.iter().map(|v| (v / norm) as f32).collect())
    }
}

/// Writes a precomputed per-question container: `b"ELQQ"`, `u32` count,
/// then for each entry a length-prefixed UTF-8 question id followed by one
/// `ELQE` embedding block.
pub fn write_precomputed(path: &Path, entries: &[(String, Matrix)]) -> Result<()> {
    let mut w = binary::create(path)?;
    let io = |e| ElqError::io(path, e);
    binary::write_magic(&mut w, PRECOMPUTED_MAGIC).map_err(io)?;
    w.write_u32::<LittleEndian>(binary::checked_u32(entries.len(), "entry count")?)
        .map_err(io)?;
    for (id, m) in entries {
        binary::write_string(&mut w, id).map_err(io)?;
        let data: Vec<f32> = m.as_slice().iter().map(|&v| v as f32).collect();
        write_embedding_block(&mut w, m.rows(), m.cols(), &data)?;
    }
    w.flush().map_err(io)
}

/// Reads the raw `(question id, matrix)` entries in file order.
pub fn read_precomputed(path: &Path) -> Result<Vec<(String, Matrix)>> {
    const WHAT: &str = "precomputed question embeddings";
    let mut r = binary::open(path)?;
    let mut probe = [0u8; 1];
    let empty = std::io::Read::read(&mut r, &mut probe).map_err(|e| ElqError::io(path, e))? == 0;
    if empty {
        return Ok(Vec::new());
    }
    let mut r = std::io::Read::chain(&probe[..], r);
    binary::read_magic(&mut r, PRECOMPUTED_MAGIC, WHAT)?;
    let count = r
        .read_u32::<LittleEndian>()
        .map_err(binary::truncated(WHAT))? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let id = binary::read_string(&mut r, WHAT)?;
        let (rows, dim, data) = read_embedding_block(&mut r)?;
        let matrix = Matrix::from_vec(rows, dim, data.into_iter().map(f64::from).collect())?;
        out.push((id, matrix));
    }
    Ok(out)
}

/// Loads precomputed per-token matrices and pairs them with `questions` by id.
/// An empty file yields an empty list.
pub fn load_precomputed(
    path: &Path,
    questions: &[TokenizedQuestion],
) -> Result<Vec<QuestionEmbeddings>> {
    let by_id: HashMap<&str, &TokenizedQuestion> =
        questions.iter().map(|q| (q.id.as_str(), q)).collect();
    read_precomputed(path)?
        .into_iter()
        .map(|(id, matrix)| {
            let question = by_id
                .get(id.as_str())
                .ok_or_else(|| ElqError::UnknownId(id.clone()))?;
            QuestionEmbeddings::new((*question).clone(), matrix)
        })
        .collect()
}
