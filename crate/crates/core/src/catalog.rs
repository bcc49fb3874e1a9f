//! Entity inventory with its frozen embedding matrix.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::binary;
use crate::encoder::tokenize;
use crate::error::{ElqError, Result};

/// Descriptions keep at most this many tokens.
pub const MAX_DESCRIPTION_TOKENS: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub id: String,
    pub title: String,
    pub description: String,
}

impl EntityRecord {
    /// Builds a record, truncating the description to its first
    /// [`MAX_DESCRIPTION_TOKENS`] tokens.
    pub fn new(id: impl Into<String>, title: impl Into<String>, description: &str) -> Self {
        EntityRecord {
            id: id.into(),
            title: title.into(),
            description: truncate_description(description),
        }
    }
}

fn truncate_description(description: &str) -> String {
    let tokens = tokenize(description);
    if tokens.len() <= MAX_DESCRIPTION_TOKENS {
        // keep the original text when nothing is cut
        return description.to_owned();
    }
    tokens[..MAX_DESCRIPTION_TOKENS].join(" ")
}

/// Immutable entity records plus one `f32` embedding row per record.
/// Row order defines the integer entity index used everywhere else.
#[derive(Debug, Clone)]
pub struct EntityCatalog {
    records: Vec<EntityRecord>,
    embeddings: Vec<f32>,
    dim: usize,
    by_id: HashMap<String, usize>,
}

impl EntityCatalog {
    pub fn new(records: Vec<EntityRecord>, embeddings: Vec<f32>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(ElqError::DimensionMismatch("embedding dim is 0".into()));
        }
        if embeddings.len() != records.len() * dim {
            return Err(ElqError::DimensionMismatch(format!(
                "{} embedding values for {} records of dim {dim}",
                embeddings.len(),
                records.len()
            )));
        }
        if let Some(pos) = embeddings.iter().position(|v| !v.is_finite()) {
            return Err(ElqError::NonFinite(format!(
                "embedding row {} column {}",
                pos / dim,
                pos % dim
            )));
        }
        let mut by_id = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if by_id.insert(r.id.clone(), i).is_some() {
                return Err(ElqError::DuplicateId {
                    id: r.id.clone(),
                    line: i + 1,
                });
            }
        }
        Ok(EntityCatalog {
            records,
            embeddings,
            dim,
            by_id,
        })
    }

    /// Loads entity JSONL plus an `ELQE` embedding file.
    pub fn load(records_path: &Path, embeddings_path: &Path) -> Result<Self> {
        let records = read_records(records_path)?;
        let (rows, dim, data) = binary::read_embedding_file(embeddings_path)?;
        if rows != records.len() {
            return Err(ElqError::DimensionMismatch(format!(
                "{} has {rows} rows but {} lists {} records",
                embeddings_path.display(),
                records_path.display(),
                records.len()
            )));
        }
        EntityCatalog::new(records, data, dim)
    }

    pub fn save(&self, records_path: &Path, embeddings_path: &Path) -> Result<()> {
        let mut w = binary::create(records_path)?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r)
                .map_err(|e| ElqError::Format(format!("serialize entity: {e}")))?;
            w.write_all(b"\n")
                .map_err(|e| ElqError::io(records_path, e))?;
        }
        w.flush().map_err(|e| ElqError::io(records_path, e))?;
        binary::write_embedding_file(embeddings_path, self.len(), self.dim, &self.embeddings)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[EntityRecord] {
        &self.records
    }

    pub fn record(&self, index: usize) -> Result<&EntityRecord> {
        self.records.get(index).ok_or(ElqError::OutOfRange {
            index,
            len: self.len(),
        })
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn get_embedding(&self, index: usize) -> Result<&[f32]> {
        if index >= self.len() {
            return Err(ElqError::OutOfRange {
                index,
                len: self.len(),
            });
        }
        Ok(self.row(index))
    }

    /// Unchecked row access for hot loops; panics when out of range.
    #[inline]
    pub fn row(&self, index: usize) -> &[f32] {
        &self.embeddings[index * self.dim..(index + 1) * self.dim]
    }

    pub fn embeddings(&self) -> &[f32] {
        &self.embeddings
    }

    /// SHA-256 over dim, row count and the raw embedding bytes. Persisted
    /// indexes record it to detect a catalog swap.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        h.update((self.len() as u64).to_le_bytes());
        for v in &self.embeddings {
            h.update(v.to_le_bytes());
        }
        h.finalize().into()
    }
}

/// Reads entity JSONL. Blank lines are skipped; line numbers in errors are
/// 1-based physical lines.
pub fn read_records(path: &Path) -> Result<Vec<EntityRecord>> {
    #[derive(Deserialize)]
    struct Line {
        id: String,
        title: String,
        description: String,
    }

    let reader = binary::open(path)?;
    let mut records = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| ElqError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| ElqError::Malformed {
            path: path.to_owned(),
            line: line_no,
            message: e.to_string(),
        })?;
        if seen.insert(parsed.id.clone(), line_no).is_some() {
            return Err(ElqError::DuplicateId {
                id: parsed.id,
                line: line_no,
            });
        }
        records.push(EntityRecord::new(
            parsed.id,
            parsed.title,
            &parsed.description,
        ));
    }
    Ok(records)
}
