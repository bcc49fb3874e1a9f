//! JSONL question/annotation and prediction files.
//!
//! Questions: `{"id", "text", "mentions": [{"start", "end", "entity_id"}]}`
//! with 0-based inclusive token indices over the lowercased,
//! punctuation-stripped tokenization. Predictions:
//! `{"id", "predictions": [{"entity_id", "start", "end", "log_mention",
//! "log_entity", "joint"}]}`.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::binary;
use crate::catalog::EntityCatalog;
use crate::decoder::LinkedPrediction;
use crate::encoder::{read_precomputed, SyntheticEncoder, TokenizedQuestion};
use crate::error::{ElqError, Result};
use crate::evalmetrics::{EntityMention, TupleSets};
use crate::matrix::Matrix;
use crate::spans::Span;
use crate::training::{GoldMention, TrainingExample};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionRecord {
    pub start: usize,
    pub end: usize,
    pub entity_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub mentions: Vec<MentionRecord>,
}

impl QuestionRecord {
    pub fn tokenized(&self) -> TokenizedQuestion {
        TokenizedQuestion::new(self.id.clone(), self.text.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEntry {
    pub entity_id: String,
    pub start: usize,
    pub end: usize,
    pub log_mention: f64,
    pub log_entity: f64,
    pub joint: f64,
}

impl From<&LinkedPrediction> for PredictionEntry {
    fn from(p: &LinkedPrediction) -> Self {
        PredictionEntry {
            entity_id: p.entity_id.clone(),
            start: p.span.start,
            end: p.span.end,
            log_mention: p.log_p_mention,
            log_entity: p.log_p_entity,
            joint: p.joint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub predictions: Vec<PredictionEntry>,
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let reader = binary::open(path)?;
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| ElqError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| ElqError::Malformed {
            path: path.to_owned(),
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push((n + 1, value));
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = binary::create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, item)
            .map_err(|e| ElqError::Format(format!("serialize {}: {e}", path.display())))?;
        w.write_all(b"\n").map_err(|e| ElqError::io(path, e))?;
    }
    w.flush().map_err(|e| ElqError::io(path, e))
}

/// Reads questions, checking unique ids and that every mention span fits
/// the question's tokenization.
pub fn read_questions(path: &Path) -> Result<Vec<QuestionRecord>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, q) in read_jsonl::<QuestionRecord>(path)? {
        let malformed = |message: String| ElqError::Malformed {
            path: path.to_owned(),
            line,
            message,
        };
        if !seen.insert(q.id.clone()) {
            return Err(malformed(format!("duplicate question id {:?}", q.id)));
        }
        let n = q.tokenized().len();
        for m in &q.mentions {
            if m.start > m.end || m.end >= n {
                return Err(malformed(format!(
                    "mention [{}, {}] out of range for {n} tokens",
                    m.start, m.end
                )));
            }
        }
        out.push(q);
    }
    Ok(out)
}

pub fn write_questions(path: &Path, questions: &[QuestionRecord]) -> Result<()> {
    write_jsonl(path, questions)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, p)| p).collect())
}

pub fn write_predictions(path: &Path, predictions: &[PredictionRecord]) -> Result<()> {
    write_jsonl(path, predictions)
}

pub fn gold_sets(questions: &[QuestionRecord]) -> TupleSets {
    questions
        .iter()
        .map(|q| {
            let set: BTreeSet<EntityMention> = q
                .mentions
                .iter()
                .map(|m| EntityMention::new(m.entity_id.clone(), m.start, m.end))
                .collect();
            (q.id.clone(), set)
        })
        .collect()
}

pub fn prediction_sets(predictions: &[PredictionRecord]) -> Result<TupleSets> {
    let mut out = TupleSets::new();
    for p in predictions {
        let set = p
            .predictions
            .iter()
            .map(|e| {
                if e.start > e.end {
                    return Err(ElqError::InvalidInput(format!(
                        "question {:?}: prediction span [{}, {}] is reversed",
                        p.id, e.start, e.end
                    )));
                }
                Ok(EntityMention::new(e.entity_id.clone(), e.start, e.end))
            })
            .collect::<Result<BTreeSet<_>>>()?;
        if out.insert(p.id.clone(), set).is_some() {
            return Err(ElqError::InvalidInput(format!(
                "question {:?} appears twice in predictions",
                p.id
            )));
        }
    }
    Ok(out)
}

/// Per-question encoder inputs: precomputed features when the file has an
/// entry for the id, otherwise the encoder's base vectors for the tokens.
pub struct FeatureSource {
    precomputed: HashMap<String, Matrix>,
}

impl FeatureSource {
    pub fn none() -> Self {
        FeatureSource {
            precomputed: HashMap::new(),
        }
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        let precomputed = match path {
            None => HashMap::new(),
            Some(p) => read_precomputed(p)?.into_iter().collect(),
        };
        Ok(FeatureSource { precomputed })
    }

    /// Width of the stored features, if any are present.
    pub fn base_dim(&self) -> Option<usize> {
        self.precomputed.values().next().map(Matrix::cols)
    }

    pub fn features(&self, encoder: &SyntheticEncoder, question: &TokenizedQuestion) -> Result<Matrix> {
        match self.precomputed.get(&question.id) {
            Some(m) => {
                if m.rows() != question.len() {
                    return Err(ElqError::DimensionMismatch(format!(
                        "question {:?}: {} feature rows for {} tokens",
                        question.id,
                        m.rows(),
                        question.len()
                    )));
                }
                Ok(m.clone())
            }
            None => Ok(encoder.base_features(question)),
        }
    }
}

pub fn training_examples(
    questions: &[QuestionRecord],
    features: &FeatureSource,
    encoder: &SyntheticEncoder,
    catalog: &EntityCatalog,
) -> Result<Vec<TrainingExample>> {
    questions
        .iter()
        .map(|q| {
            let tq = q.tokenized();
            let f = features.features(encoder, &tq)?;
            let gold = q
                .mentions
                .iter()
                .map(|m| {
                    let entity = catalog
                        .index_of(&m.entity_id)
                        .ok_or_else(|| ElqError::UnknownId(m.entity_id.clone()))?;
                    Ok(GoldMention {
                        span: Span::new(m.start, m.end),
                        entity,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            TrainingExample::new(tq, f, gold, catalog.len())
        })
        .collect()
}
