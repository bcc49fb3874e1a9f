//! Mention representations and entity scoring over a candidate set.

use crate::catalog::EntityCatalog;
use crate::encoder::QuestionEmbeddings;
use crate::error::{ElqError, Result};
use crate::matrix::dot_mixed;
use crate::spans::Span;

/// Mean of the span's token vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct MentionRep {
    pub span: Span,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateEntry {
    pub entity: usize,
    pub score: f64,
    pub log_p_entity: f64,
}

/// Entities scored against one mention, sorted by score descending (ties by
/// lower entity index). `log_p_entity` is normalized over exactly these
/// entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub mention: MentionRep,
    pub entries: Vec<CandidateEntry>,
}

impl CandidateSet {
    pub fn best(&self) -> &CandidateEntry {
        &self.entries[0]
    }
}

pub fn mention_rep(emb: &QuestionEmbeddings, span: Span) -> Result<MentionRep> {
    span.validate(emb.len())?;
    let mut vector = vec![0.0; emb.dim()];
    for t in span.start..=span.end {
        for (v, q) in vector.iter_mut().zip(emb.token(t)) {
            *v += q;
        }
    }
    let len = span.len() as f64;
    vector.iter_mut().for_each(|v| *v /= len);
    Ok(MentionRep { span, vector })
}

/// Max-subtracted log-softmax.
pub fn log_softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    scores.iter().map(|s| s - lse).collect()
}

/// Scores `candidates` by inner product with the mention and normalizes
/// over that set.
pub fn score_entities(rep: &MentionRep, candidates: &[(usize, &[f32])]) -> Result<CandidateSet> {
    if candidates.is_empty() {
        return Err(ElqError::Empty("entity candidate list".into()));
    }
    let mut scored = Vec::with_capacity(candidates.len());
    for &(entity, x) in candidates {
        if x.len() != rep.vector.len() {
            return Err(ElqError::DimensionMismatch(format!(
                "entity {entity} has dim {}, mention has dim {}",
                x.len(),
                rep.vector.len()
            )));
        }
        scored.push((entity, dot_mixed(&rep.vector, x)));
    }
    Ok(normalize(rep.clone(), scored))
}

/// Same as [`score_entities`] over the given catalog indices.
pub fn score_catalog_entities(
    rep: &MentionRep,
    catalog: &EntityCatalog,
    entities: &[usize],
) -> Result<CandidateSet> {
    let rows = entities
        .iter()
        .map(|&e| catalog.get_embedding(e).map(|x| (e, x)))
        .collect::<Result<Vec<_>>>()?;
    score_entities(rep, &rows)
}

/// Exact softmax over the whole catalog. Only sensible for small catalogs;
/// used as the reference for the truncated candidate softmax.
pub fn score_all_entities(rep: &MentionRep, catalog: &EntityCatalog) -> Result<CandidateSet> {
    let all: Vec<usize> = (0..catalog.len()).collect();
    score_catalog_entities(rep, catalog, &all)
}

fn normalize(mention: MentionRep, mut scored: Vec<(usize, f64)>) -> CandidateSet {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let scores: Vec<f64> = scored.iter().map(|s| s.1).collect();
    let entries = scored
        .iter()
        .zip(log_softmax(&scores))
        .map(|(&(entity, score), log_p_entity)| CandidateEntry {
            entity,
            score,
            log_p_entity,
        })
        .collect();
    CandidateSet { mention, entries }
}
