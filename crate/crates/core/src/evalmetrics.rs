//! Weak-match precision/recall/F1 plus the boundary-only and
//! gold-boundary diagnostic protocols.
//!
//! A predicted tuple matches a gold tuple when the entity ids agree and the
//! spans share at least one token. Matching is one-to-one: candidate pairs
//! are first taken greedily by overlap size (ties: earlier gold start, then
//! earlier predicted start), and the result is then extended with
//! augmenting paths to a maximum-cardinality matching. Counts are summed
//! across questions (micro average).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::catalog::EntityCatalog;
use crate::encoder::QuestionEmbeddings;
use crate::error::{ElqError, Result};
use crate::index::MipsIndex;
use crate::linker::{mention_rep, score_catalog_entities};
use crate::spans::Span;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityMention {
    pub entity_id: String,
    pub span: Span,
}

impl EntityMention {
    pub fn new(entity_id: impl Into<String>, start: usize, end: usize) -> Self {
        EntityMention {
            entity_id: entity_id.into(),
            span: Span::new(start, end),
        }
    }
}

/// Per-question sets of (entity, span) tuples. Duplicates collapse.
pub type TupleSets = BTreeMap<String, BTreeSet<EntityMention>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchMode {
    /// Entity equal and spans overlap.
    Weak,
    /// Spans overlap; entity ignored.
    MentionOnly,
    /// Entity equal and identical boundaries. Debug aid only.
    Strong,
}

impl MatchMode {
    fn compatible(self, gold: &EntityMention, pred: &EntityMention) -> bool {
        match self {
            MatchMode::Weak => gold.entity_id == pred.entity_id && gold.span.overlaps(&pred.span),
            MatchMode::MentionOnly => gold.span.overlaps(&pred.span),
            MatchMode::Strong => gold == pred,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionCounts {
    pub id: String,
    pub correct: usize,
    pub gold: usize,
    pub predicted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: MatchMode,
    pub correct: usize,
    pub gold: usize,
    pub predicted: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_question: Vec<QuestionCounts>,
}

impl EvalReport {
    fn from_counts(mode: MatchMode, per_question: Vec<QuestionCounts>) -> Self {
        let correct = per_question.iter().map(|q| q.correct).sum();
        let gold = per_question.iter().map(|q| q.gold).sum();
        let predicted = per_question.iter().map(|q| q.predicted).sum();
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        EvalReport {
            mode,
            correct,
            gold,
            predicted,
            precision: ratio(correct, predicted),
            recall: ratio(correct, gold),
            // 2pr/(p+r) == 2C/(|T|+|T̂|), and 0 when p + r = 0
            f1: ratio(2 * correct, gold + predicted),
            per_question,
        }
    }

    /// Fixed-width table for terminals.
    pub fn to_table(&self) -> String {
        format!(
            "{:<12} {:>8} {:>8} {:>8} {:>9} {:>9} {:>9}\n{:<12} {:>8} {:>8} {:>8} {:>9.4} {:>9.4} {:>9.4}\n",
            "mode", "correct", "gold", "pred", "precision", "recall", "f1",
            format!("{:?}", self.mode).to_lowercase(),
            self.correct, self.gold, self.predicted, self.precision, self.recall, self.f1
        )
    }
}

fn check_gold(id: &str, gold: &BTreeSet<EntityMention>) -> Result<()> {
    let tuples: Vec<&EntityMention> = gold.iter().collect();
    for (i, a) in tuples.iter().enumerate() {
        for b in &tuples[i + 1..] {
            if a.span.overlaps(&b.span) {
                return Err(ElqError::InvalidInput(format!(
                    "question {id:?}: gold spans {} and {} overlap",
                    a.span, b.span
                )));
            }
        }
    }
    Ok(())
}

/// Size of the one-to-one matching between `gold` and `pred` under `mode`.
pub fn match_count(gold: &[EntityMention], pred: &[EntityMention], mode: MatchMode) -> usize {
    let mut edges: Vec<(usize, usize, usize)> = Vec::new();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); gold.len()];
    for (gi, g) in gold.iter().enumerate() {
        for (pi, p) in pred.iter().enumerate() {
            if mode.compatible(g, p) {
                edges.push((gi, pi, g.span.overlap(&p.span)));
                adj[gi].push(pi);
            }
        }
    }
    edges.sort_by(|a, b| {
        b.2.cmp(&a.2)
            .then(gold[a.0].span.start.cmp(&gold[b.0].span.start))
            .then(pred[a.1].span.start.cmp(&pred[b.1].span.start))
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });
    let mut gold_to: Vec<Option<usize>> = vec![None; gold.len()];
    let mut pred_to: Vec<Option<usize>> = vec![None; pred.len()];
    for (gi, pi, _) in edges {
        if gold_to[gi].is_none() && pred_to[pi].is_none() {
            gold_to[gi] = Some(pi);
            pred_to[pi] = Some(gi);
        }
    }
    for gi in 0..gold.len() {
        if gold_to[gi].is_none() {
            let mut seen = vec![false; pred.len()];
            augment(gi, &adj, &mut seen, &mut gold_to, &mut pred_to);
        }
    }
    gold_to.iter().filter(|m| m.is_some()).count()
}

fn augment(
    gi: usize,
    adj: &[Vec<usize>],
    seen: &mut [bool],
    gold_to: &mut [Option<usize>],
    pred_to: &mut [Option<usize>],
) -> bool {
    for &pi in &adj[gi] {
        if std::mem::replace(&mut seen[pi], true) {
            continue;
        }
        let free = match pred_to[pi] {
            None => true,
            Some(other) => augment(other, adj, seen, gold_to, pred_to),
        };
        if free {
            gold_to[gi] = Some(pi);
            pred_to[pi] = Some(gi);
            return true;
        }
    }
    false
}

/// Scores `pred` against `gold` under `mode`. Every predicted question id
/// must appear in `gold`; gold questions without predictions count as empty.
pub fn evaluate(gold: &TupleSets, pred: &TupleSets, mode: MatchMode) -> Result<EvalReport> {
    if let Some(id) = pred.keys().find(|id| !gold.contains_key(*id)) {
        return Err(ElqError::UnknownId(id.clone()));
    }
    let empty = BTreeSet::new();
    let mut per_question = Vec::with_capacity(gold.len());
    for (id, g) in gold {
        check_gold(id, g)?;
        let p = pred.get(id).unwrap_or(&empty);
        let gv: Vec<EntityMention> = g.iter().cloned().collect();
        let pv: Vec<EntityMention> = p.iter().cloned().collect();
        per_question.push(QuestionCounts {
            id: id.clone(),
            correct: match_count(&gv, &pv, mode),
            gold: gv.len(),
            predicted: pv.len(),
        });
    }
    Ok(EvalReport::from_counts(mode, per_question))
}

pub fn weak_match(gold: &TupleSets, pred: &TupleSets) -> Result<EvalReport> {
    evaluate(gold, pred, MatchMode::Weak)
}

pub fn md_only(gold: &TupleSets, pred: &TupleSets) -> Result<EvalReport> {
    evaluate(gold, pred, MatchMode::MentionOnly)
}

/// Links each gold span directly (retrieve top-k, softmax, argmax) and
/// scores the result with weak matching. `questions` supplies the token
/// vectors per question id.
pub fn el_only(
    gold: &TupleSets,
    questions: &BTreeMap<String, QuestionEmbeddings>,
    index: &MipsIndex,
    catalog: &EntityCatalog,
    top_k: usize,
) -> Result<EvalReport> {
    let mut pred = TupleSets::new();
    for (id, tuples) in gold {
        check_gold(id, tuples)?;
        let emb = questions
            .get(id)
            .ok_or_else(|| ElqError::UnknownId(id.clone()))?;
        let spans: BTreeSet<Span> = tuples.iter().map(|t| t.span).collect();
        let mut linked = BTreeSet::new();
        for span in spans {
            let rep = mention_rep(emb, span)?;
            let hits: Vec<usize> = index
                .search(&rep.vector, top_k)?
                .into_iter()
                .map(|h| h.0)
                .collect();
            let best = score_catalog_entities(&rep, catalog, &hits)?.best().entity;
            linked.insert(EntityMention {
                entity_id: catalog.record(best)?.id.clone(),
                span,
            });
        }
        pred.insert(id.clone(), linked);
    }
    weak_match(gold, &pred)
}
