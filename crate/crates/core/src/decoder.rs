//! Inference: mention thresholding, candidate retrieval, joint scoring,
//! fallback and greedy overlap removal.
//!
//! `γ` is a natural-log threshold applied to both the mention score
//! `log p(span)` and the joint score `log p(span) + log p(entity | span)`.

use std::cmp::Ordering;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::catalog::EntityCatalog;
use crate::encoder::QuestionEmbeddings;
use crate::error::{ElqError, Result};
use crate::index::MipsIndex;
use crate::linker::{mention_rep, score_catalog_entities};
use crate::spans::{enumerate_spans, mention_scores, HeadWeights, ScoredMention, Span};

pub const DEFAULT_GAMMA: f64 = -2.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub gamma: f64,
    pub top_k_entities: usize,
    pub fallback_mentions: usize,
    pub max_span_len: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            gamma: DEFAULT_GAMMA,
            top_k_entities: 10,
            fallback_mentions: 50,
            max_span_len: 10,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k_entities == 0 || self.fallback_mentions == 0 || self.max_span_len == 0 {
            return Err(ElqError::InvalidInput(
                "top-k, fallback and max span length must be >= 1".into(),
            ));
        }
        if self.gamma.is_nan() {
            return Err(ElqError::InvalidInput("gamma is NaN".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkedPrediction {
    pub entity: usize,
    pub entity_id: String,
    pub span: Span,
    pub log_p_mention: f64,
    pub log_p_entity: f64,
    pub joint: f64,
}

/// Ranking used for selection and overlap removal: joint descending, then
/// start ascending, shorter span first, entity id ascending.
pub fn prediction_order(a: &LinkedPrediction, b: &LinkedPrediction) -> Ordering {
    b.joint
        .total_cmp(&a.joint)
        .then(a.span.start.cmp(&b.span.start))
        .then(a.span.len().cmp(&b.span.len()))
        .then_with(|| a.entity_id.cmp(&b.entity_id))
}

fn mention_order(a: &ScoredMention, b: &ScoredMention) -> Ordering {
    b.log_p_mention
        .total_cmp(&a.log_p_mention)
        .then(a.span.start.cmp(&b.span.start))
        .then(a.span.len().cmp(&b.span.len()))
}

/// Spans with `log p ≥ γ`; when none qualify, the top `fallback` spans with
/// the flag set. Output is ordered by score descending, start ascending,
/// shorter first.
pub fn select_mentions(
    scored: &[ScoredMention],
    gamma: f64,
    fallback: usize,
) -> Result<(Vec<ScoredMention>, bool)> {
    if scored.is_empty() {
        return Err(ElqError::Empty("no scored mentions".into()));
    }
    let mut kept: Vec<ScoredMention> = scored
        .iter()
        .filter(|m| m.log_p_mention >= gamma)
        .copied()
        .collect();
    let fallback_used = kept.is_empty();
    if fallback_used {
        kept = scored.to_vec();
    }
    kept.sort_by(mention_order);
    if fallback_used {
        kept.truncate(fallback);
    }
    Ok((kept, fallback_used))
}

/// Greedy: walk predictions best-first and keep those sharing no token with
/// an already kept span. Output sorted by span start.
pub fn remove_overlaps(predictions: &[LinkedPrediction]) -> Vec<LinkedPrediction> {
    let mut ranked: Vec<&LinkedPrediction> = predictions.iter().collect();
    ranked.sort_by(|a, b| prediction_order(a, b));
    let mut kept: Vec<LinkedPrediction> = Vec::new();
    for p in ranked {
        if kept.iter().all(|k| !k.span.overlaps(&p.span)) {
            kept.push(p.clone());
        }
    }
    kept.sort_by_key(|p| p.span.start);
    kept
}

/// Wall time spent in each decoding stage.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimes {
    pub mention_scoring: Duration,
    pub retrieval: Duration,
    pub decode: Duration,
}

impl std::ops::AddAssign for StageTimes {
    fn add_assign(&mut self, o: Self) {
        self.mention_scoring += o.mention_scoring;
        self.retrieval += o.retrieval;
        self.decode += o.decode;
    }
}

/// Everything the decoder produced for one question.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeTrace {
    pub mentions: Vec<ScoredMention>,
    pub fallback_used: bool,
    /// (mention, entity) pairs whose joint score cleared `γ`, before
    /// overlap removal.
    pub surviving: Vec<LinkedPrediction>,
    /// Set when the fallback path emitted its best pair because nothing
    /// survived the joint threshold.
    pub fallback_pair: Option<LinkedPrediction>,
    pub output: Vec<LinkedPrediction>,
}

pub struct Decoder<'a> {
    pub heads: &'a HeadWeights,
    pub index: &'a MipsIndex,
    pub catalog: &'a EntityCatalog,
    pub config: DecoderConfig,
}

impl<'a> Decoder<'a> {
    pub fn new(
        heads: &'a HeadWeights,
        index: &'a MipsIndex,
        catalog: &'a EntityCatalog,
        config: DecoderConfig,
    ) -> Result<Self> {
        config.validate()?;
        if index.len() != catalog.len() || index.dim() != catalog.dim() {
            return Err(ElqError::InvalidInput(
                "index and catalog disagree in size or dim".into(),
            ));
        }
        if heads.dim() != catalog.dim() {
            return Err(ElqError::DimensionMismatch(format!(
                "heads dim {}, catalog dim {}",
                heads.dim(),
                catalog.dim()
            )));
        }
        Ok(Decoder {
            heads,
            index,
            catalog,
            config,
        })
    }

    pub fn link(&self, emb: &QuestionEmbeddings) -> Result<Vec<LinkedPrediction>> {
        Ok(self.decode(emb)?.output)
    }

    pub fn decode(&self, emb: &QuestionEmbeddings) -> Result<DecodeTrace> {
        let mut times = StageTimes::default();
        self.decode_timed(emb, &mut times)
    }

    /// Like [`Decoder::decode`], adding per-stage wall time to `times`.
    pub fn decode_timed(
        &self,
        emb: &QuestionEmbeddings,
        times: &mut StageTimes,
    ) -> Result<DecodeTrace> {
        let cfg = &self.config;
        let t0 = Instant::now();
        let spans = enumerate_spans(emb.len(), cfg.max_span_len);
        let scored = mention_scores(emb, self.heads, &spans)?;
        let (mentions, fallback_used) =
            select_mentions(&scored, cfg.gamma, cfg.fallback_mentions)?;
        let t1 = Instant::now();
        times.mention_scoring += t1 - t0;

        let mut retrieved = Vec::with_capacity(mentions.len());
        for m in &mentions {
            let rep = mention_rep(emb, m.span)?;
            let hits = self.index.search(&rep.vector, cfg.top_k_entities)?;
            retrieved.push((rep, hits));
        }
        let t2 = Instant::now();
        times.retrieval += t2 - t1;

        let mut all_pairs = Vec::new();
        for (m, (rep, hits)) in mentions.iter().zip(retrieved) {
            let ids: Vec<usize> = hits.iter().map(|h| h.0).collect();
            let set = score_catalog_entities(&rep, self.catalog, &ids)?;
            for entry in set.entries {
                all_pairs.push(LinkedPrediction {
                    entity: entry.entity,
                    entity_id: self.catalog.record(entry.entity)?.id.clone(),
                    span: m.span,
                    log_p_mention: m.log_p_mention,
                    log_p_entity: entry.log_p_entity,
                    joint: m.log_p_mention + entry.log_p_entity,
                });
            }
        }
        let surviving: Vec<LinkedPrediction> = all_pairs
            .iter()
            .filter(|p| p.joint >= cfg.gamma)
            .cloned()
            .collect();
        let fallback_pair = if fallback_used && surviving.is_empty() {
            all_pairs.iter().min_by(|a, b| prediction_order(a, b)).cloned()
        } else {
            None
        };
        let output = match &fallback_pair {
            Some(p) => vec![p.clone()],
            None => remove_overlaps(&surviving),
        };
        times.decode += t2.elapsed();
        Ok(DecodeTrace {
            mentions,
            fallback_used,
            surviving,
            fallback_pair,
            output,
        })
    }
}
