//! Joint training of mention detection and entity disambiguation.
//!
//! The entity matrix is frozen; only the encoder projection and the span
//! heads receive gradients. Every step re-mines hard negatives for each gold
//! mention from the current mention representation using the prebuilt
//! index, and the disambiguation softmax runs over the gold entity plus
//! those negatives.

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::EntityCatalog;
use crate::encoder::{QuestionEmbeddings, TokenizedQuestion};
use crate::error::{ElqError, Result};
use crate::index::MipsIndex;
use crate::linker::{log_softmax, mention_rep, MentionRep};
use crate::matrix::{dot, dot_mixed, Matrix};
use crate::model::Model;
use crate::spans::{enumerate_spans, sigmoid, HeadWeights, Span, TokenScores};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GoldMention {
    pub span: Span,
    pub entity: usize,
}

/// One question with its base features and gold mentions.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub question: TokenizedQuestion,
    /// `n x base_dim` input to the encoder projection.
    pub features: Matrix,
    pub gold: Vec<GoldMention>,
}

impl TrainingExample {
    pub fn new(
        question: TokenizedQuestion,
        features: Matrix,
        gold: Vec<GoldMention>,
        catalog_len: usize,
    ) -> Result<Self> {
        let n = question.len();
        if features.rows() != n {
            return Err(ElqError::DimensionMismatch(format!(
                "question {:?}: {} feature rows for {n} tokens",
                question.id,
                features.rows()
            )));
        }
        for (k, g) in gold.iter().enumerate() {
            g.span.validate(n)?;
            if g.entity >= catalog_len {
                return Err(ElqError::OutOfRange {
                    index: g.entity,
                    len: catalog_len,
                });
            }
            if gold[..k].iter().any(|o| o.span.overlaps(&g.span)) {
                return Err(ElqError::InvalidInput(format!(
                    "question {:?}: gold span {} overlaps another gold span",
                    question.id, g.span
                )));
            }
        }
        Ok(TrainingExample {
            question,
            features,
            gold,
        })
    }

    /// Gold mentions that fit within `max_len`.
    pub fn usable_gold(&self, max_len: usize) -> Vec<GoldMention> {
        self.gold
            .iter()
            .filter(|g| {
                let ok = g.span.len() <= max_len;
                if !ok {
                    warn!(
                        "question {:?}: gold span {} longer than {max_len} tokens, skipped",
                        self.question.id, g.span
                    );
                }
                ok
            })
            .copied()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_grad_norm: f64,
    pub warmup_fraction: f64,
    pub hard_negatives: usize,
    pub max_span_len: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 128,
            learning_rate: 1e-2,
            max_grad_norm: 1.0,
            warmup_fraction: 0.1,
            hard_negatives: 10,
            max_span_len: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(ElqError::InvalidInput(format!("train config: {what}")));
        if self.epochs == 0 || self.batch_size == 0 || self.max_span_len == 0 {
            return bad("epochs, batch size and max span length must be positive");
        }
        if self.hard_negatives == 0 {
            return bad("hard negative count must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning rate must be finite and non-negative");
        }
        if !(self.max_grad_norm.is_finite() && self.max_grad_norm > 0.0) {
            return bad("gradient clip norm must be positive");
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return bad("warmup fraction must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub loss_md: f64,
    pub loss_ed: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(loss_md: f64, loss_ed: f64) -> Self {
        LossReport {
            loss_md,
            loss_ed,
            total: loss_md + loss_ed,
        }
    }
}

pub struct MdLoss {
    pub loss: f64,
    pub grad_heads: HeadWeights,
    /// Gradient w.r.t. each token vector, `n x h`.
    pub grad_tokens: Matrix,
}

/// Mean binary cross-entropy over all candidate spans, in logit space.
/// Gold spans longer than `max_len` are not candidates and are ignored.
pub fn md_loss(
    emb: &QuestionEmbeddings,
    heads: &HeadWeights,
    gold: &[Span],
    max_len: usize,
) -> Result<MdLoss> {
    let n = emb.len();
    let h = emb.dim();
    let scores = TokenScores::compute(emb, heads)?;
    let spans = enumerate_spans(n, max_len);
    let count = spans.len() as f64;

    // d(loss)/d(logit) accumulated per role
    let mut d_start = vec![0.0; n];
    let mut d_end = vec![0.0; n];
    let mut d_mention = vec![0.0; n + 1];
    let mut loss = 0.0;
    for span in &spans {
        let x = scores.logit(*span);
        let y = if gold.contains(span) { 1.0 } else { 0.0 };
        // softplus(x) - y x, stable
        loss += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
        let d = (sigmoid(x) - y) / count;
        d_start[span.start] += d;
        d_end[span.end] += d;
        d_mention[span.start] += d;
        d_mention[span.end + 1] -= d;
    }
    for t in 1..=n {
        d_mention[t] += d_mention[t - 1];
    }

    let mut grad_heads = HeadWeights::zeros(h);
    let mut grad_tokens = Matrix::zeros(n, h);
    for t in 0..n {
        let q = emb.token(t);
        let (a, b, c) = (d_start[t], d_end[t], d_mention[t]);
        let row = grad_tokens.row_mut(t);
        for k in 0..h {
            grad_heads.start[k] += a * q[k];
            grad_heads.end[k] += b * q[k];
            grad_heads.mention[k] += c * q[k];
            row[k] = a * heads.start[k] + b * heads.end[k] + c * heads.mention[k];
        }
    }
    Ok(MdLoss {
        loss: loss / count,
        grad_heads,
        grad_tokens,
    })
}

pub struct EdLoss {
    pub loss: f64,
    /// Gradient w.r.t. the mention representation.
    pub grad_rep: Vec<f64>,
    /// Entities in the softmax: gold first, then the deduplicated negatives.
    pub candidates: Vec<usize>,
}

/// `-log p(gold)` under a softmax over `{gold} ∪ negatives`.
pub fn ed_loss(
    rep: &MentionRep,
    gold: usize,
    negatives: &[usize],
    catalog: &EntityCatalog,
) -> Result<EdLoss> {
    if rep.vector.len() != catalog.dim() {
        return Err(ElqError::DimensionMismatch(format!(
            "mention rep dim {}, catalog dim {}",
            rep.vector.len(),
            catalog.dim()
        )));
    }
    catalog.get_embedding(gold)?;
    let mut candidates = vec![gold];
    for &e in negatives {
        catalog.get_embedding(e)?;
        if !candidates.contains(&e) {
            candidates.push(e);
        }
    }
    let scores: Vec<f64> = candidates
        .iter()
        .map(|&e| dot_mixed(&rep.vector, catalog.row(e)))
        .collect();
    let log_p = log_softmax(&scores);
    let mut grad_rep = vec![0.0; rep.vector.len()];
    for (k, (&e, lp)) in candidates.iter().zip(&log_p).enumerate() {
        let p = lp.exp() - if k == 0 { 1.0 } else { 0.0 };
        for (g, &x) in grad_rep.iter_mut().zip(catalog.row(e)) {
            *g += p * f64::from(x);
        }
    }
    Ok(EdLoss {
        loss: -log_p[0],
        grad_rep,
        candidates,
    })
}

/// Top-`count` entities by inner product with the mention, excluding gold.
pub fn mine_hard_negatives(
    index: &MipsIndex,
    rep: &MentionRep,
    gold: usize,
    count: usize,
) -> Result<Vec<usize>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let found = index.search(&rep.vector, count + 1)?;
    Ok(found
        .into_iter()
        .map(|(e, _)| e)
        .filter(|&e| e != gold)
        .take(count)
        .collect())
}

/// Loss and flattened gradient of one example for fixed negatives.
/// `negatives[k]` belongs to the `k`-th mention of `gold`.
pub fn example_loss(
    model: &Model,
    question: &TokenizedQuestion,
    features: &Matrix,
    gold: &[GoldMention],
    negatives: &[Vec<usize>],
    catalog: &EntityCatalog,
    max_len: usize,
) -> Result<(LossReport, Vec<f64>)> {
    let emb = model.encoder.encode_features(question, features)?;
    example_loss_from_embeddings(model, &emb, features, gold, negatives, catalog, max_len)
}

fn example_loss_from_embeddings(
    model: &Model,
    emb: &QuestionEmbeddings,
    features: &Matrix,
    gold: &[GoldMention],
    negatives: &[Vec<usize>],
    catalog: &EntityCatalog,
    max_len: usize,
) -> Result<(LossReport, Vec<f64>)> {
    if negatives.len() != gold.len() {
        return Err(ElqError::InvalidInput(format!(
            "{} negative lists for {} gold mentions",
            negatives.len(),
            gold.len()
        )));
    }
    let gold_spans: Vec<Span> = gold.iter().map(|g| g.span).collect();
    let md = md_loss(emb, &model.heads, &gold_spans, max_len)?;
    let mut grad_tokens = md.grad_tokens;

    let mut loss_ed = 0.0;
    let usable: Vec<(usize, &GoldMention)> = gold
        .iter()
        .enumerate()
        .filter(|(_, g)| g.span.len() <= max_len)
        .collect();
    if !usable.is_empty() {
        let weight = 1.0 / usable.len() as f64;
        for (k, g) in usable {
            let rep = mention_rep(emb, g.span)?;
            let ed = ed_loss(&rep, g.entity, &negatives[k], catalog)?;
            loss_ed += weight * ed.loss;
            let scale = weight / g.span.len() as f64;
            for t in g.span.start..=g.span.end {
                for (o, gr) in grad_tokens.row_mut(t).iter_mut().zip(&ed.grad_rep) {
                    *o += scale * gr;
                }
            }
        }
    }

    // back through q_t = Wᵀ f_t + c
    let (b, h) = (model.base_dim(), model.dim());
    let mut grad = vec![0.0; model.num_params()];
    {
        let (gw, rest) = grad.split_at_mut(b * h);
        let (gc, _) = rest.split_at_mut(h);
        for (f, gq) in features.iter_rows().zip(grad_tokens.iter_rows()) {
            for (k, &fk) in f.iter().enumerate() {
                if fk != 0.0 {
                    for (w, &g) in gw[k * h..(k + 1) * h].iter_mut().zip(gq) {
                        *w += fk * g;
                    }
                }
            }
            for (c, &g) in gc.iter_mut().zip(gq) {
                *c += g;
            }
        }
    }
    let off = b * h + h;
    grad[off..off + h].copy_from_slice(&md.grad_heads.start);
    grad[off + h..off + 2 * h].copy_from_slice(&md.grad_heads.end);
    grad[off + 2 * h..off + 3 * h].copy_from_slice(&md.grad_heads.mention);

    Ok((LossReport::new(md.loss, loss_ed), grad))
}

/// Max over coordinates of `|analytic - central difference| / max(1, |analytic|)`.
pub fn grad_check<F>(f: F, params: &[f64], eps: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (value, analytic) = f(params);
    if !value.is_finite() {
        return Err(ElqError::NonFinite("loss at base point".into()));
    }
    if analytic.len() != params.len() {
        return Err(ElqError::DimensionMismatch(format!(
            "{} gradient entries for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let mut x = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let plus = f(&x).0;
        x[i] = orig - eps;
        let minus = f(&x).0;
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(ElqError::NonFinite(format!("loss at perturbed coordinate {i}")));
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Rescales `grad` in place so its L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = dot(grad, grad).sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

/// Linear warmup over the first `warmup` steps, then linear decay to zero.
pub fn lr_multiplier(step: usize, total: usize, warmup: usize) -> f64 {
    if step < warmup {
        (step + 1) as f64 / warmup as f64
    } else if total > warmup {
        ((total - step) as f64 / (total - warmup) as f64).max(0.0)
    } else {
        1.0
    }
}

/// Adaptive-moment optimizer with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(num_params: usize) -> Self {
        AdamW {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let update = (*m / c1) / ((*v / c2).sqrt() + self.eps) + self.weight_decay * *p;
            *p -= lr * update;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Mean per-example losses observed during each epoch.
    pub epochs: Vec<LossReport>,
    pub steps: usize,
}

/// Trains `model` in place. Deterministic given `config.seed`.
pub fn train(
    dataset: &[TrainingExample],
    model: &mut Model,
    catalog: &EntityCatalog,
    index: &MipsIndex,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(ElqError::Empty("training dataset".into()));
    }
    if model.dim() != catalog.dim() || index.dim() != catalog.dim() {
        return Err(ElqError::DimensionMismatch(format!(
            "model dim {}, catalog dim {}, index dim {}",
            model.dim(),
            catalog.dim(),
            index.dim()
        )));
    }
    if index.len() != catalog.len() {
        return Err(ElqError::InvalidInput(
            "index was not built over this catalog".into(),
        ));
    }
    let total_gold: usize = dataset.iter().map(|e| e.gold.len()).sum();
    let usable: Vec<Vec<GoldMention>> = dataset
        .iter()
        .map(|e| e.usable_gold(config.max_span_len))
        .collect();
    if total_gold > 0 && usable.iter().all(Vec::is_empty) {
        return Err(ElqError::InvalidInput(format!(
            "every gold mention is longer than {} tokens; nothing to train",
            config.max_span_len
        )));
    }

    let batches_per_epoch = dataset.len().div_ceil(config.batch_size);
    let total_steps = config.epochs * batches_per_epoch;
    let warmup = (config.warmup_fraction * total_steps as f64).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut opt = AdamW::new(model.num_params());
    let mut params = model.params();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut step = 0;

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_md = 0.0;
        let mut epoch_ed = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grad = vec![0.0; params.len()];
            for &i in batch {
                let ex = &dataset[i];
                let gold = &usable[i];
                let emb = model.encoder.encode_features(&ex.question, &ex.features)?;
                let negatives = gold
                    .iter()
                    .map(|g| {
                        let rep = mention_rep(&emb, g.span)?;
                        mine_hard_negatives(index, &rep, g.entity, config.hard_negatives)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let (report, g) = example_loss_from_embeddings(
                    model,
                    &emb,
                    &ex.features,
                    gold,
                    &negatives,
                    catalog,
                    config.max_span_len,
                )?;
                if !report.total.is_finite() {
                    return Err(ElqError::NonFinite(format!(
                        "loss on question {:?}",
                        ex.question.id
                    )));
                }
                epoch_md += report.loss_md;
                epoch_ed += report.loss_ed;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            clip_grad_norm(&mut grad, config.max_grad_norm);
            let lr = config.learning_rate * lr_multiplier(step, total_steps, warmup);
            opt.step(&mut params, &grad, lr);
            model.set_params(&params)?;
            step += 1;
        }
        let n = dataset.len() as f64;
        history.push(LossReport::new(epoch_md / n, epoch_ed / n));
    }
    Ok(TrainOutcome {
        epochs: history,
        steps: step,
    })
}
