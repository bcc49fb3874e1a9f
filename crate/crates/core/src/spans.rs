//! Candidate span enumeration and mention-detection scoring.
//!
//! Per-token start/end/mention scores are computed once per question; span
//! logits are `start(i) + end(j) + Σ_{t=i..j} mention(t)` with the inner
//! sum taken from a prefix array.

use serde::{Deserialize, Serialize};

use crate::encoder::QuestionEmbeddings;
use crate::error::{ElqError, Result};
use crate::matrix::dot;

pub const DEFAULT_MAX_SPAN_LEN: usize = 10;

/// Token span, 0-based with both ends inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of tokens shared with `other` (0 when disjoint).
    pub fn overlap(&self, other: &Span) -> usize {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        if lo <= hi {
            hi - lo + 1
        } else {
            0
        }
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.overlap(other) > 0
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.start > self.end || self.end >= n {
            return Err(ElqError::InvalidInput(format!(
                "span [{}, {}] invalid for {n} tokens",
                self.start, self.end
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for Span {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}]", self.start, self.end)
    }
}

/// Closed form for the number of spans of length at most `max_len` over `n`
/// tokens.
pub fn candidate_count(n: usize, max_len: usize) -> usize {
    if n >= max_len {
        max_len * (max_len + 1) / 2 + (n - max_len) * max_len
    } else {
        n * (n + 1) / 2
    }
}

/// All spans of length `1..=max_len`, ordered by `(start, end)`.
pub fn enumerate_spans(n: usize, max_len: usize) -> Vec<Span> {
    let mut out = Vec::with_capacity(candidate_count(n, max_len));
    for start in 0..n {
        let last = (start + max_len).min(n);
        out.extend((start..last).map(|end| Span { start, end }));
    }
    out
}

/// Learnable scoring vectors for span boundaries and span membership.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadWeights {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub mention: Vec<f64>,
}

impl HeadWeights {
    pub fn zeros(dim: usize) -> Self {
        HeadWeights {
            start: vec![0.0; dim],
            end: vec![0.0; dim],
            mention: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.start.len()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.start.len();
        if self.end.len() != h || self.mention.len() != h {
            return Err(ElqError::DimensionMismatch(format!(
                "head weights have dims {}/{}/{}",
                h,
                self.end.len(),
                self.mention.len()
            )));
        }
        let all = self.start.iter().chain(&self.end).chain(&self.mention);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(ElqError::NonFinite("head weights".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredMention {
    pub span: Span,
    pub logit: f64,
    pub log_p_mention: f64,
}

/// Numerically stable `log σ(x)`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-token head scores for one question.
#[derive(Debug, Clone)]
pub struct TokenScores {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub mention: Vec<f64>,
    /// `prefix[k] = Σ_{t<k} mention[t]`, length `n + 1`.
    prefix: Vec<f64>,
}

impl TokenScores {
    pub fn compute(emb: &QuestionEmbeddings, heads: &HeadWeights) -> Result<Self> {
        if heads.dim() != emb.dim() {
            return Err(ElqError::DimensionMismatch(format!(
                "heads have dim {}, embeddings have dim {}",
                heads.dim(),
                emb.dim()
            )));
        }
        heads.validate()?;
        let n = emb.len();
        let (mut start, mut end, mut mention) =
            (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for q in emb.matrix.iter_rows() {
            start.push(dot(&heads.start, q));
            end.push(dot(&heads.end, q));
            mention.push(dot(&heads.mention, q));
        }
        let mut prefix = Vec::with_capacity(n + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for m in &mention {
            acc += m;
            prefix.push(acc);
        }
        Ok(TokenScores {
            start,
            end,
            mention,
            prefix,
        })
    }

    #[inline]
    pub fn logit(&self, span: Span) -> f64 {
        self.start[span.start]
            + self.end[span.end]
            + (self.prefix[span.end + 1] - self.prefix[span.start])
    }
}

pub fn mention_scores(
    emb: &QuestionEmbeddings,
    heads: &HeadWeights,
    spans: &[Span],
) -> Result<Vec<ScoredMention>> {
    let scores = TokenScores::compute(emb, heads)?;
    spans
        .iter()
        .map(|&span| {
            span.validate(emb.len())?;
            let logit = scores.logit(span);
            Ok(ScoredMention {
                span,
                logit,
                log_p_mention: log_sigmoid(logit),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::TokenizedQuestion;
    use crate::matrix::Matrix;
    use proptest::prelude::*;

    fn brute_force(n: usize, max_len: usize) -> Vec<Span> {
        let mut v = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i <= j && j - i < max_len {
                    v.push(Span::new(i, j));
                }
            }
        }
        v
    }

    fn toy(rows: Vec<Vec<f64>>) -> QuestionEmbeddings {
        let text = (0..rows.len()).map(|i| format!("t{i}")).collect::<Vec<_>>().join(" ");
        QuestionEmbeddings::new(
            TokenizedQuestion::new("q", text),
            Matrix::from_rows(&rows).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn count_examples() {
        assert_eq!(enumerate_spans(5, 10).len(), 15);
        let brute = brute_force(12, 10);
        assert_eq!(brute.len(), 75);
        assert_eq!(enumerate_spans(12, 10), brute);
        assert_eq!(enumerate_spans(1, 1), vec![Span::new(0, 0)]);
        assert!(enumerate_spans(0, 10).is_empty());
    }

    #[test]
    fn zero_heads_give_half() {
        let emb = toy(vec![vec![1.0, 2.0], vec![-3.0, 0.5], vec![0.0, 1.0]]);
        let spans = enumerate_spans(3, 10);
        for m in mention_scores(&emb, &HeadWeights::zeros(2), &spans).unwrap() {
            assert_eq!(m.logit, 0.0);
            assert!((m.log_p_mention.exp() - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn logistic_of_four() {
        // start=1 on token 0, end=1 on token 1, mention 1 on each token
        let emb = toy(vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]]);
        let heads = HeadWeights {
            start: vec![1.0, 0.0, 0.0],
            end: vec![0.0, 1.0, 0.0],
            mention: vec![0.0, 0.0, 1.0],
        };
        let m = mention_scores(&emb, &heads, &[Span::new(0, 1)]).unwrap();
        assert_eq!(m[0].logit, 4.0);
        // 1 / (1 + e^-4)
        assert!((m[0].log_p_mention.exp() - 0.982_013_790_037_908_5).abs() < 1e-12);
    }

    #[test]
    fn doubling_start_weights() {
        let emb = toy(vec![vec![0.3, -1.0], vec![2.0, 0.25]]);
        let mut heads = HeadWeights::zeros(2);
        heads.start = vec![0.7, 1.1];
        let a = TokenScores::compute(&emb, &heads).unwrap();
        heads.start.iter_mut().for_each(|w| *w *= 2.0);
        let b = TokenScores::compute(&emb, &heads).unwrap();
        for (x, y) in a.start.iter().zip(&b.start) {
            assert_eq!(2.0 * x, *y);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let emb = toy(vec![vec![1.0, 2.0]]);
        assert!(matches!(
            mention_scores(&emb, &HeadWeights::zeros(3), &[Span::new(0, 0)]),
            Err(ElqError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert!((log_sigmoid(800.0)).abs() < 1e-300);
        assert_eq!(log_sigmoid(-800.0), -800.0);
        assert!((log_sigmoid(0.0) + std::f64::consts::LN_2).abs() < 1e-15);
        for x in [-30.0, -2.5, -1e-3, 0.4, 7.0, 35.0] {
            assert!((log_sigmoid(x) - sigmoid(x).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn span_overlap() {
        assert_eq!(Span::new(0, 2).overlap(&Span::new(1, 3)), 2);
        assert_eq!(Span::new(0, 1).overlap(&Span::new(2, 3)), 0);
        assert_eq!(Span::new(2, 3).overlap(&Span::new(3, 4)), 1);
        assert!(Span::new(1, 1).validate(1).is_err());
    }

    proptest! {
        #[test]
        fn count_matches_closed_form(n in 1usize..=64, l in prop::sample::select(vec![1usize, 5, 10])) {
            let spans = enumerate_spans(n, l);
            prop_assert_eq!(spans.len(), candidate_count(n, l));
            prop_assert_eq!(spans, brute_force(n, l));
        }

        #[test]
        fn prefix_sum_matches_naive(
            rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..9),
            w in prop::collection::vec(-2.0f64..2.0, 12),
        ) {
            let emb = toy(rows);
            let heads = HeadWeights { start: w[0..4].to_vec(), end: w[4..8].to_vec(), mention: w[8..12].to_vec() };
            let spans = enumerate_spans(emb.len(), 10);
            let scored = mention_scores(&emb, &heads, &spans).unwrap();
            for m in scored {
                let s = m.span;
                let naive = dot(&heads.start, emb.token(s.start))
                    + dot(&heads.end, emb.token(s.end))
                    + (s.start..=s.end).map(|t| dot(&heads.mention, emb.token(t))).sum::<f64>();
                prop_assert!((m.logit - naive).abs() <= 1e-6 * naive.abs().max(1.0));
                prop_assert!(m.log_p_mention <= 0.0);
            }
        }

        #[test]
        fn mention_probability_increasing(x in -40.0f64..40.0, d in 1e-3f64..5.0) {
            prop_assert!(log_sigmoid(x + d) > log_sigmoid(x));
        }
    }
}
