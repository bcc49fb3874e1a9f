//! Synthetic planted-mention workloads.
//!
//! Words are pseudo-random syllable strings whose base embeddings are
//! screened against a secret unit direction `d`: title words project onto
//! `d` inside [`TITLE_BAND`], filler words at or below [`FILLER_CEILING`].
//! Mentions are then linearly detectable from the encoder features, and the
//! entity embedding of a title is the normalized mean of its words.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::catalog::{EntityCatalog, EntityRecord};
use crate::data::{write_questions, MentionRecord, QuestionRecord};
use crate::encoder::{write_precomputed, SyntheticEncoder};
use crate::error::{ElqError, Result};
use crate::matrix::{dot, Matrix};

pub const TITLE_BAND: (f64, f64) = (0.2, 0.35);
pub const FILLER_CEILING: f64 = -0.35;
const SYLLABLES_C: &[u8] = b"bdfghklmnprstvz";
const SYLLABLES_V: &[u8] = b"aeiou";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticWorkloadSpec {
    pub entities: usize,
    pub dim: usize,
    pub train_questions: usize,
    pub dev_questions: usize,
    pub test_questions: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub min_mentions: usize,
    pub max_mentions: usize,
    pub max_title_tokens: usize,
    /// Minimum number of filler tokens between two planted mentions.
    pub min_gap: usize,
    pub filler_words: usize,
    /// Expected norm of the Gaussian noise added to each planted token's
    /// unit base embedding (per-coordinate std `noise / sqrt(dim)`).
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticWorkloadSpec {
    fn default() -> Self {
        SyntheticWorkloadSpec {
            entities: 1000,
            dim: 64,
            train_questions: 2000,
            dev_questions: 500,
            test_questions: 500,
            min_tokens: 8,
            max_tokens: 12,
            min_mentions: 1,
            max_mentions: 2,
            max_title_tokens: 2,
            min_gap: 2,
            filler_words: 40,
            noise: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticWorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ElqError::InvalidInput(m));
        if self.entities == 0 || self.dim == 0 || self.filler_words == 0 {
            return bad("entities, dim and filler_words must be positive".into());
        }
        if self.max_title_tokens == 0 {
            return bad("max_title_tokens must be positive".into());
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return bad(format!(
                "token range {}..={} is empty",
                self.min_tokens, self.max_tokens
            ));
        }
        if self.min_mentions == 0 || self.min_mentions > self.max_mentions {
            return bad(format!(
                "mention range {}..={} is empty",
                self.min_mentions, self.max_mentions
            ));
        }
        if self.max_mentions > self.entities {
            return bad(format!(
                "{} distinct mentions need at least as many entities, got {}",
                self.max_mentions, self.entities
            ));
        }
        let needed = self.max_mentions * self.max_title_tokens + (self.max_mentions - 1) * self.min_gap;
        if needed > self.min_tokens {
            return bad(format!(
                "impossible packing: {} mentions of up to {} tokens with gaps of {} need {needed} tokens, questions may have only {}",
                self.max_mentions, self.max_title_tokens, self.min_gap, self.min_tokens
            ));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad(format!("noise must be finite and >= 0, got {}", self.noise));
        }
        Ok(())
    }
}

/// One generated question with its encoder input features.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticQuestion {
    pub record: QuestionRecord,
    pub features: Matrix,
}

#[derive(Debug, Clone)]
pub struct Workload {
    pub spec: SyntheticWorkloadSpec,
    pub catalog: EntityCatalog,
    pub direction: Vec<f64>,
    pub train: Vec<SyntheticQuestion>,
    pub dev: Vec<SyntheticQuestion>,
    pub test: Vec<SyntheticQuestion>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadPaths {
    pub entities: PathBuf,
    pub embeddings: PathBuf,
    pub manifest: PathBuf,
    /// `(questions, features)` for train, dev and test.
    pub splits: [(PathBuf, PathBuf); 3],
}

impl WorkloadPaths {
    pub fn in_dir(dir: &Path) -> Self {
        let split = |s: &str| (dir.join(format!("{s}.jsonl")), dir.join(format!("{s}.feat")));
        WorkloadPaths {
            entities: dir.join("entities.jsonl"),
            embeddings: dir.join("entities.emb"),
            manifest: dir.join("workload.json"),
            splits: [split("train"), split("dev"), split("test")],
        }
    }

    pub fn train(&self) -> (&Path, &Path) {
        (&self.splits[0].0, &self.splits[0].1)
    }

    pub fn dev(&self) -> (&Path, &Path) {
        (&self.splits[1].0, &self.splits[1].1)
    }

    pub fn test(&self) -> (&Path, &Path) {
        (&self.splits[2].0, &self.splits[2].1)
    }
}

struct Vocabulary<'a> {
    encoder: &'a SyntheticEncoder,
    direction: &'a [f64],
    seen: std::collections::HashSet<String>,
}

impl Vocabulary<'_> {
    fn candidate(&mut self, rng: &mut ChaCha8Rng) -> String {
        loop {
            let syllables = rng.random_range(2..=4);
            let mut w = String::with_capacity(2 * syllables);
            for _ in 0..syllables {
                w.push(*SYLLABLES_C.choose(rng).unwrap() as char);
                w.push(*SYLLABLES_V.choose(rng).unwrap() as char);
            }
            if !self.seen.contains(&w) {
                return w;
            }
        }
    }

    fn draw(&mut self, rng: &mut ChaCha8Rng, accept: impl Fn(f64) -> bool) -> String {
        loop {
            let w = self.candidate(rng);
            let p = dot(&self.encoder.base_embedding(&w), self.direction);
            if accept(p) {
                self.seen.insert(w.clone());
                return w;
            }
        }
    }
}

fn capitalize(tokens: &[&str]) -> String {
    let mut text = tokens.join(" ");
    if let Some(first) = text.get(0..1) {
        let upper = first.to_uppercase();
        text.replace_range(0..1, &upper);
    }
    text.push('?');
    text
}

/// Generates the catalog and the three question splits. Deterministic in
/// `spec.seed`.
pub fn generate(spec: &SyntheticWorkloadSpec) -> Result<Workload> {
    spec.validate()?;
    let encoder = SyntheticEncoder::new(spec.seed, spec.dim, spec.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut direction: Vec<f64> = (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = dot(&direction, &direction).sqrt();
    direction.iter_mut().for_each(|v| *v /= norm);

    let mut vocab = Vocabulary {
        encoder: &encoder,
        direction: &direction,
        seen: Default::default(),
    };
    let fillers: Vec<String> = (0..spec.filler_words)
        .map(|_| vocab.draw(&mut rng, |p| p <= FILLER_CEILING))
        .collect();
    let titles: Vec<Vec<String>> = (0..spec.entities)
        .map(|_| {
            let len = rng.random_range(1..=spec.max_title_tokens);
            (0..len)
                .map(|_| vocab.draw(&mut rng, |p| (TITLE_BAND.0..=TITLE_BAND.1).contains(&p)))
                .collect()
        })
        .collect();

    let mut records = Vec::with_capacity(spec.entities);
    let mut embeddings = Vec::with_capacity(spec.entities * spec.dim);
    for (i, words) in titles.iter().enumerate() {
        let title = words.join(" ");
        embeddings.extend(encoder.synthetic_entity_embedding(&title)?);
        let description = format!("{title} is synthetic entity number {i}");
        records.push(EntityRecord::new(entity_id(i), title, &description));
    }
    let catalog = EntityCatalog::new(records, embeddings, spec.dim)?;

    let noise = Normal::new(0.0, spec.noise / (spec.dim as f64).sqrt())
        .map_err(|e| ElqError::InvalidInput(e.to_string()))?;
    let mut split = |name: &str, count: usize| -> Result<Vec<SyntheticQuestion>> {
        (0..count)
            .map(|q| {
                plant_question(
                    spec,
                    &encoder,
                    &fillers,
                    &titles,
                    &noise,
                    &mut rng,
                    format!("{name}-{q:05}"),
                )
            })
            .collect()
    };
    let train = split("train", spec.train_questions)?;
    let dev = split("dev", spec.dev_questions)?;
    let test = split("test", spec.test_questions)?;
    Ok(Workload {
        spec: spec.clone(),
        catalog,
        direction,
        train,
        dev,
        test,
    })
}

pub fn entity_id(i: usize) -> String {
    format!("E{i:05}")
}

fn plant_question(
    spec: &SyntheticWorkloadSpec,
    encoder: &SyntheticEncoder,
    fillers: &[String],
    titles: &[Vec<String>],
    noise: &Normal<f64>,
    rng: &mut ChaCha8Rng,
    id: String,
) -> Result<SyntheticQuestion> {
    let n = rng.random_range(spec.min_tokens..=spec.max_tokens);
    let k = rng.random_range(spec.min_mentions..=spec.max_mentions);
    let entities = rand::seq::index::sample(rng, titles.len(), k).into_vec();
    let title_tokens: usize = entities.iter().map(|&e| titles[e].len()).sum();
    // spread the free filler slots over the k+1 gaps
    let mut gaps = vec![0usize; k + 1];
    for g in gaps.iter_mut().take(k).skip(1) {
        *g = spec.min_gap;
    }
    let free = n - title_tokens - (k - 1) * spec.min_gap;
    for _ in 0..free {
        gaps[rng.random_range(0..=k)] += 1;
    }

    let mut tokens: Vec<&str> = Vec::with_capacity(n);
    let mut planted = vec![false; n];
    let mut mentions = Vec::with_capacity(k);
    for (slot, &gap) in gaps.iter().enumerate() {
        for _ in 0..gap {
            tokens.push(fillers.choose(rng).unwrap());
        }
        if let Some(&e) = entities.get(slot) {
            let start = tokens.len();
            for w in &titles[e] {
                planted[tokens.len()] = true;
                tokens.push(w);
            }
            mentions.push(MentionRecord {
                start,
                end: tokens.len() - 1,
                entity_id: entity_id(e),
            });
        }
    }
    debug_assert_eq!(tokens.len(), n);

    let mut features = Matrix::zeros(n, spec.dim);
    for (i, t) in tokens.iter().enumerate() {
        let row = features.row_mut(i);
        row.copy_from_slice(&encoder.base_embedding(t));
        if planted[i] {
            row.iter_mut().for_each(|v| *v += noise.sample(rng));
        }
    }
    Ok(SyntheticQuestion {
        record: QuestionRecord {
            id,
            text: capitalize(&tokens),
            mentions,
        },
        features,
    })
}

fn write_split(questions: &[SyntheticQuestion], paths: &(PathBuf, PathBuf)) -> Result<()> {
    let records: Vec<QuestionRecord> = questions.iter().map(|q| q.record.clone()).collect();
    write_questions(&paths.0, &records)?;
    let features: Vec<(String, Matrix)> = questions
        .iter()
        .map(|q| (q.record.id.clone(), q.features.clone()))
        .collect();
    write_precomputed(&paths.1, &features)
}

/// Writes the catalog, the three splits and a manifest into `dir`.
pub fn write_workload(workload: &Workload, dir: &Path) -> Result<WorkloadPaths> {
    fs::create_dir_all(dir).map_err(|e| ElqError::io(dir, e))?;
    let paths = WorkloadPaths::in_dir(dir);
    workload.catalog.save(&paths.entities, &paths.embeddings)?;
    write_split(&workload.train, &paths.splits[0])?;
    write_split(&workload.dev, &paths.splits[1])?;
    write_split(&workload.test, &paths.splits[2])?;
    let manifest = serde_json::to_string_pretty(&workload.spec)
        .map_err(|e| ElqError::Format(e.to_string()))?;
    fs::write(&paths.manifest, manifest + "\n").map_err(|e| ElqError::io(&paths.manifest, e))?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::TokenizedQuestion;
    use crate::spans::Span;

    fn small() -> SyntheticWorkloadSpec {
        SyntheticWorkloadSpec {
            entities: 30,
            dim: 16,
            train_questions: 20,
            dev_questions: 5,
            test_questions: 5,
            filler_words: 10,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn planted_mentions_are_well_formed() {
        let w = generate(&small()).unwrap();
        assert_eq!(w.catalog.len(), 30);
        for q in w.train.iter().chain(&w.dev).chain(&w.test) {
            let tq = q.record.tokenized();
            assert!((8..=12).contains(&tq.len()));
            assert_eq!(q.features.rows(), tq.len());
            let spans: Vec<Span> = q.record.mentions.iter().map(|m| Span::new(m.start, m.end)).collect();
            assert!((1..=2).contains(&spans.len()));
            for (a, m) in spans.iter().zip(&q.record.mentions) {
                let e = w.catalog.index_of(&m.entity_id).unwrap();
                let title = &w.catalog.record(e).unwrap().title;
                assert_eq!(tq.tokens[a.start..=a.end].join(" "), *title);
                for b in &spans {
                    if a != b {
                        assert!(!a.overlaps(b));
                        assert!(a.end + 2 < b.start || b.end + 2 < a.start);
                    }
                }
            }
        }
    }

    #[test]
    fn words_respect_direction_margin() {
        let spec = small();
        let w = generate(&spec).unwrap();
        let enc = SyntheticEncoder::new(spec.seed, spec.dim, spec.dim);
        for q in &w.train {
            let tq = TokenizedQuestion::new("x", q.record.text.clone());
            let in_mention = |i: usize| q.record.mentions.iter().any(|m| (m.start..=m.end).contains(&i));
            for (i, t) in tq.tokens.iter().enumerate() {
                let p = dot(&enc.base_embedding(t), &w.direction);
                if in_mention(i) {
                    assert!(p >= TITLE_BAND.0 && p <= TITLE_BAND.1);
                } else {
                    assert!(p <= FILLER_CEILING);
                    assert_eq!(q.features.row(i), enc.base_embedding(t).as_slice());
                }
            }
        }
    }

    #[test]
    fn zero_noise_beats_orthogonal_distractor() {
        let spec = SyntheticWorkloadSpec { noise: 0.0, ..small() };
        let w = generate(&spec).unwrap();
        let enc = SyntheticEncoder::new(spec.seed, spec.dim, spec.dim);
        for q in &w.train {
            let tq = q.record.tokenized();
            let emb = enc.encode_features(&tq, &q.features).unwrap();
            for m in &q.record.mentions {
                let rep = crate::linker::mention_rep(&emb, Span::new(m.start, m.end)).unwrap();
                let e = w.catalog.index_of(&m.entity_id).unwrap();
                let own = crate::matrix::dot_mixed(&rep.vector, w.catalog.row(e));
                // a unit vector orthogonal to the entity embedding
                let x: Vec<f64> = w.catalog.row(e).iter().map(|&v| v as f64).collect();
                let mut o = vec![0.0; spec.dim];
                o[0] = 1.0;
                let c = x[0];
                o.iter_mut().zip(&x).for_each(|(a, b)| *a -= c * b);
                assert!(dot(&o, &x).abs() < 1e-6);
                assert!(own > dot(&rep.vector, &o) + 1e-3);
            }
        }
    }

    #[test]
    fn impossible_packing() {
        let spec = SyntheticWorkloadSpec {
            min_tokens: 4,
            max_tokens: 6,
            ..small()
        };
        assert!(matches!(spec.validate(), Err(ElqError::InvalidInput(m)) if m.contains("packing")));
    }

    #[test]
    fn deterministic_and_empty_splits() {
        let spec = SyntheticWorkloadSpec {
            train_questions: 0,
            dev_questions: 0,
            test_questions: 0,
            ..small()
        };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let p1 = write_workload(&generate(&spec).unwrap(), d1.path()).unwrap();
        let p2 = write_workload(&generate(&spec).unwrap(), d2.path()).unwrap();
        for (a, b) in [(&p1.entities, &p2.entities), (&p1.embeddings, &p2.embeddings), (&p1.splits[2].1, &p2.splits[2].1)] {
            assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
        }
        assert!(crate::data::read_questions(&p1.splits[0].0).unwrap().is_empty());
        assert!(crate::encoder::read_precomputed(&p1.splits[0].1).unwrap().is_empty());
    }
}
