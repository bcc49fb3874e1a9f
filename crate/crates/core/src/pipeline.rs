//! File-level commands: generate, build-index, train, link, eval, bench.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binary;
use crate::catalog::EntityCatalog;
use crate::data::{
    gold_sets, prediction_sets, read_predictions, read_questions, training_examples,
    write_predictions, FeatureSource, PredictionEntry, PredictionRecord, QuestionRecord,
};
use crate::decoder::{Decoder, DecoderConfig, StageTimes};
use crate::error::{ElqError, Result};
use crate::evalmetrics::{el_only, evaluate, EvalReport, MatchMode};
use crate::index::{HnswParams, IndexMode, MipsIndex};
use crate::model::{Checkpoint, Model};
use crate::synth::{generate, write_workload, SyntheticWorkloadSpec, WorkloadPaths};
use crate::training::{train, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogPaths {
    pub records: PathBuf,
    pub embeddings: PathBuf,
}

impl CatalogPaths {
    pub fn new(records: impl Into<PathBuf>, embeddings: impl Into<PathBuf>) -> Self {
        CatalogPaths {
            records: records.into(),
            embeddings: embeddings.into(),
        }
    }

    pub fn load(&self) -> Result<EntityCatalog> {
        EntityCatalog::load(&self.records, &self.embeddings)
    }
}

impl From<&WorkloadPaths> for CatalogPaths {
    fn from(p: &WorkloadPaths) -> Self {
        CatalogPaths::new(&p.entities, &p.embeddings)
    }
}

/// A questions file plus optional precomputed encoder features.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionFiles {
    pub questions: PathBuf,
    pub features: Option<PathBuf>,
}

impl QuestionFiles {
    pub fn new(questions: impl Into<PathBuf>, features: Option<PathBuf>) -> Self {
        QuestionFiles {
            questions: questions.into(),
            features,
        }
    }

    fn load(&self) -> Result<(Vec<QuestionRecord>, FeatureSource)> {
        Ok((
            read_questions(&self.questions)?,
            FeatureSource::load(self.features.as_deref())?,
        ))
    }
}

pub fn cmd_generate(spec: &SyntheticWorkloadSpec, out_dir: &Path) -> Result<WorkloadPaths> {
    let workload = generate(spec)?;
    write_workload(&workload, out_dir)
}

pub fn cmd_build_index(
    catalog: &CatalogPaths,
    mode: IndexMode,
    params: HnswParams,
    seed: u64,
    out: &Path,
) -> Result<MipsIndex> {
    let catalog = catalog.load()?;
    let index = MipsIndex::build(&catalog, mode, params, seed)?;
    index.save(out)?;
    Ok(index)
}

/// Trains a fresh model, writing the checkpoint and a loss curve CSV
/// (`epoch,loss_md,loss_ed,total`).
pub fn cmd_train(
    data: &QuestionFiles,
    catalog: &CatalogPaths,
    index_path: &Path,
    config: &TrainConfig,
    checkpoint_out: &Path,
    curve_out: &Path,
) -> Result<TrainOutcome> {
    let catalog = catalog.load()?;
    let index = MipsIndex::load(index_path, &catalog)?;
    let (questions, features) = data.load()?;
    let base_dim = features.base_dim().unwrap_or(catalog.dim());
    let mut model = Model::new(config.seed, base_dim, catalog.dim());
    let examples = training_examples(&questions, &features, &model.encoder, &catalog)?;
    let outcome = train(&examples, &mut model, &catalog, &index, config)?;
    Checkpoint {
        model,
        config: config.clone(),
    }
    .save(checkpoint_out)?;
    write_loss_curve(curve_out, &outcome)?;
    Ok(outcome)
}

pub fn write_loss_curve(path: &Path, outcome: &TrainOutcome) -> Result<()> {
    let mut w = binary::create(path)?;
    let io = |e| ElqError::io(path, e);
    writeln!(w, "epoch,loss_md,loss_ed,total").map_err(io)?;
    for (i, r) in outcome.epochs.iter().enumerate() {
        writeln!(w, "{},{},{},{}", i + 1, r.loss_md, r.loss_ed, r.total).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Links one question.
pub fn link_question(
    model: &Model,
    decoder: &Decoder<'_>,
    features: &FeatureSource,
    question: &QuestionRecord,
) -> Result<PredictionRecord> {
    let tq = question.tokenized();
    let f = features.features(&model.encoder, &tq)?;
    let emb = model.encoder.encode_features(&tq, &f)?;
    Ok(PredictionRecord {
        id: question.id.clone(),
        predictions: decoder.link(&emb)?.iter().map(PredictionEntry::from).collect(),
    })
}

/// Links every question on a pool of `threads` workers (0 = all cores).
/// Output order follows the input.
pub fn link_questions(
    model: &Model,
    decoder: &Decoder<'_>,
    features: &FeatureSource,
    questions: &[QuestionRecord],
    threads: usize,
) -> Result<Vec<PredictionRecord>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| ElqError::InvalidInput(format!("thread pool: {e}")))?;
    pool.install(|| {
        questions
            .par_iter()
            .map(|q| link_question(model, decoder, features, q))
            .collect()
    })
}

pub fn cmd_link(
    questions: &QuestionFiles,
    checkpoint: &Path,
    catalog: &CatalogPaths,
    index_path: &Path,
    config: DecoderConfig,
    threads: usize,
    out: &Path,
) -> Result<Vec<PredictionRecord>> {
    let catalog = catalog.load()?;
    let index = MipsIndex::load(index_path, &catalog)?;
    let model = Checkpoint::load(checkpoint)?.model;
    let (records, features) = questions.load()?;
    let decoder = Decoder::new(&model.heads, &index, &catalog, config)?;
    let predictions = link_questions(&model, &decoder, &features, &records, threads)?;
    write_predictions(out, &predictions)?;
    Ok(predictions)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// Weak matching of predicted (entity, span) tuples.
    Full,
    MdOnly,
    /// Gold spans are linked directly; needs the model, catalog and index.
    ElOnly,
    /// Exact boundaries; a debugging aid.
    Strong,
}

impl std::str::FromStr for EvalMode {
    type Err = ElqError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(EvalMode::Full),
            "md-only" => Ok(EvalMode::MdOnly),
            "el-only" => Ok(EvalMode::ElOnly),
            "strong" => Ok(EvalMode::Strong),
            other => Err(ElqError::InvalidInput(format!(
                "unknown eval mode {other:?} (expected full, md-only, el-only or strong)"
            ))),
        }
    }
}

/// What el-only evaluation needs to link gold spans itself.
#[derive(Debug, Clone)]
pub struct ElOnlyInputs {
    pub features: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub catalog: CatalogPaths,
    pub index: PathBuf,
    pub top_k: usize,
}

/// Scores predictions against gold annotations. `predictions` is ignored
/// in el-only mode.
pub fn cmd_eval(
    gold_path: &Path,
    predictions: Option<&Path>,
    mode: EvalMode,
    el_inputs: Option<&ElOnlyInputs>,
) -> Result<EvalReport> {
    let questions = read_questions(gold_path)?;
    let gold = gold_sets(&questions);
    let match_mode = match mode {
        EvalMode::Full => MatchMode::Weak,
        EvalMode::MdOnly => MatchMode::MentionOnly,
        EvalMode::Strong => MatchMode::Strong,
        EvalMode::ElOnly => {
            let inputs = el_inputs.ok_or_else(|| {
                ElqError::InvalidInput(
                    "el-only evaluation needs a checkpoint, catalog and index".into(),
                )
            })?;
            let catalog = inputs.catalog.load()?;
            let index = MipsIndex::load(&inputs.index, &catalog)?;
            let model = Checkpoint::load(&inputs.checkpoint)?.model;
            let features = FeatureSource::load(inputs.features.as_deref())?;
            let mut embs = BTreeMap::new();
            for q in &questions {
                let tq = q.tokenized();
                if tq.is_empty() {
                    continue;
                }
                let f = features.features(&model.encoder, &tq)?;
                embs.insert(q.id.clone(), model.encoder.encode_features(&tq, &f)?);
            }
            return el_only(&gold, &embs, &index, &catalog, inputs.top_k);
        }
    };
    let path = predictions.ok_or_else(|| {
        ElqError::InvalidInput(format!("{mode:?} evaluation needs a predictions file"))
    })?;
    let pred = prediction_sets(&read_predictions(path)?)?;
    evaluate(&gold, &pred, match_mode)
}

/// Mean seconds per repetition spent in each stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageSeconds {
    pub encode: f64,
    pub mention_scoring: f64,
    pub retrieval: f64,
    pub decode: f64,
}

impl StageSeconds {
    pub fn sum(&self) -> f64 {
        self.encode + self.mention_scoring + self.retrieval + self.decode
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub questions: usize,
    pub repetitions: usize,
    /// Questions per forward pass.
    pub batch_size: usize,
    pub threads: usize,
    /// Wall time of each repetition.
    pub samples_seconds: Vec<f64>,
    /// Mean of `samples_seconds`.
    pub total_seconds: f64,
    pub questions_per_second: f64,
    pub stages: StageSeconds,
}

impl BenchReport {
    pub fn to_table(&self) -> String {
        let s = &self.stages;
        let mut out = format!(
            "questions  {}\nrepetitions {}\ntotal      {:.4} s\nQ/s        {:.2}\n",
            self.questions, self.repetitions, self.total_seconds, self.questions_per_second
        );
        for (name, v) in [
            ("encode", s.encode),
            ("mentions", s.mention_scoring),
            ("retrieval", s.retrieval),
            ("decode", s.decode),
        ] {
            out.push_str(&format!("  {name:<9} {v:.4} s\n"));
        }
        out
    }
}

/// Times the full linking path over `questions`, one question at a time
/// on a single thread.
pub fn bench_questions(
    model: &Model,
    decoder: &Decoder<'_>,
    features: &FeatureSource,
    questions: &[QuestionRecord],
    repetitions: usize,
) -> Result<BenchReport> {
    if repetitions == 0 {
        return Err(ElqError::InvalidInput("repetitions must be >= 1".into()));
    }
    let tokenized: Vec<_> = questions.iter().map(QuestionRecord::tokenized).collect();
    let inputs = tokenized
        .iter()
        .map(|tq| features.features(&model.encoder, tq))
        .collect::<Result<Vec<_>>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| ElqError::InvalidInput(format!("thread pool: {e}")))?;
    pool.install(|| {
        let mut samples = Vec::with_capacity(repetitions);
        let mut encode = Duration::ZERO;
        let mut stages = StageTimes::default();
        for _ in 0..repetitions {
            let start = Instant::now();
            for (tq, f) in tokenized.iter().zip(&inputs) {
                let t = Instant::now();
                let emb = model.encoder.encode_features(tq, f)?;
                encode += t.elapsed();
                std::hint::black_box(decoder.decode_timed(&emb, &mut stages)?);
            }
            samples.push(start.elapsed().as_secs_f64());
        }
        let reps = repetitions as f64;
        let total = samples.iter().sum::<f64>() / reps;
        Ok(BenchReport {
            questions: questions.len(),
            repetitions,
            batch_size: 1,
            threads: 1,
            total_seconds: total,
            questions_per_second: if total > 0.0 {
                questions.len() as f64 / total
            } else {
                0.0
            },
            samples_seconds: samples,
            stages: StageSeconds {
                encode: encode.as_secs_f64() / reps,
                mention_scoring: stages.mention_scoring.as_secs_f64() / reps,
                retrieval: stages.retrieval.as_secs_f64() / reps,
                decode: stages.decode.as_secs_f64() / reps,
            },
        })
    })
}

pub fn cmd_bench(
    questions: &QuestionFiles,
    checkpoint: &Path,
    catalog: &CatalogPaths,
    index_path: &Path,
    config: DecoderConfig,
    repetitions: usize,
) -> Result<BenchReport> {
    let catalog = catalog.load()?;
    let index = MipsIndex::load(index_path, &catalog)?;
    let model = Checkpoint::load(checkpoint)?.model;
    let (records, features) = questions.load()?;
    let decoder = Decoder::new(&model.heads, &index, &catalog, config)?;
    bench_questions(&model, &decoder, &features, &records, repetitions)
}

/// Serializes a report as pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| ElqError::Format(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| ElqError::io(path, e))
}
