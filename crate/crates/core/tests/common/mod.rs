#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use elq_core::index::{HnswParams, IndexMode};
use elq_core::pipeline::{
    cmd_build_index, cmd_eval, cmd_generate, cmd_link, cmd_train, CatalogPaths, EvalMode,
    QuestionFiles,
};
use elq_core::synth::WorkloadPaths;
use elq_core::training::TrainOutcome;
use elq_core::{DecoderConfig, EvalReport, SyntheticWorkloadSpec, TrainConfig};

/// Scratch directory under the cargo target dir, emptied first.
pub fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

pub struct Run {
    pub paths: WorkloadPaths,
    pub catalog: CatalogPaths,
    pub index: PathBuf,
    pub checkpoint: PathBuf,
    pub curve: PathBuf,
    pub predictions: PathBuf,
    /// Entity embedding file contents right after generation.
    pub embeddings_before: Vec<u8>,
    pub outcome: TrainOutcome,
    pub weak: EvalReport,
    pub md_only: EvalReport,
    pub elapsed: Duration,
}

impl Run {
    pub fn test_files(&self) -> QuestionFiles {
        let (q, f) = self.paths.test();
        QuestionFiles::new(q, Some(f.to_owned()))
    }
}

/// generate → build-index → train → link → eval on the test split.
pub fn full_run(
    dir: &Path,
    spec: &SyntheticWorkloadSpec,
    mode: IndexMode,
    config: &TrainConfig,
) -> Run {
    let started = Instant::now();
    let paths = cmd_generate(spec, dir).unwrap();
    let embeddings_before = std::fs::read(&paths.embeddings).unwrap();
    let catalog = CatalogPaths::from(&paths);
    let index = dir.join("entities.idx");
    cmd_build_index(&catalog, mode, HnswParams::default(), spec.seed, &index).unwrap();

    let (tq, tf) = paths.train();
    let checkpoint = dir.join("model.ckpt");
    let curve = dir.join("loss.csv");
    let outcome = cmd_train(
        &QuestionFiles::new(tq, Some(tf.to_owned())),
        &catalog,
        &index,
        config,
        &checkpoint,
        &curve,
    )
    .unwrap();

    let (q, f) = paths.test();
    let predictions = dir.join("predictions.jsonl");
    cmd_link(
        &QuestionFiles::new(q, Some(f.to_owned())),
        &checkpoint,
        &catalog,
        &index,
        DecoderConfig::default(),
        1,
        &predictions,
    )
    .unwrap();
    let weak = cmd_eval(q, Some(&predictions), EvalMode::Full, None).unwrap();
    let md_only = cmd_eval(q, Some(&predictions), EvalMode::MdOnly, None).unwrap();
    Run {
        catalog,
        index,
        checkpoint,
        curve,
        predictions,
        embeddings_before,
        outcome,
        weak,
        md_only,
        elapsed: started.elapsed(),
        paths,
    }
}
