//! Python module `elq`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use elq_core::data::FeatureSource;
use elq_core::encoder::tokenize as core_tokenize;
use elq_core::evalmetrics::{self, EntityMention, TupleSets};
use elq_core::pipeline::{self, CatalogPaths, QuestionFiles};
use elq_core::spans;
use elq_core::{
    Checkpoint, Decoder, DecoderConfig, EntityCatalog, EvalMode, EvalReport, HnswParams,
    IndexMode, Matrix, MipsIndex, Model, SyntheticWorkloadSpec, TokenizedQuestion, TrainConfig,
};

create_exception!(elq, ElqError, PyException, "Raised for every elq failure; the message starts with the error category.");

fn to_py(e: elq_core::ElqError) -> PyErr {
    ElqError::new_err(format!("[{}] {e}", e.category()))
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    core_tokenize(text)
}

/// Candidate spans of a question with `n` tokens as inclusive `(start, end)` pairs.
#[pyfunction]
#[pyo3(signature = (n, max_len = 10))]
fn enumerate_spans(n: usize, max_len: usize) -> Vec<(usize, usize)> {
    spans::enumerate_spans(n, max_len)
        .into_iter()
        .map(|s| (s.start, s.end))
        .collect()
}

#[pyfunction]
#[pyo3(signature = (n, max_len = 10))]
fn candidate_count(n: usize, max_len: usize) -> usize {
    spans::candidate_count(n, max_len)
}

#[pyclass(name = "Catalog", frozen)]
struct PyCatalog {
    inner: EntityCatalog,
}

#[pymethods]
impl PyCatalog {
    #[staticmethod]
    fn load(entities: PathBuf, embeddings: PathBuf) -> PyResult<Self> {
        let inner = EntityCatalog::load(&entities, &embeddings).map_err(to_py)?;
        Ok(PyCatalog { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn ids(&self) -> Vec<String> {
        self.inner.records().iter().map(|r| r.id.clone()).collect()
    }

    fn title(&self, index: usize) -> PyResult<String> {
        Ok(self.inner.record(index).map_err(to_py)?.title.clone())
    }

    fn index_of(&self, id: &str) -> Option<usize> {
        self.inner.index_of(id)
    }

    fn embedding(&self, index: usize) -> PyResult<Vec<f32>> {
        Ok(self.inner.get_embedding(index).map_err(to_py)?.to_vec())
    }
}

#[pyclass(name = "Index", frozen)]
struct PyIndex {
    inner: MipsIndex,
}

#[pymethods]
impl PyIndex {
    #[staticmethod]
    #[pyo3(signature = (catalog, mode = "hnsw", m = 32, ef_construction = 200, ef_search = 256, seed = 0))]
    fn build(
        catalog: &PyCatalog,
        mode: &str,
        m: usize,
        ef_construction: usize,
        ef_search: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let mode: IndexMode = mode.parse().map_err(to_py)?;
        let params = HnswParams {
            max_neighbors: m,
            ef_construction,
            ef_search,
        };
        let inner = MipsIndex::build(&catalog.inner, mode, params, seed).map_err(to_py)?;
        Ok(PyIndex { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf, catalog: &PyCatalog) -> PyResult<Self> {
        let inner = MipsIndex::load(&path, &catalog.inner).map_err(to_py)?;
        Ok(PyIndex { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Top-`k` `(entity index, inner product)` pairs, best first.
    #[pyo3(signature = (query, k = 10))]
    fn search(&self, query: Vec<f64>, k: usize) -> PyResult<Vec<(usize, f64)>> {
        self.inner.search(&query, k).map_err(to_py)
    }
}

#[pyclass(name = "Linker", frozen)]
struct PyLinker {
    model: Model,
    catalog: EntityCatalog,
    index: MipsIndex,
    config: DecoderConfig,
}

#[pymethods]
impl PyLinker {
    #[new]
    #[pyo3(signature = (checkpoint, catalog, index, gamma = elq_core::decoder::DEFAULT_GAMMA, top_k = 10, fallback = 50, max_span_len = 10))]
    fn new(
        checkpoint: PathBuf,
        catalog: &PyCatalog,
        index: &PyIndex,
        gamma: f64,
        top_k: usize,
        fallback: usize,
        max_span_len: usize,
    ) -> PyResult<Self> {
        let model = Checkpoint::load(&checkpoint).map_err(to_py)?.model;
        let config = DecoderConfig {
            gamma,
            top_k_entities: top_k,
            fallback_mentions: fallback,
            max_span_len,
        };
        let linker = PyLinker {
            model,
            catalog: catalog.inner.clone(),
            index: index.inner.clone(),
            config,
        };
        linker.decoder()?;
        Ok(linker)
    }

    /// Links `text`. `features` optionally replaces the encoder's base
    /// vectors (one row per token). Returns a list of dicts sorted by start.
    #[pyo3(signature = (text, features = None))]
    fn link<'py>(
        &self,
        py: Python<'py>,
        text: &str,
        features: Option<Vec<Vec<f64>>>,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let question = TokenizedQuestion::new("q", text);
        let f = match features {
            Some(rows) => Matrix::from_rows(&rows).map_err(to_py)?,
            None => FeatureSource::none()
                .features(&self.model.encoder, &question)
                .map_err(to_py)?,
        };
        let emb = self
            .model
            .encoder
            .encode_features(&question, &f)
            .map_err(to_py)?;
        let linked = self.decoder()?.link(&emb).map_err(to_py)?;
        linked
            .iter()
            .map(|p| {
                let d = PyDict::new(py);
                d.set_item("entity_id", &p.entity_id)?;
                d.set_item("start", p.span.start)?;
                d.set_item("end", p.span.end)?;
                d.set_item("mention", question.tokens[p.span.start..=p.span.end].join(" "))?;
                d.set_item("log_mention", p.log_p_mention)?;
                d.set_item("log_entity", p.log_p_entity)?;
                d.set_item("joint", p.joint)?;
                Ok(d)
            })
            .collect()
    }
}

impl PyLinker {
    fn decoder(&self) -> PyResult<Decoder<'_>> {
        Decoder::new(&self.model.heads, &self.index, &self.catalog, self.config).map_err(to_py)
    }
}

type Tuples = BTreeMap<String, Vec<(String, usize, usize)>>;

fn tuple_sets(items: Tuples) -> TupleSets {
    items
        .into_iter()
        .map(|(id, ts)| {
            let set: BTreeSet<EntityMention> = ts
                .into_iter()
                .map(|(e, s, t)| EntityMention::new(e, s, t))
                .collect();
            (id, set)
        })
        .collect()
}

fn report_dict<'py>(py: Python<'py>, r: &EvalReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("correct", r.correct)?;
    d.set_item("gold", r.gold)?;
    d.set_item("predicted", r.predicted)?;
    d.set_item("precision", r.precision)?;
    d.set_item("recall", r.recall)?;
    d.set_item("f1", r.f1)?;
    Ok(d)
}

/// `gold` and `pred` map question id to `[(entity_id, start, end), ...]`.
#[pyfunction]
fn weak_match<'py>(py: Python<'py>, gold: Tuples, pred: Tuples) -> PyResult<Bound<'py, PyDict>> {
    let r = evalmetrics::weak_match(&tuple_sets(gold), &tuple_sets(pred)).map_err(to_py)?;
    report_dict(py, &r)
}

#[pyfunction]
fn md_only<'py>(py: Python<'py>, gold: Tuples, pred: Tuples) -> PyResult<Bound<'py, PyDict>> {
    let r = evalmetrics::md_only(&tuple_sets(gold), &tuple_sets(pred)).map_err(to_py)?;
    report_dict(py, &r)
}

/// Writes a synthetic workload into `out_dir`; returns the file paths.
#[pyfunction]
#[pyo3(signature = (out_dir, entities = 1000, dim = 64, train = 2000, dev = 500, test = 500, noise = 0.1, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn generate(
    out_dir: PathBuf,
    entities: usize,
    dim: usize,
    train: usize,
    dev: usize,
    test: usize,
    noise: f64,
    seed: u64,
) -> PyResult<BTreeMap<String, PathBuf>> {
    let spec = SyntheticWorkloadSpec {
        entities,
        dim,
        train_questions: train,
        dev_questions: dev,
        test_questions: test,
        noise,
        seed,
        ..Default::default()
    };
    let p = pipeline::cmd_generate(&spec, &out_dir).map_err(to_py)?;
    let mut out = BTreeMap::new();
    out.insert("entities".into(), p.entities.clone());
    out.insert("embeddings".into(), p.embeddings.clone());
    for (name, (q, f)) in ["train", "dev", "test"].iter().zip(p.splits.iter()) {
        out.insert(format!("{name}_questions"), q.clone());
        out.insert(format!("{name}_features"), f.clone());
    }
    Ok(out)
}

/// Trains on a questions file and writes the checkpoint and loss curve.
/// Returns the per-epoch total losses.
#[pyfunction]
#[pyo3(signature = (data, entities, embeddings, index_path, checkpoint, loss_curve, features = None, epochs = 100, learning_rate = 1e-2, batch_size = 128, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn train(
    data: PathBuf,
    entities: PathBuf,
    embeddings: PathBuf,
    index_path: PathBuf,
    checkpoint: PathBuf,
    loss_curve: PathBuf,
    features: Option<PathBuf>,
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
    seed: u64,
) -> PyResult<Vec<f64>> {
    let config = TrainConfig {
        epochs,
        learning_rate,
        batch_size,
        seed,
        ..Default::default()
    };
    let outcome = pipeline::cmd_train(
        &QuestionFiles::new(data, features),
        &CatalogPaths::new(entities, embeddings),
        &index_path,
        &config,
        &checkpoint,
        &loss_curve,
    )
    .map_err(to_py)?;
    Ok(outcome.epochs.iter().map(|r| r.total).collect())
}

/// Builds an index over a catalog file pair and saves it.
#[pyfunction]
#[pyo3(signature = (entities, embeddings, index_path, mode = "hnsw", seed = 0))]
fn build_index(
    entities: PathBuf,
    embeddings: PathBuf,
    index_path: PathBuf,
    mode: &str,
    seed: u64,
) -> PyResult<()> {
    let mode: IndexMode = mode.parse().map_err(to_py)?;
    pipeline::cmd_build_index(
        &CatalogPaths::new(entities, embeddings),
        mode,
        HnswParams::default(),
        seed,
        &index_path,
    )
    .map_err(to_py)?;
    Ok(())
}

/// Links a questions file and writes predictions JSONL. Returns the
/// number of questions linked.
#[pyfunction]
#[pyo3(signature = (questions, checkpoint, entities, embeddings, index_path, out, features = None, gamma = elq_core::decoder::DEFAULT_GAMMA, threads = 0))]
#[allow(clippy::too_many_arguments)]
fn link_file(
    questions: PathBuf,
    checkpoint: PathBuf,
    entities: PathBuf,
    embeddings: PathBuf,
    index_path: PathBuf,
    out: PathBuf,
    features: Option<PathBuf>,
    gamma: f64,
    threads: usize,
) -> PyResult<usize> {
    let config = DecoderConfig {
        gamma,
        ..Default::default()
    };
    let preds = pipeline::cmd_link(
        &QuestionFiles::new(questions, features),
        &checkpoint,
        &CatalogPaths::new(entities, embeddings),
        &index_path,
        config,
        threads,
        &out,
    )
    .map_err(to_py)?;
    Ok(preds.len())
}

/// Scores a predictions file against a gold questions file
/// (`mode`: full, md-only or strong).
#[pyfunction]
#[pyo3(signature = (gold, predictions, mode = "full"))]
fn evaluate<'py>(
    py: Python<'py>,
    gold: PathBuf,
    predictions: PathBuf,
    mode: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let mode: EvalMode = mode.parse().map_err(to_py)?;
    let r = pipeline::cmd_eval(&gold, Some(&predictions), mode, None).map_err(to_py)?;
    report_dict(py, &r)
}

#[pymodule]
fn elq(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ElqError", m.py().get_type::<ElqError>())?;
    m.add_class::<PyCatalog>()?;
    m.add_class::<PyIndex>()?;
    m.add_class::<PyLinker>()?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(enumerate_spans, m)?)?;
    m.add_function(wrap_pyfunction!(candidate_count, m)?)?;
    m.add_function(wrap_pyfunction!(weak_match, m)?)?;
    m.add_function(wrap_pyfunction!(md_only, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(build_index, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(link_file, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
