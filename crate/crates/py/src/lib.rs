//! Python bindings: metrics, grid assignment, synthetic data, and the pointer model.

use std::path::PathBuf;

use gridptr::data::{filter_trainable, load_dataset, BBox, EmbeddingTable, FeatureProvider, QaExample};
use gridptr::metrics::{self, EnsembleInput, Source};
use gridptr::model::{self, ModelConfig, PointerModel, PredictionOutput, Providers, StackMode, TrainConfig};
use gridptr::synth::{self, SynthConfig};
use pyo3::exceptions::{PyArithmeticError, PyIOError, PyKeyError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: gridptr::Error) -> PyErr {
    match e {
        gridptr::Error::Io(io) => PyIOError::new_err(io.to_string()),
        gridptr::Error::Numeric(m) => PyArithmeticError::new_err(m),
        gridptr::Error::MissingFeatures { .. } => PyKeyError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for gridptr::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

#[pyfunction]
fn levenshtein(a: &str, b: &str) -> usize {
    metrics::levenshtein(a, b)
}

/// Normalized similarity after trimming and lowercasing; `threshold` zeroes low scores.
#[pyfunction]
#[pyo3(signature = (pred, gt, threshold=None))]
fn nls(pred: &str, gt: &str, threshold: Option<f64>) -> f64 {
    metrics::nls(pred, gt, threshold)
}

#[pyfunction]
fn vqa_accuracy(pred: &str, human_answers: Vec<String>) -> PyResult<f64> {
    metrics::vqa_accuracy(pred, &human_answers).py()
}

/// Best similarity of `pred` against any ground-truth answer.
#[pyfunction]
#[pyo3(signature = (pred, answers, threshold=None))]
fn best_nls(pred: &str, answers: Vec<String>, threshold: Option<f64>) -> f64 {
    metrics::best_nls(pred, &answers, threshold).0
}

/// `(row, col)` cells covered by a normalized box on a `grid x grid` lattice.
#[pyfunction]
fn cells_for_box(x0: f64, y0: f64, x1: f64, y1: f64, grid: usize) -> PyResult<Vec<(usize, usize)>> {
    if grid == 0 {
        return Err(PyValueError::new_err("grid must be positive"));
    }
    let b = BBox::new(x0, y0, x1, y1);
    b.validate().map_err(PyValueError::new_err)?;
    Ok(gridptr::grid::cells_for_box(&b, grid))
}

/// Rows are `(question_id, classifier_answer, classifier_conf, pointer_answer, pointer_conf)`.
/// Returns `(question_id, answer, source)` with source `"classifier"` or `"pointer"`.
#[pyfunction]
#[pyo3(signature = (rows, tau=metrics::ENSEMBLE_TAU))]
fn ensemble_select(rows: Vec<(String, String, f64, String, f64)>, tau: f64) -> PyResult<Vec<(String, String, String)>> {
    let inputs: Vec<EnsembleInput> = rows
        .into_iter()
        .map(|(question_id, classifier_answer, classifier_confidence, pointer_answer, pointer_confidence)| {
            EnsembleInput {
                question_id,
                classifier_answer,
                classifier_confidence,
                pointer_answer,
                pointer_confidence,
            }
        })
        .collect();
    Ok(metrics::ensemble_select(&inputs, tau)
        .py()?
        .into_iter()
        .map(|c| {
            let src = match c.source {
                Source::Classifier => "classifier",
                Source::Pointer => "pointer",
            };
            (c.question_id, c.answer, src.to_string())
        })
        .collect())
}

/// Writes `dataset.json` and `features.bin` under `out_dir`; returns both paths.
#[pyfunction]
#[pyo3(signature = (out_dir, seed=42, count=200, grid=19, vis_channels=16, extra_grids=Vec::new()))]
fn synthesize(
    out_dir: PathBuf,
    seed: u64,
    count: usize,
    grid: usize,
    vis_channels: usize,
    extra_grids: Vec<usize>,
) -> PyResult<(PathBuf, PathBuf)> {
    let corpus = synth::generate(&SynthConfig {
        seed,
        count,
        grid,
        vis_channels,
        extra_grids,
    })
    .py()?;
    let paths = synth::write_corpus(&corpus, &out_dir).py()?;
    Ok((paths.dataset, paths.features))
}

/// One question's prediction.
#[pyclass(get_all, frozen)]
struct Prediction {
    question_id: String,
    answer: String,
    confidence: f32,
    argmax_cell: (usize, usize),
    grid: usize,
    /// Row-major `grid x grid` attention map.
    attention: Vec<Vec<f32>>,
}

#[pymethods]
impl Prediction {
    fn __repr__(&self) -> String {
        format!(
            "Prediction(question_id={:?}, answer={:?}, confidence={:.4}, cell={:?})",
            self.question_id, self.answer, self.confidence, self.argmax_cell
        )
    }
}

impl Prediction {
    fn new(question_id: &str, out: PredictionOutput) -> Self {
        let attention = out.p_att.data().chunks(out.grid).map(<[f32]>::to_vec).collect();
        Prediction {
            question_id: question_id.to_string(),
            answer: out.answer().to_string(),
            confidence: out.confidence,
            argmax_cell: out.argmax_cell,
            grid: out.grid,
            attention,
        }
    }
}

struct Corpus {
    examples: Vec<QaExample>,
    table: EmbeddingTable,
    features: FeatureProvider,
}

fn open_corpus(
    dataset: PathBuf,
    features: PathBuf,
    embeddings: Option<PathBuf>,
    grid: usize,
    channels: usize,
) -> PyResult<Corpus> {
    let examples = load_dataset(&dataset).py()?;
    let table = match embeddings {
        Some(p) => EmbeddingTable::load(&p).py()?,
        None => EmbeddingTable::fixture(),
    };
    let features = FeatureProvider::from_file(&features, grid).py()?;
    if features.channels != channels {
        return Err(PyValueError::new_err(format!(
            "feature file has {} visual channels, the model expects {channels}",
            features.channels
        )));
    }
    Ok(Corpus {
        examples,
        table,
        features,
    })
}

/// Grid pointer network with f32 weights.
#[pyclass]
struct Model {
    inner: PointerModel<f32>,
}

#[pymethods]
impl Model {
    /// Fresh model with the small default widths. `stack` is `stacked`, `single` or `fcn`.
    #[new]
    #[pyo3(signature = (stack="stacked", seed=0, vis_channels=16))]
    fn new(stack: &str, seed: u64, vis_channels: usize) -> PyResult<Self> {
        let stack: StackMode = stack.parse().py()?;
        let config = ModelConfig {
            stack,
            vis_channels,
            ..ModelConfig::default()
        };
        Ok(Model {
            inner: PointerModel::new(config, seed).py()?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model {
            inner: PointerModel::load(&path).py()?,
        })
    }

    fn save(&mut self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).py()
    }

    #[getter]
    fn stack(&self) -> String {
        self.inner.config.stack.to_string()
    }

    #[getter]
    fn vis_channels(&self) -> usize {
        self.inner.config.vis_channels
    }

    /// Trains on the answerable questions of `dataset`, returning per-epoch train ANLS.
    /// The model keeps the final weights.
    #[pyo3(signature = (dataset, features, embeddings=None, grid=19, epochs=300, seed=0, lr=model::DESK_LR, target_anls=None))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        &mut self,
        py: Python<'_>,
        dataset: PathBuf,
        features: PathBuf,
        embeddings: Option<PathBuf>,
        grid: usize,
        epochs: usize,
        seed: u64,
        lr: f64,
        target_anls: Option<f64>,
    ) -> PyResult<Vec<f64>> {
        let c = open_corpus(dataset, features, embeddings, grid, self.inner.config.vis_channels)?;
        let (kept, _) = filter_trainable(c.examples);
        let config = TrainConfig {
            epochs,
            seed,
            lr,
            target_anls,
            ..TrainConfig::default()
        };
        let start = self.inner.clone();
        let outcome = py
            .detach(|| model::train(start, &kept, &c.table, &c.features, &config))
            .py()?;
        self.inner = outcome.model;
        Ok(outcome.log.iter().map(|r| r.train_anls).collect())
    }

    /// Predictions for every question of `dataset` at grid size `grid`.
    #[pyo3(signature = (dataset, features, embeddings=None, grid=19))]
    fn predict(
        &self,
        dataset: PathBuf,
        features: PathBuf,
        embeddings: Option<PathBuf>,
        grid: usize,
    ) -> PyResult<Vec<Prediction>> {
        let c = open_corpus(dataset, features, embeddings, grid, self.inner.config.vis_channels)?;
        let providers = Providers {
            table: &c.table,
            features: &c.features,
        };
        c.examples
            .iter()
            .map(|e| Ok(Prediction::new(&e.question_id, model::predict(&self.inner, e, providers).py()?)))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("Model(stack={:?}, vis_channels={})", self.stack(), self.vis_channels())
    }
}

#[pymodule]
fn gridptr_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(levenshtein, m)?)?;
    m.add_function(wrap_pyfunction!(nls, m)?)?;
    m.add_function(wrap_pyfunction!(best_nls, m)?)?;
    m.add_function(wrap_pyfunction!(vqa_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(cells_for_box, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble_select, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_class::<Model>()?;
    m.add_class::<Prediction>()?;
    m.add("ENSEMBLE_TAU", metrics::ENSEMBLE_TAU)?;
    Ok(())
}
