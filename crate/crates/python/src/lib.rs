//! Python bindings: corpora, training and inference, metrics, Shapley
//! attributions and the helpfulness regression.

use std::cell::RefCell;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ohcsupport::checkpoint::{fit_baselines_and_ensemble, Checkpoint};
use ohcsupport::corpus::{corpus_to_string, holdout_split, parse_corpus, read_corpus, Corpus, LabelField};
use ohcsupport::embeddings::{read_embedding_file, EmbeddingTable};
use ohcsupport::emotion::{read_emotion_file, EmotionSource, EmotionTable};
use ohcsupport::eval::compute_metrics as core_metrics;
use ohcsupport::explain::{Attribution, ExplainOptions};
use ohcsupport::features::{FeatureGroup, Task};
use ohcsupport::fusenet::{FusionConfig, TrainConfig};
use ohcsupport::learners::BaselineKind;
use ohcsupport::pipeline::{fit_pipeline, labels, select_for_task, PipelineConfig, TextSource};
use ohcsupport::stats::{fit_glm_binary, ConditionCoding, HelpfulnessOptions, Link};
use ohcsupport::synth::{SynthConfig, SynthCorpus};

fn err(e: ohcsupport::Error) -> PyErr {
    match e {
        ohcsupport::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, s: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (s,))
}

/// A validated set of question/response pairs.
#[pyclass(name = "Corpus", module = "ohcsupport", skip_from_py_object)]
#[derive(Clone)]
pub struct PyCorpus {
    inner: Corpus,
}

#[pymethods]
impl PyCorpus {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: read_corpus(&path).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_jsonl(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: parse_corpus(text.as_bytes()).map_err(err)?,
        })
    }

    fn to_jsonl(&self) -> String {
        corpus_to_string(&self.inner)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        std::fs::write(path, corpus_to_string(&self.inner)).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Corpus({} pairs, conditions={:?})", self.inner.len(), self.inner.conditions())
    }

    #[getter]
    fn pair_ids(&self) -> Vec<String> {
        self.inner.pairs.iter().map(|p| p.pair_id.clone()).collect()
    }

    #[getter]
    fn conditions(&self) -> Vec<String> {
        self.inner.conditions().into_iter().collect()
    }

    #[getter]
    fn provenance(&self) -> String {
        self.inner.provenance.clone()
    }

    /// Per-pair label (`issq`, `isr` or `helpful`); `None` where missing.
    fn labels(&self, field: &str) -> PyResult<Vec<Option<bool>>> {
        let f: LabelField = field.parse().map_err(err)?;
        Ok(self.inner.pairs.iter().map(|p| p.label(f)).collect())
    }

    fn label_summary_csv(&self) -> String {
        self.inner.label_summary().to_csv()
    }

    /// Seeded holdout split, optionally stratified on a label.
    #[pyo3(signature = (train_fraction, seed = 0, stratify = None))]
    fn split(&self, train_fraction: f64, seed: u64, stratify: Option<&str>) -> PyResult<(Self, Self)> {
        let strat = stratify.map(str::parse::<LabelField>).transpose().map_err(err)?;
        let (a, b) = holdout_split(&self.inner, train_fraction, seed, strat).map_err(err)?;
        Ok((Self { inner: a }, Self { inner: b }))
    }
}

/// Emotion scores (sidecar file or built-in lexicon) and optional
/// sentence embeddings.
#[pyclass(name = "Resources", module = "ohcsupport", skip_from_py_object)]
#[derive(Clone)]
pub struct PyResources {
    emotions: EmotionSource,
    embeddings: Option<EmbeddingTable>,
}

impl PyResources {
    fn res(&self) -> ohcsupport::pipeline::Resources<'_> {
        ohcsupport::pipeline::Resources {
            emotions: &self.emotions,
            embeddings: self.embeddings.as_ref(),
        }
    }
}

#[pymethods]
impl PyResources {
    #[new]
    #[pyo3(signature = (emotions = None, embeddings = None))]
    fn new(emotions: Option<PathBuf>, embeddings: Option<PathBuf>) -> PyResult<Self> {
        Ok(Self {
            emotions: match emotions {
                Some(p) => EmotionSource::with_sidecar(read_emotion_file(&p).map_err(err)?),
                None => EmotionSource::default(),
            },
            embeddings: embeddings.map(|p| read_embedding_file(&p)).transpose().map_err(err)?,
        })
    }

    #[getter]
    fn has_sidecar(&self) -> bool {
        self.emotions.sidecar.is_some()
    }

    #[getter]
    fn embedding_dim(&self) -> Option<usize> {
        self.embeddings.as_ref().map(|e| e.dim)
    }
}

fn resources_or_default(r: Option<PyRef<'_, PyResources>>) -> PyResources {
    r.map(|r| r.clone()).unwrap_or_else(|| PyResources {
        emotions: EmotionSource::default(),
        embeddings: None,
    })
}

/// Generated corpus with its emotion sidecar and labelling threshold.
#[pyclass(name = "SyntheticCorpus", module = "ohcsupport")]
pub struct PySynthetic {
    corpus: Corpus,
    emotions: EmotionTable,
    #[pyo3(get)]
    tau: f64,
}

#[pymethods]
impl PySynthetic {
    #[getter]
    fn corpus(&self) -> PyCorpus {
        PyCorpus {
            inner: self.corpus.clone(),
        }
    }

    fn resources(&self) -> PyResources {
        PyResources {
            emotions: EmotionSource::with_sidecar(self.emotions.clone()),
            embeddings: None,
        }
    }

    /// Writes `corpus.jsonl` and `emotions.jsonl` into `directory`.
    fn write(&self, directory: PathBuf) -> PyResult<()> {
        let io = |e: std::io::Error| PyIOError::new_err(e.to_string());
        std::fs::create_dir_all(&directory).map_err(io)?;
        std::fs::write(directory.join("corpus.jsonl"), corpus_to_string(&self.corpus)).map_err(io)?;
        let mut buf = Vec::new();
        self.emotions.write(&mut buf).map_err(err)?;
        std::fs::write(directory.join("emotions.jsonl"), buf).map_err(io)
    }
}

/// Response-task corpus whose label is a known function of TF-IDF
/// similarity and response neutrality. Pass `tau` from a source corpus to
/// label a shifted corpus by the same rule.
#[pyfunction]
#[pyo3(signature = (n_pairs = 2000, seed = 0, shifted = false, condition = "cancer", tau = None))]
fn synthetic_isr_corpus(n_pairs: usize, seed: u64, shifted: bool, condition: &str, tau: Option<f64>) -> PyResult<PySynthetic> {
    let cfg = SynthConfig {
        n_pairs,
        seed,
        shifted,
        condition: condition.into(),
        ..Default::default()
    };
    let SynthCorpus {
        corpus, emotions, tau, ..
    } = ohcsupport::synth::synthetic_isr_corpus(&cfg, tau).map_err(err)?;
    Ok(PySynthetic { corpus, emotions, tau })
}

/// Corpus with helpful flags and a known ISR odds ratio; returns the corpus
/// and the ISR indicator.
#[pyfunction]
#[pyo3(signature = (n, odds_ratio = 1.32, seed = 0))]
fn synthetic_helpfulness_corpus(n: usize, odds_ratio: f64, seed: u64) -> PyResult<(PyCorpus, Vec<bool>)> {
    let (c, isr) = ohcsupport::synth::synthetic_helpfulness_corpus(n, odds_ratio, seed).map_err(err)?;
    Ok((PyCorpus { inner: c }, isr))
}

/// A trained fusion pipeline, optionally with baselines and ensemble
/// weights.
#[pyclass(name = "Pipeline", module = "ohcsupport")]
pub struct PyPipeline {
    ck: Checkpoint,
}

#[pymethods]
impl PyPipeline {
    #[staticmethod]
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (
        corpus, task, resources = None, *, text = "tfidf", groups = None, width = 768, lr = 5e-5,
        batch_size = 128, epochs = 40, patience = 5, warmup = 0.1, weight_decay = 1e-4, dropout = 0.2,
        val_fraction = 0.1, min_df = 2, seed = 0, baselines = None, baseline_tfidf = false, ensemble_rounds = 100
    ))]
    fn train(
        corpus: &PyCorpus,
        task: &str,
        resources: Option<PyRef<'_, PyResources>>,
        text: &str,
        groups: Option<Vec<String>>,
        width: usize,
        lr: f64,
        batch_size: usize,
        epochs: usize,
        patience: usize,
        warmup: f64,
        weight_decay: f64,
        dropout: f64,
        val_fraction: f64,
        min_df: usize,
        seed: u64,
        baselines: Option<Vec<String>>,
        baseline_tfidf: bool,
        ensemble_rounds: usize,
    ) -> PyResult<Self> {
        let r = resources_or_default(resources);
        let task: Task = task.parse().map_err(err)?;
        let mut cfg = PipelineConfig::new(task);
        cfg.text = text.parse::<TextSource>().map_err(err)?;
        if let Some(g) = groups {
            cfg.groups = FeatureGroup::parse_list(&g.join(",")).map_err(err)?;
        }
        cfg.fusion = FusionConfig {
            dropout,
            ..FusionConfig::scaled(width)
        };
        if cfg.text == TextSource::Embedding {
            let dim = r
                .embeddings
                .as_ref()
                .ok_or_else(|| PyValueError::new_err("text='embedding' needs Resources(embeddings=...)"))?
                .dim;
            cfg.fusion.d_text = dim;
            cfg.fusion.d_token = dim;
        }
        cfg.train = TrainConfig {
            max_lr: lr,
            warmup_fraction: warmup,
            batch_size,
            weight_decay,
            max_epochs: epochs,
            patience,
            seed,
        };
        cfg.val_fraction = val_fraction;
        cfg.min_df = min_df;
        let p = fit_pipeline(&corpus.inner, r.res(), &cfg).map_err(err)?;
        let kinds = baselines
            .unwrap_or_default()
            .iter()
            .map(|k| BaselineKind::by_name(k))
            .collect::<ohcsupport::Result<Vec<_>>>()
            .map_err(err)?;
        let ck = if kinds.is_empty() {
            Checkpoint::new(p)
        } else {
            fit_baselines_and_ensemble(p, &corpus.inner, r.res(), &kinds, baseline_tfidf, ensemble_rounds).map_err(err)?
        };
        Ok(Self { ck })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            ck: Checkpoint::load(&path).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        Ok(Self {
            ck: Checkpoint::from_json(s).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.ck.save(&path).map_err(err)
    }

    fn to_json(&self) -> String {
        self.ck.to_json()
    }

    #[getter]
    fn task(&self) -> String {
        self.ck.pipeline.config.task.to_string()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.ck.pipeline.feature_names()
    }

    #[getter]
    fn model_names(&self) -> Vec<String> {
        let mut n = self.ck.model_names();
        if self.ck.ensemble.is_some() {
            n.push("Weighted Ensemble".into());
        }
        n
    }

    /// Validation loss per epoch.
    #[getter]
    fn val_losses(&self) -> Vec<f64> {
        self.ck.pipeline.history.epochs.iter().map(|e| e.val_loss).collect()
    }

    /// Fusion-model probabilities for the task-eligible pairs of `corpus`.
    #[pyo3(signature = (corpus, resources = None))]
    fn predict(&self, corpus: &PyCorpus, resources: Option<PyRef<'_, PyResources>>) -> PyResult<Vec<f64>> {
        let r = resources_or_default(resources);
        self.ck.pipeline.predict(&corpus.inner, r.res()).map_err(err)
    }

    /// Metrics for every stored model (fusion first, ensemble last).
    #[pyo3(signature = (corpus, resources = None, threshold = 0.5))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        corpus: &PyCorpus,
        resources: Option<PyRef<'_, PyResources>>,
        threshold: f64,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let r = resources_or_default(resources);
        let task = self.ck.pipeline.config.task;
        let c = select_for_task(&corpus.inner, task);
        let y = labels(&c, task).map_err(err)?;
        let probs = self.ck.predict_all(&c, r.res()).map_err(err)?;
        self.model_names()
            .into_iter()
            .zip(&probs)
            .map(|(name, p)| {
                let d = metrics_dict(py, &core_metrics(p, &y, threshold).map_err(err)?)?;
                d.set_item("model", name)?;
                Ok(d)
            })
            .collect()
    }

    /// Global Shapley importance over the tabular features.
    #[pyo3(signature = (corpus, resources = None, background = None, n_background = 100, instances = 20, n_samples = 500, exact = false, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn explain<'py>(
        &self,
        py: Python<'py>,
        corpus: &PyCorpus,
        resources: Option<PyRef<'_, PyResources>>,
        background: Option<&PyCorpus>,
        n_background: usize,
        instances: usize,
        n_samples: usize,
        exact: bool,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let r = resources_or_default(resources);
        let opts = ExplainOptions {
            background: n_background,
            instances,
            samples: n_samples,
            exact,
            seed,
        };
        let bg = background.map_or(&corpus.inner, |b| &b.inner);
        let e = self.ck.pipeline.explain(&corpus.inner, bg, r.res(), &opts).map_err(err)?;
        let s = &e.summary;
        let d = PyDict::new(py);
        d.set_item("features", &s.feature_names)?;
        d.set_item("mean_abs_phi", &s.mean_abs_phi)?;
        d.set_item("direction", &s.direction)?;
        d.set_item("ranking", s.ranking.iter().map(|&j| s.feature_names[j].clone()).collect::<Vec<_>>())?;
        d.set_item("phi", s.attributions.iter().map(|a| a.phi.clone()).collect::<Vec<_>>())?;
        d.set_item("importance_csv", s.importance_csv())?;
        Ok(d)
    }
}

fn metrics_dict<'py>(py: Python<'py>, m: &ohcsupport::eval::MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("accuracy", m.accuracy)?;
    d.set_item("auc", m.auc)?;
    d.set_item("f1", m.f1)?;
    d.set_item("precision", m.precision)?;
    d.set_item("recall", m.recall)?;
    d.set_item("threshold", m.threshold)?;
    let c = &m.confusion;
    d.set_item("confusion", [[c.tn, c.fp], [c.r#fn, c.tp]])?;
    Ok(d)
}

/// Accuracy, AUC, F1, precision, recall and the confusion matrix.
#[pyfunction]
#[pyo3(signature = (probs, labels, threshold = 0.5))]
fn compute_metrics<'py>(py: Python<'py>, probs: Vec<f64>, labels: Vec<bool>, threshold: f64) -> PyResult<Bound<'py, PyDict>> {
    metrics_dict(py, &core_metrics(&probs, &labels, threshold).map_err(err)?)
}

#[pyfunction]
fn auc(probs: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    ohcsupport::eval::auc(&probs, &labels).map_err(err)
}

#[pyfunction]
fn log_loss(probs: Vec<f64>, labels: Vec<bool>) -> f64 {
    ohcsupport::learners::log_loss(&probs, &labels)
}

/// Greedy forward selection with replacement; returns (weights, log-loss).
#[pyfunction]
#[pyo3(signature = (val_probs, labels, max_rounds = 100))]
fn greedy_ensemble(val_probs: Vec<Vec<f64>>, labels: Vec<bool>, max_rounds: usize) -> PyResult<(Vec<f64>, f64)> {
    let e = ohcsupport::learners::greedy_ensemble(&val_probs, &labels, max_rounds).map_err(err)?;
    Ok((e.weights, e.val_loss))
}

fn parse_link(link: &str) -> PyResult<Link> {
    link.parse().map_err(err)
}

/// Binary logit/probit maximum likelihood. `x` is row-major and should
/// include an intercept column if one is wanted.
#[pyfunction]
#[pyo3(signature = (x, y, names = None, link = "logit", robust = false))]
fn fit_glm<'py>(
    py: Python<'py>,
    x: Vec<Vec<f64>>,
    y: Vec<bool>,
    names: Option<Vec<String>>,
    link: &str,
    robust: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let k = x.first().map_or(0, Vec::len);
    let names = names.unwrap_or_else(|| (0..k).map(|j| format!("x{j}")).collect());
    let r = fit_glm_binary(&x, &names, &y, parse_link(link)?, robust).map_err(err)?;
    let d = json_to_py(py, &r.to_json())?;
    d.set_item("table", r.to_table())?;
    Ok(d)
}

/// Variance inflation factors of the given columns.
#[pyfunction]
#[pyo3(signature = (columns, names = None))]
fn vif(columns: Vec<Vec<f64>>, names: Option<Vec<String>>) -> PyResult<Vec<f64>> {
    let names = names.unwrap_or_else(|| (0..columns.len()).map(|j| format!("x{j}")).collect());
    ohcsupport::stats::vif(&columns, &names).map_err(err)
}

/// Matched undersampling plus robust regression of helpfulness on ISR.
#[pyfunction]
#[pyo3(signature = (corpus, isr, bins = 10, seed = 0, link = "logit", coding = "ordinal"))]
fn helpfulness_analysis<'py>(
    py: Python<'py>,
    corpus: &PyCorpus,
    isr: Vec<bool>,
    bins: usize,
    seed: u64,
    link: &str,
    coding: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let opts = HelpfulnessOptions {
        bins,
        seed,
        link: parse_link(link)?,
        coding: match coding {
            "ordinal" => ConditionCoding::Ordinal,
            "onehot" | "one_hot" => ConditionCoding::OneHot,
            other => return Err(PyValueError::new_err(format!("unknown coding `{other}`"))),
        },
    };
    let rep = ohcsupport::stats::helpfulness_analysis(&corpus.inner, &isr, &opts).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("regression", json_to_py(py, &rep.result.to_json())?)?;
    d.set_item("table", rep.result.to_table())?;
    d.set_item("contingency", rep.contingency.counts)?;
    d.set_item("n_input", rep.n_input)?;
    d.set_item("n_matched", rep.matched.indices.len())?;
    d.set_item("warnings", rep.matched.warnings)?;
    Ok(d)
}

fn attribution_dict<'py>(py: Python<'py>, a: &Attribution) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("base_value", a.base_value)?;
    d.set_item("phi", &a.phi)?;
    d.set_item("prediction", a.prediction)?;
    d.set_item("std_errors", &a.std_errors)?;
    Ok(d)
}

/// Adapts a Python callable `rows -> list[float]` to the core model
/// signature, keeping the first Python exception for re-raising.
fn run_with_model<T>(
    predict: &Bound<'_, PyAny>,
    f: impl FnOnce(&dyn Fn(&[Vec<f64>]) -> ohcsupport::Result<Vec<f64>>) -> ohcsupport::Result<T>,
) -> PyResult<T> {
    let failure: RefCell<Option<PyErr>> = RefCell::new(None);
    let model = |rows: &[Vec<f64>]| -> ohcsupport::Result<Vec<f64>> {
        predict
            .call1((rows.to_vec(),))
            .and_then(|v| v.extract::<Vec<f64>>())
            .map_err(|e| {
                let msg = e.to_string();
                failure.borrow_mut().get_or_insert(e);
                ohcsupport::Error::Invalid(format!("model callable failed: {msg}"))
            })
    };
    let out = f(&model);
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    out.map_err(err)
}

/// Exact Shapley values by coalition enumeration (at most 15 features).
#[pyfunction]
fn shap_exact<'py>(py: Python<'py>, predict: Bound<'py, PyAny>, background: Vec<Vec<f64>>, x: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let a = run_with_model(&predict, |m| ohcsupport::explain::shap_exact(m, &background, &x))?;
    attribution_dict(py, &a)
}

/// Permutation-sampled Shapley values with standard errors.
#[pyfunction]
#[pyo3(signature = (predict, background, x, n_samples = 2000, seed = 0))]
fn shap_sampled<'py>(
    py: Python<'py>,
    predict: Bound<'py, PyAny>,
    background: Vec<Vec<f64>>,
    x: Vec<f64>,
    n_samples: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let a = run_with_model(&predict, |m| ohcsupport::explain::shap_sampled(m, &background, &x, n_samples, seed))?;
    attribution_dict(py, &a)
}

/// Header information of a binary embedding file.
#[pyfunction]
fn load_embeddings<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let t = read_embedding_file(&path).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("model_name", &t.model_name)?;
    d.set_item("pooling", &t.pooling)?;
    d.set_item("dim", t.dim)?;
    d.set_item("count", t.len())?;
    d.set_item("pair_ids", t.records.keys().cloned().collect::<Vec<_>>())?;
    Ok(d)
}

/// Runs the command-line interface in-process; returns the exit code.
#[pyfunction]
fn cli_main(argv: Vec<String>) -> i32 {
    let args: Vec<String> = std::iter::once("ohcsupport".to_string()).chain(argv).collect();
    ohcsupport::cli::cli_main(&args)
}

#[pymodule]
fn _native(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}

/// Adds every class and function to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyResources>()?;
    m.add_class::<PySynthetic>()?;
    m.add_class::<PyPipeline>()?;
    m.add_function(wrap_pyfunction!(synthetic_isr_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_helpfulness_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(log_loss, m)?)?;
    m.add_function(wrap_pyfunction!(greedy_ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(fit_glm, m)?)?;
    m.add_function(wrap_pyfunction!(vif, m)?)?;
    m.add_function(wrap_pyfunction!(helpfulness_analysis, m)?)?;
    m.add_function(wrap_pyfunction!(shap_exact, m)?)?;
    m.add_function(wrap_pyfunction!(shap_sampled, m)?)?;
    m.add_function(wrap_pyfunction!(load_embeddings, m)?)?;
    m.add_function(wrap_pyfunction!(cli_main, m)?)?;
    Ok(())
}
