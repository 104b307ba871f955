//! Versioned JSON container for a trained pipeline, its baselines and the
//! ensemble weights. Floats round-trip exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{holdout_split, Corpus};
use crate::error::{Error, Result};
use crate::fusenet::{FusionConfig, FusionModel, InputSpec, TensorInfo, TrainHistory};
use crate::learners::{greedy_ensemble, train_baseline, BaselineKind, BaselineModel, EnsembleWeights};
use crate::pipeline::{labels, select_for_task, Featurizer, PipelineConfig, Resources, TrainedPipeline};

pub const FORMAT: &str = "ohcsupport-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelState {
    config: FusionConfig,
    input: InputSpec,
    tensors: Vec<TensorInfo>,
    params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineEntry {
    pub name: String,
    /// Whether the design includes the task text's TF-IDF vector.
    pub use_tfidf: bool,
    pub model: BaselineModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub pipeline: TrainedPipeline,
    pub baselines: Vec<BaselineEntry>,
    /// Weights over `[fusion, baselines...]`.
    pub ensemble: Option<EnsembleWeights>,
}

#[derive(Serialize, Deserialize)]
struct Container {
    format: String,
    version: u32,
    config: PipelineConfig,
    featurizer: Featurizer,
    model: ModelState,
    history: TrainHistory,
    baselines: Vec<BaselineEntry>,
    ensemble: Option<EnsembleWeights>,
}

impl Checkpoint {
    pub fn new(pipeline: TrainedPipeline) -> Self {
        Self {
            pipeline,
            baselines: Vec::new(),
            ensemble: None,
        }
    }

    pub fn to_json(&self) -> String {
        let p = &self.pipeline;
        let c = Container {
            format: FORMAT.into(),
            version: VERSION,
            config: p.config.clone(),
            featurizer: p.featurizer.clone(),
            model: ModelState {
                config: p.model.config.clone(),
                input: p.model.input.clone(),
                tensors: p.model.tensors.clone(),
                params: p.model.params.clone(),
            },
            history: p.history.clone(),
            baselines: self.baselines.clone(),
            ensemble: self.ensemble.clone(),
        };
        let mut s = serde_json::to_string(&c).expect("checkpoint values are finite");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Container = serde_json::from_str(s).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if c.format != FORMAT {
            return Err(Error::Checkpoint(format!("unknown format `{}`", c.format)));
        }
        if c.version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", c.version)));
        }
        let mut featurizer = c.featurizer;
        featurizer.tfidf.reindex();
        if featurizer.input_spec() != c.model.input {
            return Err(Error::Checkpoint("model input does not match the featurizer".into()));
        }
        let model = FusionModel::from_parts(c.model.config, c.model.input, c.model.tensors, c.model.params)?;
        let want = 1 + c.baselines.len();
        if let Some(e) = &c.ensemble {
            if e.weights.len() != want {
                return Err(Error::Checkpoint(format!(
                    "ensemble has {} weights for {want} models",
                    e.weights.len()
                )));
            }
        }
        Ok(Self {
            pipeline: TrainedPipeline {
                config: c.config,
                featurizer,
                model,
                history: c.history,
            },
            baselines: c.baselines,
            ensemble: c.ensemble,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Model names in ensemble order.
    pub fn model_names(&self) -> Vec<String> {
        std::iter::once("Fuse-late".to_string())
            .chain(self.baselines.iter().map(|b| b.name.clone()))
            .collect()
    }

    /// Probabilities of every model in ensemble order, then the ensemble
    /// blend when present. `corpus` must already be task-selected.
    pub fn predict_all(&self, corpus: &Corpus, res: Resources<'_>) -> Result<Vec<Vec<f64>>> {
        let mut out = vec![self.pipeline.predict(corpus, res)?];
        for b in &self.baselines {
            let x = baseline_design(&self.pipeline.featurizer, corpus, res, b.use_tfidf)?;
            out.push(b.model.predict(&x)?);
        }
        if let Some(e) = &self.ensemble {
            out.push(e.blend(&out)?);
        }
        Ok(out)
    }
}

/// Dense baseline design: standardised numeric columns, one-hot categorical
/// columns and optionally the dense TF-IDF vector of the task text.
pub fn baseline_design(f: &Featurizer, corpus: &Corpus, res: Resources<'_>, use_tfidf: bool) -> Result<Vec<Vec<f64>>> {
    let mut x = f.matrix(corpus, res)?.dense_design();
    if use_tfidf {
        for (row, p) in x.iter_mut().zip(&corpus.pairs) {
            let text = match f.task {
                crate::features::Task::Issq => &p.question_text,
                crate::features::Task::Isr => &p.response_text,
            };
            row.extend(f.tfidf.vector(text).to_dense());
        }
    }
    Ok(x)
}

/// Trains baselines on the same fit/validation split the pipeline used and
/// fits ensemble weights over `[fusion, baselines...]` on the validation
/// part.
pub fn fit_baselines_and_ensemble(
    pipeline: TrainedPipeline,
    train: &Corpus,
    res: Resources<'_>,
    kinds: &[BaselineKind],
    use_tfidf: bool,
    max_rounds: usize,
) -> Result<Checkpoint> {
    let cfg = &pipeline.config;
    let train = select_for_task(train, cfg.task);
    let (fit_part, val_part) = holdout_split(&train, 1.0 - cfg.val_fraction, cfg.train.seed, Some(cfg.task.label_field()))?;
    let f = &pipeline.featurizer;
    let tx = baseline_design(f, &fit_part, res, use_tfidf)?;
    let ty = labels(&fit_part, cfg.task)?;
    let vy = labels(&val_part, cfg.task)?;
    let baselines = kinds
        .iter()
        .map(|k| {
            Ok(BaselineEntry {
                name: k.name().to_string(),
                use_tfidf,
                model: train_baseline(k, &tx, &ty, cfg.train.seed)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ck = Checkpoint {
        pipeline,
        baselines,
        ensemble: None,
    };
    if !kinds.is_empty() {
        let probs = ck.predict_all(&val_part, res)?;
        ck.ensemble = Some(greedy_ensemble(&probs, &vy, max_rounds)?);
    }
    Ok(ck)
}
