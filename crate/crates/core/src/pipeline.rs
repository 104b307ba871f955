//! Corpus to predictions: featurizer fitting, fusion-model training and
//! frozen inference.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{holdout_split, Corpus, QrPair};
use crate::embeddings::EmbeddingTable;
use crate::emotion::EmotionSource;
use crate::error::{Error, Result};
use crate::explain::{
    global_summary, shap_exact, shap_sampled, text_attribution, ExplainOptions, PipelineExplanation, TextAttribution,
    MAX_EXACT_FEATURES,
};
use crate::features::{
    build_question_features, build_response_features, ColumnKind, FeatureGroup, FeatureMatrix, FeatureRow, FeatureSchema,
    Standardizer, Task,
};
use crate::fusenet::{self, FusionConfig, FusionInput, FusionModel, InputSpec, TextInputKind, TextRepr, TrainConfig, TrainHistory};
use crate::textfeat::{fit_tfidf, TfidfModel, TokenizerConfig};

/// Text representation fed to the network's text path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextSource {
    Tfidf,
    Embedding,
    None,
}

impl std::str::FromStr for TextSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tfidf" => Ok(Self::Tfidf),
            "embedding" | "embeddings" => Ok(Self::Embedding),
            "none" => Ok(Self::None),
            other => Err(Error::Invalid(format!("unknown text source `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub task: Task,
    /// Feature groups in use; `Text` switches the text path on.
    pub groups: BTreeSet<FeatureGroup>,
    pub text: TextSource,
    pub fusion: FusionConfig,
    pub train: TrainConfig,
    /// Share of the training corpus held out for early stopping.
    pub val_fraction: f64,
    pub min_df: usize,
    pub tokenizer: TokenizerConfig,
}

impl PipelineConfig {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            groups: FeatureGroup::ALL.into_iter().collect(),
            text: TextSource::Tfidf,
            fusion: FusionConfig::default(),
            train: TrainConfig::default(),
            val_fraction: 0.1,
            min_df: 2,
            tokenizer: TokenizerConfig::default(),
        }
    }

    fn text_enabled(&self) -> bool {
        self.groups.contains(&FeatureGroup::Text) && self.text != TextSource::None
    }
}

/// External per-pair inputs: emotion scores and optional embeddings.
#[derive(Debug, Clone, Copy)]
pub struct Resources<'a> {
    pub emotions: &'a EmotionSource,
    pub embeddings: Option<&'a EmbeddingTable>,
}

/// Pairs eligible for a task. The response task only sees pairs whose
/// question is not labelled as non-seeking.
pub fn select_for_task(corpus: &Corpus, task: Task) -> Corpus {
    let pairs = match task {
        Task::Issq => corpus.pairs.clone(),
        Task::Isr => corpus
            .pairs
            .iter()
            .filter(|p| p.issq_label != Some(false))
            .cloned()
            .collect(),
    };
    Corpus {
        pairs,
        provenance: format!("select_for_task({task}) of [{}]", corpus.provenance),
    }
}

pub fn labels(corpus: &Corpus, task: Task) -> Result<Vec<bool>> {
    let field = task.label_field();
    corpus
        .pairs
        .iter()
        .map(|p| {
            p.label(field)
                .ok_or_else(|| Error::Invalid(format!("pair `{}` has no {field} label", p.pair_id)))
        })
        .collect()
}

/// Full-schema feature rows of every pair for a task.
pub fn feature_rows(corpus: &Corpus, task: Task, emotions: &EmotionSource, tfidf: &TfidfModel) -> Result<Vec<FeatureRow>> {
    corpus
        .pairs
        .iter()
        .map(|p| {
            let e = emotions.scores_for(p)?;
            Ok(match task {
                Task::Issq => build_question_features(p, &e.question).to_row(),
                Task::Isr => build_response_features(p, &e.response, tfidf).to_row(),
            })
        })
        .collect()
}

fn task_text(pair: &QrPair, task: Task) -> &str {
    match task {
        Task::Issq => &pair.question_text,
        Task::Isr => &pair.response_text,
    }
}

/// Statistics fitted on training data only and frozen afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Featurizer {
    pub task: Task,
    pub schema: FeatureSchema,
    pub tfidf: TfidfModel,
    pub standardizer: Standardizer,
    pub text: TextInputKind,
}

impl Featurizer {
    pub fn fit(train: &Corpus, cfg: &PipelineConfig, res: Resources<'_>) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Invalid("cannot fit a featurizer on an empty corpus".into()));
        }
        let docs: Vec<&str> = train
            .pairs
            .iter()
            .flat_map(|p| [p.question_text.as_str(), p.response_text.as_str()])
            .collect();
        let tfidf = fit_tfidf(&docs, cfg.min_df, cfg.tokenizer)?;
        let schema = FeatureSchema::for_task(cfg.task).restrict(&cfg.groups);
        let rows = feature_rows(train, cfg.task, res.emotions, &tfidf)?;
        let standardizer = Standardizer::fit(&rows, &schema)?;
        let text = if !cfg.text_enabled() {
            TextInputKind::Disabled
        } else {
            match cfg.text {
                TextSource::Tfidf => TextInputKind::Tfidf { vocab: tfidf.dimension() },
                TextSource::Embedding => {
                    let emb = res
                        .embeddings
                        .ok_or_else(|| Error::Invalid("text source `embedding` needs an embedding file".into()))?;
                    if emb.dim != cfg.fusion.d_text {
                        return Err(Error::Dimension {
                            what: "embedding width vs d_text",
                            expected: cfg.fusion.d_text,
                            got: emb.dim,
                        });
                    }
                    TextInputKind::Embedding
                }
                TextSource::None => TextInputKind::Disabled,
            }
        };
        Ok(Self {
            task: cfg.task,
            schema,
            tfidf,
            standardizer,
            text,
        })
    }

    pub fn input_spec(&self) -> InputSpec {
        InputSpec {
            text: self.text,
            cardinalities: self.standardizer.cardinalities(),
            numeric_width: self.standardizer.numeric_width(),
        }
    }

    pub fn rows(&self, corpus: &Corpus, res: Resources<'_>) -> Result<Vec<FeatureRow>> {
        feature_rows(corpus, self.task, res.emotions, &self.tfidf)
    }

    pub fn matrix(&self, corpus: &Corpus, res: Resources<'_>) -> Result<FeatureMatrix> {
        self.standardizer.transform(&self.rows(corpus, res)?)
    }

    pub fn text_repr(&self, pair: &QrPair, res: Resources<'_>) -> Result<TextRepr> {
        self.text_repr_of(pair, task_text(pair, self.task), res)
    }

    /// Text representation with the task text replaced by `text`. Only the
    /// TF-IDF path can represent arbitrary text.
    pub fn text_repr_of(&self, pair: &QrPair, text: &str, res: Resources<'_>) -> Result<TextRepr> {
        Ok(match self.text {
            TextInputKind::Tfidf { .. } => TextRepr::Sparse(self.tfidf.vector(text)),
            TextInputKind::Embedding => {
                let emb = res
                    .embeddings
                    .ok_or_else(|| Error::Invalid("model expects embeddings but none were given".into()))?
                    .get(&pair.pair_id)?;
                let v = match self.task {
                    Task::Issq => &emb.question,
                    Task::Isr => &emb.response,
                };
                TextRepr::Dense(v.iter().map(|&x| f64::from(x)).collect())
            }
            TextInputKind::Disabled => TextRepr::None,
        })
    }

    pub fn inputs(&self, corpus: &Corpus, res: Resources<'_>) -> Result<Vec<FusionInput>> {
        let m = self.matrix(corpus, res)?;
        corpus
            .pairs
            .iter()
            .enumerate()
            .map(|(i, p)| {
                Ok(FusionInput {
                    text: self.text_repr(p, res)?,
                    categorical: m.categorical_row(i).to_vec(),
                    numeric: m.numeric_row(i).to_vec(),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedPipeline {
    pub config: PipelineConfig,
    pub featurizer: Featurizer,
    pub model: FusionModel,
    pub history: TrainHistory,
}

/// Fits the featurizer on `train`, carves a label-stratified validation
/// split out of it for early stopping, and trains the fusion network.
pub fn fit_pipeline(train: &Corpus, res: Resources<'_>, cfg: &PipelineConfig) -> Result<TrainedPipeline> {
    if cfg.groups.is_empty() {
        return Err(Error::Invalid("feature group set is empty".into()));
    }
    let train = select_for_task(train, cfg.task);
    let featurizer = Featurizer::fit(&train, cfg, res)?;
    let (fit_part, val_part) = holdout_split(&train, 1.0 - cfg.val_fraction, cfg.train.seed, Some(cfg.task.label_field()))?;
    let tx = featurizer.inputs(&fit_part, res)?;
    let ty = labels(&fit_part, cfg.task)?;
    let vx = featurizer.inputs(&val_part, res)?;
    let vy = labels(&val_part, cfg.task)?;
    let model = fusenet::init_model(&cfg.fusion, &featurizer.input_spec(), cfg.train.seed)?;
    let (model, history) = fusenet::train(model, &tx, &ty, &vx, &vy, &cfg.train)?;
    Ok(TrainedPipeline {
        config: cfg.clone(),
        featurizer,
        model,
        history,
    })
}

impl TrainedPipeline {
    /// Positive-class probabilities for every pair of `corpus`, in order.
    /// Pair filtering by task is the caller's business.
    pub fn predict(&self, corpus: &Corpus, res: Resources<'_>) -> Result<Vec<f64>> {
        let x = self.featurizer.inputs(corpus, res)?;
        self.model.predict(&x)
    }

    /// Tabular column names in schema order.
    pub fn feature_names(&self) -> Vec<String> {
        self.featurizer.schema.names().into_iter().map(String::from).collect()
    }

    /// One flat row per pair: standardised numeric values and categorical
    /// codes, in schema order.
    pub fn tabular_rows(&self, corpus: &Corpus, res: Resources<'_>) -> Result<Vec<Vec<f64>>> {
        let m = self.featurizer.matrix(corpus, res)?;
        Ok((0..m.rows)
            .map(|i| {
                let (mut num, mut cat) = (m.numeric_row(i).iter(), m.categorical_row(i).iter());
                self.featurizer
                    .schema
                    .columns
                    .iter()
                    .map(|c| match c.kind {
                        ColumnKind::Numeric => *num.next().expect("numeric width"),
                        ColumnKind::Categorical => f64::from(*cat.next().expect("categorical width")),
                    })
                    .collect()
            })
            .collect())
    }

    /// Shapley attributions of the tabular features for a seeded sample of
    /// `corpus`, against a seeded background sample of `background`. Text
    /// inputs stay fixed at each instance's own text.
    pub fn explain(&self, corpus: &Corpus, background: &Corpus, res: Resources<'_>, opts: &ExplainOptions) -> Result<PipelineExplanation> {
        let corpus = select_for_task(corpus, self.config.task);
        let background = select_for_task(background, self.config.task);
        if corpus.is_empty() || background.is_empty() || opts.background == 0 || opts.instances == 0 {
            return Err(Error::Invalid("nothing to explain".into()));
        }
        let names = self.feature_names();
        if opts.exact && names.len() > MAX_EXACT_FEATURES {
            return Err(Error::Invalid(format!(
                "{} features exceed the exact limit of {MAX_EXACT_FEATURES}; use the sampled estimator",
                names.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut pick = |n: usize, k: usize| -> Vec<usize> {
            let mut v = sample(&mut rng, n, k.min(n)).into_vec();
            v.sort_unstable();
            v
        };
        let bg_rows = self.tabular_rows(&background, res)?;
        let bg: Vec<Vec<f64>> = pick(bg_rows.len(), opts.background).into_iter().map(|i| bg_rows[i].clone()).collect();
        let rows = self.tabular_rows(&corpus, res)?;
        let indices = pick(rows.len(), opts.instances);
        let attributions = indices
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                let text = self.featurizer.text_repr(&corpus.pairs[i], res)?;
                let f = |r: &[Vec<f64>]| self.tabular_predict(&text, r);
                if opts.exact {
                    shap_exact(f, &bg, &rows[i])
                } else {
                    shap_sampled(f, &bg, &rows[i], opts.samples, opts.seed.wrapping_add(k as u64))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PipelineExplanation {
            indices,
            summary: global_summary(&attributions, &names)?,
        })
    }

    /// Leave-one-out token scores over the task text of `pair`, tabular
    /// inputs held fixed. `None` when the text path is not TF-IDF.
    pub fn token_attribution(&self, pair: &QrPair, res: Resources<'_>) -> Result<Option<TextAttribution>> {
        if !matches!(self.featurizer.text, TextInputKind::Tfidf { .. }) {
            return Ok(None);
        }
        let single = Corpus {
            pairs: vec![pair.clone()],
            provenance: String::new(),
        };
        let m = self.featurizer.matrix(&single, res)?;
        let predict = |t: &str| {
            let x = FusionInput {
                text: self.featurizer.text_repr_of(pair, t, res)?,
                categorical: m.categorical_row(0).to_vec(),
                numeric: m.numeric_row(0).to_vec(),
            };
            self.model.forward(&x, false, None)
        };
        let text = match self.config.task {
            Task::Issq => &pair.question_text,
            Task::Isr => &pair.response_text,
        };
        text_attribution(predict, text, &self.config.tokenizer).map(Some)
    }

    /// Probabilities for flat tabular rows with the text input held fixed.
    pub fn tabular_predict(&self, text: &TextRepr, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        let cols = &self.featurizer.schema.columns;
        rows.iter()
            .map(|r| {
                if r.len() != cols.len() {
                    return Err(Error::Dimension {
                        what: "tabular row width",
                        expected: cols.len(),
                        got: r.len(),
                    });
                }
                let mut x = FusionInput {
                    text: text.clone(),
                    categorical: Vec::new(),
                    numeric: Vec::new(),
                };
                for (c, &v) in cols.iter().zip(r) {
                    match c.kind {
                        ColumnKind::Numeric => x.numeric.push(v),
                        ColumnKind::Categorical => x.categorical.push(v.round().max(0.0) as u32),
                    }
                }
                self.model.forward(&x, false, None)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tests_support::pair;

    #[test]
    fn isr_selection_drops_non_seeking_questions() {
        let mut a = pair("a");
        a.issq_label = Some(false);
        let mut b = pair("b");
        b.issq_label = Some(true);
        let c = pair("c");
        let corpus = Corpus::new(vec![a, b, c], "t").unwrap();
        let ids: Vec<_> = select_for_task(&corpus, Task::Isr).pairs.into_iter().map(|p| p.pair_id).collect();
        assert_eq!(ids, vec!["b", "c"]);
        assert_eq!(select_for_task(&corpus, Task::Issq).len(), 3);
    }

    #[test]
    fn text_source_parsing() {
        assert_eq!("TFIDF".parse::<TextSource>().unwrap(), TextSource::Tfidf);
        assert!("bert".parse::<TextSource>().is_err());
    }
}
