//! Command-line front end. Every subcommand writes only to its `--out`
//! path(s) and logs its seed and a hash of the resolved arguments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::checkpoint::{fit_baselines_and_ensemble, Checkpoint};
use crate::corpus::{corpus_to_string, holdout_split, read_corpus, stratified_sample, LabelField};
use crate::embeddings::{read_embedding_file, EmbeddingTable};
use crate::emotion::{read_emotion_file, EmotionSource};
use crate::error::{Error, Result};
use crate::eval::{ablation_csv, compute_metrics, run_ablation, AblationSpec, METRICS_HEADER};
use crate::explain::{local_json, ExplainOptions};
use crate::features::{raw_rows_csv, FeatureGroup, Task};
use crate::fusenet::{FusionConfig, Pooling, TrainConfig};
use crate::learners::BaselineKind;
use crate::pipeline::{fit_pipeline, labels, select_for_task, Featurizer, PipelineConfig, Resources, TextSource};
use crate::report::{beeswarm_svg, emotion_histograms, histograms_csv, length_histograms};
use crate::stats::{fit_glm_binary, helpfulness_analysis, vif, ConditionCoding, HelpfulnessOptions, Link};

#[derive(Parser, Debug)]
#[command(
    name = "ohcsupport",
    version,
    about = "Informational-support classification for health-forum question/response pairs"
)]
pub struct Cli {
    /// key=value file of flag defaults (keys are long flag names); flags on
    /// the command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate a corpus, summarise labels, optionally sample and split it.
    #[command(args_override_self = true)]
    Ingest(IngestArgs),
    /// Write raw and standardised feature tables for a task.
    #[command(args_override_self = true)]
    Featurize(FeaturizeArgs),
    /// Train the fusion network (and optional baselines) into a checkpoint.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Score a checkpoint on a labelled corpus.
    #[command(args_override_self = true)]
    Evaluate(EvaluateArgs),
    /// Retrain with feature groups removed and tabulate the metrics.
    #[command(args_override_self = true)]
    Ablate(AblateArgs),
    /// Evaluate a frozen checkpoint on another condition's corpus.
    #[command(args_override_self = true)]
    Transfer(EvaluateArgs),
    /// Shapley attributions: global importance, beeswarm data, local files.
    #[command(args_override_self = true)]
    Explain(ExplainArgs),
    /// Helpfulness regression with matched undersampling, plus VIFs.
    #[command(args_override_self = true)]
    Stats(StatsArgs),
    /// Plot data (CSV) and static SVG figures.
    #[command(args_override_self = true)]
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Emotion sidecar JSONL; the built-in lexicon is used when absent.
    #[arg(long)]
    pub emotions: Option<PathBuf>,
    /// Binary embedding file (needed for `--text embedding`).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct IngestArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-condition sample sizes, e.g. `cancer=300,diabetes=250`.
    #[arg(long)]
    pub sample: Option<String>,
    /// Also write train.jsonl / test.jsonl with this training share.
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Label to stratify the split on: issq, isr, helpful or none.
    #[arg(long, default_value = "none")]
    pub stratify: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct FeaturizeArgs {
    #[arg(long)]
    pub task: Task,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated feature groups (text, emotions, numeric_text, post, user).
    #[arg(long, default_value = "text,emotions,numeric_text,post,user")]
    pub groups: String,
    #[arg(long, default_value_t = 2)]
    pub min_df: usize,
}

#[derive(Args, Debug, Clone)]
pub struct HyperArgs {
    /// Text representation: tfidf, embedding or none.
    #[arg(long, default_value = "tfidf")]
    pub text: TextSource,
    /// Width of the text projection, modality tokens and fusion layer.
    #[arg(long, default_value_t = 768)]
    pub width: usize,
    /// mean-max or concat.
    #[arg(long, default_value = "mean-max")]
    pub pooling: String,
    #[arg(long, default_value_t = 0.2)]
    pub dropout: f64,
    /// Peak learning rate.
    #[arg(long, default_value_t = 5e-5)]
    pub lr: f64,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 40)]
    pub epochs: usize,
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    /// Warmup share of all optimisation steps.
    #[arg(long, default_value_t = 0.1)]
    pub warmup: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    /// Training share held out for early stopping.
    #[arg(long, default_value_t = 0.1)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = 2)]
    pub min_df: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[arg(long)]
    pub task: Task,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long, default_value = "text,emotions,numeric_text,post,user")]
    pub groups: String,
    /// Comma-separated baselines: logistic, svm, knn, random_forest, gradient_boosting.
    #[arg(long)]
    pub baselines: Option<String>,
    /// Append the TF-IDF vector of the task text to the baseline design.
    #[arg(long)]
    pub baseline_tfidf: bool,
    #[arg(long, default_value_t = 100)]
    pub ensemble_rounds: usize,
}

#[derive(Args, Debug, Clone)]
pub struct EvaluateArgs {
    /// Checkpoint path.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Metrics CSV; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Confusion-matrix JSON of the fusion model.
    #[arg(long)]
    pub confusion_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Args, Debug, Clone)]
pub struct AblateArgs {
    #[arg(long)]
    pub task: Task,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Ablation rows: full, no_emotion, no_user, no_numeric, no_post, no_text, text_only.
    #[arg(long, default_value = "full,no_emotion,no_user,no_numeric,no_post,text_only")]
    pub groups: String,
}

#[derive(Args, Debug, Clone)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Pairs to explain.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Background corpus (normally the training set); defaults to `--corpus`.
    #[arg(long)]
    pub background_corpus: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub background: usize,
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    /// Permutations per instance for the sampled estimator.
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
    /// Enumerate all coalitions (at most 15 features).
    #[arg(long)]
    pub exact: bool,
    /// Instances that also get token attributions and HTML.
    #[arg(long, default_value_t = 3)]
    pub local: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct StatsArgs {
    /// Corpus with helpful flags.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// ISR checkpoint whose predictions replace the ISR labels.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    /// logit or probit.
    #[arg(long, default_value = "logit")]
    pub link: Link,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    /// Condition coding: ordinal or onehot.
    #[arg(long, default_value = "ordinal")]
    pub coding: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct ReportArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// beeswarm.csv from `explain`, rendered to SVG.
    #[arg(long)]
    pub beeswarm: Option<PathBuf>,
}

const SUBCOMMANDS: [&str; 9] = [
    "ingest", "featurize", "train", "evaluate", "ablate", "transfer", "explain", "stats", "report",
];

/// Reads `key=value` lines; `#` starts a comment.
pub fn parse_config_file(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            message: format!("expected key=value, got `{line}`"),
        })?;
        out.push((k.trim().trim_start_matches("--").replace('_', "-"), v.trim().to_string()));
    }
    Ok(out)
}

/// Splices config-file entries in front of the command-line flags of the
/// subcommand so that explicit flags override them.
fn expand_config(args: &[String]) -> Result<Vec<String>> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        if a == "--config" {
            path = args.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else {
        return Ok(args.to_vec());
    };
    let entries = parse_config_file(&std::fs::read_to_string(&path)?)?;
    let Some(pos) = args.iter().position(|a| SUBCOMMANDS.contains(&a.as_str())) else {
        return Ok(args.to_vec());
    };
    let mut injected = Vec::new();
    for (k, v) in entries {
        match v.as_str() {
            "true" => injected.push(format!("--{k}")),
            "false" => {}
            _ => {
                injected.push(format!("--{k}"));
                injected.push(v);
            }
        }
    }
    let mut out = args[..=pos].to_vec();
    out.extend(injected);
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code: 0 success, 1 runtime or I/O failure, 2 usage error.
pub fn cli_main(args: &[String]) -> i32 {
    let expanded = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: config file: {e}");
            return if matches!(e, Error::Io(_)) { 1 } else { 2 };
        }
    };
    let cli = match Cli::try_parse_from(&expanded) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let hash = config_hash(&cli.command);
    eprintln!(
        "[ohcsupport] command={} seed={} config_hash={hash}",
        command_name(&cli.command),
        command_seed(&cli.command).map_or("-".into(), |s| s.to_string())
    );
    match run(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Ingest(_) => "ingest",
        Command::Featurize(_) => "featurize",
        Command::Train(_) => "train",
        Command::Evaluate(_) => "evaluate",
        Command::Ablate(_) => "ablate",
        Command::Transfer(_) => "transfer",
        Command::Explain(_) => "explain",
        Command::Stats(_) => "stats",
        Command::Report(_) => "report",
    }
}

fn command_seed(c: &Command) -> Option<u64> {
    match c {
        Command::Ingest(a) => Some(a.seed),
        Command::Train(a) => Some(a.hyper.seed),
        Command::Ablate(a) => Some(a.hyper.seed),
        Command::Explain(a) => Some(a.seed),
        Command::Stats(a) => Some(a.seed),
        _ => None,
    }
}

/// SHA-256 of the fully resolved subcommand arguments.
pub fn config_hash(c: &Command) -> String {
    let digest = Sha256::digest(format!("{c:?}").as_bytes());
    digest.iter().take(8).fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn run(c: &Command) -> Result<()> {
    match c {
        Command::Ingest(a) => ingest(a),
        Command::Featurize(a) => featurize(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a, true),
        Command::Ablate(a) => ablate(a),
        Command::Transfer(a) => evaluate(a, false),
        Command::Explain(a) => explain(a),
        Command::Stats(a) => stats(a),
        Command::Report(a) => report(a),
    }
}

struct Loaded {
    emotions: EmotionSource,
    embeddings: Option<EmbeddingTable>,
}

impl Loaded {
    fn new(d: &DataArgs) -> Result<Self> {
        Ok(Self {
            emotions: match &d.emotions {
                Some(p) => EmotionSource::with_sidecar(read_emotion_file(p)?),
                None => EmotionSource::default(),
            },
            embeddings: d.embeddings.as_deref().map(read_embedding_file).transpose()?,
        })
    }

    fn res(&self) -> Resources<'_> {
        Resources {
            emotions: &self.emotions,
            embeddings: self.embeddings.as_ref(),
        }
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

fn pipeline_config(task: Task, h: &HyperArgs, groups: &str, emb: Option<&EmbeddingTable>) -> Result<PipelineConfig> {
    let mut fusion = FusionConfig::scaled(h.width);
    if h.text == TextSource::Embedding {
        let dim = emb
            .ok_or_else(|| Error::Invalid("`--text embedding` needs `--embeddings`".into()))?
            .dim;
        fusion.d_text = dim;
        fusion.d_token = dim;
    }
    fusion.dropout = h.dropout;
    fusion.pooling = match h.pooling.as_str() {
        "mean-max" | "mean_max" => Pooling::MeanMaxConcat,
        "concat" => Pooling::Concat,
        other => return Err(Error::Invalid(format!("unknown pooling `{other}`"))),
    };
    Ok(PipelineConfig {
        task,
        groups: FeatureGroup::parse_list(groups)?,
        text: h.text,
        fusion,
        train: TrainConfig {
            max_lr: h.lr,
            warmup_fraction: h.warmup,
            batch_size: h.batch_size,
            weight_decay: h.weight_decay,
            max_epochs: h.epochs,
            patience: h.patience,
            seed: h.seed,
        },
        val_fraction: h.val_fraction,
        min_df: h.min_df,
        tokenizer: Default::default(),
    })
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let mut corpus = read_corpus(&a.corpus)?;
    std::fs::create_dir_all(&a.out)?;
    if let Some(spec) = &a.sample {
        let mut per = BTreeMap::new();
        for part in spec.split(',').filter(|s| !s.trim().is_empty()) {
            let (c, n) = part
                .split_once('=')
                .ok_or_else(|| Error::Invalid(format!("sample entry `{part}` is not condition=count")))?;
            let n: usize = n
                .trim()
                .parse()
                .map_err(|_| Error::Invalid(format!("bad count in `{part}`")))?;
            per.insert(c.trim().to_string(), n);
        }
        corpus = stratified_sample(&corpus, &per, a.seed)?;
        write(&a.out.join("sample.jsonl"), corpus_to_string(&corpus))?;
        write(&a.out.join("provenance.txt"), format!("{}\n", corpus.provenance))?;
    }
    write(&a.out.join("summary.csv"), corpus.label_summary().to_csv())?;
    if let Some(f) = a.train_fraction {
        let strat = match a.stratify.as_str() {
            "none" => None,
            s => Some(s.parse::<LabelField>()?),
        };
        let (train, test) = holdout_split(&corpus, f, a.seed, strat)?;
        write(&a.out.join("train.jsonl"), corpus_to_string(&train))?;
        write(&a.out.join("test.jsonl"), corpus_to_string(&test))?;
    }
    Ok(())
}

fn featurize(a: &FeaturizeArgs) -> Result<()> {
    let data = Loaded::new(&a.data)?;
    let corpus = select_for_task(&read_corpus(&a.corpus)?, a.task);
    let mut cfg = PipelineConfig::new(a.task);
    cfg.groups = FeatureGroup::parse_list(&a.groups)?;
    cfg.min_df = a.min_df;
    cfg.text = TextSource::Tfidf;
    let f = Featurizer::fit(&corpus, &cfg, data.res())?;
    let rows = f.rows(&corpus, data.res())?;
    let ids: Vec<String> = corpus.pairs.iter().map(|p| p.pair_id.clone()).collect();
    write(&a.out.join("features.csv"), raw_rows_csv(&ids, &rows, &crate::features::FeatureSchema::for_task(a.task)))?;
    write(&a.out.join("standardized.csv"), f.standardizer.transform(&rows)?.to_csv())?;
    write(&a.out.join("vocabulary.csv"), f.tfidf.vocabulary_csv())?;
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let data = Loaded::new(&a.data)?;
    let corpus = read_corpus(&a.corpus)?;
    let cfg = pipeline_config(a.task, &a.hyper, &a.groups, data.embeddings.as_ref())?;
    let p = fit_pipeline(&corpus, data.res(), &cfg)?;
    let kinds = match &a.baselines {
        Some(list) => list
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| BaselineKind::by_name(s.trim()))
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    let ck = if kinds.is_empty() {
        Checkpoint::new(p)
    } else {
        fit_baselines_and_ensemble(p, &corpus, data.res(), &kinds, a.baseline_tfidf, a.ensemble_rounds)?
    };
    let h = &ck.pipeline.history;
    eprintln!(
        "[ohcsupport] trained {} epochs, best epoch {} (val loss {:.5})",
        h.epochs.len(),
        h.best_epoch + 1,
        h.epochs.get(h.best_epoch).map_or(f64::NAN, |e| e.val_loss)
    );
    ck.save(&a.out)
}

fn evaluate(a: &EvaluateArgs, all_models: bool) -> Result<()> {
    let data = Loaded::new(&a.data)?;
    let ck = Checkpoint::load(&a.model)?;
    let task = ck.pipeline.config.task;
    let corpus = select_for_task(&read_corpus(&a.corpus)?, task);
    let y = labels(&corpus, task)?;
    let mut names = vec!["Fuse-late".to_string()];
    let probs = if all_models {
        names = ck.model_names();
        if ck.ensemble.is_some() {
            names.push("Weighted Ensemble".into());
        }
        ck.predict_all(&corpus, data.res())?
    } else {
        vec![ck.pipeline.predict(&corpus, data.res())?]
    };
    let mut csv = format!("model,{METRICS_HEADER}\n");
    let mut first = None;
    for (name, p) in names.iter().zip(&probs) {
        let m = compute_metrics(p, &y, a.threshold)?;
        csv.push_str(&format!("{name},{}\n", m.csv_row()));
        first.get_or_insert(m);
    }
    match &a.out {
        Some(path) => write(path, &csv)?,
        None => print!("{csv}"),
    }
    if let (Some(path), Some(m)) = (&a.confusion_out, first) {
        write(path, m.confusion_json() + "\n")?;
    }
    Ok(())
}

fn ablate(a: &AblateArgs) -> Result<()> {
    let data = Loaded::new(&a.data)?;
    let train = read_corpus(&a.train)?;
    let test = read_corpus(&a.test)?;
    let names: Vec<&str> = a.groups.split(',').filter(|s| !s.trim().is_empty()).collect();
    let spec = AblationSpec::from_names(&names)?;
    let cfg = pipeline_config(a.task, &a.hyper, "text,emotions,numeric_text,post,user", data.embeddings.as_ref())?;
    let rows = run_ablation(&train, &test, data.res(), &spec, &cfg)?;
    write(&a.out, ablation_csv(&rows))
}

fn file_safe(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn explain(a: &ExplainArgs) -> Result<()> {
    let data = Loaded::new(&a.data)?;
    let res = data.res();
    let ck = Checkpoint::load(&a.model)?;
    let p = &ck.pipeline;
    let corpus = select_for_task(&read_corpus(&a.corpus)?, p.config.task);
    let background = match &a.background_corpus {
        Some(path) => read_corpus(path)?,
        None => corpus.clone(),
    };
    let opts = ExplainOptions {
        background: a.background,
        instances: a.instances,
        samples: a.samples,
        exact: a.exact,
        seed: a.seed,
    };
    let e = p.explain(&corpus, &background, res, &opts)?;
    let summary = &e.summary;
    write(&a.out.join("importance.csv"), summary.importance_csv())?;
    let bees = summary.beeswarm_csv();
    write(&a.out.join("beeswarm.svg"), beeswarm_svg(&bees)?)?;
    write(&a.out.join("beeswarm.csv"), bees)?;
    for (k, &i) in e.indices.iter().take(a.local).enumerate() {
        let pair = &corpus.pairs[i];
        let tokens = p.token_attribution(pair, res)?;
        let stem = a.out.join(format!("local_{}", file_safe(&pair.pair_id)));
        let json = local_json(&pair.pair_id, &summary.feature_names, &summary.attributions[k], tokens.as_ref());
        write(&stem.with_extension("json"), json + "\n")?;
        if let Some(t) = &tokens {
            write(&stem.with_extension("html"), t.to_html(&pair.pair_id))?;
        }
    }
    Ok(())
}

fn stats(a: &StatsArgs) -> Result<()> {
    let corpus = read_corpus(&a.corpus)?;
    let isr: Vec<bool> = match &a.model {
        Some(path) => {
            let data = Loaded::new(&a.data)?;
            let ck = Checkpoint::load(path)?;
            if ck.pipeline.config.task != Task::Isr {
                return Err(Error::Invalid("stats needs an ISR checkpoint".into()));
            }
            ck.pipeline
                .predict(&corpus, data.res())?
                .into_iter()
                .map(|p| p >= 0.5)
                .collect()
        }
        None => corpus
            .pairs
            .iter()
            .map(|p| {
                p.isr_label
                    .ok_or_else(|| Error::Invalid(format!("pair `{}` has no ISR label; pass --model", p.pair_id)))
            })
            .collect::<Result<_>>()?,
    };
    let opts = HelpfulnessOptions {
        bins: a.bins,
        seed: a.seed,
        coding: match a.coding.as_str() {
            "ordinal" => ConditionCoding::Ordinal,
            "onehot" | "one_hot" => ConditionCoding::OneHot,
            other => return Err(Error::Invalid(format!("unknown coding `{other}`"))),
        },
        link: a.link,
    };
    let rep = helpfulness_analysis(&corpus, &isr, &opts)?;
    std::fs::create_dir_all(&a.out)?;
    write(&a.out.join("regression.txt"), rep.result.to_table())?;
    write(&a.out.join("regression.json"), rep.result.to_json() + "\n")?;
    write(&a.out.join("contingency.csv"), rep.contingency.to_csv())?;
    let kept: Vec<&str> = rep.matched.indices.iter().map(|&i| corpus.pairs[i].pair_id.as_str()).collect();
    write(&a.out.join("matched_ids.txt"), kept.join("\n") + "\n")?;
    let mut warn = rep.matched.warnings.join("\n");
    warn.push('\n');
    write(&a.out.join("warnings.txt"), warn.trim_start())?;

    // VIFs of the non-intercept regressors on the matched sample.
    let r = &rep.result;
    let cols: Vec<usize> = (0..r.names.len()).filter(|&j| r.names[j] != "Intercept").collect();
    let columns: Vec<Vec<f64>> = cols.iter().map(|&j| rep.design.iter().map(|row| row[j]).collect()).collect();
    let names: Vec<String> = cols.iter().map(|&j| r.names[j].clone()).collect();
    let mut csv = String::from("variable,vif\n");
    match vif(&columns, &names) {
        Ok(v) => {
            for (n, x) in names.iter().zip(&v) {
                csv.push_str(&format!("{n},{x:.6}\n"));
            }
            csv.push_str(&format!("Mean VIF,{:.6}\n", v.iter().sum::<f64>() / v.len() as f64));
        }
        Err(e) => csv.push_str(&format!("error,{e}\n")),
    }
    write(&a.out.join("vif.csv"), csv)?;

    // Same model under the other link for the sign comparison.
    let other = match a.link {
        Link::Logit => Link::Probit,
        Link::Probit => Link::Logit,
    };
    let alt = fit_glm_binary(&rep.design, &r.names, &rep.response, other, true)?;
    let tag = if other == Link::Probit { "probit" } else { "logit" };
    write(&a.out.join(format!("regression_{tag}.txt")), alt.to_table())?;
    Ok(())
}

fn report(a: &ReportArgs) -> Result<()> {
    let data = Loaded::new(&a.data)?;
    let corpus = read_corpus(&a.corpus)?;
    std::fs::create_dir_all(&a.out)?;
    let scores = corpus
        .pairs
        .iter()
        .map(|p| data.emotions.scores_for(p))
        .collect::<Result<Vec<_>>>()?;
    let emo = emotion_histograms(&scores);
    write(&a.out.join("emotion_histograms.csv"), histograms_csv(&emo))?;
    for h in &emo {
        write(&a.out.join(format!("emotion_{}.svg", h.title)), h.to_svg())?;
    }
    if corpus.pairs.iter().any(|p| p.helpful.is_some()) {
        let lens = length_histograms(&corpus);
        write(&a.out.join("length_distribution.csv"), histograms_csv(&lens))?;
        for h in &lens {
            write(&a.out.join(format!("length_{}.svg", h.title)), h.to_svg())?;
        }
    }
    write(&a.out.join("label_summary.csv"), corpus.label_summary().to_csv())?;
    if let Some(path) = &a.beeswarm {
        write(&a.out.join("beeswarm.svg"), beeswarm_svg(&std::fs::read_to_string(path)?)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_parsing() {
        let e = parse_config_file("# comment\nseed = 7\nbatch_size=16 # trailing\n\nbaseline-tfidf=true\n").unwrap();
        assert_eq!(
            e,
            vec![
                ("seed".to_string(), "7".to_string()),
                ("batch-size".to_string(), "16".to_string()),
                ("baseline-tfidf".to_string(), "true".to_string()),
            ]
        );
        assert!(parse_config_file("novalue\n").is_err());
    }

    #[test]
    fn usage_errors_exit_2() {
        let args = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert_eq!(cli_main(&args(&["ohcsupport", "frobnicate"])), 2);
        assert_eq!(cli_main(&args(&["ohcsupport", "train", "--bogus"])), 2);
        assert_eq!(cli_main(&args(&["ohcsupport", "evaluate", "--model", "/nonexistent/m.json", "--corpus", "/nonexistent/c.jsonl"])), 1);
    }

}
