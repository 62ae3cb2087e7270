//! `morphvec`: vocabulary building, embedding training, neighbour queries
//! and tagger experiments.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use morphvec::corpus::{self, Vocabulary};
use morphvec::embeddings::{self, WordVectorStore};
use morphvec::eval::{self, ExperimentData, ExternalVectors, StaticVectors, TagDataset, TaskKind};
use morphvec::subword::{self, SegmentationStrategy, StrategyKind, SubwordIndex};
use morphvec::tagger::{self, TaggerConfig, TokenEmbedder};
use morphvec::trainer::{self, TrainConfig};

use manifest::RunManifest;

/// Error that maps to exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(usage(format!("input file not found: {}", path.display())));
    }
    Ok(())
}

#[derive(Parser)]
#[command(name = "morphvec", version, about = "Sub-word skip-gram embeddings and CRF tagging experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count a corpus and write a vocabulary file.
    Vocab(VocabArgs),
    /// Train embeddings; writes a binary model and text vectors.
    Train(TrainArgs),
    /// Print the nearest neighbours of a word.
    Nn(NnArgs),
    /// Train or evaluate a sequence tagger.
    #[command(subcommand)]
    Tag(TagCommand),
}

#[derive(Args, Serialize)]
struct VocabArgs {
    corpus: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = corpus::DEFAULT_MAX_VOCAB)]
    max_vocab: usize,
    #[arg(long, default_value_t = corpus::DEFAULT_MIN_COUNT)]
    min_count: u64,
    #[arg(long)]
    lowercase: bool,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    corpus: PathBuf,
    /// Vocabulary file; built from the corpus with default limits when absent.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Binary model path. Text vectors go next to it with a `.vec` extension
    /// unless `--vectors` is given.
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long)]
    vectors: Option<PathBuf>,
    #[arg(long, default_value = "sg")]
    #[serde(serialize_with = "manifest::display")]
    strategy: StrategyKind,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    dim: usize,
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long, default_value_t = 5)]
    negatives: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Single worker, bit-reproducible for a fixed seed.
    #[arg(long)]
    deterministic: bool,
    #[arg(long, default_value_t = 2_000_000)]
    buckets: u32,
    #[arg(long, default_value_t = 3)]
    min_n: u32,
    #[arg(long, default_value_t = 6)]
    max_n: u32,
    #[arg(long, default_value_t = 0.025)]
    lr: f64,
    #[arg(long, default_value_t = corpus::DEFAULT_SUBSAMPLE)]
    subsample: f64,
    #[arg(long)]
    lowercase: bool,
}

#[derive(Args, Serialize)]
struct NnArgs {
    /// Binary model or text vectors.
    vectors: PathBuf,
    word: String,
    #[arg(short, default_value_t = 10)]
    k: usize,
}

#[derive(Subcommand)]
enum TagCommand {
    /// Train a tagger and write a checkpoint.
    Train(TagTrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(TagEvalArgs),
}

#[derive(Args, Serialize, Clone)]
struct VectorSource {
    /// Binary model or text vectors produced by `train`.
    #[arg(long, conflicts_with = "external_vectors")]
    vectors: Option<PathBuf>,
    /// Precomputed text vectors or per-token TSV.
    #[arg(long)]
    external_vectors: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct TagTrainArgs {
    /// CoNLL training file. Split 80/10/10 when `--dev` is not given.
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[command(flatten)]
    source: VectorSource,
    #[arg(long, default_value = "pos")]
    #[serde(serialize_with = "manifest::display")]
    task: TaskKind,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, overrides_with = "no_freeze")]
    freeze: bool,
    /// Keep training the embeddings of training words.
    #[arg(long)]
    no_freeze: bool,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 3)]
    conv_width: usize,
    #[arg(long, default_value_t = 128)]
    conv_channels: usize,
    #[arg(long, default_value_t = 128)]
    dense_units: usize,
    /// Reject NER tags outside the BILUO scheme.
    #[arg(long)]
    strict: bool,
    /// Report label; defaults to the strategy of a binary model.
    #[arg(long)]
    name: Option<String>,
    /// Write the report as CSV here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct TagEvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    source: VectorSource,
    #[arg(long, default_value = "pos")]
    #[serde(serialize_with = "manifest::display")]
    task: TaskKind,
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    report: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Vocab(a) => cmd_vocab(a),
        Command::Train(a) => cmd_train(a),
        Command::Nn(a) => cmd_nn(a),
        Command::Tag(TagCommand::Train(a)) => cmd_tag_train(a),
        Command::Tag(TagCommand::Eval(a)) => cmd_tag_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn cmd_vocab(a: VocabArgs) -> Result<()> {
    require_file(&a.corpus)?;
    let sentences = corpus::read_corpus(&a.corpus, a.lowercase)?;
    let vocab = corpus::build_vocab(sentences.iter().flatten(), a.max_vocab, a.min_count)?;
    vocab.save(&a.output)?;
    eprintln!("{} words from {} tokens", vocab.len(), vocab.total_tokens());
    RunManifest::new("vocab", &a, None, &[&a.corpus])?.write_for(&a.output)?;
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    require_file(&a.corpus)?;
    if let Some(v) = &a.vocab {
        require_file(v)?;
    }
    let lexicon = match (&a.lexicon, a.strategy.uses_morphemes()) {
        (None, true) => return Err(usage(format!("--strategy {} requires --lexicon", a.strategy))),
        (Some(p), true) => {
            require_file(p)?;
            Some(subword::load_lexicon(p)?)
        }
        (Some(_), false) => {
            log::warn!("--lexicon is ignored by --strategy {}", a.strategy);
            None
        }
        (None, false) => None,
    };
    let sentences = corpus::read_corpus(&a.corpus, a.lowercase)?;
    let vocab = match &a.vocab {
        Some(p) => Vocabulary::load(p)?,
        None => corpus::build_vocab(sentences.iter().flatten(), corpus::DEFAULT_MAX_VOCAB, corpus::DEFAULT_MIN_COUNT)?,
    };
    let strategy = SegmentationStrategy::new(a.strategy)
        .with_buckets(a.buckets)
        .with_ngram_range(a.min_n, a.max_n);
    strategy.validate().map_err(|e| usage(e.to_string()))?;
    let index = SubwordIndex::new(&vocab, strategy, lexicon)?;
    let encoded = vocab.encode(&sentences);
    let noise = corpus::build_noise_table(&vocab, corpus::DEFAULT_NOISE_POWER)?;
    let config = TrainConfig {
        dim: a.dim,
        window: a.window,
        negatives: a.negatives,
        lr0: a.lr,
        lr_min: 1e-4f64.min(a.lr),
        subsample: a.subsample,
        epochs: a.epochs,
        seed: a.seed,
        threads: if a.deterministic { 1 } else { a.threads },
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let trained = trainer::train::<f32>(&encoded, &vocab, &noise, index, &config)?;
    eprintln!(
        "trained on {} tokens ({} OOV dropped), final epoch loss {:.4}",
        trained.stats.tokens_processed,
        trained.stats.oov_skipped,
        trained.stats.epoch_loss.last().copied().unwrap_or(f64::NAN)
    );
    embeddings::save_binary(&trained.model, &a.output)?;
    let text_path = a.vectors.clone().unwrap_or_else(|| a.output.with_extension("vec"));
    WordVectorStore::from_model(trained.model).save_text(&text_path)?;
    let mut inputs: Vec<&Path> = vec![&a.corpus];
    inputs.extend(a.vocab.as_deref());
    inputs.extend(a.lexicon.as_deref());
    let m = RunManifest::new("train", &a, Some(a.seed), &inputs)?;
    m.write_for(&a.output)?;
    m.write_for(&text_path)?;
    Ok(())
}

/// Loads a binary model (composing OOV words) or text vectors.
fn load_store(path: &Path) -> Result<WordVectorStore<f32>> {
    require_file(path)?;
    if embeddings::is_binary_model(path)? {
        Ok(WordVectorStore::from_model(embeddings::load_binary(path)?))
    } else {
        Ok(WordVectorStore::load_text(path)?)
    }
}

fn cmd_nn(a: NnArgs) -> Result<()> {
    let store = load_store(&a.vectors)?;
    let q = store.vector_or_zero(&a.word);
    if q.iter().all(|&x| x == 0.0) {
        log::warn!("{:?} has no vector; no neighbours", a.word);
        eprintln!("warning: {:?} has a zero vector; no neighbours", a.word);
        return Ok(());
    }
    for (w, c) in store.nearest_to_vector(&q, a.k, Some(&a.word)) {
        println!("{w}\t{c:.4}");
    }
    Ok(())
}

fn load_dataset(path: &Path, task: TaskKind, strict: bool) -> Result<TagDataset> {
    require_file(path)?;
    let d = TagDataset::load(path, task)?;
    if strict && task == TaskKind::Ner {
        d.check_biluo().with_context(|| format!("--strict: {}", path.display()))?;
    }
    Ok(d)
}

enum Embedder {
    Static(StaticVectors<f32>, Option<StrategyKind>),
    External(ExternalVectors<f32>),
}

impl Embedder {
    fn load(src: &VectorSource) -> Result<Self> {
        match (&src.vectors, &src.external_vectors) {
            (Some(p), None) => {
                require_file(p)?;
                let kind = if embeddings::is_binary_model(p)? {
                    Some(embeddings::read_binary_header(p)?.strategy.kind)
                } else {
                    None
                };
                Ok(Embedder::Static(StaticVectors::new(load_store(p)?), kind))
            }
            (None, Some(p)) => {
                require_file(p)?;
                Ok(Embedder::External(eval::load_external_vectors(p, None)?))
            }
            _ => Err(usage("give exactly one of --vectors or --external-vectors")),
        }
    }

    fn as_dyn(&self) -> &dyn TokenEmbedder<f32> {
        match self {
            Embedder::Static(v, _) => v,
            Embedder::External(v) => v,
        }
    }

    fn label(&self, name: Option<&str>) -> String {
        match (name, self) {
            (Some(n), _) => n.to_string(),
            (None, Embedder::Static(_, Some(kind))) => kind.label().to_string(),
            (None, _) => "external".to_string(),
        }
    }

    fn oov(&self) -> Option<usize> {
        match self {
            Embedder::Static(v, _) | Embedder::External(ExternalVectors::Static(v)) => Some(v.oov_count()),
            Embedder::External(ExternalVectors::Contextual(_)) => None,
        }
    }
}

fn source_paths(src: &VectorSource) -> Vec<&Path> {
    src.vectors.iter().chain(&src.external_vectors).map(PathBuf::as_path).collect()
}

fn print_report(report: &eval::EvalReport, csv: Option<&Path>) -> Result<()> {
    print!("{}", report.table());
    if let Some(p) = csv {
        fs::write(p, report.csv()).with_context(|| format!("writing {}", p.display()))?;
        let curve = p.with_extension("curve.csv");
        fs::write(&curve, report.curve_csv()).with_context(|| format!("writing {}", curve.display()))?;
    }
    Ok(())
}

fn cmd_tag_train(a: TagTrainArgs) -> Result<()> {
    let embedder = Embedder::load(&a.source)?;
    let train = load_dataset(&a.train, a.task, a.strict)?;
    let data = match &a.dev {
        Some(dev) => {
            let dev = load_dataset(dev, a.task, a.strict)?;
            let test = match &a.test {
                Some(t) => load_dataset(t, a.task, a.strict)?,
                None => dev.clone(),
            };
            ExperimentData {
                train,
                dev: Some(dev),
                test,
            }
        }
        None => {
            let mut d = ExperimentData::from_single(&train, a.seed);
            if let Some(t) = &a.test {
                d.test = load_dataset(t, a.task, a.strict)?;
            }
            d
        }
    };
    if data.train.is_empty() {
        bail!("training split is empty");
    }
    let config = TaggerConfig {
        conv_width: a.conv_width,
        conv_channels: a.conv_channels,
        dense_units: a.dense_units,
        lr: a.lr,
        epochs: a.epochs,
        freeze_embeddings: !a.no_freeze,
        seed: a.seed,
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let mut tags = data.train.tags().to_vec();
    for d in data.dev.iter().chain(std::iter::once(&data.test)) {
        for t in d.tags() {
            if !tags.contains(t) {
                tags.push(t.clone());
            }
        }
    }
    let trained = tagger::train_tagger_with_tags(&data.train, data.dev.as_ref(), embedder.as_dyn(), &config, tags)?;
    tagger::save_tagger(&trained.model, &a.output)?;
    let mut report = eval::EvalReport::new();
    if !data.test.is_empty() {
        report.push(eval::evaluate_row(
            &embedder.label(a.name.as_deref()),
            &trained,
            &data.test,
            embedder.as_dyn(),
        )?);
    }
    eprintln!("best epoch {} of {}", trained.best_epoch, config.epochs);
    if let Some(n) = embedder.oov() {
        eprintln!("{n} token lookups had no vector");
    }
    print_report(&report, a.report.as_deref())?;
    let mut inputs: Vec<&Path> = vec![&a.train];
    inputs.extend(a.dev.as_deref());
    inputs.extend(a.test.as_deref());
    inputs.extend(source_paths(&a.source));
    RunManifest::new("tag train", &a, Some(a.seed), &inputs)?.write_for(&a.output)?;
    Ok(())
}

fn cmd_tag_eval(a: TagEvalArgs) -> Result<()> {
    require_file(&a.model)?;
    let embedder = Embedder::load(&a.source)?;
    let model: tagger::TaggerModel<f32> = tagger::load_tagger(&a.model)?;
    if model.dim != embedder.as_dyn().dim() {
        bail!("tagger expects dim {}, vectors have dim {}", model.dim, embedder.as_dyn().dim());
    }
    let data = load_dataset(&a.data, a.task, a.strict)?;
    let trained = tagger::TrainedTagger {
        metric: a.task.metric(),
        best_epoch: 0,
        curve: Vec::new(),
        model,
    };
    let mut report = eval::EvalReport::new();
    report.push(eval::evaluate_row(&embedder.label(a.name.as_deref()), &trained, &data, embedder.as_dyn())?);
    print_report(&report, a.report.as_deref())?;
    if let Some(p) = &a.report {
        let mut inputs: Vec<&Path> = vec![&a.model, &a.data];
        inputs.extend(source_paths(&a.source));
        RunManifest::new("tag eval", &a, None, &inputs)?.write_for(p)?;
    }
    Ok(())
}
