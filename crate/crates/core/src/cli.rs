//! The `reqa` command line.
//!
//! Exit codes: 0 on success, 2 on usage errors, 1 on any other failure.
//! Results go to stdout or files, logs to stderr. Every file written gets a
//! `<file>.manifest.json` sidecar.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bm25::{Bm25Params, Bm25Retriever, SavedIndex};
use crate::converter::{self, DatasetKind};
use crate::corpus::{CandidatePool, QuestionSet, RetrievalRun};
use crate::dense::{self, Checkpoint, DenseRetriever, EmbeddingHeader, EncoderModel, ModelConfig, Preset, TrainConfig};
use crate::eval::{self, ReportMeta};
use crate::manifest::{self, RunManifest};
use crate::retrieve::{build_run, RunShape};
use crate::segmenter::Segmenter;
use crate::tokenize::{Regime, Tokenizer, TokenizerSpec, Vocab};
use crate::config;

#[derive(Debug, Parser, Serialize)]
#[command(name = "reqa", version, about = "Sentence-level retrieval QA: convert, index, train, retrieve, evaluate")]
struct Cli {
    /// Worker threads for indexing, embedding and evaluation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Flat `key = value` file of default flag values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overwrite existing output files.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
enum Command {
    /// Convert MRQA-style JSON Lines into a candidate pool and question set.
    Convert(ConvertArgs),
    /// Dataset statistics and lexical overlap.
    Stats(StatsArgs),
    /// Build and save a BM25 index.
    Index(IndexArgs),
    /// Encode the candidate pool with a trained dual encoder.
    Embed(EmbedArgs),
    /// Train the dual encoder.
    Train(TrainArgs),
    /// Rank the pool for every question.
    Retrieve(RetrieveArgs),
    /// P@1 and MRR of a run.
    Eval(EvalArgs),
    /// Top-1 disagreement between two runs.
    Compare(CompareArgs),
    /// With-context vs no-context evaluation of one system.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum System {
    Bm25,
    Dense,
}

#[derive(Debug, Args, Serialize)]
struct TokenizerArgs {
    /// Tokenization regime: word or wpm.
    #[arg(long, default_value = "word")]
    tokenizer: Regime,
    /// WordPiece vocabulary, one token per line.
    #[arg(long, env = "REQA_VOCAB")]
    vocab: Option<PathBuf>,
    /// Skip lowercasing and accent stripping before WordPiece.
    #[arg(long)]
    no_normalize: bool,
}

#[derive(Debug, Args, Serialize)]
struct Bm25Args {
    /// Term-frequency saturation.
    #[arg(long, default_value_t = 1.5)]
    k1: f64,
    /// Length normalization strength.
    #[arg(long, default_value_t = 0.75)]
    b: f64,
    /// IDF floor as a fraction of the mean positive IDF.
    #[arg(long, default_value_t = 0.25)]
    epsilon: f64,
}

impl Bm25Args {
    fn params(&self) -> Bm25Params {
        Bm25Params {
            k1: self.k1,
            b: self.b,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct ConvertArgs {
    /// MRQA JSON Lines, optionally gzip-compressed.
    #[arg(long)]
    input: PathBuf,
    /// Dataset kind; selects the tag handling.
    #[arg(long)]
    kind: DatasetKind,
    /// Directory for candidates.jsonl, questions.jsonl and exclusions.json.
    #[arg(long)]
    out_dir: PathBuf,
    /// Abbreviation list for the sentence splitter.
    #[arg(long)]
    abbreviations: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct StatsArgs {
    /// Candidate pool JSON Lines.
    #[arg(long)]
    candidates: PathBuf,
    /// Question set JSON Lines.
    #[arg(long)]
    questions: PathBuf,
    #[command(flatten)]
    tok: TokenizerArgs,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
    /// Also write JSON to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct IndexArgs {
    /// Candidate pool JSON Lines.
    #[arg(long)]
    candidates: PathBuf,
    #[command(flatten)]
    tok: TokenizerArgs,
    #[command(flatten)]
    bm25: Bm25Args,
    /// Index the sentence alone, without its context.
    #[arg(long)]
    no_context: bool,
    /// Output file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    /// Candidate pool JSON Lines.
    #[arg(long)]
    candidates: PathBuf,
    /// Question set JSON Lines.
    #[arg(long)]
    questions: PathBuf,
    #[command(flatten)]
    tok: TokenizerArgs,
    /// Optimizer preset: useqa-style (SGD) or adamw.
    #[arg(long, default_value = "useqa-style")]
    preset: Preset,
    /// Pairs per batch; overrides the preset.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Passes over the training pairs; overrides the preset.
    #[arg(long)]
    epochs: Option<usize>,
    /// Learning rate at the first step; overrides the preset.
    #[arg(long)]
    lr_initial: Option<f64>,
    /// Learning rate at the last step; overrides the preset.
    #[arg(long)]
    lr_final: Option<f64>,
    /// Seed for initialization, shuffling and the validation split.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train without the context pathway.
    #[arg(long)]
    no_context: bool,
    /// Fraction of pairs held out for validation loss.
    #[arg(long, default_value_t = 0.1)]
    valid_fraction: f64,
    /// Token embedding width.
    #[arg(long)]
    d_tok: Option<usize>,
    /// Hidden layer width.
    #[arg(long)]
    d_hidden: Option<usize>,
    /// Output embedding width.
    #[arg(long)]
    d_out: Option<usize>,
    /// Softmax scale applied to dot products.
    #[arg(long)]
    scale: Option<f64>,
    /// Uniform init half-width for embeddings and inner layers.
    #[arg(long)]
    init_scale: Option<f64>,
    /// Uniform init half-width for output layers.
    #[arg(long)]
    output_init_scale: Option<f64>,
    /// Output file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct EmbedArgs {
    /// Candidate pool JSON Lines.
    #[arg(long)]
    candidates: PathBuf,
    /// Dual-encoder checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// WordPiece vocabulary the model was trained with.
    #[arg(long, env = "REQA_VOCAB")]
    vocab: Option<PathBuf>,
    /// Zero the context pathway even if the model was trained with context.
    #[arg(long)]
    no_context: bool,
    /// Output file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct RetrieveArgs {
    /// Retrieval system.
    #[arg(long, value_enum)]
    system: System,
    /// Candidate pool JSON Lines.
    #[arg(long)]
    candidates: PathBuf,
    /// Question set JSON Lines.
    #[arg(long)]
    questions: PathBuf,
    /// Keep the top k per question (default: the whole pool, or 10 with --ranks-only).
    #[arg(long)]
    k: Option<usize>,
    /// Store gold ranks and only the top k entries.
    #[arg(long)]
    ranks_only: bool,
    /// Name written to the run header.
    #[arg(long)]
    system_name: Option<String>,
    /// Score sentences without their context.
    #[arg(long)]
    no_context: bool,
    #[command(flatten)]
    tok: TokenizerArgs,
    #[command(flatten)]
    bm25: Bm25Args,
    /// Saved BM25 index; built on the fly when absent.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Dual-encoder checkpoint (dense only).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Precomputed pool embeddings (dense only).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Output file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct EvalArgs {
    /// Run file JSON Lines.
    #[arg(long)]
    run: PathBuf,
    /// Question set with gold ids.
    #[arg(long)]
    gold: PathBuf,
    /// Validate gold ids against this pool.
    #[arg(long)]
    candidates: Option<PathBuf>,
    /// Dataset label for the report.
    #[arg(long)]
    dataset: Option<String>,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
    /// Output file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct CompareArgs {
    /// First run file.
    #[arg(long)]
    a: PathBuf,
    /// Second run file.
    #[arg(long)]
    b: PathBuf,
    /// Questions with gold sets; enables the correctness breakdown.
    #[arg(long)]
    gold: Option<PathBuf>,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
    /// Output file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct AblateArgs {
    /// Retrieval system.
    #[arg(long, value_enum)]
    system: System,
    /// Candidate pool JSON Lines.
    #[arg(long)]
    candidates: PathBuf,
    /// Question set JSON Lines.
    #[arg(long)]
    questions: PathBuf,
    #[command(flatten)]
    tok: TokenizerArgs,
    #[command(flatten)]
    bm25: Bm25Args,
    /// Dual-encoder checkpoint.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Dataset label for the report.
    #[arg(long)]
    dataset: Option<String>,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
    /// Output file.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match apply_config(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match cli.threads {
        Some(0) => Err(anyhow!("--threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(anyhow::Error::from)
            .and_then(|pool| pool.install(|| dispatch(&cli))),
        None => dispatch(&cli),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn global_value(argv: &[OsString], flag: &str) -> Option<OsString> {
    let eq = format!("{flag}=");
    for (i, a) in argv.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == flag {
            return argv.get(i + 1).cloned();
        }
        if let Some(v) = s.strip_prefix(&eq) {
            return Some(v.into());
        }
    }
    None
}

fn subcommand_name(argv: &[OsString]) -> Option<String> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--threads" || s == "--config" {
            it.next();
        } else if !s.starts_with('-') {
            return Some(s.into_owned());
        }
    }
    None
}

/// Appends flags from the `--config` file that the command line does not set.
fn apply_config(mut argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = global_value(&argv, "--config") else {
        return Ok(argv);
    };
    let values = config::load(&path).with_context(|| format!("reading config {}", path.to_string_lossy()))?;
    let Some(sub) = subcommand_name(&argv) else {
        return Ok(argv);
    };
    let cmd = Cli::command();
    let Some(sc) = cmd.find_subcommand(&sub) else {
        return Ok(argv);
    };
    let given: Vec<String> = argv
        .iter()
        .map(|a| a.to_string_lossy().split('=').next().unwrap_or_default().to_string())
        .collect();
    for (key, value) in values {
        if key == "config" {
            continue;
        }
        if key == "threads" || key == "force" {
            if !given.contains(&format!("--{key}")) {
                push_flag(&mut argv, &key, &value, key == "threads");
            }
            continue;
        }
        let Some(arg) = sc.get_arguments().find(|a| a.get_long() == Some(key.as_str())) else {
            log::debug!("config key {key:?} does not apply to {sub}");
            continue;
        };
        if given.contains(&format!("--{key}")) {
            continue;
        }
        push_flag(&mut argv, &key, &value, arg.get_action().takes_values());
    }
    Ok(argv)
}

fn push_flag(argv: &mut Vec<OsString>, key: &str, value: &str, takes_value: bool) {
    if takes_value {
        argv.push(format!("--{key}").into());
        argv.push(value.into());
    } else if matches!(value, "true" | "1" | "yes") {
        argv.push(format!("--{key}").into());
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let args = serde_json::to_value(&cli.command)?;
    match &cli.command {
        Command::Convert(a) => cmd_convert(a, cli.force, args),
        Command::Stats(a) => cmd_stats(a, cli.force, args),
        Command::Index(a) => cmd_index(a, cli.force, args),
        Command::Embed(a) => cmd_embed(a, cli.force, args),
        Command::Train(a) => cmd_train(a, cli.force, args),
        Command::Retrieve(a) => cmd_retrieve(a, cli.force, args),
        Command::Eval(a) => cmd_eval(a, cli.force, args),
        Command::Compare(a) => cmd_compare(a, cli.force, args),
        Command::Ablate(a) => cmd_ablate(a, cli.force, args),
    }
}

fn ensure_writable(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        bail!("{} already exists; pass --force to overwrite", path.display());
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn read_pool(path: &Path) -> Result<CandidatePool> {
    CandidatePool::read_jsonl(open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn read_questions(path: &Path, pool: Option<&CandidatePool>) -> Result<QuestionSet> {
    let r = open(path)?;
    match pool {
        Some(p) => QuestionSet::read_jsonl(r, p),
        None => QuestionSet::read_jsonl_standalone(r),
    }
    .with_context(|| format!("reading {}", path.display()))
}

fn read_run(path: &Path) -> Result<RetrievalRun> {
    RetrievalRun::read_jsonl(open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn load_vocab(path: Option<&Path>) -> Result<Arc<Vocab>> {
    let path = path.ok_or_else(|| anyhow!("a WordPiece vocabulary is required (--vocab or REQA_VOCAB)"))?;
    Ok(Arc::new(
        Vocab::from_file(path).with_context(|| format!("reading vocab {}", path.display()))?,
    ))
}

fn make_tokenizer(t: &TokenizerArgs) -> Result<Tokenizer> {
    Ok(match t.tokenizer {
        Regime::Word => Tokenizer::Word,
        Regime::Wpm => Tokenizer::WordPiece {
            vocab: load_vocab(t.vocab.as_deref())?,
            normalize: !t.no_normalize,
        },
    })
}

/// Rebuilds the tokenizer an artifact was made with, checking the vocab.
fn tokenizer_for_spec(spec: &TokenizerSpec, vocab: Option<&Path>) -> Result<Tokenizer> {
    let tok = match spec.regime {
        Regime::Word => Tokenizer::Word,
        Regime::Wpm => Tokenizer::WordPiece {
            vocab: load_vocab(vocab)?,
            normalize: spec.normalize,
        },
    };
    if &tok.spec() != spec {
        bail!("the supplied vocabulary does not match the one the artifact was built with");
    }
    Ok(tok)
}

fn finish(mut m: RunManifest, started: Instant, artifact: &Path) -> Result<()> {
    m.wall_clock_seconds = started.elapsed().as_secs_f64();
    m.write_for(artifact)
        .with_context(|| format!("writing manifest for {}", artifact.display()))
}

fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn emit<T: Serialize>(value: &T, table: String, json: bool) -> Result<()> {
    let mut out = std::io::stdout().lock();
    if json {
        serde_json::to_writer_pretty(&mut out, value)?;
        out.write_all(b"\n")?;
    } else {
        out.write_all(table.as_bytes())?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_convert(a: &ConvertArgs, force: bool, args: serde_json::Value) -> Result<()> {
    let started = Instant::now();
    let outputs = ["candidates.jsonl", "questions.jsonl", "exclusions.json"].map(|n| a.out_dir.join(n));
    for p in &outputs {
        ensure_writable(p, force)?;
    }
    let segmenter = match &a.abbreviations {
        Some(p) => Segmenter::from_file(p).with_context(|| format!("reading {}", p.display()))?,
        None => Segmenter::default(),
    };
    let records = converter::parse_stream(
        converter::open_input(&a.input).with_context(|| format!("opening {}", a.input.display()))?,
    )?;
    let conv = converter::convert(&records, a.kind, &segmenter)?;
    if conv.questions.is_empty() {
        return Err(converter::ConvertError::EmptyDataset.into());
    }
    let r = &conv.report;
    log::info!(
        "{} questions in, {} kept; dropped: {} no answer, {} title only, {} multi-sentence, {} unmappable; {} candidates",
        r.input_questions,
        r.kept_questions,
        r.dropped_no_answer,
        r.dropped_title_only,
        r.dropped_multi_sentence,
        r.dropped_unmappable,
        conv.pool.len()
    );
    let mut w = create(&outputs[0])?;
    conv.pool.write_jsonl(&mut w)?;
    w.flush()?;
    let mut w = create(&outputs[1])?;
    conv.questions.write_jsonl(&mut w)?;
    w.flush()?;
    write_json_file(&outputs[2], &conv.report)?;

    let mut m = RunManifest::new("convert", args);
    m.add_input("input", &a.input)?;
    m.params = serde_json::json!({ "kind": a.kind.to_string() });
    for p in &outputs {
        finish(m.clone(), started, p)?;
    }
    Ok(())
}

fn cmd_stats(a: &StatsArgs, force: bool, args: serde_json::Value) -> Result<()> {
    let started = Instant::now();
    if let Some(out) = &a.out {
        ensure_writable(out, force)?;
    }
    let pool = read_pool(&a.candidates)?;
    let questions = read_questions(&a.questions, Some(&pool))?;
    let tok = make_tokenizer(&a.tok)?;
    let stats = converter::compute_stats(&pool, &questions, &tok)?;
    emit(&stats, stats.to_table(), a.json)?;
    if let Some(out) = &a.out {
        write_json_file(out, &stats)?;
        let mut m = RunManifest::new("stats", args);
        m.add_input("candidates", &a.candidates)?;
        m.add_input("questions", &a.questions)?;
        m.vocab_fingerprint = tok.spec().vocab_fingerprint;
        finish(m, started, out)?;
    }
    Ok(())
}

fn cmd_index(a: &IndexArgs, force: bool, args: serde_json::Value) -> Result<()> {
    let started = Instant::now();
    ensure_writable(&a.out, force)?;
    let pool = read_pool(&a.candidates)?;
    let tok = make_tokenizer(&a.tok)?;
    let vocab_fingerprint = tok.spec().vocab_fingerprint;
    let retriever = Bm25Retriever::build(&pool, tok, a.bm25.params(), !a.no_context)?;
    log::info!(
        "indexed {} documents, {} terms, avgdl {:.2}",
        retriever.index.n_docs(),
        retriever.index.n_terms(),
        retriever.index.avgdl()
    );
    SavedIndex::new(&retriever, &manifest::sha256_file(&a.candidates)?).write(&a.out)?;
    let mut m = RunManifest::new("index", args);
    m.add_input("candidates", &a.candidates)?;
    m.vocab_fingerprint = vocab_fingerprint;
    m.params = serde_json::to_value(a.bm25.params())?;
    finish(m, started, &a.out)
}

fn model_config(a: &TrainArgs, vocab_size: usize) -> ModelConfig {
    let mut c = ModelConfig::new(vocab_size);
    c.d_tok = a.d_tok.unwrap_or(c.d_tok);
    c.d_hidden = a.d_hidden.unwrap_or(c.d_hidden);
    c.d_out = a.d_out.unwrap_or(c.d_out);
    c.scale = a.scale.unwrap_or(c.scale);
    c.init_scale = a.init_scale.unwrap_or(c.init_scale);
    c.output_init_scale = a.output_init_scale.unwrap_or(c.output_init_scale);
    c
}

fn cmd_train(a: &TrainArgs, force: bool, args: serde_json::Value) -> Result<()> {
    let started = Instant::now();
    ensure_writable(&a.out, force)?;
    if a.tok.tokenizer != Regime::Wpm {
        bail!("training needs --tokenizer wpm and a vocabulary");
    }
    let pool = read_pool(&a.candidates)?;
    let questions = read_questions(&a.questions, Some(&pool))?;
    let tok = make_tokenizer(&a.tok)?;
    let vocab_size = tok.vocab_size().expect("wpm tokenizer has a vocabulary");

    let mut tc = TrainConfig::preset(a.preset, a.seed);
    tc.batch_size = a.batch_size.unwrap_or(tc.batch_size);
    tc.epochs = a.epochs.unwrap_or(tc.epochs);
    let constant_lr = tc.lr_final == tc.lr_initial;
    tc.lr_initial = a.lr_initial.unwrap_or(tc.lr_initial);
    tc.lr_final = a
        .lr_final
        .unwrap_or(if constant_lr { tc.lr_initial } else { tc.lr_final });
    tc.use_context = !a.no_context;

    let pairs = converter::training_pairs(&pool, &questions);
    let (train_pairs, valid_pairs) = dense::split_validation(&pairs, a.valid_fraction, a.seed);
    let train_ids = dense::encode_pairs(&train_pairs, &tok)?;
    let valid_ids = dense::encode_pairs(&valid_pairs, &tok)?;
    log::info!(
        "{} training pairs, {} validation pairs, batch {}",
        train_ids.len(),
        valid_ids.len(),
        tc.batch_size
    );

    let config = model_config(a, vocab_size);
    let mut model = EncoderModel::new(config.clone(), a.seed)?;
    let report = dense::train(&mut model, &train_ids, &tc)?;
    let valid_loss = validation_loss(&model, &valid_ids, tc.batch_size, tc.use_context)?;
    if let Some(l) = valid_loss {
        log::info!("validation loss {l:.6}");
    }
    let ck = Checkpoint {
        model,
        tokenizer: tok.spec(),
        use_context: tc.use_context,
    };
    ck.save(&a.out)?;

    let mut m = RunManifest::new("train", args);
    m.add_input("candidates", &a.candidates)?;
    m.add_input("questions", &a.questions)?;
    m.vocab_fingerprint = tok.spec().vocab_fingerprint;
    m.seed = Some(a.seed);
    m.params = serde_json::json!({
        "model": config,
        "train": tc,
        "effective_batch_size": tc.batch_size,
        "steps": report.steps,
        "epoch_losses": report.epoch_losses,
        "validation_loss": valid_loss,
        "checkpoint_fingerprint": ck.fingerprint(),
    });
    finish(m, started, &a.out)
}

fn validation_loss(
    model: &EncoderModel,
    pairs: &[dense::EncodedPair],
    batch_size: usize,
    use_context: bool,
) -> Result<Option<f64>> {
    let mut total = 0.0;
    let mut n = 0;
    for chunk in pairs.chunks(batch_size) {
        if chunk.len() < 2 {
            continue;
        }
        let batch = dense::TrainingBatch {
            questions: chunk.iter().map(|p| p.question.clone()).collect(),
            answers: chunk.iter().map(|p| p.answer.clone()).collect(),
            contexts: chunk.iter().map(|p| p.context.clone()).collect(),
            use_context,
        };
        total += model.batch_loss(&batch)?.loss;
        n += 1;
    }
    Ok((n > 0).then(|| total / n as f64))
}

fn cmd_embed(a: &EmbedArgs, force: bool, args: serde_json::Value) -> Result<()> {
    let started = Instant::now();
    ensure_writable(&a.out, force)?;
    let pool = read_pool(&a.candidates)?;
    let ck = Checkpoint::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let tok = tokenizer_for_spec(&ck.tokenizer, a.vocab.as_deref())?;
    let use_context = ck.use_context && !a.no_context;
    let tokens = dense::pool_tokens(&pool, &tok)?;
    let matrix = dense::embed_pool(&ck.model, &tokens, use_context)?;
    let header = EmbeddingHeader {
        dim: matrix.dim(),
        count: matrix.len(),
        model_fingerprint: ck.fingerprint(),
        pool_fingerprint: manifest::sha256_file(&a.candidates)?,
        use_context,
    };
    dense::write_embeddings(create(&a.out)?, &header, &matrix)?;
    let mut m = RunManifest::new("embed", args);
    m.add_input("candidates", &a.candidates)?;
    m.add_input("model", &a.model)?;
    m.vocab_fingerprint = ck.tokenizer.vocab_fingerprint.clone();
    finish(m, started, &a.out)
}

/// Scores every candidate for a question.
type Scorer = Box<dyn Fn(&str) -> Result<Vec<f64>> + Sync>;

struct Prepared {
    scorer: Scorer,
    name: String,
    tokenizer: String,
    vocab_fingerprint: Option<String>,
}

fn prepare_bm25(
    pool: &CandidatePool,
    tok: &TokenizerArgs,
    bm25: &Bm25Args,
    index: Option<&Path>,
    candidates: &Path,
    use_context: bool,
) -> Result<Prepared> {
    let retriever = match index {
        Some(path) => {
            let saved = SavedIndex::read(path).with_context(|| format!("loading {}", path.display()))?;
            if saved.pool_fingerprint != manifest::sha256_file(candidates)? {
                bail!("index {} was built from a different candidate pool", path.display());
            }
            if saved.index.use_context() != use_context {
                bail!(
                    "index {} was built with use_context={}, but use_context={} was requested",
                    path.display(),
                    saved.index.use_context(),
                    use_context
                );
            }
            let spec = saved.index.tokenizer().clone();
            Bm25Retriever::from_saved(saved, tokenizer_for_spec(&spec, tok.vocab.as_deref())?)?
        }
        None => Bm25Retriever::build(pool, make_tokenizer(tok)?, bm25.params(), use_context)?,
    };
    let regime = retriever.tokenizer.regime().to_string();
    let vocab_fingerprint = retriever.tokenizer.spec().vocab_fingerprint;
    Ok(Prepared {
        name: format!("bm25_{regime}{}", if use_context { "" } else { "_nocontext" }),
        tokenizer: regime,
        vocab_fingerprint,
        scorer: Box::new(move |q| Ok(retriever.scores(q))),
    })
}

fn prepare_dense(
    pool: &CandidatePool,
    model: Option<&Path>,
    vocab: Option<&Path>,
    embeddings: Option<&Path>,
    candidates: &Path,
    use_context: bool,
) -> Result<Prepared> {
    let model = model.ok_or_else(|| anyhow!("--model is required for the dense system"))?;
    let ck = Checkpoint::load(model).with_context(|| format!("loading {}", model.display()))?;
    let tok = tokenizer_for_spec(&ck.tokenizer, vocab)?;
    let retriever = match embeddings {
        Some(path) => {
            let (header, matrix) = dense::read_embeddings(open(path)?)
                .with_context(|| format!("loading {}", path.display()))?;
            if header.model_fingerprint != ck.fingerprint() {
                bail!("embeddings {} were produced by a different model", path.display());
            }
            if header.pool_fingerprint != manifest::sha256_file(candidates)? {
                bail!("embeddings {} were produced from a different pool", path.display());
            }
            if header.use_context != use_context {
                bail!("embeddings {} have use_context={}", path.display(), header.use_context);
            }
            DenseRetriever {
                model: ck.model,
                tokenizer: tok,
                pool: matrix,
            }
        }
        None => DenseRetriever::build(ck.model, tok, pool, use_context)?,
    };
    let vocab_fingerprint = retriever.tokenizer.spec().vocab_fingerprint;
    Ok(Prepared {
        name: format!("dense{}", if use_context { "" } else { "_nocontext" }),
        tokenizer: "wpm".into(),
        vocab_fingerprint,
        scorer: Box::new(move |q| Ok(retriever.scores(q)?)),
    })
}

fn cmd_retrieve(a: &RetrieveArgs, force: bool, args: serde_json::Value) -> Result<()> {
    let started = Instant::now();
    ensure_writable(&a.out, force)?;
    let pool = read_pool(&a.candidates)?;
    let questions = read_questions(&a.questions, Some(&pool))?;
    let use_context = !a.no_context;
    let prepared = match a.system {
        System::Bm25 => prepare_bm25(&pool, &a.tok, &a.bm25, a.index.as_deref(), &a.candidates, use_context)?,
        System::Dense => prepare_dense(
            &pool,
            a.model.as_deref(),
            a.tok.vocab.as_deref(),
            a.embeddings.as_deref(),
            &a.candidates,
            use_context,
        )?,
    };
    if a.k == Some(0) {
        bail!("--k must be at least 1");
    }
    let shape = RunShape {
        k: a.k.or(a.ranks_only.then_some(10)),
        gold_ranks: a.ranks_only,
    };
    let name = a.system_name.clone().unwrap_or(prepared.name.clone());
    let scorer = &prepared.scorer;
    let run = build_run(&name, &questions, shape, |q| scorer(&q.text))?;
    let mut w = create(&a.out)?;
    run.write_jsonl(&mut w)?;
    w.flush()?;

    let mut m = RunManifest::new("retrieve", args);
    m.add_input("candidates", &a.candidates)?;
    m.add_input("questions", &a.questions)?;
    for (role, p) in [("index", &a.index), ("model", &a.model), ("embeddings", &a.embeddings)] {
        if let Some(p) = p {
            m.add_input(role, p)?;
        }
    }
    m.vocab_fingerprint = prepared.vocab_fingerprint;
    if a.system == System::Bm25 {
        m.params = serde_json::to_value(a.bm25.params())?;
    }
    finish(m, started, &a.out)
}

fn cmd_eval(a: &EvalArgs, force: bool, args: serde_json::Value) -> Result<()> {
    let started = Instant::now();
    if let Some(out) = &a.out {
        ensure_writable(out, force)?;
    }
    let pool = a.candidates.as_deref().map(read_pool).transpose()?;
    let questions = read_questions(&a.gold, pool.as_ref())?;
    let run = read_run(&a.run)?;
    let meta = ReportMeta {
        system: run.system_name.clone(),
        dataset: a.dataset.clone(),
        tokenizer: None,
        use_context: None,
    };
    let report = eval::evaluate(&run, &questions, meta)?;
    emit(&report, report.to_table(), a.json)?;
    if let Some(out) = &a.out {
        write_json_file(out, &report)?;
        let mut m = RunManifest::new("eval", args);
        m.add_input("run", &a.run)?;
        m.add_input("gold", &a.gold)?;
        finish(m, started, out)?;
    }
    Ok(())
}

fn cmd_compare(a: &CompareArgs, force: bool, args: serde_json::Value) -> Result<()> {
    let started = Instant::now();
    if let Some(out) = &a.out {
        ensure_writable(out, force)?;
    }
    let ra = read_run(&a.a)?;
    let rb = read_run(&a.b)?;
    let questions = a.gold.as_deref().map(|p| read_questions(p, None)).transpose()?;
    let report = eval::disagreement(&ra, &rb, questions.as_ref())?;
    emit(&report, report.to_table(), a.json)?;
    if let Some(out) = &a.out {
        write_json_file(out, &report)?;
        let mut m = RunManifest::new("compare", args);
        m.add_input("a", &a.a)?;
        m.add_input("b", &a.b)?;
        if let Some(g) = &a.gold {
            m.add_input("gold", g)?;
        }
        finish(m, started, out)?;
    }
    Ok(())
}

fn cmd_ablate(a: &AblateArgs, force: bool, args: serde_json::Value) -> Result<()> {
    let started = Instant::now();
    if let Some(out) = &a.out {
        ensure_writable(out, force)?;
    }
    let pool = read_pool(&a.candidates)?;
    let questions = read_questions(&a.questions, Some(&pool))?;
    let shape = RunShape {
        k: Some(1),
        gold_ranks: true,
    };
    let mut reports = Vec::with_capacity(2);
    let mut vocab_fingerprint = None;
    for use_context in [true, false] {
        let prepared = match a.system {
            System::Bm25 => prepare_bm25(&pool, &a.tok, &a.bm25, None, &a.candidates, use_context)?,
            System::Dense => prepare_dense(
                &pool,
                a.model.as_deref(),
                a.tok.vocab.as_deref(),
                None,
                &a.candidates,
                use_context,
            )?,
        };
        let scorer = &prepared.scorer;
        let run = build_run(&prepared.name, &questions, shape, |q| scorer(&q.text))?;
        let meta = ReportMeta {
            system: format!("{:?}", a.system).to_lowercase(),
            dataset: a.dataset.clone(),
            tokenizer: Some(prepared.tokenizer.clone()),
            use_context: Some(use_context),
        };
        reports.push(eval::evaluate(&run, &questions, meta)?);
        vocab_fingerprint = prepared.vocab_fingerprint;
    }
    let delta = eval::ablation_compare(&reports[0], &reports[1])?;
    emit(&delta, delta.to_table(), a.json)?;
    if let Some(out) = &a.out {
        write_json_file(out, &delta)?;
        let mut m = RunManifest::new("ablate", args);
        m.add_input("candidates", &a.candidates)?;
        m.add_input("questions", &a.questions)?;
        if let Some(p) = &a.model {
            m.add_input("model", p)?;
        }
        m.vocab_fingerprint = vocab_fingerprint;
        finish(m, started, out)?;
    }
    Ok(())
}
