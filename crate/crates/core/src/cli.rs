//! Command-line pipelines. Each subcommand runs one stage and writes a
//! `<artifact>.manifest.json` beside its main output.

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{self, CorpusError, Dimension, SentenceRecord, Split, DEFAULT_MAX_CHARS};
use crate::eval::{self, EvalError, EvalOptions};
use crate::model::{self, Autoencoder, ModelConfig, ModelError, Multiplier};
use crate::synth::{self, GrammarOptions};
use crate::tokenizer::{build_vocab, Tokenizer, TokenizerError, Vocab};
use crate::train::{self, TargetPolicy, TrainConfig, TrainError, TrainOutputs};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid config file: {0}")]
    Config(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Model(ModelError::InvalidConfig(_)) => EXIT_USAGE,
            CliError::Train(TrainError::InvalidConfig(_)) => EXIT_USAGE,
            CliError::Train(TrainError::Divergence { .. }) => EXIT_DIVERGENCE,
            _ => EXIT_IO,
        }
    }
}

type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Parser, Serialize)]
#[command(name = "sbae", version, about = "Sentence bottleneck autoencoder")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Split raw documents into a JSONL sentence corpus.
    Ingest(IngestArgs),
    /// Build a WordPiece vocabulary from a corpus.
    Vocab(VocabArgs),
    /// Corpus statistics and length histograms.
    Stats(StatsArgs),
    /// Assign train/test splits.
    Split(SplitArgs),
    /// Train an autoencoder.
    Train(TrainArgs),
    /// Reconstruction accuracy on the test split.
    Eval(EvalArgs),
    /// Reconstruct one sentence and print the diff.
    Reconstruct(ReconstructArgs),
    /// Parameter counts by model part.
    Params(ParamsArgs),
    /// Write a synthetic templated-grammar document set.
    Synth(SynthArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_CHARS)]
    pub max_chars: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct VocabArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 8000)]
    pub size: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct StatsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, env = "SBAE_VOCAB")]
    pub vocab: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Directory for `hist_{chars,words,tokens}.csv`.
    #[arg(long)]
    pub hist_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub bin_width: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub n_test: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Model and training overrides shared by `train` and `params`.
#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFlags {
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub ell: Option<usize>,
    /// Positive integer or `inf`.
    #[arg(long)]
    pub m: Option<Multiplier>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub max_seq_len: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, env = "SBAE_VOCAB")]
    pub vocab: PathBuf,
    #[arg(long, env = "SBAE_CKPT")]
    pub ckpt: PathBuf,
    /// JSON file with `model` and `train` sections; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub micro_batch: Option<usize>,
    #[arg(long)]
    pub accum: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Also predict and score `[CLS]` and `[SEP]`.
    #[arg(long)]
    pub all_tokens: bool,
    /// Metrics CSV; defaults to `<ckpt>.log.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, env = "SBAE_VOCAB")]
    pub vocab: PathBuf,
    #[arg(long, env = "SBAE_CKPT")]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long)]
    pub by_length: Option<PathBuf>,
    #[arg(long)]
    pub svg: Option<PathBuf>,
    #[arg(long)]
    pub diffs: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub bin_width: usize,
    #[arg(long, default_value_t = 10)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub all_tokens: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ReconstructArgs {
    #[arg(long, env = "SBAE_VOCAB")]
    pub vocab: PathBuf,
    #[arg(long, env = "SBAE_CKPT")]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub all_tokens: bool,
    pub sentence: String,
}

#[derive(Debug, Args, Serialize)]
pub struct ParamsArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long, default_value_t = 30522)]
    pub vocab_size: usize,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 11000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// 0 draws slot fillers uniformly.
    #[arg(long, default_value_t = 1.0)]
    pub zipf: f64,
}

/// Sections of a `--config` file; every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub model: ModelFlags,
    #[serde(default)]
    pub train: TrainSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub micro_batch: Option<usize>,
    pub accum_steps: Option<usize>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub checkpoint_every: Option<u64>,
    pub max_steps: Option<u64>,
    pub targets: Option<TargetPolicy>,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub flags: serde_json::Value,
    pub seed: Option<u64>,
    pub config_digest: Option<String>,
    pub corpus_digest: Option<String>,
    pub started: String,
    pub finished: String,
    pub artifacts: Vec<PathBuf>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read_file(path)?))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| CliError::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Replaces `path` with `bytes` via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let fail = |source| CliError::File {
        path: path.to_path_buf(),
        source,
    };
    let result = fs::write(&tmp, bytes).and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(fail(e));
    }
    Ok(())
}

pub fn manifest_path(artifact: &Path) -> PathBuf {
    let mut p = artifact.as_os_str().to_owned();
    p.push(".manifest.json");
    PathBuf::from(p)
}

struct Run {
    command: &'static str,
    flags: serde_json::Value,
    started: String,
    seed: Option<u64>,
    config_digest: Option<String>,
    corpus_digest: Option<String>,
}

impl Run {
    fn start(command: &'static str, args: &impl Serialize) -> Self {
        Self {
            command,
            flags: serde_json::to_value(args).unwrap_or(serde_json::Value::Null),
            started: now(),
            seed: None,
            config_digest: None,
            corpus_digest: None,
        }
    }

    fn finish(self, primary: &Path, artifacts: Vec<PathBuf>) -> Result<()> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            flags: self.flags,
            seed: self.seed,
            config_digest: self.config_digest,
            corpus_digest: self.corpus_digest,
            started: self.started,
            finished: now(),
            artifacts,
        };
        let mut json = serde_json::to_vec_pretty(&manifest)?;
        json.push(b'\n');
        write_atomic(&manifest_path(primary), &json)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn load_records(path: &Path) -> Result<Vec<SentenceRecord>> {
    let f = fs::File::open(path).map_err(|source| CliError::File {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(corpus::read_jsonl(BufReader::new(f))?)
}

fn records_jsonl(records: &[SentenceRecord]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    corpus::write_jsonl(records, &mut buf)?;
    Ok(buf)
}

fn load_tokenizer(path: &Path) -> Result<Tokenizer> {
    if !path.exists() {
        return Err(CliError::File {
            path: path.to_path_buf(),
            source: io::Error::new(io::ErrorKind::NotFound, "vocabulary not found"),
        });
    }
    Ok(Tokenizer::new(Vocab::load(path)?))
}

fn load_model(path: &Path) -> Result<Autoencoder<f32>> {
    if !path.exists() {
        return Err(CliError::File {
            path: path.to_path_buf(),
            source: io::Error::new(io::ErrorKind::NotFound, "checkpoint not found"),
        });
    }
    Ok(model::load_checkpoint(path)?)
}

/// Records of `split`, or all records when none carry a split yet.
fn select_split(records: Vec<SentenceRecord>, split: Split) -> Vec<SentenceRecord> {
    if records.iter().all(|r| r.split == Split::Unassigned) {
        return records;
    }
    records.into_iter().filter(|r| r.split == split).collect()
}

fn cmd_ingest(args: &IngestArgs) -> Result<String> {
    let mut run = Run::start("ingest", args);
    let mut records = Vec::new();
    let mut doc_id = 0u64;
    let mut hasher = Sha256::new();
    for path in &args.input {
        let bytes = read_file(path)?;
        hasher.update(&bytes);
        let text = String::from_utf8(bytes).map_err(|e| CliError::File {
            path: path.clone(),
            source: io::Error::new(io::ErrorKind::InvalidData, e),
        })?;
        for doc in corpus::split_documents(&text) {
            records.extend(corpus::split_sentences(&doc, doc_id));
            doc_id += 1;
        }
    }
    let total = records.len();
    let kept = corpus::filter_sentences(records, args.max_chars);
    write_atomic(&args.output, &records_jsonl(&kept)?)?;
    run.corpus_digest = Some(hex::encode(hasher.finalize()));
    run.finish(&args.output, vec![args.output.clone()])?;
    Ok(format!(
        "kept {} sentences, dropped {} longer than {} chars, from {doc_id} documents",
        kept.len(),
        total - kept.len(),
        args.max_chars
    ))
}

fn cmd_vocab(args: &VocabArgs) -> Result<String> {
    let mut run = Run::start("vocab", args);
    run.corpus_digest = Some(file_digest(&args.corpus)?);
    let records = load_records(&args.corpus)?;
    let vocab = build_vocab(records.iter().map(|r| r.text.as_str()), args.size)?;
    let mut buf = Vec::new();
    vocab.write_to(&mut buf)?;
    write_atomic(&args.output, &buf)?;
    run.finish(&args.output, vec![args.output.clone()])?;
    Ok(format!("vocabulary of {} tokens", vocab.len()))
}

fn cmd_stats(args: &StatsArgs) -> Result<String> {
    if args.bin_width == 0 {
        return Err(CliError::Usage("--bin-width must be positive".into()));
    }
    let mut run = Run::start("stats", args);
    run.corpus_digest = Some(file_digest(&args.corpus)?);
    let tokenizer = load_tokenizer(&args.vocab)?;
    let mut records = load_records(&args.corpus)?;
    corpus::fill_token_lengths(&mut records, &tokenizer);
    let stats = corpus::compute_stats(&records, &tokenizer)?;
    let mut json = serde_json::to_vec_pretty(&stats)?;
    json.push(b'\n');
    write_atomic(&args.output, &json)?;
    let mut artifacts = vec![args.output.clone()];
    if let Some(dir) = &args.hist_dir {
        fs::create_dir_all(dir).map_err(|source| CliError::File {
            path: dir.clone(),
            source,
        })?;
        for dim in Dimension::ALL {
            let hist = corpus::length_histogram(&records, dim, args.bin_width);
            let path = dir.join(format!("hist_{}.csv", dim.name()));
            write_atomic(&path, corpus::histogram_csv(&hist).as_bytes())?;
            artifacts.push(path);
        }
    }
    run.finish(&args.output, artifacts)?;
    Ok(format!(
        "{} sentences, {} words, {} tokens",
        stats.n_sentences, stats.n_words, stats.n_tokens
    ))
}

fn cmd_split(args: &SplitArgs) -> Result<String> {
    let mut run = Run::start("split", args);
    run.seed = Some(args.seed);
    run.corpus_digest = Some(file_digest(&args.corpus)?);
    let records = corpus::assign_splits(load_records(&args.corpus)?, args.n_test, args.seed)?;
    write_atomic(&args.output, &records_jsonl(&records)?)?;
    run.finish(&args.output, vec![args.output.clone()])?;
    Ok(format!("{} train, {} test", records.len() - args.n_test, args.n_test))
}

/// Merges defaults, the optional config file and command-line flags.
pub fn resolve_train_config(args: &TrainArgs, vocab_size: usize) -> Result<(ModelConfig, TrainConfig)> {
    let file: ConfigFile = match &args.config {
        Some(path) => serde_json::from_slice(&read_file(path)?)?,
        None => ConfigFile::default(),
    };
    let fm = &file.model;
    let d = args.model.d.or(fm.d).unwrap_or(64);
    let ell = args.model.ell.or(fm.ell).unwrap_or(1);
    let m = args.model.m.or(fm.m).unwrap_or(Multiplier::Inf);
    let mut mc = ModelConfig::new(d, ell, m, vocab_size);
    if let Some(h) = args.model.heads.or(fm.heads) {
        mc.n_heads = h;
    }
    if let Some(n) = args.model.max_seq_len.or(fm.max_seq_len) {
        mc.max_seq_len = n;
    }
    if let Some(p) = args.model.dropout.or(fm.dropout) {
        mc.dropout_p = p;
    }
    mc.validate()
        .map_err(|e| CliError::Usage(format!("{e} (check --d, --ell, --heads, --max-seq-len, --dropout)")))?;

    let ft = &file.train;
    let defaults = TrainConfig::default();
    let tc = TrainConfig {
        micro_batch: args.micro_batch.or(ft.micro_batch).unwrap_or(defaults.micro_batch),
        accum_steps: args.accum.or(ft.accum_steps).unwrap_or(defaults.accum_steps),
        lr: args.lr.or(ft.lr),
        epochs: args.epochs.or(ft.epochs).unwrap_or(defaults.epochs),
        seed: args.seed.or(ft.seed).unwrap_or(defaults.seed),
        checkpoint_every: args.checkpoint_every.or(ft.checkpoint_every).unwrap_or(0),
        max_steps: args.max_steps.or(ft.max_steps),
        targets: if args.all_tokens {
            TargetPolicy::AllTokens
        } else {
            ft.targets.unwrap_or_default()
        },
    };
    tc.validate()
        .map_err(|e| CliError::Usage(format!("{e} (check --micro-batch, --accum, --lr)")))?;
    Ok((mc, tc))
}

#[derive(Serialize)]
struct MergedConfig<'a> {
    model: &'a ModelConfig,
    train: &'a TrainConfig,
}

fn cmd_train(args: &TrainArgs) -> Result<String> {
    let mut run = Run::start("train", args);
    let tokenizer = load_tokenizer(&args.vocab)?;
    let (mc, tc) = resolve_train_config(args, tokenizer.vocab().len())?;
    run.seed = Some(tc.seed);
    run.config_digest = Some(sha256_hex(&serde_json::to_vec(&MergedConfig {
        model: &mc,
        train: &tc,
    })?));
    run.corpus_digest = Some(file_digest(&args.corpus)?);
    let records = select_split(load_records(&args.corpus)?, Split::Train);

    let mut model = Autoencoder::<f32>::init(mc, tc.seed)?;
    let log_path = args.log.clone().unwrap_or_else(|| {
        let mut p = args.ckpt.as_os_str().to_owned();
        p.push(".log.csv");
        PathBuf::from(p)
    });
    let log_file = fs::File::create(&log_path).map_err(|source| CliError::File {
        path: log_path.clone(),
        source,
    })?;
    let mut log = BufWriter::new(log_file);
    let summary = train::train(
        &mut model,
        &records,
        &tokenizer,
        &tc,
        TrainOutputs {
            checkpoint: Some(args.ckpt.clone()),
            log: Some(&mut log),
        },
    )?;
    drop(log);
    run.finish(&args.ckpt, vec![args.ckpt.clone(), log_path])?;
    Ok(format!(
        "{} updates over {} sentences ({} truncated), final loss {}",
        summary.steps,
        summary.sentences_seen,
        summary.truncated_sentences,
        summary
            .final_loss
            .map_or_else(|| "n/a".to_string(), |l| format!("{l:.4}"))
    ))
}

fn cmd_eval(args: &EvalArgs) -> Result<String> {
    let mut run = Run::start("eval", args);
    run.seed = Some(args.seed);
    run.corpus_digest = Some(file_digest(&args.corpus)?);
    let tokenizer = load_tokenizer(&args.vocab)?;
    let model = load_model(&args.ckpt)?;
    let records = select_split(load_records(&args.corpus)?, Split::Test);
    let options = EvalOptions {
        bin_width: args.bin_width,
        n_samples: args.samples,
        seed: args.seed,
        policy: if args.all_tokens {
            TargetPolicy::AllTokens
        } else {
            TargetPolicy::ContentAndSep
        },
        ..EvalOptions::default()
    };
    let report = eval::evaluate(&model, &records, &tokenizer, &options)?;
    let mut json = serde_json::to_vec_pretty(&report)?;
    json.push(b'\n');
    write_atomic(&args.report, &json)?;
    let mut artifacts = vec![args.report.clone()];
    if let Some(p) = &args.by_length {
        write_atomic(p, eval::accuracy_by_length_csv(&report).as_bytes())?;
        artifacts.push(p.clone());
    }
    if let Some(p) = &args.svg {
        write_atomic(p, eval::accuracy_by_length_svg(&report).as_bytes())?;
        artifacts.push(p.clone());
    }
    if let Some(p) = &args.diffs {
        let text: String = report.samples.iter().map(|d| eval::render_diff(d) + "\n").collect();
        write_atomic(p, text.as_bytes())?;
        artifacts.push(p.clone());
    }
    run.finish(&args.report, artifacts)?;
    Ok(format!(
        "mean accuracy {:.4}, weighted accuracy {:.4} over {} sentences",
        report.mean_acc, report.weighted_acc, report.n_sentences
    ))
}

fn cmd_reconstruct(args: &ReconstructArgs) -> Result<String> {
    let tokenizer = load_tokenizer(&args.vocab)?;
    let model = load_model(&args.ckpt)?;
    let mut seq = tokenizer.tokenize(&args.sentence);
    seq.truncate(model.config().max_seq_len);
    let pred = model.reconstruct(&seq.ids)?;
    let policy = if args.all_tokens {
        TargetPolicy::AllTokens
    } else {
        TargetPolicy::ContentAndSep
    };
    let r = policy.eval_range(seq.len());
    let diff = eval::ReconDiff::new(&tokenizer, &seq.ids[r.clone()], &pred[r])?;
    Ok(eval::render_diff(&diff).trim_end().to_string())
}

fn cmd_params(args: &ParamsArgs) -> Result<String> {
    let m = &args.model;
    let mut mc = ModelConfig::new(
        m.d.unwrap_or(768),
        m.ell.unwrap_or(1),
        m.m.unwrap_or(Multiplier::Inf),
        args.vocab_size,
    );
    if let Some(h) = m.heads {
        mc.n_heads = h;
    }
    if let Some(n) = m.max_seq_len {
        mc.max_seq_len = n;
    }
    mc.validate()
        .map_err(|e| CliError::Usage(format!("{e} (check --d, --ell, --heads)")))?;
    let report = model::count_params(&mc);
    if args.json {
        Ok(serde_json::to_string_pretty(&report)?)
    } else {
        Ok(report.to_string().trim_end().to_string())
    }
}

fn cmd_synth(args: &SynthArgs) -> Result<String> {
    let mut run = Run::start("synth", args);
    run.seed = Some(args.seed);
    let opts = GrammarOptions {
        zipf_exponent: args.zipf,
        ..GrammarOptions::default()
    };
    // one sentence per document, so ingestion needs no sentence splitting
    let text: String = synth::generate(args.n, args.seed, &opts)
        .into_iter()
        .map(|s| s + "\n\n")
        .collect();
    write_atomic(&args.output, text.as_bytes())?;
    run.finish(&args.output, vec![args.output.clone()])?;
    Ok(format!("{} sentences", args.n))
}

pub fn execute(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Vocab(a) => cmd_vocab(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Params(a) => cmd_params(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{e}")
            } else {
                write!(out, "{e}")
            };
            return code;
        }
    };
    match execute(&cli) {
        Ok(msg) => {
            let _ = writeln!(out, "{msg}");
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
