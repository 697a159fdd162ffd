//! The operator surface behind the `spamdetect` binary: prepare corpora,
//! induce a vocabulary, train, evaluate, and classify.
//!
//! Conventions shared by every verb: machine-readable output goes to
//! standard output, diagnostics to standard error, exit code 0 means the
//! command completed. Settings resolve as built-in defaults, then the
//! `--preset` geometry, then the `--config` JSON file, then individual
//! flags, so a flag always wins.

use std::fs;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::corpus::{
    clean_text, load_jsonl, load_mail_dirs, load_sms_collection, save_jsonl, split_train_eval,
    Label, LabeledMessage, LoadReport, MailFormat,
};
use crate::error::{Error, Result};
use crate::metrics::{report, ClassReport};
use crate::model::{classify, ModelConfig};
use crate::tokenizer::{build_vocab, load_vocab, save_vocab, Vocab};
use crate::trainer::{
    evaluate, load_checkpoint, save_checkpoint, train, Checkpoint, TrainConfig,
};

/// Name of the held-out split the train command leaves next to the
/// checkpoint for later `eval` runs.
pub const EVAL_SPLIT_FILE: &str = "eval_split.jsonl";

#[derive(Debug, Parser)]
#[command(
    name = "spamdetect",
    about = "Train and run a from-scratch transformer spam classifier",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean a raw corpus into the JSON-lines intermediate format
    Prepare(PrepareArgs),
    /// Induce a WordPiece vocabulary from prepared data
    BuildVocab(BuildVocabArgs),
    /// Train a classifier and write a checkpoint directory
    Train(TrainArgs),
    /// Score predictions or a checkpoint against gold labels
    Eval(EvalArgs),
    /// Label one text or a stream of texts
    Classify(ClassifyArgs),
}

/// Dispatches a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(args) => cmd_prepare(&args),
        Command::BuildVocab(args) => cmd_build_vocab(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Classify(args) => cmd_classify(&args),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CorpusFormat {
    /// Tab-separated `label<TAB>text` lines
    Sms,
    /// Directories of RFC-822 email files
    Mail,
    /// Directories of plain-text files, first line the subject
    MailPlain,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Layout of the raw corpus
    #[arg(long, value_enum)]
    pub format: CorpusFormat,
    /// Input file (sms format only)
    #[arg(long = "in", value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Directory of spam messages (mail formats only)
    #[arg(long, value_name = "DIR")]
    pub spam_dir: Option<PathBuf>,
    /// Directory of ham messages (mail formats only)
    #[arg(long, value_name = "DIR")]
    pub ham_dir: Option<PathBuf>,
    /// Output JSON-lines file
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

/// Loads and cleans the corpus named by `args` without writing anything.
pub fn prepare_messages(args: &PrepareArgs) -> Result<(Vec<LabeledMessage>, LoadReport)> {
    match args.format {
        CorpusFormat::Sms => {
            if args.spam_dir.is_some() || args.ham_dir.is_some() {
                return Err(Error::Input(
                    "--spam-dir/--ham-dir do not apply to --format sms; use --in".into(),
                ));
            }
            let input = args
                .input
                .as_deref()
                .ok_or_else(|| Error::Input("--format sms requires --in <FILE>".into()))?;
            load_sms_collection(input)
        }
        CorpusFormat::Mail | CorpusFormat::MailPlain => {
            if args.input.is_some() {
                return Err(Error::Input(
                    "--in does not apply to mail formats; use --spam-dir and --ham-dir".into(),
                ));
            }
            let (spam, ham) = match (args.spam_dir.as_deref(), args.ham_dir.as_deref()) {
                (Some(s), Some(h)) => (s, h),
                _ => {
                    return Err(Error::Input(
                        "mail formats require both --spam-dir and --ham-dir".into(),
                    ))
                }
            };
            let mail_format = match args.format {
                CorpusFormat::Mail => MailFormat::RawEmail,
                _ => MailFormat::PlainText,
            };
            load_mail_dirs(spam, ham, mail_format)
        }
    }
}

/// Writes `path` by staging to a hidden sibling and renaming, so failures
/// never leave a partial file at the target.
fn write_file_atomically(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    let staging = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    let result = write(&staging)
        .and_then(|()| fs::rename(&staging, path).map_err(|e| Error::io(path, e)));
    if result.is_err() {
        let _ = fs::remove_file(&staging);
    }
    result
}

pub fn cmd_prepare(args: &PrepareArgs) -> Result<()> {
    let (messages, load) = prepare_messages(args)?;
    write_file_atomically(&args.out, |staging| save_jsonl(&messages, staging))?;
    if load.skipped > 0 {
        eprintln!("skipped {} unreadable messages", load.skipped);
    }
    println!("{} total / {} spam / {} ham", load.total, load.spam, load.ham);
    Ok(())
}

#[derive(Debug, Args)]
pub struct BuildVocabArgs {
    /// Prepared JSON-lines file
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Vocabulary size including the four reserved tokens
    #[arg(long, default_value_t = 1000)]
    pub size: usize,
    /// Output vocabulary file, one token per line
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

pub fn cmd_build_vocab(args: &BuildVocabArgs) -> Result<()> {
    let messages = load_jsonl(&args.data)?;
    let texts: Vec<&str> = messages.iter().map(|m| m.text.as_str()).collect();
    let vocab = build_vocab(&texts, args.size)?;
    write_file_atomically(&args.out, |staging| save_vocab(&vocab, staging))?;
    eprintln!("{} tokens -> {}", vocab.len(), args.out.display());
    Ok(())
}

/// Model geometry bundles selectable with `--preset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 2 layers, hidden 64, 4 heads, ffn 256, max_len 128: minutes on a CPU
    Desk,
    /// 12 layers, hidden 768, 12 heads, ffn 3072, max_len 512
    Paper,
}

/// Every tunable a run needs, before the vocabulary size is known.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    pub num_heads: usize,
    pub ffn_size: usize,
    pub max_len: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f32,
    pub adam_beta1: f32,
    pub adam_beta2: f32,
    pub adam_eps: f32,
    pub seed: u64,
    pub shuffle_each_epoch: bool,
    pub eval_fraction: f64,
}

impl Default for RunConfig {
    /// Full-scale geometry with the standard training protocol.
    fn default() -> Self {
        let train = TrainConfig::default();
        RunConfig {
            num_layers: 12,
            hidden_size: 768,
            num_heads: 12,
            ffn_size: 3072,
            max_len: 512,
            batch_size: train.batch_size,
            epochs: train.epochs,
            learning_rate: train.learning_rate,
            adam_beta1: train.adam_beta1,
            adam_beta2: train.adam_beta2,
            adam_eps: train.adam_eps,
            seed: train.seed,
            shuffle_each_epoch: train.shuffle_each_epoch,
            eval_fraction: 0.1,
        }
    }
}

impl RunConfig {
    fn apply_preset(&mut self, preset: Preset) {
        let (layers, hidden, heads, ffn, max_len) = match preset {
            Preset::Desk => (2, 64, 4, 256, 128),
            Preset::Paper => (12, 768, 12, 3072, 512),
        };
        self.num_layers = layers;
        self.hidden_size = hidden;
        self.num_heads = heads;
        self.ffn_size = ffn;
        self.max_len = max_len;
    }

    fn apply_file(&mut self, file: &ConfigFile) {
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = file.$field { self.$field = v; })*
            };
        }
        take!(
            num_layers, hidden_size, num_heads, ffn_size, max_len, batch_size, epochs,
            learning_rate, adam_beta1, adam_beta2, adam_eps, seed, shuffle_each_epoch,
            eval_fraction
        );
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            num_layers: self.num_layers,
            hidden_size: self.hidden_size,
            num_heads: self.num_heads,
            ffn_size: self.ffn_size,
            max_len: self.max_len,
            vocab_size,
            num_classes: crate::model::NUM_CLASSES,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            seed: self.seed,
            shuffle_each_epoch: self.shuffle_each_epoch,
        }
    }
}

/// The `--config` JSON schema: every run setting, all optional. Unknown
/// keys are rejected so typos fail loudly.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub num_layers: Option<usize>,
    pub hidden_size: Option<usize>,
    pub num_heads: Option<usize>,
    pub ffn_size: Option<usize>,
    pub max_len: Option<usize>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f32>,
    pub adam_beta1: Option<f32>,
    pub adam_beta2: Option<f32>,
    pub adam_eps: Option<f32>,
    pub seed: Option<u64>,
    pub shuffle_each_epoch: Option<bool>,
    pub eval_fraction: Option<f64>,
}

pub fn load_config_file(path: &Path) -> Result<ConfigFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    /// Prepared JSON-lines training data
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Vocabulary file
    #[arg(long, value_name = "FILE")]
    pub vocab: PathBuf,
    /// Checkpoint directory to create
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Geometry bundle applied before --config and flags
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// JSON settings file applied before flags
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub num_layers: Option<usize>,
    #[arg(long)]
    pub hidden_size: Option<usize>,
    #[arg(long)]
    pub num_heads: Option<usize>,
    #[arg(long)]
    pub ffn_size: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Held-out fraction; 0 trains on everything with no eval split
    #[arg(long)]
    pub eval_fraction: Option<f64>,
    /// Visit training data in file order every epoch
    #[arg(long)]
    pub no_shuffle: bool,
}

/// Defaults, then preset, then config file, then per-field flags.
pub fn resolve_run_config(
    preset: Option<Preset>,
    file: Option<&ConfigFile>,
    args: &TrainArgs,
) -> RunConfig {
    let mut run = RunConfig::default();
    if let Some(p) = preset {
        run.apply_preset(p);
    }
    if let Some(f) = file {
        run.apply_file(f);
    }
    macro_rules! flag {
        ($($field:ident),*) => {
            $(if let Some(v) = args.$field { run.$field = v; })*
        };
    }
    flag!(
        num_layers, hidden_size, num_heads, ffn_size, max_len, batch_size, epochs,
        learning_rate, seed, eval_fraction
    );
    if args.no_shuffle {
        run.shuffle_each_epoch = false;
    }
    run
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let file = args.config.as_deref().map(load_config_file).transpose()?;
    let run = resolve_run_config(args.preset, file.as_ref(), args);
    if !(0.0..1.0).contains(&run.eval_fraction) {
        return Err(Error::Config(format!(
            "eval_fraction must lie in [0, 1), got {}",
            run.eval_fraction
        )));
    }
    let messages = load_jsonl(&args.data)?;
    let vocab = load_vocab(&args.vocab)?;
    let model_cfg = run.model_config(vocab.len());
    model_cfg.validate()?;
    let train_cfg = run.train_config();
    train_cfg.validate()?;

    let (train_set, eval_set) = if run.eval_fraction == 0.0 {
        (messages, Vec::new())
    } else {
        let split = split_train_eval(messages, run.eval_fraction, run.seed)?;
        (split.train, split.eval)
    };
    eprintln!(
        "training: layers={} hidden={} heads={} ffn={} max_len={} vocab={} \
         batch_size={} epochs={} eval_fraction={} learning_rate={} seed={} \
         train={} eval={}",
        run.num_layers,
        run.hidden_size,
        run.num_heads,
        run.ffn_size,
        run.max_len,
        vocab.len(),
        run.batch_size,
        run.epochs,
        run.eval_fraction,
        run.learning_rate,
        run.seed,
        train_set.len(),
        eval_set.len()
    );

    let eval_opt = (!eval_set.is_empty()).then_some(eval_set.as_slice());
    let checkpoint = train(&train_set, &vocab, &model_cfg, &train_cfg, eval_opt, |log| {
        let line = serde_json::to_string(log).expect("epoch log serializes");
        println!("{line}");
    })?;
    save_checkpoint(&checkpoint, &args.out)?;
    if !eval_set.is_empty() {
        save_jsonl(&eval_set, &args.out.join(EVAL_SPLIT_FILE))?;
    }
    eprintln!("checkpoint written to {}", args.out.display());
    Ok(())
}

#[derive(Debug, Args, Default)]
pub struct EvalArgs {
    /// Score a predictions file instead of running a model
    #[arg(long, value_name = "FILE", conflicts_with_all = ["checkpoint", "vocab", "data"])]
    pub predictions: Option<PathBuf>,
    /// Checkpoint directory to evaluate
    #[arg(long, value_name = "DIR", requires = "vocab", requires = "data")]
    pub checkpoint: Option<PathBuf>,
    /// Vocabulary the eval data should be encoded with
    #[arg(long, value_name = "FILE")]
    pub vocab: Option<PathBuf>,
    /// Prepared JSON-lines eval data
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// Emit the report as JSON instead of a table
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Deserialize)]
struct PredictionRecord {
    #[allow(dead_code)]
    id: String,
    gold: String,
    predicted: String,
}

fn parse_label(s: &str, line: usize, path: &Path) -> Result<Label> {
    match s {
        "ham" => Ok(Label::Ham),
        "spam" => Ok(Label::Spam),
        other => Err(Error::Input(format!(
            "{} line {line}: unknown label {other:?}",
            path.display()
        ))),
    }
}

fn load_predictions(path: &Path) -> Result<Vec<(Label, Label)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: PredictionRecord = serde_json::from_str(line).map_err(|e| {
            Error::Input(format!("{} line {}: {e}", path.display(), i + 1))
        })?;
        pairs.push((
            parse_label(&record.gold, i + 1, path)?,
            parse_label(&record.predicted, i + 1, path)?,
        ));
    }
    Ok(pairs)
}

/// (gold, predicted) pairs for either eval mode, flags validated first.
pub fn eval_pairs(args: &EvalArgs) -> Result<Vec<(Label, Label)>> {
    match (&args.predictions, &args.checkpoint) {
        (Some(_), Some(_)) => Err(Error::Input(
            "--predictions conflicts with --checkpoint".into(),
        )),
        (Some(path), None) => {
            if args.vocab.is_some() || args.data.is_some() {
                return Err(Error::Input(
                    "--vocab/--data do not apply to --predictions mode".into(),
                ));
            }
            load_predictions(path)
        }
        (None, Some(ckpt_dir)) => {
            let (vocab_path, data_path) = match (&args.vocab, &args.data) {
                (Some(v), Some(d)) => (v, d),
                _ => {
                    return Err(Error::Input(
                        "--checkpoint mode requires --vocab and --data".into(),
                    ))
                }
            };
            let checkpoint = load_checkpoint(ckpt_dir)?;
            let vocab = load_vocab(vocab_path)?;
            let messages = load_jsonl(data_path)?;
            evaluate(&checkpoint, &messages, &vocab)
        }
        (None, None) => Err(Error::Input(
            "eval needs either --predictions or --checkpoint".into(),
        )),
    }
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let pairs = eval_pairs(args)?;
    let class_report: ClassReport = report(&pairs)?;
    if args.json {
        let json = serde_json::to_string_pretty(&class_report)
            .map_err(|e| Error::Input(format!("report serialization failed: {e}")))?;
        println!("{json}");
    } else {
        println!("{}", class_report.to_table());
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    /// Checkpoint directory holding the trained model
    #[arg(long, value_name = "DIR")]
    pub checkpoint: PathBuf,
    /// Vocabulary the model was trained with
    #[arg(long, value_name = "FILE")]
    pub vocab: PathBuf,
    /// Classify this one text
    #[arg(long, conflicts_with = "stdin")]
    pub text: Option<String>,
    /// Classify each line of standard input
    #[arg(long)]
    pub stdin: bool,
}

fn classify_line(checkpoint: &Checkpoint, vocab: &Vocab, raw: &str) -> Result<String> {
    let decision = classify(&checkpoint.params, &clean_text(raw), vocab)?;
    Ok(format!("{}\t{:.4}", decision.label, decision.confidence()))
}

pub fn cmd_classify(args: &ClassifyArgs) -> Result<()> {
    if args.text.is_none() && !args.stdin {
        return Err(Error::Input("classify needs --text or --stdin".into()));
    }
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    let vocab = load_vocab(&args.vocab)?;
    if vocab.digest() != checkpoint.vocab_digest {
        return Err(Error::Config(format!(
            "vocab digest {} does not match checkpoint digest {}",
            vocab.digest(),
            checkpoint.vocab_digest
        )));
    }
    if let Some(text) = &args.text {
        println!("{}", classify_line(&checkpoint, &vocab, text)?);
        return Ok(());
    }
    let stdin = std::io::stdin();
    for line in stdin.lock().lines() {
        let line = line.map_err(|e| Error::Input(format!("reading stdin: {e}")))?;
        println!("{}", classify_line(&checkpoint, &vocab, &line)?);
    }
    Ok(())
}
