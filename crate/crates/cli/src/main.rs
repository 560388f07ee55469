//! `jointnlu`: train, evaluate, and query joint intent/slot models.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 numeric failure, 5 format error, 6 i/o error.

mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use jointnlu::baseline::Baseline;
use jointnlu::checkpoint::{load_checkpoint, save_checkpoint};
use jointnlu::data::{load_dataset, load_split, validate_dataset, Dataset, ATIS_STATS, SNIPS_STATS};
use jointnlu::error::{Error, Result};
use jointnlu::eval::{evaluate_model, pct};
use jointnlu::model::{JointModel, LossMode, Variant};
use jointnlu::synth;
use jointnlu::tokenizer::{build_vocab, tokenize_word, Vocabulary};
use jointnlu::trainer::{ablate, ablation_to_csv, history_to_csv, train, EPOCH_GRID};

use config::{load_file_config, resolve, FileConfig, FlagOverrides, Resolved};

#[derive(Parser)]
#[command(
    name = "jointnlu",
    version,
    about = "Joint intent classification and slot filling on a from-scratch Transformer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a WordPiece vocabulary from a dataset's training split.
    BuildVocab(BuildVocabArgs),
    /// Train a joint model and write the best checkpoint plus history.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one dataset split.
    Eval(EvalArgs),
    /// Label a single query: intent plus one slot tag per word.
    Predict(PredictArgs),
    /// Sweep training epochs and the independent-models row; write the table.
    Ablate(AblateArgs),
    /// Check a dataset directory against expected split statistics.
    Validate(ValidateArgs),
    /// Generate a small synthetic dataset for smoke runs and demos.
    SynthData(SynthArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    Softmax,
    Crf,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Softmax => Variant::Softmax,
            VariantArg::Crf => Variant::Crf,
        }
    }
}

/// Flags shared by every training-shaped command; `None` means "not given"
/// so the config file and built-in defaults can fill the gap.
#[derive(Args, Debug)]
struct RunFlags {
    /// Dataset directory containing train/, dev/, and test/ splits.
    #[arg(long)]
    data_dir: PathBuf,
    /// Reuse a saved vocabulary file instead of building one from train.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Target vocabulary size when building from the training split.
    #[arg(long)]
    vocab_size: Option<usize>,
    /// Slot layer: independent softmax or linear-chain CRF.
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    /// Seed for initialization, shuffling, and dropout.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Examples per optimizer step.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Maximum sub-token sequence length including [CLS] and [SEP].
    #[arg(long)]
    max_len: Option<usize>,
    /// TOML settings file; command-line flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for checkpoints, history, and reports.
    #[arg(long, default_value = "runs")]
    out_dir: PathBuf,
}

impl RunFlags {
    fn resolve(&self) -> Result<Resolved> {
        let file: Option<FileConfig> = self
            .config
            .as_deref()
            .map(load_file_config)
            .transpose()?;
        let overrides = FlagOverrides {
            variant: self.variant.map(Variant::from),
            seed: self.seed,
            vocab_size: self.vocab_size,
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            max_len: self.max_len,
        };
        resolve(file, &overrides)
    }

    /// Loads the vocabulary file when given, otherwise builds one from the
    /// training split.
    fn vocabulary(&self, dataset: &Dataset, resolved: &Resolved) -> Result<Vocabulary> {
        match &self.vocab {
            Some(path) => Vocabulary::read_from_path(path),
            None => {
                let corpus: Vec<Vec<String>> =
                    dataset.train.iter().map(|r| r.words.clone()).collect();
                build_vocab(&corpus, resolved.vocab_size)
            }
        }
    }
}

#[derive(Args)]
struct BuildVocabArgs {
    /// Dataset directory; only its train/ split is read.
    #[arg(long)]
    data_dir: PathBuf,
    /// Target vocabulary size (specials + characters + learned merges).
    #[arg(long, default_value_t = 4000)]
    size: usize,
    /// Output vocabulary file, one token per line.
    #[arg(long, default_value = "vocab.txt")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunFlags,
    /// Checkpoint path (default: <out-dir>/model.ckpt).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory containing the split to score.
    #[arg(long)]
    data_dir: PathBuf,
    /// Split subdirectory to score.
    #[arg(long, default_value = "test")]
    split: String,
    /// Also score the train-split frequency baseline for comparison.
    #[arg(long)]
    with_baseline: bool,
}

#[derive(Args)]
struct PredictArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// The query; multiple arguments are joined with spaces.
    #[arg(required = true, num_args = 1..)]
    query: Vec<String>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    run: RunFlags,
    /// Comma-separated epoch checkpoints for the sweep.
    #[arg(long, value_delimiter = ',', default_values_t = EPOCH_GRID)]
    grid: Vec<usize>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Dataset directory containing train/, dev/, and test/ splits.
    #[arg(long)]
    data_dir: PathBuf,
    /// Which published statistics to check against.
    #[arg(long, value_enum)]
    expect: ExpectedStats,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ExpectedStats {
    Snips,
    Atis,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory to create train/, dev/, and test/ under.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    train_size: usize,
    #[arg(long, default_value_t = 40)]
    dev_size: usize,
    #[arg(long, default_value_t = 40)]
    test_size: usize,
    #[arg(long, default_value_t = 11)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err);
            ExitCode::from(match err {
                Error::Config(_) => 2,
                Error::Data(_) => 3,
                Error::Numeric(_) => 4,
                Error::Format(_) => 5,
                Error::Io(_) => 6,
            })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::BuildVocab(args) => cmd_build_vocab(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Predict(args) => cmd_predict(&args),
        Command::Ablate(args) => cmd_ablate(&args),
        Command::Validate(args) => cmd_validate(&args),
        Command::SynthData(args) => cmd_synth_data(&args),
    }
}

fn cmd_build_vocab(args: &BuildVocabArgs) -> Result<()> {
    let records = load_split(&args.data_dir, "train")?;
    let corpus: Vec<Vec<String>> = records.iter().map(|r| r.words.clone()).collect();
    let vocab = build_vocab(&corpus, args.size)?;
    vocab.write_to_path(&args.out)?;

    // Coverage over the very corpus the vocabulary was built from.
    let unk = vocab.token(vocab.unk_id()).to_string();
    let mut words = 0usize;
    let mut words_with_unk = 0usize;
    let mut pieces = 0usize;
    let mut unk_pieces = 0usize;
    for sentence in &corpus {
        for word in sentence {
            let toks = tokenize_word(word, &vocab);
            words += 1;
            words_with_unk += usize::from(toks.contains(&unk));
            pieces += toks.len();
            unk_pieces += toks.iter().filter(|t| **t == unk).count();
        }
    }
    println!(
        "vocabulary: {} tokens (target {}) written to {}",
        vocab.len(),
        args.size,
        args.out.display()
    );
    println!(
        "train coverage: {} words, {} ({}%) contain {}; {} sub-tokens, {} ({}%) are {}",
        words,
        words_with_unk,
        pct(words_with_unk as f64 / words.max(1) as f64),
        unk,
        pieces,
        unk_pieces,
        pct(unk_pieces as f64 / pieces.max(1) as f64),
        unk
    );
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let resolved = args.run.resolve()?;
    let dataset = load_dataset(&args.run.data_dir)?;
    let vocab = args.run.vocabulary(&dataset, &resolved)?;
    println!("run: {}", resolved.describe());
    println!(
        "data: {} train / {} dev / {} test, {} intents, {} slot labels, vocabulary {}",
        dataset.train.len(),
        dataset.dev.len(),
        dataset.test.len(),
        dataset.labels.intents.len(),
        dataset.labels.slots.len(),
        vocab.len()
    );

    let model = JointModel::new(
        resolved.encoder_config(vocab.len()),
        resolved.variant,
        dataset.labels.intents.len(),
        dataset.labels.slots.len(),
        resolved.seed,
    )?;
    let outcome = train(
        model,
        &dataset.train,
        &dataset.dev,
        &vocab,
        &dataset.labels,
        &resolved.train,
        LossMode::Joint,
        &[],
        |r| {
            println!(
                "epoch {:>3}: train loss {:.4} | dev intent acc {}% slot F1 {}% frame acc {}%",
                r.epoch,
                r.train_loss,
                pct(r.dev_intent_acc),
                pct(r.dev_slot_f1),
                pct(r.dev_frame_acc)
            );
        },
    )?;

    std::fs::create_dir_all(&args.run.out_dir)?;
    let history_path = args.run.out_dir.join("history.csv");
    std::fs::write(&history_path, history_to_csv(&outcome.history))?;
    let ckpt_path = args
        .checkpoint
        .clone()
        .unwrap_or_else(|| args.run.out_dir.join("model.ckpt"));
    save_checkpoint(&ckpt_path, &outcome.best, &vocab, &dataset.labels)?;
    println!(
        "best epoch {} by dev frame accuracy; checkpoint {} ; history {}",
        outcome.best_epoch,
        ckpt_path.display(),
        history_path.display()
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let (model, vocab, labels) = load_checkpoint(&args.checkpoint)?;
    let records = load_split(&args.data_dir, &args.split)?;
    let metrics = evaluate_model(&model, &records, &vocab, &labels, 64)?;
    println!("split {} ({} examples):", args.split, records.len());
    print!("{}", metrics.render_table());
    print!("{}", metrics.render_key_values());
    if args.with_baseline {
        let train_records = load_split(&args.data_dir, "train")?;
        let baseline = Baseline::fit(&train_records, &labels);
        let base = baseline.evaluate(&records, &labels)?;
        println!(
            "frequency baseline: intent acc {}%, slot F1 {}%, frame acc {}%",
            pct(base.intent_accuracy),
            pct(base.slot_f1),
            pct(base.frame_accuracy)
        );
    }
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let (model, vocab, labels) = load_checkpoint(&args.checkpoint)?;
    let words: Vec<String> = args
        .query
        .join(" ")
        .split_whitespace()
        .map(str::to_string)
        .collect();
    let prediction = model.predict(&words, &vocab, &labels)?;
    println!(
        "intent: {} (p={:.3})",
        prediction.intent, prediction.intent_prob
    );
    let width = words.iter().map(String::len).max().unwrap_or(0);
    for (word, tag) in words.iter().zip(&prediction.slots) {
        println!("  {:<w$}  {}", word, tag, w = width);
    }
    Ok(())
}

fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let resolved = args.run.resolve()?;
    let dataset = load_dataset(&args.run.data_dir)?;
    let vocab = args.run.vocabulary(&dataset, &resolved)?;
    println!("run: {}", resolved.describe());
    println!("grid: {:?} epochs, then independent intent-only and slot-only models", args.grid);

    let mut grid = args.grid.clone();
    grid.sort_unstable();
    grid.dedup();
    if grid.is_empty() || grid[0] == 0 {
        return Err(Error::Config("--grid needs positive epoch counts".into()));
    }

    println!("{:>10}  {:>12}  {:>9}  {:>11}", "epochs", "intent acc", "slot F1", "frame acc");
    let rows = ablate(
        &resolved.encoder_config(vocab.len()),
        resolved.variant,
        resolved.seed,
        &dataset.train,
        &dataset.dev,
        &dataset.test,
        &vocab,
        &dataset.labels,
        &resolved.train,
        &grid,
        |row| {
            println!(
                "{:>10}  {:>11}%  {:>8}%  {:>10}%",
                row.label,
                pct(row.intent_acc),
                pct(row.slot_f1),
                pct(row.frame_acc)
            );
        },
    )?;

    std::fs::create_dir_all(&args.run.out_dir)?;
    let csv_path = args.run.out_dir.join("ablation.csv");
    std::fs::write(&csv_path, ablation_to_csv(&rows))?;
    println!("table written to {}", csv_path.display());
    Ok(())
}

fn cmd_validate(args: &ValidateArgs) -> Result<()> {
    let dataset = load_dataset(&args.data_dir)?;
    let stats = match args.expect {
        ExpectedStats::Snips => &SNIPS_STATS,
        ExpectedStats::Atis => &ATIS_STATS,
    };
    let report = validate_dataset(&dataset, stats);
    print!("{}", report);
    if report.matches_expected() {
        println!("all expected statistics match");
        Ok(())
    } else {
        Err(Error::Data(format!(
            "{} statistics mismatch: {}",
            args.data_dir.display(),
            report.mismatches.join("; ")
        )))
    }
}

fn cmd_synth_data(args: &SynthArgs) -> Result<()> {
    let dataset = synth::generate_dataset(args.train_size, args.dev_size, args.test_size, args.seed);
    synth::write_dataset(&args.out, &dataset)?;
    println!(
        "synthetic dataset: {} train / {} dev / {} test, {} intents, {} slot labels, under {}",
        dataset.train.len(),
        dataset.dev.len(),
        dataset.test.len(),
        dataset.labels.intents.len(),
        dataset.labels.slots.len(),
        args.out.display()
    );
    Ok(())
}
