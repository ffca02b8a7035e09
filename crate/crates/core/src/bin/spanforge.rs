use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spanforge::config::{Overrides, RunConfig};
use spanforge::pipeline;
use spanforge::{Architecture, ConfidenceMode, Result};

#[derive(Parser)]
#[command(name = "spanforge", version, about = "Train and evaluate extractive QA readers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a run directory.
    Train(RunArgs),
    /// Score a checkpoint on a SQuAD-format file.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "data-dev")]
        data: PathBuf,
        #[arg(long)]
        arch: Option<Architecture>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train with and without the last shared linear re-initialized.
    AblateReinit(RunArgs),
    /// Answer one question about a document.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSON with a `paragraphs` list.
        #[arg(long)]
        document: PathBuf,
        #[arg(long)]
        question: String,
        /// Overrides the checkpoint's has-answer threshold (albert).
        #[arg(long, allow_hyphen_values = true)]
        na_threshold: Option<f64>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    arch: Option<Architecture>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    data_train: Option<PathBuf>,
    #[arg(long)]
    data_dev: Option<PathBuf>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long)]
    dropout_keep: Option<f64>,
    #[arg(long)]
    ema_decay: Option<f64>,
    #[arg(long)]
    confidence_mode: Option<ConfidenceMode>,
    /// Decision threshold; accepts `inf` and `-inf`.
    #[arg(long, allow_hyphen_values = true)]
    na_threshold: Option<f64>,
    #[arg(long)]
    reinit_last_linear: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(self) -> Result<RunConfig> {
        let o = Overrides {
            arch: self.arch,
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr: self.lr,
            seq_len: self.seq_len,
            dropout_keep: self.dropout_keep,
            ema_decay: self.ema_decay,
            confidence_mode: self.confidence_mode,
            na_threshold: self.na_threshold,
            reinit_last_linear: self.reinit_last_linear.then_some(true),
            seed: self.seed,
            max_steps: self.max_steps,
            data_train: self.data_train,
            data_dev: self.data_dev,
            out: self.out,
        };
        RunConfig::resolve(self.preset.as_deref(), &o)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => {
            let report = pipeline::train(&a.resolve()?)?;
            if let Some(last) = report.log.last() {
                println!("epoch {} loss {:.4}", last.epoch, last.train_loss);
            }
            println!("wrote {}", report.out.display());
        }
        Command::Evaluate { checkpoint, data, arch, out } => {
            let r = pipeline::evaluate(&checkpoint, &data, arch, &out)?;
            println!("{}", serde_json::to_string_pretty(&r.to_json())?);
        }
        Command::AblateReinit(a) => {
            let report = pipeline::ablate_reinit(&a.resolve()?)?;
            for r in &report.rows {
                println!("{}\t{}\t{:.2}\t{:.2}", r.epoch, r.variant, r.dev_em, r.dev_f1);
            }
        }
        Command::Predict {
            checkpoint,
            document,
            question,
            na_threshold,
        } => {
            let mut run = pipeline::load_run(&checkpoint)?;
            if let Some(d) = na_threshold {
                run.model.config.train.na_threshold = d;
            }
            let doc = pipeline::load_document(&document)?;
            let a = pipeline::predict(&run, &doc, &question)?;
            let out = serde_json::json!({
                "answer": a.text,
                "paragraph": a.paragraph,
                "confidence": if a.score.is_finite() { serde_json::json!(a.score) } else { serde_json::Value::Null },
            });
            println!("{out}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
