//! `hcm train | eval | predict | score`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration error, 3 data
//! error. Messages go to standard error; reports go to standard output.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::data::scan;
use crate::engine::{evaluate, load_model, predict, score_dirs, Evaluation, TrainConfig, Trainer};
use crate::error::{HcmError, Result};
use crate::TrainBackend;

#[derive(Parser, Debug)]
#[command(name = "hcm", version, about = "Concealed object segmentation: training, evaluation and scoring")]
struct Cli {
    /// TOML config file; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set batch=8`. Repeatable; wins over the file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on `<data_root>/<train_split>`, resuming from `checkpoint` if set.
    Train,
    /// Score the `checkpoint` model on `<data_root>/<eval_split>` and print the table.
    Eval {
        /// Also write per-image and aggregate scores as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write one 8-bit score map per input image.
    Predict {
        /// Directory of input images; defaults to `<data_root>/<eval_split>/images`.
        #[arg(long)]
        images: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score exported maps against masks; needs no model.
    Score {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Also write per-image and aggregate scores as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &HcmError) -> i32 {
    match e {
        HcmError::Config(_) | HcmError::MissingKey(_) => 2,
        HcmError::Data(_) | HcmError::Image { .. } => 3,
        _ => 1,
    }
}

/// Parse `argv` (program name first), run the command and return the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn config(cli: &Cli) -> Result<TrainConfig> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    TrainConfig::load(cli.config.as_deref(), &overrides)
}

fn data_root(config: &TrainConfig) -> Result<&Path> {
    config.data_root.as_deref().ok_or(HcmError::MissingKey("data_root"))
}

fn checkpoint(config: &TrainConfig) -> Result<&Path> {
    let path = config.checkpoint.as_deref().ok_or(HcmError::MissingKey("checkpoint"))?;
    if !path.is_file() {
        return Err(HcmError::Config(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(path)
}

fn write_json(path: &Path, evaluation: &Evaluation) -> Result<()> {
    let mut text = serde_json::to_string_pretty(evaluation).expect("scores serialize");
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    let device = Default::default();
    match &cli.command {
        Command::Score { pred, gt, out } => {
            let evaluation = score_dirs(pred, gt)?;
            println!("{}", evaluation.report);
            if let Some(out) = out {
                write_json(out, &evaluation)?;
            }
            Ok(())
        }
        Command::Train => {
            let config = config(&cli)?;
            let manifest = scan(data_root(&config)?, &config.train_split)?;
            let mut trainer = match &config.checkpoint {
                Some(_) => {
                    let mut t = Trainer::<TrainBackend>::resume(checkpoint(&config)?, &device)?;
                    // the run length and output location come from this invocation
                    t.config.epochs = config.epochs;
                    t.config.max_steps = config.max_steps;
                    t.config.checkpoint_dir = config.checkpoint_dir.clone();
                    t
                }
                None => Trainer::<TrainBackend>::new(config.clone(), &device)?,
            };
            let mut stdout = std::io::stdout();
            trainer.run(&manifest, |log| {
                let _ = writeln!(
                    stdout,
                    "epoch {} batch {} step {} lr {:.3e} loss {:.6}",
                    log.epoch, log.batch, log.step, log.lr, log.loss.total
                );
            })?;
            let path = trainer.save(&trainer.config.checkpoint_dir.join("final.bin"))?;
            eprintln!("saved {}", path.display());
            Ok(())
        }
        Command::Eval { out } => {
            let config = config(&cli)?;
            let (model, trained) = load_model::<TrainBackend>(checkpoint(&config)?, &device)?;
            let manifest = scan(data_root(&config)?, &config.eval_split)?;
            let evaluation = evaluate(&model, &manifest, trained.input_size, config.batch, &device)?;
            println!("{}", evaluation.report);
            if let Some(out) = out {
                write_json(out, &evaluation)?;
            }
            Ok(())
        }
        Command::Predict { images, out } => {
            let config = config(&cli)?;
            let (model, trained) = load_model::<TrainBackend>(checkpoint(&config)?, &device)?;
            let images = match images {
                Some(dir) => dir.clone(),
                None => data_root(&config)?.join(&config.eval_split).join("images"),
            };
            let written = predict(&model, &images, out, trained.input_size, config.batch, &device)?;
            eprintln!("wrote {} maps to {}", written.len(), out.display());
            Ok(())
        }
    }
}
