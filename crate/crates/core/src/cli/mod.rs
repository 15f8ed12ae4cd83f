//! Command-line entry point, run configuration, optimizer and training loop.
//!
//! Every config field can be set from the command line as `--key=value`, with
//! dotted keys for nested tables (`--model.image.embed_dim=32`).

mod config;
mod optim;
mod run;
mod train;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use config::{resolve_seed, RunConfig, SEED_ENV};
pub use optim::{clip_grad_norm, lr_at, AdamW, AdamWConfig};
pub use run::{
    annotate_manifest, epoch_checkpoint, epoch_state, evaluate, filter, latest_epoch, prompt_lines, read_loss_log,
    recognize, train, AnnotateReport, PoseSource, RunArtifacts, TrainSummary, CKPT_DIR, CONFIG_FILE, FINAL_CKPT,
    LOSS_LOG, VOCAB_FILE,
};
pub use train::{build_vocab, Dataset, StepLog, Trainer};

use crate::attributes::{AttributeSpace, Lexicon};
use crate::datapipe::synthetic::{write_dataset, SyntheticConfig};
use crate::datapipe::Manifest;
use crate::error::{Error, Result};
use crate::objectives::Mode;

#[derive(Debug, Parser)]
#[command(name = "aptm", version, about = "Attribute-prompt pre-training and text-based person retrieval")]
pub struct Cli {
    /// TOML run configuration; defaults apply to missing fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed and APTM_SEED.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub run_dir: PathBuf,
    /// Continue from the latest epoch checkpoint in the run directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Run directory of a finished training run.
    #[arg(long)]
    pub run_dir: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint to evaluate instead of the run's final one.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Report directory; the run directory by default.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train with all six objectives.
    Pretrain(TrainArgs),
    /// Train with contrastive, matching and masked-language objectives only.
    Finetune {
        #[command(flatten)]
        train: TrainArgs,
        /// Pretraining run whose vocabulary and final weights initialize the model.
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Text-to-image retrieval metrics on a manifest.
    Eval(ModelArgs),
    /// Prompt-based attribute recognition metrics on a manifest.
    AttrRec(ModelArgs),
    /// Label attributes from captions.
    Annotate {
        #[arg(long, conflicts_with = "text")]
        manifest: Option<PathBuf>,
        #[arg(long, requires = "manifest")]
        out: Option<PathBuf>,
        /// Relabel records that already carry attributes.
        #[arg(long)]
        overwrite: bool,
        /// Annotate a single caption and print the labels.
        #[arg(long)]
        text: Option<String>,
    },
    /// Drop small, corrupt and grayscale images; optionally re-crop and recaption.
    Filter {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Re-crop to the detected person using the pose service.
        #[arg(long)]
        recrop: bool,
        /// Use a stand-in pose service that always sees one full-frame person.
        #[arg(long, requires = "recrop")]
        offline_pose: bool,
        /// Rewrite captions with the caption service.
        #[arg(long)]
        calibrate: bool,
    },
    /// Print the 54 attribute prompts.
    Prompts,
    /// Write a toy manifest of rendered pedestrians with matching captions.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        pairs: usize,
        #[arg(long, default_value_t = 384)]
        height: u32,
        #[arg(long, default_value_t = 128)]
        width: u32,
    },
}

/// Separates `--key=value` config overrides from ordinary arguments.
/// `--seed` is left to the parser so its precedence over APTM_SEED holds.
pub fn split_overrides(args: Vec<OsString>) -> (Vec<OsString>, Vec<String>) {
    let keys = RunConfig::keys();
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for arg in args {
        let pair = arg
            .to_str()
            .and_then(|s| s.strip_prefix("--"))
            .and_then(|s| s.split_once('=').map(|(k, _)| (k.to_string(), s.to_string())));
        match pair {
            Some((key, kv)) if key != "seed" && keys.contains(&key) => overrides.push(kv),
            _ => rest.push(arg),
        }
    }
    (rest, overrides)
}

fn resolve_config(cli: &Cli, base: RunConfig, overrides: &[String]) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => base,
    };
    cfg = cfg.apply_overrides(overrides)?;
    cfg.seed = resolve_seed(cfg.seed, cli.seed)?;
    cfg.validate()?;
    Ok(cfg)
}

fn train_command(cli: &Cli, mode: Mode, args: &TrainArgs, init: Option<&Path>, overrides: &[String]) -> Result<()> {
    let snapshot = args.run_dir.join(CONFIG_FILE);
    let base = if args.resume && snapshot.exists() {
        // An earlier early stop does not carry over to the resumed run.
        RunConfig {
            stop_after_epoch: None,
            ..RunConfig::load(&snapshot)?
        }
    } else {
        RunConfig::for_mode(mode)
    };
    let cfg = resolve_config(cli, base, overrides)?;
    let summary = train(mode, cfg, &args.manifest, &args.run_dir, init, args.resume)?;
    std::fs::write(args.run_dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

/// Runs one parsed command with its config overrides.
pub fn execute(cli: &Cli, overrides: &[String]) -> Result<()> {
    match &cli.command {
        Command::Pretrain(args) => train_command(cli, Mode::Pretrain, args, None, overrides),
        Command::Finetune { train, init } => train_command(cli, Mode::Finetune, train, init.as_deref(), overrides),
        Command::Eval(args) => {
            let artifacts = model_artifacts(cli, args, overrides)?;
            let manifest = Manifest::load(&args.manifest)?;
            let out = args.out.clone().unwrap_or_else(|| args.run_dir.clone());
            let (metrics, _) = evaluate(&artifacts, &manifest, &out)?;
            println!("{}", serde_json::to_string_pretty(&metrics)?);
            Ok(())
        }
        Command::AttrRec(args) => {
            let artifacts = model_artifacts(cli, args, overrides)?;
            let manifest = Manifest::load(&args.manifest)?;
            let out = args.out.clone().unwrap_or_else(|| args.run_dir.clone());
            let (metrics, _, _) = recognize(&artifacts, &manifest, &out)?;
            println!("{}", serde_json::to_string_pretty(&metrics)?);
            Ok(())
        }
        Command::Annotate {
            manifest,
            out,
            overwrite,
            text,
        } => {
            if let Some(text) = text {
                let space = AttributeSpace::default();
                let a = Lexicon::default_for(&space).annotate(text, &space);
                let labels: std::collections::BTreeMap<&str, &str> = a
                    .attributes
                    .known()
                    .map(|(i, v)| (space.get(i).name.as_str(), space.get(i).label(v).label.as_str()))
                    .collect();
                let json = serde_json::json!({ "attributes": labels, "conflicts": a.conflicts });
                println!("{}", serde_json::to_string_pretty(&json)?);
                return Ok(());
            }
            let (Some(manifest), Some(out)) = (manifest, out) else {
                return Err(Error::config("annotate needs --text, or --manifest with --out"));
            };
            let (annotated, report) = annotate_manifest(&Manifest::load(manifest)?, *overwrite);
            annotated.save(out)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Filter {
            manifest,
            out,
            recrop,
            offline_pose,
            calibrate,
        } => {
            let cfg = resolve_config(cli, RunConfig::default(), overrides)?;
            let pose = match (recrop, offline_pose) {
                (false, _) => PoseSource::None,
                (true, false) => PoseSource::Http,
                (true, true) => PoseSource::FullFrame,
            };
            let result = filter(&Manifest::load(manifest)?, &cfg, pose, *calibrate, out)?;
            println!("{}", serde_json::to_string_pretty(&result.report)?);
            Ok(())
        }
        Command::Prompts => {
            let mut stdout = std::io::stdout().lock();
            for line in prompt_lines() {
                writeln!(stdout, "{line}")?;
            }
            Ok(())
        }
        Command::Synth {
            out,
            pairs,
            height,
            width,
        } => {
            let seed = resolve_seed(0, cli.seed)?;
            let cfg = SyntheticConfig {
                pairs: *pairs,
                seed,
                height: *height,
                width: *width,
            };
            let manifest = write_dataset(out, &cfg)?;
            println!("wrote {} pairs to {}", manifest.len(), out.join("manifest.jsonl").display());
            Ok(())
        }
    }
}

fn model_artifacts(cli: &Cli, args: &ModelArgs, overrides: &[String]) -> Result<RunArtifacts> {
    let mut artifacts = RunArtifacts::load(&args.run_dir, args.checkpoint.as_deref())?;
    if !overrides.is_empty() || cli.config.is_some() {
        let cfg = resolve_config(cli, artifacts.config.clone(), overrides)?;
        if cfg.model != artifacts.config.model {
            return Err(Error::config("model settings cannot change after training"));
        }
        artifacts.config = cfg;
    }
    Ok(artifacts)
}

/// Parses `args` (program name first) and runs the command.
pub fn run_from<I, S>(args: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: Into<OsString>,
{
    let (rest, overrides) = split_overrides(args.into_iter().map(Into::into).collect());
    let cli = Cli::try_parse_from(rest).map_err(|e| Error::config(e.to_string()))?;
    execute(&cli, &overrides)
}

/// Binary entry point.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let (rest, overrides) = split_overrides(std::env::args_os().collect());
    let cli = match Cli::try_parse_from(rest) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match execute(&cli, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
