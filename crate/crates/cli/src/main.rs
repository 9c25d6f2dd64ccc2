//! `jnn`: train, evaluate and ablate joint networks from a TOML run config.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use jnn_core::arch::{JointPlacementMask, Preset};
use jnn_core::error::Error as CoreError;
use jnn_core::harness::{
    cmd_ablate, cmd_eval, cmd_gen_synthetic, cmd_report, cmd_train, EvalReport, RunConfig, Task,
};

#[derive(Parser, Debug)]
#[command(name = "jnn", version, about = "Joint neural networks for one-shot recognition and detection")]
struct Cli {
    /// Run config (TOML). Omitted keys take the task defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides `run.out_dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_preset)]
    preset: Option<Preset>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model; `--checkpoint` resumes from an earlier run.
    Train {
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Joint layers to enable, e.g. "1,2,4".
        #[arg(long)]
        mask: Option<String>,
    },
    /// Evaluate a checkpoint on the test classes.
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long)]
        mask: Option<String>,
    },
    /// Train and evaluate one detector per mask. Repeat `--mask`; without
    /// any, every row of the standard sweep is run.
    Ablate {
        #[arg(long)]
        mask: Vec<String>,
    },
    /// Write the synthetic shapes dataset and its class split.
    GenSynthetic {
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        images_per_class: Option<usize>,
        #[arg(long)]
        train_classes: Option<usize>,
    },
    /// Turn `eval.json` in `--out` into ROC or PR curve CSV.
    Report,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: CoreError| e.to_string())
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Core(e) => match e {
                CoreError::Config(_) | CoreError::DigestMismatch { .. } => "config",
                CoreError::Manifest { .. } | CoreError::Image { .. } | CoreError::Sampling(_) => "data",
                CoreError::Checkpoint(_) => "checkpoint",
                CoreError::Training(_) => "training",
                CoreError::Io(_) => "io",
                _ => "internal",
            },
        }
    }

    fn code(&self) -> u8 {
        match self.kind() {
            "usage" | "config" => 2,
            "data" => 3,
            "checkpoint" => 4,
            "training" => 5,
            "io" => 6,
            _ => 1,
        }
    }
}

fn load_config(cli: &Cli, task: Option<Task>) -> Result<RunConfig, CliError> {
    let mut cfg = match (&cli.config, task) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(task)) => RunConfig::defaults(task),
        (None, None) => return Err(CliError::Usage("--config is required for this command".into())),
    };
    if let Some(out) = &cli.out {
        cfg.run.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(preset) = cli.preset {
        cfg.model.preset = preset;
    }
    Ok(cfg)
}

fn with_mask(mut cfg: RunConfig, mask: &Option<String>) -> Result<RunConfig, CliError> {
    if let Some(m) = mask {
        cfg.model.mask = m.clone();
        cfg.mask()?;
    }
    Ok(cfg)
}

fn print_report(report: &EvalReport) {
    print!("{}", report.metrics_text());
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Train { checkpoint, mask } => {
            let cfg = with_mask(load_config(cli, None)?, mask)?;
            let out = cmd_train(&cfg, checkpoint.as_deref())?;
            if let Some(loss) = out.epoch_losses.last() {
                println!("epochs {}", out.epochs);
                println!("final_loss {loss:.6}");
            }
            println!("checkpoint {}", out.checkpoint.display());
        }
        Command::Eval { checkpoint, mask } => {
            let cfg = with_mask(load_config(cli, None)?, mask)?;
            print_report(&cmd_eval(&cfg, checkpoint)?);
        }
        Command::Ablate { mask } => {
            let cfg = load_config(cli, None)?;
            let masks = if mask.is_empty() {
                JointPlacementMask::ablation_rows()
            } else {
                mask.iter().map(|m| m.parse()).collect::<Result<Vec<_>, _>>()?
            };
            print!("{}", cmd_ablate(&cfg, &masks)?.to_table());
        }
        Command::GenSynthetic { classes, images_per_class, train_classes } => {
            let cfg = load_config(cli, Some(Task::Recognition))?;
            let out = cli
                .out
                .clone()
                .ok_or_else(|| CliError::Usage("gen-synthetic needs --out DIR".into()))?;
            let mut section = cfg.synthetic.clone();
            if let Some(n) = classes {
                section.shapes.classes = *n;
            }
            if let Some(n) = images_per_class {
                section.shapes.images_per_class = *n;
            }
            if let Some(n) = train_classes {
                section.train_classes = *n;
            }
            let data = cmd_gen_synthetic(&section, &out, cfg.run.seed)?;
            println!("images {}", data.manifest.entries.len());
            println!("manifest {}", out.join("manifest.txt").display());
            println!("split {}", out.join("split.toml").display());
        }
        Command::Report => {
            let dir: &Path = match (&cli.out, &cli.config) {
                (Some(out), _) => out,
                _ => return Err(CliError::Usage("report needs --out DIR holding eval.json".into())),
            };
            println!("{}", cmd_report(dir)?.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{msg}");
            ExitCode::from(e.code())
        }
    }
}
