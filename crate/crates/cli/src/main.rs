//! `dkd`: synthetic data, training, evaluation, inference and cost reports
//! for the kernel-distillation video pose model.

mod commands;
mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dkd_core::DkdError;

use settings::{resolve, Settings};

#[derive(Parser)]
#[command(name = "dkd", version, about = "Video pose estimation with distilled pose kernels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Each maps to a settings key and wins
/// over the `--config` file; a flag a subcommand has no key for is an error.
#[derive(Args, Clone, Debug, Default)]
struct Common {
    /// Flat `key = value` settings file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; defaults to `$DKD_OUT/<command>` or `runs/<command>`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    dataset: Option<String>,
    #[arg(long, global = true)]
    checkpoint: Option<String>,
    /// full, no_tat, no_pkd or baseline.
    #[arg(long, global = true)]
    ablation: Option<String>,
    /// Frame encoder size: tiny, small or medium.
    #[arg(long, global = true)]
    backbone: Option<String>,
    #[arg(long, global = true)]
    epochs: Option<String>,
    #[arg(long, global = true)]
    clip_len: Option<String>,
    #[arg(long, global = true)]
    alpha: Option<String>,
    /// person or torso.
    #[arg(long, global = true)]
    reference: Option<String>,
}

impl Common {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut v = Vec::new();
        let mut push = |k: &'static str, val: Option<String>| {
            if let Some(val) = val {
                v.push((k, val));
            }
        };
        push("seed", self.seed.map(|s| s.to_string()));
        push("dataset", self.dataset.clone());
        push("checkpoint", self.checkpoint.clone());
        push("ablation", self.ablation.clone());
        push("backbone", self.backbone.clone());
        push("epochs", self.epochs.clone());
        push("clip_len", self.clip_len.clone());
        push("alpha", self.alpha.clone());
        push("reference", self.reference.clone());
        v
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic clips into clip directories.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        clips: Option<usize>,
        /// Occluders on most clips plus distractor disks.
        #[arg(long)]
        occlusion_heavy: bool,
    },
    /// Train on a dataset directory; writes checkpoints and a step log.
    Train {
        #[command(flatten)]
        common: Common,
        /// Stop after this many optimizer steps.
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Score a checkpoint on a dataset under both PCK normalizations.
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Run a checkpoint over one clip; writes joints and overlays.
    Infer {
        #[command(flatten)]
        common: Common,
        /// Clip directory (alias of --dataset).
        #[arg(long)]
        clip: Option<String>,
        #[arg(long)]
        no_overlay: bool,
    },
    /// Multiply-add counts per component and per video.
    Flops {
        #[command(flatten)]
        common: Common,
    },
    /// Train and score every ablation over several seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Held-out clips scored after each run.
        #[arg(long)]
        test_dataset: Option<String>,
        /// Comma-separated seeds.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        max_steps: Option<u64>,
    },
}

fn out_dir(common: &Common, command: &str) -> PathBuf {
    if let Some(out) = &common.out {
        return out.clone();
    }
    let root = std::env::var_os("DKD_OUT").map_or_else(|| PathBuf::from("runs"), PathBuf::from);
    root.join(command)
}

fn run_command<S: Settings>(
    defaults: S,
    common: &Common,
    extra: Vec<(&'static str, String)>,
    body: impl FnOnce(&S, &Path) -> Result<(), DkdError>,
) -> Result<(), DkdError> {
    let mut overrides = common.overrides();
    overrides.extend(extra);
    let settings = resolve(defaults, common.config.as_deref(), &overrides)?;
    let out = out_dir(common, S::COMMAND);
    commands::write_snapshot(&out, &settings)?;
    body(&settings, &out)
}

fn some<T: ToString>(key: &'static str, v: Option<T>) -> Vec<(&'static str, String)> {
    v.map(|v| (key, v.to_string())).into_iter().collect()
}

fn dispatch(cli: Cli) -> Result<(), DkdError> {
    match cli.command {
        Command::GenData { common, clips, occlusion_heavy } => {
            let mut extra = some("clips", clips);
            if occlusion_heavy {
                extra.push(("occlusion_probability", "0.8".into()));
                extra.push(("distractors", "true".into()));
            }
            run_command(settings::GenData::default(), &common, extra, commands::gen_data)
        }
        Command::Train { common, max_steps } => {
            run_command(settings::Train::default(), &common, some("max_steps", max_steps), commands::train)
        }
        Command::Eval { common } => run_command(settings::Eval::default(), &common, vec![], commands::eval),
        Command::Infer { common, clip, no_overlay } => {
            let mut extra = some("clip", clip);
            if no_overlay {
                extra.push(("overlay", "false".into()));
            }
            run_command(settings::Infer::default(), &common, extra, commands::infer)
        }
        Command::Flops { common } => run_command(settings::Flops::default(), &common, vec![], commands::flops),
        Command::Ablate { common, test_dataset, seeds, max_steps } => {
            let mut extra = some("test_dataset", test_dataset);
            extra.extend(some("seeds", seeds));
            extra.extend(some("max_steps", max_steps));
            run_command(settings::Ablate::default(), &common, extra, commands::ablate)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
