use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use tcl_core::env::task_label;
use tcl_core::trainer::{mean_return, meta_test, PolicySnapshot, TaskEvaluation};

use super::SplitChoice;
use crate::config::{self, Overrides};
use crate::error::{CliError, Result};
use crate::io::{load_checkpoint, write_evaluations};

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    /// Configuration the checkpoint must have been trained with.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Exploration rollouts per task; defaults to the checkpoint's setting.
    #[arg(long)]
    pub n_exploration: Option<usize>,
    /// Evaluation rollouts per task; defaults to the checkpoint's setting.
    #[arg(long)]
    pub n_eval: Option<usize>,
    /// Defaults to the training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitChoice,
    /// Output CSV. Defaults to `eval-<split>-seed<seed>.csv` next to the
    /// checkpoint.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub evaluations: Vec<TaskEvaluation>,
    pub csv: PathBuf,
}

/// Meta-tests a checkpoint and reports per-task mean return with its
/// standard error.
pub fn eval(args: &EvalArgs, out: &mut dyn Write) -> Result<EvalOutcome> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    if let Some(path) = &args.config {
        let expected = config::load(Some(path), &Overrides::default())?;
        let diff = config::differing_keys(&ckpt.config, &expected);
        if !diff.is_empty() {
            return Err(CliError::Mismatch(format!(
                "checkpoint {} was not trained with {}:\n  {}",
                args.checkpoint.display(),
                path.display(),
                diff.join("\n  ")
            )));
        }
    }
    let n_exploration = args.n_exploration.unwrap_or(ckpt.config.n_exploration);
    let n_eval = args.n_eval.unwrap_or(ckpt.config.n_eval);
    let seed = args.seed.unwrap_or(ckpt.config.seed);
    let tasks = args.split.tasks(&ckpt);
    let snapshot = PolicySnapshot::from_checkpoint(&ckpt)?;
    let evaluations = meta_test(&snapshot, tasks, n_exploration, n_eval, seed, 0)?;

    let labels: Vec<String> = tasks.iter().map(task_label).collect();
    let csv = args.out.clone().unwrap_or_else(|| {
        let dir = args.checkpoint.parent().unwrap_or(Path::new("."));
        dir.join(format!("eval-{}-seed{seed}.csv", args.split.name()))
    });
    write_evaluations(&csv, &evaluations, &labels)?;

    let w = |e| CliError::io("stdout")(e);
    writeln!(
        out,
        "{} mode, {} tasks, {n_exploration} exploration / {n_eval} evaluation rollouts, seed {seed}",
        ckpt.config.mode,
        args.split.name()
    )
    .map_err(w)?;
    for (e, label) in evaluations.iter().zip(&labels) {
        writeln!(
            out,
            "  task {:>2}  {label:<32} {:>10.3} ± {:.3}",
            e.task_index,
            e.mean_return(),
            e.std_error()
        )
        .map_err(w)?;
    }
    writeln!(out, "  mean {:>46.3}", mean_return(&evaluations)).map_err(w)?;
    writeln!(out, "wrote {}", csv.display()).map_err(w)?;
    Ok(EvalOutcome { evaluations, csv })
}
