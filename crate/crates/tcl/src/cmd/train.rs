use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use tcl_core::trainer::{meta_train, Mode, TrainConfig};

use crate::config::{self, Overrides};
use crate::error::{CliError, Result};
use crate::exec::AnyExecutor;
use crate::io::{save_checkpoint, MetricsWriter};
use crate::manifest::{self, RunManifest};

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    /// TOML file of configuration keys; omitted keys keep the preset's values.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Base configuration (desk, smoke, mujoco-cheetah-vel, ...).
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub tcl_scale: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Environment-step budget.
    #[arg(long)]
    pub budget: Option<u64>,
    /// Collect rollouts for all tasks in parallel.
    #[arg(long)]
    pub parallel: bool,
    /// Any configuration key, as KEY=VALUE with a TOML value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Exact run directory. Defaults to a fresh directory under the run root.
    #[arg(long, value_name = "DIR")]
    pub run_dir: Option<PathBuf>,
    #[arg(long, env = "TCL_RUN_ROOT", default_value = "runs", value_name = "DIR")]
    pub run_root: PathBuf,
    /// Keep a copy of the checkpoint from every evaluation interval.
    #[arg(long)]
    pub keep_checkpoints: bool,
}

impl TrainArgs {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            preset: self.preset.clone(),
            mode: self.mode,
            tcl_scale: self.tcl_scale,
            seed: self.seed,
            budget: self.budget,
            parallel_collection: self.parallel.then_some(true),
            set: self.set.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub config: TrainConfig,
    pub iterations: u64,
    pub env_steps: u64,
}

/// A directory named after mode and seed that did not exist before.
fn fresh_run_dir(root: &Path, config: &TrainConfig) -> Result<PathBuf> {
    fs::create_dir_all(root).map_err(CliError::io(root))?;
    let stem = format!("{}-seed{}", config.mode, config.seed);
    for k in 0.. {
        let dir = if k == 0 { root.join(&stem) } else { root.join(format!("{stem}-{k}")) };
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(CliError::io(&dir)(e)),
        }
    }
    unreachable!()
}

/// Loads the configuration, writes the manifest and config snapshot, then
/// trains while streaming metrics and checkpoints into the run directory.
pub fn train(args: &TrainArgs, out: &mut dyn Write) -> Result<TrainOutcome> {
    let config = config::load(args.config.as_deref(), &args.overrides())?;
    let dir = match &args.run_dir {
        Some(d) => {
            fs::create_dir_all(d).map_err(CliError::io(d))?;
            d.clone()
        }
        None => fresh_run_dir(&args.run_root, &config)?,
    };
    let manifest = RunManifest::new(&config, args.keep_checkpoints);
    manifest.write_new(&dir)?;
    let config_path = dir.join(manifest::CONFIG_FILE);
    fs::write(&config_path, config::to_toml(&config)).map_err(CliError::io(&config_path))?;
    if args.keep_checkpoints {
        let d = dir.join(manifest::CHECKPOINT_DIR);
        fs::create_dir_all(&d).map_err(CliError::io(&d))?;
    }
    let metrics_path = dir.join(manifest::METRICS_FILE);
    let mut metrics = MetricsWriter::create(&metrics_path)?;
    let checkpoint_path = dir.join(manifest::CHECKPOINT_FILE);
    writeln!(out, "run directory {}", dir.display()).map_err(CliError::io("stdout"))?;
    log::info!(
        "training {} on {} for {} environment steps, seed {}",
        config.mode,
        config.family,
        manifest.end_step,
        config.seed
    );

    let eval_every = config.eval_every as u64;
    let mut side_error: Option<CliError> = None;
    let trainer = meta_train(config.clone(), &AnyExecutor::new(config.parallel_collection), |record, trainer| {
        let mut step = || -> Result<()> {
            metrics.write(record).map_err(CliError::io(&metrics_path))?;
            log::info!(
                "iter {} steps {} return {:.2}{}{}",
                record.iteration,
                record.env_steps,
                record.return_train,
                record.return_test.map(|r| format!(" test {r:.2}")).unwrap_or_default(),
                record.tcl_acc.map(|a| format!(" acc {a:.3}")).unwrap_or_default(),
            );
            if eval_every > 0 && record.iteration % eval_every == 0 {
                let ckpt = trainer.checkpoint();
                save_checkpoint(&checkpoint_path, &ckpt)?;
                if args.keep_checkpoints {
                    let kept = dir
                        .join(manifest::CHECKPOINT_DIR)
                        .join(format!("iter-{:06}.json", record.iteration));
                    save_checkpoint(&kept, &ckpt)?;
                }
            }
            Ok(())
        };
        step().map_err(|e| {
            let msg = e.to_string();
            side_error = Some(e);
            tcl_core::Error::Usage(msg)
        })
    });
    let trainer = match (trainer, side_error) {
        (_, Some(e)) => return Err(e),
        (t, None) => t?,
    };
    save_checkpoint(&checkpoint_path, &trainer.checkpoint())?;
    writeln!(
        out,
        "trained {} iterations, {} environment steps",
        trainer.iteration(),
        trainer.env_steps()
    )
    .map_err(CliError::io("stdout"))?;
    Ok(TrainOutcome {
        run_dir: dir,
        config,
        iterations: trainer.iteration(),
        env_steps: trainer.env_steps(),
    })
}
