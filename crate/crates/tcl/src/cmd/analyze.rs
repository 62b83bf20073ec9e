use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use tcl_core::analysis::{cluster_metrics, collect_embeddings, project_2d, ClusterMetrics};
use tcl_core::trainer::PolicySnapshot;

use super::SplitChoice;
use crate::error::{CliError, Result};
use crate::io::{load_checkpoint, write_atomic, write_embeddings, write_projection};

pub const REPORT_FILE: &str = "report.toml";

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitChoice,
    /// Task indices within the split, comma separated. Defaults to all.
    #[arg(long, value_delimiter = ',')]
    pub tasks: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub rollouts: usize,
    #[arg(long, default_value_t = 4)]
    pub windows: usize,
    /// Defaults to the training window size.
    #[arg(long)]
    pub window_size: Option<usize>,
    /// Defaults to the training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory. Defaults to `analysis/<split>-seed<seed>` beside
    /// the checkpoint.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct Report<'a> {
    checkpoint: String,
    split: &'a str,
    tasks: &'a [usize],
    seed: u64,
    points: usize,
    avg_dist_to_centroid: f64,
    avg_dist_between_centroids: f64,
    ratio: f64,
}

#[derive(Debug, Clone)]
pub struct AnalyzeOutcome {
    pub metrics: ClusterMetrics,
    pub points: usize,
    pub dir: PathBuf,
}

/// Embeds rollouts of the checkpoint's policy, then writes the embeddings,
/// their 2-D projection and a cluster-metric report.
pub fn analyze(args: &AnalyzeArgs, out: &mut dyn Write) -> Result<AnalyzeOutcome> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let all = args.split.tasks(&ckpt);
    let indices: Vec<usize> = if args.tasks.is_empty() {
        (0..all.len()).collect()
    } else {
        args.tasks.clone()
    };
    if let Some(&bad) = indices.iter().find(|&&i| i >= all.len()) {
        return Err(CliError::Usage(format!(
            "task {bad} does not exist; the {} split has {} tasks",
            args.split.name(),
            all.len()
        )));
    }
    if indices.len() < 2 {
        return Err(CliError::Usage(
            "analysis needs at least two tasks; the distance between centroids is undefined for one".into(),
        ));
    }
    if args.rollouts == 0 || args.windows == 0 {
        return Err(CliError::Usage("rollouts and windows must both be at least 1".into()));
    }
    let tasks: Vec<_> = indices.iter().map(|&i| all[i].clone()).collect();
    let seed = args.seed.unwrap_or(ckpt.config.seed);
    let window_size = args.window_size.unwrap_or(ckpt.config.window_size);
    let snapshot = PolicySnapshot::from_checkpoint(&ckpt)?;
    let mut set = collect_embeddings(
        &snapshot,
        &tasks,
        args.rollouts,
        args.windows,
        window_size,
        seed,
        args.checkpoint.display().to_string(),
    )?;
    for p in &mut set.points {
        p.label = indices[p.label];
    }
    let metrics = cluster_metrics(&set)?;
    let projection = project_2d(&set)?;

    let dir = args.out.clone().unwrap_or_else(|| {
        let parent = args.checkpoint.parent().unwrap_or(Path::new("."));
        parent.join("analysis").join(format!("{}-seed{seed}", args.split.name()))
    });
    fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
    write_embeddings(&dir.join("embeddings.csv"), &set)?;
    write_projection(&dir.join("projection.csv"), &projection)?;
    let report = Report {
        checkpoint: args.checkpoint.display().to_string(),
        split: args.split.name(),
        tasks: &indices,
        seed,
        points: set.len(),
        avg_dist_to_centroid: metrics.avg_dist_to_centroid,
        avg_dist_between_centroids: metrics.avg_dist_between_centroids,
        ratio: metrics.ratio(),
    };
    let text = toml::to_string(&report).expect("reports serialize to TOML");
    write_atomic(&dir.join(REPORT_FILE), text.as_bytes())?;

    let w = |e| CliError::io("stdout")(e);
    writeln!(out, "{} points from {} tasks", set.len(), indices.len()).map_err(w)?;
    writeln!(out, "  avg distance to centroid      {:.4}", metrics.avg_dist_to_centroid).map_err(w)?;
    writeln!(out, "  avg distance between centroids {:.4}", metrics.avg_dist_between_centroids).map_err(w)?;
    writeln!(out, "  ratio                          {:.4}", metrics.ratio()).map_err(w)?;
    writeln!(out, "wrote {}", dir.display()).map_err(w)?;
    Ok(AnalyzeOutcome { metrics, points: set.len(), dir })
}
