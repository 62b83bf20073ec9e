//! Embedding-quality analysis: per-task cluster tightness and separation of
//! context embeddings, and a deterministic 2-D PCA projection.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use rand::Rng;

use crate::encoder::{sample_z, PosteriorGaussian};
use crate::env::{rollout, TaskSpec};
use crate::linalg::{dot, sq_dist, symmetric_eigen, Matrix};
use crate::math;
use crate::policy::policy_act;
use crate::rng::{self, Stream};
use crate::trainer::PolicySnapshot;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingPoint {
    pub vector: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    pub points: Vec<EmbeddingPoint>,
    pub source: String,
}

impl EmbeddingSet {
    pub fn new(source: impl Into<String>) -> Self {
        EmbeddingSet {
            points: Vec::new(),
            source: source.into(),
        }
    }

    pub fn push(&mut self, vector: Vec<f64>, label: usize) {
        self.points.push(EmbeddingPoint { vector, label });
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.points.first().map(|p| p.vector.len())
    }

    /// Distinct labels in ascending order.
    pub fn labels(&self) -> Vec<usize> {
        let mut l: Vec<usize> = self.points.iter().map(|p| p.label).collect();
        l.sort_unstable();
        l.dedup();
        l
    }

    fn check_dim(&self) -> Result<usize> {
        let d = self
            .dim()
            .ok_or_else(|| Error::Usage("embedding set is empty".into()))?;
        if let Some(p) = self.points.iter().find(|p| p.vector.len() != d) {
            return Err(Error::dim("embedding point", d, p.vector.len()));
        }
        Ok(d)
    }

    /// Per-label centroids, in [`EmbeddingSet::labels`] order.
    pub fn centroids(&self) -> Result<Vec<(usize, Vec<f64>)>> {
        let d = self.check_dim()?;
        Ok(self
            .labels()
            .into_iter()
            .map(|label| {
                let mut c = vec![0.0; d];
                let mut count = 0usize;
                for p in self.points.iter().filter(|p| p.label == label) {
                    c.iter_mut().zip(&p.vector).for_each(|(a, b)| *a += b);
                    count += 1;
                }
                c.iter_mut().for_each(|a| *a /= count as f64);
                (label, c)
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterMetrics {
    /// Mean over all points of the distance to their own label's centroid.
    pub avg_dist_to_centroid: f64,
    /// Mean over unordered label pairs of the distance between centroids.
    pub avg_dist_between_centroids: f64,
}

impl ClusterMetrics {
    /// Tightness relative to separation; lower is better.
    pub fn ratio(&self) -> f64 {
        self.avg_dist_to_centroid / self.avg_dist_between_centroids
    }
}

pub fn cluster_metrics(set: &EmbeddingSet) -> Result<ClusterMetrics> {
    let centroids = set.centroids()?;
    if centroids.len() < 2 {
        return Err(Error::Usage(
            "distance between centroids needs at least two labels".into(),
        ));
    }
    let mut within = 0.0;
    for p in &set.points {
        let (_, c) = centroids
            .iter()
            .find(|(l, _)| *l == p.label)
            .expect("every label has a centroid");
        within += math::sqrt(sq_dist(&p.vector, c));
    }
    let mut between = 0.0;
    let mut pairs = 0usize;
    for i in 0..centroids.len() {
        for j in (i + 1)..centroids.len() {
            between += math::sqrt(sq_dist(&centroids[i].1, &centroids[j].1));
            pairs += 1;
        }
    }
    Ok(ClusterMetrics {
        avg_dist_to_centroid: within / set.len() as f64,
        avg_dist_between_centroids: between / pairs as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub x: f64,
    pub y: f64,
    pub label: usize,
}

/// Principal axes of the centered point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Eigenvalues of the sample covariance, descending.
    pub eigenvalues: Vec<f64>,
    /// Unit principal directions as rows, matching `eigenvalues`.
    pub directions: Matrix,
}

/// Eigen-decomposition of the (1/n) sample covariance. Each direction's
/// largest-magnitude component is made positive.
pub fn pca(set: &EmbeddingSet) -> Result<Pca> {
    let d = set.check_dim()?;
    let n = set.len() as f64;
    let mut mean = vec![0.0; d];
    for p in &set.points {
        mean.iter_mut().zip(&p.vector).for_each(|(m, v)| *m += v / n);
    }
    let mut cov = Matrix::zeros(d, d);
    for p in &set.points {
        for i in 0..d {
            let ci = p.vector[i] - mean[i];
            for j in 0..d {
                let v = cov.get(i, j) + ci * (p.vector[j] - mean[j]) / n;
                cov.set(i, j, v);
            }
        }
    }
    let (eigenvalues, mut directions) = symmetric_eigen(&cov)?;
    for r in 0..d {
        let row = directions.row_mut(r);
        let mut arg = 0;
        for k in 1..d {
            if math::abs(row[k]) > math::abs(row[arg]) {
                arg = k;
            }
        }
        if row[arg] < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
    }
    Ok(Pca {
        mean,
        eigenvalues,
        directions,
    })
}

/// Projects centered points onto the top two principal directions. A
/// one-dimensional set gets a zero second coordinate.
pub fn project_2d(set: &EmbeddingSet) -> Result<Vec<ProjectedPoint>> {
    if set.len() < 2 {
        return Err(Error::Usage("projection needs at least two points".into()));
    }
    let p = pca(set)?;
    let d = p.mean.len();
    let mut centered = vec![0.0; d];
    Ok(set
        .points
        .iter()
        .map(|pt| {
            centered
                .iter_mut()
                .zip(pt.vector.iter().zip(&p.mean))
                .for_each(|(c, (v, m))| *c = v - m);
            let x = dot(&centered, p.directions.row(0));
            let y = if d >= 2 {
                dot(&centered, p.directions.row(1))
            } else {
                0.0
            };
            ProjectedPoint {
                x,
                y,
                label: pt.label,
            }
        })
        .collect())
}

/// Context embeddings of trained-policy rollouts.
///
/// Per task `i`: `rollouts_per_task` stochastic rollouts with `z ~ N(0, I)`,
/// `windows_per_trajectory` uniformly cropped windows of `window_size`
/// transitions from each, and the query-encoder posterior mean of every
/// window labeled `i`. Task `i` draws from the analysis stream keyed by `i`.
pub fn collect_embeddings(
    snapshot: &PolicySnapshot,
    tasks: &[TaskSpec],
    rollouts_per_task: usize,
    windows_per_trajectory: usize,
    window_size: usize,
    seed: u64,
    source: impl Into<String>,
) -> Result<EmbeddingSet> {
    if snapshot.encoder.is_none() {
        return Err(Error::Usage("oracle policies have no context embeddings to analyze".into()));
    }
    let mut set = EmbeddingSet::new(source);
    let actor = &snapshot.actor;
    for (i, task) in tasks.iter().enumerate() {
        if window_size == 0 || window_size > task.horizon {
            return Err(Error::Config(format!(
                "window size {window_size} does not fit horizon {}",
                task.horizon
            )));
        }
        let mut rng = rng::derive(seed, Stream::Analysis, 0, i as u64);
        for r in 0..rollouts_per_task {
            let z = sample_z(&PosteriorGaussian::unit(actor.context_dim), &mut rng).z;
            let mut failure = None;
            let traj = rollout(task, i, r as u64, &mut rng, |s, rng| {
                policy_act(actor, s, &z, rng, false).unwrap_or_else(|e| {
                    failure.get_or_insert(e);
                    vec![0.0; actor.action_dim]
                })
            });
            if let Some(e) = failure {
                return Err(e);
            }
            for _ in 0..windows_per_trajectory {
                let start = rng.random_range(0..=traj.len() - window_size);
                let posterior = snapshot.posterior(&traj.transitions[start..start + window_size])?;
                set.push(posterior.mean, i);
            }
        }
    }
    Ok(set)
}
