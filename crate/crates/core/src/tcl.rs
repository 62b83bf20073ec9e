//! Trajectory contrastive loss.
//!
//! Queries and keys are window-level posteriors. Their similarity is the
//! negated squared 2-Wasserstein distance between diagonal Gaussians, and the
//! loss is N-way cross-entropy over the similarity logits with the diagonal
//! as labels.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::encoder::PosteriorGaussian;
use crate::linalg::{sq_dist, Matrix};
use crate::math;
use crate::{Error, Result};

/// Aligned queries and keys: `(queries[i], keys[i])` is the positive pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryKeyBatch {
    pub queries: Vec<PosteriorGaussian>,
    pub keys: Vec<PosteriorGaussian>,
}

impl QueryKeyBatch {
    pub fn new(queries: Vec<PosteriorGaussian>, keys: Vec<PosteriorGaussian>) -> Result<Self> {
        let b = QueryKeyBatch { queries, keys };
        b.validate()?;
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    fn validate(&self) -> Result<usize> {
        if self.queries.is_empty() {
            return Err(Error::Usage("query/key batch is empty".into()));
        }
        if self.keys.len() != self.queries.len() {
            return Err(Error::dim("query/key batch", self.queries.len(), self.keys.len()));
        }
        let d = self.queries[0].dim();
        for g in self.queries.iter().chain(&self.keys) {
            if g.mean.len() != d || g.std.len() != d {
                return Err(Error::dim("query/key dimension", d, g.mean.len()));
            }
        }
        Ok(d)
    }

    fn stacked(&self) -> (Matrix, Matrix, Matrix, Matrix) {
        let rows = |v: &[PosteriorGaussian], mean: bool| {
            let r: Vec<&[f64]> = v
                .iter()
                .map(|g| if mean { &g.mean[..] } else { &g.std[..] })
                .collect();
            Matrix::from_rows(&r).expect("validated dimensions")
        };
        (
            rows(&self.queries, true),
            rows(&self.queries, false),
            rows(&self.keys, true),
            rows(&self.keys, false),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TclLossReport {
    pub loss: f64,
    /// Row-max-shifted logits.
    pub logits: Matrix,
    /// Fraction of rows whose first maximal logit sits on the diagonal.
    pub accuracy: f64,
}

/// Gradient of the contrastive loss with respect to each query's mean and
/// std. Keys receive no gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct TclGradients {
    pub query_mean: Vec<Vec<f64>>,
    pub query_std: Vec<Vec<f64>>,
}

/// `(i, j) -> ||a_i - b_j||^2`.
pub fn pairwise_sq_l2(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::dim("pairwise_sq_l2 columns", a.cols(), b.cols()));
    }
    let mut out = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            out.set(i, j, sq_dist(a.row(i), b.row(j)));
        }
    }
    Ok(out)
}

/// Negative squared Wasserstein-2 distance between diagonal Gaussians.
pub fn similarity(q: &PosteriorGaussian, k: &PosteriorGaussian) -> f64 {
    -(sq_dist(&q.mean, &k.mean) + sq_dist(&q.std, &k.std))
}

fn check_temperature(temperature: f64) -> Result<()> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Config(format!(
            "contrastive temperature must be positive, got {temperature}"
        )));
    }
    Ok(())
}

/// Scores divided by the temperature, then shifted by each row's maximum.
fn shifted_logits(batch: &QueryKeyBatch, temperature: f64) -> Result<Matrix> {
    check_temperature(temperature)?;
    batch.validate()?;
    let (qm, qs, km, ks) = batch.stacked();
    let dm = pairwise_sq_l2(&qm, &km)?;
    let ds = pairwise_sq_l2(&qs, &ks)?;
    let n = batch.len();
    let mut logits = Matrix::zeros(n, n);
    for i in 0..n {
        let row = logits.row_mut(i);
        for (j, r) in row.iter_mut().enumerate() {
            *r = -(dm.get(i, j) + ds.get(i, j)) / temperature;
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|r| *r -= max);
    }
    Ok(logits)
}

fn row_softmax(row: &[f64]) -> (Vec<f64>, f64) {
    let exps: Vec<f64> = row.iter().map(|&l| math::exp(l)).collect();
    let total: f64 = exps.iter().sum();
    (exps.iter().map(|e| e / total).collect(), math::ln(total))
}

pub fn tcl_loss(batch: &QueryKeyBatch, temperature: f64) -> Result<TclLossReport> {
    let logits = shifted_logits(batch, temperature)?;
    let n = batch.len();
    let mut loss = 0.0;
    let mut hits = 0usize;
    for i in 0..n {
        let row = logits.row(i);
        let (_, log_total) = row_softmax(row);
        loss += log_total - row[i];
        let mut arg = 0;
        for (j, &l) in row.iter().enumerate() {
            if l > row[arg] {
                arg = j;
            }
        }
        if arg == i {
            hits += 1;
        }
    }
    let loss = (loss / n as f64).max(0.0);
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("contrastive loss is {loss}")));
    }
    Ok(TclLossReport {
        loss,
        logits,
        accuracy: hits as f64 / n as f64,
    })
}

/// Exact gradient of `upstream * tcl_loss` with respect to query means and
/// stds; the keys are treated as constants.
pub fn tcl_loss_backward(
    batch: &QueryKeyBatch,
    temperature: f64,
    upstream: f64,
) -> Result<TclGradients> {
    let logits = shifted_logits(batch, temperature)?;
    let n = batch.len();
    let d = batch.queries[0].dim();
    let mut query_mean = vec![vec![0.0; d]; n];
    let mut query_std = vec![vec![0.0; d]; n];
    let scale = upstream / n as f64;
    for i in 0..n {
        let (probs, _) = row_softmax(logits.row(i));
        let q = &batch.queries[i];
        for (j, p) in probs.iter().enumerate() {
            // dL/dscore_ij = (p_ij - [i == j]) / N ; score = -dist / T
            let g = scale * (p - if i == j { 1.0 } else { 0.0 });
            if g == 0.0 {
                continue;
            }
            let k = &batch.keys[j];
            let coeff = -2.0 * g / temperature;
            for c in 0..d {
                query_mean[i][c] += coeff * (q.mean[c] - k.mean[c]);
                query_std[i][c] += coeff * (q.std[c] - k.std[c]);
            }
        }
    }
    Ok(TclGradients {
        query_mean,
        query_std,
    })
}
