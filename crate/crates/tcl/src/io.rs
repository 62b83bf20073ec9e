//! On-disk formats: checkpoints (JSON), metrics and embeddings (CSV).

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tcl_core::analysis::{EmbeddingSet, ProjectedPoint};
use tcl_core::trainer::{Checkpoint, MetricsRecord, TaskEvaluation};

use crate::error::{CliError, Result};

/// Column order of the metrics CSV.
pub const METRICS_COLUMNS: [&str; 8] = [
    "step",
    "loss_tcl",
    "tcl_acc",
    "loss_q",
    "loss_pi",
    "kl",
    "return_train",
    "return_test",
];

/// Replaces `path` with `bytes` through a temporary file in the same
/// directory, so readers see either the old or the new contents.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(CliError::io(dir))?;
    tmp.write_all(bytes).map_err(CliError::io(tmp.path()))?;
    tmp.as_file().sync_all().map_err(CliError::io(tmp.path()))?;
    tmp.persist(path).map_err(|e| CliError::Io { path: path.into(), source: e.error })?;
    Ok(())
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let json = serde_json::to_vec(checkpoint).map_err(|e| CliError::format(path)(e.to_string()))?;
    write_atomic(path, &json)
}

/// Reads a checkpoint and checks it against its own configuration.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    let ckpt: Checkpoint =
        serde_json::from_slice(&bytes).map_err(|e| CliError::format(path)(format!("not a checkpoint: {e}")))?;
    ckpt.validate()
        .map_err(|e| CliError::Mismatch(format!("{}: {e}", path.display())))?;
    Ok(ckpt)
}

/// One metrics CSV row. `step` is the environment-step count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub loss_tcl: Option<f64>,
    pub tcl_acc: Option<f64>,
    pub loss_q: f64,
    pub loss_pi: f64,
    pub kl: Option<f64>,
    pub return_train: f64,
    pub return_test: Option<f64>,
}

impl From<&MetricsRecord> for MetricsRow {
    fn from(r: &MetricsRecord) -> Self {
        MetricsRow {
            step: r.env_steps,
            loss_tcl: r.loss_tcl,
            tcl_acc: r.tcl_acc,
            loss_q: r.loss_q,
            loss_pi: r.loss_pi,
            kl: r.kl,
            return_train: r.return_train,
            return_test: r.return_test,
        }
    }
}

/// Streams metrics rows, flushing after each so a crashed run keeps its log.
/// Absent quantities are empty cells.
#[derive(Debug)]
pub struct MetricsWriter {
    inner: csv::Writer<BufWriter<File>>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(CliError::io(path))?;
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(file));
        inner
            .write_record(METRICS_COLUMNS)
            .and_then(|_| inner.flush().map_err(Into::into))
            .map_err(|e| CliError::format(path)(e.to_string()))?;
        Ok(MetricsWriter { inner })
    }

    pub fn write(&mut self, record: &MetricsRecord) -> std::io::Result<()> {
        self.inner.serialize(MetricsRow::from(record)).map_err(std::io::Error::other)?;
        self.inner.flush()
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::format(path)(e.to_string()))?;
    let header = reader.headers().map_err(|e| CliError::format(path)(e.to_string()))?;
    if header.iter().ne(METRICS_COLUMNS) {
        return Err(CliError::format(path)(format!(
            "unexpected header `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    reader
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| CliError::format(path)(e.to_string()))
}

fn write_csv(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::format(path)(e.to_string());
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(&row).map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::format(path)(e.to_string()))?;
    write_atomic(path, &bytes)
}

/// `label,z0,...,z{d-1}` with one row per point.
pub fn write_embeddings(path: &Path, set: &EmbeddingSet) -> Result<()> {
    let d = set.dim().unwrap_or(0);
    let mut header = vec!["label".to_string()];
    header.extend((0..d).map(|i| format!("z{i}")));
    let rows = set.points.iter().map(|p| {
        let mut row = vec![p.label.to_string()];
        row.extend(p.vector.iter().map(|v| v.to_string()));
        row
    });
    write_csv(path, &header, rows)
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::format(path)(e.to_string()))?;
    let mut set = EmbeddingSet::new(path.display().to_string());
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::format(path)(e.to_string()))?;
        let bad = |what: &str| CliError::format(path)(format!("row {}: bad {what}", line + 1));
        let mut fields = record.iter();
        let label = fields.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("label"))?;
        let vector = fields
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad("coordinate"))?;
        set.push(vector, label);
    }
    Ok(set)
}

/// `x,y,label`.
pub fn write_projection(path: &Path, points: &[ProjectedPoint]) -> Result<()> {
    let header = ["x", "y", "label"].map(String::from);
    let rows = points
        .iter()
        .map(|p| vec![p.x.to_string(), p.y.to_string(), p.label.to_string()]);
    write_csv(path, &header, rows)
}

/// `task,label,mean_return,std_error,n_eval`.
pub fn write_evaluations(path: &Path, evals: &[TaskEvaluation], labels: &[String]) -> Result<()> {
    let header = ["task", "label", "mean_return", "std_error", "n_eval"].map(String::from);
    let rows = evals.iter().map(|e| {
        vec![
            e.task_index.to_string(),
            labels[e.task_index].clone(),
            e.mean_return().to_string(),
            e.std_error().to_string(),
            e.returns.len().to_string(),
        ]
    });
    write_csv(path, &header, rows)
}
