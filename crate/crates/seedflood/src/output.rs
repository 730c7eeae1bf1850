//! Per-variant CSV series, the combined summary and the manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use seedflood_core::model::LayerShape;
use seedflood_core::sim::{run, MetricsRecord, RunOutput};
use seedflood_core::Precision;

use crate::config::{ExperimentSpec, RunFields, Variant};

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One row of `metrics.csv`. Counters are cumulative since iteration 0.
#[derive(Debug, Serialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub train_loss: f64,
    pub eval_loss: Option<f64>,
    pub eval_accuracy: Option<f64>,
    pub client_loss_min: f64,
    pub client_loss_max: f64,
    pub consensus_error: f64,
    pub total_messages: u64,
    pub total_bytes: u64,
    pub max_edge_bytes: u64,
    pub ge_madds: u64,
    pub ma_madds: u64,
    pub coordinate_updates: u64,
    pub flush_madds: u64,
    pub dense_madds: u64,
    pub messages_applied: u64,
    pub reapplications: u64,
    pub alpha_variance: Option<f64>,
}

impl From<&MetricsRecord> for MetricsRow {
    fn from(r: &MetricsRecord) -> Self {
        MetricsRow {
            iteration: r.iteration,
            train_loss: r.train_loss,
            eval_loss: r.eval_loss,
            eval_accuracy: r.eval_accuracy,
            client_loss_min: r.client_loss_min,
            client_loss_max: r.client_loss_max,
            consensus_error: r.consensus_error,
            total_messages: r.total_messages,
            total_bytes: r.total_bytes,
            max_edge_bytes: r.max_edge_bytes,
            ge_madds: r.ops.ge_madds,
            ma_madds: r.ops.ma_madds(),
            coordinate_updates: r.ops.coordinate_updates,
            flush_madds: r.ops.flush_madds,
            dense_madds: r.ops.dense_madds,
            messages_applied: r.ops.messages_applied,
            reapplications: r.ops.reapplications,
            alpha_variance: r.alpha_variance,
        }
    }
}

/// One row of `ledger.csv`: traffic over one edge in one direction during
/// one iteration.
#[derive(Debug, Serialize)]
pub struct LedgerCsvRow {
    pub iteration: u32,
    pub edge_u: u32,
    pub edge_v: u32,
    pub direction: &'static str,
    pub messages: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeTotal {
    pub edge_u: u32,
    pub edge_v: u32,
    pub messages: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpsSummary {
    pub ge_madds: u64,
    pub ma_madds: u64,
    pub coordinate_updates: u64,
    pub flush_madds: u64,
    pub dense_madds: u64,
    pub messages_applied: u64,
    pub reapplications: u64,
}

/// Entry of `summary.json` for a completed variant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub name: String,
    pub method: &'static str,
    pub n: usize,
    /// Parameter count of the model.
    pub d: usize,
    pub iterations: usize,
    pub final_train_loss: f64,
    /// Held-out loss and accuracy of the average model.
    pub gmp_eval_loss: Option<f64>,
    pub gmp_eval_accuracy: Option<f64>,
    pub best_iteration: usize,
    pub best_loss: f64,
    pub final_consensus_error: f64,
    pub max_staleness: u32,
    /// Sums of the `messages` and `bytes` columns of `ledger.csv`.
    pub total_messages: u64,
    pub total_bytes: u64,
    pub max_edge_bytes: u64,
    pub mean_edge_bytes: f64,
    pub edges: Vec<EdgeTotal>,
    pub ops: OpsSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub variants: Vec<VariantSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Completed,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestEntry {
    pub name: String,
    /// Directory of the variant's CSV files, relative to the output directory.
    pub directory: String,
    pub status: Status,
    pub error: Option<String>,
    pub config: RunFields,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub source: PathBuf,
    pub variants: Vec<ManifestEntry>,
}

/// What `execute` did.
#[derive(Debug, Clone)]
pub struct ExecutionReport {
    pub manifest: Manifest,
    pub summary: Summary,
}

impl ExecutionReport {
    pub fn failed(&self) -> usize {
        self.manifest
            .variants
            .iter()
            .filter(|v| v.status == Status::Failed)
            .count()
    }
}

/// Runs every variant (at most `jobs` at a time; `None` uses all cores) and
/// writes the outputs under `out`. Variant failures are recorded in the
/// manifest; only errors writing the combined files are returned.
pub fn execute(
    spec: &ExperimentSpec,
    out: &Path,
    jobs: Option<usize>,
    progress: impl Fn(&str, &Result<VariantSummary, String>) + Sync,
) -> Result<ExecutionReport, OutputError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()?;
    let results: Vec<Result<VariantSummary, String>> = pool.install(|| {
        spec.variants
            .par_iter()
            .map(|v| {
                let r = run_variant(v, &out.join(&v.name));
                progress(&v.name, &r);
                r
            })
            .collect()
    });

    let mut summary = Summary { variants: Vec::new() };
    let mut manifest = Manifest {
        source: spec.source.clone(),
        variants: Vec::new(),
    };
    for (v, r) in spec.variants.iter().zip(results) {
        let (status, error) = match r {
            Ok(s) => {
                summary.variants.push(s);
                (Status::Completed, None)
            }
            Err(e) => (Status::Failed, Some(e)),
        };
        manifest.variants.push(ManifestEntry {
            name: v.name.clone(),
            directory: v.name.clone(),
            status,
            error,
            config: v.fields.clone(),
        });
    }
    write_json(&out.join("summary.json"), &summary)?;
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(ExecutionReport { manifest, summary })
}

fn run_variant(v: &Variant, dir: &Path) -> Result<VariantSummary, String> {
    match v.precision {
        Precision::F64 => finish(v, dir, run::<f64>(&v.config)),
        Precision::F32 => finish(v, dir, run::<f32>(&v.config)),
    }
}

fn finish<F>(
    v: &Variant,
    dir: &Path,
    output: seedflood_core::Result<RunOutput<F>>,
) -> Result<VariantSummary, String> {
    let output = output.map_err(|e| e.to_string())?;
    fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    write_metrics(&dir.join("metrics.csv"), &output.records).map_err(|e| e.to_string())?;
    write_ledger(&dir.join("ledger.csv"), &output).map_err(|e| e.to_string())?;
    Ok(summarize(v, &output))
}

pub fn write_metrics(path: &Path, records: &[MetricsRecord]) -> Result<(), OutputError> {
    let csv_err = |source| OutputError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in records {
        w.serialize(MetricsRow::from(r)).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_ledger<F>(path: &Path, output: &RunOutput<F>) -> Result<(), OutputError> {
    let csv_err = |source| OutputError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err)?;
    // header even when nothing was sent
    w.write_record(["iteration", "edge_u", "edge_v", "direction", "messages", "bytes"])
        .map_err(csv_err)?;
    for row in output.ledger.rows() {
        w.serialize(LedgerCsvRow {
            iteration: row.iteration,
            edge_u: row.edge_u,
            edge_v: row.edge_v,
            direction: row.direction.as_str(),
            messages: row.messages,
            bytes: row.bytes,
        })
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

fn summarize<F>(v: &Variant, output: &RunOutput<F>) -> VariantSummary {
    let last = output.last();
    let edges: Vec<EdgeTotal> = output
        .ledger
        .per_edge()
        .into_iter()
        .map(|((u, w), t)| EdgeTotal {
            edge_u: u,
            edge_v: w,
            messages: t.messages,
            bytes: t.bytes,
        })
        .collect();
    let total = output.ledger.total();
    let mean_edge_bytes = if edges.is_empty() {
        0.0
    } else {
        total.bytes as f64 / edges.len() as f64
    };
    let ops = last.ops;
    VariantSummary {
        name: v.name.clone(),
        method: v.config.method.name(),
        n: v.config.n,
        d: v.config.task.spec.layer_shapes().iter().map(LayerShape::len).sum(),
        iterations: v.config.iterations,
        final_train_loss: last.train_loss,
        gmp_eval_loss: last.eval_loss,
        gmp_eval_accuracy: last.eval_accuracy,
        best_iteration: output.best.iteration,
        best_loss: output.best.eval_loss.unwrap_or(output.best.train_loss),
        final_consensus_error: last.consensus_error,
        max_staleness: output.max_staleness,
        total_messages: total.messages,
        total_bytes: total.bytes,
        max_edge_bytes: output.ledger.max_edge_bytes(),
        mean_edge_bytes,
        edges,
        ops: OpsSummary {
            ge_madds: ops.ge_madds,
            ma_madds: ops.ma_madds(),
            coordinate_updates: ops.coordinate_updates,
            flush_madds: ops.flush_madds,
            dense_madds: ops.dense_madds,
            messages_applied: ops.messages_applied,
            reapplications: ops.reapplications,
        },
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), OutputError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| OutputError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}
