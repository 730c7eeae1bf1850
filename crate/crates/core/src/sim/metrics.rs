use alloc::vec::Vec;

use crate::error::Result;
use crate::model::{ModelParams, Task};
use crate::real::Real;

/// Multiply-add and event counters, split into gradient estimation (GE) and
/// model aggregation (MA).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounters {
    /// Parameter writes spent perturbing and restoring for two-point estimates.
    pub ge_madds: u64,
    /// Coordinate-buffer writes.
    pub coordinate_updates: u64,
    /// `U A Vᵀ` folds into base weights.
    pub flush_madds: u64,
    /// Dense applications: full-Gaussian replays, rank-1 outer products,
    /// gossip averaging.
    pub dense_madds: u64,
    /// Messages applied to client models, own updates included.
    pub messages_applied: u64,
    /// Seed-gossip coefficient re-applications.
    pub reapplications: u64,
}

impl OpCounters {
    pub fn ma_madds(&self) -> u64 {
        self.coordinate_updates + self.flush_madds + self.dense_madds
    }
}

/// Loss and accuracy of the average model `θ̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gmp<F> {
    pub mean: ModelParams<F>,
    pub train_loss: f64,
    pub eval_loss: Option<f64>,
    pub eval_accuracy: Option<f64>,
}

/// Averages client models and evaluates the average.
pub fn evaluate_gmp<F: Real>(task: &Task<F>, models: &[ModelParams<F>]) -> Result<Gmp<F>> {
    let refs: Vec<&ModelParams<F>> = models.iter().collect();
    let mean = ModelParams::mean_of(&refs)?;
    let train_loss = task.loss(&mean, task.train.all())?.to_f64();
    let (eval_loss, eval_accuracy) = if task.eval.is_empty() {
        (None, None)
    } else {
        (
            Some(task.loss(&mean, task.eval.all())?.to_f64()),
            task.accuracy(&mean, task.eval.all())?,
        )
    };
    Ok(Gmp {
        mean,
        train_loss,
        eval_loss,
        eval_accuracy,
    })
}

/// `max_i ‖θ_i − θ̄‖∞`.
pub fn consensus_error<F: Real>(models: &[ModelParams<F>], mean: &ModelParams<F>) -> f64 {
    models
        .iter()
        .map(|m| m.max_abs_diff(mean))
        .fold(0.0, f64::max)
}

/// One row of the metrics series.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    /// Iterations completed.
    pub iteration: usize,
    pub train_loss: f64,
    pub eval_loss: Option<f64>,
    pub eval_accuracy: Option<f64>,
    /// Smallest and largest full-train loss over individual client models.
    pub client_loss_min: f64,
    pub client_loss_max: f64,
    pub consensus_error: f64,
    pub total_messages: u64,
    pub total_bytes: u64,
    pub max_edge_bytes: u64,
    pub ops: OpCounters,
    /// Sample variance of the last iteration's α across clients.
    pub alpha_variance: Option<f64>,
}

impl MetricsRecord {
    pub fn client_loss_spread(&self) -> f64 {
        self.client_loss_max - self.client_loss_min
    }
}

pub(crate) fn sample_variance(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    Some(xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0))
}
