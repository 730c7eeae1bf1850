//! Round-based driver for SeedFlood and the gossip baselines.

mod baselines;
mod config;
mod metrics;
mod seedflood;

use alloc::boxed::Box;
use alloc::vec::Vec;

pub use baselines::{GossipSim, SeedGossipSim};
pub use config::{
    Method, RunConfig, TopologySpec, DEFAULT_KEEP_FRACTION, DEFAULT_LOCAL_STEPS, DEFAULT_RANK,
    DEFAULT_TAU,
};
pub use metrics::{consensus_error, evaluate_gmp, Gmp, MetricsRecord, OpCounters};
pub use seedflood::SeedFloodSim;

use crate::error::Result;
use crate::model::{ModelParams, Task};
use crate::protocol::TrafficLedger;
use crate::real::Real;

/// A steppable run of one method.
pub trait Simulation<F: Real> {
    fn config(&self) -> &RunConfig;
    fn task(&self) -> &Task<F>;
    /// Iterations completed so far.
    fn iteration(&self) -> usize;
    fn step(&mut self) -> Result<()>;
    /// Logical parameters of every client.
    fn client_models(&self) -> Vec<ModelParams<F>>;
    /// Whether all clients hold bitwise identical state.
    fn in_consensus(&self) -> bool;
    fn ledger(&self) -> &TrafficLedger;
    fn ops(&self) -> OpCounters;
    /// α of every update estimated in the last iteration.
    fn last_alphas(&self) -> &[f64] {
        &[]
    }
    /// Largest delay, in iterations, between an update's creation and its
    /// application anywhere. Zero for methods without flooding.
    fn max_staleness(&self) -> u32 {
        0
    }
}

/// Builds the simulator for `config.method`.
pub fn build<F: Real + 'static>(config: &RunConfig) -> Result<Box<dyn Simulation<F>>> {
    let topology = config.validate()?;
    let task = Task::generate(&config.task, config.seed, config.n)?;
    Ok(match config.method {
        Method::SeedFlood => Box::new(SeedFloodSim::with_task(config, task, topology)?),
        Method::Dsgd | Method::Dzsgd | Method::ChocoSgd => {
            Box::new(GossipSim::with_task(config, task, topology)?)
        }
        Method::GossipSr => Box::new(SeedGossipSim::with_task(config, task, topology)?),
    })
}

/// Everything a finished run reports.
#[derive(Debug, Clone)]
pub struct RunOutput<F> {
    pub records: Vec<MetricsRecord>,
    /// Final average model `θ̄`.
    pub final_mean: ModelParams<F>,
    /// Record with the lowest evaluation loss (train loss if there is no
    /// evaluation split).
    pub best: MetricsRecord,
    pub ledger: TrafficLedger,
    /// Consensus error after every iteration; empty unless tracking is on.
    pub consensus_trace: Vec<f64>,
    pub max_staleness: u32,
}

impl<F> RunOutput<F> {
    pub fn last(&self) -> &MetricsRecord {
        self.records.last().expect("a run records at least two rows")
    }
}

/// Current metrics of a simulation.
pub fn record<F: Real>(sim: &dyn Simulation<F>) -> Result<(MetricsRecord, ModelParams<F>)> {
    let task = sim.task();
    let models = sim.client_models();
    let gmp = evaluate_gmp(task, &models)?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for m in &models {
        let l = task.loss(m, task.train.all())?.to_f64();
        lo = lo.min(l);
        hi = hi.max(l);
    }
    let consensus = if sim.in_consensus() {
        0.0
    } else {
        consensus_error(&models, &gmp.mean)
    };
    let ledger = sim.ledger();
    let total = ledger.total();
    Ok((
        MetricsRecord {
            iteration: sim.iteration(),
            train_loss: gmp.train_loss,
            eval_loss: gmp.eval_loss,
            eval_accuracy: gmp.eval_accuracy,
            client_loss_min: lo,
            client_loss_max: hi,
            consensus_error: consensus,
            total_messages: total.messages,
            total_bytes: total.bytes,
            max_edge_bytes: ledger.max_edge_bytes(),
            ops: sim.ops(),
            alpha_variance: metrics::sample_variance(sim.last_alphas()),
        },
        gmp.mean,
    ))
}

/// Runs a simulation to `T` iterations, recording metrics at the start, every
/// evaluation period and at the end.
pub fn drive<F: Real>(sim: &mut dyn Simulation<F>) -> Result<RunOutput<F>> {
    let total = sim.config().iterations;
    let cadence = sim.config().eval_cadence();
    let track = sim.config().track_consensus;
    let mut records = Vec::new();
    let mut consensus_trace = Vec::new();
    let (first, mut mean) = record(sim)?;
    records.push(first);
    while sim.iteration() < total {
        sim.step()?;
        let t = sim.iteration();
        if track {
            let err = if sim.in_consensus() {
                0.0
            } else {
                let models = sim.client_models();
                let refs: Vec<&ModelParams<F>> = models.iter().collect();
                consensus_error(&models, &ModelParams::mean_of(&refs)?)
            };
            consensus_trace.push(err);
        }
        if t % cadence == 0 || t == total {
            let (r, m) = record(sim)?;
            records.push(r);
            mean = m;
        }
    }
    let key = |r: &MetricsRecord| r.eval_loss.unwrap_or(r.train_loss);
    let best = records
        .iter()
        .min_by(|a, b| key(a).total_cmp(&key(b)))
        .cloned()
        .expect("at least one record");
    Ok(RunOutput {
        records,
        final_mean: mean,
        best,
        ledger: sim.ledger().clone(),
        consensus_trace,
        max_staleness: sim.max_staleness(),
    })
}

/// Builds and drives a run end to end.
pub fn run<F: Real + 'static>(config: &RunConfig) -> Result<RunOutput<F>> {
    let mut sim = build::<F>(config)?;
    drive(sim.as_mut())
}
