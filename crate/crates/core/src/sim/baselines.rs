use alloc::format;
use alloc::vec::Vec;

use super::config::{Method, RunConfig};
use super::metrics::OpCounters;
use super::Simulation;
use crate::error::{Error, Result};
use crate::model::{ModelParams, Task};
use crate::protocol::{
    compress_topk, gossip_average, seed_gossip_round, Payload, SeedHistory, TrafficLedger,
    UpdateMessage,
};
use crate::real::Real;
use crate::rng::RandomStream;
use crate::subcge::BufferedModel;
use crate::topology::{MixingMatrix, Topology};
use crate::zo::{apply_update, estimate_update, sample_batch, PerturbationKind, StepSettings};

fn require_topology(config: &RunConfig, topology: Option<Topology>) -> Result<Topology> {
    topology.ok_or_else(|| {
        Error::Config(format!("{} needs at least 2 clients", config.method.name()))
    })
}

/// DSGD, DZSGD and ChocoSGD: local steps on private models with a gossip
/// round every `local_steps` iterations.
pub struct GossipSim<F> {
    config: RunConfig,
    task: Task<F>,
    topology: Topology,
    mixing: MixingMatrix,
    settings: StepSettings,
    models: Vec<BufferedModel<F>>,
    /// ChocoSGD public copies `x̂_i`, flat.
    surrogates: Vec<Vec<F>>,
    streams: Vec<RandomStream>,
    ledger: TrafficLedger,
    t: usize,
    ge_madds: u64,
    dense_madds: u64,
    last_alphas: Vec<f64>,
}

impl<F: Real> GossipSim<F> {
    pub fn new(config: &RunConfig) -> Result<Self> {
        let topology = config.validate()?;
        let task = Task::generate(&config.task, config.seed, config.n)?;
        Self::with_task(config, task, topology)
    }

    pub(crate) fn with_task(config: &RunConfig, task: Task<F>, topology: Option<Topology>) -> Result<Self> {
        if !matches!(config.method, Method::Dsgd | Method::Dzsgd | Method::ChocoSgd) {
            return Err(Error::Config(format!(
                "{} is not a gossip baseline",
                config.method.name()
            )));
        }
        let topology = require_topology(config, topology)?;
        Self::with_mixing(config, task, MixingMatrix::metropolis(&topology), topology)
    }

    /// Uses an explicit mixing matrix instead of Metropolis weights.
    pub fn with_mixing(
        config: &RunConfig,
        task: Task<F>,
        mixing: MixingMatrix,
        topology: Topology,
    ) -> Result<Self> {
        mixing.validate()?;
        if mixing.n() != config.n {
            return Err(Error::InvalidMixing(format!(
                "mixing matrix for {} clients, config has {}",
                mixing.n(),
                config.n
            )));
        }
        let init = task.initial_params(config.seed)?;
        let surrogates = if config.method == Method::ChocoSgd {
            alloc::vec![init.to_flat(); config.n]
        } else {
            Vec::new()
        };
        Ok(GossipSim {
            settings: StepSettings {
                kind: PerturbationKind::FullGaussian,
                epsilon: config.epsilon,
                batch_size: config.batch_size,
                learning_rate: config.learning_rate,
                n_clients: 1,
            },
            models: (0..config.n).map(|_| BufferedModel::new(init.clone(), 1)).collect(),
            streams: (0..config.n).map(|i| config.client_stream(i)).collect(),
            config: config.clone(),
            task,
            topology,
            mixing,
            surrogates,
            ledger: TrafficLedger::new(),
            t: 0,
            ge_madds: 0,
            dense_madds: 0,
            last_alphas: Vec::new(),
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    fn local_step(&mut self, i: usize) -> Result<()> {
        let t = self.t;
        match self.config.method {
            Method::Dzsgd => {
                let (update, madds) = estimate_update(
                    &self.task,
                    &mut self.models[i],
                    None,
                    &mut self.streams[i],
                    self.task.shard(i),
                    &self.settings,
                    i as u32,
                    t as u32,
                )?;
                self.ge_madds += madds;
                self.last_alphas.push(update.alpha);
                apply_update(
                    &mut self.models[i],
                    None,
                    update.seed,
                    PerturbationKind::FullGaussian,
                    0,
                    update.coefficient,
                )?;
            }
            _ => {
                let batch = sample_batch(&mut self.streams[i], self.task.shard(i), self.config.batch_size)?;
                let grad = self
                    .task
                    .true_gradient(&self.models[i].base, self.task.train.batch(&batch))?;
                self.models[i]
                    .base
                    .axpy(F::from_f64(-self.config.learning_rate), &grad);
            }
        }
        Ok(())
    }

    fn account_dense(&mut self) {
        let payload = Payload::Dense {
            elements: self.task.dim(),
            bytes_per_element: F::BYTES,
        };
        for (u, v) in self.topology.edges() {
            self.ledger.account(self.t as u32, u, v, payload);
            self.ledger.account(self.t as u32, v, u, payload);
        }
    }

    fn mixing_madds(&self) -> u64 {
        let nnz: usize = (0..self.config.n)
            .map(|i| self.mixing.row(i).iter().filter(|w| **w != 0.0).count())
            .sum();
        (nnz * self.task.dim()) as u64
    }

    fn gossip(&mut self) -> Result<()> {
        self.account_dense();
        let mut bases: Vec<ModelParams<F>> = self.models.iter().map(|m| m.base.clone()).collect();
        gossip_average(&mut bases, &self.mixing)?;
        for (m, b) in self.models.iter_mut().zip(bases) {
            m.base = b;
        }
        self.dense_madds += self.mixing_madds();
        Ok(())
    }

    fn choco(&mut self) -> Result<()> {
        let n = self.config.n;
        let d = self.task.dim();
        let mut sent = Vec::with_capacity(n);
        for i in 0..n {
            let x = self.models[i].base.to_flat();
            let delta: Vec<F> = x
                .iter()
                .zip(&self.surrogates[i])
                .map(|(a, b)| *a - *b)
                .collect();
            sent.push(compress_topk(&delta, self.config.keep_fraction)?);
        }
        for (u, v) in self.topology.edges() {
            self.ledger.account(self.t as u32, u, v, sent[u].payload());
            self.ledger.account(self.t as u32, v, u, sent[v].payload());
        }
        for (hat, q) in self.surrogates.iter_mut().zip(&sent) {
            q.add_to(hat, F::ONE);
        }
        let gamma = F::from_f64(self.config.consensus_step);
        for i in 0..n {
            let mut x = self.models[i].base.to_flat();
            for (j, &w) in self.mixing.row(i).iter().enumerate() {
                if w == 0.0 || j == i {
                    continue;
                }
                let w = gamma * F::from_f64(w);
                for k in 0..d {
                    x[k] += w * (self.surrogates[j][k] - self.surrogates[i][k]);
                }
            }
            self.models[i].base = ModelParams::from_flat(self.task.shapes(), &x)?;
        }
        self.dense_madds += self.mixing_madds();
        Ok(())
    }

    fn step_inner(&mut self) -> Result<()> {
        self.last_alphas.clear();
        for i in 0..self.config.n {
            self.local_step(i)?;
        }
        if (self.t + 1) % self.config.local_steps == 0 {
            match self.config.method {
                Method::ChocoSgd => self.choco()?,
                _ => self.gossip()?,
            }
        }
        self.t += 1;
        Ok(())
    }
}

impl<F: Real> Simulation<F> for GossipSim<F> {
    fn config(&self) -> &RunConfig {
        &self.config
    }

    fn task(&self) -> &Task<F> {
        &self.task
    }

    fn iteration(&self) -> usize {
        self.t
    }

    fn step(&mut self) -> Result<()> {
        let t = self.t;
        self.step_inner().map_err(|e| e.at(t))
    }

    fn client_models(&self) -> Vec<ModelParams<F>> {
        self.models.iter().map(|m| m.base.clone()).collect()
    }

    fn in_consensus(&self) -> bool {
        self.models.iter().all(|m| m.base.bit_eq(&self.models[0].base))
    }

    fn ledger(&self) -> &TrafficLedger {
        &self.ledger
    }

    fn ops(&self) -> OpCounters {
        let mut ops = OpCounters {
            ge_madds: self.ge_madds,
            dense_madds: self.dense_madds,
            ..OpCounters::default()
        };
        for m in &self.models {
            ops.dense_madds += m.buffer.counters.dense_madds;
        }
        ops
    }

    fn last_alphas(&self) -> &[f64] {
        &self.last_alphas
    }
}

/// Seed gossip with shared randomness: clients exchange their whole update
/// history and average per-update coefficients with their neighbors. Every
/// coefficient change costs a full re-application, which this simulator counts.
pub struct SeedGossipSim<F> {
    config: RunConfig,
    task: Task<F>,
    topology: Topology,
    mixing: MixingMatrix,
    settings: StepSettings,
    models: Vec<BufferedModel<F>>,
    histories: Vec<SeedHistory>,
    streams: Vec<RandomStream>,
    ledger: TrafficLedger,
    t: usize,
    ge_madds: u64,
    messages_applied: u64,
    reapplications: u64,
    reapplication_trace: Vec<u64>,
    last_alphas: Vec<f64>,
}

impl<F: Real> SeedGossipSim<F> {
    pub fn new(config: &RunConfig) -> Result<Self> {
        let topology = config.validate()?;
        let task = Task::generate(&config.task, config.seed, config.n)?;
        Self::with_task(config, task, topology)
    }

    pub(crate) fn with_task(config: &RunConfig, task: Task<F>, topology: Option<Topology>) -> Result<Self> {
        let topology = require_topology(config, topology)?;
        let init = task.initial_params(config.seed)?;
        Ok(SeedGossipSim {
            settings: StepSettings {
                kind: PerturbationKind::FullGaussian,
                epsilon: config.epsilon,
                batch_size: config.batch_size,
                learning_rate: config.learning_rate,
                n_clients: 1,
            },
            mixing: MixingMatrix::metropolis(&topology),
            models: (0..config.n).map(|_| BufferedModel::new(init.clone(), 1)).collect(),
            histories: alloc::vec![SeedHistory::new(); config.n],
            streams: (0..config.n).map(|i| config.client_stream(i)).collect(),
            config: config.clone(),
            task,
            topology,
            ledger: TrafficLedger::new(),
            t: 0,
            ge_madds: 0,
            messages_applied: 0,
            reapplications: 0,
            reapplication_trace: Vec::new(),
            last_alphas: Vec::new(),
        })
    }

    /// Cumulative re-application count after each iteration.
    pub fn reapplication_trace(&self) -> &[u64] {
        &self.reapplication_trace
    }

    pub fn history_len(&self, client: usize) -> usize {
        self.histories[client].len()
    }

    fn step_inner(&mut self) -> Result<()> {
        let t = self.t;
        self.last_alphas.clear();
        for i in 0..self.config.n {
            let (update, madds) = estimate_update(
                &self.task,
                &mut self.models[i],
                None,
                &mut self.streams[i],
                self.task.shard(i),
                &self.settings,
                i as u32,
                t as u32,
            )?;
            self.ge_madds += madds;
            self.last_alphas.push(update.alpha);
            apply_update(
                &mut self.models[i],
                None,
                update.seed,
                PerturbationKind::FullGaussian,
                0,
                update.coefficient,
            )?;
            self.messages_applied += 1;
            self.histories[i].record_own(UpdateMessage::from(&update))?;
        }
        for (u, v) in self.topology.edges() {
            let (hu, hv) = (self.histories[u].len() as u64, self.histories[v].len() as u64);
            self.ledger.account_many(t as u32, u, v, Payload::SrEntry, hu);
            self.ledger.account_many(t as u32, v, u, Payload::SrEntry, hv);
        }
        let changes = seed_gossip_round(&mut self.histories, &self.mixing)?;
        for (i, list) in changes.iter().enumerate() {
            for ch in list {
                apply_update(
                    &mut self.models[i],
                    None,
                    ch.message.seed,
                    PerturbationKind::FullGaussian,
                    0,
                    ch.delta * ch.message.coefficient,
                )?;
                self.reapplications += 1;
            }
        }
        self.reapplication_trace.push(self.reapplications);
        self.t += 1;
        Ok(())
    }
}

impl<F: Real> Simulation<F> for SeedGossipSim<F> {
    fn config(&self) -> &RunConfig {
        &self.config
    }

    fn task(&self) -> &Task<F> {
        &self.task
    }

    fn iteration(&self) -> usize {
        self.t
    }

    fn step(&mut self) -> Result<()> {
        let t = self.t;
        self.step_inner().map_err(|e| e.at(t))
    }

    fn client_models(&self) -> Vec<ModelParams<F>> {
        self.models.iter().map(|m| m.base.clone()).collect()
    }

    fn in_consensus(&self) -> bool {
        self.models.iter().all(|m| m.base.bit_eq(&self.models[0].base))
    }

    fn ledger(&self) -> &TrafficLedger {
        &self.ledger
    }

    fn ops(&self) -> OpCounters {
        let mut ops = OpCounters {
            ge_madds: self.ge_madds,
            messages_applied: self.messages_applied,
            reapplications: self.reapplications,
            ..OpCounters::default()
        };
        for m in &self.models {
            ops.dense_madds += m.buffer.counters.dense_madds;
        }
        ops
    }

    fn last_alphas(&self) -> &[f64] {
        &self.last_alphas
    }
}
