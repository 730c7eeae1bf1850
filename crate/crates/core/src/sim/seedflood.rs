use alloc::vec::Vec;

use super::config::RunConfig;
use super::metrics::OpCounters;
use super::Simulation;
use crate::error::{Error, Result};
use crate::model::{ModelParams, Task};
use crate::protocol::{FloodNetwork, TrafficLedger, UpdateMessage};
use crate::real::Real;
use crate::rng::RandomStream;
use crate::subcge::{refresh_basis, BufferedModel, SubspaceBasis};
use crate::topology::Topology;
use crate::zo::{apply_update, apply_update_dense, estimate_update, PerturbationKind, StepSettings};

/// Flooding-based seed/scalar training.
///
/// Per iteration: refresh the shared subspace when `t mod τ = 0`, let every
/// client estimate one update, flood the messages for `k` hops and apply
/// everything newly received in `(iteration, origin)` order.
pub struct SeedFloodSim<F> {
    config: RunConfig,
    task: Task<F>,
    topology: Option<Topology>,
    hops: usize,
    kind: PerturbationKind,
    settings: StepSettings,
    clients: Vec<BufferedModel<F>>,
    streams: Vec<RandomStream>,
    basis: Option<SubspaceBasis<F>>,
    /// Previous epoch's basis, kept for late messages under delayed flooding.
    archived: Option<SubspaceBasis<F>>,
    network: Option<FloodNetwork>,
    ledger: TrafficLedger,
    t: usize,
    ge_madds: u64,
    messages_applied: u64,
    last_alphas: Vec<f64>,
    max_staleness: u32,
}

impl<F: Real> SeedFloodSim<F> {
    pub fn new(config: &RunConfig) -> Result<Self> {
        let topology = config.validate()?;
        let task = Task::generate(&config.task, config.seed, config.n)?;
        Self::with_task(config, task, topology)
    }

    pub(crate) fn with_task(config: &RunConfig, task: Task<F>, topology: Option<Topology>) -> Result<Self> {
        let n = config.n;
        let hops = config.effective_hops(topology.as_ref().map_or(0, Topology::diameter));
        let kind = config.perturbation_kind();
        let settings = StepSettings {
            kind,
            epsilon: config.epsilon,
            batch_size: config.batch_size,
            learning_rate: config.learning_rate,
            // without communication each client keeps its whole step
            n_clients: if hops == 0 { 1 } else { n },
        };
        let init = task.initial_params(config.seed)?;
        let rank = match kind {
            PerturbationKind::SubCge => config.rank,
            PerturbationKind::FullGaussian => 1,
        };
        let clients = (0..n).map(|_| BufferedModel::new(init.clone(), rank)).collect();
        let streams = (0..n).map(|i| config.client_stream(i)).collect();
        let network = match (&topology, hops) {
            (Some(t), k) if k > 0 => {
                Some(FloodNetwork::new(t.clone()).with_sender_exclusion(config.sender_exclusion))
            }
            _ => None,
        };
        Ok(SeedFloodSim {
            config: config.clone(),
            task,
            topology,
            hops,
            kind,
            settings,
            clients,
            streams,
            basis: None,
            archived: None,
            network,
            ledger: TrafficLedger::new(),
            t: 0,
            ge_madds: 0,
            messages_applied: 0,
            last_alphas: Vec::new(),
            max_staleness: 0,
        })
    }

    pub fn hops(&self) -> usize {
        self.hops
    }

    pub fn topology(&self) -> Option<&Topology> {
        self.topology.as_ref()
    }

    pub fn basis(&self) -> Option<&SubspaceBasis<F>> {
        self.basis.as_ref()
    }

    /// Raw buffered client state (base weights plus coordinate buffer).
    pub fn buffered_clients(&self) -> &[BufferedModel<F>] {
        &self.clients
    }

    fn refresh(&mut self) -> Result<()> {
        if let Some(old) = &self.basis {
            for c in &mut self.clients {
                c.flush(old)?;
            }
        }
        let fresh = refresh_basis(
            self.config.global_seed(),
            self.t as u64,
            self.config.tau as u64,
            self.task.shapes(),
            self.config.rank,
        )?;
        self.archived = self.basis.replace(fresh);
        Ok(())
    }

    fn apply(&mut self, client: usize, msg: &UpdateMessage) -> Result<()> {
        let model = &mut self.clients[client];
        match self.kind {
            PerturbationKind::FullGaussian => apply_update(
                model,
                None,
                msg.seed,
                PerturbationKind::FullGaussian,
                msg.epoch,
                msg.coefficient,
            )?,
            PerturbationKind::SubCge => {
                let basis = self
                    .basis
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("no subspace basis".into()))?;
                if msg.epoch == basis.epoch() {
                    apply_update(
                        model,
                        Some(basis),
                        msg.seed,
                        PerturbationKind::SubCge,
                        msg.epoch,
                        msg.coefficient,
                    )?;
                } else if let Some(old) = self.archived.as_ref().filter(|b| b.epoch() == msg.epoch) {
                    apply_update_dense(model, old, msg.seed, msg.epoch, msg.coefficient)?;
                } else {
                    return Err(Error::EpochMismatch {
                        expected: basis.epoch(),
                        found: msg.epoch,
                    });
                }
            }
        }
        self.messages_applied += 1;
        Ok(())
    }

    fn step_inner(&mut self) -> Result<()> {
        let t = self.t;
        if self.kind == PerturbationKind::SubCge && t % self.config.tau == 0 {
            self.refresh()?;
        }
        let n = self.config.n;
        let mut fresh = Vec::with_capacity(n);
        self.last_alphas.clear();
        for i in 0..n {
            let (update, madds) = estimate_update(
                &self.task,
                &mut self.clients[i],
                self.basis.as_ref(),
                &mut self.streams[i],
                self.task.shard(i),
                &self.settings,
                i as u32,
                t as u32,
            )?;
            self.ge_madds += madds;
            self.last_alphas.push(update.alpha);
            fresh.push(UpdateMessage::from(&update));
        }
        match self.network.as_mut() {
            None => {
                for (i, msg) in fresh.iter().enumerate() {
                    self.apply(i, msg)?;
                }
            }
            Some(net) => {
                let report = net.round(t as u32, self.hops, &fresh, &mut self.ledger)?;
                let keep = net.retention_rounds(self.hops) as usize;
                if t + 1 > keep {
                    net.prune_before((t + 1 - keep) as u32);
                }
                self.max_staleness = self.max_staleness.max(report.max_staleness());
                for (client, msgs) in report.by_client(n).iter().enumerate() {
                    for msg in msgs {
                        self.apply(client, msg)?;
                    }
                }
            }
        }
        self.t += 1;
        Ok(())
    }
}

impl<F: Real> Simulation<F> for SeedFloodSim<F> {
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
        self.clients
            .iter()
            .map(|c| match &self.basis {
                Some(b) => c.logical(b),
                None => c.base.clone(),
            })
            .collect()
    }

    fn in_consensus(&self) -> bool {
        self.clients.iter().all(|c| c.bit_eq(&self.clients[0]))
    }

    fn ledger(&self) -> &TrafficLedger {
        &self.ledger
    }

    fn ops(&self) -> OpCounters {
        let mut ops = OpCounters {
            ge_madds: self.ge_madds,
            messages_applied: self.messages_applied,
            ..OpCounters::default()
        };
        for c in &self.clients {
            ops.coordinate_updates += c.buffer.counters.coordinate_updates;
            ops.flush_madds += c.buffer.counters.flush_madds;
            ops.dense_madds += c.buffer.counters.dense_madds;
        }
        ops
    }

    fn last_alphas(&self) -> &[f64] {
        &self.last_alphas
    }

    fn max_staleness(&self) -> u32 {
        self.max_staleness
    }
}
