use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::{LayerShape, TaskConfig};
use crate::rng::{RandomStream, Seed, StreamDomain};
use crate::topology::Topology;
use crate::zo::{PerturbationKind, DEFAULT_EPSILON};

pub const DEFAULT_RANK: usize = 32;
pub const DEFAULT_TAU: usize = 1000;
pub const DEFAULT_LOCAL_STEPS: usize = 5;
pub const DEFAULT_KEEP_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    SeedFlood,
    Dsgd,
    Dzsgd,
    ChocoSgd,
    /// Seed gossip with coefficient averaging; a cost diagnostic.
    GossipSr,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::SeedFlood => "seedflood",
            Method::Dsgd => "dsgd",
            Method::Dzsgd => "dzsgd",
            Method::ChocoSgd => "chocosgd",
            Method::GossipSr => "gossip-sr",
        }
    }

    pub fn default_perturbation(self) -> PerturbationKind {
        match self {
            Method::SeedFlood => PerturbationKind::SubCge,
            _ => PerturbationKind::FullGaussian,
        }
    }

    pub fn is_zeroth_order(self) -> bool {
        !matches!(self, Method::Dsgd | Method::ChocoSgd)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TopologySpec {
    Ring,
    /// Non-toroidal grid; `rows · cols` must equal `n`.
    Grid { rows: usize, cols: usize },
    Torus { rows: usize, cols: usize },
    Path,
    Star,
    Complete,
    /// Random spanning tree plus extra edges with probability `p_extra`.
    Random { p_extra: f64, seed: Option<Seed> },
    Edges(Vec<(usize, usize)>),
}

impl TopologySpec {
    pub fn build(&self, n: usize, run_seed: Seed) -> Result<Topology> {
        let check_grid = |rows: usize, cols: usize| {
            if rows.checked_mul(cols) != Some(n) {
                return Err(Error::Config(format!(
                    "grid {rows}x{cols} does not have n = {n} nodes"
                )));
            }
            Ok(())
        };
        match self {
            TopologySpec::Ring => Topology::ring(n),
            TopologySpec::Grid { rows, cols } => {
                check_grid(*rows, *cols)?;
                Topology::mesh_grid(*rows, *cols)
            }
            TopologySpec::Torus { rows, cols } => {
                check_grid(*rows, *cols)?;
                Topology::torus(*rows, *cols)
            }
            TopologySpec::Path => Topology::path(n),
            TopologySpec::Star => Topology::star(n),
            TopologySpec::Complete => Topology::complete(n),
            TopologySpec::Random { p_extra, seed } => {
                if !(0.0..=1.0).contains(p_extra) {
                    return Err(Error::Config(format!("p_extra {p_extra} outside [0, 1]")));
                }
                let seed = seed.unwrap_or_else(|| {
                    RandomStream::derived(run_seed, StreamDomain::Topology, 1).next_seed()
                });
                Topology::random_connected(n, *p_extra, seed)
            }
            TopologySpec::Edges(edges) => Topology::custom(n, edges),
        }
    }
}

/// Everything needed to reproduce one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub method: Method,
    pub n: usize,
    pub topology: TopologySpec,
    pub task: TaskConfig,
    /// Number of iterations `T`. For the baselines one iteration is one local step.
    pub iterations: usize,
    pub learning_rate: f64,
    pub epsilon: f64,
    /// Subspace refresh period `τ`.
    pub tau: usize,
    pub rank: usize,
    /// Flooding hops per iteration. `None` floods the full diameter; `Some(0)`
    /// disables communication and each client trains alone.
    pub hops: Option<usize>,
    /// Local steps between gossip rounds (baselines only).
    pub local_steps: usize,
    pub batch_size: usize,
    /// Metrics cadence; `None` means every `T/10` iterations.
    pub eval_every: Option<usize>,
    pub seed: Seed,
    /// Overrides the method's default perturbation family.
    pub perturbation: Option<PerturbationKind>,
    /// Top-K keep fraction for ChocoSGD.
    pub keep_fraction: f64,
    /// ChocoSGD consensus step size `γ`.
    pub consensus_step: f64,
    pub sender_exclusion: bool,
    /// Record consensus error after every iteration, not only at evaluations.
    pub track_consensus: bool,
}

impl RunConfig {
    pub fn new(method: Method, n: usize, topology: TopologySpec, task: TaskConfig) -> Self {
        RunConfig {
            method,
            n,
            topology,
            task,
            iterations: 1000,
            learning_rate: 1e-2,
            epsilon: DEFAULT_EPSILON,
            tau: DEFAULT_TAU,
            rank: DEFAULT_RANK,
            hops: None,
            local_steps: DEFAULT_LOCAL_STEPS,
            batch_size: 16,
            eval_every: None,
            seed: Seed(0),
            perturbation: None,
            keep_fraction: DEFAULT_KEEP_FRACTION,
            consensus_step: 1.0,
            sender_exclusion: false,
            track_consensus: false,
        }
    }

    pub fn perturbation_kind(&self) -> PerturbationKind {
        self.perturbation
            .unwrap_or_else(|| self.method.default_perturbation())
    }

    pub fn eval_cadence(&self) -> usize {
        self.eval_every
            .unwrap_or(self.iterations / 10)
            .max(1)
    }

    /// Checks every invariant that does not need the data. Returns the built
    /// topology (`None` for a single client) so callers need not build it twice.
    pub fn validate(&self) -> Result<Option<Topology>> {
        self.task.validate()?;
        if self.n < 1 {
            return Err(Error::Config("n must be >= 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("T must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon {} must be positive", self.epsilon)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.rank == 0 {
            return Err(Error::Config("rank r must be >= 1".into()));
        }
        if self.tau == 0 || self.tau > self.iterations {
            return Err(Error::Config(format!(
                "tau = {} must satisfy 1 <= tau <= T = {}",
                self.tau, self.iterations
            )));
        }
        if self.local_steps == 0 {
            return Err(Error::Config("local_steps must be >= 1".into()));
        }
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "keep fraction {} outside (0, 1]",
                self.keep_fraction
            )));
        }
        if !(self.consensus_step > 0.0 && self.consensus_step.is_finite()) {
            return Err(Error::Config(format!(
                "consensus step {} must be positive",
                self.consensus_step
            )));
        }
        if self.perturbation_kind() == PerturbationKind::SubCge {
            for (layer, shape) in self.task.spec.layer_shapes().iter().enumerate() {
                if let LayerShape::Matrix { rows, cols } = *shape {
                    if self.rank > rows.min(cols) {
                        return Err(Error::Config(format!(
                            "rank r = {} exceeds min(rows, cols) of layer {layer} ({rows}x{cols})",
                            self.rank
                        )));
                    }
                }
            }
        }
        if self.perturbation_kind() == PerturbationKind::SubCge && self.method != Method::SeedFlood {
            return Err(Error::Config(format!(
                "subcge perturbations are only supported by seedflood, not {}",
                self.method.name()
            )));
        }
        let topology = if self.n == 1 {
            None
        } else {
            Some(self.topology.build(self.n, self.seed)?)
        };
        if self.method == Method::SeedFlood {
            let d = topology.as_ref().map_or(0, Topology::diameter);
            if let Some(k) = self.hops {
                if k > d {
                    return Err(Error::Config(format!(
                        "flood hops k = {k} exceeds the diameter D = {d}"
                    )));
                }
                if k > 0 && d.div_ceil(k) > self.tau {
                    return Err(Error::Config(format!(
                        "delay bound ceil(D/k) = {} exceeds tau = {}",
                        d.div_ceil(k),
                        self.tau
                    )));
                }
            }
        } else if self.n == 1 {
            return Err(Error::Config(format!(
                "{} needs at least 2 clients",
                self.method.name()
            )));
        }
        Ok(topology)
    }

    /// Effective hops per iteration for a graph of diameter `d`.
    pub fn effective_hops(&self, diameter: usize) -> usize {
        if self.n == 1 {
            return 0;
        }
        self.hops.unwrap_or(diameter)
    }

    /// Stream that feeds client `i` its batches and seeds.
    pub fn client_stream(&self, client: usize) -> RandomStream {
        RandomStream::derived(self.seed, StreamDomain::ClientPrivate, client as u32)
    }

    /// Global seed `s_glob` for subspace refreshes.
    pub fn global_seed(&self) -> Seed {
        RandomStream::derived(self.seed, StreamDomain::Initialization, 1).next_seed()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> RunConfig {
        let mut c = RunConfig::new(
            Method::SeedFlood,
            16,
            TopologySpec::Ring,
            TaskConfig::logistic(8, 8),
        );
        c.rank = 4;
        c
    }

    #[test]
    fn rank_must_fit_every_matrix() {
        let mut c = cfg();
        c.rank = 9;
        let msg = alloc::string::ToString::to_string(&c.validate().unwrap_err());
        assert!(msg.contains("r = 9") && msg.contains("8x8"), "{msg}");
        c.rank = 8;
        c.validate().unwrap();
        c.method = Method::Dzsgd;
        c.rank = 32;
        c.validate().unwrap();
    }

    #[test]
    fn hops_beyond_diameter_rejected() {
        let mut c = cfg();
        c.hops = Some(9);
        let err = c.validate().unwrap_err();
        let msg = alloc::string::ToString::to_string(&err);
        assert!(msg.contains("k = 9") && msg.contains("D = 8"), "{msg}");
        c.hops = Some(8);
        c.validate().unwrap();
    }

    #[test]
    fn tau_bounds() {
        let mut c = cfg();
        c.iterations = 100;
        assert!(c.validate().is_err());
        c.tau = 100;
        c.validate().unwrap();
        c.tau = 3;
        c.hops = Some(2);
        assert!(c.validate().is_err());
    }

    #[test]
    fn grid_size_must_match() {
        let mut c = cfg();
        c.topology = TopologySpec::Grid { rows: 3, cols: 4 };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn baselines_reject_subcge() {
        let mut c = cfg();
        c.method = Method::Dzsgd;
        c.perturbation = Some(PerturbationKind::SubCge);
        assert!(c.validate().is_err());
    }
}
