use seedflood_core::model::{ModelParams, Task, TaskConfig};
use seedflood_core::protocol::gossip_average;
use seedflood_core::sim::{
    build, consensus_error, evaluate_gmp, run, GossipSim, Method, RunConfig, SeedFloodSim,
    Simulation, TopologySpec,
};
use seedflood_core::subcge::{refresh_basis, BufferedModel, SubspaceBasis};
use seedflood_core::topology::{MixingMatrix, Topology};
use seedflood_core::zo::{apply_update, estimate_update, PerturbationKind, StepSettings};
use seedflood_core::{Error, RandomStream, Seed};

fn logistic(method: Method, n: usize, topology: TopologySpec) -> RunConfig {
    let mut cfg = RunConfig::new(method, n, topology, TaskConfig::logistic(6, 8));
    cfg.iterations = 120;
    cfg.tau = 30;
    cfg.rank = 4;
    cfg.batch_size = 8;
    cfg.learning_rate = 0.01;
    cfg.seed = Seed(7);
    cfg
}

#[test]
fn single_client_is_plain_subspace_zo_sgd() {
    let cfg = logistic(Method::SeedFlood, 1, TopologySpec::Ring);
    let mut sim = SeedFloodSim::<f64>::new(&cfg).unwrap();
    assert_eq!(sim.hops(), 0);

    let task = Task::<f64>::generate(&cfg.task, cfg.seed, 1).unwrap();
    let mut model = BufferedModel::new(task.initial_params(cfg.seed).unwrap(), cfg.rank);
    let mut stream = cfg.client_stream(0);
    let settings = StepSettings {
        kind: PerturbationKind::SubCge,
        epsilon: cfg.epsilon,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        n_clients: 1,
    };
    let mut basis: Option<SubspaceBasis<f64>> = None;
    for t in 0..cfg.iterations {
        if t % cfg.tau == 0 {
            if let Some(b) = &basis {
                model.flush(b).unwrap();
            }
            basis = Some(
                refresh_basis(cfg.global_seed(), t as u64, cfg.tau as u64, task.shapes(), cfg.rank)
                    .unwrap(),
            );
        }
        let (u, _) = estimate_update(
            &task,
            &mut model,
            basis.as_ref(),
            &mut stream,
            task.shard(0),
            &settings,
            0,
            t as u32,
        )
        .unwrap();
        apply_update(&mut model, basis.as_ref(), u.seed, u.kind, u.epoch, u.coefficient).unwrap();
        sim.step().unwrap();
        assert!(sim.client_models()[0].bit_eq(&model.logical(basis.as_ref().unwrap())));
    }
    assert_eq!(sim.ledger().total().bytes, 0);
}

#[test]
fn dzsgd_without_mixing_is_independent_runs() {
    let mut cfg = logistic(Method::Dzsgd, 4, TopologySpec::Ring);
    cfg.local_steps = 3;
    let task = Task::<f64>::generate(&cfg.task, cfg.seed, cfg.n).unwrap();
    let topology = Topology::ring(4).unwrap();
    let mut sim = GossipSim::with_mixing(&cfg, task.clone(), MixingMatrix::identity(4), topology).unwrap();
    for _ in 0..cfg.iterations {
        sim.step().unwrap();
    }
    let settings = StepSettings {
        kind: PerturbationKind::FullGaussian,
        epsilon: cfg.epsilon,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        n_clients: 1,
    };
    let models = sim.client_models();
    for (i, got) in models.iter().enumerate() {
        let mut model = BufferedModel::new(task.initial_params(cfg.seed).unwrap(), 1);
        let mut stream = cfg.client_stream(i);
        for t in 0..cfg.iterations {
            let (u, _) =
                estimate_update(&task, &mut model, None, &mut stream, task.shard(i), &settings, i as u32, t as u32)
                    .unwrap();
            apply_update(&mut model, None, u.seed, u.kind, u.epoch, u.coefficient).unwrap();
        }
        assert!(got.bit_eq(&model.base), "client {i}");
    }
    assert!(consensus_error(&models, &models[0]) > 0.0);
}

#[test]
fn no_communication_ablation_is_clearly_worse() {
    let mut cfg = RunConfig::new(Method::SeedFlood, 16, TopologySpec::Ring, TaskConfig::logistic(10, 20));
    cfg.iterations = 2000;
    cfg.tau = 20;
    cfg.rank = 10;
    cfg.batch_size = 16;
    cfg.learning_rate = 0.01;
    cfg.seed = Seed(81);
    let flooded = run::<f64>(&cfg).unwrap().last().train_loss;
    cfg.hops = Some(0);
    let alone = run::<f64>(&cfg).unwrap();
    assert_eq!(alone.ledger.total().bytes, 0);
    let alone = alone.last().train_loss;
    assert!(flooded <= 0.75 * alone, "flooded {flooded}, isolated {alone}");
}

#[test]
fn seedflood_gmp_matches_every_client_while_dzsgd_drifts() {
    let cfg = logistic(Method::SeedFlood, 8, TopologySpec::Ring);
    let mut sim = build::<f64>(&cfg).unwrap();
    for _ in 0..cfg.iterations {
        sim.step().unwrap();
    }
    let models = sim.client_models();
    let task = sim.task();
    let gmp = evaluate_gmp(task, &models).unwrap();
    for m in &models {
        assert_eq!(task.loss(m, task.eval.all()).unwrap(), gmp.eval_loss.unwrap());
    }

    let mut dz = logistic(Method::Dzsgd, 8, TopologySpec::Ring);
    dz.perturbation = Some(PerturbationKind::FullGaussian);
    let out = run::<f64>(&dz).unwrap();
    let last = out.last();
    assert!(last.consensus_error > 0.0);
    assert!(last.client_loss_spread() > 0.0);
}

#[test]
fn seedflood_records_zero_consensus_error_with_full_flooding() {
    let mut cfg = logistic(Method::SeedFlood, 9, TopologySpec::Grid { rows: 3, cols: 3 });
    cfg.track_consensus = true;
    cfg.eval_every = Some(10);
    let out = run::<f64>(&cfg).unwrap();
    assert_eq!(out.records.len(), 13);
    assert!(out.records.iter().all(|r| r.consensus_error == 0.0));
    assert!(out.consensus_trace.iter().all(|&e| e == 0.0));
    assert_eq!(out.consensus_trace.len(), cfg.iterations);
    assert_eq!(out.max_staleness, 0);
}

#[test]
fn runs_are_reproducible() {
    for method in [Method::SeedFlood, Method::Dsgd, Method::Dzsgd, Method::ChocoSgd, Method::GossipSr] {
        let mut cfg = logistic(method, 5, TopologySpec::Ring);
        cfg.iterations = 40;
        cfg.tau = 20;
        let a = run::<f64>(&cfg).unwrap();
        let b = run::<f64>(&cfg).unwrap();
        assert_eq!(a.records, b.records, "{}", method.name());
        assert!(a.final_mean.bit_eq(&b.final_mean));
        assert_eq!(a.ledger, b.ledger);
    }
}

#[test]
fn ledger_rows_sum_to_totals() {
    for method in [Method::SeedFlood, Method::Dsgd, Method::ChocoSgd, Method::GossipSr] {
        let mut cfg = logistic(method, 6, TopologySpec::Ring);
        cfg.iterations = 30;
        cfg.tau = 30;
        let out = run::<f64>(&cfg).unwrap();
        let rows = out.ledger.rows();
        let bytes: u64 = rows.iter().map(|r| r.bytes).sum();
        let messages: u64 = rows.iter().map(|r| r.messages).sum();
        let total = out.ledger.total();
        assert_eq!((messages, bytes), (total.messages, total.bytes), "{}", method.name());
        assert_eq!(out.last().total_bytes, total.bytes);
        assert!(total.bytes > 0);
    }
}

#[test]
fn seedflood_moves_fewer_bytes_than_dense_gossip() {
    let mut cfg = logistic(Method::SeedFlood, 8, TopologySpec::Ring);
    cfg.iterations = 50;
    cfg.tau = 50;
    let flood = run::<f64>(&cfg).unwrap().ledger.max_edge_bytes();
    cfg.method = Method::Dzsgd;
    cfg.local_steps = 1;
    let dense = run::<f64>(&cfg).unwrap().ledger.max_edge_bytes();
    let d = 48.0;
    let bound = d * 4.0 / (2.0 * 8.0 * 28.0);
    assert!(dense as f64 >= bound * flood as f64, "{dense} vs {flood}");
}

#[test]
fn gossip_contracts_towards_the_mean() {
    let topology = Topology::ring(10).unwrap();
    let w = MixingMatrix::metropolis(&topology);
    let shapes = TaskConfig::logistic(3, 3).spec.layer_shapes();
    let mut rng = RandomStream::from_seed(Seed(3));
    let mut models: Vec<ModelParams<f64>> = (0..10)
        .map(|_| {
            let layers = shapes
                .iter()
                .map(|s| (0..s.len()).map(|_| rng.gaussian()).collect())
                .collect();
            ModelParams::from_layers(&shapes, layers).unwrap()
        })
        .collect();
    let refs: Vec<&ModelParams<f64>> = models.iter().collect();
    let mean = ModelParams::mean_of(&refs).unwrap();
    let spread = |ms: &[ModelParams<f64>]| -> f64 {
        ms.iter()
            .map(|m| {
                let mut diff = m.clone();
                diff.axpy(-1.0, &mean);
                diff.l2_norm().powi(2)
            })
            .sum()
    };
    let mut last = spread(&models);
    for _ in 0..50 {
        gossip_average(&mut models, &w).unwrap();
        let now = spread(&models);
        assert!(now <= last * (1.0 + 1e-12));
        last = now;
    }
    let refs: Vec<&ModelParams<f64>> = models.iter().collect();
    assert!(ModelParams::mean_of(&refs).unwrap().max_abs_diff(&mean) < 1e-12);
    assert!(consensus_error(&models, &mean) < 0.2);
}

#[test]
fn invalid_configs_are_rejected_up_front() {
    let mut cfg = logistic(Method::SeedFlood, 16, TopologySpec::Ring);
    cfg.hops = Some(9);
    match SeedFloodSim::<f64>::new(&cfg) {
        Err(Error::Config(msg)) => assert!(msg.contains("k = 9") && msg.contains("D = 8"), "{msg}"),
        Err(other) => panic!("{other}"),
        Ok(_) => panic!("accepted k > D"),
    }
    let mut cfg = logistic(Method::Dsgd, 1, TopologySpec::Ring);
    assert!(build::<f64>(&cfg).is_err());
    cfg.n = 4;
    cfg.perturbation = Some(PerturbationKind::SubCge);
    assert!(build::<f64>(&cfg).is_err());
}

#[test]
fn float32_seedflood_keeps_exact_consensus() {
    let cfg = logistic(Method::SeedFlood, 7, TopologySpec::Star);
    let mut sim = build::<f32>(&cfg).unwrap();
    for _ in 0..cfg.iterations {
        sim.step().unwrap();
        assert!(sim.in_consensus());
    }
}

#[test]
fn metropolis_mixing_has_spectral_gap() {
    for topology in [
        Topology::ring(12).unwrap(),
        Topology::mesh_grid(3, 4).unwrap(),
        Topology::random_connected(15, 0.1, Seed(4)).unwrap(),
    ] {
        let w = MixingMatrix::metropolis(&topology);
        let n = w.n();
        // power iteration on W restricted to the complement of the all-ones vector
        let mut v: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin() + 0.1).collect();
        let mut slem = 0.0;
        for _ in 0..2000 {
            let mean = v.iter().sum::<f64>() / n as f64;
            v.iter_mut().for_each(|x| *x -= mean);
            let next: Vec<f64> = (0..n)
                .map(|i| w.row(i).iter().zip(&v).map(|(a, b)| a * b).sum())
                .collect();
            let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
            slem = norm / v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v = next.iter().map(|x| x / norm).collect();
        }
        assert!(slem < 1.0 - 1e-3, "second largest eigenvalue modulus {slem}");
    }
}
