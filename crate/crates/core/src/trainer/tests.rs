use super::*;
use crate::env::{Figure1Toy, HyperGrid, HyperGridConfig};

fn fig1() -> Arc<dyn Environment> {
    Arc::new(Figure1Toy::default())
}

fn grid(side: usize) -> Arc<dyn Environment> {
    Arc::new(HyperGrid::new(HyperGridConfig { side, ..Default::default() }).unwrap())
}

fn small(objective: Objective, iterations: usize) -> TrainConfig {
    TrainConfig {
        objective,
        model: DynKind::Neural { hidden: 16, layers: 2 },
        gfn: GfnConfig { parameterization: Parameterization::Neural { hidden: 16, layers: 2 }, ..Default::default() },
        iterations,
        eval_every: 50,
        ..Default::default()
    }
}

fn tabular_fig1(objective: Objective, iterations: usize) -> TrainConfig {
    TrainConfig { gfn: GfnConfig::default(), ..small(objective, iterations) }
}

fn run(env: Arc<dyn Environment>, cfg: &TrainConfig) -> TrainRun {
    train(env, cfg, &mut |_| {}).unwrap()
}

#[test]
fn untrained_toy_policy_is_one_sixth_off() {
    let env = fig1();
    let cfg = tabular_fig1(Objective::StochDb, 1);
    let exact = ExactEval::try_new(env.as_ref(), 1.0, 100).unwrap().unwrap();
    let params = init_params(&env, &cfg, Some(&exact)).unwrap();
    assert!((exact.l1(&params).unwrap() - 1.0 / 6.0).abs() < 1e-15);
}

#[test]
fn oracle_stochastic_db_solves_the_toy() {
    let cfg = TrainConfig { dynamics_mode: DynamicsMode::Oracle, lr: 3e-3, ..tabular_fig1(Objective::StochDb, 5000) };
    let r = run(fig1(), &cfg);
    let last = r.metrics.last().unwrap();
    assert!(last.l1_exact.unwrap() < 0.02, "{last:?}");
    assert!(r.model.is_oracle());
}

#[test]
fn same_seed_same_metrics() {
    let cfg = small(Objective::StochDb, 120);
    let mut streamed = Vec::new();
    let a = train(grid(6), &cfg, &mut |m| streamed.push(m.without_time())).unwrap();
    let b = run(grid(6), &cfg);
    let strip = |r: &TrainRun| r.metrics.iter().map(MetricsRecord::without_time).collect::<Vec<_>>();
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(strip(&a), streamed);
    assert_eq!(a.params.to_checkpoint(), b.params.to_checkpoint());
    let c = run(grid(6), &TrainConfig { seed: 1, ..cfg });
    assert_ne!(a.params.to_checkpoint(), c.params.to_checkpoint());
}

#[test]
fn one_record_per_tick_plus_the_last_iteration() {
    let r = run(grid(4), &small(Objective::Tb, 120));
    let its: Vec<usize> = r.metrics.iter().map(|m| m.iteration).collect();
    assert_eq!(its, vec![50, 100, 120]);
    for m in &r.metrics {
        assert_eq!(m.method, "tb");
        assert!(m.l1_exact.is_some() && m.l1_empirical.is_some());
        assert!(m.model_loss.is_none());
    }
}

#[test]
fn warmup_skips_only_learned_stochastic_updates() {
    let learned = run(fig1(), &tabular_fig1(Objective::StochTb, 30));
    assert_eq!(learned.grad_norms.len(), 30 - 10);
    assert_eq!(learned.buffer.len(), 30 * 16);
    let oracle = run(fig1(), &TrainConfig { dynamics_mode: DynamicsMode::Oracle, ..tabular_fig1(Objective::StochTb, 30) });
    assert_eq!(oracle.grad_norms.len(), 30);
    let plain = run(fig1(), &tabular_fig1(Objective::Db, 30));
    assert_eq!(plain.grad_norms.len(), 30);
    assert!(plain.model.is_oracle());
}

#[test]
fn mode_counts_never_decrease() {
    let r = run(grid(8), &TrainConfig { epsilon: 0.1, ..small(Objective::StochDb, 400) });
    assert!(r.metrics.windows(2).all(|w| w[0].modes <= w[1].modes));
    let mcmc = run_mcmc(grid(8), &small(Objective::Db, 400), 4, &mut |_| {}).unwrap();
    assert!(mcmc.windows(2).all(|w| w[0].modes <= w[1].modes));
    assert!(mcmc.iter().all(|m| m.method == "mcmc" && m.l1_exact.is_none() && m.loss.is_none()));
}

#[test]
fn non_finite_losses_abort_with_a_diagnostic() {
    // β·log R(s2) is finite but its square overflows
    let cfg = TrainConfig {
        gfn: GfnConfig { beta: 1e300, ..Default::default() },
        dynamics_mode: DynamicsMode::Oracle,
        ..tabular_fig1(Objective::StochDb, 10)
    };
    match train(fig1(), &cfg, &mut |_| {}) {
        Err(TrainError::NonFinite(d)) => {
            assert_eq!(d.iteration, 1);
            assert!(!d.batch.is_empty());
            assert!(d.reason.contains("loss"));
            assert!(serde_json::to_string(&*d).unwrap().contains("\"iteration\":1"));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn configs_are_validated() {
    let ok = small(Objective::Db, 10);
    assert!(ok.validate().is_ok());
    for bad in [
        TrainConfig { lr: 0.0, ..ok.clone() },
        TrainConfig { iterations: 0, ..ok.clone() },
        TrainConfig { epsilon: 1.5, ..ok.clone() },
        TrainConfig { eval_every: 0, ..ok.clone() },
    ] {
        assert!(matches!(bad.validate(), Err(TrainError::Config(_))));
    }
}

#[test]
fn streams_are_independent() {
    use rand::Rng;
    let mut a = stream(3, Stream::Rollouts);
    let mut b = stream(3, Stream::Buffer);
    let mut c = stream(3, Stream::Rollouts);
    let x: u64 = a.random();
    assert_ne!(x, b.random::<u64>());
    assert_eq!(x, c.random::<u64>());
}

#[test]
fn gradient_variance_is_zero_for_a_single_outcome() {
    // with α = 0 and one-step trajectories every batch of the toy with the
    // policy pinned has the same gradient
    let env: Arc<dyn Environment> = Arc::new(Figure1Toy::new(0.0).unwrap());
    let exact = ExactEval::try_new(env.as_ref(), 1.0, 10).unwrap().unwrap();
    let mut params = init_params(&env, &tabular_fig1(Objective::Tb, 1), Some(&exact)).unwrap();
    params.set_table_row(&env.initial_state(), &[0.0, 80.0, 0.0, 0.0, 0.0]).unwrap();
    let mut rng = stream(0, Stream::Eval);
    let v = gradient_variance(&params, Objective::Tb, None, 5, 4, 0.0, &mut rng).unwrap();
    assert!(v < 1e-20, "{v}");
    let params = init_params(&env, &tabular_fig1(Objective::Tb, 1), Some(&exact)).unwrap();
    assert!(gradient_variance(&params, Objective::Tb, None, 20, 4, 0.0, &mut rng).unwrap() > 0.0);
    assert!(gradient_variance(&params, Objective::Tb, None, 1, 4, 0.0, &mut rng).is_err());
}

#[test]
fn exhaustive_enumeration_counts() {
    let env: Arc<dyn Environment> = Arc::new(Figure1Toy::default());
    let exact = ExactEval::try_new(env.as_ref(), 1.0, 10).unwrap().unwrap();
    assert_eq!(all_transitions(env.as_ref(), &exact.graph).unwrap().len(), 4);
    assert_eq!(all_trajectories(env.as_ref(), &exact.graph, 10).unwrap().len(), 4);
    assert!(all_trajectories(env.as_ref(), &exact.graph, 3).is_err());
}
