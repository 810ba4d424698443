use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::gradcheck::check_params;
use crate::autodiff::ParamStore;
use crate::dynamics::DynModel;
use crate::env::{enumerate_states, Environment, Figure1Toy, HyperGrid, HyperGridConfig};
use crate::eval::{exact_terminating_distribution, l1_error, target_distribution};
use crate::gfnmodel::{sample_batch, GfnConfig, Parameterization};
use crate::trainer::{fit_exhaustive, FitConfig};

fn fig1(alpha: f64) -> Arc<dyn Environment> {
    Arc::new(Figure1Toy::new(alpha).unwrap())
}

fn grid(side: usize, alpha: f64) -> Arc<dyn Environment> {
    Arc::new(HyperGrid::new(HyperGridConfig { side, alpha, ..Default::default() }).unwrap())
}

fn tabular(env: Arc<dyn Environment>) -> GfnParams {
    GfnParams::new(env, GfnConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
}

fn neural(env: Arc<dyn Environment>, seed: u64) -> GfnParams {
    let cfg = GfnConfig { parameterization: Parameterization::Neural { hidden: 8, layers: 2 }, ..Default::default() };
    let mut p = GfnParams::new(env, cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    p.set_logz(0.3);
    p
}

fn fig1_step(p: &GfnParams, a: usize, outcome: u16) -> StepRecord {
    step_record(p, &p.env().initial_state(), ActionId(a), &Figure1Toy::terminal(outcome)).unwrap()
}

#[test]
fn objective_names_round_trip() {
    for o in Objective::ALL {
        assert_eq!(o.as_str().parse::<Objective>().unwrap(), o);
    }
    assert!("fm".parse::<Objective>().is_err());
    assert_eq!(Objective::StochTb.backward_view(), BackwardView::Kernel);
    assert_eq!(Objective::Db.backward_view(), BackwardView::Intended);
}

#[test]
fn db_hand_value() {
    assert_eq!(db_residual(0.0, -2f64.ln(), 2f64.ln(), 0.0), -2.0 * 2f64.ln());
    // uniform π at the root of the noise-free toy, R(s2) = 2, single parent
    let p = tabular(fig1(0.0));
    let loss = db_loss(&p, &fig1_step(&p, 1, 1)).unwrap();
    assert!((loss - (2.0 * 2f64.ln()).powi(2)).abs() < 1e-12);
    assert!((loss - 1.9218).abs() < 1e-4);
}

#[test]
fn tb_one_step_consistency() {
    let mut p = tabular(fig1(0.0));
    let s0 = p.env().initial_state();
    // uniform π: log Z = log R(s2) − log π(a1) = 2 ln 2
    p.set_table_row(&s0, &[0.0; 5]).unwrap();
    p.set_logz(2.0 * 2f64.ln());
    let t = Trajectory { steps: vec![fig1_step(&p, 1, 1)] };
    assert!(tb_loss(&p, &t).unwrap() < 1e-24);
}

/// The stochastic-flow solution of the toy: F(s0) = 3 and π = (1/6, 5/6),
/// so that 0.75π1 + 0.25π2 = 1/3. π_B is the Bayes posterior over the
/// two odd states at each terminal.
fn solved_fig1() -> GfnParams {
    let env = fig1(0.5);
    let mut p = tabular(env.clone());
    let s0 = env.initial_state();
    p.set_table_row(&s0, &[0.0, 5f64.ln(), 0.0, 0.0, 3f64.ln()]).unwrap();
    // inflow to s1: 3·(1/6)·0.75 = 0.375 and 3·(5/6)·0.25 = 0.625
    p.set_table_row(&Figure1Toy::terminal(0), &[0.0, 0.0, 0.375f64.ln(), 0.625f64.ln(), 0.0]).unwrap();
    // inflow to s2: 3·(1/6)·0.25 = 0.125 and 3·(5/6)·0.75 = 1.875
    p.set_table_row(&Figure1Toy::terminal(1), &[0.0, 0.0, 0.125f64.ln(), 1.875f64.ln(), 0.0]).unwrap();
    p.set_logz(3f64.ln());
    p
}

#[test]
fn solved_toy_has_zero_stochastic_residuals() {
    let p = solved_fig1();
    let oracle = DynModel::oracle(p.env().clone());
    for a in 0..2 {
        for o in 0..2 {
            let step = fig1_step(&p, a, o);
            assert!(stoch_db_loss(&p, &oracle, &step).unwrap() < 1e-28);
            let t = Trajectory { steps: vec![step] };
            assert!(stoch_tb_loss(&p, &oracle, &t).unwrap() < 1e-28);
        }
    }
    let graph = enumerate_states(p.env().as_ref(), 100).unwrap();
    let pt = exact_terminating_distribution(&p, &graph).unwrap();
    assert!((pt.probs[0] - 1.0 / 3.0).abs() < 1e-12);
    assert!((pt.probs[1] - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn perturbing_the_policy_logit_costs_its_square() {
    let mut p = solved_fig1();
    let oracle = DynModel::oracle(p.env().clone());
    let s0 = p.env().initial_state();
    // move log π(a1|s0) up by 0.1, keeping F and π_B
    let pi1 = 1.0 / 6.0f64;
    let new_pi1 = (pi1.ln() + 0.1).exp();
    let a2 = (1.0 - new_pi1) / new_pi1;
    p.set_table_row(&s0, &[0.0, a2.ln(), 0.0, 0.0, 3f64.ln()]).unwrap();
    let d = p.forward_dist(&s0).unwrap();
    assert!((d[0].1.ln() - (pi1.ln() + 0.1)).abs() < 1e-12);
    for o in 0..2 {
        let r = stoch_db_loss(&p, &oracle, &fig1_step(&p, 0, o)).unwrap();
        assert!((r - 0.01).abs() < 1e-12, "{r}");
    }
}

#[test]
fn deterministic_view_solution_gives_the_biased_split() {
    // DB treats s0 → s_i as one edge, so π = R/ΣR is its solution; under
    // the slip kernel that yields P_T(s1) = 0.75/3 + 0.25·2/3 = 5/12.
    let env = fig1(0.5);
    let mut p = tabular(env.clone());
    let s0 = env.initial_state();
    p.set_table_row(&s0, &[0.0, 2f64.ln(), 0.0, 0.0, 3f64.ln()]).unwrap();
    for a in 0..2 {
        for o in 0..2 {
            assert!(db_loss(&p, &fig1_step(&p, a, o)).unwrap() < 1e-28);
        }
    }
    let graph = enumerate_states(env.as_ref(), 100).unwrap();
    let pt = exact_terminating_distribution(&p, &graph).unwrap();
    assert!((pt.probs[0] - 5.0 / 12.0).abs() < 1e-12);
    assert!((pt.probs[1] - 7.0 / 12.0).abs() < 1e-12);
}

#[test]
fn stochastic_losses_need_a_model_and_valid_batches() {
    let p = tabular(fig1(0.5));
    let t = Trajectory { steps: vec![fig1_step(&p, 0, 1)] };
    let mut tape = Tape::new();
    let err = build_loss(&mut tape, &p, Objective::StochDb, &[t], None).unwrap_err();
    assert_eq!(err, ObjectiveError::MissingModel(Objective::StochDb));
    assert_eq!(build_loss(&mut tape, &p, Objective::Db, &[], None).unwrap_err(), ObjectiveError::EmptyBatch);
    let open = Trajectory { steps: vec![] };
    assert_eq!(build_loss(&mut tape, &p, Objective::Tb, &[open], None).unwrap_err(), ObjectiveError::BadTrajectory(0));
}

#[test]
fn db_rejects_edges_without_an_intended_action() {
    let env = grid(4, 0.0);
    let p = tabular(env.clone());
    let s = env.initial_state();
    let step = step_record(&p, &s, ActionId(0), &EvenState::new(vec![1, 1], false)).unwrap();
    assert!(matches!(db_loss(&p, &step), Err(ObjectiveError::NoIntendedAction { .. })));
}

fn residuals(p: &GfnParams, obj: Objective, trajs: &[Trajectory], model: Option<&dyn TransitionModel>) -> Vec<f64> {
    let mut tape = Tape::new();
    let out = build_loss(&mut tape, p, obj, trajs, model).unwrap();
    tape.value(out.residuals).data().to_vec()
}

#[test]
fn tb_residual_telescopes_db_residuals() {
    let env = grid(6, 0.3);
    let p = neural(env.clone(), 3);
    let oracle = DynModel::oracle(env.clone());
    let trajs = sample_batch(&p, 6, 0.2, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    for (objs, model) in [
        ((Objective::Db, Objective::Tb), None),
        ((Objective::StochDb, Objective::StochTb), Some(&oracle as &dyn TransitionModel)),
    ] {
        let tb = residuals(&p, objs.1, &trajs, model);
        for (t, r_tb) in trajs.iter().zip(tb) {
            let db: f64 = residuals(&p, objs.0, std::slice::from_ref(t), model).iter().sum();
            // Σ DB terms = log F(s0) + Σ log P_F − Σ log P_B − β log R
            let expect = db - p.log_flow(&env.initial_state()).unwrap() + p.logz();
            assert!((r_tb - expect).abs() < 1e-10, "{r_tb} vs {expect}");
        }
    }
}

#[test]
fn noise_free_reductions_are_exact() {
    let env = grid(6, 0.0);
    let oracle = DynModel::oracle(env.clone());
    for seed in 0..3 {
        let p = neural(env.clone(), seed);
        let trajs = sample_batch(&p, 8, 0.3, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for (det, st) in [(Objective::Db, Objective::StochDb), (Objective::Tb, Objective::StochTb)] {
            let a = residuals(&p, det, &trajs, None);
            let b = residuals(&p, st, &trajs, Some(&oracle));
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}

/// Rebuilds the loss on a candidate store for finite differences.
fn loss_on(
    p: &GfnParams,
    store: &ParamStore,
    obj: Objective,
    trajs: &[Trajectory],
    model: Option<&dyn TransitionModel>,
    tape: &mut Tape,
) -> std::result::Result<Var, AutodiffError> {
    let mut q = p.clone();
    *q.store_mut() = store.clone();
    build_loss(tape, &q, obj, trajs, model).map(|o| o.loss).map_err(|e| match e {
        ObjectiveError::Autodiff(a) => a,
        other => panic!("{other}"),
    })
}

#[test]
fn every_loss_matches_finite_differences() {
    let env = grid(4, 0.25);
    let oracle = DynModel::oracle(env.clone());
    let mut counts = DynModel::tabular(env.clone(), 0.5);
    for (i, p) in [neural(env.clone(), 11), tabular(env.clone())].into_iter().enumerate() {
        let trajs = sample_batch(&p, 4, 0.5, &mut ChaCha8Rng::seed_from_u64(i as u64)).unwrap();
        for t in &trajs {
            counts.update(&t.steps).unwrap();
        }
        for obj in Objective::ALL {
            let models: Vec<Option<&dyn TransitionModel>> =
                if obj.is_stochastic() { vec![Some(&oracle), Some(&counts)] } else { vec![None] };
            for m in models {
                let report =
                    check_params(p.store(), 1e-5, |tape, store| loss_on(&p, store, obj, &trajs, m, tape)).unwrap();
                assert!(report.max_rel_error < 1e-4, "{obj} {report:?}");
            }
        }
    }
}

#[test]
fn gradients_never_reach_the_model() {
    let env = fig1(0.5);
    let p = tabular(env.clone());
    let oracle = DynModel::oracle(env.clone());
    let mut learned = DynModel::tabular(env, 0.0);
    learned.update(&[fig1_step(&p, 0, 0), fig1_step(&p, 0, 0), fig1_step(&p, 0, 1)]).unwrap();
    let t = vec![Trajectory { steps: vec![fig1_step(&p, 0, 1)] }];
    let (a, _) = evaluate(&p, Objective::StochDb, &t, Some(&oracle)).unwrap();
    let (b, _) = evaluate(&p, Objective::StochDb, &t, Some(&learned)).unwrap();
    // P̂ only shifts the constant part of the residual
    assert!((a.residuals[0] - b.residuals[0] - (0.25f64.ln() - (1.0f64 / 3.0).ln())).abs() < 1e-12);
    assert!(a.grad_norms.iter().all(|(n, _)| n == "table" || n == "logz"));
}

#[test]
fn clamped_terms_are_counted() {
    let env = fig1(0.5);
    let p = tabular(env.clone());
    let mut m = DynModel::tabular(env, 0.0);
    m.update(&[fig1_step(&p, 0, 0)]).unwrap();
    let t = vec![Trajectory { steps: vec![fig1_step(&p, 0, 1)] }];
    let (r, _) = evaluate(&p, Objective::StochDb, &t, Some(&m)).unwrap();
    assert_eq!(r.clamped, 1);
    assert!(r.loss.is_finite());
}

#[test]
fn zero_stochastic_residuals_give_the_exact_distribution() {
    for (env, obj) in [
        (fig1(0.5), Objective::StochDb),
        (grid(4, 0.25), Objective::StochDb),
        (grid(3, 0.25), Objective::StochTb),
    ] {
        let mut p = tabular(env.clone());
        let oracle = DynModel::oracle(env.clone());
        let graph = p.graph().unwrap().clone();
        let fit = fit_exhaustive(&mut p, obj, Some(&oracle), &graph, &FitConfig::default(), 200_000).unwrap();
        assert!(fit.max_residual < 1e-8, "{obj} {fit:?}");
        let pt = exact_terminating_distribution(&p, &graph).unwrap();
        let target = target_distribution(env.as_ref(), &graph, 1.0).unwrap();
        assert!(l1_error(&pt, &target).unwrap() < 1e-3);
    }
}

#[test]
fn deterministic_fits_recover_reward_and_partition_function() {
    let env = fig1(0.0);
    let mut p = tabular(env.clone());
    let graph = p.graph().unwrap().clone();
    let fit = fit_exhaustive(&mut p, Objective::Db, None, &graph, &FitConfig::default(), 1).unwrap();
    assert!(fit.max_residual < 1e-8, "{fit:?}");
    let pt = exact_terminating_distribution(&p, &graph).unwrap();
    assert!((pt.probs[0] - 1.0 / 3.0).abs() < 1e-6);

    let env = grid(4, 0.0);
    let mut p = tabular(env.clone());
    let graph = p.graph().unwrap().clone();
    let fit = fit_exhaustive(&mut p, Objective::Tb, None, &graph, &FitConfig::default(), 100_000).unwrap();
    assert!(fit.max_residual < 1e-8, "{fit:?}");
    let z: f64 = graph.terminal_states().map(|x| env.reward(x).unwrap()).sum();
    assert!((p.logz().exp() - z).abs() < 1e-3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Squared residuals are non-negative and ignore batch order.
    #[test]
    fn losses_are_nonnegative_and_order_free(seed in 0u64..500, alpha in 0.0f64..0.9) {
        let env = grid(5, alpha);
        let p = neural(env.clone(), seed);
        let oracle = DynModel::oracle(env);
        let trajs = sample_batch(&p, 5, 0.3, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut rev = trajs.clone();
        rev.reverse();
        for obj in Objective::ALL {
            let m = obj.is_stochastic().then_some(&oracle as &dyn TransitionModel);
            let (a, _) = evaluate(&p, obj, &trajs, m).unwrap();
            let (b, _) = evaluate(&p, obj, &rev, m).unwrap();
            prop_assert!(a.loss >= 0.0);
            prop_assert!((a.loss - b.loss).abs() < 1e-12 * a.loss.max(1.0));
        }
    }
}
