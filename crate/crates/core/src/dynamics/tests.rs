use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::gradcheck::check_params;
use crate::env::{Figure1Toy, HyperGrid, HyperGridConfig, Trajectory};

fn fig1() -> Arc<dyn Environment> {
    Arc::new(Figure1Toy::default())
}

fn grid(side: usize) -> Arc<dyn Environment> {
    Arc::new(HyperGrid::new(HyperGridConfig { side, ..Default::default() }).unwrap())
}

fn rec(env: &dyn Environment, s: &EvenState, a: usize, s_next: EvenState) -> StepRecord {
    let terminal = s_next.terminal;
    let reward = terminal.then(|| env.reward(&s_next).unwrap());
    StepRecord { s: s.clone(), a: ActionId(a), s_next, terminal, reward }
}

fn fig1_records(env: &dyn Environment, a: usize, outcomes: &[u16]) -> Vec<StepRecord> {
    let s0 = env.initial_state();
    outcomes.iter().map(|&i| rec(env, &s0, a, Figure1Toy::terminal(i))).collect()
}

fn neural(env: Arc<dyn Environment>, lr: f64) -> DynModel {
    let kind = DynKind::Neural { hidden: 16, layers: 2 };
    DynModel::new(env, kind, lr, Activation::LeakyRelu(0.01), &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
}

#[test]
fn unseen_pairs_are_uniform_under_smoothing() {
    let env = fig1();
    let m = DynModel::tabular(env.clone(), 0.1);
    assert_eq!(m.predict_slots(&[(&env.initial_state(), ActionId(0))]).unwrap(), vec![0.5, 0.5]);
    // no counts and no smoothing still gives a distribution
    let bare = DynModel::tabular(env.clone(), 0.0);
    assert_eq!(bare.predict_slots(&[(&env.initial_state(), ActionId(1))]).unwrap(), vec![0.5, 0.5]);
}

#[test]
fn counts_give_maximum_likelihood_frequencies() {
    let env = fig1();
    let mut m = DynModel::tabular(env.clone(), 0.0);
    m.update(&fig1_records(env.as_ref(), 0, &[0, 0, 1, 0])).unwrap();
    let p = m.predict(&env.initial_state(), ActionId(0)).unwrap();
    assert_eq!(p, vec![(Figure1Toy::terminal(0), 0.75), (Figure1Toy::terminal(1), 0.25)]);
    // λ = 1 adds one pseudo-count per candidate
    let mut s = DynModel::tabular(env.clone(), 1.0);
    s.update(&fig1_records(env.as_ref(), 0, &[0, 0, 1, 0])).unwrap();
    let p = s.predict_slots(&[(&env.initial_state(), ActionId(0))]).unwrap();
    assert!((p[0] - 4.0 / 6.0).abs() < 1e-15);
}

#[test]
fn uniform_model_loss_is_log_candidates() {
    let env = grid(4);
    let m = DynModel::tabular(env.clone(), 1.0);
    let s = EvenState::new(vec![1, 1], false);
    let batch = vec![rec(env.as_ref(), &s, 0, EvenState::new(vec![2, 1], false))];
    assert!((m.model_loss(&batch).unwrap() - 3f64.ln()).abs() < 1e-12);
}

#[test]
fn zero_probability_outcomes_are_clamped_and_counted() {
    let env = fig1();
    let mut m = DynModel::tabular(env.clone(), 0.0);
    m.update(&fig1_records(env.as_ref(), 0, &[0, 0])).unwrap();
    let s0 = env.initial_state();
    let t1 = Figure1Toy::terminal(1);
    let (lp, clamped) = m.log_probs(&[(&s0, ActionId(0), &t1)]).unwrap();
    assert_eq!(clamped, 1);
    assert_eq!(lp[0], log_floor());
}

#[test]
fn oracle_reproduces_the_kernel() {
    let env = grid(8);
    let m = DynModel::oracle(env.clone());
    let s = EvenState::new(vec![3, 5], false);
    for a in env.valid_actions(&s) {
        assert_eq!(m.tv_to_kernel(&s, a).unwrap(), 0.0);
        let p = m.predict(&s, a).unwrap();
        for (next, q) in env.kernel_support(&s, a).unwrap() {
            let got = p.iter().find(|(n, _)| *n == next).unwrap().1;
            assert!((got - q).abs() < 1e-15);
        }
    }
    // oracle update only reports
    let batch = vec![rec(env.as_ref(), &s, 0, EvenState::new(vec![4, 5], false))];
    let before = m.model_loss(&batch).unwrap();
    let mut m2 = m.clone();
    assert_eq!(m2.update(&batch).unwrap(), before);
    assert_eq!(m2.model_loss(&batch).unwrap(), before);
}

#[test]
fn outcomes_outside_the_candidates_are_errors() {
    let env = grid(4);
    let m = DynModel::tabular(env.clone(), 1.0);
    let s = env.initial_state();
    let far = EvenState::new(vec![2, 0], false);
    let err = m.log_probs(&[(&s, ActionId(0), &far)]).unwrap_err();
    assert!(matches!(err, DynamicsError::OutsideCandidates { .. }));
    assert!(matches!(m.model_loss(&[]), Err(DynamicsError::EmptyBatch)));
}

#[test]
fn neural_loss_gradients_match_finite_differences() {
    let env = grid(4);
    let m = neural(env.clone(), 1e-3);
    let s = EvenState::new(vec![1, 2], false);
    let batch = vec![
        rec(env.as_ref(), &s, 0, EvenState::new(vec![2, 2], false)),
        rec(env.as_ref(), &s, 1, EvenState::new(vec![2, 2], false)),
        rec(env.as_ref(), &s, 2, EvenState::new(vec![1, 2], true)),
        rec(env.as_ref(), &env.initial_state(), 1, EvenState::new(vec![0, 1], false)),
    ];
    let report = check_params(m.store().unwrap(), 1e-5, |tape, store| {
        m.model_loss_on_tape(tape, store, &batch).map_err(|e| match e {
            DynamicsError::Autodiff(a) => a,
            other => panic!("{other}"),
        })
    })
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
    // tape value agrees with the inference path
    let mut tape = Tape::new();
    let v = m.model_loss_on_tape(&mut tape, m.store().unwrap(), &batch).unwrap();
    assert!((tape.value(v).item() - m.model_loss(&batch).unwrap()).abs() < 1e-12);
}

#[test]
fn neural_model_learns_the_slip_kernel() {
    let env = fig1();
    let mut m = neural(env.clone(), 1e-2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let s0 = env.initial_state();
    for _ in 0..1500 {
        let batch: Vec<StepRecord> =
            (0..32).map(|i| env.step(&s0, ActionId(i % 2), &mut rng).unwrap()).collect();
        m.update(&batch).unwrap();
    }
    for a in 0..2 {
        assert!(m.tv_to_kernel(&s0, ActionId(a)).unwrap() < 0.03);
    }
}

#[test]
fn invalid_kinds_are_rejected() {
    let env = fig1();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let act = Activation::LeakyRelu(0.01);
    assert!(DynModel::new(env.clone(), DynKind::Tabular { lambda: -1.0 }, 1e-3, act, &mut rng).is_err());
    assert!(DynModel::new(env.clone(), DynKind::Neural { hidden: 0, layers: 1 }, 1e-3, act, &mut rng).is_err());
    assert!(DynModel::new(env, DynKind::Neural { hidden: 4, layers: 1 }, 0.0, act, &mut rng).is_err());
}

fn fig1_traj(env: &dyn Environment, a: usize, outcome: u16) -> Trajectory {
    Trajectory { steps: fig1_records(env, a, &[outcome]) }
}

#[test]
fn buffer_evicts_oldest_first() {
    let env = fig1();
    let mut b = ReplayBuffer::new(3).unwrap();
    for i in 0..5 {
        b.push(&fig1_traj(env.as_ref(), i % 2, 0)).unwrap();
    }
    assert_eq!(b.len(), 3);
    let actions: Vec<usize> = b.iter().map(|r| r.a.0).collect();
    assert_eq!(actions, vec![0, 1, 0]);
    let mut out = Vec::new();
    b.dump(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# trajectory\ts\ta\ts_next\tterminal\treward");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("2\t"));
}

#[test]
fn buffer_rejects_malformed_trajectories() {
    let env = grid(4);
    let mut b = ReplayBuffer::new(10).unwrap();
    assert!(b.push(&Trajectory::default()).is_err());
    let s0 = env.initial_state();
    let open = Trajectory { steps: vec![rec(env.as_ref(), &s0, 0, EvenState::new(vec![1, 0], false))] };
    assert!(b.push(&open).is_err());
    let broken = Trajectory {
        steps: vec![
            rec(env.as_ref(), &s0, 0, EvenState::new(vec![1, 0], false)),
            rec(env.as_ref(), &EvenState::new(vec![0, 1], false), 2, EvenState::new(vec![0, 1], true)),
        ],
    };
    assert!(b.push(&broken).is_err());
    assert!(b.is_empty());
    assert!(b.sample(1, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    assert!(ReplayBuffer::new(0).is_err());
}

#[test]
fn buffer_samples_uniformly() {
    let env = grid(4);
    let s0 = env.initial_state();
    // three distinguishable records across two trajectories
    let mut b = ReplayBuffer::new(100).unwrap();
    let s1 = EvenState::new(vec![1, 0], false);
    b.push(&Trajectory {
        steps: vec![rec(env.as_ref(), &s0, 0, s1.clone()), rec(env.as_ref(), &s1, 2, EvenState::new(vec![1, 0], true))],
    })
    .unwrap();
    b.push(&Trajectory { steps: vec![rec(env.as_ref(), &s0, 2, EvenState::new(vec![0, 0], true))] }).unwrap();
    let n = 90_000;
    let draws = b.sample(n, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let mut c = [0usize; 3];
    for r in &draws {
        let k = match (r.s == s0, r.a.0) {
            (true, 0) => 0,
            (false, _) => 1,
            _ => 2,
        };
        c[k] += 1;
    }
    // χ² with two degrees of freedom; 13.82 is the 0.999 quantile
    let e = n as f64 / 3.0;
    let chi2: f64 = c.iter().map(|&x| (x as f64 - e).powi(2) / e).sum();
    assert!(chi2 < 13.82, "{c:?}");
}
