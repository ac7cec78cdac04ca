mod common;

use common::synthetic_trace;
use driftqec_core::agent::{hyper_diff, training_losses, AgentHyper, RecurrentQNet, Teacher};
use driftqec_core::baseline::*;
use driftqec_core::env::{EnvConfig, EnvModel, Observation, NUM_ACTIONS, OBS_DIM};
use driftqec_core::grad::{finite_difference_gradient, max_relative_error, CellDims};
use driftqec_core::policy::run_episode;
use driftqec_core::rng::stream_rng;
use rand::Rng;

const DIMS: CellDims = CellDims::new(5, 4, 3);

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn static_policy_never_acts() {
    let mut rng = stream_rng(3, 0);
    for _ in 0..1000 {
        let obs = Observation {
            rho: rng.random(),
            sigma: rng.random(),
            pi: rng.random_range(0..2),
            hazard: rng.random(),
        };
        assert_eq!(static_policy(&obs), 0);
    }
    let model = EnvModel::new(EnvConfig::default().with_distance(5)).unwrap();
    for seed in 0..20 {
        let trace = run_episode(&model, &mut StaticPolicy, seed).unwrap();
        assert_eq!(trace.total_control_cost, 0.0);
    }
}

#[test]
fn static_survival_grows_with_distance() {
    let mean_ttt = |d: u32| {
        let model = EnvModel::new(EnvConfig::default().with_distance(d)).unwrap();
        (0..100)
            .map(|s| run_episode(&model, &mut StaticPolicy, 500 + s).unwrap().time_to_threshold() as f64)
            .sum::<f64>()
            / 100.0
    };
    let (t3, t5, t7) = (mean_ttt(3), mean_ttt(5), mean_ttt(7));
    assert!(t3 < t5 && t5 < t7, "{t3} {t5} {t7}");
}

#[test]
fn saturated_gates_hold_the_cell_state() {
    let mut p = GatedParams::zeros(DIMS);
    let h = 5;
    let bias = p.gate_bias_mut();
    bias[..h].iter_mut().for_each(|b| *b = -50.0); // input gate closed
    bias[h..2 * h].iter_mut().for_each(|b| *b = 50.0); // forget gate open
    let c = [0.3, -0.7, 0.1, 0.9, -0.2];
    let (_, c_next) = p.gated_forward(&[0.1; 5], &c, &[1.0, 2.0, -1.0, 0.5], 0.4);
    for (a, b) in c_next.iter().zip(c) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn zero_parameters_halve_the_cell() {
    let p = GatedParams::zeros(DIMS);
    let mut c = vec![0.8, -0.4, 0.2, 1.0, -1.0];
    let mut h = vec![0.0; 5];
    let gates = p.gate_values(&h, &c, &[1.0; 4], 1.0);
    for (k, g) in gates.iter().enumerate() {
        let expected = if k == 3 { 0.0 } else { 0.5 };
        assert!(g.iter().all(|v| *v == expected));
    }
    for _ in 0..4 {
        let (hn, cn) = p.gated_forward(&h, &c, &[0.5; 4], -0.3);
        for (a, b) in cn.iter().zip(&c) {
            assert!((a - 0.5 * b).abs() < 1e-15);
        }
        for (hv, cv) in hn.iter().zip(&cn) {
            assert!((hv - 0.5 * cv.tanh()).abs() < 1e-15);
        }
        h = hn;
        c = cn;
    }
}

#[test]
fn gated_cell_matches_scalar_reference() {
    let p = GatedParams::seeded(DIMS, 12);
    let mut rng = stream_rng(1, 1);
    let h: Vec<f64> = (0..5).map(|_| rng.random::<f64>() - 0.5).collect();
    let c: Vec<f64> = (0..5).map(|_| rng.random::<f64>() - 0.5).collect();
    let x: Vec<f64> = (0..4).map(|_| rng.random::<f64>() - 0.5).collect();
    let r = -0.3;
    let z: Vec<f64> = h.iter().chain(&x).copied().chain([r]).collect();
    let pre = |row: usize| -> f64 {
        let m = p.gate_matrix();
        (0..10).map(|j| m[row * 10 + j] * z[j]).sum::<f64>() + p.gate_bias()[row]
    };
    let (hn, cn) = p.gated_forward(&h, &c, &x, r);
    for k in 0..5 {
        let i = sigmoid(pre(k));
        let f = sigmoid(pre(5 + k));
        let o = sigmoid(pre(10 + k));
        let g = pre(15 + k).tanh();
        let cell = f * c[k] + i * g;
        assert!((cn[k] - cell).abs() < 1e-12);
        assert!((hn[k] - o * cell.tanh()).abs() < 1e-12);
        assert!(i > 0.0 && i < 1.0 && f > 0.0 && f < 1.0 && o > 0.0 && o < 1.0 && g.abs() < 1.0);
    }
}

#[test]
fn gated_gradient_matches_finite_differences() {
    for seed in 0..20u64 {
        let p = GatedParams::seeded(DIMS, 40 + seed);
        let target = GatedParams::seeded(DIMS, 80 + seed);
        let trace = synthetic_trace(seed, 8, seed % 2 == 1);
        let hyper = AgentHyper {
            hidden: 5,
            ..AgentHyper::default().baseline()
        };
        let w = training_losses(&p, &target, &trace, 0, 8, &hyper, Teacher::None);
        let fd = finite_difference_gradient(p.params(), 1e-5, |flat| {
            let q = p.with_params(flat.to_vec()).unwrap();
            training_losses(&q, &target, &trace, 0, 8, &hyper, Teacher::None).td
        });
        let err = max_relative_error(&w.gradient, &fd, 1e-8);
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn gated_width_matches_parameter_budget() {
    let chdqn = CellDims::new(16, OBS_DIM, NUM_ACTIONS).param_count();
    let h = matched_gated_hidden(16);
    let gated = GatedParams::param_count_for(CellDims::new(h, OBS_DIM, NUM_ACTIONS));
    assert_eq!((chdqn, h, gated), (643, 10, 673));
    let rel = (gated as f64 - chdqn as f64).abs() / chdqn as f64;
    assert!(rel <= 0.25);
}

#[test]
fn baseline_differs_only_in_flagged_settings() {
    let base = AgentHyper::default();
    let diff = hyper_diff(&base, &baseline_hyper(&base));
    let fields: Vec<&str> = diff.iter().map(|d| d.split(':').next().unwrap()).collect();
    assert_eq!(fields, vec!["hidden", "eta_meta", "consistency_weight"]);
}

#[test]
fn baseline_training_contracts() {
    let model = EnvModel::new(EnvConfig::default().with_distance(3)).unwrap();
    let hyper = AgentHyper::default();

    let (learner, log) = train_baseline(&model, &hyper, 0, 9).unwrap();
    assert!(log.is_empty());
    assert_eq!(learner.online(), &GatedParams::seeded(CellDims::new(10, 4, 3), 9));

    let (a, la) = train_baseline(&model, &hyper, 5, 9).unwrap();
    let (b, lb) = train_baseline(&model, &hyper, 5, 9).unwrap();
    assert_eq!(la, lb);
    assert_eq!(a.online(), b.online());
    assert!(la.iter().all(|r| r.cons_loss == 0.0));
}

#[test]
fn baseline_learns_to_stay_idle_without_noise() {
    let mut cfg = EnvConfig::noiseless().with_distance(3);
    cfg.max_cycles = 40;
    cfg.lambda_action = 0.01;
    let model = EnvModel::new(cfg).unwrap();
    let (learner, _) = train_baseline(&model, &AgentHyper::default(), 60, 4).unwrap();
    let trace = run_episode(&model, &mut learner.policy(), 5).unwrap();
    assert!(trace.records.iter().all(|r| r.action == 0));
}
