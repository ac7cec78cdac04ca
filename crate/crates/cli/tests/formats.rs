use driftqec::checkpoint::{CellKind, Checkpoint};
use driftqec::config::{reference_config, RunConfig, KEY_DOCS};
use driftqec::output::{csv_bytes, trace_jsonl, MetricsRow, TraceLine};
use driftqec::runner::{evaluate_parallel, par_map, train_agent, AgentKind, EvalOptions};
use driftqec::CliError;
use driftqec_core::agent::{AgentHyper, ChDqn, LearnerState};
use driftqec_core::baseline::{train_baseline, StaticPolicy};
use driftqec_core::env::{EnvConfig, EnvModel};
use driftqec_core::eval::{evaluate, AblationVariant, CiMethod};
use driftqec_core::grad::CellDims;

fn leaf_keys(prefix: &str, table: &toml::Table, out: &mut Vec<String>) {
    for (k, v) in table {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => leaf_keys(&path, t, out),
            _ => out.push(path),
        }
    }
}

#[test]
fn reference_config_documents_every_key_and_loads_back() {
    let mut keys = Vec::new();
    leaf_keys("", &RunConfig::default().to_table(), &mut keys);
    for k in &keys {
        assert!(KEY_DOCS.iter().any(|(p, _, _)| p == k), "undocumented key {k}");
    }
    for (p, _, example) in KEY_DOCS {
        assert!(keys.contains(&p.to_string()) || example.is_some(), "stale doc entry {p}");
    }
    let text = reference_config();
    let table: toml::Table = text.parse().unwrap();
    assert_eq!(RunConfig::from_table(table).unwrap(), RunConfig::default());
    // The commented examples are valid when uncommented.
    let uncommented = text.replace("# sigma_margin", "sigma_margin").replace("# hidden = 10", "hidden = 10");
    let cfg = RunConfig::from_table(uncommented.parse().unwrap()).unwrap();
    assert_eq!(cfg.env.sigma_margin, Some(0.05));
    assert_eq!(cfg.baseline.hidden, Some(10));
}

#[test]
fn resolved_config_round_trips() {
    let overrides = [
        "agent.eta_meta=0".to_string(),
        "env.noise.beta=0.8".to_string(),
        "harness.ci=\"bootstrap\"".to_string(),
        "baseline.hidden=12".to_string(),
        "name=other".to_string(),
    ];
    let cfg = RunConfig::load(None, &overrides).unwrap();
    assert_eq!(cfg.agent.eta_meta, 0.0);
    assert_eq!(cfg.env.noise.beta, 0.8);
    assert_eq!(cfg.harness.ci, CiMethod::Bootstrap);
    assert_eq!(cfg.name, "other");
    let back = RunConfig::from_table(cfg.resolved().parse().unwrap()).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn config_errors_name_the_field() {
    let err = |o: &str| match RunConfig::load(None, &[o.to_string()]) {
        Err(CliError::Config(m)) => m,
        other => panic!("expected a config error for {o}, got {other:?}"),
    };
    assert!(err("agent.etaa=1").starts_with("agent.etaa: unknown field"));
    assert!(err("env.noise.bta=1").starts_with("env.noise.bta: unknown field"));
    assert!(err("agent.hidden=\"x\"").starts_with("agent.hidden"));
    assert!(err("env.noise.beta=1.5").contains("beta"));
    assert!(err("harness.distances=[4]").contains("distance 4"));
    let both = err("agent.eta_meta=0.5");
    assert!(both.starts_with("agent.eta_meta"), "{both}");
    assert!(err("novalue").contains("key=value"));
    assert!(err("agent..eta=1").contains("malformed"));
}

#[test]
fn checkpoint_text_is_bit_exact() {
    let values = [0.1, -1.0 / 3.0, 5e-324, 1.7976931348623157e308, -0.0, 123456.789e-20, 2.0];
    let dims = CellDims::new(1, 4, 3);
    let n = dims.param_count();
    let flat: Vec<f64> = (0..n).map(|i| values[i % values.len()] / (1.0 + i as f64)).collect();
    let ck = Checkpoint {
        policy: "chdqn".into(),
        cell: CellKind::Elman,
        distance: 5,
        dims,
        seed: u64::MAX,
        hyper: AgentHyper {
            hidden: 1,
            ..AgentHyper::default()
        },
        state: LearnerState {
            online: flat.clone(),
            target: flat.iter().map(|v| -v).collect(),
            snapshots: vec![(3, flat.clone()), (4, flat.clone())],
            episodes_done: 7,
            iteration: 4,
        },
    };
    let text = ck.to_text();
    let back = Checkpoint::parse(&text).unwrap();
    assert_eq!(back, ck);
    for (a, b) in back.state.online.iter().zip(&flat) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    assert!(back.check().is_ok());
    assert_eq!(back.to_text(), text);
}

#[test]
fn checkpoint_parse_errors_point_at_lines() {
    let ck = train_agent(&tiny(), AgentKind::Gated, 3).unwrap().checkpoint;
    let text = ck.to_text();
    assert!(Checkpoint::parse(&text.replace("driftqec-checkpoint 1", "driftqec-checkpoint 9"))
        .unwrap_err()
        .contains("version 9"));
    assert!(Checkpoint::parse(&text.replace("cell gated", "cell lstm")).unwrap_err().contains("line 3"));
    let truncated: String = text.lines().take(30).map(|l| format!("{l}\n")).collect();
    assert!(Checkpoint::parse(&truncated).unwrap_err().contains("end of file"));
    let mut wrong = Checkpoint::parse(&text).unwrap();
    wrong.dims.input = 5;
    assert!(wrong.check().unwrap_err().contains("dimension mismatch"));
    let mut short = Checkpoint::parse(&text).unwrap();
    short.state.online.pop();
    assert!(short.check().unwrap_err().contains("dimension mismatch"));
}

fn tiny() -> RunConfig {
    RunConfig::load(
        None,
        &[
            "harness.train_episodes=4".into(),
            "harness.eval_runs=12".into(),
            "harness.distances=[3]".into(),
        ],
    )
    .unwrap()
}

#[test]
fn cli_training_matches_the_core_learners() {
    let cfg = tiny();
    let model = EnvModel::new(cfg.env_at(3)).unwrap();
    let seed = driftqec::runner::train_seed(&cfg, 3);

    let t = train_agent(&cfg, AgentKind::Chdqn(AblationVariant::Full), 3).unwrap();
    let mut core = ChDqn::init(cfg.agent.clone(), seed).unwrap();
    let log = core.train(&model, 4, seed).unwrap();
    assert_eq!(t.log, log);
    assert_eq!(t.checkpoint.state, core.state());

    let g = train_agent(&cfg, AgentKind::Gated, 3).unwrap();
    let (base, _) = train_baseline(&model, &cfg.agent, 4, seed).unwrap();
    assert_eq!(g.checkpoint.state, base.state());
    assert_eq!(g.checkpoint.dims.hidden, 10);

    let no_meta = train_agent(&cfg, AgentKind::Chdqn(AblationVariant::NoMeta), 3).unwrap();
    assert_eq!(no_meta.checkpoint.hyper.eta_meta, 0.0);
    assert_eq!(no_meta.checkpoint.policy, "no-meta");
}

#[test]
fn parallel_evaluation_equals_sequential() {
    let cfg = tiny();
    let model = EnvModel::new(EnvConfig::default().with_distance(5)).unwrap();
    let ck = train_agent(&cfg, AgentKind::Chdqn(AblationVariant::Full), 3).unwrap().checkpoint;
    let sequential = evaluate(&model, &mut *ck.policy().unwrap(), "chdqn", 23, 40).unwrap();
    for threads in [1, 2, 5, 64] {
        let opts = EvalOptions {
            runs: 23,
            base_seed: 40,
            threads,
            ci: CiMethod::Normal,
            bootstrap_resamples: 0,
            keep_traces: false,
        };
        let (ev, traces) = evaluate_parallel(&model, "chdqn", &|| ck.policy(), &opts).unwrap();
        assert_eq!(ev, sequential, "threads = {threads}");
        assert!(traces.is_empty());
    }
    let stat = evaluate(&model, &mut StaticPolicy, "static", 9, 1).unwrap();
    let opts = EvalOptions {
        runs: 9,
        base_seed: 1,
        threads: 4,
        ci: CiMethod::Normal,
        bootstrap_resamples: 0,
        keep_traces: false,
    };
    let (ev, _) = evaluate_parallel(&model, "static", &|| Ok(Box::new(StaticPolicy) as _), &opts).unwrap();
    assert_eq!(ev, stat);
}

#[test]
fn par_map_keeps_order() {
    let items: Vec<u64> = (0..100).collect();
    let out = par_map(&items, 7, |x| x * x);
    assert_eq!(out, items.iter().map(|x| x * x).collect::<Vec<_>>());
    assert!(par_map(&Vec::<u64>::new(), 4, |x| *x).is_empty());
}

#[test]
fn metrics_are_recomputable_from_traces() {
    let model = EnvModel::new(EnvConfig::default().with_distance(3)).unwrap();
    let ck = train_agent(&tiny(), AgentKind::Chdqn(AblationVariant::Full), 3).unwrap().checkpoint;
    let opts = EvalOptions {
        runs: 15,
        base_seed: 7,
        threads: 3,
        ci: CiMethod::Normal,
        bootstrap_resamples: 0,
        keep_traces: true,
    };
    let (ev, traces) = evaluate_parallel(&model, "chdqn", &|| ck.policy(), &opts).unwrap();
    let bytes = trace_jsonl(&traces);
    let lines: Vec<TraceLine> = std::str::from_utf8(&bytes)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    for (i, run) in ev.runs.iter().enumerate() {
        let cycles: Vec<&TraceLine> = lines.iter().filter(|l| l.run == i).collect();
        let ttt = cycles.len();
        let last = cycles.last().unwrap();
        assert_eq!(run.seed, last.seed);
        assert_eq!(run.ttt, ttt);
        assert_eq!(last.t, ttt);
        assert!((run.hz - last.hazard / ttt as f64).abs() < 1e-12);
        let ctrl: f64 = cycles.iter().map(|c| c.action as f64).sum();
        assert!((run.ctrl - ctrl).abs() < 1e-12);
        let lat = cycles.iter().map(|c| c.latent_norm.unwrap()).sum::<f64>() / ttt as f64;
        assert!((run.lat_norm.unwrap() - lat).abs() < 1e-12);
        assert_eq!(run.censored, ttt == model.config().max_cycles && last.hazard < model.hazard_threshold());
    }
    let hz_mean = ev.runs.iter().map(|r| r.hz).sum::<f64>() / ev.runs.len() as f64;
    assert!((ev.metrics.hz_mean - hz_mean).abs() < 1e-12);
}

#[test]
fn metrics_csv_round_trips() {
    let model = EnvModel::new(EnvConfig::default().with_distance(3)).unwrap();
    let ev = evaluate(&model, &mut StaticPolicy, "static", 10, 0).unwrap();
    let row = MetricsRow::from(&ev.metrics);
    let bytes = csv_bytes(&[row.clone()]);
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let back: MetricsRow = r.deserialize().next().unwrap().unwrap();
    assert_eq!(back, row);
    assert_eq!(back.lat_norm_mean, None);
}
