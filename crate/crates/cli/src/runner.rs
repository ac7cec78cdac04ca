//! Training and parallel evaluation on top of the core crate.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use driftqec_core::agent::{AgentHyper, ChDqn, EpisodeLog, Learner, RecurrentQNet};
use driftqec_core::baseline::{baseline_hyper, GatedDqn};
use driftqec_core::env::{EnvModel, EpisodeTrace};
use driftqec_core::eval::{bootstrap_ci95, run_seed, AblationVariant, CiMethod, Evaluation, RunSummary};
use driftqec_core::policy::{run_episode, Policy};
use driftqec_core::rng::mix_seed;

use crate::checkpoint::{CellKind, Checkpoint};
use crate::config::RunConfig;
use crate::CliError;

pub const STATIC_ID: &str = "static";

pub fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Maps `f` over `items` on up to `threads` workers; results keep item order.
pub fn par_map<I: Sync, T: Send>(items: &[I], threads: usize, f: impl Fn(&I) -> T + Sync) -> Vec<T> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<T>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let out = f(&items[i]);
                *slots[i].lock().unwrap() = Some(out);
            });
        }
    });
    slots.into_iter().map(|m| m.into_inner().unwrap().unwrap()).collect()
}

pub type PolicyFactory<'a> = dyn Fn() -> Result<Box<dyn Policy + Send>, CliError> + Sync + 'a;

pub struct EvalOptions {
    pub runs: usize,
    pub base_seed: u64,
    pub threads: usize,
    pub ci: CiMethod,
    pub bootstrap_resamples: usize,
    pub keep_traces: bool,
}

impl EvalOptions {
    pub fn from_config(cfg: &RunConfig, threads: usize) -> Self {
        Self {
            runs: cfg.harness.eval_runs,
            base_seed: cfg.harness.eval_seed,
            threads,
            ci: cfg.harness.ci,
            bootstrap_resamples: cfg.harness.bootstrap_resamples,
            keep_traces: cfg.harness.traces,
        }
    }
}

/// Runs `0..runs` split into contiguous chunks, one policy instance per
/// chunk, and merges by run index. Equal to the sequential harness.
pub fn evaluate_parallel(
    model: &EnvModel,
    policy_id: &str,
    factory: &PolicyFactory<'_>,
    opts: &EvalOptions,
) -> Result<(Evaluation, Vec<(u64, EpisodeTrace)>), CliError> {
    let chunks = opts.threads.clamp(1, opts.runs.max(1));
    let size = opts.runs.div_ceil(chunks);
    let ranges: Vec<(usize, usize)> = (0..chunks)
        .map(|c| (c * size, ((c + 1) * size).min(opts.runs)))
        .filter(|(a, b)| a < b)
        .collect();
    type Chunk = Result<Vec<(RunSummary, Option<EpisodeTrace>)>, CliError>;
    let parts: Vec<Chunk> = par_map(&ranges, chunks, |&(a, b)| {
        let mut policy = factory()?;
        (a..b)
            .map(|i| {
                let seed = run_seed(opts.base_seed, i);
                let trace = run_episode(model, &mut *policy, seed)?;
                let summary = RunSummary::from_trace(seed, &trace);
                Ok((summary, opts.keep_traces.then_some(trace)))
            })
            .collect()
    });
    let mut runs = Vec::with_capacity(opts.runs);
    let mut traces = Vec::new();
    for part in parts {
        for (s, t) in part? {
            if let Some(t) = t {
                traces.push((s.seed, t));
            }
            runs.push(s);
        }
    }
    let cfg = model.config();
    let mut ev = Evaluation::from_runs(policy_id, cfg.distance, cfg.max_cycles, runs);
    if opts.ci == CiMethod::Bootstrap {
        let ttt: Vec<f64> = ev.runs.iter().map(|r| r.ttt as f64).collect();
        ev.metrics.ttt_ci95 = bootstrap_ci95(&ttt, opts.bootstrap_resamples, opts.base_seed);
    }
    Ok((ev, traces))
}

/// The learners the CLI can train.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentKind {
    /// The belief-state learner, optionally with terms switched off.
    Chdqn(AblationVariant),
    /// The gated recurrent baseline.
    Gated,
}

impl AgentKind {
    pub const ALL: [AgentKind; 5] = [
        AgentKind::Chdqn(AblationVariant::Full),
        AgentKind::Gated,
        AgentKind::Chdqn(AblationVariant::NoMeta),
        AgentKind::Chdqn(AblationVariant::NoConsistency),
        AgentKind::Chdqn(AblationVariant::BothOff),
    ];

    pub fn label(self) -> &'static str {
        match self {
            AgentKind::Chdqn(AblationVariant::Full) => "chdqn",
            AgentKind::Chdqn(v) => v.name(),
            AgentKind::Gated => "gated",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.label() == s)
    }
}

pub struct Trained {
    pub kind: AgentKind,
    pub checkpoint: Checkpoint,
    pub log: Vec<EpisodeLog>,
    pub seconds: f64,
}

/// Per-distance training seed, shared by every learner kind.
pub fn train_seed(cfg: &RunConfig, distance: u32) -> u64 {
    mix_seed(cfg.seed, u64::from(distance))
}

pub fn train_agent(cfg: &RunConfig, kind: AgentKind, distance: u32) -> Result<Trained, CliError> {
    let model = EnvModel::new(cfg.env_at(distance))?;
    let seed = train_seed(cfg, distance);
    let episodes = cfg.harness.train_episodes;
    let start = Instant::now();
    let label = kind.label();
    let (checkpoint, log) = match kind {
        AgentKind::Chdqn(variant) => {
            let mut learner = ChDqn::init(variant.apply(&cfg.agent), seed)?;
            let log = fit(&mut learner, &model, episodes, seed, label, distance)?;
            (Checkpoint::from_learner(&learner, label, CellKind::Elman, distance, seed), log)
        }
        AgentKind::Gated => {
            let mut hyper: AgentHyper = baseline_hyper(&cfg.agent);
            if let Some(h) = cfg.baseline.hidden {
                hyper.hidden = h;
            }
            let mut learner = GatedDqn::init(hyper, seed)?;
            let log = fit(&mut learner, &model, episodes, seed, label, distance)?;
            (Checkpoint::from_learner(&learner, label, CellKind::Gated, distance, seed), log)
        }
    };
    Ok(Trained {
        kind,
        checkpoint,
        log,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn fit<N: RecurrentQNet>(
    learner: &mut Learner<N>,
    model: &EnvModel,
    episodes: usize,
    seed: u64,
    label: &str,
    distance: u32,
) -> Result<Vec<EpisodeLog>, CliError> {
    let step = (episodes / 5).max(1);
    Ok(learner.train_with(model, episodes, seed, |_, row| {
        if (row.episode + 1) % step == 0 {
            log::info!(
                "{label} d={distance}: episode {}/{episodes}, TTT {}, td {:.4}",
                row.episode + 1,
                row.time_to_threshold,
                row.td_loss
            );
        }
        Ok(())
    })?)
}
