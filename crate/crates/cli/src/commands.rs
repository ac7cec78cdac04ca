//! The four workflows. Each writes into its own directory under the run's
//! output path together with the resolved config that produced it:
//!
//! ```text
//! <out>/<name>/train/      <policy>-d<d>.ckpt, <policy>-d<d>.log.csv
//! <out>/<name>/eval/       metrics.csv, runs.csv, survival.csv, hazard.csv, efficiency.csv, traces/
//! <out>/<name>/ablation/   ablation.csv, the eval tables, checkpoints and logs of every variant
//! <out>/<name>/sweep/      summary.csv, cell-NNN/{train,eval}/
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use driftqec_core::baseline::StaticPolicy;
use driftqec_core::env::EnvModel;
use driftqec_core::eval::{AblationReport, AblationVariant, VariantResult};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{self, RunConfig, RESOLVED_NAME};
use crate::output::{self, write_atomic, write_csv, EvalTables, MetricsRow, TrainRow};
use crate::runner::{self, evaluate_parallel, par_map, AgentKind, EvalOptions, Trained, STATIC_ID};
use crate::CliError;

/// Options shared by every command.
#[derive(Debug, Clone, Default)]
pub struct Common {
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub full: bool,
}

impl Common {
    pub fn resolve(&self) -> Result<(RunConfig, PathBuf, usize), CliError> {
        let mut cfg = RunConfig::load(self.config.as_deref(), &self.overrides)?;
        if self.full {
            cfg.harness.eval_runs = cfg.harness.full_eval_runs;
        }
        let out = cfg.output_path(self.out.as_deref());
        let threads = self.threads.unwrap_or_else(runner::default_threads).max(1);
        Ok((cfg, out, threads))
    }
}

fn snapshot(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    write_atomic(&dir.join(RESOLVED_NAME), cfg.resolved().as_bytes())
}

pub fn checkpoint_name(label: &str, distance: u32) -> String {
    format!("{label}-d{distance}.ckpt")
}

fn save_trained(dir: &Path, t: &Trained) -> Result<PathBuf, CliError> {
    let c = &t.checkpoint;
    let path = dir.join(checkpoint_name(&c.policy, c.distance));
    c.save(&path)?;
    let rows: Vec<TrainRow> = t.log.iter().map(Into::into).collect();
    write_csv(&dir.join(format!("{}-d{}.log.csv", c.policy, c.distance)), &rows)?;
    Ok(path)
}

/// Trains every `(kind, distance)` pair into `<out>/train`.
pub fn run_train(
    cfg: &RunConfig,
    out: &Path,
    threads: usize,
    kinds: &[AgentKind],
    distances: &[u32],
) -> Result<Vec<PathBuf>, CliError> {
    let dir = out.join("train");
    snapshot(cfg, &dir)?;
    let jobs: Vec<(AgentKind, u32)> = kinds
        .iter()
        .flat_map(|&k| distances.iter().map(move |&d| (k, d)))
        .collect();
    let results = par_map(&jobs, threads, |&(k, d)| runner::train_agent(cfg, k, d));
    let mut paths = Vec::new();
    for r in results {
        let t = r?;
        let path = save_trained(&dir, &t)?;
        log::info!("{} trained in {:.1}s -> {}", t.kind.label(), t.seconds, path.display());
        paths.push(path);
    }
    Ok(paths)
}

pub fn train(common: &Common, kinds: &[AgentKind], distances: &[u32]) -> Result<Vec<PathBuf>, CliError> {
    let (cfg, out, threads) = common.resolve()?;
    let kinds = if kinds.is_empty() { &[AgentKind::Chdqn(AblationVariant::Full)][..] } else { kinds };
    let distances = if distances.is_empty() { &cfg.harness.distances[..] } else { distances };
    run_train(&cfg, &out, threads, kinds, distances)
}

/// Checkpoints in `<out>/train`, sorted by file name.
pub fn discover_checkpoints(out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let dir = out.join("train");
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut found: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| CliError::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .collect();
    found.sort();
    Ok(found)
}

pub struct EvalRequest {
    pub checkpoints: Vec<PathBuf>,
    pub with_static: bool,
    /// Restricts the distances; empty means every distance the checkpoints
    /// cover, or the configured list when there are none.
    pub distances: Vec<u32>,
}

pub fn run_evaluate(cfg: &RunConfig, out: &Path, threads: usize, req: &EvalRequest) -> Result<EvalTables, CliError> {
    // Load and check everything before the first episode runs.
    let mut checkpoints = Vec::new();
    for p in &req.checkpoints {
        let c = Checkpoint::load(p)?;
        if !req.distances.is_empty() && !req.distances.contains(&c.distance) {
            continue;
        }
        checkpoints.push(c);
    }
    let mut distances: Vec<u32> = if !req.distances.is_empty() {
        req.distances.clone()
    } else if checkpoints.is_empty() {
        cfg.harness.distances.clone()
    } else {
        checkpoints.iter().map(|c| c.distance).collect()
    };
    distances.sort_unstable();
    distances.dedup();
    let models = distances
        .iter()
        .map(|&d| Ok((d, EnvModel::new(cfg.env_at(d))?)))
        .collect::<Result<Vec<_>, CliError>>()?;

    let dir = out.join("eval");
    snapshot(cfg, &dir)?;
    let opts = EvalOptions::from_config(cfg, threads);
    let mut tables = EvalTables::default();
    for (d, model) in &models {
        let mut jobs: Vec<(String, Box<runner::PolicyFactory<'_>>)> = Vec::new();
        if req.with_static {
            jobs.push((STATIC_ID.into(), Box::new(|| Ok(Box::new(StaticPolicy) as _))));
        }
        for c in checkpoints.iter().filter(|c| c.distance == *d) {
            jobs.push((c.policy.clone(), Box::new(move || c.policy())));
        }
        for (id, factory) in &jobs {
            let (ev, traces) = evaluate_parallel(model, id, factory.as_ref(), &opts)?;
            log::info!("{id} d={d}: TTT {:.1}, HZ {:.5}", ev.metrics.ttt_mean, ev.metrics.hz_mean);
            if opts.keep_traces {
                let path = dir.join("traces").join(format!("{id}-d{d}.jsonl"));
                write_atomic(&path, &output::trace_jsonl(&traces))?;
            }
            tables.push(&ev);
        }
    }
    tables.write(&dir, STATIC_ID)?;
    Ok(tables)
}

pub struct EvalOverrides {
    pub runs: Option<usize>,
    pub base_seed: Option<u64>,
    pub traces: bool,
}

pub fn evaluate(common: &Common, req: EvalRequest, o: &EvalOverrides) -> Result<EvalTables, CliError> {
    let (mut cfg, out, threads) = common.resolve()?;
    if let Some(n) = o.runs {
        cfg.harness.eval_runs = n;
    }
    if let Some(s) = o.base_seed {
        cfg.harness.eval_seed = s;
    }
    cfg.harness.traces |= o.traces;
    cfg.validate()?;
    let req = if req.checkpoints.is_empty() {
        EvalRequest {
            checkpoints: discover_checkpoints(&out)?,
            ..req
        }
    } else {
        req
    };
    run_evaluate(&cfg, &out, threads, &req)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCsvRow {
    pub variant: String,
    pub d: u32,
    pub n_runs: usize,
    pub ttt_mean: f64,
    pub ttt_ci_lo: f64,
    pub ttt_ci_hi: f64,
    pub vs_static_mean: f64,
    pub vs_static_ci_lo: f64,
    pub vs_static_ci_hi: f64,
    pub vs_full_mean: f64,
    pub vs_full_ci_lo: f64,
    pub vs_full_ci_hi: f64,
    pub gap_reduction: Option<f64>,
    pub train_seconds: f64,
    /// Mean over the last tenth of training episodes.
    pub final_td_loss: f64,
    pub final_cons_loss: f64,
}

fn tail_mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    let k = (n / 10).max(1);
    if n == 0 {
        return f64::NAN;
    }
    values.skip(n - k).sum::<f64>() / k as f64
}

/// Trains every learner variant at one distance and compares them with
/// the static policy on shared evaluation seeds.
pub fn ablate(common: &Common, distance: Option<u32>) -> Result<AblationReport, CliError> {
    let (cfg, out, threads) = common.resolve()?;
    let d = distance.unwrap_or(cfg.harness.ablation_distance);
    let dir = out.join("ablation");
    snapshot(&cfg, &dir)?;
    let model = EnvModel::new(cfg.env_at(d))?;
    let trained = par_map(&AblationVariant::ALL, threads, |&v| {
        runner::train_agent(&cfg, AgentKind::Chdqn(v), d)
    });
    let opts = EvalOptions::from_config(&cfg, threads);
    let mut tables = EvalTables::default();
    let (stat, _) = evaluate_parallel(&model, STATIC_ID, &|| Ok(Box::new(StaticPolicy) as _), &opts)?;
    tables.push(&stat);
    let mut variants = Vec::new();
    for (t, v) in trained.into_iter().zip(AblationVariant::ALL) {
        let t = t?;
        save_trained(&dir, &t)?;
        let (ev, _) = evaluate_parallel(&model, v.name(), &|| t.checkpoint.policy(), &opts)?;
        tables.push(&ev);
        variants.push(VariantResult {
            variant: v,
            runs: ev.runs,
            train_seconds: t.seconds,
            final_td_loss: tail_mean(t.log.iter().map(|l| l.td_loss)),
            final_cons_loss: tail_mean(t.log.iter().map(|l| l.cons_loss)),
        });
    }
    let report = AblationReport::build(d, &stat.runs, &variants)?;
    let rows: Vec<AblationCsvRow> = report
        .rows
        .iter()
        .map(|r| AblationCsvRow {
            variant: r.variant.name().into(),
            d,
            n_runs: r.metrics.n_runs,
            ttt_mean: r.metrics.ttt_mean,
            ttt_ci_lo: r.metrics.ttt_ci95.0,
            ttt_ci_hi: r.metrics.ttt_ci95.1,
            vs_static_mean: r.vs_static.mean,
            vs_static_ci_lo: r.vs_static.ci95.0,
            vs_static_ci_hi: r.vs_static.ci95.1,
            vs_full_mean: r.vs_full.mean,
            vs_full_ci_lo: r.vs_full.ci95.0,
            vs_full_ci_hi: r.vs_full.ci95.1,
            gap_reduction: if r.variant == AblationVariant::Full { None } else { report.gap_reduction(r.variant) },
            train_seconds: r.train_seconds,
            final_td_loss: r.final_td_loss,
            final_cons_loss: r.final_cons_loss,
        })
        .collect();
    // Wall-clock time is the one column that differs between identical runs.
    write_csv(&dir.join("ablation.csv"), &rows)?;
    tables.write(&dir, STATIC_ID)?;
    Ok(report)
}

/// One `key=[v1, v2, ...]` axis of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct GridAxis {
    pub key: String,
    pub values: Vec<toml::Value>,
}

impl GridAxis {
    pub fn parse(spec: &str) -> Result<Self, CliError> {
        let (key, raw) = spec
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("grid `{spec}`: expected key=[v1, v2, ...]")))?;
        match config::parse_value(raw.trim()) {
            toml::Value::Array(values) if !values.is_empty() => Ok(Self {
                key: key.trim().to_string(),
                values,
            }),
            _ => Err(CliError::Config(format!(
                "grid `{spec}`: values must be a non-empty TOML array"
            ))),
        }
    }
}

/// Cartesian product in row-major order (last axis fastest).
pub fn grid_cells(axes: &[GridAxis]) -> Vec<Vec<(String, toml::Value)>> {
    let mut cells = vec![Vec::new()];
    for axis in axes {
        cells = cells
            .into_iter()
            .flat_map(|cell: Vec<(String, toml::Value)>| {
                axis.values.iter().map(move |v| {
                    let mut c = cell.clone();
                    c.push((axis.key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    cells
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub rank: Option<usize>,
    pub cell: String,
    pub settings: String,
    pub status: String,
    pub ttt_mean: Option<f64>,
    pub hz_mean: Option<f64>,
    pub ctrl_mean: Option<f64>,
}

const DONE_NAME: &str = "cell.done";

fn run_cell(cfg: &RunConfig, dir: &Path, threads: usize) -> Result<(), CliError> {
    let resolved = cfg.resolved();
    if fs::read_to_string(dir.join(DONE_NAME)).is_ok_and(|done| done == resolved) {
        log::info!("{}: complete, skipping", dir.display());
        return Ok(());
    }
    let kinds = [AgentKind::Chdqn(AblationVariant::Full)];
    let checkpoints = run_train(cfg, dir, threads, &kinds, &cfg.harness.distances)?;
    run_evaluate(
        cfg,
        dir,
        threads,
        &EvalRequest {
            checkpoints,
            with_static: true,
            distances: Vec::new(),
        },
    )?;
    write_atomic(&dir.join(DONE_NAME), resolved.as_bytes())
}

fn cell_summary(dir: &Path) -> Result<(f64, f64, f64), CliError> {
    let rows: Vec<MetricsRow> = output::read_csv(&dir.join("eval").join("metrics.csv"))?;
    let learner: Vec<&MetricsRow> = rows.iter().filter(|r| r.policy != STATIC_ID).collect();
    let n = learner.len().max(1) as f64;
    let mean = |f: fn(&MetricsRow) -> f64| learner.iter().map(|r| f(r)).sum::<f64>() / n;
    Ok((mean(|r| r.ttt_mean), mean(|r| r.hz_mean), mean(|r| r.ctrl_mean)))
}

/// Runs train + evaluate per grid cell. Completed cells are skipped on a
/// rerun; failed cells are recorded and the sweep carries on.
pub fn sweep(common: &Common, axes: &[GridAxis]) -> Result<Vec<SummaryRow>, CliError> {
    let (base, out, threads) = common.resolve()?;
    let dir = out.join("sweep");
    snapshot(&base, &dir)?;
    let base_table = base.to_table();
    let cells = grid_cells(axes);
    let mut rows = Vec::new();
    for (i, cell) in cells.iter().enumerate() {
        let name = format!("cell-{i:03}");
        let settings = cell
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join("; ");
        let cell_dir = dir.join(&name);
        let result = (|| {
            let mut table = base_table.clone();
            for (k, v) in cell {
                config::set_path(&mut table, k, v.clone())?;
            }
            let cfg = RunConfig::from_table(table)?;
            run_cell(&cfg, &cell_dir, threads)?;
            cell_summary(&cell_dir)
        })();
        let row = match result {
            Ok((ttt, hz, ctrl)) => SummaryRow {
                rank: None,
                cell: name,
                settings,
                status: "ok".into(),
                ttt_mean: Some(ttt),
                hz_mean: Some(hz),
                ctrl_mean: Some(ctrl),
            },
            Err(e) => {
                log::warn!("{name} failed: {e}");
                SummaryRow {
                    rank: None,
                    cell: name,
                    settings,
                    status: format!("failed: {e}"),
                    ttt_mean: None,
                    hz_mean: None,
                    ctrl_mean: None,
                }
            }
        };
        rows.push(row);
    }
    rows.sort_by(|a, b| match (a.ttt_mean, b.ttt_mean) {
        (Some(x), Some(y)) => y.total_cmp(&x).then_with(|| a.cell.cmp(&b.cell)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.cell.cmp(&b.cell),
    });
    for (i, r) in rows.iter_mut().filter(|r| r.ttt_mean.is_some()).enumerate() {
        r.rank = Some(i + 1);
    }
    write_csv(&dir.join("summary.csv"), &rows)?;
    let failed = rows.iter().filter(|r| r.ttt_mean.is_none()).count();
    if failed > 0 {
        return Err(CliError::PartialSweep {
            failed,
            total: rows.len(),
        });
    }
    Ok(rows)
}
