//! CSV and JSONL writers. Every file is rendered in memory and written with
//! a temp-then-rename, so readers never see partial files and identical
//! inputs give identical bytes.
//!
//! | file | columns |
//! |---|---|
//! | `metrics.csv` | policy, d, n_runs, ttt_mean, ttt_std, ttt_ci_lo, ttt_ci_hi, hz_mean, hz_std, ctrl_mean, lat_norm_mean, censored |
//! | `runs.csv` | policy, d, run, seed, ttt, censored, final_hazard, hz, ctrl, lat_norm |
//! | `survival.csv` | policy, d, t, S |
//! | `hazard.csv` | policy, d, t, mean_hazard, n_alive |
//! | `efficiency.csv` | policy, d, efficiency (empty when the policy spends no control); absent without learners |
//! | `<policy>-d<d>.log.csv` | episode, return, td_loss, cons_loss, mean_latent_norm, epsilon, time_to_threshold, rejected_updates |
//! | `traces/<policy>-d<d>.jsonl` | one object per cycle: run, seed, t, action, reward, hazard, fidelity, rho, sigma, pi, latent_norm |

use std::fs;
use std::io::Write;
use std::path::Path;

use driftqec_core::agent::EpisodeLog;
use driftqec_core::env::EpisodeTrace;
use driftqec_core::eval::{EfficiencyRow, Evaluation, MetricsRecord};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(&tmp, e))?;
    f.sync_all().map_err(|e| CliError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("rows serialize to CSV");
    }
    w.into_inner().expect("in-memory writer")
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    write_atomic(path, &csv_bytes(rows))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub policy: String,
    pub d: u32,
    pub n_runs: usize,
    pub ttt_mean: f64,
    pub ttt_std: f64,
    pub ttt_ci_lo: f64,
    pub ttt_ci_hi: f64,
    pub hz_mean: f64,
    pub hz_std: f64,
    pub ctrl_mean: f64,
    pub lat_norm_mean: Option<f64>,
    pub censored: usize,
}

impl From<&MetricsRecord> for MetricsRow {
    fn from(m: &MetricsRecord) -> Self {
        Self {
            policy: m.policy.clone(),
            d: m.distance,
            n_runs: m.n_runs,
            ttt_mean: m.ttt_mean,
            ttt_std: m.ttt_std,
            ttt_ci_lo: m.ttt_ci95.0,
            ttt_ci_hi: m.ttt_ci95.1,
            hz_mean: m.hz_mean,
            hz_std: m.hz_std,
            ctrl_mean: m.ctrl_mean,
            lat_norm_mean: m.lat_norm_mean,
            censored: m.censored_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub policy: String,
    pub d: u32,
    pub run: usize,
    pub seed: u64,
    pub ttt: usize,
    pub censored: bool,
    pub final_hazard: f64,
    pub hz: f64,
    pub ctrl: f64,
    pub lat_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRow {
    pub policy: String,
    pub d: u32,
    pub t: usize,
    #[serde(rename = "S")]
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardRow {
    pub policy: String,
    pub d: u32,
    pub t: usize,
    pub mean_hazard: f64,
    pub n_alive: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyCsvRow {
    pub policy: String,
    pub d: u32,
    pub efficiency: Option<f64>,
}

impl From<&EfficiencyRow> for EfficiencyCsvRow {
    fn from(e: &EfficiencyRow) -> Self {
        Self {
            policy: e.policy.clone(),
            d: e.distance,
            efficiency: e.efficiency,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub episode: usize,
    #[serde(rename = "return")]
    pub total_return: f64,
    pub td_loss: f64,
    pub cons_loss: f64,
    pub mean_latent_norm: f64,
    pub epsilon: f64,
    pub time_to_threshold: usize,
    pub rejected_updates: usize,
}

impl From<&EpisodeLog> for TrainRow {
    fn from(l: &EpisodeLog) -> Self {
        Self {
            episode: l.episode,
            total_return: l.total_return,
            td_loss: l.td_loss,
            cons_loss: l.cons_loss,
            mean_latent_norm: l.mean_latent_norm,
            epsilon: l.epsilon,
            time_to_threshold: l.time_to_threshold,
            rejected_updates: l.rejected_updates,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub run: usize,
    pub seed: u64,
    pub t: usize,
    pub action: usize,
    pub reward: f64,
    pub hazard: f64,
    pub fidelity: f64,
    pub rho: f64,
    pub sigma: f64,
    pub pi: u8,
    pub latent_norm: Option<f64>,
}

/// All evaluation tables, accumulated in emission order.
#[derive(Debug, Default)]
pub struct EvalTables {
    pub metrics: Vec<MetricsRow>,
    pub runs: Vec<RunRow>,
    pub survival: Vec<SurvivalRow>,
    pub hazard: Vec<HazardRow>,
    pub records: Vec<MetricsRecord>,
}

impl EvalTables {
    pub fn push(&mut self, ev: &Evaluation) {
        let (p, d) = (&ev.metrics.policy, ev.metrics.distance);
        self.metrics.push((&ev.metrics).into());
        self.records.push(ev.metrics.clone());
        self.runs.extend(ev.runs.iter().enumerate().map(|(i, r)| RunRow {
            policy: p.clone(),
            d,
            run: i,
            seed: r.seed,
            ttt: r.ttt,
            censored: r.censored,
            final_hazard: r.final_hazard,
            hz: r.hz,
            ctrl: r.ctrl,
            lat_norm: r.lat_norm,
        }));
        self.survival
            .extend(ev.survival.times.iter().zip(&ev.survival.survival).map(|(&t, &s)| SurvivalRow {
                policy: p.clone(),
                d,
                t,
                s,
            }));
        let h = &ev.hazard;
        self.hazard.extend(
            h.times
                .iter()
                .zip(&h.mean_hazard)
                .zip(&h.n_alive)
                .map(|((&t, &m), &n)| HazardRow {
                    policy: p.clone(),
                    d,
                    t,
                    mean_hazard: m,
                    n_alive: n,
                }),
        );
    }

    pub fn write(&self, dir: &Path, static_id: &str) -> Result<(), CliError> {
        write_csv(&dir.join("runs.csv"), &self.runs)?;
        write_csv(&dir.join("survival.csv"), &self.survival)?;
        write_csv(&dir.join("hazard.csv"), &self.hazard)?;
        let has_static = |d: u32| self.records.iter().any(|r| r.policy == static_id && r.distance == d);
        if self.records.iter().all(|r| has_static(r.distance)) {
            let eff = driftqec_core::eval::efficiency_table(&self.records, static_id)?;
            let rows: Vec<EfficiencyCsvRow> = eff.iter().map(Into::into).collect();
            if !rows.is_empty() {
                write_csv(&dir.join("efficiency.csv"), &rows)?;
            }
        }
        write_csv(&dir.join("metrics.csv"), &self.metrics)
    }
}

pub fn trace_jsonl(traces: &[(u64, EpisodeTrace)]) -> Vec<u8> {
    let mut out = Vec::new();
    for (run, (seed, trace)) in traces.iter().enumerate() {
        for (t, r) in trace.records.iter().enumerate() {
            let line = TraceLine {
                run,
                seed: *seed,
                t: t + 1,
                action: r.action,
                reward: r.reward,
                hazard: r.hazard,
                fidelity: r.fidelity,
                rho: r.observation.rho,
                sigma: r.observation.sigma,
                pi: r.observation.pi,
                latent_norm: r.latent_norm,
            };
            serde_json::to_writer(&mut out, &line).expect("trace line serializes");
            out.push(b'\n');
        }
    }
    out
}
