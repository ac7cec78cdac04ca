//! Monte Carlo statistics over evaluation episodes: survival metrics with
//! confidence intervals, the empirical survival function, mean hazard
//! trajectories, control efficiency and paired ablation comparisons.
//!
//! Runs are summarised one at a time ([`RunSummary`]) and aggregated in run
//! order, so callers may produce the summaries in parallel and still get
//! bit-identical aggregates.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::agent::AgentHyper;
use crate::env::{EnvModel, EpisodeTrace};
use crate::error::{Error, Result};
use crate::math;
use crate::policy::{run_episode, Policy};
use crate::rng;

/// `z` for a two-sided 95% normal interval.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Seed of evaluation run `index`.
pub fn run_seed(base_seed: u64, index: usize) -> u64 {
    base_seed.wrapping_add(index as u64)
}

/// Per-run quantities needed by every aggregate.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunSummary {
    pub seed: u64,
    /// `T_fail`, or the cycle cap for censored runs.
    pub ttt: usize,
    pub censored: bool,
    pub final_hazard: f64,
    /// `H_T / T`.
    pub hz: f64,
    pub ctrl: f64,
    /// Time average of `‖h_t‖` for policies with a latent state.
    pub lat_norm: Option<f64>,
    /// `H_t` after each cycle.
    pub hazards: Vec<f64>,
}

impl RunSummary {
    pub fn from_trace(seed: u64, trace: &EpisodeTrace) -> Self {
        let ttt = trace.time_to_threshold();
        let final_hazard = trace.final_hazard();
        let norms: Vec<f64> = trace.records.iter().filter_map(|r| r.latent_norm).collect();
        let lat_norm = if norms.is_empty() {
            None
        } else {
            Some(norms.iter().sum::<f64>() / norms.len() as f64)
        };
        Self {
            seed,
            ttt,
            censored: trace.is_censored(),
            final_hazard,
            hz: if ttt == 0 { 0.0 } else { final_hazard / ttt as f64 },
            ctrl: trace.total_control_cost,
            lat_norm,
            hazards: trace.records.iter().map(|r| r.hazard).collect(),
        }
    }
}

/// Sample mean and standard deviation (`n − 1` denominator; 0 for `n < 2`).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, math::sqrt(var))
}

/// Normal-approximation 95% interval for the mean.
pub fn normal_ci95(values: &[f64]) -> (f64, f64) {
    let (mean, std) = mean_std(values);
    let half = Z95 * std / math::sqrt(values.len() as f64);
    (mean - half, mean + half)
}

/// Percentile bootstrap 95% interval for the mean.
pub fn bootstrap_ci95(values: &[f64], resamples: usize, seed: u64) -> (f64, f64) {
    let n = values.len();
    if n == 0 || resamples == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mut rng = rng::stream_rng(seed, 0);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let pick = |q: f64| means[((q * (resamples - 1) as f64) + 0.5) as usize];
    (pick(0.025), pick(0.975))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum CiMethod {
    #[default]
    Normal,
    Bootstrap,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricsRecord {
    pub policy: String,
    pub distance: u32,
    pub n_runs: usize,
    pub ttt_mean: f64,
    pub ttt_std: f64,
    pub ttt_ci95: (f64, f64),
    pub hz_mean: f64,
    pub hz_std: f64,
    pub ctrl_mean: f64,
    pub lat_norm_mean: Option<f64>,
    pub censored_count: usize,
}

impl MetricsRecord {
    pub fn from_runs(policy: &str, distance: u32, runs: &[RunSummary]) -> Self {
        Self::from_runs_with(policy, distance, runs, CiMethod::Normal, 0)
    }

    pub fn from_runs_with(policy: &str, distance: u32, runs: &[RunSummary], ci: CiMethod, seed: u64) -> Self {
        let ttt: Vec<f64> = runs.iter().map(|r| r.ttt as f64).collect();
        let hz: Vec<f64> = runs.iter().map(|r| r.hz).collect();
        let (ttt_mean, ttt_std) = mean_std(&ttt);
        let (hz_mean, hz_std) = mean_std(&hz);
        let ctrl_mean = mean_std(&runs.iter().map(|r| r.ctrl).collect::<Vec<_>>()).0;
        let norms: Vec<f64> = runs.iter().filter_map(|r| r.lat_norm).collect();
        let ttt_ci95 = match ci {
            CiMethod::Normal => normal_ci95(&ttt),
            CiMethod::Bootstrap => bootstrap_ci95(&ttt, 2000, seed),
        };
        Self {
            policy: policy.to_string(),
            distance,
            n_runs: runs.len(),
            ttt_mean,
            ttt_std,
            ttt_ci95,
            hz_mean,
            hz_std,
            ctrl_mean,
            lat_norm_mean: if norms.is_empty() {
                None
            } else {
                Some(norms.iter().sum::<f64>() / norms.len() as f64)
            },
            censored_count: runs.iter().filter(|r| r.censored).count(),
        }
    }
}

/// `Ŝ(t) = (1/N) Σ 1{T_i > t}` on `t = 0..=max_cycles`; censored runs
/// survive the whole grid.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SurvivalCurve {
    pub times: Vec<usize>,
    pub survival: Vec<f64>,
    pub n_runs: usize,
}

impl SurvivalCurve {
    pub fn from_runs(runs: &[RunSummary], max_cycles: usize) -> Self {
        let n = runs.len();
        let mut failures = vec![0usize; max_cycles + 2];
        for r in runs.iter().filter(|r| !r.censored) {
            failures[r.ttt.min(max_cycles + 1)] += 1;
        }
        let mut alive = n;
        let mut survival = Vec::with_capacity(max_cycles + 1);
        for f in failures.iter().take(max_cycles + 1) {
            alive -= f;
            survival.push(if n == 0 { 1.0 } else { alive as f64 / n as f64 });
        }
        Self {
            times: (0..=max_cycles).collect(),
            survival,
            n_runs: n,
        }
    }

    pub fn at(&self, t: usize) -> f64 {
        self.survival.get(t).copied().unwrap_or(*self.survival.last().unwrap_or(&1.0))
    }

    pub fn is_valid(&self) -> bool {
        self.survival.first().is_none_or(|s| *s == 1.0)
            && self.survival.windows(2).all(|w| w[1] <= w[0])
            && self.survival.iter().all(|s| (0.0..=1.0).contains(s))
    }
}

/// Mean `H_t` over the runs that executed cycle `t`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct HazardTrajectory {
    /// Cycle index, starting at 1.
    pub times: Vec<usize>,
    pub mean_hazard: Vec<f64>,
    pub n_alive: Vec<usize>,
}

impl HazardTrajectory {
    pub fn from_runs(runs: &[RunSummary]) -> Self {
        let horizon = runs.iter().map(|r| r.hazards.len()).max().unwrap_or(0);
        let mut sum = vec![0.0; horizon];
        let mut count = vec![0usize; horizon];
        for r in runs {
            for (t, h) in r.hazards.iter().enumerate() {
                sum[t] += h;
                count[t] += 1;
            }
        }
        Self {
            times: (1..=horizon).collect(),
            mean_hazard: sum.iter().zip(&count).map(|(s, c)| s / *c as f64).collect(),
            n_alive: count,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: MetricsRecord,
    pub survival: SurvivalCurve,
    pub hazard: HazardTrajectory,
    pub runs: Vec<RunSummary>,
}

impl Evaluation {
    pub fn from_runs(policy: &str, distance: u32, max_cycles: usize, runs: Vec<RunSummary>) -> Self {
        Self {
            metrics: MetricsRecord::from_runs(policy, distance, &runs),
            survival: SurvivalCurve::from_runs(&runs, max_cycles),
            hazard: HazardTrajectory::from_runs(&runs),
            runs,
        }
    }
}

/// Runs `indices` of an evaluation sequentially.
pub fn evaluate_runs<P: Policy + ?Sized>(
    model: &EnvModel,
    policy: &mut P,
    base_seed: u64,
    indices: core::ops::Range<usize>,
) -> Result<Vec<RunSummary>> {
    indices
        .map(|i| {
            let seed = run_seed(base_seed, i);
            run_episode(model, policy, seed).map(|t| RunSummary::from_trace(seed, &t))
        })
        .collect()
}

/// `n_runs` greedy episodes seeded `base_seed + i`.
pub fn evaluate<P: Policy + ?Sized>(
    model: &EnvModel,
    policy: &mut P,
    policy_id: &str,
    n_runs: usize,
    base_seed: u64,
) -> Result<Evaluation> {
    let runs = evaluate_runs(model, policy, base_seed, 0..n_runs)?;
    let cfg = model.config();
    Ok(Evaluation::from_runs(policy_id, cfg.distance, cfg.max_cycles, runs))
}

/// `(TTT_policy − TTT_static) / CTRL_policy`, absent for zero control.
pub fn efficiency(ttt_policy: f64, ttt_static: f64, ctrl_policy: f64) -> Option<f64> {
    if ctrl_policy == 0.0 {
        None
    } else {
        Some((ttt_policy - ttt_static) / ctrl_policy)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EfficiencyRow {
    pub policy: String,
    pub distance: u32,
    pub efficiency: Option<f64>,
}

/// Efficiency of every non-static record against the static record at the
/// same distance.
pub fn efficiency_table(records: &[MetricsRecord], static_id: &str) -> Result<Vec<EfficiencyRow>> {
    records
        .iter()
        .filter(|r| r.policy != static_id)
        .map(|r| {
            let reference = records
                .iter()
                .find(|s| s.policy == static_id && s.distance == r.distance)
                .ok_or(Error::MissingStaticReference(r.distance))?;
            Ok(EfficiencyRow {
                policy: r.policy.clone(),
                distance: r.distance,
                efficiency: efficiency(r.ttt_mean, reference.ttt_mean, r.ctrl_mean),
            })
        })
        .collect()
}

/// Published summary numbers for one policy at one distance.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportedRow {
    pub policy: String,
    pub distance: u32,
    pub ttt: f64,
    pub ctrl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyCheck {
    pub policy: String,
    pub distance: u32,
    pub recomputed: Option<f64>,
    pub quoted: f64,
}

impl EfficiencyCheck {
    pub fn discrepancy(&self) -> Option<f64> {
        self.recomputed.map(|r| r - self.quoted)
    }
}

/// Recomputes efficiencies from reported TTT/CTRL rows and pairs each with a
/// separately quoted value `(policy, distance, value)`.
pub fn cross_check_efficiency(
    reported: &[ReportedRow],
    static_id: &str,
    quoted: &[(&str, u32, f64)],
) -> Result<Vec<EfficiencyCheck>> {
    quoted
        .iter()
        .map(|&(policy, distance, value)| {
            let find = |p: &str| reported.iter().find(|r| r.policy == p && r.distance == distance);
            let reference = find(static_id).ok_or(Error::MissingStaticReference(distance))?;
            let row = find(policy).ok_or_else(|| Error::param("policy", "no reported row for quoted value"))?;
            Ok(EfficiencyCheck {
                policy: policy.to_string(),
                distance,
                recomputed: efficiency(row.ttt, reference.ttt, row.ctrl),
                quoted: value,
            })
        })
        .collect()
}

/// Learner variants compared by the ablation suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AblationVariant {
    Full,
    NoMeta,
    NoConsistency,
    BothOff,
}

impl AblationVariant {
    pub const ALL: [Self; 4] = [Self::Full, Self::NoMeta, Self::NoConsistency, Self::BothOff];

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoMeta => "no-meta",
            Self::NoConsistency => "no-consistency",
            Self::BothOff => "both-off",
        }
    }

    pub fn apply(self, base: &AgentHyper) -> AgentHyper {
        let mut h = base.clone();
        if matches!(self, Self::NoMeta | Self::BothOff) {
            h.eta_meta = 0.0;
        }
        if matches!(self, Self::NoConsistency | Self::BothOff) {
            h.consistency_weight = 0.0;
        }
        h
    }
}

/// Mean of per-seed differences `a_i − b_i` with its normal 95% interval.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PairedDifference {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub ci95: (f64, f64),
}

/// Paired TTT difference between two evaluations on the same seeds.
pub fn paired_ttt_difference(a: &[RunSummary], b: &[RunSummary]) -> Result<PairedDifference> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "paired comparison",
            expected: a.len(),
            actual: b.len(),
        });
    }
    if a.iter().zip(b).any(|(x, y)| x.seed != y.seed) {
        return Err(Error::param("seeds", "paired runs must share seeds"));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x.ttt as f64 - y.ttt as f64).collect();
    let (mean, std) = mean_std(&diffs);
    Ok(PairedDifference {
        n: diffs.len(),
        mean,
        std,
        ci95: normal_ci95(&diffs),
    })
}

/// One variant's row in the ablation report.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub metrics: MetricsRecord,
    /// TTT difference against the static policy on the same seeds.
    pub vs_static: PairedDifference,
    /// TTT difference against the full learner (zero for the full row).
    pub vs_full: PairedDifference,
    pub train_seconds: f64,
    pub final_td_loss: f64,
    pub final_cons_loss: f64,
}

/// Input for one variant: its evaluation runs plus training bookkeeping.
#[derive(Debug, Clone)]
pub struct VariantResult {
    pub variant: AblationVariant,
    pub runs: Vec<RunSummary>,
    pub train_seconds: f64,
    pub final_td_loss: f64,
    pub final_cons_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub distance: u32,
    pub static_metrics: MetricsRecord,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn build(distance: u32, static_runs: &[RunSummary], variants: &[VariantResult]) -> Result<Self> {
        let full = variants
            .iter()
            .find(|v| v.variant == AblationVariant::Full)
            .ok_or_else(|| Error::param("variants", "the full variant is required"))?;
        let rows = variants
            .iter()
            .map(|v| {
                Ok(AblationRow {
                    variant: v.variant,
                    metrics: MetricsRecord::from_runs(v.variant.name(), distance, &v.runs),
                    vs_static: paired_ttt_difference(&v.runs, static_runs)?,
                    vs_full: paired_ttt_difference(&v.runs, &full.runs)?,
                    train_seconds: v.train_seconds,
                    final_td_loss: v.final_td_loss,
                    final_cons_loss: v.final_cons_loss,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            distance,
            static_metrics: MetricsRecord::from_runs("static", distance, static_runs),
            rows,
        })
    }

    pub fn row(&self, variant: AblationVariant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// Fraction of the full learner's advantage over static that is lost
    /// when `variant` is used instead: `(gap_full − gap_variant) / gap_full`.
    pub fn gap_reduction(&self, variant: AblationVariant) -> Option<f64> {
        let full = self.row(AblationVariant::Full)?.vs_static.mean;
        let other = self.row(variant)?.vs_static.mean;
        if full == 0.0 {
            None
        } else {
            Some((full - other) / full)
        }
    }
}
