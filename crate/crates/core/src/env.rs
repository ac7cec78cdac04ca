//! The episodic POMDP: latent regime → logical channel → observation, reward
//! and first-passage termination.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::channel::{hazard_threshold, ChannelConfig, ChannelMap, LogicalState, PauliDistribution};
use crate::error::{Error, Result};
use crate::math;
use crate::noise::LongMemoryFactor;
use crate::regime::{LatentRegime, NoiseConfig, RegimeConfig, RegimeDynamics, RegimeProcess, BIT_FLIP, PHASE_FLIP};
use crate::rng::{self, StreamRng};

/// Size of the discrete action set `{0, 1, 2}`.
pub const NUM_ACTIONS: usize = 3;
/// Length of the observation vector `(ρ, σ, π, H)`.
pub const OBS_DIM: usize = 4;

/// Controller-visible features of one cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Observation {
    /// Fidelity decrement of the cycle that emitted this observation.
    pub rho: f64,
    /// Noisy noise-power proxy.
    pub sigma: f64,
    /// `1` iff `sigma > sigma_margin`.
    pub pi: u8,
    /// Accumulated hazard `1 − F_L`.
    pub hazard: f64,
}

impl Observation {
    pub fn to_array(&self) -> [f64; OBS_DIM] {
        [self.rho, self.sigma, self.pi as f64, self.hazard]
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct EnvConfig {
    pub distance: u32,
    /// `c` in `H_crit(d) = c √d`.
    pub c_threshold: f64,
    /// Control-cost weight `λ_a`.
    pub lambda_action: f64,
    /// Threshold for the indicator `π`. `None` uses 1.5× the stationary mean
    /// of the noise proxy.
    pub sigma_margin: Option<f64>,
    pub max_cycles: usize,
    pub obs_noise_std: f64,
    pub noise: NoiseConfig,
    pub regime: RegimeConfig,
    pub channel: ChannelConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            distance: 7,
            c_threshold: 0.1,
            lambda_action: 1.0e-4,
            sigma_margin: None,
            max_cycles: 400,
            obs_noise_std: 0.05,
            noise: NoiseConfig::default(),
            regime: RegimeConfig::default(),
            channel: ChannelConfig::default(),
        }
    }
}

impl EnvConfig {
    /// A configuration with no noise at all: the encoded state never decays.
    pub fn noiseless() -> Self {
        let mut c = Self {
            noise: NoiseConfig::disabled(),
            regime: RegimeConfig::null(3),
            obs_noise_std: 0.0,
            ..Self::default()
        };
        c.channel.base_prefactor = 0.0;
        c
    }

    pub fn with_distance(mut self, distance: u32) -> Self {
        self.distance = distance;
        self
    }

    /// Field-level validation; every problem is reported.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.distance < 3 || self.distance % 2 == 0 {
            errors.push(format!("env.distance: must be odd and >= 3, got {}", self.distance));
        }
        if !(self.c_threshold.is_finite() && self.c_threshold > 0.0) {
            errors.push(String::from("env.c_threshold: must be finite and > 0"));
        }
        if !(self.lambda_action.is_finite() && self.lambda_action >= 0.0) {
            errors.push(String::from("env.lambda_action: must be finite and >= 0"));
        }
        if let Some(m) = self.sigma_margin {
            if !m.is_finite() {
                errors.push(String::from("env.sigma_margin: must be finite"));
            }
        }
        if self.max_cycles < 1 {
            errors.push(String::from("env.max_cycles: must be >= 1"));
        }
        if !(self.obs_noise_std.is_finite() && self.obs_noise_std >= 0.0) {
            errors.push(String::from("env.obs_noise_std: must be finite and >= 0"));
        }
        self.noise.validate(&mut errors);
        let m = self.regime.dim();
        if m < 2 {
            errors.push(String::from("regime.transition: latent dimension must be >= 2"));
        }
        self.channel.validate(m, &mut errors);
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errors))
        }
    }
}

/// Immutable, shareable part of an environment: validated dynamics, channel
/// map, cached long-memory factor and derived thresholds.
#[derive(Debug, Clone)]
pub struct EnvModel {
    config: EnvConfig,
    dynamics: Arc<RegimeDynamics>,
    channel: ChannelMap,
    long_memory: Option<Arc<LongMemoryFactor>>,
    hazard_threshold: f64,
    sigma_margin: f64,
}

impl EnvModel {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let dynamics = Arc::new(RegimeDynamics::from_config(&config.regime)?);
        let channel = ChannelMap::from_config(&config.channel, config.distance)?;
        let long_memory = if config.noise.long_memory_enabled() {
            Some(LongMemoryFactor::shared(config.max_cycles + 1, config.noise.long_memory_spec())?)
        } else {
            None
        };
        let sigma_margin = match config.sigma_margin {
            Some(m) => m,
            None => 1.5 * stationary_sigma_mean(&dynamics),
        };
        Ok(Self {
            hazard_threshold: hazard_threshold(config.distance, config.c_threshold),
            sigma_margin,
            config,
            dynamics,
            channel,
            long_memory,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn hazard_threshold(&self) -> f64 {
        self.hazard_threshold
    }

    pub fn sigma_margin(&self) -> f64 {
        self.sigma_margin
    }

    pub fn channel(&self) -> &ChannelMap {
        &self.channel
    }

    pub fn dynamics(&self) -> &RegimeDynamics {
        &self.dynamics
    }

    /// Starts a fresh episode: `F = 1`, `H = 0`, new latent regime and noise
    /// paths drawn from `seed`.
    pub fn reset(&self, seed: u64) -> Result<(QecEnv, Observation)> {
        let regime = RegimeProcess::new(
            self.dynamics.clone(),
            &self.config.noise,
            self.long_memory.as_deref(),
            self.config.regime.initial,
            self.config.max_cycles + 1,
            seed,
        )?;
        let mut env = QecEnv {
            model: self.clone(),
            regime,
            logical: LogicalState::encoded(self.config.channel.initial_bloch),
            obs_rng: rng::stream_rng(seed, rng::stream::OBSERVATION),
            cycle: 0,
            last_risk: 0.0,
            finished: false,
        };
        let obs = env.observe();
        Ok((env, obs))
    }
}

/// `E‖(θ_X, θ_Z)‖` under the stationary Gaussian law of the uncontrolled
/// dynamics. With `v = L z`, `E‖v‖ = E[r] · mean_φ ‖L u(φ)‖` and
/// `E[r] = √(π/2)` for a 2-D standard normal.
fn stationary_sigma_mean(dynamics: &RegimeDynamics) -> f64 {
    let p = dynamics.stationary_covariance();
    let (a, b, c) = (p[(BIT_FLIP, BIT_FLIP)], p[(BIT_FLIP, PHASE_FLIP)], p[(PHASE_FLIP, PHASE_FLIP)]);
    let l11 = math::sqrt(a.max(0.0));
    let l21 = if l11 > 0.0 { b / l11 } else { 0.0 };
    let l22 = math::sqrt((c - l21 * l21).max(0.0));
    const N: usize = 512;
    let mut acc = 0.0;
    for k in 0..N {
        let phi = 2.0 * core::f64::consts::PI * (k as f64 + 0.5) / N as f64;
        let (s, co) = (libm::sin(phi), libm::cos(phi));
        let (x, z) = (l11 * co, l21 * co + l22 * s);
        acc += math::sqrt(x * x + z * z);
    }
    math::sqrt(core::f64::consts::FRAC_PI_2) * acc / N as f64
}

/// Ground truth for tests and diagnostics. Never part of the observation.
#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub theta: LatentRegime,
    pub physical: PauliDistribution,
    pub logical: PauliDistribution,
    pub fidelity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    /// Hazard reached `H_crit(d)` on this cycle.
    pub terminated: bool,
    /// `max_cycles` reached on this cycle.
    pub truncated: bool,
    pub info: StepInfo,
}

/// One running episode. Single-owner.
#[derive(Debug, Clone)]
pub struct QecEnv {
    model: EnvModel,
    regime: RegimeProcess,
    logical: LogicalState,
    obs_rng: StreamRng,
    cycle: usize,
    last_risk: f64,
    finished: bool,
}

impl QecEnv {
    pub fn cycle(&self) -> usize {
        self.cycle
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn logical_state(&self) -> &LogicalState {
        &self.logical
    }

    pub fn model(&self) -> &EnvModel {
        &self.model
    }

    /// Builds the observation from the current internals.
    pub fn observe(&mut self) -> Observation {
        let noise = if self.model.config.obs_noise_std > 0.0 {
            self.model.config.obs_noise_std * rng::gaussian(&mut self.obs_rng)
        } else {
            0.0
        };
        let sigma = self.regime.state().power_norm() + noise;
        Observation {
            rho: self.last_risk,
            sigma,
            pi: u8::from(sigma > self.model.sigma_margin),
            hazard: self.logical.hazard,
        }
    }

    /// One QEC cycle under `action ∈ {0, 1, 2}`.
    pub fn step(&mut self, action: usize) -> Result<StepResult> {
        if self.finished {
            return Err(Error::EpisodeFinished);
        }
        if action >= NUM_ACTIONS {
            return Err(Error::InvalidAction(action));
        }
        let a = action as f64;
        let theta = self.regime.step(a)?.clone();
        let physical = self.model.channel.pauli_from_regime(&theta);
        let logical = self.model.channel.logical_suppression(&physical);
        let (next, risk) = self.logical.apply_channel(&logical);
        self.logical = next;
        self.last_risk = risk;
        self.cycle += 1;
        let observation = self.observe();
        let reward = -risk - self.model.config.lambda_action * a;
        let terminated = self.logical.hazard >= self.model.hazard_threshold;
        let truncated = self.cycle >= self.model.config.max_cycles;
        self.finished = terminated || truncated;
        Ok(StepResult {
            observation,
            reward,
            terminated,
            truncated,
            info: StepInfo {
                theta,
                physical,
                logical,
                fidelity: self.logical.fidelity,
            },
        })
    }
}

/// Per-cycle record of an episode. `observation` is the one emitted by this
/// cycle's step, so `observation.hazard == hazard`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CycleRecord {
    pub observation: Observation,
    pub action: usize,
    pub reward: f64,
    pub hazard: f64,
    pub fidelity: f64,
    /// `‖h_t‖` of the deciding agent, when it has a latent state.
    pub latent_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpisodeTrace {
    pub initial_observation: Observation,
    pub records: Vec<CycleRecord>,
    /// `Some(T_fail)` on threshold crossing, `None` when censored.
    pub failure_time: Option<usize>,
    pub max_cycles: usize,
    pub total_control_cost: f64,
}

impl EpisodeTrace {
    pub fn new(initial_observation: Observation, max_cycles: usize) -> Self {
        Self {
            initial_observation,
            records: Vec::new(),
            failure_time: None,
            max_cycles,
            total_control_cost: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_censored(&self) -> bool {
        self.failure_time.is_none()
    }

    /// Observation the agent saw before acting at cycle `t`.
    pub fn input_observation(&self, t: usize) -> &Observation {
        if t == 0 {
            &self.initial_observation
        } else {
            &self.records[t - 1].observation
        }
    }

    /// Reward fed into the cell at cycle `t` (the previous cycle's reward).
    pub fn input_reward(&self, t: usize) -> f64 {
        if t == 0 {
            0.0
        } else {
            self.records[t - 1].reward
        }
    }

    /// `T_fail`, or `max_cycles` for censored runs.
    pub fn time_to_threshold(&self) -> usize {
        self.failure_time.unwrap_or(self.max_cycles)
    }

    pub fn final_hazard(&self) -> f64 {
        self.records.last().map_or(self.initial_observation.hazard, |r| r.hazard)
    }

    pub fn total_return(&self) -> f64 {
        self.records.iter().map(|r| r.reward).sum()
    }

    pub fn push(&mut self, action: usize, step: &StepResult, latent_norm: Option<f64>) {
        self.total_control_cost += action as f64;
        self.records.push(CycleRecord {
            observation: step.observation,
            action,
            reward: step.reward,
            hazard: step.observation.hazard,
            fidelity: step.info.fidelity,
            latent_norm,
        });
        if step.terminated {
            self.failure_time = Some(self.records.len());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_starts_fresh() {
        let model = EnvModel::new(EnvConfig::default()).unwrap();
        let (env, obs) = model.reset(3).unwrap();
        assert_eq!(obs.hazard, 0.0);
        assert_eq!(obs.rho, 0.0);
        assert_eq!(env.logical_state().fidelity, 1.0);
    }

    #[test]
    fn invalid_config_lists_fields() {
        let cfg = EnvConfig {
            distance: 4,
            max_cycles: 0,
            lambda_action: -1.0,
            ..EnvConfig::default()
        };
        match EnvModel::new(cfg) {
            Err(Error::InvalidConfig(errs)) => {
                assert_eq!(errs.len(), 3, "{errs:?}");
                assert!(errs.iter().any(|e| e.contains("env.distance")));
                assert!(errs.iter().any(|e| e.contains("env.max_cycles")));
                assert!(errs.iter().any(|e| e.contains("env.lambda_action")));
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn reward_arithmetic() {
        let cfg = EnvConfig {
            lambda_action: 0.01,
            ..EnvConfig::default()
        };
        let model = EnvModel::new(cfg).unwrap();
        let (mut env, _) = model.reset(0).unwrap();
        let r = env.step(2).unwrap();
        assert!((r.reward - (-r.observation.rho - 0.02)).abs() < 1e-15);
        // the documented example
        let rho = 0.004;
        assert!((-rho - 0.01 * 2.0 - (-0.024f64)).abs() < 1e-15);
    }

    #[test]
    fn noiseless_episode_truncates() {
        let cfg = EnvConfig {
            max_cycles: 50,
            ..EnvConfig::noiseless()
        };
        let model = EnvModel::new(cfg).unwrap();
        let (mut env, _) = model.reset(1).unwrap();
        for t in 1..=50 {
            let r = env.step(0).unwrap();
            assert_eq!(r.observation.hazard, 0.0);
            assert!(!r.terminated);
            assert_eq!(r.truncated, t == 50);
        }
        assert!(matches!(env.step(0), Err(Error::EpisodeFinished)));
    }

    #[test]
    fn rejects_out_of_range_action() {
        let model = EnvModel::new(EnvConfig::default()).unwrap();
        let (mut env, _) = model.reset(1).unwrap();
        assert!(matches!(env.step(3), Err(Error::InvalidAction(3))));
    }

    #[test]
    fn pi_uses_strict_inequality() {
        let mut cfg = EnvConfig::noiseless();
        cfg.regime.initial = crate::regime::InitialRegime::Zero;
        cfg.sigma_margin = Some(0.0);
        let model = EnvModel::new(cfg).unwrap();
        let (_, obs) = model.reset(0).unwrap();
        assert_eq!(obs.sigma, 0.0);
        assert_eq!(obs.pi, 0);
    }

    #[test]
    fn default_sigma_margin_is_rayleigh_mean() {
        // diagonal stationary covariance s² on both power components
        let model = EnvModel::new(EnvConfig::default()).unwrap();
        let s2 = 2.5e-5 / (1.0 - 0.995 * 0.995);
        let expected = 1.5 * libm::sqrt(s2) * libm::sqrt(core::f64::consts::FRAC_PI_2);
        assert!((model.sigma_margin() - expected).abs() < 1e-9 * expected);
    }
}
