//! The belief-state Q-learner.
//!
//! Decisions come from a causal recurrent filter over `(observation, reward)`
//! pairs and a linear Q head. Training replays stored episodes in short
//! windows, adds a consistency loss that pulls each causal latent toward a
//! one-pass smoothed latent that also sees the next step, and follows every
//! gradient step with a damping term computed from a power-law weighted
//! history of parameter increments.
//!
//! The loop is generic over [`RecurrentQNet`] so the gated baseline trains
//! with exactly the same replay, target network and exploration machinery.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::env::{EnvModel, EpisodeTrace, Observation, NUM_ACTIONS, OBS_DIM};
use crate::error::{Error, Result};
use crate::grad::{self, CellDims, ParamSet};
use crate::math;
use crate::policy::{run_episode, Decision, Policy};
use crate::rng::{self, StreamRng};

/// A recurrent network with a linear Q head, stored as one flat parameter
/// vector. The head occupies `[head_offset, head_offset + A·latent)` followed
/// by `A` biases.
pub trait RecurrentQNet: Clone {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    /// Same architecture, new parameter values.
    fn with_params(&self, flat: Vec<f64>) -> Result<Self>;
    fn latent_dim(&self) -> usize;
    /// Length of the carried state; the latent is its leading slice.
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn head_offset(&self) -> usize;

    /// One recurrent step.
    fn step(&self, state: &[f64], x: &[f64], r: f64) -> Vec<f64>;

    /// Gradient of the recurrent part given `∂L/∂latent_t` for each step of
    /// the window starting from the constant state `init`. Head entries are
    /// left at zero.
    fn backward(&self, init: &[f64], xs: &[Vec<f64>], rs: &[f64], d_latent: &[Vec<f64>]) -> Vec<f64>;

    /// The future-informed cell, if the architecture has one.
    fn smooth(&self, _h_prev: &[f64], _h_next: &[f64], _x: &[f64], _r: f64) -> Option<Vec<f64>> {
        None
    }

    fn param_count(&self) -> usize {
        self.params().len()
    }

    fn initial_state(&self) -> Vec<f64> {
        vec![0.0; self.state_dim()]
    }

    fn latent<'a>(&self, state: &'a [f64]) -> &'a [f64] {
        &state[..self.latent_dim()]
    }

    fn q_values(&self, state: &[f64]) -> Vec<f64> {
        let (head, bias) = self.head();
        grad::q_values(head, bias, self.latent(state))
    }

    fn head(&self) -> (&[f64], &[f64]) {
        let n = self.num_actions() * self.latent_dim();
        let off = self.head_offset();
        let p = self.params();
        (&p[off..off + n], &p[off + n..off + n + self.num_actions()])
    }
}

impl RecurrentQNet for ParamSet {
    fn params(&self) -> &[f64] {
        self.flat()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.flat_mut()
    }

    fn with_params(&self, flat: Vec<f64>) -> Result<Self> {
        ParamSet::from_flat(self.dims(), flat)
    }

    fn latent_dim(&self) -> usize {
        self.dims().hidden
    }

    fn state_dim(&self) -> usize {
        self.dims().hidden
    }

    fn input_dim(&self) -> usize {
        self.dims().input
    }

    fn num_actions(&self) -> usize {
        self.dims().actions
    }

    fn head_offset(&self) -> usize {
        let d = self.dims();
        d.param_count() - d.actions * (d.hidden + 1)
    }

    fn step(&self, state: &[f64], x: &[f64], r: f64) -> Vec<f64> {
        self.forward_cell(state, x, r)
    }

    fn backward(&self, init: &[f64], xs: &[Vec<f64>], rs: &[f64], d_latent: &[Vec<f64>]) -> Vec<f64> {
        let tape = grad::unroll(self, init, xs, rs);
        grad::backward_window(self, &tape, d_latent).into_flat()
    }

    fn smooth(&self, h_prev: &[f64], h_next: &[f64], x: &[f64], r: f64) -> Option<Vec<f64>> {
        Some(self.smooth_cell(h_prev, h_next, x, r))
    }
}

/// Linear exploration schedule from `start` to `end` over the first
/// `decay_fraction` of the planned episodes.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_fraction: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            decay_fraction: 0.6,
        }
    }
}

impl EpsilonSchedule {
    pub fn value(&self, episode: usize, total_episodes: usize) -> f64 {
        let horizon = self.decay_fraction * total_episodes as f64;
        if horizon <= 0.0 {
            return self.end;
        }
        let frac = (episode as f64 / horizon).min(1.0);
        self.start + (self.end - self.start) * frac
    }
}

/// Affine rescaling of the network inputs. Raw fidelity decrements and
/// rewards are of order 1e-3, far inside the linear range of `tanh`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct InputScaling {
    pub observation: [f64; OBS_DIM],
    /// Applies to the reward fed into the cell and to the TD targets.
    pub reward: f64,
}

impl Default for InputScaling {
    fn default() -> Self {
        Self {
            observation: [100.0, 10.0, 1.0, 4.0],
            reward: 100.0,
        }
    }
}

impl InputScaling {
    pub const IDENTITY: Self = Self {
        observation: [1.0; OBS_DIM],
        reward: 1.0,
    };

    pub fn features(&self, obs: &Observation) -> Vec<f64> {
        obs.to_array().iter().zip(&self.observation).map(|(x, s)| x * s).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct AgentHyper {
    pub hidden: usize,
    /// Gradient step size.
    pub eta: f64,
    /// Weight of the fractional damping term; at most `0.1 · eta`.
    pub eta_meta: f64,
    /// Exponent of the power-law history kernel, in `(0, 1)`.
    pub gamma_frac: f64,
    /// Number of parameter increments in the history window.
    pub memory: usize,
    /// TD discount.
    pub gamma_disc: f64,
    pub epsilon: EpsilonSchedule,
    /// Truncation length of the replayed windows.
    pub window: usize,
    pub consistency_weight: f64,
    /// Soft target update coefficient per training step.
    pub target_tau: f64,
    /// Number of complete episodes kept for replay.
    pub replay_capacity: usize,
    /// Windows averaged into one gradient.
    pub batch_windows: usize,
    pub updates_per_episode: usize,
    /// Gradient norm cap; `0` disables clipping.
    pub grad_clip: f64,
    pub scaling: InputScaling,
}

impl Default for AgentHyper {
    fn default() -> Self {
        Self {
            hidden: 16,
            eta: 0.01,
            eta_meta: 0.001,
            gamma_frac: 0.5,
            memory: 32,
            gamma_disc: 0.99,
            epsilon: EpsilonSchedule::default(),
            window: 16,
            consistency_weight: 0.1,
            target_tau: 0.01,
            replay_capacity: 64,
            batch_windows: 8,
            updates_per_episode: 16,
            grad_clip: 10.0,
            scaling: InputScaling::default(),
        }
    }
}

impl AgentHyper {
    /// Settings for the gated baseline: identical except that the consistency
    /// loss and the fractional term are switched off.
    pub fn baseline(&self) -> Self {
        Self {
            eta_meta: 0.0,
            consistency_weight: 0.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs: Vec<String> = Vec::new();
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                errs.push(String::from(msg));
            }
        };
        check(self.hidden >= 1, "hidden: must be at least 1");
        check(self.eta.is_finite() && self.eta > 0.0, "eta: must be positive");
        check(
            self.eta_meta.is_finite() && self.eta_meta >= 0.0,
            "eta_meta: must be non-negative",
        );
        check(
            self.eta_meta <= 0.1 * self.eta,
            "eta_meta: must not exceed 0.1 * eta (two-timescale condition)",
        );
        check(
            self.gamma_frac > 0.0 && self.gamma_frac < 1.0,
            "gamma_frac: must lie in (0, 1)",
        );
        check(self.memory >= 1, "memory: must be at least 1");
        check(
            self.gamma_disc > 0.0 && self.gamma_disc <= 1.0,
            "gamma_disc: must lie in (0, 1]",
        );
        let e = &self.epsilon;
        check(
            (0.0..=1.0).contains(&e.start) && (0.0..=1.0).contains(&e.end),
            "epsilon: start and end must lie in [0, 1]",
        );
        check(
            (0.0..=1.0).contains(&e.decay_fraction),
            "epsilon.decay_fraction: must lie in [0, 1]",
        );
        check(self.window >= 1, "window: must be at least 1");
        check(
            self.consistency_weight.is_finite() && self.consistency_weight >= 0.0,
            "consistency_weight: must be non-negative",
        );
        check(
            self.target_tau > 0.0 && self.target_tau <= 1.0,
            "target_tau: must lie in (0, 1]",
        );
        check(self.replay_capacity >= 1, "replay_capacity: must be at least 1");
        check(self.batch_windows >= 1, "batch_windows: must be at least 1");
        check(
            self.grad_clip.is_finite() && self.grad_clip >= 0.0,
            "grad_clip: must be non-negative",
        );
        check(
            self.scaling.observation.iter().all(|s| s.is_finite()) && self.scaling.reward.is_finite(),
            "scaling: must be finite",
        );
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errs))
        }
    }

    pub fn cell_dims(&self) -> CellDims {
        CellDims::new(self.hidden, OBS_DIM, NUM_ACTIONS)
    }
}

/// Power-law weights `α_k = (k+1)^(−γ) / Σ_{j=1..K} j^(−γ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionalKernel {
    gamma: f64,
    weights: Vec<f64>,
}

impl FractionalKernel {
    pub fn new(memory: usize, gamma: f64) -> Result<Self> {
        if memory == 0 {
            return Err(Error::param("memory", "must be at least 1"));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::param("gamma_frac", "must lie in (0, 1)"));
        }
        Ok(Self {
            gamma,
            weights: Self::normalised(memory, gamma),
        })
    }

    fn normalised(n: usize, gamma: f64) -> Vec<f64> {
        let raw: Vec<f64> = (1..=n).map(|j| math::powf(j as f64, -gamma)).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn memory(&self) -> usize {
        self.weights.len()
    }

    /// Weights restricted to the first `n` indices and renormalised.
    pub fn truncated(&self, n: usize) -> Vec<f64> {
        if n >= self.weights.len() {
            self.weights.clone()
        } else {
            Self::normalised(n, self.gamma)
        }
    }
}

/// The last `K + 1` parameter vectors, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRing {
    capacity: usize,
    entries: VecDeque<(u64, Vec<f64>)>,
}

impl SnapshotRing {
    /// A ring holding `memory + 1` snapshots.
    pub fn new(memory: usize) -> Self {
        Self {
            capacity: memory + 1,
            entries: VecDeque::with_capacity(memory + 1),
        }
    }

    pub fn push(&mut self, iteration: u64, params: Vec<f64>) {
        if let Some((last, _)) = self.entries.back() {
            debug_assert!(iteration > *last, "snapshots must be pushed in order");
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((iteration, params));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn latest(&self) -> Option<&[f64]> {
        self.entries.back().map(|(_, p)| p.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &[f64])> {
        self.entries.iter().map(|(i, p)| (*i, p.as_slice()))
    }
}

/// `Σ_k α_k (w_{t−k} − w_{t−k−1})` over the increments held in `ring`, with
/// the kernel truncated and renormalised when fewer than `K` are available.
pub fn fractional_delta(ring: &SnapshotRing, kernel: &FractionalKernel) -> Vec<f64> {
    let n = ring.len();
    let dim = ring.latest().map_or(0, <[f64]>::len);
    let mut out = vec![0.0; dim];
    if n < 2 {
        return out;
    }
    let pairs = (n - 1).min(kernel.memory());
    let alpha = kernel.truncated(pairs);
    for (k, a) in alpha.iter().enumerate() {
        let newer = &ring.entries[n - 1 - k].1;
        let older = &ring.entries[n - 2 - k].1;
        for ((o, x), y) in out.iter_mut().zip(newer).zip(older) {
            *o += a * (x - y);
        }
    }
    out
}

/// `w ← w − η ∇L − η_m Δ^γ w`, then records the new point in `ring`.
///
/// A non-finite gradient, or an update that would leave a non-finite
/// parameter, is rejected and leaves both `params` and `ring` unchanged.
pub fn meta_update(
    params: &mut [f64],
    gradient: &[f64],
    ring: &mut SnapshotRing,
    kernel: &FractionalKernel,
    eta: f64,
    eta_meta: f64,
    iteration: u64,
) -> Result<()> {
    if gradient.len() != params.len() {
        return Err(Error::DimensionMismatch {
            context: "meta_update",
            expected: params.len(),
            actual: gradient.len(),
        });
    }
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    let delta = if eta_meta != 0.0 {
        fractional_delta(ring, kernel)
    } else {
        Vec::new()
    };
    let mut next: Vec<f64> = params.iter().zip(gradient).map(|(w, g)| w - eta * g).collect();
    if !delta.is_empty() {
        for (w, d) in next.iter_mut().zip(&delta) {
            *w -= eta_meta * d;
        }
    }
    if next.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("parameters"));
    }
    params.copy_from_slice(&next);
    ring.push(iteration, next);
    Ok(())
}

/// Greedy action with ties going to the lowest index.
pub fn greedy_action(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in q.iter().enumerate().skip(1) {
        if *v > q[best] {
            best = i;
        }
    }
    best
}

/// ε-greedy choice: one uniform draw decides exploration, a second picks the
/// random action.
pub fn epsilon_greedy<R: Rng + ?Sized>(q: &[f64], epsilon: f64, rng: &mut R) -> usize {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        rng.random_range(0..q.len())
    } else {
        greedy_action(q)
    }
}

/// One causal decision: advances the filter and picks an action.
pub fn act<N: RecurrentQNet, R: Rng + ?Sized>(
    net: &N,
    scaling: &InputScaling,
    state_prev: &[f64],
    obs: &Observation,
    r_prev: f64,
    epsilon: f64,
    rng: &mut R,
) -> (usize, Vec<f64>) {
    let state = net.step(state_prev, &scaling.features(obs), scaling.reward * r_prev);
    let action = epsilon_greedy(&net.q_values(&state), epsilon, rng);
    (action, state)
}

/// Rollout policy around a frozen network.
#[derive(Debug, Clone)]
pub struct QPolicy<N> {
    net: N,
    scaling: InputScaling,
    epsilon: f64,
    rng: StreamRng,
    state: Vec<f64>,
}

impl<N: RecurrentQNet> QPolicy<N> {
    pub fn greedy(net: N, scaling: InputScaling) -> Self {
        Self::exploring(net, scaling, 0.0, rng::stream_rng(0, rng::stream::EXPLORATION))
    }

    pub fn exploring(net: N, scaling: InputScaling, epsilon: f64, rng: StreamRng) -> Self {
        let state = net.initial_state();
        Self {
            net,
            scaling,
            epsilon,
            rng,
            state,
        }
    }

    pub fn net(&self) -> &N {
        &self.net
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }
}

impl<N: RecurrentQNet> Policy for QPolicy<N> {
    fn reset(&mut self) {
        self.state = self.net.initial_state();
    }

    fn act(&mut self, observation: &Observation, prev_reward: f64) -> Decision {
        let (action, state) = act(
            &self.net,
            &self.scaling,
            &self.state,
            observation,
            prev_reward,
            self.epsilon,
            &mut self.rng,
        );
        self.state = state;
        Decision {
            action,
            latent_norm: Some(math::norm(self.net.latent(&self.state))),
        }
    }
}

/// Scaled network inputs for cycles `0..=n` of a trace (index `len` is the
/// observation after the last action).
fn trace_inputs(trace: &EpisodeTrace, scaling: &InputScaling, n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    (0..=n)
        .map(|t| {
            (
                scaling.features(trace.input_observation(t)),
                scaling.reward * trace.input_reward(t),
            )
        })
        .unzip()
}

/// Causal states for inputs `0..xs.len()` from the zero state.
fn filter<N: RecurrentQNet>(net: &N, xs: &[Vec<f64>], rs: &[f64]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(xs.len());
    let mut state = net.initial_state();
    for (x, r) in xs.iter().zip(rs) {
        state = net.step(&state, x, *r);
        out.push(state.clone());
    }
    out
}

/// Smoothed latents `h̃_t` for every decision of the trace, built from the
/// causal latents with zero padding at both ends. Traces shorter than two
/// cycles, and networks without a smoothing cell, give `None`.
pub fn refine_trajectory<N: RecurrentQNet>(
    net: &N,
    trace: &EpisodeTrace,
    scaling: &InputScaling,
) -> Option<Vec<Vec<f64>>> {
    let n = trace.len();
    if n < 2 {
        return None;
    }
    let (xs, rs) = trace_inputs(trace, scaling, n - 1);
    let states = filter(net, &xs, &rs);
    let zero = vec![0.0; net.latent_dim()];
    (0..n)
        .map(|t| {
            let prev = if t == 0 { &zero[..] } else { net.latent(&states[t - 1]) };
            let next = if t + 1 == n { &zero[..] } else { net.latent(&states[t + 1]) };
            net.smooth(prev, next, &xs[t], rs[t])
        })
        .collect()
}

/// `Σ_t ‖h_t − h̃_t‖²`.
pub fn consistency_loss(causal: &[Vec<f64>], refined: &[Vec<f64>]) -> f64 {
    causal
        .iter()
        .zip(refined)
        .map(|(h, s)| h.iter().zip(s).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowLoss {
    pub td: f64,
    pub consistency: f64,
    /// Gradient of `td + consistency_weight · consistency`.
    pub gradient: Vec<f64>,
}

/// Where the consistency targets of a window come from.
#[derive(Debug, Clone, Copy)]
pub enum Teacher<'a> {
    /// Recomputed from the online network, then held fixed.
    Online,
    /// Precomputed smoothed latents indexed by cycle.
    Fixed(&'a [Vec<f64>]),
    None,
}

/// Losses and gradient for the window `[start, start + len)` of `trace`.
///
/// The window's initial state comes from a causal pass over the preceding
/// cycles with the online parameters and is held constant. The TD loss is the
/// mean squared error against `y_t = r_t + γ max_a Q_target(h_{t+1}, a)`,
/// with `y_t = r_t` on the failure step. The consistency loss sums
/// `‖h_t − h̃_t‖²` over the window with `h̃` treated as a constant.
pub fn training_losses<N: RecurrentQNet>(
    online: &N,
    target: &N,
    trace: &EpisodeTrace,
    start: usize,
    len: usize,
    hyper: &AgentHyper,
    teacher: Teacher<'_>,
) -> WindowLoss {
    let total = trace.len();
    assert!(len >= 1 && start + len <= total, "window outside the trace");
    let end = start + len;
    let scaling = &hyper.scaling;
    let (xs, rs) = trace_inputs(trace, scaling, end.min(total));

    // Online states up to the step after the window (if it exists).
    let online_states = filter(online, &xs[..end.min(total - 1) + 1], &rs[..end.min(total - 1) + 1]);
    let target_states = filter(target, &xs, &rs);

    let use_cons = hyper.consistency_weight > 0.0 && total >= 2;
    let owned_teacher: Option<Vec<Vec<f64>>>;
    // Smoothed targets for the window, indexed relative to `start`.
    let teacher: Option<&[Vec<f64>]> = match teacher {
        Teacher::Fixed(t) if use_cons => Some(&t[start..end]),
        Teacher::Online if use_cons => {
            let zero = vec![0.0; online.latent_dim()];
            owned_teacher = (start..end)
                .map(|t| {
                    let prev = if t == 0 { &zero[..] } else { online.latent(&online_states[t - 1]) };
                    let next = if t + 1 == total { &zero[..] } else { online.latent(&online_states[t + 1]) };
                    online.smooth(prev, next, &xs[t], rs[t])
                })
                .collect();
            owned_teacher.as_deref()
        }
        _ => None,
    };

    let dh = online.latent_dim();
    let na = online.num_actions();
    let mut grad_out = vec![0.0; online.param_count()];
    let head_off = online.head_offset();
    let (head, _) = online.head();
    let mut d_latent = vec![vec![0.0; dh]; len];
    let mut td = 0.0;
    let mut cons = 0.0;
    for (i, t) in (start..end).enumerate() {
        let h = online.latent(&online_states[t]);
        let q = online.q_values(&online_states[t]);
        let a = trace.records[t].action;
        let r = scaling.reward * trace.records[t].reward;
        let terminal = t + 1 == total && trace.failure_time.is_some();
        let y = if terminal {
            r
        } else {
            let next_q = target.q_values(&target_states[t + 1]);
            r + hyper.gamma_disc * next_q.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        };
        let err = q[a] - y;
        td += err * err / len as f64;
        let g = 2.0 * err / len as f64;
        for k in 0..dh {
            d_latent[i][k] += g * head[a * dh + k];
            grad_out[head_off + a * dh + k] += g * h[k];
        }
        grad_out[head_off + na * dh + a] += g;

        if let Some(s) = teacher.map(|v| &v[i]) {
            for k in 0..dh {
                let diff = h[k] - s[k];
                cons += diff * diff;
                d_latent[i][k] += 2.0 * hyper.consistency_weight * diff;
            }
        }
    }

    let init = if start == 0 {
        online.initial_state()
    } else {
        online_states[start - 1].clone()
    };
    let cell = online.backward(&init, &xs[start..end], &rs[start..end], &d_latent);
    for (g, c) in grad_out.iter_mut().zip(&cell) {
        *g += c;
    }
    WindowLoss {
        td,
        consistency: cons,
        gradient: grad_out,
    }
}

/// Ring buffer of complete episodes.
#[derive(Debug, Clone, Default)]
pub struct ReplayBuffer {
    capacity: usize,
    traces: VecDeque<EpisodeTrace>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            traces: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, trace: EpisodeTrace) {
        if trace.is_empty() {
            return;
        }
        if self.traces.len() == self.capacity {
            self.traces.pop_front();
        }
        self.traces.push_back(trace);
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    /// A uniformly chosen trace and a window of length `min(window, len)`
    /// starting uniformly within it.
    pub fn sample<R: Rng + ?Sized>(&self, window: usize, rng: &mut R) -> Option<(&EpisodeTrace, usize, usize)> {
        if self.traces.is_empty() {
            return None;
        }
        let trace = &self.traces[rng.random_range(0..self.traces.len())];
        let len = window.min(trace.len());
        let start = rng.random_range(0..=trace.len() - len);
        Some((trace, start, len))
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpisodeLog {
    pub episode: usize,
    #[cfg_attr(feature = "serde", serde(rename = "return"))]
    pub total_return: f64,
    pub td_loss: f64,
    pub cons_loss: f64,
    pub mean_latent_norm: f64,
    pub epsilon: f64,
    #[cfg_attr(feature = "serde", serde(skip))]
    pub time_to_threshold: usize,
    #[cfg_attr(feature = "serde", serde(skip))]
    pub rejected_updates: usize,
}

/// Everything needed to resume training except the replay contents.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    pub online: Vec<f64>,
    pub target: Vec<f64>,
    pub snapshots: Vec<(u64, Vec<f64>)>,
    pub episodes_done: usize,
    pub iteration: u64,
}

const ENV_SALT: u64 = 0x5EED_E417;

#[derive(Debug, Clone)]
pub struct Learner<N> {
    hyper: AgentHyper,
    online: N,
    target: N,
    ring: SnapshotRing,
    kernel: FractionalKernel,
    replay: ReplayBuffer,
    episodes_done: usize,
    iteration: u64,
}

/// The belief-state learner with the Elman-type causal cell.
pub type ChDqn = Learner<ParamSet>;

impl ChDqn {
    /// Fresh network with dimensions from `hyper`, initialised from `seed`.
    pub fn init(hyper: AgentHyper, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let net = ParamSet::seeded(hyper.cell_dims(), seed);
        Self::new(net, hyper)
    }
}

impl<N: RecurrentQNet> Learner<N> {
    pub fn new(net: N, hyper: AgentHyper) -> Result<Self> {
        hyper.validate()?;
        if net.input_dim() != OBS_DIM || net.num_actions() != NUM_ACTIONS {
            return Err(Error::DimensionMismatch {
                context: "Learner::new",
                expected: OBS_DIM,
                actual: net.input_dim(),
            });
        }
        let kernel = FractionalKernel::new(hyper.memory, hyper.gamma_frac)?;
        let mut ring = SnapshotRing::new(hyper.memory);
        ring.push(0, net.params().to_vec());
        Ok(Self {
            target: net.clone(),
            online: net,
            kernel,
            ring,
            replay: ReplayBuffer::new(hyper.replay_capacity),
            hyper,
            episodes_done: 0,
            iteration: 0,
        })
    }

    pub fn hyper(&self) -> &AgentHyper {
        &self.hyper
    }

    pub fn online(&self) -> &N {
        &self.online
    }

    pub fn target(&self) -> &N {
        &self.target
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn ring(&self) -> &SnapshotRing {
        &self.ring
    }

    pub fn kernel(&self) -> &FractionalKernel {
        &self.kernel
    }

    /// Greedy evaluation policy on a copy of the online network.
    pub fn policy(&self) -> QPolicy<N> {
        QPolicy::greedy(self.online.clone(), self.hyper.scaling)
    }

    pub fn state(&self) -> LearnerState {
        LearnerState {
            online: self.online.params().to_vec(),
            target: self.target.params().to_vec(),
            snapshots: self.ring.iter().map(|(i, p)| (i, p.to_vec())).collect(),
            episodes_done: self.episodes_done,
            iteration: self.iteration,
        }
    }

    /// Rebuilds a learner around `template`'s architecture.
    pub fn from_state(template: &N, hyper: AgentHyper, state: LearnerState) -> Result<Self> {
        let online = template.with_params(state.online)?;
        let target = template.with_params(state.target)?;
        let mut learner = Self::new(online, hyper)?;
        learner.target = target;
        learner.ring = SnapshotRing::new(learner.hyper.memory);
        for (i, p) in state.snapshots {
            if p.len() != learner.online.param_count() {
                return Err(Error::DimensionMismatch {
                    context: "snapshot",
                    expected: learner.online.param_count(),
                    actual: p.len(),
                });
            }
            learner.ring.push(i, p);
        }
        if learner.ring.is_empty() {
            learner.ring.push(state.iteration, learner.online.params().to_vec());
        }
        learner.episodes_done = state.episodes_done;
        learner.iteration = state.iteration;
        Ok(learner)
    }

    /// Trains until `total_episodes` episodes have been played.
    pub fn train(&mut self, model: &EnvModel, total_episodes: usize, seed: u64) -> Result<Vec<EpisodeLog>> {
        self.train_with(model, total_episodes, seed, |_, _| Ok(()))
    }

    /// As [`train`](Self::train), calling `hook` after every episode.
    pub fn train_with<F>(
        &mut self,
        model: &EnvModel,
        total_episodes: usize,
        seed: u64,
        mut hook: F,
    ) -> Result<Vec<EpisodeLog>>
    where
        F: FnMut(&Self, &EpisodeLog) -> Result<()>,
    {
        let mut log = Vec::new();
        while self.episodes_done < total_episodes {
            let episode = self.episodes_done;
            let epsilon = self.hyper.epsilon.value(episode, total_episodes);
            let ep_seed = rng::mix_seed(seed, episode as u64);
            let mut policy = QPolicy::exploring(
                self.online.clone(),
                self.hyper.scaling,
                epsilon,
                rng::stream_rng(ep_seed, rng::stream::EXPLORATION),
            );
            let trace = run_episode(model, &mut policy, rng::mix_seed(ep_seed, ENV_SALT))?;
            let mean_latent_norm = if trace.is_empty() {
                0.0
            } else {
                trace.records.iter().filter_map(|r| r.latent_norm).sum::<f64>() / trace.len() as f64
            };
            let total_return = trace.total_return();
            let time_to_threshold = trace.time_to_threshold();
            self.replay.push(trace);

            let mut replay_rng = rng::stream_rng(ep_seed, rng::stream::REPLAY);
            let (mut td, mut cons, mut done, mut rejected) = (0.0, 0.0, 0usize, 0usize);
            for _ in 0..self.hyper.updates_per_episode {
                match self.update(&mut replay_rng) {
                    Some(Ok((t, c))) => {
                        td += t;
                        cons += c;
                        done += 1;
                    }
                    Some(Err(_)) => rejected += 1,
                    None => {}
                }
            }
            let denom = done.max(1) as f64;
            let row = EpisodeLog {
                episode,
                total_return,
                td_loss: td / denom,
                cons_loss: cons / denom,
                mean_latent_norm,
                epsilon,
                time_to_threshold,
                rejected_updates: rejected,
            };
            self.episodes_done += 1;
            hook(self, &row)?;
            log.push(row);
        }
        Ok(log)
    }

    /// One gradient step on a batch of replayed windows.
    fn update(&mut self, rng: &mut StreamRng) -> Option<Result<(f64, f64)>> {
        if self.replay.is_empty() {
            return None;
        }
        let batch = self.hyper.batch_windows;
        let mut gradient = vec![0.0; self.online.param_count()];
        let (mut td, mut cons) = (0.0, 0.0);
        for _ in 0..batch {
            let (trace, start, len) = self.replay.sample(self.hyper.window, rng)?;
            let w = training_losses(&self.online, &self.target, trace, start, len, &self.hyper, Teacher::Online);
            td += w.td / batch as f64;
            cons += w.consistency / batch as f64;
            for (g, x) in gradient.iter_mut().zip(&w.gradient) {
                *g += x / batch as f64;
            }
        }
        clip_norm(&mut gradient, self.hyper.grad_clip);
        let next_iteration = self.iteration + 1;
        let result = meta_update(
            self.online.params_mut(),
            &gradient,
            &mut self.ring,
            &self.kernel,
            self.hyper.eta,
            self.hyper.eta_meta,
            next_iteration,
        );
        Some(result.map(|()| {
            self.iteration = next_iteration;
            let tau = self.hyper.target_tau;
            for (t, o) in self.target.params_mut().iter_mut().zip(self.online.params()) {
                *t += tau * (o - *t);
            }
            (td, cons)
        }))
    }
}

/// Rescales `v` in place so that `‖v‖ ≤ max_norm` (no-op for `max_norm = 0`).
pub fn clip_norm(v: &mut [f64], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let n = math::norm(v);
    if n > max_norm {
        let s = max_norm / n;
        v.iter_mut().for_each(|x| *x *= s);
    }
}

/// Field-by-field listing of where two hyperparameter sets differ.
pub fn hyper_diff(a: &AgentHyper, b: &AgentHyper) -> Vec<String> {
    let mut out = Vec::new();
    macro_rules! cmp {
        ($($f:ident),*) => {
            $(if a.$f != b.$f {
                out.push(format!("{}: {:?} -> {:?}", stringify!($f), a.$f, b.$f));
            })*
        };
    }
    cmp!(
        hidden,
        eta,
        eta_meta,
        gamma_frac,
        memory,
        gamma_disc,
        epsilon,
        window,
        consistency_weight,
        target_tau,
        replay_capacity,
        batch_windows,
        updates_per_episode,
        grad_clip,
        scaling
    );
    out
}
