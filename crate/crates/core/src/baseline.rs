//! Comparison policies: the no-intervention policy and a gated recurrent
//! Q-network trained by the same loop as the belief-state learner, minus the
//! consistency loss and the fractional term.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::agent::{AgentHyper, EpisodeLog, Learner, RecurrentQNet};
use crate::env::{EnvModel, Observation, NUM_ACTIONS, OBS_DIM};
use crate::error::{Error, Result};
use crate::grad::{gemv_add, gemv_t_add, outer_add, CellDims};
use crate::math;
use crate::policy::{Decision, Policy};
use crate::rng;

/// Never intervenes.
pub fn static_policy(_: &Observation) -> usize {
    0
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StaticPolicy;

impl Policy for StaticPolicy {
    fn reset(&mut self) {}

    fn act(&mut self, observation: &Observation, _: f64) -> Decision {
        Decision {
            action: static_policy(observation),
            latent_norm: None,
        }
    }
}

/// Gate order within the stacked block.
const INPUT: usize = 0;
const FORGET: usize = 1;
const OUTPUT: usize = 2;
const CANDIDATE: usize = 3;

/// Gated recurrent cell with a linear Q head on the hidden state.
///
/// Flat layout: the `4h × (h + x + 1)` gate matrix acting on `[h; x; r]`
/// (input, forget, output and candidate rows, in that order), `4h` gate
/// biases, then the `A × h` head and `A` biases. The carried state is
/// `[h; c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedParams {
    dims: CellDims,
    data: Vec<f64>,
}

/// Per-step values kept for the backward pass.
struct GatedStep {
    z: Vec<f64>,
    gates: Vec<f64>,
    c_prev: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl GatedParams {
    pub fn param_count_for(dims: CellDims) -> usize {
        let h = dims.hidden;
        4 * h * (h + dims.input + 1) + 4 * h + dims.actions * (h + 1)
    }

    pub fn zeros(dims: CellDims) -> Self {
        Self {
            dims,
            data: vec![0.0; Self::param_count_for(dims)],
        }
    }

    pub fn random<R: Rng + ?Sized>(dims: CellDims, rng: &mut R) -> Self {
        let mut p = Self::zeros(dims);
        let h = dims.hidden;
        let z = p.z_dim();
        let scale = 1.0 / math::sqrt(z as f64);
        for w in p.gate_matrix_mut() {
            *w = scale * (2.0 * rng.random::<f64>() - 1.0);
        }
        // Start with the forget gate mostly open.
        p.gate_bias_mut()[FORGET * h..(FORGET + 1) * h].iter_mut().for_each(|b| *b = 1.0);
        let head_scale = 0.1 / math::sqrt(h as f64);
        let off = p.head_offset();
        for w in &mut p.data[off..off + dims.actions * h] {
            *w = head_scale * (2.0 * rng.random::<f64>() - 1.0);
        }
        p
    }

    pub fn seeded(dims: CellDims, seed: u64) -> Self {
        Self::random(dims, &mut rng::stream_rng(seed, rng::stream::INIT_PARAMS))
    }

    pub fn from_flat(dims: CellDims, data: Vec<f64>) -> Result<Self> {
        let expected = Self::param_count_for(dims);
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "GatedParams::from_flat",
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> CellDims {
        self.dims
    }

    fn z_dim(&self) -> usize {
        self.dims.hidden + self.dims.input + 1
    }

    fn matrix_len(&self) -> usize {
        4 * self.dims.hidden * self.z_dim()
    }

    pub fn gate_matrix(&self) -> &[f64] {
        &self.data[..self.matrix_len()]
    }

    pub fn gate_matrix_mut(&mut self) -> &mut [f64] {
        let n = self.matrix_len();
        &mut self.data[..n]
    }

    pub fn gate_bias(&self) -> &[f64] {
        let n = self.matrix_len();
        &self.data[n..n + 4 * self.dims.hidden]
    }

    pub fn gate_bias_mut(&mut self) -> &mut [f64] {
        let n = self.matrix_len();
        let h = self.dims.hidden;
        &mut self.data[n..n + 4 * h]
    }

    fn forward_step(&self, h: &[f64], c: &[f64], x: &[f64], r: f64) -> GatedStep {
        let hd = self.dims.hidden;
        assert_eq!(h.len(), hd, "hidden state dimension");
        assert_eq!(c.len(), hd, "cell state dimension");
        assert_eq!(x.len(), self.dims.input, "input dimension");
        let mut z = Vec::with_capacity(self.z_dim());
        z.extend_from_slice(h);
        z.extend_from_slice(x);
        z.push(r);
        let mut gates = self.gate_bias().to_vec();
        gemv_add(self.gate_matrix(), &z, &mut gates);
        for (k, g) in gates.iter_mut().enumerate() {
            *g = if k / hd == CANDIDATE {
                math::tanh(*g)
            } else {
                math::sigmoid(*g)
            };
        }
        let tanh_c = (0..hd)
            .map(|k| {
                let cell = gates[FORGET * hd + k] * c[k] + gates[INPUT * hd + k] * gates[CANDIDATE * hd + k];
                math::tanh(cell)
            })
            .collect();
        GatedStep {
            z,
            gates,
            c_prev: c.to_vec(),
            tanh_c,
        }
    }

    fn next_state(&self, s: &GatedStep) -> Vec<f64> {
        let hd = self.dims.hidden;
        let mut out = vec![0.0; 2 * hd];
        for k in 0..hd {
            let c = s.gates[FORGET * hd + k] * s.c_prev[k] + s.gates[INPUT * hd + k] * s.gates[CANDIDATE * hd + k];
            out[k] = s.gates[OUTPUT * hd + k] * s.tanh_c[k];
            out[hd + k] = c;
        }
        out
    }

    /// `(h', c')` from `(h, c)`, input `x` and reward `r`.
    pub fn gated_forward(&self, h: &[f64], c: &[f64], x: &[f64], r: f64) -> (Vec<f64>, Vec<f64>) {
        let mut s = self.next_state(&self.forward_step(h, c, x, r));
        let c_next = s.split_off(self.dims.hidden);
        (s, c_next)
    }

    /// Gate activations `(i, f, o, g)` at one step.
    pub fn gate_values(&self, h: &[f64], c: &[f64], x: &[f64], r: f64) -> [Vec<f64>; 4] {
        let s = self.forward_step(h, c, x, r);
        let hd = self.dims.hidden;
        [0, 1, 2, 3].map(|g| s.gates[g * hd..(g + 1) * hd].to_vec())
    }
}

impl RecurrentQNet for GatedParams {
    fn params(&self) -> &[f64] {
        &self.data
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn with_params(&self, flat: Vec<f64>) -> Result<Self> {
        Self::from_flat(self.dims, flat)
    }

    fn latent_dim(&self) -> usize {
        self.dims.hidden
    }

    fn state_dim(&self) -> usize {
        2 * self.dims.hidden
    }

    fn input_dim(&self) -> usize {
        self.dims.input
    }

    fn num_actions(&self) -> usize {
        self.dims.actions
    }

    fn head_offset(&self) -> usize {
        self.matrix_len() + 4 * self.dims.hidden
    }

    fn step(&self, state: &[f64], x: &[f64], r: f64) -> Vec<f64> {
        let hd = self.dims.hidden;
        self.next_state(&self.forward_step(&state[..hd], &state[hd..], x, r))
    }

    fn backward(&self, init: &[f64], xs: &[Vec<f64>], rs: &[f64], d_latent: &[Vec<f64>]) -> Vec<f64> {
        let hd = self.dims.hidden;
        let zd = self.z_dim();
        let mut steps = Vec::with_capacity(xs.len());
        let mut state = init.to_vec();
        for (x, r) in xs.iter().zip(rs) {
            let s = self.forward_step(&state[..hd], &state[hd..], x, *r);
            state = self.next_state(&s);
            steps.push(s);
        }
        let mut grad = vec![0.0; self.data.len()];
        let (g_mat, rest) = grad.split_at_mut(self.matrix_len());
        let g_bias = &mut rest[..4 * hd];
        let mut carry_h = vec![0.0; hd];
        let mut carry_c = vec![0.0; hd];
        let mut d_pre = vec![0.0; 4 * hd];
        let mut dz = vec![0.0; zd];
        for (t, s) in steps.iter().enumerate().rev() {
            let gate = |g: usize, k: usize| s.gates[g * hd + k];
            for k in 0..hd {
                let dh = d_latent[t][k] + carry_h[k];
                let o = gate(OUTPUT, k);
                let tc = s.tanh_c[k];
                let dc = carry_c[k] + dh * o * (1.0 - tc * tc);
                let (i, f, g) = (gate(INPUT, k), gate(FORGET, k), gate(CANDIDATE, k));
                d_pre[INPUT * hd + k] = dc * g * i * (1.0 - i);
                d_pre[FORGET * hd + k] = dc * s.c_prev[k] * f * (1.0 - f);
                d_pre[OUTPUT * hd + k] = dh * tc * o * (1.0 - o);
                d_pre[CANDIDATE * hd + k] = dc * i * (1.0 - g * g);
                carry_c[k] = dc * f;
            }
            outer_add(g_mat, &d_pre, &s.z);
            for (b, d) in g_bias.iter_mut().zip(&d_pre) {
                *b += d;
            }
            dz.iter_mut().for_each(|v| *v = 0.0);
            gemv_t_add(self.gate_matrix(), &d_pre, &mut dz);
            carry_h.copy_from_slice(&dz[..hd]);
        }
        grad
    }
}

/// Gated width whose parameter count is closest to the belief-state network
/// of width `hidden`.
pub fn matched_gated_hidden(hidden: usize) -> usize {
    let target = CellDims::new(hidden, OBS_DIM, NUM_ACTIONS).param_count() as f64;
    (1..=hidden.max(1))
        .min_by(|a, b| {
            let ca = GatedParams::param_count_for(CellDims::new(*a, OBS_DIM, NUM_ACTIONS)) as f64;
            let cb = GatedParams::param_count_for(CellDims::new(*b, OBS_DIM, NUM_ACTIONS)) as f64;
            (ca - target).abs().total_cmp(&(cb - target).abs())
        })
        .unwrap_or(1)
}

/// The gated baseline learner.
pub type GatedDqn = Learner<GatedParams>;

impl GatedDqn {
    /// Network of width `hyper.hidden`, initialised from `seed`.
    pub fn init(hyper: AgentHyper, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let dims = CellDims::new(hyper.hidden, OBS_DIM, NUM_ACTIONS);
        Learner::new(GatedParams::seeded(dims, seed), hyper)
    }
}

/// Baseline settings derived from the belief-state settings: the gated width
/// is matched on parameter count, the consistency loss and fractional term
/// are off, everything else is shared.
pub fn baseline_hyper(chdqn: &AgentHyper) -> AgentHyper {
    let mut h = chdqn.baseline();
    h.hidden = matched_gated_hidden(chdqn.hidden);
    h
}

/// Trains the gated baseline for `episodes` episodes.
pub fn train_baseline(
    model: &EnvModel,
    chdqn_hyper: &AgentHyper,
    episodes: usize,
    seed: u64,
) -> Result<(GatedDqn, Vec<EpisodeLog>)> {
    let mut learner = GatedDqn::init(baseline_hyper(chdqn_hyper), seed)?;
    let log = learner.train(model, episodes, seed)?;
    Ok((learner, log))
}
