//! Dense kernel for the belief-state cells: the causal filter
//! `h_t = tanh(W h_{t−1} + V x_t + R r_t)`, the smoothing cell
//! `h̃_t = tanh(W h_{t−1} + U h_{t+1} + V x_t + R r_t)`, the linear Q head, and
//! exact reverse-mode gradients through truncated unrolls.
//!
//! Parameters live in one flat vector so the optimiser and the fractional
//! meta-update can treat them as a single point `w ∈ R^n`. The layout is
//! `[W | U | V | R | Q_head | Q_bias]`, row-major.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;

use crate::error::{Error, Result};
use crate::math;
use crate::rng;

/// `out += M v` for a row-major `rows × v.len()` block.
pub(crate) fn gemv_add(m: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = v.len();
    debug_assert_eq!(m.len(), out.len() * cols);
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        *o += math::dot(row, v);
    }
}

/// `out += Mᵀ v` for a row-major `v.len() × out.len()` block.
pub(crate) fn gemv_t_add(m: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = out.len();
    debug_assert_eq!(m.len(), v.len() * cols);
    for (vi, row) in v.iter().zip(m.chunks_exact(cols)) {
        if *vi != 0.0 {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * vi;
            }
        }
    }
}

/// `M += a ⊗ b` for a row-major `a.len() × b.len()` block.
pub(crate) fn outer_add(m: &mut [f64], a: &[f64], b: &[f64]) {
    let cols = b.len();
    debug_assert_eq!(m.len(), a.len() * cols);
    for (ai, row) in a.iter().zip(m.chunks_exact_mut(cols)) {
        if *ai != 0.0 {
            for (x, bj) in row.iter_mut().zip(b) {
                *x += ai * bj;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CellDims {
    pub hidden: usize,
    pub input: usize,
    pub actions: usize,
}

impl CellDims {
    pub const fn new(hidden: usize, input: usize, actions: usize) -> Self {
        Self { hidden, input, actions }
    }

    fn ranges(&self) -> [Range<usize>; 6] {
        let (h, x, a) = (self.hidden, self.input, self.actions);
        let sizes = [h * h, h * h, h * x, h, a * h, a];
        let mut start = 0;
        sizes.map(|n| {
            let r = start..start + n;
            start += n;
            r
        })
    }

    pub fn param_count(&self) -> usize {
        self.ranges()[5].end
    }
}

/// Weights of the belief-state network (both cells share `W`, `V`, `R`).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    dims: CellDims,
    data: Vec<f64>,
}

impl ParamSet {
    pub fn zeros(dims: CellDims) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.param_count()],
        }
    }

    /// Uniform initialisation scaled by fan-in; the future weight `U` and the
    /// Q head start small.
    pub fn random<R: Rng + ?Sized>(dims: CellDims, rng: &mut R) -> Self {
        let mut p = Self::zeros(dims);
        let h = dims.hidden as f64;
        let fill = |s: &mut [f64], scale: f64, rng: &mut R| {
            for x in s {
                *x = scale * (2.0 * rng.random::<f64>() - 1.0);
            }
        };
        fill(p.w_mut(), 0.5 / math::sqrt(h), rng);
        fill(p.u_mut(), 0.1 / math::sqrt(h), rng);
        fill(p.v_mut(), 1.0 / math::sqrt(dims.input as f64), rng);
        fill(p.r_mut(), 0.1, rng);
        fill(p.q_head_mut(), 0.1 / math::sqrt(h), rng);
        p
    }

    pub fn seeded(dims: CellDims, seed: u64) -> Self {
        Self::random(dims, &mut rng::stream_rng(seed, rng::stream::INIT_PARAMS))
    }

    pub fn from_flat(dims: CellDims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.param_count() {
            return Err(Error::DimensionMismatch {
                context: "ParamSet::from_flat",
                expected: dims.param_count(),
                actual: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> CellDims {
        self.dims
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

macro_rules! block_accessors {
    ($($get:ident, $get_mut:ident, $idx:expr;)*) => {
        impl ParamSet {
            $(
                pub fn $get(&self) -> &[f64] {
                    &self.data[self.dims.ranges()[$idx].clone()]
                }
                pub fn $get_mut(&mut self) -> &mut [f64] {
                    let r = self.dims.ranges()[$idx].clone();
                    &mut self.data[r]
                }
            )*
        }
    };
}

block_accessors! {
    w, w_mut, 0;
    u, u_mut, 1;
    v, v_mut, 2;
    r, r_mut, 3;
    q_head, q_head_mut, 4;
    q_bias, q_bias_mut, 5;
}

impl ParamSet {
    fn check_dims(&self, h_prev: &[f64], x: &[f64]) {
        assert_eq!(h_prev.len(), self.dims.hidden, "hidden state dimension");
        assert_eq!(x.len(), self.dims.input, "input dimension");
    }

    fn causal_preactivation(&self, h_prev: &[f64], x: &[f64], r: f64) -> Vec<f64> {
        self.check_dims(h_prev, x);
        let mut a: Vec<f64> = self.r().iter().map(|ri| ri * r).collect();
        gemv_add(self.w(), h_prev, &mut a);
        gemv_add(self.v(), x, &mut a);
        a
    }

    /// `tanh(W h_prev + V x + R r)`.
    pub fn forward_cell(&self, h_prev: &[f64], x: &[f64], r: f64) -> Vec<f64> {
        let mut a = self.causal_preactivation(h_prev, x, r);
        a.iter_mut().for_each(|v| *v = math::tanh(*v));
        a
    }

    /// `tanh(W h_prev + U h_next + V x + R r)`.
    pub fn smooth_cell(&self, h_prev: &[f64], h_next: &[f64], x: &[f64], r: f64) -> Vec<f64> {
        assert_eq!(h_next.len(), self.dims.hidden, "future state dimension");
        let mut a = self.causal_preactivation(h_prev, x, r);
        gemv_add(self.u(), h_next, &mut a);
        a.iter_mut().for_each(|v| *v = math::tanh(*v));
        a
    }

    /// `Q_head h + bias`.
    pub fn q_values(&self, h: &[f64]) -> Vec<f64> {
        q_values(self.q_head(), self.q_bias(), h)
    }
}

pub(crate) fn q_values(head: &[f64], bias: &[f64], h: &[f64]) -> Vec<f64> {
    let mut q = bias.to_vec();
    gemv_add(head, h, &mut q);
    q
}

/// Cached forward pass of the causal cell over a window.
#[derive(Debug, Clone, PartialEq)]
pub struct UnrollTape {
    pub h_init: Vec<f64>,
    pub inputs: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    /// `h_t` for each step, stored after `tanh`.
    pub hidden: Vec<Vec<f64>>,
}

impl UnrollTape {
    pub fn len(&self) -> usize {
        self.hidden.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hidden.is_empty()
    }

    pub fn h_prev(&self, t: usize) -> &[f64] {
        if t == 0 {
            &self.h_init
        } else {
            &self.hidden[t - 1]
        }
    }
}

/// Runs the causal cell over `(x_t, r_t)` from `h_init`, recording a tape.
pub fn unroll(params: &ParamSet, h_init: &[f64], inputs: &[Vec<f64>], rewards: &[f64]) -> UnrollTape {
    assert_eq!(inputs.len(), rewards.len());
    let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(inputs.len());
    for (x, &r) in inputs.iter().zip(rewards) {
        let prev = hidden.last().map_or(h_init, |h| h.as_slice());
        let h = params.forward_cell(prev, x, r);
        hidden.push(h);
    }
    UnrollTape {
        h_init: h_init.to_vec(),
        inputs: inputs.to_vec(),
        rewards: rewards.to_vec(),
        hidden,
    }
}

/// Reverse-mode gradient of a loss whose partial derivatives with respect to
/// each `h_t` are `d_hidden[t]`; the tape's initial state is a constant.
/// The Q-head blocks of the result are zero (the head is handled by the
/// caller).
pub fn backward_window(params: &ParamSet, tape: &UnrollTape, d_hidden: &[Vec<f64>]) -> ParamSet {
    assert_eq!(tape.len(), d_hidden.len());
    let hdim = params.dims.hidden;
    let mut grad = ParamSet::zeros(params.dims);
    let mut carry = vec![0.0; hdim];
    let mut da = vec![0.0; hdim];
    for t in (0..tape.len()).rev() {
        let h = &tape.hidden[t];
        for k in 0..hdim {
            da[k] = (d_hidden[t][k] + carry[k]) * (1.0 - h[k] * h[k]);
        }
        outer_add(grad.w_mut(), &da, tape.h_prev(t));
        outer_add(grad.v_mut(), &da, &tape.inputs[t]);
        for (g, d) in grad.r_mut().iter_mut().zip(&da) {
            *g += d * tape.rewards[t];
        }
        carry.iter_mut().for_each(|c| *c = 0.0);
        gemv_t_add(params.w(), &da, &mut carry);
    }
    grad
}

/// Gradients of a scalar loss through one smoothing-cell evaluation, given
/// `d_out = ∂L/∂h̃`. Returns `(parameter gradient, ∂L/∂h_prev, ∂L/∂h_next)`.
pub fn smooth_cell_backward(
    params: &ParamSet,
    h_prev: &[f64],
    h_next: &[f64],
    x: &[f64],
    r: f64,
    output: &[f64],
    d_out: &[f64],
) -> (ParamSet, Vec<f64>, Vec<f64>) {
    let hdim = params.dims.hidden;
    let da: Vec<f64> = (0..hdim).map(|k| d_out[k] * (1.0 - output[k] * output[k])).collect();
    let mut grad = ParamSet::zeros(params.dims);
    outer_add(grad.w_mut(), &da, h_prev);
    outer_add(grad.u_mut(), &da, h_next);
    outer_add(grad.v_mut(), &da, x);
    for (g, d) in grad.r_mut().iter_mut().zip(&da) {
        *g += d * r;
    }
    let mut d_prev = vec![0.0; hdim];
    gemv_t_add(params.w(), &da, &mut d_prev);
    let mut d_next = vec![0.0; hdim];
    gemv_t_add(params.u(), &da, &mut d_next);
    (grad, d_prev, d_next)
}

/// Central finite differences of `f` at `point`.
pub fn finite_difference_gradient<F>(point: &[f64], step: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = point.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + step;
            let up = f(&x);
            x[i] = orig - step;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `max_i |a_i − b_i| / max(|a_i|, |b_i|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    const DIMS: CellDims = CellDims::new(5, 4, 3);

    fn random_vec(n: usize, rng: &mut crate::rng::StreamRng) -> Vec<f64> {
        (0..n).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect()
    }

    /// Scalar-loop reference for `tanh(W h + U n + V x + R r)`.
    fn reference_cell(p: &ParamSet, h: &[f64], n: Option<&[f64]>, x: &[f64], r: f64) -> Vec<f64> {
        let d = p.dims();
        let mut out = Vec::new();
        for i in 0..d.hidden {
            let mut s = p.r()[i] * r;
            for j in 0..d.hidden {
                s += p.w()[i * d.hidden + j] * h[j];
                if let Some(n) = n {
                    s += p.u()[i * d.hidden + j] * n[j];
                }
            }
            for j in 0..d.input {
                s += p.v()[i * d.input + j] * x[j];
            }
            out.push(libm::tanh(s));
        }
        out
    }

    #[test]
    fn flatten_round_trip() {
        let p = ParamSet::seeded(DIMS, 3);
        let q = ParamSet::from_flat(DIMS, p.flat().to_vec()).unwrap();
        assert_eq!(p, q);
        assert!(ParamSet::from_flat(DIMS, vec![0.0; 3]).is_err());
        assert_eq!(DIMS.param_count(), 25 + 25 + 20 + 5 + 15 + 3);
    }

    #[test]
    fn zero_params_give_zero_state() {
        let p = ParamSet::zeros(DIMS);
        let h = p.forward_cell(&[0.3; 5], &[1.0, -2.0, 3.0, 0.5], 7.0);
        assert!(h.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn small_inputs_pass_through() {
        let dims = CellDims::new(4, 4, 3);
        let mut p = ParamSet::zeros(dims);
        for i in 0..4 {
            p.v_mut()[i * 4 + i] = 1.0;
        }
        let x = [0.01, -0.005, 0.0075, -0.01];
        let h = p.forward_cell(&[0.0; 4], &x, 0.0);
        for (a, b) in h.iter().zip(x) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn cells_match_scalar_reference() {
        let mut rng = stream_rng(11, 0);
        for _ in 0..20 {
            let p = ParamSet::seeded(DIMS, rng.random());
            let h = random_vec(5, &mut rng);
            let n = random_vec(5, &mut rng);
            let x = random_vec(4, &mut rng);
            let r: f64 = rng.random();
            let f = p.forward_cell(&h, &x, r);
            let s = p.smooth_cell(&h, &n, &x, r);
            assert!(max_relative_error(&f, &reference_cell(&p, &h, None, &x, r), 1e-300) < 1e-12);
            assert!(max_relative_error(&s, &reference_cell(&p, &h, Some(&n), &x, r), 1e-300) < 1e-12);
        }
    }

    #[test]
    fn smoothing_reduces_to_causal() {
        let mut p = ParamSet::seeded(DIMS, 5);
        let h = [0.1, -0.2, 0.3, 0.0, 0.5];
        let x = [0.2, 0.1, 1.0, 0.05];
        assert_eq!(p.smooth_cell(&h, &[0.0; 5], &x, -0.3), p.forward_cell(&h, &x, -0.3));
        p.u_mut().iter_mut().for_each(|u| *u = 0.0);
        assert_eq!(p.smooth_cell(&h, &[0.7; 5], &x, -0.3), p.forward_cell(&h, &x, -0.3));
    }

    #[test]
    fn q_head_is_affine() {
        let mut p = ParamSet::seeded(DIMS, 8);
        p.q_bias_mut().copy_from_slice(&[1.0, 2.0, 3.0]);
        assert_eq!(p.q_values(&[0.0; 5]), vec![1.0, 2.0, 3.0]);
        let h = [0.3, -0.1, 0.2, 0.9, -0.5];
        let q = p.q_values(&h);
        for a in 0..3 {
            let mut s = p.q_bias()[a];
            for j in 0..5 {
                s += p.q_head()[a * 5 + j] * h[j];
            }
            assert!((q[a] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let p = ParamSet::seeded(DIMS, 2);
        let tape = unroll(&p, &[0.1; 5], &vec![vec![0.5; 4]; 6], &[0.2; 6]);
        let g = backward_window(&p, &tape, &vec![vec![0.0; 5]; 6]);
        assert!(g.flat().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_step_matches_closed_form() {
        // L = ½‖h‖², h = tanh(a): ∂L/∂W_ij = h_i (1 − h_i²) h_prev_j, etc.
        let p = ParamSet::seeded(DIMS, 4);
        let h0 = [0.2, -0.4, 0.1, 0.3, -0.6];
        let x = vec![0.3, -0.2, 1.0, 0.1];
        let r = -0.7;
        let tape = unroll(&p, &h0, &[x.clone()], &[r]);
        let h = tape.hidden[0].clone();
        let g = backward_window(&p, &tape, &[h.clone()]);
        for i in 0..5 {
            let da = h[i] * (1.0 - h[i] * h[i]);
            for j in 0..5 {
                assert!((g.w()[i * 5 + j] - da * h0[j]).abs() < 1e-10);
            }
            for j in 0..4 {
                assert!((g.v()[i * 4 + j] - da * x[j]).abs() < 1e-10);
            }
            assert!((g.r()[i] - da * r).abs() < 1e-10);
        }
    }

    #[test]
    fn window_gradient_matches_finite_differences() {
        let mut rng = stream_rng(21, 0);
        let p = ParamSet::seeded(DIMS, 9);
        let h0 = random_vec(5, &mut rng);
        let xs: Vec<Vec<f64>> = (0..8).map(|_| random_vec(4, &mut rng)).collect();
        let rs = random_vec(8, &mut rng);
        let targets: Vec<Vec<f64>> = (0..8).map(|_| random_vec(5, &mut rng)).collect();
        let loss = |flat: &[f64]| {
            let q = ParamSet::from_flat(DIMS, flat.to_vec()).unwrap();
            let tape = unroll(&q, &h0, &xs, &rs);
            tape.hidden
                .iter()
                .zip(&targets)
                .map(|(h, y)| h.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .sum::<f64>()
        };
        let tape = unroll(&p, &h0, &xs, &rs);
        let d: Vec<Vec<f64>> = tape
            .hidden
            .iter()
            .zip(&targets)
            .map(|(h, y)| h.iter().zip(y).map(|(a, b)| 2.0 * (a - b)).collect())
            .collect();
        let g = backward_window(&p, &tape, &d);
        let fd = finite_difference_gradient(p.flat(), 1e-5, loss);
        // U and the head do not enter this loss; both sides are zero there.
        assert!(max_relative_error(g.flat(), &fd, 1e-8) < 1e-4);
    }

    #[test]
    fn replay_is_bit_exact() {
        let p = ParamSet::seeded(DIMS, 1);
        let xs = vec![vec![0.1, 0.2, 0.0, 0.3]; 10];
        let a = unroll(&p, &[0.0; 5], &xs, &[0.5; 10]);
        let b = unroll(&p, &[0.0; 5], &xs, &[0.5; 10]);
        assert_eq!(a, b);
    }
}
