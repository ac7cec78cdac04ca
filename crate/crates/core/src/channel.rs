//! Latent regime → physical Pauli distribution → logical Pauli channel →
//! Bloch-vector evolution of the encoded qubit, fidelity and hazard.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::math;
use crate::regime::LatentRegime;

/// Pauli labels in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pauli {
    I = 0,
    X = 1,
    Y = 2,
    Z = 3,
}

/// Upper bound on each logical error probability; keeps every Bloch
/// contraction factor `1 − 2(q_a + q_b)` inside `[0, 1]`.
pub const LOGICAL_ERROR_CAP: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PauliDistribution {
    /// `(p_I, p_X, p_Y, p_Z)`.
    pub p: [f64; 4],
}

impl PauliDistribution {
    pub const IDENTITY: Self = Self { p: [1.0, 0.0, 0.0, 0.0] };

    pub fn new(p_i: f64, p_x: f64, p_y: f64, p_z: f64) -> Self {
        Self { p: [p_i, p_x, p_y, p_z] }
    }

    /// Builds `(1 − q_X − q_Y − q_Z, q_X, q_Y, q_Z)`.
    pub fn from_errors(q_x: f64, q_y: f64, q_z: f64) -> Self {
        Self::new(1.0 - q_x - q_y - q_z, q_x, q_y, q_z)
    }

    pub fn get(&self, label: Pauli) -> f64 {
        self.p[label as usize]
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.p.iter().all(|&x| x >= 0.0 && x.is_finite()) && (self.p.iter().sum::<f64>() - 1.0).abs() <= tol
    }

    /// Bloch contraction factors `(λ_x, λ_y, λ_z)` of `ρ ↦ Σ p_P PρP`.
    pub fn contraction_factors(&self) -> [f64; 3] {
        let [_, x, y, z] = self.p;
        [1.0 - 2.0 * (y + z), 1.0 - 2.0 * (x + z), 1.0 - 2.0 * (x + y)]
    }
}

/// Serializable parameters of the regime→channel map.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct ChannelConfig {
    /// Softmax weight rows `w_I, w_X, w_Y, w_Z`, each of length `m`.
    pub weights: Vec<Vec<f64>>,
    /// Constant logit per Pauli label, added to `w_Pᵀθ`; sets the operating
    /// point at `θ = 0`.
    pub logit_offset: [f64; 4],
    /// `p_th` of the distance-suppression law.
    pub suppression_threshold: f64,
    pub base_prefactor: f64,
    /// Bloch vector of the encoded state `|ψ_L⟩`; must have unit norm.
    pub initial_bloch: [f64; 3],
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            weights: vec![
                vec![0.0, 0.0, 0.0],
                vec![1.0, 0.0, 0.5],
                vec![0.5, 0.5, 0.5],
                vec![0.0, 1.0, 0.5],
            ],
            logit_offset: [0.0, -1.95, -1.95, -1.95],
            suppression_threshold: 0.1,
            base_prefactor: 0.003,
            initial_bloch: [1.0, 0.0, 0.0],
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self, m: usize, errors: &mut Vec<String>) {
        if self.weights.len() != 4 || self.weights.iter().any(|r| r.len() != m) {
            errors.push(format!("channel.weights: expected 4 rows of length {m}"));
        }
        if self.weights.iter().flatten().chain(&self.logit_offset).any(|x| !x.is_finite()) {
            errors.push(String::from("channel: weights and logit offsets must be finite"));
        }
        if !(self.suppression_threshold > 0.0 && self.suppression_threshold < 1.0) {
            errors.push(String::from("channel.suppression_threshold: must lie in (0, 1)"));
        }
        if !(self.base_prefactor.is_finite() && self.base_prefactor >= 0.0) {
            errors.push(String::from("channel.base_prefactor: must be finite and >= 0"));
        }
        if (math::norm(&self.initial_bloch) - 1.0).abs() > 1e-9 {
            errors.push(String::from("channel.initial_bloch: must be a unit vector (pure state)"));
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChannelMap {
    weights: Matrix,
    logit_offset: [f64; 4],
    distance: u32,
    suppression_threshold: f64,
    base_prefactor: f64,
}

impl ChannelMap {
    pub fn new(
        weights: Matrix,
        logit_offset: [f64; 4],
        distance: u32,
        suppression_threshold: f64,
        base_prefactor: f64,
    ) -> Result<Self> {
        if weights.rows() != 4 {
            return Err(Error::DimensionMismatch {
                context: "ChannelMap weights rows",
                expected: 4,
                actual: weights.rows(),
            });
        }
        if distance < 3 || distance % 2 == 0 {
            return Err(Error::param("distance", "code distance must be odd and >= 3"));
        }
        Ok(Self {
            weights,
            logit_offset,
            distance,
            suppression_threshold,
            base_prefactor,
        })
    }

    pub fn from_config(config: &ChannelConfig, distance: u32) -> Result<Self> {
        let m = config.weights.first().map_or(0, Vec::len);
        let mut errors = Vec::new();
        config.validate(m, &mut errors);
        if !errors.is_empty() {
            return Err(Error::InvalidConfig(errors));
        }
        let data = config.weights.iter().flatten().copied().collect();
        Self::new(
            Matrix::from_vec(4, m, data)?,
            config.logit_offset,
            distance,
            config.suppression_threshold,
            config.base_prefactor,
        )
    }

    pub fn distance(&self) -> u32 {
        self.distance
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    /// Softmax of `w_Pᵀθ + offset_P`, max-subtracted before exponentiation.
    pub fn pauli_from_regime(&self, theta: &LatentRegime) -> PauliDistribution {
        let mut logits = [0.0; 4];
        for (k, l) in logits.iter_mut().enumerate() {
            *l = math::dot(self.weights.row(k), &theta.theta) + self.logit_offset[k];
        }
        softmax4(logits)
    }

    pub fn suppression_exponent(&self) -> u32 {
        suppression_exponent(self.distance)
    }

    pub fn logical_suppression(&self, physical: &PauliDistribution) -> PauliDistribution {
        logical_suppression(
            physical,
            self.distance,
            self.suppression_threshold,
            self.base_prefactor,
        )
    }
}

fn softmax4(logits: [f64; 4]) -> PauliDistribution {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p = [0.0; 4];
    for (out, l) in p.iter_mut().zip(logits) {
        *out = math::exp(l - max);
    }
    let total: f64 = p.iter().sum();
    for x in &mut p {
        *x /= total;
    }
    PauliDistribution { p }
}

/// `⌈(d+1)/2⌉`.
pub fn suppression_exponent(distance: u32) -> u32 {
    (distance + 2) / 2
}

/// `q_P = base · (p_P / p_th)^⌈(d+1)/2⌉` for `P ∈ {X, Y, Z}`, each clamped to
/// `[0, 0.25]`; `q_I` takes the remainder.
pub fn logical_suppression(
    physical: &PauliDistribution,
    distance: u32,
    threshold: f64,
    base_prefactor: f64,
) -> PauliDistribution {
    let e = suppression_exponent(distance);
    let q = |p: f64| (base_prefactor * math::powi(p / threshold, e)).clamp(0.0, LOGICAL_ERROR_CAP);
    PauliDistribution::from_errors(q(physical.p[1]), q(physical.p[2]), q(physical.p[3]))
}

/// `H_crit(d) = c √d`.
pub fn hazard_threshold(distance: u32, c: f64) -> f64 {
    c * math::sqrt(distance as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogicalState {
    pub bloch: [f64; 3],
    pub initial_bloch: [f64; 3],
    pub fidelity: f64,
    pub hazard: f64,
}

impl LogicalState {
    pub fn encoded(initial_bloch: [f64; 3]) -> Self {
        let mut s = Self {
            bloch: initial_bloch,
            initial_bloch,
            fidelity: 0.0,
            hazard: 0.0,
        };
        s.refresh();
        s
    }

    fn refresh(&mut self) {
        let overlap = math::dot(&self.bloch, &self.initial_bloch);
        self.fidelity = 0.5 * (1.0 + overlap);
        self.hazard = 1.0 - self.fidelity;
    }

    /// Applies one cycle of the logical channel and returns the new state
    /// with this cycle's risk `F_before − F_after`.
    pub fn apply_channel(&self, logical: &PauliDistribution) -> (LogicalState, f64) {
        let f = logical.contraction_factors();
        let mut next = *self;
        for (b, k) in next.bloch.iter_mut().zip(f) {
            *b *= k;
        }
        next.refresh();
        (next, self.fidelity - next.fidelity)
    }
}

pub fn apply_channel(state: &LogicalState, logical: &PauliDistribution) -> (LogicalState, f64) {
    state.apply_channel(logical)
}
