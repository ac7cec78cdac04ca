//! Stochastic coupling processes: a Gaussian random-walk drift plus a
//! stationary long-memory fluctuation with power-law autocovariance.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::math;
use crate::rng::{self, StreamRng};

/// Random walk `λ̄(t+1) = λ̄(t) + ν(t)`, `ν ~ N(0, σ_ν²)`.
#[derive(Debug, Clone)]
pub struct DriftProcess {
    value: f64,
    step_std: f64,
    rng: StreamRng,
}

impl DriftProcess {
    pub fn new(initial: f64, step_std: f64, rng: StreamRng) -> Result<Self> {
        if !(step_std.is_finite() && step_std >= 0.0) {
            return Err(Error::param("step_std", "must be finite and non-negative"));
        }
        Ok(Self {
            value: initial,
            step_std,
            rng,
        })
    }

    pub fn seeded(initial: f64, step_std: f64, seed: u64) -> Result<Self> {
        Self::new(initial, step_std, rng::stream_rng(seed, rng::stream::DRIFT))
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn step_std(&self) -> f64 {
        self.step_std
    }

    /// Advances one cycle and returns the new value.
    pub fn step(&mut self) -> f64 {
        // The draw happens even for σ_ν = 0 so the stream position only
        // depends on the number of steps taken.
        let z = rng::gaussian(&mut self.rng);
        self.value += self.step_std * z;
        self.value
    }
}

/// Shape of the target autocovariance `Cov(τ) = C τ^(−β)` for `τ ≥ 1`,
/// `Cov(0) = C · lag0_factor`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct LongMemorySpec {
    pub beta: f64,
    pub scale: f64,
    pub lag0_factor: f64,
}

impl Default for LongMemorySpec {
    fn default() -> Self {
        Self {
            beta: 0.5,
            scale: 1.0,
            lag0_factor: DEFAULT_LAG0_FACTOR,
        }
    }
}

/// Smallest `Cov(0)/C` for which the autocovariance sequence stays convex at
/// lag 1 is `2 − 2^−β`; 2 clears it for every β in (0, 1).
pub const DEFAULT_LAG0_FACTOR: f64 = 2.0;

impl LongMemorySpec {
    pub fn new(beta: f64, scale: f64) -> Self {
        Self {
            beta,
            scale,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::param("beta", "must lie in the open interval (0, 1)"));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::param("scale", "must be finite and positive"));
        }
        if !(self.lag0_factor.is_finite() && self.lag0_factor > 0.0) {
            return Err(Error::param("lag0_factor", "must be finite and positive"));
        }
        Ok(())
    }

    pub fn autocovariance(&self, lag: usize) -> f64 {
        if lag == 0 {
            self.scale * self.lag0_factor
        } else {
            self.scale * math::powf(lag as f64, -self.beta)
        }
    }
}

/// Cholesky factor of the Toeplitz covariance for one horizon. Building it is
/// `O(T³)`, so it is shared (`Arc`) between every episode of the same length.
#[derive(Debug, Clone)]
pub struct LongMemoryFactor {
    spec: LongMemorySpec,
    lower: Matrix,
}

impl LongMemoryFactor {
    pub fn new(horizon: usize, spec: LongMemorySpec) -> Result<Self> {
        spec.validate()?;
        if horizon == 0 {
            return Err(Error::param("horizon", "must be at least 1"));
        }
        let mut cov = Matrix::zeros(horizon, horizon);
        let acov: Vec<f64> = (0..horizon).map(|k| spec.autocovariance(k)).collect();
        for i in 0..horizon {
            for j in 0..horizon {
                cov[(i, j)] = acov[i.abs_diff(j)];
            }
        }
        let lower = cov.cholesky()?;
        Ok(Self { spec, lower })
    }

    pub fn shared(horizon: usize, spec: LongMemorySpec) -> Result<Arc<Self>> {
        Self::new(horizon, spec).map(Arc::new)
    }

    pub fn horizon(&self) -> usize {
        self.lower.rows()
    }

    pub fn spec(&self) -> &LongMemorySpec {
        &self.spec
    }

    pub fn sample_path(&self, rng: &mut StreamRng) -> Vec<f64> {
        let z: Vec<f64> = (0..self.horizon()).map(|_| rng::gaussian(rng)).collect();
        self.lower.lower_mul_vec(&z)
    }
}

/// Exact-covariance stationary Gaussian path of length `horizon`.
pub fn generate_long_memory_path(
    horizon: usize,
    beta: f64,
    scale: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let factor = LongMemoryFactor::new(horizon, LongMemorySpec::new(beta, scale))?;
    Ok(factor.sample_path(&mut rng::stream_rng(seed, rng::stream::LONG_MEMORY)))
}

/// A pre-generated long-memory path consumed one cycle at a time.
#[derive(Debug, Clone)]
pub struct LongMemoryProcess {
    path: Vec<f64>,
    cursor: usize,
}

impl LongMemoryProcess {
    pub fn from_path(path: Vec<f64>) -> Self {
        Self { path, cursor: 0 }
    }

    pub fn sample(factor: &LongMemoryFactor, rng: &mut StreamRng) -> Self {
        Self::from_path(factor.sample_path(rng))
    }

    /// The disabled process (`C = 0`): identically zero.
    pub fn zero(horizon: usize) -> Self {
        Self::from_path(vec![0.0; horizon])
    }

    pub fn horizon(&self) -> usize {
        self.path.len()
    }

    pub fn path(&self) -> &[f64] {
        &self.path
    }

    /// Value at the cursor; zero once the horizon is exhausted.
    pub fn current(&self) -> f64 {
        self.path.get(self.cursor).copied().unwrap_or(0.0)
    }

    pub fn advance(&mut self) -> f64 {
        self.cursor += 1;
        self.current()
    }
}

/// `λ(t) = λ̄(t) + ζ(t)` with independent drift and long-memory parts.
#[derive(Debug, Clone)]
pub struct CouplingProcess {
    drift: DriftProcess,
    long_memory: LongMemoryProcess,
}

impl CouplingProcess {
    pub fn new(drift: DriftProcess, long_memory: LongMemoryProcess) -> Self {
        Self { drift, long_memory }
    }

    pub fn current(&self) -> f64 {
        self.drift.value() + self.long_memory.current()
    }

    /// Advances both components and returns the new coupling value.
    pub fn sample(&mut self) -> f64 {
        self.drift.step() + self.long_memory.advance()
    }

    /// Advances one cycle and returns `λ(t+1) − λ(t)`.
    pub fn increment(&mut self) -> f64 {
        let before = self.current();
        self.sample() - before
    }
}

/// Convenience wrapper matching the two-argument form used in tests and docs.
pub fn coupling_sample(drift: &mut DriftProcess, long_memory: &mut LongMemoryProcess) -> f64 {
    drift.step() + long_memory.advance()
}
