//! Latent noise regime `θ_t ∈ R^m`: linear dynamics with control back-action,
//! Gaussian innovation and injected coupling increments.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::math;
use crate::noise::{CouplingProcess, DriftProcess, LongMemoryFactor, LongMemoryProcess, LongMemorySpec};
use crate::rng::{self, StreamRng};

/// Index of the bit-flip power component.
pub const BIT_FLIP: usize = 0;
/// Index of the phase-flip power component.
pub const PHASE_FLIP: usize = 1;
/// Index of the correlation-persistence component.
pub const PERSISTENCE: usize = 2;
/// Components that receive the coupling-process increments.
pub const POWER_COMPONENTS: [usize; 2] = [BIT_FLIP, PHASE_FLIP];

/// `ρ(A)` above this is the near-unit-root, long-correlation-time regime.
pub const NEAR_UNIT_ROOT: f64 = 0.98;
const RADIUS_ITERATIONS: usize = 50;
const PSD_JITTER: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentRegime {
    pub theta: Vec<f64>,
}

impl LatentRegime {
    pub fn zeros(m: usize) -> Self {
        Self { theta: vec![0.0; m] }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|x| x.is_finite())
    }

    /// `‖(θ_bitflip, θ_phaseflip)‖`.
    pub fn power_norm(&self) -> f64 {
        let (x, z) = (self.theta[BIT_FLIP], self.theta[PHASE_FLIP]);
        math::sqrt(x * x + z * z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum InitialRegime {
    /// Draw `θ_0` from the stationary law of the uncontrolled Gaussian dynamics.
    #[default]
    Stationary,
    Zero,
}

/// Parameters of the coupling processes feeding the power components.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct NoiseConfig {
    /// Random-walk increment std `σ_ν`.
    pub drift_std: f64,
    /// Power-law decay exponent `β`.
    pub beta: f64,
    /// Long-memory amplitude `C`; zero disables the fluctuation component.
    pub scale: f64,
    /// `Cov(0) / C`.
    pub lag0_factor: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            drift_std: 0.002,
            beta: 0.5,
            scale: 2.0e-4,
            lag0_factor: crate::noise::DEFAULT_LAG0_FACTOR,
        }
    }
}

impl NoiseConfig {
    pub fn disabled() -> Self {
        Self {
            drift_std: 0.0,
            scale: 0.0,
            ..Self::default()
        }
    }

    pub fn long_memory_enabled(&self) -> bool {
        self.scale != 0.0
    }

    pub fn long_memory_spec(&self) -> LongMemorySpec {
        LongMemorySpec {
            beta: self.beta,
            scale: self.scale,
            lag0_factor: self.lag0_factor,
        }
    }

    pub fn validate(&self, errors: &mut Vec<String>) {
        if !(self.drift_std.is_finite() && self.drift_std >= 0.0) {
            errors.push(String::from("noise.drift_std: must be finite and >= 0"));
        }
        if !(self.scale.is_finite() && self.scale >= 0.0) {
            errors.push(String::from("noise.scale: must be finite and >= 0"));
        }
        if self.long_memory_enabled() {
            if let Err(e) = self.long_memory_spec().validate() {
                errors.push(format!("noise: {e}"));
            }
        }
    }
}

/// Serializable description of `(A, b, Σ_η)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct RegimeConfig {
    /// Rows of `A`.
    pub transition: Vec<Vec<f64>>,
    /// Column `b` multiplying the scalar action magnitude.
    pub action_column: Vec<f64>,
    /// Rows of `Σ_η`.
    pub innovation_cov: Vec<Vec<f64>>,
    pub initial: InitialRegime,
}

impl Default for RegimeConfig {
    fn default() -> Self {
        Self {
            transition: vec![
                vec![0.995, 0.0, 0.0],
                vec![0.0, 0.995, 0.0],
                vec![0.0, 0.0, 0.999],
            ],
            action_column: vec![-0.004, -0.004, 0.002],
            innovation_cov: vec![
                vec![2.5e-5, 0.0, 0.0],
                vec![0.0, 2.5e-5, 0.0],
                vec![0.0, 0.0, 1.0e-6],
            ],
            initial: InitialRegime::Stationary,
        }
    }
}

impl RegimeConfig {
    /// All-zero dynamics: `A = 0`, `b = 0`, `Σ_η = 0`, `θ_0 = 0`.
    pub fn null(m: usize) -> Self {
        Self {
            transition: vec![vec![0.0; m]; m],
            action_column: vec![0.0; m],
            innovation_cov: vec![vec![0.0; m]; m],
            initial: InitialRegime::Zero,
        }
    }

    pub fn dim(&self) -> usize {
        self.transition.len()
    }
}

fn matrix_from_rows(rows: &[Vec<f64>], name: &'static str) -> Result<Matrix> {
    let n = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != c) {
        return Err(Error::param(name, "rows have different lengths"));
    }
    let data = rows.iter().flatten().copied().collect();
    Matrix::from_vec(n, c, data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub spectral_radius: f64,
    pub near_unit_root: bool,
    pub innovation_psd: bool,
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Validated `(A, b, Σ_η)`; immutable and shareable once built.
#[derive(Debug, Clone)]
pub struct RegimeDynamics {
    transition: Matrix,
    action_column: Vec<f64>,
    innovation_cov: Matrix,
    innovation_factor: Matrix,
    report: ValidationReport,
}

/// Checks `ρ(A) < 1`, `Σ_η` symmetric PSD and shape agreement, collecting
/// every violation instead of stopping at the first.
pub fn validate_dynamics(a: &Matrix, b: &[f64], sigma: &Matrix) -> ValidationReport {
    let mut violations = Vec::new();
    let m = a.rows();
    let spectral_radius = if a.is_square() && a.is_finite() {
        a.spectral_radius(RADIUS_ITERATIONS)
    } else {
        violations.push(format!("A must be a finite square matrix, got {}x{}", a.rows(), a.cols()));
        f64::NAN
    };
    if spectral_radius >= 1.0 {
        violations.push(format!("spectral radius of A is {spectral_radius:.6}, must be < 1"));
    }
    if b.len() != m {
        violations.push(format!("action column has length {}, expected {m}", b.len()));
    }
    if b.iter().any(|x| !x.is_finite()) {
        violations.push(String::from("action column must be finite"));
    }
    let shape_ok = sigma.rows() == m && sigma.cols() == m;
    if !shape_ok {
        violations.push(format!(
            "innovation covariance is {}x{}, expected {m}x{m}",
            sigma.rows(),
            sigma.cols()
        ));
    }
    let symmetric = sigma.is_symmetric(1e-12);
    if !symmetric {
        violations.push(String::from("innovation covariance must be symmetric"));
    }
    let innovation_psd = symmetric && sigma.cholesky_with_jitter(PSD_JITTER).is_ok();
    if symmetric && !innovation_psd {
        violations.push(String::from("innovation covariance must be positive semidefinite"));
    }
    ValidationReport {
        spectral_radius,
        near_unit_root: spectral_radius > NEAR_UNIT_ROOT && spectral_radius < 1.0,
        innovation_psd,
        violations,
    }
}

impl RegimeDynamics {
    pub fn new(transition: Matrix, action_column: Vec<f64>, innovation_cov: Matrix) -> Result<Self> {
        let report = validate_dynamics(&transition, &action_column, &innovation_cov);
        if !report.is_valid() {
            return Err(Error::InvalidConfig(
                report.violations.iter().map(|v| format!("regime: {v}")).collect(),
            ));
        }
        let innovation_factor = innovation_cov.psd_factor(1e-12)?;
        Ok(Self {
            transition,
            action_column,
            innovation_cov,
            innovation_factor,
            report,
        })
    }

    pub fn from_config(config: &RegimeConfig) -> Result<Self> {
        Self::new(
            matrix_from_rows(&config.transition, "regime.transition")?,
            config.action_column.clone(),
            matrix_from_rows(&config.innovation_cov, "regime.innovation_cov")?,
        )
    }

    pub fn dim(&self) -> usize {
        self.transition.rows()
    }

    pub fn transition(&self) -> &Matrix {
        &self.transition
    }

    pub fn action_column(&self) -> &[f64] {
        &self.action_column
    }

    pub fn innovation_cov(&self) -> &Matrix {
        &self.innovation_cov
    }

    pub fn report(&self) -> &ValidationReport {
        &self.report
    }

    /// Stationary covariance of the uncontrolled Gaussian part of the
    /// dynamics (discrete Lyapunov solution).
    pub fn stationary_covariance(&self) -> Matrix {
        Matrix::discrete_lyapunov(&self.transition, &self.innovation_cov)
    }

    /// `θ' = A θ + b a + L z + injected`, where `z` is a standard normal draw
    /// and `L Lᵀ = Σ_η`.
    pub fn step(
        &self,
        state: &LatentRegime,
        action_magnitude: f64,
        standard_normal: &[f64],
        injected: &[f64],
    ) -> Result<LatentRegime> {
        let m = self.dim();
        if state.dim() != m {
            return Err(Error::DimensionMismatch {
                context: "regime_step",
                expected: m,
                actual: state.dim(),
            });
        }
        let mut next = self.transition.mul_vec(&state.theta);
        for (x, b) in next.iter_mut().zip(&self.action_column) {
            *x += b * action_magnitude;
        }
        self.innovation_factor.mul_vec_add(standard_normal, &mut next);
        for (x, inj) in next.iter_mut().zip(injected) {
            *x += inj;
        }
        let next = LatentRegime { theta: next };
        if !next.is_finite() {
            return Err(Error::NonFinite("regime_step"));
        }
        Ok(next)
    }
}

/// Single-step helper: `θ' = A θ + b a + η` with `η` supplied.
pub fn regime_step(
    dynamics: &RegimeDynamics,
    state: &LatentRegime,
    action_magnitude: f64,
    standard_normal: &[f64],
    injected: &[f64],
) -> Result<LatentRegime> {
    dynamics.step(state, action_magnitude, standard_normal, injected)
}

/// A running latent regime: dynamics plus its random sources.
#[derive(Debug, Clone)]
pub struct RegimeProcess {
    dynamics: Arc<RegimeDynamics>,
    state: LatentRegime,
    innovation_rng: StreamRng,
    couplings: Vec<CouplingProcess>,
    scratch: Vec<f64>,
}

impl RegimeProcess {
    /// Builds the process for one episode. `long_memory` must be `Some` when
    /// the noise config enables the fluctuation component.
    pub fn new(
        dynamics: Arc<RegimeDynamics>,
        noise: &NoiseConfig,
        long_memory: Option<&LongMemoryFactor>,
        initial: InitialRegime,
        horizon: usize,
        seed: u64,
    ) -> Result<Self> {
        let m = dynamics.dim();
        let state = match initial {
            InitialRegime::Zero => LatentRegime::zeros(m),
            InitialRegime::Stationary => {
                let factor = dynamics.stationary_covariance().psd_factor(1e-12)?;
                let mut init_rng = rng::stream_rng(seed, rng::stream::INITIAL_REGIME);
                let z: Vec<f64> = (0..m).map(|_| rng::gaussian(&mut init_rng)).collect();
                LatentRegime {
                    theta: factor.lower_mul_vec(&z),
                }
            }
        };
        let mut couplings = Vec::new();
        for (k, &component) in POWER_COMPONENTS.iter().enumerate() {
            if component >= m {
                break;
            }
            let drift = DriftProcess::new(
                0.0,
                noise.drift_std,
                rng::stream_rng(seed, rng::stream::DRIFT + k as u64),
            )?;
            let zeta = match (noise.long_memory_enabled(), long_memory) {
                (false, _) => LongMemoryProcess::zero(horizon),
                (true, Some(factor)) => {
                    let mut lm_rng = rng::stream_rng(seed, rng::stream::LONG_MEMORY + k as u64);
                    LongMemoryProcess::sample(factor, &mut lm_rng)
                }
                (true, None) => {
                    return Err(Error::param("long_memory", "factor required when noise.scale > 0"))
                }
            };
            couplings.push(CouplingProcess::new(drift, zeta));
        }
        Ok(Self {
            dynamics,
            state,
            innovation_rng: rng::stream_rng(seed, rng::stream::REGIME_INNOVATION),
            couplings,
            scratch: vec![0.0; m],
        })
    }

    pub fn state(&self) -> &LatentRegime {
        &self.state
    }

    pub fn dynamics(&self) -> &RegimeDynamics {
        &self.dynamics
    }

    pub fn step(&mut self, action_magnitude: f64) -> Result<&LatentRegime> {
        let m = self.dynamics.dim();
        let z: Vec<f64> = (0..m).map(|_| rng::gaussian(&mut self.innovation_rng)).collect();
        self.scratch.iter_mut().for_each(|x| *x = 0.0);
        for (coupling, &component) in self.couplings.iter_mut().zip(POWER_COMPONENTS.iter()) {
            self.scratch[component] = coupling.increment();
        }
        self.state = self.dynamics.step(&self.state, action_magnitude, &z, &self.scratch)?;
        Ok(&self.state)
    }
}
