#![allow(dead_code)]

use driftqec_core::agent::{meta_update, FractionalKernel, SnapshotRing};
use driftqec_core::env::{CycleRecord, EpisodeTrace, Observation};
use driftqec_core::rng::{gaussian, stream_rng};
use rand::Rng;

/// Hand-built trace with random observations and actions.
pub fn synthetic_trace(seed: u64, len: usize, failed: bool) -> EpisodeTrace {
    let mut rng = stream_rng(seed, 0);
    let mut obs = || Observation {
        rho: 0.005 * rng.random::<f64>(),
        sigma: 0.1 * rng.random::<f64>(),
        pi: rng.random_range(0..2u8),
        hazard: 0.2 * rng.random::<f64>(),
    };
    let mut trace = EpisodeTrace::new(obs(), 400);
    let mut rng = stream_rng(seed, 1);
    for _ in 0..len {
        let action = rng.random_range(0..3usize);
        let observation = obs();
        trace.records.push(CycleRecord {
            observation,
            action,
            reward: -observation.rho - 1e-4 * action as f64,
            hazard: observation.hazard,
            fidelity: 1.0 - observation.hazard,
            latent_norm: None,
        });
        trace.total_control_cost += action as f64;
    }
    if failed {
        trace.failure_time = Some(len);
    }
    trace
}

/// Gradient descent on a drifting scalar quadratic `½ c_t (w − w*_t)²`
/// with random curvature `c_t` and a periodic-plus-noise optimum, using the
/// fractional update. Returns the RMS deviation of `w_t` about its mean.
pub fn scalar_amplitude(eta: f64, eta_meta: f64, iterations: usize, seed: u64) -> f64 {
    let kernel = FractionalKernel::new(32, 0.5).unwrap();
    let mut ring = SnapshotRing::new(32);
    let mut w = [0.0];
    ring.push(0, w.to_vec());
    let mut rng = stream_rng(seed, 7);
    let mut path = Vec::with_capacity(iterations);
    for t in 0..iterations {
        let curvature = 1.0 + 0.5 * (2.0 * rng.random::<f64>() - 1.0);
        let optimum = 0.5 * (2.0 * std::f64::consts::PI * t as f64 / 50.0).sin() + 0.1 * gaussian(&mut rng);
        let g = curvature * (w[0] - optimum);
        meta_update(&mut w, &[g], &mut ring, &kernel, eta, eta_meta, t as u64 + 1).unwrap();
        path.push(w[0]);
    }
    let mean = path.iter().sum::<f64>() / path.len() as f64;
    (path.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / path.len() as f64).sqrt()
}

/// Pearson chi-square statistic of `counts` against `expected` probabilities.
pub fn chi_square(counts: &[usize], expected: &[f64]) -> f64 {
    let n: usize = counts.iter().sum();
    counts
        .iter()
        .zip(expected)
        .filter(|(_, p)| **p > 0.0)
        .map(|(&c, &p)| {
            let e = p * n as f64;
            (c as f64 - e) * (c as f64 - e) / e
        })
        .sum()
}
