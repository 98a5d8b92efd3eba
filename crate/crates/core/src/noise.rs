//! Brownian increments from counter-addressed substreams, and transport
//! fields `b` with a certified bound `‖P(b·∇)f‖_{H^s} <= ε_b ‖f‖_{H^{s+1}}`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::spectral::{
    sobolev_norm, transport_term, GridSpec, SpectralError, SpectralVectorField, TransportField,
    DIVERGENCE_TOL,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("horizon {horizon} is not an integer multiple of dt = {dt}")]
    NonIntegralSteps { horizon: f64, dt: f64 },
    #[error("time step and horizon must be positive and finite (T = {horizon}, dt = {dt})")]
    InvalidTimes { horizon: f64, dt: f64 },
    #[error("coarsening factor {factor} does not divide {steps} steps")]
    BadCoarsening { factor: usize, steps: usize },
    #[error("probe field {0} is zero")]
    ZeroProbe(usize),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Step count for `horizon / dt`, rejecting non-integral ratios.
pub fn step_count(horizon: f64, dt: f64) -> Result<usize, NoiseError> {
    if !(horizon > 0.0 && dt > 0.0 && horizon.is_finite() && dt.is_finite()) {
        return Err(NoiseError::InvalidTimes { horizon, dt });
    }
    let ratio = horizon / dt;
    let steps = ratio.round();
    if steps < 1.0 || (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
        return Err(NoiseError::NonIntegralSteps { horizon, dt });
    }
    Ok(steps as usize)
}

/// Key stream for one `(base_seed, substream)` pair. The ChaCha block
/// counter addresses step `i` directly: each step consumes exactly four
/// 32-bit words starting at word `4 i`.
#[derive(Clone)]
pub struct Substream {
    rng: ChaCha20Rng,
}

const WORDS_PER_STEP: u128 = 4;

impl Substream {
    pub fn new(base_seed: u64, substream_id: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(base_seed);
        rng.set_stream(substream_id);
        Self { rng }
    }

    /// Standard normal draw for step `index`, independent of call order.
    pub fn normal_at(&mut self, index: u64) -> f64 {
        self.rng.set_word_pos(index as u128 * WORDS_PER_STEP);
        self.next_normal()
    }

    /// Standard normal for the next step index.
    pub fn next_normal(&mut self) -> f64 {
        let a = self.rng.next_u64();
        let b = self.rng.next_u64();
        // u1 in (0, 1], u2 in [0, 1)
        let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Discretized Brownian path: i.i.d. `N(0, dt)` increments.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    pub dt: f64,
    pub increments: Vec<f64>,
    pub base_seed: u64,
    pub substream_id: u64,
}

impl NoisePath {
    pub fn horizon(&self) -> f64 {
        self.dt * self.increments.len() as f64
    }

    pub fn steps(&self) -> usize {
        self.increments.len()
    }

    /// `W(t_n)` for `n = 0..=steps`.
    pub fn brownian_values(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.increments.len() + 1);
        let mut acc = 0.0;
        w.push(acc);
        for dw in &self.increments {
            acc += dw;
            w.push(acc);
        }
        w
    }

    /// The same Brownian path observed on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<NoisePath, NoiseError> {
        if factor == 0 || !self.increments.len().is_multiple_of(factor) {
            return Err(NoiseError::BadCoarsening {
                factor,
                steps: self.increments.len(),
            });
        }
        Ok(NoisePath {
            dt: self.dt * factor as f64,
            increments: self
                .increments
                .chunks(factor)
                .map(|c| c.iter().sum())
                .collect(),
            base_seed: self.base_seed,
            substream_id: self.substream_id,
        })
    }

    /// Path with every increment negated.
    pub fn antithetic(&self) -> NoisePath {
        NoisePath {
            increments: self.increments.iter().map(|x| -x).collect(),
            ..self.clone()
        }
    }

    /// Deterministic path with all increments zero.
    pub fn zero(horizon: f64, dt: f64) -> Result<NoisePath, NoiseError> {
        let steps = step_count(horizon, dt)?;
        Ok(NoisePath {
            dt,
            increments: vec![0.0; steps],
            base_seed: 0,
            substream_id: 0,
        })
    }
}

/// Samples `T/dt` increments for `(base_seed, substream_id)`.
pub fn sample_path(
    base_seed: u64,
    substream_id: u64,
    horizon: f64,
    dt: f64,
) -> Result<NoisePath, NoiseError> {
    let steps = step_count(horizon, dt)?;
    let mut stream = Substream::new(base_seed, substream_id);
    let sd = dt.sqrt();
    let increments = (0..steps).map(|_| sd * stream.next_normal()).collect();
    Ok(NoisePath {
        dt,
        increments,
        base_seed,
        substream_id,
    })
}

/// Transport field together with its certified `ε_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportSpec {
    pub field: TransportField,
    pub epsilon_b: f64,
}

impl TransportSpec {
    pub fn none() -> Self {
        make_constant_transport([0.0; 3])
    }

    pub fn is_zero(&self) -> bool {
        match &self.field {
            TransportField::Constant(b) => b.iter().all(|&x| x == 0.0),
            TransportField::Field(f) => f.is_zero(),
        }
    }
}

/// Constant `b = β`; `ε_b = |β|` holds mode by mode since
/// `|β·k|² ≤ |β|² |k|² ≤ |β|² (1 + |k|²)`.
pub fn make_constant_transport(beta: [f64; 3]) -> TransportSpec {
    let epsilon_b = (beta[0] * beta[0] + beta[1] * beta[1] + beta[2] * beta[2]).sqrt();
    TransportSpec {
        field: TransportField::Constant(beta),
        epsilon_b,
    }
}

/// Spectral `b`, certified by Peetre's inequality and Young's convolution
/// bound: `ε_b = 2^{1/4} Σ_p (1+|p|²)^{1/4} |b̂_p|`, which dominates both
/// `s = 0` and `s = 1/2`.
pub fn make_spectral_transport(b: SpectralVectorField) -> Result<TransportSpec, NoiseError> {
    if !b.is_divergence_free(DIVERGENCE_TOL) {
        return Err(SpectralError::NotDivergenceFree(b.divergence_defect()).into());
    }
    let grid = b.grid();
    let w = grid.bessel_weights(0.25);
    let l1: f64 = b
        .coeffs()
        .iter()
        .zip(&w)
        .map(|(c, w)| w * (c[0].norm_sqr() + c[1].norm_sqr() + c[2].norm_sqr()).sqrt())
        .sum();
    Ok(TransportSpec {
        field: TransportField::Field(b),
        epsilon_b: 2f64.powf(0.25) * l1,
    })
}

/// `max_{f, s∈{0,1/2}} ‖P(b·∇)f‖_{H^s} / ‖f‖_{H^{s+1}}` over the probes.
pub fn estimate_epsilon_b(
    spec: &TransportSpec,
    probes: &[SpectralVectorField],
) -> Result<f64, NoiseError> {
    let mut best = 0.0_f64;
    for (i, f) in probes.iter().enumerate() {
        if f.is_zero() {
            return Err(NoiseError::ZeroProbe(i));
        }
        let t = transport_term(&spec.field, f)?;
        for s in [0.0, 0.5] {
            let den = sobolev_norm(f, s + 1.0);
            best = best.max(sobolev_norm(&t, s) / den);
        }
    }
    Ok(best)
}

/// Probe field aligned with `b = (0,0,β)`: modes `±(0,0,m)` carrying `(1,0,0)`.
pub fn aligned_probe(grid: GridSpec, m: i64) -> Result<SpectralVectorField, NoiseError> {
    Ok(SpectralVectorField::shear(
        grid,
        m,
        num_complex::Complex64::new(1.0, 0.0),
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn determinism_and_random_access() {
        let a = sample_path(7, 3, 1.0, 0.01).unwrap();
        let b = sample_path(7, 3, 1.0, 0.01).unwrap();
        assert_eq!(a, b);
        let mut s = Substream::new(7, 3);
        for i in [0u64, 17, 99, 42] {
            assert_eq!(s.normal_at(i) * 0.1, a.increments[i as usize]);
        }
        let c = sample_path(7, 4, 1.0, 0.01).unwrap();
        assert_ne!(a.increments, c.increments);
    }

    #[test]
    fn rejects_non_integral_horizon() {
        assert!(matches!(
            sample_path(0, 0, 1.0, 0.3),
            Err(NoiseError::NonIntegralSteps { .. })
        ));
        assert!(sample_path(0, 0, 1.0, 0.0).is_err());
        assert_eq!(sample_path(0, 0, 1.0, 1e-3).unwrap().steps(), 1000);
    }

    #[test]
    fn coarsening_preserves_endpoint() {
        let p = sample_path(1, 0, 1.0, 1.0 / 1024.0).unwrap();
        let q = p.coarsen(16).unwrap();
        assert_eq!(q.steps(), 64);
        let wp = *p.brownian_values().last().unwrap();
        let wq = *q.brownian_values().last().unwrap();
        assert!((wp - wq).abs() < 1e-13);
        assert!(p.coarsen(3).is_err());
    }

    #[test]
    fn constant_transport_certificate() {
        assert_eq!(make_constant_transport([0.0; 3]).epsilon_b, 0.0);
        assert!((make_constant_transport([0.0, 0.0, 0.1]).epsilon_b - 0.1).abs() < 1e-17);
    }

    #[test]
    fn aligned_probe_ratio_matches_closed_form() {
        let g = GridSpec::new(16).unwrap();
        let spec = make_constant_transport([0.0, 0.0, 0.1]);
        for m in 1..=5 {
            let r = estimate_epsilon_b(&spec, &[aligned_probe(g, m).unwrap()]).unwrap();
            let mf = m as f64;
            let expect = 0.1 * (mf * mf / (1.0 + mf * mf)).sqrt();
            assert!((r - expect).abs() < 1e-15, "m={m}: {r} vs {expect}");
        }
    }

    #[test]
    fn zero_probe_is_error() {
        let g = GridSpec::new(8).unwrap();
        let spec = make_constant_transport([0.0, 0.0, 0.1]);
        assert!(matches!(
            estimate_epsilon_b(&spec, &[SpectralVectorField::zeros(g)]),
            Err(NoiseError::ZeroProbe(0))
        ));
    }
}
