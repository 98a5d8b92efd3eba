//! Time integration of the raw and cutoff-truncated stochastic Navier–Stokes
//! equations with transport noise, tracking `Q(t)` and the stopping time.
//!
//! One step, per retained mode:
//!
//! ```text
//! û_{n+1} = e^{-|k|² dt} [ û_n + dt F̂_n + dW_n Ĝ_n ]
//! F = -ψ²(u_n) P∇·(u_n ⊗ u_n)      (ψ ≡ 1 in raw mode)
//! G = P((b·∇) u_n)
//! ```
//!
//! followed by a Leray re-projection. The dissipation integral
//! `∫‖u‖²_{H^{3/2}}` is accumulated by integrating the heat flow of each
//! step exactly: over `[t_n, t_{n+1}]` the mode `k` contributes
//! `(1+|k|²)^{3/2} |û_{n+1}|² (e^{2|k|²dt} − 1)/(2|k|²)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noise::{NoisePath, TransportSpec};
use crate::spectral::{
    constant_transport, nonlinear_term, project_mode, transport_term, GridSpec, SpectralError,
    SpectralVectorField, TransportField,
};

/// Per-mode tolerance on divergence of states and initial data.
pub const STATE_DIVERGENCE_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("eps_bar must lie in (0, 1), got {0}")]
    InvalidEpsBar(f64),
    #[error("dt = {dt} exceeds the stability cap {cap} = c_stab / (1 + eps_b^2 K_d^2)")]
    StabilityCap { dt: f64, cap: f64 },
    #[error("dt must be positive and finite, got {0}")]
    InvalidDt(f64),
    #[error("noise path has dt = {noise} but the stepper uses dt = {stepper}")]
    NoiseStepMismatch { noise: f64, stepper: f64 },
    #[error("initial data must be divergence- and average-free")]
    InvalidInitialData,
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Smooth monotone cutoff profile with `θ = 1` on `[0,2]` and `θ = 0` on `[3,∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Theta {
    /// `1 − (6s⁵ − 15s⁴ + 10s³)`, `s = clamp(x − 2, 0, 1)`.
    #[default]
    Quintic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffConfig {
    pub eps_bar: f64,
    pub theta: Theta,
}

impl CutoffConfig {
    pub fn new(eps_bar: f64) -> Result<Self, DynamicsError> {
        if !(eps_bar > 0.0 && eps_bar < 1.0) {
            return Err(DynamicsError::InvalidEpsBar(eps_bar));
        }
        Ok(Self {
            eps_bar,
            theta: Theta::Quintic,
        })
    }
}

pub fn theta_eval(x: f64, cfg: &CutoffConfig) -> f64 {
    match cfg.theta {
        Theta::Quintic => {
            let s = (x - 2.0).clamp(0.0, 1.0);
            1.0 - s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
        }
    }
}

/// Argument of the cutoff, `(‖u‖_{H^{1/2}} + (∫‖u‖²_{H^{3/2}})^{1/2}) / ε̄`.
#[inline]
pub fn cutoff_argument(h12_norm: f64, dissipation_integral: f64, cfg: &CutoffConfig) -> f64 {
    (h12_norm + dissipation_integral.sqrt()) / cfg.eps_bar
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Raw,
    Truncated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepperConfig {
    pub dt: f64,
    pub mode: Mode,
    pub grid: GridSpec,
    pub transport: TransportSpec,
    pub c_stab: f64,
}

pub const DEFAULT_C_STAB: f64 = 0.5;

/// `c_stab / (1 + ε_b² K_d²)`.
pub fn stability_cap(grid: GridSpec, epsilon_b: f64, c_stab: f64) -> f64 {
    let kd = grid.dealias_cut() as f64;
    c_stab / (1.0 + epsilon_b * epsilon_b * kd * kd)
}

impl StepperConfig {
    pub fn new(
        dt: f64,
        mode: Mode,
        grid: GridSpec,
        transport: TransportSpec,
        c_stab: f64,
    ) -> Result<Self, DynamicsError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(DynamicsError::InvalidDt(dt));
        }
        let cap = stability_cap(grid, transport.epsilon_b, c_stab);
        if dt > cap {
            return Err(DynamicsError::StabilityCap { dt, cap });
        }
        if let TransportField::Field(b) = &transport.field {
            if b.grid() != grid {
                return Err(SpectralError::GridMismatch {
                    left: grid.modes_per_axis(),
                    right: b.grid().modes_per_axis(),
                }
                .into());
            }
        }
        Ok(Self {
            dt,
            mode,
            grid,
            transport,
            c_stab,
        })
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathStatus {
    Running,
    Diverged,
}

/// One stochastic trajectory at a grid time.
#[derive(Debug, Clone, PartialEq)]
pub struct PathState {
    pub step: usize,
    pub t: f64,
    pub u: SpectralVectorField,
    /// `∫₀ᵗ ‖u‖²_{H^{3/2}}`.
    pub dissipation_integral: f64,
    /// `Q(t) = (‖u(t)‖²_{H^{1/2}} + ∫₀ᵗ‖u‖²_{H^{3/2}})^{1/2}`.
    pub q_value: f64,
    pub h12_sq: f64,
    pub stopped: bool,
    pub tau: Option<f64>,
    pub status: PathStatus,
}

/// Per-mode weight tables of a stepper.
#[derive(Debug, Clone)]
pub struct ModeTables {
    pub k_squared: Vec<f64>,
    pub decay: Vec<f64>,
    /// `(1+|k|²)^{1/2}`, the symbol of the Bessel operator.
    pub bessel: Vec<f64>,
    pub h1: Vec<f64>,
    pub h32: Vec<f64>,
    /// Exact heat-flow quadrature weight for `∫‖u‖²_{H^{3/2}}` over one step.
    pub dissipation: Vec<f64>,
    /// Same quadrature for `∫‖u‖²_{H^1}`.
    pub dissipation_h1: Vec<f64>,
}

impl ModeTables {
    pub fn new(grid: GridSpec, dt: f64) -> Self {
        let k_squared = grid.k_squared();
        let decay = k_squared.iter().map(|k2| (-k2 * dt).exp()).collect();
        let bessel: Vec<f64> = k_squared.iter().map(|k2| (1.0 + k2).sqrt()).collect();
        let h1: Vec<f64> = k_squared.iter().map(|k2| 1.0 + k2).collect();
        let h32: Vec<f64> = k_squared.iter().map(|k2| (1.0 + k2).powf(1.5)).collect();
        let phi: Vec<f64> = k_squared
            .iter()
            .map(|&k2| {
                if k2 == 0.0 {
                    dt
                } else {
                    (2.0 * k2 * dt).exp_m1() / (2.0 * k2)
                }
            })
            .collect();
        let dissipation = h32.iter().zip(&phi).map(|(w, p)| w * p).collect();
        let dissipation_h1 = h1.iter().zip(&phi).map(|(w, p)| w * p).collect();
        Self {
            k_squared,
            decay,
            bessel,
            h1,
            h32,
            dissipation,
            dissipation_h1,
        }
    }
}

/// Drift and noise coefficient evaluated at the start of a step.
#[derive(Debug, Clone)]
pub struct StepTerms {
    pub psi: f64,
    /// `F = -ψ² P∇·(u⊗u)`; `None` when the cutoff switched it off.
    pub forcing: Option<SpectralVectorField>,
    /// `G = P((b·∇)u)`; `None` when `b = 0`.
    pub noise_coeff: Option<SpectralVectorField>,
}

#[derive(Debug, Clone)]
pub struct Stepper {
    pub cfg: StepperConfig,
    pub tables: ModeTables,
}

impl Stepper {
    pub fn new(cfg: StepperConfig) -> Self {
        let tables = ModeTables::new(cfg.grid, cfg.dt);
        Self { cfg, tables }
    }

    pub fn dt(&self) -> f64 {
        self.cfg.dt
    }

    pub fn h12_sq(&self, u: &SpectralVectorField) -> f64 {
        u.weighted_energy(&self.tables.bessel)
    }

    pub fn h1_sq(&self, u: &SpectralVectorField) -> f64 {
        u.weighted_energy(&self.tables.h1)
    }

    pub fn h32_sq(&self, u: &SpectralVectorField) -> f64 {
        u.weighted_energy(&self.tables.h32)
    }

    /// Contribution of the step ending at `u_next` to `∫‖u‖²_{H^{3/2}}`.
    pub fn dissipation_increment(&self, u_next: &SpectralVectorField) -> f64 {
        u_next.weighted_energy(&self.tables.dissipation)
    }

    pub fn dissipation_increment_h1(&self, u_next: &SpectralVectorField) -> f64 {
        u_next.weighted_energy(&self.tables.dissipation_h1)
    }

    pub fn initial_state(&self, u0: SpectralVectorField, cut: &CutoffConfig) -> PathState {
        let h12_sq = self.h12_sq(&u0);
        let q_value = h12_sq.sqrt();
        let stopped = q_value > cut.eps_bar;
        PathState {
            step: 0,
            t: 0.0,
            u: u0,
            dissipation_integral: 0.0,
            q_value,
            h12_sq,
            stopped,
            tau: stopped.then_some(0.0),
            status: PathStatus::Running,
        }
    }

    pub fn psi(&self, state: &PathState, cut: &CutoffConfig) -> f64 {
        psi_eval(state, cut)
    }

    /// `-ψ² P∇·(v⊗v)` for a cutoff value `psi`.
    pub fn forcing(&self, v: &SpectralVectorField, psi: f64) -> Result<Option<SpectralVectorField>, DynamicsError> {
        if psi == 0.0 {
            return Ok(None);
        }
        let mut n = nonlinear_term(v, v)?;
        n.scale(-(psi * psi));
        Ok(Some(n))
    }

    pub fn noise_coefficient(&self, u: &SpectralVectorField) -> Result<Option<SpectralVectorField>, DynamicsError> {
        if self.cfg.transport.is_zero() {
            return Ok(None);
        }
        Ok(Some(match &self.cfg.transport.field {
            TransportField::Constant(beta) => constant_transport(*beta, u),
            field => transport_term(field, u)?,
        }))
    }

    pub fn terms(&self, state: &PathState, cut: &CutoffConfig) -> Result<StepTerms, DynamicsError> {
        let psi = self.psi(state, cut);
        let applied = match self.cfg.mode {
            Mode::Raw => 1.0,
            Mode::Truncated => psi,
        };
        Ok(StepTerms {
            psi,
            forcing: self.forcing(&state.u, applied)?,
            noise_coeff: self.noise_coefficient(&state.u)?,
        })
    }

    /// `P e^{Δ dt} (u + dt F + dW G)`.
    pub fn advance(
        &self,
        u: &SpectralVectorField,
        forcing: Option<&SpectralVectorField>,
        noise_coeff: Option<&SpectralVectorField>,
        dw: f64,
    ) -> SpectralVectorField {
        let grid = u.grid();
        let dt = self.cfg.dt;
        let mut out = u.clone();
        let zero = [Complex64::new(0.0, 0.0); 3];
        for (m, c) in out.coeffs_mut().iter_mut().enumerate() {
            let f = forcing.map_or(&zero, |f| &f.coeffs()[m]);
            let g = noise_coeff.map_or(&zero, |g| &g.coeffs()[m]);
            let e = self.tables.decay[m];
            for d in 0..3 {
                c[d] = (c[d] + f[d] * dt + g[d] * dw) * e;
            }
            project_mode(grid.wavevector(m), c);
        }
        out
    }

    /// Bookkeeping after the field update: dissipation, `Q`, stopping.
    pub fn finish_step(
        &self,
        prev: &PathState,
        u_next: SpectralVectorField,
        cut: &CutoffConfig,
    ) -> PathState {
        let step = prev.step + 1;
        let t = step as f64 * self.cfg.dt;
        if !u_next.is_finite() {
            return PathState {
                step,
                t,
                u: u_next,
                dissipation_integral: f64::NAN,
                q_value: f64::NAN,
                h12_sq: f64::NAN,
                stopped: prev.stopped,
                tau: prev.tau,
                status: PathStatus::Diverged,
            };
        }
        let dissipation_integral = prev.dissipation_integral + self.dissipation_increment(&u_next);
        let h12_sq = self.h12_sq(&u_next);
        let q_value = (h12_sq + dissipation_integral).sqrt();
        let newly = !prev.stopped && q_value > cut.eps_bar;
        PathState {
            step,
            t,
            u: u_next,
            dissipation_integral,
            q_value,
            h12_sq,
            stopped: prev.stopped || newly,
            tau: if newly { Some(t) } else { prev.tau },
            status: prev.status,
        }
    }

    /// One semi-implicit Euler–Maruyama step, also returning the terms used.
    pub fn step_with_terms(
        &self,
        state: &PathState,
        dw: f64,
        cut: &CutoffConfig,
    ) -> Result<(PathState, StepTerms), DynamicsError> {
        let terms = self.terms(state, cut)?;
        let u_next = self.advance(
            &state.u,
            terms.forcing.as_ref(),
            terms.noise_coeff.as_ref(),
            dw,
        );
        Ok((self.finish_step(state, u_next, cut), terms))
    }

    pub fn em_step(&self, state: &PathState, dw: f64, cut: &CutoffConfig) -> Result<PathState, DynamicsError> {
        Ok(self.step_with_terms(state, dw, cut)?.0)
    }
}

/// `θ(argument)` for the state's running norms.
pub fn psi_eval(state: &PathState, cut: &CutoffConfig) -> f64 {
    theta_eval(
        cutoff_argument(state.h12_sq.sqrt(), state.dissipation_integral, cut),
        cut,
    )
}

/// Free-function form of [`Stepper::em_step`].
pub fn em_step(
    state: &PathState,
    dw: f64,
    cfg: &StepperConfig,
    cut: &CutoffConfig,
) -> Result<PathState, DynamicsError> {
    Stepper::new(cfg.clone()).em_step(state, dw, cut)
}

/// Itô solution of `dX = −k₃² X dt + iβk₃ X dW`, the per-mode reduction of
/// shear data `(f(x₃),0,0)` advected by `b = (0,0,β)`.
pub fn exact_shear_solution(amplitude: Complex64, k3: i64, beta: f64, t: f64, w_t: f64) -> Complex64 {
    let k = k3 as f64;
    let exponent = Complex64::new((-k * k + 0.5 * beta * beta * k * k) * t, beta * k * w_t);
    amplitude * exponent.exp()
}

/// Row of a trajectory export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub h12_norm: f64,
    pub dissipation_integral: f64,
    pub q: f64,
    pub psi: f64,
    pub argument: f64,
    pub stopped: bool,
}

impl StepRecord {
    pub fn of(state: &PathState, cut: &CutoffConfig) -> Self {
        let h12_norm = state.h12_sq.sqrt();
        Self {
            step: state.step,
            t: state.t,
            h12_norm,
            dissipation_integral: state.dissipation_integral,
            q: state.q_value,
            psi: psi_eval(state, cut),
            argument: cutoff_argument(h12_norm, state.dissipation_integral, cut),
            stopped: state.stopped,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    pub mode: Mode,
    pub records: Vec<StepRecord>,
    /// States `u(t_n)`, `n = 0..=steps`; empty unless requested.
    pub fields: Vec<SpectralVectorField>,
    pub increments: Vec<f64>,
    pub tau: Option<f64>,
    pub status: PathStatus,
}

impl Trajectory {
    pub fn final_field(&self) -> Option<&SpectralVectorField> {
        self.fields.last()
    }

    pub fn stopped(&self) -> bool {
        self.tau.is_some()
    }
}

fn validate_initial(u0: &SpectralVectorField, grid: GridSpec) -> Result<(), DynamicsError> {
    if u0.grid() != grid {
        return Err(SpectralError::GridMismatch {
            left: grid.modes_per_axis(),
            right: u0.grid().modes_per_axis(),
        }
        .into());
    }
    if !u0.is_average_free() || !u0.is_divergence_free(STATE_DIVERGENCE_TOL) {
        return Err(DynamicsError::InvalidInitialData);
    }
    Ok(())
}

/// Drives a path over the whole noise horizon, calling `observe` after every
/// step with the state before, the terms used and the state after. Stops
/// early only if the path diverges.
pub fn run_path_with<F>(
    u0: &SpectralVectorField,
    stepper: &Stepper,
    cut: &CutoffConfig,
    noise: &NoisePath,
    mut observe: F,
) -> Result<PathState, DynamicsError>
where
    F: FnMut(&PathState, &StepTerms, &PathState, f64),
{
    validate_initial(u0, stepper.cfg.grid)?;
    if (noise.dt - stepper.cfg.dt).abs() > 1e-12 * stepper.cfg.dt {
        return Err(DynamicsError::NoiseStepMismatch {
            noise: noise.dt,
            stepper: stepper.cfg.dt,
        });
    }
    let mut state = stepper.initial_state(u0.clone(), cut);
    for &dw in &noise.increments {
        let (next, terms) = stepper.step_with_terms(&state, dw, cut)?;
        observe(&state, &terms, &next, dw);
        state = next;
        if state.status == PathStatus::Diverged {
            break;
        }
    }
    Ok(state)
}

/// Full trajectory of one path. With `keep_fields` every `u(t_n)` is stored.
pub fn run_path(
    u0: &SpectralVectorField,
    stepper: &Stepper,
    cut: &CutoffConfig,
    noise: &NoisePath,
    keep_fields: bool,
) -> Result<Trajectory, DynamicsError> {
    let mut records = Vec::with_capacity(noise.steps() + 1);
    let mut fields = Vec::new();
    let mut first = true;
    let last = run_path_with(u0, stepper, cut, noise, |before, _, after, _| {
        if first {
            records.push(StepRecord::of(before, cut));
            if keep_fields {
                fields.push(before.u.clone());
            }
            first = false;
        }
        records.push(StepRecord::of(after, cut));
        if keep_fields {
            fields.push(after.u.clone());
        }
    })?;
    if first {
        // zero-length horizon cannot happen with a valid NoisePath; keep the
        // initial record for completeness
        records.push(StepRecord::of(&last, cut));
        if keep_fields {
            fields.push(last.u.clone());
        }
    }
    Ok(Trajectory {
        dt: stepper.cfg.dt,
        mode: stepper.cfg.mode,
        records,
        fields,
        increments: noise.increments[..last.step].to_vec(),
        tau: last.tau,
        status: last.status,
    })
}
