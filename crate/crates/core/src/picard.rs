//! Nested fixed-point schemes on the time grid of the stepper.
//!
//! Inner scheme (frozen advection `v`):
//! `u^{(m)}_{n+1} = P e^{Δ dt}[u^{(m)}_n − dt ψ²(v_n) P∇·(v_n⊗v_n) + dW_n G(u^{(m−1)}_n)]`,
//! started from `u^{(−1)} = 0`. Outer scheme: `u^{(m)}` is the inner fixed
//! point with `v = u^{(m−1)}`. Both use the exact integrating factor and the
//! same cutoff bookkeeping as [`crate::dynamics`], so the outer fixed point is
//! the direct truncated trajectory.

use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{
    run_path, CutoffConfig, DynamicsError, Mode, PathStatus, Stepper,
    STATE_DIVERGENCE_TOL,
};
use crate::noise::NoisePath;
use crate::spectral::{SpectralError, SpectralVectorField};
use crate::stats::{linear_fit, LinearFit};

pub const DEFAULT_MAX_ITER: usize = 50;
pub const DEFAULT_TOL: f64 = 1e-10;

/// Sup-`H^{1/2}` agreement demanded by [`pathwise_uniqueness_check`].
pub const UNIQUENESS_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PicardConfig {
    pub max_iter: usize,
    /// Stop once `D^{(m)} ≤ tol · K^{(0)}`.
    pub tol: f64,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self {
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PicardIterate {
    pub m: usize,
    pub k: f64,
    pub d: f64,
    /// `D^{(m)} / D^{(m−1)}`.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct PicardTrace {
    pub iterates: Vec<PicardIterate>,
    pub converged: bool,
}

impl PicardTrace {
    pub fn iterations(&self) -> usize {
        self.iterates.len()
    }

    fn push(&mut self, k: f64, d: f64) {
        let ratio = self.iterates.last().and_then(|p| (p.d > 0.0).then(|| d / p.d));
        self.iterates.push(PicardIterate {
            m: self.iterates.len(),
            k,
            d,
            ratio,
        });
    }

    /// Least-squares fit of `ln D^{(m)}` against `m` over `m ≥ from` with `D > 0`.
    pub fn log_linear_fit(&self, from: usize) -> Option<LinearFit> {
        let (x, y): (Vec<f64>, Vec<f64>) = self
            .iterates
            .iter()
            .filter(|it| it.m >= from && it.d > 0.0)
            .map(|it| (it.m as f64, it.d.ln()))
            .unzip();
        linear_fit(&x, &y)
    }

    /// Geometric-mean contraction ratio, `exp(slope)` of the fit from `m = 1`.
    pub fn measured_ratio(&self) -> Option<f64> {
        self.log_linear_fit(1).map(|f| f.slope.exp())
    }

    pub fn to_csv(&self, header: &str) -> String {
        let mut s = String::from(header);
        s.push_str("m,K_m,D_m,ratio\n");
        for it in &self.iterates {
            let r = it.ratio.map_or(String::new(), |r| format!("{r:.16e}"));
            s.push_str(&format!("{},{:.16e},{:.16e},{}\n", it.m, it.k, it.d, r));
        }
        s
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PicardError {
    #[error("fixed-point iteration did not converge within {} iterations", .trace.iterations())]
    NotConverged { trace: PicardTrace },
    #[error("trajectory has {found} states, expected {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("initial data must be divergence- and average-free")]
    InvalidInitialData,
    #[error("path diverged during iteration")]
    Diverged,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// `(K, D)` energies of a trajectory and of its difference from `prev`.
struct Energies<'a> {
    stepper: &'a Stepper,
    sup_k: f64,
    sum_k: f64,
    sup_d: f64,
    sum_d: f64,
}

impl<'a> Energies<'a> {
    fn new(stepper: &'a Stepper) -> Self {
        Self {
            stepper,
            sup_k: 0.0,
            sum_k: 0.0,
            sup_d: 0.0,
            sum_d: 0.0,
        }
    }

    /// Adds state `n` of `steps`; the H^{3/2} sums are left-endpoint.
    fn add(&mut self, n: usize, steps: usize, u: &SpectralVectorField, prev: Option<&SpectralVectorField>) {
        let dt = self.stepper.dt();
        self.sup_k = self.sup_k.max(self.stepper.h12_sq(u));
        if n < steps {
            self.sum_k += self.stepper.h32_sq(u) * dt;
        }
        let diff;
        let d = match prev {
            Some(p) => {
                diff = u.sub(p).expect("same grid");
                &diff
            }
            None => u,
        };
        self.sup_d = self.sup_d.max(self.stepper.h12_sq(d));
        if n < steps {
            self.sum_d += self.stepper.h32_sq(d) * dt;
        }
    }

    fn k(&self) -> f64 {
        self.sup_k + self.sum_k
    }

    fn d(&self) -> f64 {
        self.sup_d + self.sum_d
    }
}

fn check_inputs(
    u0: &SpectralVectorField,
    noise: &NoisePath,
    stepper: &Stepper,
    trajectories: &[&[SpectralVectorField]],
) -> Result<(), PicardError> {
    if u0.grid() != stepper.cfg.grid {
        return Err(SpectralError::GridMismatch {
            left: stepper.cfg.grid.modes_per_axis(),
            right: u0.grid().modes_per_axis(),
        }
        .into());
    }
    if !u0.is_average_free() || !u0.is_divergence_free(STATE_DIVERGENCE_TOL) {
        return Err(PicardError::InvalidInitialData);
    }
    if (noise.dt - stepper.dt()).abs() > 1e-12 * stepper.dt() {
        return Err(DynamicsError::NoiseStepMismatch {
            noise: noise.dt,
            stepper: stepper.dt(),
        }
        .into());
    }
    let expected = noise.steps() + 1;
    for t in trajectories {
        if t.len() != expected {
            return Err(PicardError::LengthMismatch {
                expected,
                found: t.len(),
            });
        }
        if let Some(f) = t.iter().find(|f| f.grid() != stepper.cfg.grid) {
            return Err(SpectralError::GridMismatch {
                left: stepper.cfg.grid.modes_per_axis(),
                right: f.grid().modes_per_axis(),
            }
            .into());
        }
    }
    Ok(())
}

/// Drift `F(v_n)` along a frozen trajectory, with the cutoff evaluated from
/// the same running norms as the stepper. In raw mode `ψ ≡ 1`.
fn frozen_forcing(
    v: &[SpectralVectorField],
    stepper: &Stepper,
    cut: &CutoffConfig,
) -> Result<Vec<Option<SpectralVectorField>>, PicardError> {
    let steps = v.len() - 1;
    let mut out = Vec::with_capacity(steps);
    let mut state = stepper.initial_state(SpectralVectorField::zeros(stepper.cfg.grid), cut);
    for (n, vn) in v[..steps].iter().enumerate() {
        if n > 0 {
            state.dissipation_integral += stepper.dissipation_increment(vn);
        }
        state.h12_sq = stepper.h12_sq(vn);
        let psi = match stepper.cfg.mode {
            Mode::Raw => 1.0,
            Mode::Truncated => stepper.psi(&state, cut),
        };
        out.push(if vn.is_zero() { None } else { stepper.forcing(vn, psi)? });
    }
    Ok(out)
}

/// One linear pass with frozen forcing and noise argument; also returns the
/// `(K, D)` energies against `u_prev` (`None` meaning the zero trajectory).
fn linear_pass(
    forcing: &[Option<SpectralVectorField>],
    u_prev: Option<&[SpectralVectorField]>,
    u0: &SpectralVectorField,
    noise: &NoisePath,
    stepper: &Stepper,
) -> Result<(Vec<SpectralVectorField>, f64, f64), PicardError> {
    let steps = noise.steps();
    let mut out = Vec::with_capacity(steps + 1);
    let mut e = Energies::new(stepper);
    out.push(u0.clone());
    e.add(0, steps, u0, u_prev.map(|p| &p[0]));
    for n in 0..steps {
        let g = match u_prev {
            Some(p) => stepper.noise_coefficient(&p[n])?,
            None => None,
        };
        let next = stepper.advance(&out[n], forcing[n].as_ref(), g.as_ref(), noise.increments[n]);
        if !next.is_finite() {
            return Err(PicardError::Diverged);
        }
        e.add(n + 1, steps, &next, u_prev.map(|p| &p[n + 1]));
        out.push(next);
    }
    Ok((out, e.k(), e.d()))
}

/// One inner iterate: the linear solve with advection frozen at `v` and the
/// noise coefficient frozen at `u_prev`.
pub fn inner_iteration(
    v: &[SpectralVectorField],
    u_prev: &[SpectralVectorField],
    u0: &SpectralVectorField,
    noise: &NoisePath,
    stepper: &Stepper,
    cut: &CutoffConfig,
) -> Result<Vec<SpectralVectorField>, PicardError> {
    check_inputs(u0, noise, stepper, &[v, u_prev])?;
    let forcing = frozen_forcing(v, stepper, cut)?;
    Ok(linear_pass(&forcing, Some(u_prev), u0, noise, stepper)?.0)
}

fn iterate_inner(
    forcing: &[Option<SpectralVectorField>],
    u0: &SpectralVectorField,
    noise: &NoisePath,
    stepper: &Stepper,
    pc: &PicardConfig,
) -> Result<(Vec<SpectralVectorField>, PicardTrace), PicardError> {
    let mut trace = PicardTrace::default();
    let mut current: Option<Vec<SpectralVectorField>> = None;
    let mut k0 = 0.0;
    for m in 0..pc.max_iter {
        let (next, k, d) = linear_pass(forcing, current.as_deref(), u0, noise, stepper)?;
        if m == 0 {
            k0 = k;
        }
        trace.push(k, d);
        current = Some(next);
        if d <= pc.tol * k0 {
            trace.converged = true;
            return Ok((current.expect("set above"), trace));
        }
    }
    Err(PicardError::NotConverged { trace })
}

/// Iterates [`inner_iteration`] from `u^{(−1)} = 0` to its fixed point.
pub fn inner_fixed_point(
    v: &[SpectralVectorField],
    u0: &SpectralVectorField,
    noise: &NoisePath,
    stepper: &Stepper,
    cut: &CutoffConfig,
    pc: &PicardConfig,
) -> Result<(Vec<SpectralVectorField>, PicardTrace), PicardError> {
    check_inputs(u0, noise, stepper, &[v])?;
    let forcing = frozen_forcing(v, stepper, cut)?;
    iterate_inner(&forcing, u0, noise, stepper, pc)
}

/// One outer iterate: the inner fixed point with advection frozen at `u_prev`.
pub fn outer_iteration(
    u_prev: &[SpectralVectorField],
    u0: &SpectralVectorField,
    noise: &NoisePath,
    stepper: &Stepper,
    cut: &CutoffConfig,
    pc: &PicardConfig,
) -> Result<Vec<SpectralVectorField>, PicardError> {
    Ok(inner_fixed_point(u_prev, u0, noise, stepper, cut, pc)?.0)
}

/// Starting iterate `u^{(−1)}` of the outer scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialIterate {
    Zero,
    /// `e^{tΔ} u₀` on the grid.
    HeatFlow,
}

/// Heat flow of `u0` sampled on the noise grid.
pub fn heat_flow(u0: &SpectralVectorField, stepper: &Stepper, steps: usize) -> Vec<SpectralVectorField> {
    let mut out = Vec::with_capacity(steps + 1);
    out.push(u0.clone());
    for n in 0..steps {
        let next = stepper.advance(&out[n], None, None, 0.0);
        out.push(next);
    }
    out
}

#[derive(Debug, Clone)]
pub struct OuterSolution {
    pub trajectory: Vec<SpectralVectorField>,
    pub trace: PicardTrace,
    /// Inner iteration counts, one per outer iterate.
    pub inner_iterations: Vec<usize>,
}

pub fn outer_fixed_point(
    u0: &SpectralVectorField,
    noise: &NoisePath,
    stepper: &Stepper,
    cut: &CutoffConfig,
    pc: &PicardConfig,
    start: InitialIterate,
) -> Result<OuterSolution, PicardError> {
    check_inputs(u0, noise, stepper, &[])?;
    let steps = noise.steps();
    let mut prev = match start {
        InitialIterate::Zero => vec![SpectralVectorField::zeros(stepper.cfg.grid); steps + 1],
        InitialIterate::HeatFlow => heat_flow(u0, stepper, steps),
    };
    let mut trace = PicardTrace::default();
    let mut inner_iterations = Vec::new();
    let mut k0 = 0.0;
    for m in 0..pc.max_iter {
        let forcing = frozen_forcing(&prev, stepper, cut)?;
        let (next, inner) = iterate_inner(&forcing, u0, noise, stepper, pc)?;
        inner_iterations.push(inner.iterations());
        let mut e = Energies::new(stepper);
        for (n, (a, b)) in next.iter().zip(&prev).enumerate() {
            e.add(n, steps, a, Some(b));
        }
        if m == 0 {
            k0 = e.k();
        }
        trace.push(e.k(), e.d());
        prev = next;
        if e.d() <= pc.tol * k0 {
            trace.converged = true;
            return Ok(OuterSolution {
                trajectory: prev,
                trace,
                inner_iterations,
            });
        }
    }
    Err(PicardError::NotConverged { trace })
}

/// `sup_n ‖a_n − b_n‖_{H^{1/2}}`.
pub fn sup_h12_distance(a: &[SpectralVectorField], b: &[SpectralVectorField], stepper: &Stepper) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| stepper.h12_sq(&x.sub(y).expect("same grid")).sqrt())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize)]
pub struct UniquenessReport {
    /// Zero-started vs heat-flow-started fixed points.
    pub picard_vs_picard: f64,
    pub zero_vs_direct: f64,
    pub heat_vs_direct: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// `‖u_n − ũ_n‖_{H^{1/2}}` between the two fixed points.
    pub difference: Vec<f64>,
    pub zero_trace: PicardTrace,
    pub heat_trace: PicardTrace,
}

/// Runs the outer scheme from both initial iterates and compares the limits
/// with each other and with [`run_path`].
pub fn pathwise_uniqueness_check(
    u0: &SpectralVectorField,
    noise: &NoisePath,
    stepper: &Stepper,
    cut: &CutoffConfig,
    pc: &PicardConfig,
) -> Result<UniquenessReport, PicardError> {
    let a = outer_fixed_point(u0, noise, stepper, cut, pc, InitialIterate::Zero)?;
    let b = outer_fixed_point(u0, noise, stepper, cut, pc, InitialIterate::HeatFlow)?;
    let direct = run_path(u0, stepper, cut, noise, true)?;
    if direct.status == PathStatus::Diverged {
        return Err(PicardError::Diverged);
    }
    let difference: Vec<f64> = a
        .trajectory
        .iter()
        .zip(&b.trajectory)
        .map(|(x, y)| stepper.h12_sq(&x.sub(y).expect("same grid")).sqrt())
        .collect();
    let picard_vs_picard = difference.iter().copied().fold(0.0, f64::max);
    let zero_vs_direct = sup_h12_distance(&a.trajectory, &direct.fields, stepper);
    let heat_vs_direct = sup_h12_distance(&b.trajectory, &direct.fields, stepper);
    let pass = picard_vs_picard <= UNIQUENESS_TOL
        && zero_vs_direct <= UNIQUENESS_TOL
        && heat_vs_direct <= UNIQUENESS_TOL;
    Ok(UniquenessReport {
        picard_vs_picard,
        zero_vs_direct,
        heat_vs_direct,
        tolerance: UNIQUENESS_TOL,
        pass,
        difference,
        zero_trace: a.trace,
        heat_trace: b.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::StepperConfig;
    use crate::noise::{make_constant_transport, sample_path, TransportSpec};
    use crate::spectral::{random_solenoidal_field, GridSpec};
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn setup(beta: f64) -> (Stepper, CutoffConfig, NoisePath) {
        let g = GridSpec::new(8).unwrap();
        let t = if beta == 0.0 {
            TransportSpec::none()
        } else {
            make_constant_transport([0.0, 0.0, beta])
        };
        let cfg = StepperConfig::new(0.01, Mode::Truncated, g, t, 0.5).unwrap();
        (
            Stepper::new(cfg),
            CutoffConfig::new(0.2).unwrap(),
            sample_path(3, 1, 0.5, 0.01).unwrap(),
        )
    }

    fn small_data(g: GridSpec, seed: u64, size: f64, st: &Stepper) -> SpectralVectorField {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let u = random_solenoidal_field(g, 2.0, &mut rng);
        u.scaled(size / st.h12_sq(&u).sqrt())
    }

    #[test]
    fn zero_inputs_give_zero() {
        let (st, cut, noise) = setup(0.05);
        let g = st.cfg.grid;
        let z = vec![SpectralVectorField::zeros(g); noise.steps() + 1];
        let u = inner_iteration(&z, &z, &SpectralVectorField::zeros(g), &noise, &st, &cut).unwrap();
        assert!(u.iter().all(|f| f.is_zero()));
        let sol = outer_fixed_point(
            &SpectralVectorField::zeros(g),
            &noise,
            &st,
            &cut,
            &PicardConfig::default(),
            InitialIterate::Zero,
        )
        .unwrap();
        assert_eq!(sol.trace.iterations(), 1);
        assert!(sol.trajectory.iter().all(|f| f.is_zero()));
    }

    #[test]
    fn frozen_zero_inputs_give_heat_flow() {
        let (st, cut, noise) = setup(0.05);
        let g = st.cfg.grid;
        let z = vec![SpectralVectorField::zeros(g); noise.steps() + 1];
        let u0 = SpectralVectorField::shear(g, 1, Complex64::new(0.01, 0.0)).unwrap();
        let u = inner_iteration(&z, &z, &u0, &noise, &st, &cut).unwrap();
        assert_eq!(u, heat_flow(&u0, &st, noise.steps()));
    }

    #[test]
    fn inner_without_noise_takes_two_iterations() {
        let (st, cut, noise) = setup(0.0);
        let u0 = small_data(st.cfg.grid, 5, 0.02, &st);
        let v = heat_flow(&u0, &st, noise.steps());
        let (_, trace) = inner_fixed_point(&v, &u0, &noise, &st, &cut, &PicardConfig::default()).unwrap();
        assert_eq!(trace.iterations(), 2);
        assert_eq!(trace.iterates[1].d, 0.0);
    }

    #[test]
    fn outer_limit_matches_direct_stepper() {
        let (st, cut, noise) = setup(0.05);
        let u0 = small_data(st.cfg.grid, 9, 0.02, &st);
        let pc = PicardConfig { max_iter: 50, tol: 1e-20 };
        let rep = pathwise_uniqueness_check(&u0, &noise, &st, &cut, &pc).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.zero_trace.converged && rep.heat_trace.converged);
    }

    #[test]
    fn non_convergence_carries_trace() {
        let (st, cut, noise) = setup(0.05);
        let u0 = small_data(st.cfg.grid, 2, 0.02, &st);
        let pc = PicardConfig { max_iter: 2, tol: 0.0 };
        match outer_fixed_point(&u0, &noise, &st, &cut, &pc, InitialIterate::Zero) {
            Err(PicardError::NotConverged { trace }) => assert!(!trace.iterates.is_empty()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn length_mismatch_rejected() {
        let (st, cut, noise) = setup(0.05);
        let g = st.cfg.grid;
        let short = vec![SpectralVectorField::zeros(g); 3];
        assert!(matches!(
            inner_iteration(&short, &short, &SpectralVectorField::zeros(g), &noise, &st, &cut),
            Err(PicardError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn trace_csv_layout() {
        let mut t = PicardTrace::default();
        t.push(1.0, 1.0);
        t.push(1.0, 0.25);
        let csv = t.to_csv("# x\n");
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[1], "m,K_m,D_m,ratio");
        assert!(lines[2].ends_with(','));
        assert!(lines[3].ends_with("2.5000000000000000e-1"));
    }
}
