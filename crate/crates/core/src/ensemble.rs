//! Monte Carlo estimates over independent truncated paths: energy
//! functionals, stopping fractions, the discrete Itô energy balance and the
//! checks built on them.
//!
//! Paths are independent work items; summaries are collected in substream
//! order and reduced sequentially, so reports do not depend on scheduling.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{
    run_path_with, CutoffConfig, DynamicsError, Mode, PathStatus, Stepper, StepperConfig,
};
use crate::initial_data::{initial_data, DataError, DataFamily};
use crate::noise::{sample_path, step_count, NoiseError, TransportSpec};
use crate::spectral::{GridSpec, SpectralVectorField};
use crate::stats::{fit_with_errors, linear_fit, mean_se, wilson, MeanEstimate, Proportion};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("invalid ensemble configuration: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("sweep needs at least {needed} points, got {found}")]
    InsufficientSweep { needed: usize, found: usize },
    #[error("short horizon {delta} is below the time step {dt}")]
    DeltaBelowStep { delta: f64, dt: f64 },
    #[error("initial sample {substream} has H^1/2 norm {norm} above eps0 = {eps0}")]
    DataTooLarge { substream: u64, norm: f64, eps0: f64 },
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub paths: usize,
    pub horizon: f64,
    pub dt: f64,
    pub grid: GridSpec,
    pub eps_bar: f64,
    pub eps0: f64,
    pub transport: TransportSpec,
    pub p0_target: f64,
    pub base_seed: u64,
    pub family: DataFamily,
    /// Short horizon of the small-time check.
    pub delta: f64,
    pub c_stab: f64,
}

impl EnsembleConfig {
    /// All violated constraints, each with its reason.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.paths < 2 {
            v.push(format!("paths = {} must be at least 2 for standard errors", self.paths));
        }
        if !(self.eps_bar > 0.0 && self.eps_bar < 1.0) {
            v.push(format!("eps_bar = {} must lie in (0, 1)", self.eps_bar));
        }
        if !(self.eps0 >= 0.0 && self.eps0.is_finite()) {
            v.push(format!("eps0 = {} must be nonnegative", self.eps0));
        } else if self.eps0 * self.eps0 >= 0.5 * self.eps_bar * self.eps_bar {
            v.push(format!(
                "eps0^2 = {} must be < eps_bar^2/2 = {}: initial data must be small enough that \
                 Q^2 <= 2 eps0^2 leaves room below eps_bar^2 for the stopping-time estimate",
                self.eps0 * self.eps0,
                0.5 * self.eps_bar * self.eps_bar
            ));
        }
        if !(self.p0_target > 0.0 && self.p0_target < 1.0) {
            v.push(format!("p0_target = {} must lie in (0, 1)", self.p0_target));
        }
        if let Err(e) = step_count(self.horizon, self.dt) {
            v.push(format!("time grid: {e}"));
        }
        if !(self.delta > 0.0 && self.delta <= self.horizon) {
            v.push(format!("delta = {} must lie in (0, T = {}]", self.delta, self.horizon));
        } else if self.delta < self.dt {
            v.push(format!("delta = {} is below dt = {}", self.delta, self.dt));
        }
        if let Err(e) = self.stepper_config() {
            v.push(format!("time step: {e}"));
        }
        v
    }

    pub fn validate(&self) -> Result<(), EnsembleError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(EnsembleError::Invalid(v))
        }
    }

    pub fn stepper_config(&self) -> Result<StepperConfig, DynamicsError> {
        StepperConfig::new(self.dt, Mode::Truncated, self.grid, self.transport.clone(), self.c_stab)
    }

    pub fn cutoff(&self) -> Result<CutoffConfig, DynamicsError> {
        CutoffConfig::new(self.eps_bar)
    }
}

/// Statistics of one path, all accumulated online.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSummary {
    pub substream: u64,
    pub u0_h12_sq: f64,
    /// `sup_n Q(t_n)²`, including `t = 0`.
    pub sup_q2: f64,
    /// `sup_n (Q(t_n)² − ‖u₀‖²_{H^{1/2}})`.
    pub gap: f64,
    /// `∫₀ᵀ ‖u‖²_{H^1}`, exact heat-flow quadrature.
    pub dissipation_h1: f64,
    /// `∫₀ᵀ ‖u‖²_{H^{3/2}}`, same quadrature.
    pub dissipation_h32: f64,
    pub stopped: bool,
    pub tau: Option<f64>,
    pub diverged: bool,
    /// Steps before the stop flag with `Q² > ε̄²`.
    pub pre_flag_violations: usize,
    /// Steps with cutoff argument `≥ 3` but `ψ ≠ 0`.
    pub psi_violations: usize,
    pub max_argument: f64,
    pub sup_h12_sq: f64,
    /// `Σ_{n<N} ‖u_n‖_{H^{1/2}} ‖u_n‖_{H^{3/2}} dt`.
    pub int_h12_h32: f64,
    /// `Σ_{n<N} ‖u_n‖²_{H^{3/2}} dt`.
    pub int_h32_left: f64,
    /// Cumulative discrete Itô residual `Σ R_n`.
    pub ito_residual: f64,
    /// `Σ E[R_n | F_n]`, the exact one-step bias of the scheme.
    pub ito_compensator: f64,
    /// `Σ 2 dW_n ⟨G_n, Λ̄ u_n⟩`.
    pub ito_martingale: f64,
}

/// Per-mode tables for the Itô balance.
struct ItoTables {
    /// `(1+|k|²)^{1/2} |k|²`, the symbol of `⟨−Δu, Λ̄u⟩`.
    dissipation: Vec<f64>,
    /// `e^{−2|k|²dt}(1 + 2|k|²dt) − 1`.
    alpha_m1: Vec<f64>,
}

impl ItoTables {
    fn new(stepper: &Stepper) -> Self {
        let dt = stepper.dt();
        let t = &stepper.tables;
        let dissipation = t.bessel.iter().zip(&t.k_squared).map(|(w, k2)| w * k2).collect();
        let alpha_m1 = t
            .k_squared
            .iter()
            .map(|k2| {
                let x = 2.0 * k2 * dt;
                (1.0 + x) * (-x).exp_m1() + x
            })
            .collect();
        Self {
            dissipation,
            alpha_m1,
        }
    }
}

fn zero3() -> [Complex64; 3] {
    [Complex64::new(0.0, 0.0); 3]
}

fn norm3(c: &[Complex64; 3]) -> f64 {
    c.iter().map(|z| z.norm_sqr()).sum()
}

/// `(R_n, E[R_n | F_n], martingale increment)` for one step. `R_n` balances
/// `‖u‖²_{H^{1/2}}` against the dissipation `2dt⟨−Δu_{n+1}, Λ̄u_{n+1}⟩`, the
/// drift pairing, the Itô correction and the martingale term.
#[allow(clippy::too_many_arguments)]
fn ito_step(
    stepper: &Stepper,
    tables: &ItoTables,
    u_n: &SpectralVectorField,
    h12_n: f64,
    u_next: &SpectralVectorField,
    h12_next: f64,
    forcing: Option<&SpectralVectorField>,
    g: Option<&SpectralVectorField>,
    dw: f64,
) -> (f64, f64, f64) {
    let dt = stepper.dt();
    let w = &stepper.tables.bessel;
    let diss = 2.0 * dt * u_next.weighted_energy(&tables.dissipation);
    let drift = forcing.map_or(0.0, |f| 2.0 * dt * f.weighted_inner(u_n, w).expect("same grid"));
    let correction = g.map_or(0.0, |g| dt * g.weighted_energy(w));
    let mart = g.map_or(0.0, |g| 2.0 * dw * g.weighted_inner(u_n, w).expect("same grid"));
    let residual = h12_next - h12_n + diss - drift - correction - mart;

    let z = zero3();
    let mut comp = 0.0;
    for (m, u) in u_n.coeffs().iter().enumerate() {
        let f = forcing.map_or(&z, |f| &f.coeffs()[m]);
        let gm = g.map_or(&z, |g| &g.coeffs()[m]);
        let mut a = z;
        for d in 0..3 {
            a[d] = u[d] + f[d] * dt;
        }
        comp += w[m] * (tables.alpha_m1[m] * (norm3(&a) + dt * norm3(gm)) + dt * dt * norm3(f));
    }
    (residual, comp, mart)
}

/// Runs one truncated path and accumulates its summary.
pub fn simulate_path(
    cfg: &EnsembleConfig,
    stepper: &Stepper,
    cut: &CutoffConfig,
    substream: u64,
    antithetic: bool,
) -> Result<PathSummary, EnsembleError> {
    let u0 = initial_data(cfg.grid, cfg.family, cfg.eps0, cfg.base_seed, substream)?;
    let mut noise = sample_path(cfg.base_seed, substream, cfg.horizon, cfg.dt)?;
    if antithetic {
        noise = noise.antithetic();
    }
    let u0_h12_sq = stepper.h12_sq(&u0);
    if u0_h12_sq.sqrt() > cfg.eps0 * (1.0 + 1e-12) {
        return Err(EnsembleError::DataTooLarge {
            substream,
            norm: u0_h12_sq.sqrt(),
            eps0: cfg.eps0,
        });
    }
    let tables = ItoTables::new(stepper);
    let dt = stepper.dt();
    let eps_bar2 = cut.eps_bar * cut.eps_bar;
    let mut s = PathSummary {
        substream,
        u0_h12_sq,
        sup_q2: u0_h12_sq,
        gap: 0.0,
        dissipation_h1: 0.0,
        dissipation_h32: 0.0,
        stopped: false,
        tau: None,
        diverged: false,
        pre_flag_violations: 0,
        psi_violations: 0,
        max_argument: 0.0,
        sup_h12_sq: u0_h12_sq,
        int_h12_h32: 0.0,
        int_h32_left: 0.0,
        ito_residual: 0.0,
        ito_compensator: 0.0,
        ito_martingale: 0.0,
    };
    let last = run_path_with(&u0, stepper, cut, &noise, |before, terms, after, dw| {
        if after.status == PathStatus::Diverged {
            return;
        }
        // checks on the state at the start of the step
        let q2 = before.h12_sq + before.dissipation_integral;
        if !before.stopped && q2 > eps_bar2 {
            s.pre_flag_violations += 1;
        }
        let arg = crate::dynamics::cutoff_argument(before.h12_sq.sqrt(), before.dissipation_integral, cut);
        s.max_argument = s.max_argument.max(arg);
        if arg >= 3.0 && terms.psi != 0.0 {
            s.psi_violations += 1;
        }
        let h32 = stepper.h32_sq(&before.u);
        s.int_h32_left += h32 * dt;
        s.int_h12_h32 += (before.h12_sq * h32).sqrt() * dt;

        let (r, c, m) = ito_step(
            stepper,
            &tables,
            &before.u,
            before.h12_sq,
            &after.u,
            after.h12_sq,
            terms.forcing.as_ref(),
            terms.noise_coeff.as_ref(),
            dw,
        );
        s.ito_residual += r;
        s.ito_compensator += c;
        s.ito_martingale += m;

        s.dissipation_h1 += stepper.dissipation_increment_h1(&after.u);
        let q2_next = after.q_value * after.q_value;
        s.sup_q2 = s.sup_q2.max(q2_next);
        s.gap = s.gap.max(q2_next - u0_h12_sq);
        s.sup_h12_sq = s.sup_h12_sq.max(after.h12_sq);
    })?;
    s.diverged = last.status == PathStatus::Diverged;
    s.stopped = last.stopped;
    s.tau = last.tau;
    s.dissipation_h32 = last.dissipation_integral;
    // the final state is checked too
    if !s.diverged {
        let arg = crate::dynamics::cutoff_argument(last.h12_sq.sqrt(), last.dissipation_integral, cut);
        s.max_argument = s.max_argument.max(arg);
        if !last.stopped && last.h12_sq + last.dissipation_integral > eps_bar2 {
            s.pre_flag_violations += 1;
        }
    }
    Ok(s)
}

pub(crate) fn with_threads<T: Send>(threads: usize, work: impl FnOnce() -> T + Send) -> Result<T, EnsembleError> {
    if threads == 0 {
        return Ok(work());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| EnsembleError::ThreadPool(e.to_string()))?;
    Ok(pool.install(work))
}

/// Path summaries for substreams `0..M`, in substream order. `threads = 0`
/// uses the global pool.
pub fn run_paths(
    cfg: &EnsembleConfig,
    threads: usize,
    antithetic: bool,
) -> Result<Vec<PathSummary>, EnsembleError> {
    cfg.validate()?;
    let stepper = Stepper::new(cfg.stepper_config()?);
    let cut = cfg.cutoff()?;
    with_threads(threads, || {
        (0..cfg.paths as u64)
            .into_par_iter()
            .map(|s| simulate_path(cfg, &stepper, &cut, s, antithetic))
            .collect::<Result<Vec<_>, _>>()
    })?
}

#[derive(Debug, Clone, Serialize)]
pub struct ItoSummary {
    /// Mean of `Σ R_n`.
    pub residual: MeanEstimate,
    /// Mean of `Σ E[R_n | F_n]`, the bias line.
    pub compensator: MeanEstimate,
    /// Mean of `Σ (R_n − E[R_n | F_n])`, a martingale at the endpoint.
    pub deviation: MeanEstimate,
    pub within_3se: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainSummary {
    /// `mean ∫‖u‖_{H^{1/2}}‖u‖_{H^{3/2}}`.
    pub lhs: f64,
    /// `(mean sup‖u‖²_{H^{1/2}})^{1/2} (T · mean ∫‖u‖²_{H^{3/2}})^{1/2}`.
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnsembleReport {
    pub schema_version: u32,
    pub paths: usize,
    pub used_paths: usize,
    pub diverged: usize,
    pub horizon: f64,
    pub dt: f64,
    pub modes_per_axis: usize,
    pub eps_bar: f64,
    pub eps0: f64,
    pub epsilon_b: f64,
    pub base_seed: u64,
    pub family: DataFamily,
    pub mean_u0_h12_sq: f64,
    pub est_sup_q2: MeanEstimate,
    pub est_gap: MeanEstimate,
    pub est_dissipation_h1: MeanEstimate,
    pub est_dissipation_h32: MeanEstimate,
    pub stop_fraction: Proportion,
    /// `est_sup_q2 / mean ‖u₀‖²_{H^{1/2}}`; absent for zero data.
    pub empirical_constant: Option<f64>,
    /// `est_gap / (ε̄² − ε₀²)`.
    pub markov_bound: f64,
    pub martingale_residual: ItoSummary,
    pub interpolation_chain: ChainSummary,
    pub pre_flag_violations: usize,
    pub psi_violations: usize,
    pub max_argument: f64,
}

pub fn aggregate(cfg: &EnsembleConfig, summaries: &[PathSummary]) -> EnsembleReport {
    let used: Vec<&PathSummary> = summaries.iter().filter(|s| !s.diverged).collect();
    let col = |f: fn(&PathSummary) -> f64| -> Vec<f64> { used.iter().map(|s| f(s)).collect() };
    let u0 = col(|s| s.u0_h12_sq);
    let mean_u0_h12_sq = if u0.is_empty() { f64::NAN } else { u0.iter().sum::<f64>() / u0.len() as f64 };
    let est_sup_q2 = mean_se(&col(|s| s.sup_q2));
    let est_gap = mean_se(&col(|s| s.gap));
    let residual = mean_se(&col(|s| s.ito_residual));
    let compensator = mean_se(&col(|s| s.ito_compensator));
    let deviation = mean_se(&col(|s| s.ito_residual - s.ito_compensator));
    let within_3se = deviation.mean.abs() <= 3.0 * deviation.se || deviation.mean == 0.0;

    let lhs = mean_se(&col(|s| s.int_h12_h32)).mean;
    let sup = mean_se(&col(|s| s.sup_h12_sq)).mean;
    let int = mean_se(&col(|s| s.int_h32_left)).mean;
    let rhs = sup.sqrt() * (cfg.horizon * int).sqrt();
    let stops = used.iter().filter(|s| s.stopped).count();

    EnsembleReport {
        schema_version: SCHEMA_VERSION,
        paths: summaries.len(),
        used_paths: used.len(),
        diverged: summaries.len() - used.len(),
        horizon: cfg.horizon,
        dt: cfg.dt,
        modes_per_axis: cfg.grid.modes_per_axis(),
        eps_bar: cfg.eps_bar,
        eps0: cfg.eps0,
        epsilon_b: cfg.transport.epsilon_b,
        base_seed: cfg.base_seed,
        family: cfg.family,
        mean_u0_h12_sq,
        est_sup_q2,
        est_gap,
        est_dissipation_h1: mean_se(&col(|s| s.dissipation_h1)),
        est_dissipation_h32: mean_se(&col(|s| s.dissipation_h32)),
        stop_fraction: wilson(stops, used.len()),
        empirical_constant: (mean_u0_h12_sq > 0.0).then(|| est_sup_q2.mean / mean_u0_h12_sq),
        markov_bound: est_gap.mean / (cfg.eps_bar * cfg.eps_bar - cfg.eps0 * cfg.eps0),
        martingale_residual: ItoSummary {
            residual,
            compensator,
            deviation,
            within_3se,
        },
        interpolation_chain: ChainSummary {
            lhs,
            rhs,
            holds: lhs <= rhs * (1.0 + 1e-12),
        },
        pre_flag_violations: used.iter().map(|s| s.pre_flag_violations).sum(),
        psi_violations: used.iter().map(|s| s.psi_violations).sum(),
        max_argument: used.iter().map(|s| s.max_argument).fold(0.0, f64::max),
    }
}

/// `M` truncated paths aggregated into a report; the summaries are returned
/// for per-path export.
pub fn run_ensemble(
    cfg: &EnsembleConfig,
    threads: usize,
) -> Result<(EnsembleReport, Vec<PathSummary>), EnsembleError> {
    let summaries = run_paths(cfg, threads, false)?;
    Ok((aggregate(cfg, &summaries), summaries))
}

pub fn paths_csv(summaries: &[PathSummary], header: &str) -> String {
    let mut s = String::from(header);
    s.push_str(
        "substream,u0_h12_sq,sup_q2,gap,dissipation_h1,dissipation_h32,stopped,tau,diverged,\
         pre_flag_violations,psi_violations,max_argument,ito_residual,ito_compensator,ito_martingale\n",
    );
    for p in summaries {
        let tau = p.tau.map_or(String::new(), |t| format!("{t:.16e}"));
        s.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{},{},{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            p.substream,
            p.u0_h12_sq,
            p.sup_q2,
            p.gap,
            p.dissipation_h1,
            p.dissipation_h32,
            u8::from(p.stopped),
            tau,
            u8::from(p.diverged),
            p.pre_flag_violations,
            p.psi_violations,
            p.max_argument,
            p.ito_residual,
            p.ito_compensator,
            p.ito_martingale,
        ));
    }
    s
}

/// One point of an `ε_b` sweep: per-path gaps and `ε_b² ∫‖u‖²_{H^1}`.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub epsilon_b: f64,
    pub gaps: Vec<f64>,
    pub xs: Vec<f64>,
}

impl SweepPoint {
    pub fn from_summaries(epsilon_b: f64, summaries: &[PathSummary]) -> Self {
        let used = summaries.iter().filter(|s| !s.diverged);
        let (gaps, xs) = used
            .map(|s| (s.gap, epsilon_b * epsilon_b * s.dissipation_h1))
            .unzip();
        Self { epsilon_b, gaps, xs }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GapScalingCheck {
    pub epsilon_b: Vec<f64>,
    pub mean_gap: Vec<f64>,
    pub mean_x: Vec<f64>,
    /// Per-point `mean_gap / mean_x`.
    pub ratios: Vec<f64>,
    /// Fitted slope, the empirical constant.
    pub c_emp: f64,
    pub intercept: f64,
    pub intercept_se: f64,
    /// `max ratio / min ratio`.
    pub slope_spread: f64,
    pub pass: bool,
}

/// Regresses the mean gap on `ε_b² · mean ∫‖u‖²_{H^1}`. Each point's error
/// is the standard error of `gap − ĉ x` over its paths, which accounts for
/// the noise in both coordinates and their correlation.
pub fn check_gap_scaling(points: &[SweepPoint]) -> Result<GapScalingCheck, EnsembleError> {
    if points.len() < 3 {
        return Err(EnsembleError::InsufficientSweep {
            needed: 3,
            found: points.len(),
        });
    }
    let mean_gap: Vec<f64> = points.iter().map(|p| mean_se(&p.gaps).mean).collect();
    let mean_x: Vec<f64> = points.iter().map(|p| mean_se(&p.xs).mean).collect();
    let first = linear_fit(&mean_x, &mean_gap).ok_or(EnsembleError::InsufficientSweep {
        needed: 3,
        found: points.len(),
    })?;
    let point_se: Vec<f64> = points
        .iter()
        .map(|p| {
            let r: Vec<f64> = p.gaps.iter().zip(&p.xs).map(|(g, x)| g - first.slope * x).collect();
            mean_se(&r).se
        })
        .collect();
    let fit = fit_with_errors(&mean_x, &mean_gap, &point_se).expect("fit succeeded above");
    let ratios: Vec<f64> = mean_gap.iter().zip(&mean_x).map(|(g, x)| g / x).collect();
    let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let slope_spread = max / min;
    let pass = min > 0.0 && slope_spread <= 3.0 && fit.intercept.abs() <= 3.0 * fit.intercept_se;
    Ok(GapScalingCheck {
        epsilon_b: points.iter().map(|p| p.epsilon_b).collect(),
        mean_gap,
        mean_x,
        ratios,
        c_emp: fit.slope,
        intercept: fit.intercept,
        intercept_se: fit.intercept_se,
        slope_spread,
        pass,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DriftCheck {
    pub short: f64,
    pub long: f64,
    pub ratio: f64,
    pub pass: bool,
}

/// Empirical constant at `T` against `2T`; passes when it moves by less than
/// a factor 2 either way.
pub fn constant_drift(short: &EnsembleReport, long: &EnsembleReport) -> DriftCheck {
    let a = short.empirical_constant.unwrap_or(f64::NAN);
    let b = long.empirical_constant.unwrap_or(f64::NAN);
    let ratio = b / a;
    DriftCheck {
        short: a,
        long: b,
        ratio,
        pass: ratio < 2.0 && ratio > 0.5,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MarkovCheck {
    pub stop_fraction: f64,
    pub markov_bound: f64,
    pub half_width: f64,
    pub p0_target: f64,
    pub within_bound: bool,
    pub below_target: bool,
    pub pass: bool,
}

pub fn check_markov_bound(report: &EnsembleReport, cfg: &EnsembleConfig) -> MarkovCheck {
    let sf = &report.stop_fraction;
    let within_bound = sf.estimate <= report.markov_bound + 2.0 * sf.half_width();
    let below_target = sf.estimate <= cfg.p0_target;
    MarkovCheck {
        stop_fraction: sf.estimate,
        markov_bound: report.markov_bound,
        half_width: sf.half_width(),
        p0_target: cfg.p0_target,
        within_bound,
        below_target,
        pass: within_bound && below_target,
    }
}

/// Stop fraction with halved `ε₀` (same seeds) does not exceed the original
/// by more than its confidence half-width.
pub fn check_eps0_monotone(full: &EnsembleReport, halved: &EnsembleReport) -> bool {
    halved.stop_fraction.estimate <= full.stop_fraction.estimate + full.stop_fraction.half_width()
}

#[derive(Debug, Clone, Serialize)]
pub struct SmallTimeCheck {
    pub horizons: Vec<f64>,
    pub fractions: Vec<Proportion>,
    pub nonincreasing: bool,
    pub zero_at_smallest: bool,
    /// Fitted exponent of `P(τ ≤ δ) ∝ δ^p`, when all fractions are positive.
    pub exponent: Option<f64>,
    pub pass: bool,
}

/// Stop fractions `P(τ ≤ δ)` for `δ ∈ {δ₀, δ₀/2, δ₀/4}`, read off one
/// ensemble run to `δ₀` (the same paths observed at three horizons).
pub fn check_small_time(cfg: &EnsembleConfig, threads: usize) -> Result<SmallTimeCheck, EnsembleError> {
    let horizons = vec![cfg.delta, cfg.delta / 2.0, cfg.delta / 4.0];
    let smallest = horizons[2];
    if smallest < cfg.dt {
        return Err(EnsembleError::DeltaBelowStep {
            delta: smallest,
            dt: cfg.dt,
        });
    }
    let short = EnsembleConfig {
        horizon: cfg.delta,
        ..cfg.clone()
    };
    let summaries = run_paths(&short, threads, false)?;
    Ok(small_time_from(&horizons, &summaries, cfg.dt))
}

/// Builds the small-time check from path summaries.
pub fn small_time_from(horizons: &[f64], summaries: &[PathSummary], dt: f64) -> SmallTimeCheck {
    let used: Vec<&PathSummary> = summaries.iter().filter(|s| !s.diverged).collect();
    let fractions: Vec<Proportion> = horizons
        .iter()
        .map(|&h| {
            let hits = used
                .iter()
                .filter(|s| s.tau.is_some_and(|t| t <= h + 1e-9 * dt))
                .count();
            wilson(hits, used.len())
        })
        .collect();
    let nonincreasing = fractions
        .windows(2)
        .all(|w| w[1].estimate <= w[0].estimate + w[0].half_width());
    let zero_at_smallest = fractions.last().is_some_and(|p| p.successes == 0);
    let exponent = if fractions.iter().all(|p| p.estimate > 0.0) {
        let x: Vec<f64> = horizons.iter().map(|h| h.ln()).collect();
        let y: Vec<f64> = fractions.iter().map(|p| p.estimate.ln()).collect();
        linear_fit(&x, &y).map(|f| f.slope)
    } else {
        None
    };
    SmallTimeCheck {
        horizons: horizons.to_vec(),
        fractions,
        nonincreasing,
        zero_at_smallest,
        exponent,
        pass: nonincreasing,
    }
}

/// Ratio of the mean cumulative residual at `dt/2` to that at `dt`.
pub fn bias_halving_ratio(coarse: &EnsembleReport, fine: &EnsembleReport) -> f64 {
    fine.martingale_residual.residual.mean / coarse.martingale_residual.residual.mean
}

#[derive(Debug, Clone, Serialize)]
pub struct AntitheticCheck {
    /// Mean of `Σ 2dW⟨G, Λ̄u⟩` over the plain paths.
    pub plain: MeanEstimate,
    pub mirrored: MeanEstimate,
    /// Mean of the pair average, which must vanish.
    pub pair: MeanEstimate,
    /// Fraction of paths with a nonzero martingale term whose mirrored term
    /// has the opposite sign.
    pub sign_flip_fraction: f64,
    pub pass: bool,
}

/// Martingale term under `dW ↦ −dW` on the same substreams.
pub fn antithetic_martingale_check(cfg: &EnsembleConfig, threads: usize) -> Result<AntitheticCheck, EnsembleError> {
    let plain = run_paths(cfg, threads, false)?;
    let mirrored = run_paths(cfg, threads, true)?;
    let pairs: Vec<(f64, f64)> = plain
        .iter()
        .zip(&mirrored)
        .filter(|(a, b)| !a.diverged && !b.diverged)
        .map(|(a, b)| (a.ito_martingale, b.ito_martingale))
        .collect();
    let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let avg: Vec<f64> = pairs.iter().map(|p| 0.5 * (p.0 + p.1)).collect();
    let nonzero: Vec<&(f64, f64)> = pairs.iter().filter(|p| p.0 != 0.0).collect();
    let flips = nonzero.iter().filter(|p| p.0 * p.1 < 0.0).count();
    let sign_flip_fraction = if nonzero.is_empty() { 1.0 } else { flips as f64 / nonzero.len() as f64 };
    let pair = mean_se(&avg);
    let pass = sign_flip_fraction >= 0.9 && (pair.mean.abs() <= 3.0 * pair.se || pair.mean == 0.0);
    Ok(AntitheticCheck {
        plain: mean_se(&a),
        mirrored: mean_se(&b),
        pair,
        sign_flip_fraction,
        pass,
    })
}

/// One level of the shear strong-convergence study.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub dt: f64,
    /// `(mean ‖u_N − u(T)‖²_{L²})^{1/2}` over the paths.
    pub rms_error: f64,
    /// Order measured against the next coarser level.
    pub observed_order: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceStudy {
    pub beta: f64,
    pub horizon: f64,
    pub paths: usize,
    pub rows: Vec<ConvergenceRow>,
    /// Slope of `ln rms` against `ln dt` over all levels.
    pub fitted_order: f64,
}

/// Strong error of the stepper on shear data `(cos x₃, 0, 0)` advected by
/// `b = (0,0,β)`, against the closed-form solution driven by the same
/// Brownian path. Levels are `dt = 2^{-e}` for `e` in `exponents`; coarse
/// paths are sums of the finest increments.
#[allow(clippy::too_many_arguments)]
pub fn shear_strong_convergence(
    grid: GridSpec,
    beta: f64,
    eps0: f64,
    horizon: f64,
    exponents: &[u32],
    paths: usize,
    base_seed: u64,
    threads: usize,
) -> Result<ConvergenceStudy, EnsembleError> {
    use crate::dynamics::{exact_shear_solution, run_path_with};
    let finest = *exponents.iter().max().ok_or(EnsembleError::InsufficientSweep { needed: 2, found: 0 })?;
    if exponents.len() < 2 {
        return Err(EnsembleError::InsufficientSweep {
            needed: 2,
            found: exponents.len(),
        });
    }
    let dt_min = 0.5f64.powi(finest as i32);
    let transport = crate::noise::make_constant_transport([0.0, 0.0, beta]);
    let steppers: Vec<Stepper> = exponents
        .iter()
        .map(|&e| {
            let dt = 0.5f64.powi(e as i32);
            StepperConfig::new(dt, Mode::Raw, grid, transport.clone(), crate::dynamics::DEFAULT_C_STAB)
                .map(Stepper::new)
        })
        .collect::<Result<_, _>>()?;
    let cut = CutoffConfig::new(0.5)?;
    let u0 = initial_data(grid, DataFamily::Shear, eps0, base_seed, 0)?;
    let a = u0.mode([0, 0, 1]).expect("|k| = 1 is retained")[0];

    let errors: Vec<Vec<f64>> = with_threads(threads, || {
        (0..paths as u64)
            .into_par_iter()
            .map(|p| -> Result<Vec<f64>, EnsembleError> {
                let fine = sample_path(base_seed, p, horizon, dt_min)?;
                let w_t: f64 = fine.increments.iter().sum();
                let exact_amp = exact_shear_solution(a, 1, beta, horizon, w_t);
                let exact = SpectralVectorField::shear(grid, 1, exact_amp).expect("retained");
                exponents
                    .iter()
                    .zip(&steppers)
                    .map(|(&e, st)| {
                        let noise = fine.coarsen(1usize << (finest - e))?;
                        let last = run_path_with(&u0, st, &cut, &noise, |_, _, _, _| {})?;
                        Ok(last.u.sub(&exact).expect("same grid").energy())
                    })
                    .collect()
            })
            .collect::<Result<Vec<_>, _>>()
    })??;

    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(exponents.len());
    for (i, &e) in exponents.iter().enumerate() {
        let ms = errors.iter().map(|v| v[i]).sum::<f64>() / paths as f64;
        let rms = ms.sqrt();
        let dt = 0.5f64.powi(e as i32);
        let observed_order = rows
            .last()
            .map(|prev: &ConvergenceRow| (prev.rms_error / rms).ln() / (prev.dt / dt).ln());
        rows.push(ConvergenceRow {
            dt,
            rms_error: rms,
            observed_order,
        });
    }
    let x: Vec<f64> = rows.iter().map(|r| r.dt.ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.rms_error.ln()).collect();
    let fitted_order = linear_fit(&x, &y).map_or(f64::NAN, |f| f.slope);
    Ok(ConvergenceStudy {
        beta,
        horizon,
        paths,
        rows,
        fitted_order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::make_constant_transport;

    pub(crate) fn small_cfg() -> EnsembleConfig {
        EnsembleConfig {
            paths: 8,
            horizon: 0.5,
            dt: 0.01,
            grid: GridSpec::new(8).unwrap(),
            eps_bar: 0.2,
            eps0: 0.02,
            transport: make_constant_transport([0.0, 0.0, 0.05]),
            p0_target: 0.05,
            base_seed: 3,
            family: DataFamily::Mixed,
            delta: 0.25,
            c_stab: 0.5,
        }
    }

    #[test]
    fn zero_data_report() {
        let cfg = EnsembleConfig {
            eps0: 0.0,
            ..small_cfg()
        };
        let (rep, paths) = run_ensemble(&cfg, 1).unwrap();
        assert_eq!(rep.est_sup_q2.mean, 0.0);
        assert_eq!(rep.stop_fraction.estimate, 0.0);
        assert_eq!(rep.empirical_constant, None);
        assert!(paths.iter().all(|p| p.ito_residual == 0.0 && p.gap == 0.0));
    }

    #[test]
    fn violations_are_collected() {
        let cfg = EnsembleConfig {
            paths: 1,
            eps0: 0.2,
            dt: 0.3,
            ..small_cfg()
        };
        let v = cfg.violations();
        assert!(v.len() >= 3, "{v:?}");
        assert!(v.iter().any(|s| s.contains("eps_bar^2/2")));
    }

    #[test]
    fn thread_count_does_not_change_summaries() {
        let cfg = small_cfg();
        let a = run_paths(&cfg, 1, false).unwrap();
        let b = run_paths(&cfg, 3, false).unwrap();
        assert_eq!(a, b);
        let ra = serde_json::to_string(&aggregate(&cfg, &a)).unwrap();
        let rb = serde_json::to_string(&aggregate(&cfg, &b)).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn no_noise_keeps_gap_at_zero() {
        let cfg = EnsembleConfig {
            transport: TransportSpec::none(),
            eps0: 0.1,
            ..small_cfg()
        };
        let (rep, _) = run_ensemble(&cfg, 1).unwrap();
        assert_eq!(rep.stop_fraction.successes, 0);
        // Q² is nonincreasing without noise, up to rounding
        assert!(rep.est_gap.mean <= 1e-15 * cfg.eps0 * cfg.eps0, "{}", rep.est_gap.mean);
    }

    #[test]
    fn chain_and_shadow_checks_hold() {
        let (rep, _) = run_ensemble(&small_cfg(), 1).unwrap();
        assert!(rep.interpolation_chain.holds);
        assert_eq!(rep.pre_flag_violations, 0);
        assert_eq!(rep.psi_violations, 0);
    }

    #[test]
    fn gap_scaling_needs_three_points() {
        let p = SweepPoint {
            epsilon_b: 0.1,
            gaps: vec![1.0, 2.0],
            xs: vec![1.0, 2.0],
        };
        assert!(matches!(
            check_gap_scaling(&[p.clone(), p]),
            Err(EnsembleError::InsufficientSweep { .. })
        ));
    }

    #[test]
    fn small_time_rejects_delta_below_dt() {
        let cfg = EnsembleConfig {
            delta: 0.02,
            ..small_cfg()
        };
        assert!(matches!(
            check_small_time(&cfg, 1),
            Err(EnsembleError::DeltaBelowStep { .. })
        ));
    }

    #[test]
    fn small_time_counts_hits_by_horizon() {
        let mk = |tau: Option<f64>| PathSummary {
            substream: 0,
            u0_h12_sq: 0.0,
            sup_q2: 0.0,
            gap: 0.0,
            dissipation_h1: 0.0,
            dissipation_h32: 0.0,
            stopped: tau.is_some(),
            tau,
            diverged: false,
            pre_flag_violations: 0,
            psi_violations: 0,
            max_argument: 0.0,
            sup_h12_sq: 0.0,
            int_h12_h32: 0.0,
            int_h32_left: 0.0,
            ito_residual: 0.0,
            ito_compensator: 0.0,
            ito_martingale: 0.0,
        };
        let s = vec![mk(Some(0.2)), mk(Some(0.1)), mk(Some(0.05)), mk(None)];
        let c = small_time_from(&[0.2, 0.1, 0.05], &s, 0.01);
        let hits: Vec<usize> = c.fractions.iter().map(|p| p.successes).collect();
        assert_eq!(hits, vec![3, 2, 1]);
        assert!(c.nonincreasing && !c.zero_at_smallest);
        assert!(c.exponent.is_some());
    }
}
