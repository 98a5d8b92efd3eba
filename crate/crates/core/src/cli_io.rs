//! Subcommand dispatch and output files. Every file starts with a
//! `# schema_version=… config_hash=…` line (JSON files carry the same two
//! fields as keys), floats in CSVs use `{:.16e}`, and nothing depends on the
//! thread count, so repeated runs are byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::config::RunConfig;
use crate::dynamics::{run_path, DynamicsError, Mode, PathStatus, Stepper};
use crate::ensemble::{
    aggregate, check_markov_bound, paths_csv, run_paths, shear_strong_convergence, with_threads,
    EnsembleError, SCHEMA_VERSION,
};
use crate::initial_data::{initial_data, DataError};
use crate::noise::{aligned_probe, estimate_epsilon_b, sample_path, NoiseError, NoisePath};
use crate::picard::{
    heat_flow, inner_fixed_point, outer_fixed_point, pathwise_uniqueness_check, InitialIterate,
    PicardConfig, PicardError, UNIQUENESS_TOL,
};
use crate::spectral::{
    brute_force_convolution, leray_project, pseudospectral_product, random_field, random_solenoidal_field,
    single_shell_field, sobolev_norm, transport_term, GridSpec, SpectralError, SpectralVectorField,
    TransportField,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Run,
    Ensemble,
    Picard,
    Verify,
    Oracle,
}

#[derive(Debug, Error)]
pub enum AppError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Picard(#[from] PicardError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

/// One named pass/fail check of a subcommand.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            pass,
            detail,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    /// Human-readable report for stdout.
    pub summary: String,
    pub checks: Vec<CheckResult>,
}

impl Outcome {
    pub fn failed(&self) -> bool {
        self.checks.iter().any(|c| !c.pass)
    }

    /// `FAIL name: detail` for every failed check.
    pub fn failure_lines(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter(|c| !c.pass)
            .map(|c| format!("FAIL {}: {}", c.name, c.detail))
            .collect()
    }
}

/// Comment line opening every CSV.
pub fn header(cfg: &RunConfig) -> String {
    format!("# schema_version={SCHEMA_VERSION} config_hash={}\n", cfg.hash())
}

fn e16(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt16(x: Option<f64>) -> String {
    x.map_or(String::new(), e16)
}

fn write(out: &Path, name: &str, contents: &str, files: &mut Vec<PathBuf>) -> Result<(), AppError> {
    let path = out.join(name);
    fs::write(&path, contents).map_err(|source| AppError::Io {
        path: path.clone(),
        source,
    })?;
    files.push(path);
    Ok(())
}

fn json_doc(cfg: &RunConfig, body: serde_json::Value) -> Result<String, AppError> {
    let mut doc = json!({
        "schema_version": SCHEMA_VERSION,
        "config_hash": cfg.hash(),
        "config": cfg,
    });
    if let (Some(d), serde_json::Value::Object(b)) = (doc.as_object_mut(), body) {
        d.extend(b);
    }
    Ok(serde_json::to_string_pretty(&doc)? + "\n")
}

/// Runs `cmd` and writes its files into `out` (created if missing).
pub fn dispatch(cmd: Command, cfg: &RunConfig, out: &Path, threads: usize) -> Result<Outcome, AppError> {
    fs::create_dir_all(out).map_err(|source| AppError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    match cmd {
        Command::Run => run_cmd(cfg, out),
        Command::Ensemble => ensemble_cmd(cfg, out, threads),
        Command::Picard => picard_cmd(cfg, out),
        Command::Verify => verify_cmd(cfg, out, threads),
        Command::Oracle => oracle_cmd(cfg, out, threads),
    }
}

fn run_cmd(cfg: &RunConfig, out: &Path) -> Result<Outcome, AppError> {
    let stepper = Stepper::new(cfg.stepper_config(Mode::Truncated));
    let u0 = initial_data(cfg.grid(), cfg.family, cfg.eps0, cfg.base_seed, 0)?;
    let noise = sample_path(cfg.base_seed, 0, cfg.t, cfg.dt)?;
    let traj = run_path(&u0, &stepper, &cfg.cutoff(), &noise, false)?;
    let mut csv = header(cfg);
    csv.push_str("step,t,H12_norm,dissipation_integral,Q,psi,stopped\n");
    for r in &traj.records {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.step,
            e16(r.t),
            e16(r.h12_norm),
            e16(r.dissipation_integral),
            e16(r.q),
            e16(r.psi),
            u8::from(r.stopped)
        );
    }
    let mut files = Vec::new();
    write(out, "trajectory.csv", &csv, &mut files)?;
    let last = traj.records.last().expect("at least the initial record");
    let summary = format!(
        "path 0: {} steps, final Q {:.6e}, stopped {}{}\n",
        last.step,
        last.q,
        traj.stopped(),
        traj.tau.map_or(String::new(), |t| format!(" at t = {t}"))
    );
    let checks = vec![CheckResult::new(
        "finite_path",
        traj.status != PathStatus::Diverged,
        format!("status {:?} after {} steps", traj.status, last.step),
    )];
    Ok(Outcome { files, summary, checks })
}

fn ensemble_cmd(cfg: &RunConfig, out: &Path, threads: usize) -> Result<Outcome, AppError> {
    let ec = cfg.ensemble();
    let summaries = run_paths(&ec, threads, false)?;
    let report = aggregate(&ec, &summaries);
    let markov = check_markov_bound(&report, &ec);
    let mut files = Vec::new();
    let doc = json_doc(cfg, json!({ "report": &report, "markov": &markov }))?;
    write(out, "ensemble_report.json", &doc, &mut files)?;
    write(out, "paths.csv", &paths_csv(&summaries, &header(cfg)), &mut files)?;

    let ito = &report.martingale_residual;
    let checks = vec![
        CheckResult::new("no_divergence", report.diverged == 0, format!("{} diverged paths", report.diverged)),
        CheckResult::new(
            "stopped_path_bound",
            report.pre_flag_violations + report.psi_violations == 0,
            format!(
                "pre-flag violations {}, psi violations {}",
                report.pre_flag_violations, report.psi_violations
            ),
        ),
        CheckResult::new(
            "ito_identity",
            ito.within_3se,
            format!("residual - bias {:.3e} +- {:.3e}", ito.deviation.mean, ito.deviation.se),
        ),
        CheckResult::new(
            "interpolation_chain",
            report.interpolation_chain.holds,
            format!("{:.6e} <= {:.6e}", report.interpolation_chain.lhs, report.interpolation_chain.rhs),
        ),
        CheckResult::new(
            "markov_bound",
            markov.pass,
            format!(
                "stop fraction {:.4} (half-width {:.4}), Markov bound {:.4e}, target {}",
                markov.stop_fraction, markov.half_width, markov.markov_bound, markov.p0_target
            ),
        ),
    ];
    let summary = format!(
        "{} paths ({} used), stop fraction {:.4} [{:.4}, {:.4}], E sup Q^2 {:.6e}, constant {}\n",
        report.paths,
        report.used_paths,
        report.stop_fraction.estimate,
        report.stop_fraction.lower,
        report.stop_fraction.upper,
        report.est_sup_q2.mean,
        report.empirical_constant.map_or("n/a".to_string(), |c| format!("{c:.6}")),
    );
    Ok(Outcome { files, summary, checks })
}

#[derive(Debug, Clone, Serialize)]
struct SweepEntry {
    eps_bar: f64,
    eps_b: f64,
    seed: u64,
    eps0: f64,
    converged: bool,
    outer_iterations: usize,
    measured_ratio: Option<f64>,
    r_squared: Option<f64>,
    inner_iterations: Vec<usize>,
}

fn picard_point(cfg: &RunConfig, scale: f64) -> Result<(SweepEntry, crate::picard::PicardTrace), AppError> {
    let scaled = RunConfig {
        eps_bar: cfg.eps_bar * scale,
        eps0: cfg.eps0 * scale,
        b: cfg.b.map(|x| x * scale),
        ..cfg.clone()
    };
    let stepper = Stepper::new(scaled.stepper_config(Mode::Truncated));
    let u0 = initial_data(cfg.grid(), cfg.family, scaled.eps0, cfg.base_seed, 0)?;
    let noise = sample_path(cfg.base_seed, 0, cfg.t, cfg.dt)?;
    let (trace, inner) = match outer_fixed_point(
        &u0,
        &noise,
        &stepper,
        &scaled.cutoff(),
        &cfg.picard(),
        InitialIterate::Zero,
    ) {
        Ok(sol) => (sol.trace, sol.inner_iterations),
        Err(PicardError::NotConverged { trace }) => (trace, Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let entry = SweepEntry {
        eps_bar: scaled.eps_bar,
        eps_b: scaled.transport().epsilon_b,
        seed: cfg.base_seed,
        eps0: scaled.eps0,
        converged: trace.converged,
        outer_iterations: trace.iterations(),
        measured_ratio: trace.measured_ratio(),
        r_squared: trace.log_linear_fit(1).map(|f| f.r_squared),
        inner_iterations: inner,
    };
    Ok((entry, trace))
}

fn picard_cmd(cfg: &RunConfig, out: &Path) -> Result<Outcome, AppError> {
    let (full, trace) = picard_point(cfg, 1.0)?;
    let (half, _) = picard_point(cfg, 0.5)?;
    let mut files = Vec::new();
    write(out, "picard_trace.csv", &trace.to_csv(&header(cfg)), &mut files)?;
    let entries = [&full, &half];
    let doc = json_doc(cfg, json!({ "entries": entries }))?;
    write(out, "picard_sweep.json", &doc, &mut files)?;

    let decreasing = match (full.measured_ratio, half.measured_ratio) {
        (Some(a), Some(b)) => b < a,
        // a fixed point reached before a ratio exists is contraction too
        (_, None) => half.converged,
        (None, Some(_)) => false,
    };
    let checks = vec![
        CheckResult::new(
            "outer_converged",
            full.converged && half.converged,
            format!("{} and {} outer iterations", full.outer_iterations, half.outer_iterations),
        ),
        CheckResult::new(
            "ratio_decreases_when_halved",
            decreasing,
            format!("measured ratio {:?} -> {:?}", full.measured_ratio, half.measured_ratio),
        ),
    ];
    let summary = format!(
        "outer Picard: {} iterations, measured ratio {}; halved (eps_bar, eps_b): {} iterations, ratio {}\n",
        full.outer_iterations,
        full.measured_ratio.map_or("n/a".into(), |r| format!("{r:.4e}")),
        half.outer_iterations,
        half.measured_ratio.map_or("n/a".into(), |r| format!("{r:.4e}")),
    );
    Ok(Outcome { files, summary, checks })
}

fn oracle_cmd(cfg: &RunConfig, out: &Path, threads: usize) -> Result<Outcome, AppError> {
    let beta = cfg.transport().epsilon_b;
    if beta == 0.0 || cfg.eps0 == 0.0 {
        return Err(AppError::Unsupported(
            "the shear oracle needs nonzero b and eps0".to_string(),
        ));
    }
    let study = shear_strong_convergence(cfg.grid(), beta, cfg.eps0, 1.0, &[6, 7, 8, 9, 10], cfg.m, cfg.base_seed, threads)?;
    let mut csv = header(cfg);
    let _ = writeln!(csv, "# beta={} horizon=1 paths={} fitted_order={}", e16(beta), study.paths, e16(study.fitted_order));
    csv.push_str("dt,rms_error,observed_order\n");
    for r in &study.rows {
        let _ = writeln!(csv, "{},{},{}", e16(r.dt), e16(r.rms_error), opt16(r.observed_order));
    }
    let mut files = Vec::new();
    write(out, "oracle.csv", &csv, &mut files)?;
    let checks = vec![CheckResult::new(
        "strong_order",
        study.fitted_order >= 0.45,
        format!("fitted order {:.4} over dt = 2^-6 .. 2^-10", study.fitted_order),
    )];
    Ok(Outcome {
        files,
        summary: format!("shear oracle, |b| = {beta}: fitted strong order {:.4}\n", study.fitted_order),
        checks,
    })
}

fn verify_cmd(cfg: &RunConfig, out: &Path, threads: usize) -> Result<Outcome, AppError> {
    let checks = verify_suite(cfg, threads)?;
    let mut csv = header(cfg);
    csv.push_str("check,pass,detail\n");
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut summary = String::new();
    for c in &checks {
        let _ = writeln!(csv, "{},{},\"{}\"", c.name, u8::from(c.pass), c.detail.replace('"', "'"));
        let _ = writeln!(
            summary,
            "{:<width$}  {}  {}",
            c.name,
            if c.pass { "PASS" } else { "FAIL" },
            c.detail
        );
    }
    let mut files = Vec::new();
    write(out, "verify.csv", &csv, &mut files)?;
    Ok(Outcome { files, summary, checks })
}

fn rng(cfg: &RunConfig, key: u64) -> ChaCha20Rng {
    let mut r = ChaCha20Rng::seed_from_u64(cfg.base_seed);
    r.set_stream(key);
    r
}

/// Reduced versions of the acceptance checks at the configured parameters.
pub fn verify_suite(cfg: &RunConfig, threads: usize) -> Result<Vec<CheckResult>, AppError> {
    let grid = cfg.grid();
    let small = GridSpec::new(8).expect("valid");
    let cut = cfg.cutoff();
    let mut checks = Vec::new();

    // Leray projection
    let mut r = rng(cfg, 1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let u = random_field(grid, 1.0, &mut r);
        let p = leray_project(&u);
        let idem = leray_project(&p).sub(&p)?.energy().sqrt() / p.energy().sqrt();
        let phi: Vec<Complex64> = (0..grid.len())
            .map(|_| Complex64::new(r.random::<f64>() - 0.5, r.random::<f64>() - 0.5))
            .collect();
        let grad = SpectralVectorField::gradient_of(grid, &phi)?;
        let annih = leray_project(&grad).energy().sqrt() / grad.energy().sqrt();
        worst = worst.max(idem).max(annih);
        if !p.is_divergence_free(1e-12) {
            worst = f64::INFINITY;
        }
    }
    checks.push(CheckResult::new(
        "spectral_identities",
        worst <= 1e-12,
        format!("100 fields at N={}, worst relative defect {worst:.2e}", cfg.n),
    ));

    // dealiased product against the direct convolution
    let mut r = rng(cfg, 2);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let u = random_solenoidal_field(small, 1.0, &mut r);
        let v = random_solenoidal_field(small, 1.0, &mut r);
        let fast = pseudospectral_product(&u, &v)?;
        let exact = brute_force_convolution(&u, &v)?;
        worst = worst.max(fast.relative_difference(&exact));
    }
    checks.push(CheckResult::new(
        "nonlinear_oracle",
        worst <= 1e-10,
        format!("10 pairs at N=8, worst relative error {worst:.2e}"),
    ));

    // interpolation inequality and its equality case
    let mut r = rng(cfg, 3);
    let mut violations = 0;
    for _ in 0..1000 {
        let u = random_field(small, 3.0 * r.random::<f64>(), &mut r);
        if sobolev_norm(&u, 1.0).powi(2) > sobolev_norm(&u, 0.5) * sobolev_norm(&u, 1.5) * (1.0 + 1e-12) {
            violations += 1;
        }
    }
    let u = single_shell_field(small, 2, &mut r);
    let eq = (sobolev_norm(&u, 1.0).powi(2) / (sobolev_norm(&u, 0.5) * sobolev_norm(&u, 1.5)) - 1.0).abs();
    checks.push(CheckResult::new(
        "interpolation",
        violations == 0 && eq <= 1e-12,
        format!("1000 fields, violations {violations}, shell equality defect {eq:.2e}"),
    ));

    // transport bound with the configured b
    let spec = cfg.transport();
    let field = TransportField::Constant(cfg.b);
    let mut r = rng(cfg, 4);
    let mut violations = 0;
    for _ in 0..1000 {
        let u = random_solenoidal_field(small, 3.0 * r.random::<f64>(), &mut r);
        let g = transport_term(&field, &u)?;
        for s in [0.0, 0.5] {
            if sobolev_norm(&g, s) > spec.epsilon_b * sobolev_norm(&u, s + 1.0) * (1.0 + 1e-12) + 1e-300 {
                violations += 1;
            }
        }
    }
    let probes: Vec<SpectralVectorField> = (1..=grid.dealias_cut() as i64)
        .map(|m| aligned_probe(grid, m))
        .collect::<Result<_, _>>()?;
    let est = estimate_epsilon_b(&spec, &probes)?;
    let sharp = spec.is_zero() || (est >= 0.95 * spec.epsilon_b && est <= spec.epsilon_b);
    checks.push(CheckResult::new(
        "transport_bound",
        violations == 0 && sharp,
        format!("1000 fields, violations {violations}, probe estimate {est:.6} vs eps_b {:.6}", spec.epsilon_b),
    ));

    // heat decay of the |k| = 1 shear without noise
    let stepper = Stepper::new(cfg.stepper_config(Mode::Truncated));
    let a = Complex64::new(0.01, 0.0);
    let shear = SpectralVectorField::shear(grid, 1, a)?;
    let quiet = crate::dynamics::StepperConfig {
        transport: crate::noise::TransportSpec::none(),
        ..stepper.cfg.clone()
    };
    let traj = run_path(&shear, &Stepper::new(quiet), &cut, &NoisePath::zero(cfg.t, cfg.dt)?, true)?;
    let end = traj.final_field().expect("fields kept").mode([0, 0, 1]).expect("retained")[0];
    let expect = a * (-cfg.t).exp();
    let rel = (end - expect).norm() / expect.norm();
    checks.push(CheckResult::new(
        "deterministic_decay",
        rel <= 1e-12,
        format!("T = {}, endpoint relative error {rel:.2e}", cfg.t),
    ));

    // raw and truncated steppers agree below the cutoff
    let raw = Stepper::new(stepper.cfg.with_mode(Mode::Raw));
    let mut mismatches = 0;
    for s in 0..10u64 {
        let u0 = initial_data(grid, cfg.family, cfg.eps0, cfg.base_seed, s)?;
        let noise = sample_path(cfg.base_seed, s, cfg.t, cfg.dt)?;
        let a = run_path(&u0, &raw, &cut, &noise, true)?;
        let b = run_path(&u0, &stepper, &cut, &noise, true)?;
        for n in 0..b.records.len().min(a.records.len()) {
            if b.records[n].argument > 2.0 {
                break;
            }
            if a.fields[n] != b.fields[n] || a.records[n] != b.records[n] {
                mismatches += 1;
            }
        }
    }
    checks.push(CheckResult::new(
        "truncation_consistency",
        mismatches == 0,
        format!("10 paths, mismatched steps {mismatches}"),
    ));

    // ensemble bounds on a reduced path count
    let ec = crate::ensemble::EnsembleConfig {
        paths: cfg.m.min(50),
        ..cfg.ensemble()
    };
    let summaries = run_paths(&ec, threads, false)?;
    let report = aggregate(&ec, &summaries);
    checks.push(CheckResult::new(
        "stopped_path_bound",
        report.pre_flag_violations + report.psi_violations == 0 && report.diverged == 0,
        format!(
            "{} paths, {} stopped, violations {}, diverged {}",
            ec.paths,
            report.stop_fraction.successes,
            report.pre_flag_violations + report.psi_violations,
            report.diverged
        ),
    ));
    checks.push(CheckResult::new(
        "ito_identity",
        report.martingale_residual.within_3se,
        format!(
            "residual - bias {:.3e} +- {:.3e}",
            report.martingale_residual.deviation.mean, report.martingale_residual.deviation.se
        ),
    ));

    // Picard: without noise the inner scheme is exact after one correction
    let steps = stepper.cfg.dt.recip().round().max(1.0) as usize;
    let steps = steps.min(crate::noise::step_count(cfg.t, cfg.dt)?);
    let horizon = steps as f64 * cfg.dt;
    let u0 = initial_data(grid, cfg.family, cfg.eps0, cfg.base_seed, 0)?;
    let noise = sample_path(cfg.base_seed, 0, horizon, cfg.dt)?;
    let v = heat_flow(&u0, &stepper, steps);
    let quiet = Stepper::new(crate::dynamics::StepperConfig {
        transport: crate::noise::TransportSpec::none(),
        ..stepper.cfg.clone()
    });
    let (_, trace) = inner_fixed_point(&v, &u0, &noise, &quiet, &cut, &PicardConfig::default())?;
    checks.push(CheckResult::new(
        "picard_noiseless_inner",
        trace.iterations() == 2,
        format!("{} inner iterations with b = 0", trace.iterations()),
    ));

    // Picard limits from two starts against the direct stepper
    let tight = PicardConfig {
        max_iter: cfg.max_iter,
        tol: 1e-20,
    };
    let rep = with_threads(threads, || pathwise_uniqueness_check(&u0, &noise, &stepper, &cut, &tight))??;
    let worst = rep.picard_vs_picard.max(rep.zero_vs_direct).max(rep.heat_vs_direct);
    checks.push(CheckResult::new(
        "scheme_cross_validation",
        rep.pass && worst <= UNIQUENESS_TOL,
        format!("T = {horizon}, worst sup-H^1/2 distance {worst:.2e}"),
    ));

    Ok(checks)
}
