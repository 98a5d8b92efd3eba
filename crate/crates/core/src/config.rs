//! Run configuration: TOML text, validated up front with every violation
//! reported, plus a canonical form whose SHA-256 tags all outputs.

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;
use toml::{Table, Value};

use crate::dynamics::{stability_cap, CutoffConfig, Mode, StepperConfig, Theta, DEFAULT_C_STAB};
use crate::ensemble::EnsembleConfig;
use crate::initial_data::DataFamily;
use crate::noise::{make_constant_transport, step_count, TransportSpec};
use crate::picard::PicardConfig;
use crate::spectral::GridSpec;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("malformed config: {0}")]
    Syntax(String),
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub n: usize,
    pub t: f64,
    pub dt: f64,
    pub delta: f64,
    pub c_stab: f64,
    pub eps_bar: f64,
    pub theta: Theta,
    pub b: [f64; 3],
    pub base_seed: u64,
    pub eps0: f64,
    pub family: DataFamily,
    pub m: usize,
    pub p0_target: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 16,
            t: 5.0,
            dt: 0.01,
            delta: 0.25,
            c_stab: DEFAULT_C_STAB,
            eps_bar: 0.2,
            theta: Theta::Quintic,
            b: [0.0, 0.0, 0.05],
            base_seed: 0,
            eps0: 0.02,
            family: DataFamily::Mixed,
            m: 200,
            p0_target: 0.05,
            max_iter: crate::picard::DEFAULT_MAX_ITER,
            tol: crate::picard::DEFAULT_TOL,
        }
    }
}

const SCHEMA: &[(&str, &[&str])] = &[
    ("grid", &["n"]),
    ("time", &["t", "dt", "delta", "c_stab"]),
    ("cutoff", &["eps_bar", "theta"]),
    ("noise", &["b", "base_seed"]),
    ("data", &["eps0", "family"]),
    ("ensemble", &["m", "p0_target"]),
    ("picard", &["max_iter", "tol"]),
];

struct Reader<'a> {
    doc: &'a Table,
    errors: Vec<String>,
}

impl Reader<'_> {
    fn get(&self, section: &str, key: &str) -> Option<&Value> {
        self.doc.get(section).and_then(|s| s.as_table()).and_then(|t| t.get(key))
    }

    fn float(&mut self, section: &str, key: &str, default: f64) -> f64 {
        match self.get(section, key) {
            None => default,
            Some(Value::Float(x)) => *x,
            Some(Value::Integer(i)) => *i as f64,
            Some(v) => {
                self.errors.push(format!("[{section}] {key}: expected a number, found {}", v.type_str()));
                default
            }
        }
    }

    fn uint(&mut self, section: &str, key: &str, default: u64) -> u64 {
        match self.get(section, key) {
            None => default,
            Some(Value::Integer(i)) if *i >= 0 => *i as u64,
            Some(v) => {
                self.errors.push(format!("[{section}] {key}: expected a nonnegative integer, found {v}"));
                default
            }
        }
    }

    fn string(&mut self, section: &str, key: &str, default: &str) -> String {
        match self.get(section, key) {
            None => default.to_string(),
            Some(Value::String(s)) => s.clone(),
            Some(v) => {
                self.errors.push(format!("[{section}] {key}: expected a string, found {}", v.type_str()));
                default.to_string()
            }
        }
    }

    fn vector(&mut self, section: &str, key: &str, default: [f64; 3]) -> [f64; 3] {
        let Some(v) = self.get(section, key) else {
            return default;
        };
        let parsed: Option<Vec<f64>> = v.as_array().map(|a| {
            a.iter()
                .filter_map(|x| x.as_float().or_else(|| x.as_integer().map(|i| i as f64)))
                .collect()
        });
        match parsed {
            Some(p) if p.len() == 3 && v.as_array().is_some_and(|a| a.len() == 3) => [p[0], p[1], p[2]],
            _ => {
                self.errors.push(format!("[{section}] {key}: expected an array of 3 numbers, found {v}"));
                default
            }
        }
    }
}

fn check_unknown(doc: &Table, errors: &mut Vec<String>) {
    for (section, value) in doc {
        let Some((_, keys)) = SCHEMA.iter().find(|(s, _)| s == section) else {
            errors.push(format!("unknown section [{section}]"));
            continue;
        };
        let Some(table) = value.as_table() else {
            errors.push(format!("{section}: expected a section"));
            continue;
        };
        for key in table.keys() {
            if !keys.contains(&key.as_str()) {
                errors.push(format!("unknown key [{section}] {key}"));
            }
        }
    }
}

/// Parses and validates a config document; an empty text gives the defaults.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let doc: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
    let mut errors = Vec::new();
    check_unknown(&doc, &mut errors);
    let d = RunConfig::default();
    let mut r = Reader { doc: &doc, errors };
    let theta = r.string("cutoff", "theta", "quintic");
    let family = r.string("data", "family", d.family.name());
    let mut cfg = RunConfig {
        n: r.uint("grid", "n", d.n as u64) as usize,
        t: r.float("time", "t", d.t),
        dt: r.float("time", "dt", d.dt),
        delta: r.float("time", "delta", d.delta),
        c_stab: r.float("time", "c_stab", d.c_stab),
        eps_bar: r.float("cutoff", "eps_bar", d.eps_bar),
        theta: d.theta,
        b: r.vector("noise", "b", d.b),
        base_seed: r.uint("noise", "base_seed", d.base_seed),
        eps0: r.float("data", "eps0", d.eps0),
        family: d.family,
        m: r.uint("ensemble", "m", d.m as u64) as usize,
        p0_target: r.float("ensemble", "p0_target", d.p0_target),
        max_iter: r.uint("picard", "max_iter", d.max_iter as u64) as usize,
        tol: r.float("picard", "tol", d.tol),
    };
    let mut errors = r.errors;
    if theta != "quintic" {
        errors.push(format!("[cutoff] theta = \"{theta}\": only \"quintic\" is available"));
    } else {
        cfg.theta = Theta::Quintic;
    }
    match DataFamily::parse(&family) {
        Some(f) => cfg.family = f,
        None => errors.push(format!(
            "[data] family = \"{family}\": expected one of zero, shear, random, mixed"
        )),
    }
    errors.extend(cfg.violations());
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(errors))
    }
}

impl RunConfig {
    /// Constraint violations of an already-typed config.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let grid = GridSpec::new(self.n);
        if grid.is_err() {
            v.push(format!("[grid] n = {}: must be even and at least 4", self.n));
        }
        let pos = |x: f64| x > 0.0 && x.is_finite();
        if !pos(self.t) {
            v.push(format!("[time] t = {}: must be positive", self.t));
        }
        if !pos(self.dt) {
            v.push(format!("[time] dt = {}: must be positive", self.dt));
        }
        if pos(self.t) && pos(self.dt) {
            if let Err(e) = step_count(self.t, self.dt) {
                v.push(format!("[time] {e}"));
            }
        }
        if !(pos(self.delta) && self.delta <= self.t) {
            v.push(format!("[time] delta = {}: must lie in (0, t]", self.delta));
        } else if self.delta / 4.0 < self.dt {
            v.push(format!(
                "[time] delta = {}: the small-time check uses delta/4, which must be at least dt = {}",
                self.delta, self.dt
            ));
        }
        if !pos(self.c_stab) {
            v.push(format!("[time] c_stab = {}: must be positive", self.c_stab));
        }
        if !(self.eps_bar > 0.0 && self.eps_bar < 1.0) {
            v.push(format!("[cutoff] eps_bar = {}: must lie in (0, 1)", self.eps_bar));
        }
        if self.b.iter().any(|x| !x.is_finite()) {
            v.push("[noise] b: entries must be finite".to_string());
        }
        if !(self.eps0 >= 0.0 && self.eps0.is_finite()) {
            v.push(format!("[data] eps0 = {}: must be nonnegative", self.eps0));
        } else if self.eps0 * self.eps0 >= 0.5 * self.eps_bar * self.eps_bar {
            v.push(format!(
                "[data] eps0 = {}: violates eps0^2 < eps_bar^2/2 (the initial size must leave \
                 Q^2 <= 2 eps0^2 strictly below eps_bar^2, otherwise the stopping time can be hit \
                 without any noise)",
                self.eps0
            ));
        }
        if self.m < 2 {
            v.push(format!("[ensemble] m = {}: at least 2 paths are needed", self.m));
        }
        if !(self.p0_target > 0.0 && self.p0_target < 1.0) {
            v.push(format!("[ensemble] p0_target = {}: must lie in (0, 1)", self.p0_target));
        }
        if self.max_iter == 0 {
            v.push("[picard] max_iter: must be at least 1".to_string());
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            v.push(format!("[picard] tol = {}: must be positive", self.tol));
        }
        if let Ok(g) = grid {
            let eps_b = self.transport().epsilon_b;
            let cap = stability_cap(g, eps_b, self.c_stab);
            if pos(self.dt) && pos(self.c_stab) && self.dt > cap {
                v.push(format!(
                    "[time] dt = {}: exceeds the stability cap c_stab/(1 + eps_b^2 K_d^2) = {cap} \
                     for N = {}, eps_b = {eps_b} (explicit noise amplification per step)",
                    self.dt, self.n
                ));
            }
        }
        v
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec::new(self.n).expect("validated")
    }

    pub fn transport(&self) -> TransportSpec {
        make_constant_transport(self.b)
    }

    pub fn cutoff(&self) -> CutoffConfig {
        CutoffConfig {
            eps_bar: self.eps_bar,
            theta: self.theta,
        }
    }

    pub fn stepper_config(&self, mode: Mode) -> StepperConfig {
        StepperConfig::new(self.dt, mode, self.grid(), self.transport(), self.c_stab).expect("validated")
    }

    pub fn picard(&self) -> PicardConfig {
        PicardConfig {
            max_iter: self.max_iter,
            tol: self.tol,
        }
    }

    pub fn ensemble(&self) -> EnsembleConfig {
        EnsembleConfig {
            paths: self.m,
            horizon: self.t,
            dt: self.dt,
            grid: self.grid(),
            eps_bar: self.eps_bar,
            eps0: self.eps0,
            transport: self.transport(),
            p0_target: self.p0_target,
            base_seed: self.base_seed,
            family: self.family,
            delta: self.delta,
            c_stab: self.c_stab,
        }
    }

    /// Fixed-order text with round-trip float formatting.
    pub fn canonical(&self) -> String {
        format!(
            "[grid]\nn = {}\n[time]\nt = {:?}\ndt = {:?}\ndelta = {:?}\nc_stab = {:?}\n\
             [cutoff]\neps_bar = {:?}\ntheta = \"quintic\"\n[noise]\nb = [{:?}, {:?}, {:?}]\nbase_seed = {}\n\
             [data]\neps0 = {:?}\nfamily = \"{}\"\n[ensemble]\nm = {}\np0_target = {:?}\n\
             [picard]\nmax_iter = {}\ntol = {:?}\n",
            self.n,
            self.t,
            self.dt,
            self.delta,
            self.c_stab,
            self.eps_bar,
            self.b[0],
            self.b[1],
            self.b[2],
            self.base_seed,
            self.eps0,
            self.family.name(),
            self.m,
            self.p0_target,
            self.max_iter,
            self.tol,
        )
    }

    /// Hex SHA-256 of [`RunConfig::canonical`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
