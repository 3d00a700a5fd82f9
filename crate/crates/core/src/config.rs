//! TOML run configuration.
//!
//! ```toml
//! [system]
//! delta = 0.2
//!
//! [baths.cold]
//! temperature = 0.25
//! kind = "brownian"
//! lambda = 1.0
//! omega = 20.0
//! gamma = 0.00226
//! cutoff = 500.0
//!
//! [solver]
//! m = 6
//!
//! [grid]
//! lambda = { start = 0.05, stop = 12.0, steps = 60 }
//! delta = { start = 0.02, stop = 0.98, steps = 49 }
//! m_list = [2, 3, 4, 5, 6]
//! ```
//!
//! Every key is optional; missing keys take the default refrigerator values.
//! For a Brownian bath `cutoff` is the cutoff of the residual Ohmic bath left
//! after the reaction-coordinate mapping.

use std::path::Path;

use serde::Deserialize;

use crate::analysis::{default_delta_grid, default_lambda_grid, linspace};
use crate::error::{QarError, Result};
use crate::model::{defaults, BathLabel, BathSpec, QarConfig, SpectralDensity, SystemLevels};
use crate::redfield::SolverOptions;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    system: RawSystem,
    #[serde(default)]
    baths: RawBaths,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    grid: RawGrid,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    delta: Option<f64>,
    reorganization: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBaths {
    cold: Option<RawBath>,
    hot: Option<RawBath>,
    work: Option<RawBath>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Kind {
    Brownian,
    Ohmic,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBath {
    temperature: Option<f64>,
    kind: Option<Kind>,
    lambda: Option<f64>,
    omega: Option<f64>,
    gamma: Option<f64>,
    cutoff: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    m: Option<usize>,
    residual_tolerance: Option<f64>,
    positivity_tolerance: Option<f64>,
    krylov_tolerance: Option<f64>,
    max_iterations: Option<usize>,
    restart: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    lambda: Option<Range>,
    delta: Option<Range>,
    m_list: Option<Vec<usize>>,
}

/// Inclusive, evenly spaced range.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub start: f64,
    pub stop: f64,
    pub steps: usize,
}

impl Range {
    pub fn points(&self) -> Vec<f64> {
        linspace(self.start, self.stop, self.steps)
    }
}

/// Everything a CLI run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub qar: QarConfig,
    pub solver: SolverOptions,
    pub lambdas: Vec<f64>,
    pub deltas: Vec<f64>,
    pub m_list: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            qar: QarConfig::default(),
            solver: SolverOptions::default(),
            lambdas: default_lambda_grid(),
            deltas: default_delta_grid(),
            m_list: vec![2, 3, 4, 5, 6],
        }
    }
}

fn bath(label: BathLabel, raw: Option<RawBath>, base: BathSpec) -> Result<BathSpec> {
    let Some(raw) = raw else { return Ok(base) };
    let (base_lambda, base_omega, base_gamma, base_cutoff) = match base.density {
        SpectralDensity::Brownian { lambda, omega, gamma } => (lambda, omega, gamma, defaults::CUTOFF),
        SpectralDensity::Ohmic { gamma, cutoff } => (defaults::LAMBDA, defaults::OMEGA, gamma, cutoff),
    };
    let kind = raw.kind.unwrap_or(match base.density {
        SpectralDensity::Brownian { .. } => Kind::Brownian,
        SpectralDensity::Ohmic { .. } => Kind::Ohmic,
    });
    let gamma = raw.gamma.unwrap_or(base_gamma);
    let density = match kind {
        Kind::Brownian => SpectralDensity::Brownian {
            lambda: raw.lambda.unwrap_or(base_lambda),
            omega: raw.omega.unwrap_or(base_omega),
            gamma,
        },
        Kind::Ohmic => {
            if raw.lambda.is_some() || raw.omega.is_some() {
                return Err(QarError::Config(format!("{label:?} bath is Ohmic; 'lambda' and 'omega' do not apply")));
            }
            SpectralDensity::Ohmic { gamma, cutoff: raw.cutoff.unwrap_or(base_cutoff) }
        }
    };
    BathSpec::new(label, raw.temperature.unwrap_or(base.temperature), density)
        .map_err(|e| QarError::Config(e.to_string()))
}

fn residual_cutoff(raw: &Option<RawBath>) -> f64 {
    match raw {
        Some(RawBath { kind: Some(Kind::Ohmic), .. }) => defaults::CUTOFF,
        Some(r) => r.cutoff.unwrap_or(defaults::CUTOFF),
        None => defaults::CUTOFF,
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| QarError::Config(e.to_string()))?;
        let mut cfg = RunConfig::default();
        let base = QarConfig::default();

        if let Some(delta) = raw.system.delta {
            cfg.qar.levels = SystemLevels::from_gap(delta).map_err(|e| QarError::Config(e.to_string()))?;
        }
        if let Some(r) = raw.system.reorganization {
            cfg.qar.reorganization = r;
        }
        cfg.qar.cutoff_cold = residual_cutoff(&raw.baths.cold);
        cfg.qar.cutoff_work = residual_cutoff(&raw.baths.work);
        cfg.qar.cold = bath(BathLabel::Cold, raw.baths.cold, base.cold)?;
        cfg.qar.hot = bath(BathLabel::Hot, raw.baths.hot, base.hot)?;
        cfg.qar.work = bath(BathLabel::Work, raw.baths.work, base.work)?;

        let s = raw.solver;
        if let Some(m) = s.m {
            cfg.qar.truncation = m;
        }
        let o = &mut cfg.solver;
        o.residual_tolerance = s.residual_tolerance.unwrap_or(o.residual_tolerance);
        o.positivity_tolerance = s.positivity_tolerance.unwrap_or(o.positivity_tolerance);
        o.krylov_tolerance = s.krylov_tolerance.unwrap_or(o.krylov_tolerance);
        o.max_iterations = s.max_iterations.unwrap_or(o.max_iterations);
        o.restart = s.restart.unwrap_or(o.restart);
        if !(o.residual_tolerance > 0.0 && o.positivity_tolerance >= 0.0 && o.krylov_tolerance > 0.0) {
            return Err(QarError::Config("solver tolerances must be positive".into()));
        }
        if o.restart == 0 || o.max_iterations == 0 {
            return Err(QarError::Config("restart and max_iterations must be positive".into()));
        }

        if let Some(r) = raw.grid.lambda {
            cfg.lambdas = r.points();
        }
        if let Some(r) = raw.grid.delta {
            cfg.deltas = r.points();
        }
        if let Some(m) = raw.grid.m_list {
            cfg.m_list = m;
        }
        cfg.qar.validate().map_err(|e| QarError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| QarError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }
}

/// Parses `start:stop:steps` or a single number.
pub fn parse_range(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').map(str::trim).collect();
    let num = |s: &str| s.parse::<f64>().map_err(|_| QarError::Config(format!("bad number '{s}' in '{spec}'")));
    match parts.as_slice() {
        [x] => Ok(vec![num(x)?]),
        [a, b, n] => {
            let steps = n.parse::<usize>().map_err(|_| QarError::Config(format!("bad step count in '{spec}'")))?;
            if steps == 0 {
                return Err(QarError::Config(format!("empty range '{spec}'")));
            }
            Ok(linspace(num(a)?, num(b)?, steps))
        }
        _ => Err(QarError::Config(format!("range '{spec}' must be 'start:stop:steps' or a number"))),
    }
}

/// Applies `lambda=a:b:n,delta=a:b:n` overrides to a run configuration.
pub fn apply_grid_spec(cfg: &mut RunConfig, spec: &str) -> Result<()> {
    for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| QarError::Config(format!("grid item '{item}' must look like lambda=start:stop:steps")))?;
        match key.trim() {
            "lambda" => cfg.lambdas = parse_range(value)?,
            "delta" => cfg.deltas = parse_range(value)?,
            other => return Err(QarError::Config(format!("unknown grid axis '{other}'"))),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn full_file_round_trip() {
        let text = r#"
            [system]
            delta = 0.3
            reorganization = false

            [baths.cold]
            temperature = 0.2
            lambda = 4.0
            omega = 30.0
            gamma = 0.001
            cutoff = 250.0

            [baths.hot]
            temperature = 0.6
            kind = "ohmic"
            gamma = 0.002
            cutoff = 100.0

            [baths.work]
            temperature = 2.0
            kind = "brownian"
            lambda = 3.0

            [solver]
            m = 4
            residual_tolerance = 1e-9
            restart = 40

            [grid]
            lambda = { start = 1.0, stop = 2.0, steps = 3 }
            delta = { start = 0.1, stop = 0.5, steps = 5 }
            m_list = [2, 4]
        "#;
        let cfg = RunConfig::from_toml_str(text).unwrap();
        assert!((cfg.qar.levels.gap() - 0.3).abs() < 1e-15);
        assert!(!cfg.qar.reorganization);
        assert_eq!(cfg.qar.cold.temperature, 0.2);
        assert_eq!(cfg.qar.cold.density, SpectralDensity::Brownian { lambda: 4.0, omega: 30.0, gamma: 0.001 });
        assert_eq!(cfg.qar.cutoff_cold, 250.0);
        assert_eq!(cfg.qar.hot.density, SpectralDensity::Ohmic { gamma: 0.002, cutoff: 100.0 });
        assert_eq!(
            cfg.qar.work.density,
            SpectralDensity::Brownian { lambda: 3.0, omega: defaults::OMEGA, gamma: defaults::GAMMA }
        );
        assert_eq!(cfg.qar.truncation, 4);
        assert_eq!(cfg.solver.residual_tolerance, 1e-9);
        assert_eq!(cfg.solver.restart, 40);
        assert_eq!(cfg.lambdas, vec![1.0, 1.5, 2.0]);
        assert_eq!(cfg.deltas.len(), 5);
        assert_eq!(cfg.m_list, vec![2, 4]);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(RunConfig::from_toml_str("[system]\ndleta = 0.2").is_err());
        assert!(RunConfig::from_toml_str("[system]\ndelta = 1.5").is_err());
        assert!(RunConfig::from_toml_str("[baths.cold]\ntemperature = -1.0").is_err());
        assert!(RunConfig::from_toml_str("[baths.hot]\nkind = \"ohmic\"\nlambda = 1.0").is_err());
        assert!(RunConfig::from_toml_str("[solver]\nm = 1").is_err());
        assert!(RunConfig::from_toml_str("[solver]\nkrylov_tolerance = 0.0").is_err());
        assert!(RunConfig::from_toml_str("not toml at all [").is_err());
    }

    #[test]
    fn grid_specs() {
        assert_eq!(parse_range("0.5").unwrap(), vec![0.5]);
        assert_eq!(parse_range("0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        assert!(parse_range("0:1").is_err());
        assert!(parse_range("0:1:0").is_err());
        let mut cfg = RunConfig::default();
        apply_grid_spec(&mut cfg, "lambda=1:3:3, delta=0.2").unwrap();
        assert_eq!(cfg.lambdas, vec![1.0, 2.0, 3.0]);
        assert_eq!(cfg.deltas, vec![0.2]);
        assert!(apply_grid_spec(&mut cfg, "omega=1:2:2").is_err());
    }
}
