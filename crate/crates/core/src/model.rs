//! Three-level refrigerator Hamiltonian, bath parameterizations and the
//! thermal functions shared by every solver.
//!
//! Units: ħ = k_B = 1, energies measured in units of the total gap ε3 − ε1.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{QarError, Result};

/// Above this value of βω the Bose-Einstein occupation is returned as zero.
const BOSE_OVERFLOW: f64 = 700.0;

/// Default parameter values of the reference calculation.
pub mod defaults {
    pub const OMEGA: f64 = 20.0;
    pub const T_COLD: f64 = 0.25;
    pub const T_HOT: f64 = 0.5;
    pub const T_WORK: f64 = 1.5;
    pub const GAMMA: f64 = 0.0071 / std::f64::consts::PI;
    pub const CUTOFF: f64 = 500.0;
    pub const TRUNCATION: usize = 6;
    pub const DELTA: f64 = 0.2;
    pub const LAMBDA: f64 = 1.0;
}

/// Bare level energies with ε3 − ε1 = 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SystemLevels {
    eps1: f64,
    eps2: f64,
    eps3: f64,
}

impl SystemLevels {
    pub fn new(eps1: f64, eps2: f64, eps3: f64) -> Result<Self> {
        if !(eps1.is_finite() && eps2.is_finite() && eps3.is_finite()) {
            return Err(QarError::InvalidParameter("level energies must be finite".into()));
        }
        if ((eps3 - eps1) - 1.0).abs() > 1e-12 {
            return Err(QarError::InvalidParameter(format!(
                "total gap eps3 - eps1 must equal 1, got {}",
                eps3 - eps1
            )));
        }
        let delta = eps2 - eps1;
        if !(-1e-12..=1.0 + 1e-12).contains(&delta) {
            return Err(QarError::InvalidParameter(format!(
                "first gap must lie in [0, 1], got {delta}"
            )));
        }
        Ok(Self { eps1, eps2, eps3 })
    }

    /// Levels (0, Δ, 1).
    pub fn from_gap(delta: f64) -> Result<Self> {
        Self::new(0.0, delta, 1.0)
    }

    pub fn eps(&self) -> [f64; 3] {
        [self.eps1, self.eps2, self.eps3]
    }

    /// Δ = ε2 − ε1.
    pub fn gap(&self) -> f64 {
        self.eps2 - self.eps1
    }
}

pub fn build_system_hamiltonian(levels: &SystemLevels) -> DMatrix<f64> {
    DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&levels.eps()))
}

/// `S_c = |1><2| + h.c.` and friends, on the bare three-level space.
pub fn transition_operator(a: usize, b: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(3, 3);
    s[(a, b)] = 1.0;
    s[(b, a)] = 1.0;
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BathLabel {
    Cold,
    Hot,
    Work,
}

impl BathLabel {
    /// Pair of bare levels (0-based) whose transition this bath drives.
    pub fn transition(self) -> (usize, usize) {
        match self {
            BathLabel::Cold => (0, 1),
            BathLabel::Work => (1, 2),
            BathLabel::Hot => (0, 2),
        }
    }

    pub fn system_operator(self) -> DMatrix<f64> {
        let (a, b) = self.transition();
        transition_operator(a, b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpectralDensity {
    /// Peaked Brownian oscillator, `4 ω γ Ω² λ² / [(ω² − Ω²)² + (2π γ Ω ω)²]`.
    Brownian { lambda: f64, omega: f64, gamma: f64 },
    /// `γ ω e^{−ω/Λ}`.
    Ohmic { gamma: f64, cutoff: f64 },
}

impl SpectralDensity {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            SpectralDensity::Brownian { lambda, omega, gamma } => {
                lambda >= 0.0 && omega > 0.0 && gamma > 0.0 && lambda.is_finite() && omega.is_finite()
            }
            SpectralDensity::Ohmic { gamma, cutoff } => gamma >= 0.0 && cutoff > 0.0 && gamma.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(QarError::InvalidParameter(format!("invalid spectral density {self:?}")))
        }
    }

    /// J(ω) for ω ≥ 0 (no validation).
    pub fn eval(&self, w: f64) -> f64 {
        match *self {
            SpectralDensity::Brownian { lambda, omega, gamma } => {
                let num = 4.0 * w * gamma * omega * omega * lambda * lambda;
                let a = w * w - omega * omega;
                let b = 2.0 * std::f64::consts::PI * gamma * omega * w;
                num / (a * a + b * b)
            }
            SpectralDensity::Ohmic { gamma, cutoff } => gamma * w * (-w / cutoff).exp(),
        }
    }

    /// dJ/dω at ω = 0.
    pub fn slope_at_zero(&self) -> f64 {
        match *self {
            SpectralDensity::Brownian { lambda, omega, gamma } => 4.0 * gamma * lambda * lambda / (omega * omega),
            SpectralDensity::Ohmic { gamma, .. } => gamma,
        }
    }

    /// Frequency scale used to decide when a transition counts as ω = 0.
    pub fn frequency_scale(&self) -> f64 {
        match *self {
            SpectralDensity::Brownian { omega, .. } => omega.max(1.0),
            SpectralDensity::Ohmic { .. } => 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BathSpec {
    pub label: BathLabel,
    pub temperature: f64,
    pub density: SpectralDensity,
}

impl BathSpec {
    pub fn new(label: BathLabel, temperature: f64, density: SpectralDensity) -> Result<Self> {
        let spec = Self { label, temperature, density };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(QarError::InvalidParameter(format!(
                "{:?} bath temperature must be positive, got {}",
                self.label, self.temperature
            )));
        }
        self.density.validate()
    }

    pub fn beta(&self) -> f64 {
        1.0 / self.temperature
    }
}

pub fn spectral_density(spec: &BathSpec, w: f64) -> Result<f64> {
    if w < 0.0 || w.is_nan() {
        return Err(QarError::NegativeFrequency(w));
    }
    Ok(spec.density.eval(w))
}

/// Bose-Einstein occupation `1 / (e^{βω} − 1)`.
pub fn bose_einstein(beta: f64, w: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(QarError::InvalidParameter(format!("inverse temperature must be positive, got {beta}")));
    }
    if !(w > 0.0) {
        return Err(QarError::InvalidParameter(format!("Bose-Einstein occupation needs w > 0, got {w}")));
    }
    Ok(occupation(beta * w))
}

/// Occupation as a function of x = βω > 0.
pub(crate) fn occupation(x: f64) -> f64 {
    if x > BOSE_OVERFLOW {
        0.0
    } else {
        1.0 / x.exp_m1()
    }
}

/// Complete refrigerator configuration: bare levels, the three baths and the
/// reaction-coordinate treatment of the cold and work baths.
#[derive(Clone, Debug, PartialEq)]
pub struct QarConfig {
    pub levels: SystemLevels,
    /// Brownian cold bath.
    pub cold: BathSpec,
    /// Ohmic hot bath.
    pub hot: BathSpec,
    /// Brownian work bath.
    pub work: BathSpec,
    /// Cutoff Λ_c of the residual cold bath after the mapping.
    pub cutoff_cold: f64,
    /// Cutoff Λ_w of the residual work bath after the mapping.
    pub cutoff_work: f64,
    /// Levels kept per reaction coordinate.
    pub truncation: usize,
    /// Keep the `λ²/Ω S²` reorganization term of the mapped Hamiltonian.
    pub reorganization: bool,
}

impl Default for QarConfig {
    fn default() -> Self {
        use defaults::*;
        let brownian = SpectralDensity::Brownian { lambda: LAMBDA, omega: OMEGA, gamma: GAMMA };
        Self {
            levels: SystemLevels::from_gap(DELTA).expect("default gap"),
            cold: BathSpec { label: BathLabel::Cold, temperature: T_COLD, density: brownian },
            hot: BathSpec {
                label: BathLabel::Hot,
                temperature: T_HOT,
                density: SpectralDensity::Ohmic { gamma: GAMMA, cutoff: CUTOFF },
            },
            work: BathSpec { label: BathLabel::Work, temperature: T_WORK, density: brownian },
            cutoff_cold: CUTOFF,
            cutoff_work: CUTOFF,
            truncation: TRUNCATION,
            reorganization: true,
        }
    }
}

impl QarConfig {
    pub fn validate(&self) -> Result<()> {
        self.cold.validate()?;
        self.hot.validate()?;
        self.work.validate()?;
        if self.truncation < 2 {
            return Err(QarError::InvalidParameter(format!(
                "RC truncation must be at least 2, got {}",
                self.truncation
            )));
        }
        if !(self.cutoff_cold > 0.0 && self.cutoff_work > 0.0) {
            return Err(QarError::InvalidParameter("residual cutoffs must be positive".into()));
        }
        let (tc, th, tw) = (self.cold.temperature, self.hot.temperature, self.work.temperature);
        if !(tc < th && th < tw) {
            log::warn!("temperatures T_c={tc}, T_h={th}, T_w={tw} are not ordered T_c < T_h < T_w");
        }
        Ok(())
    }

    /// Sets λ_c = λ_w = λ on both Brownian baths.
    pub fn with_coupling(mut self, lambda: f64) -> Self {
        for bath in [&mut self.cold, &mut self.work] {
            if let SpectralDensity::Brownian { lambda: l, .. } = &mut bath.density {
                *l = lambda;
            }
        }
        self
    }

    /// Sets Ω_c = Ω_w = Ω on both Brownian baths.
    pub fn with_rc_frequency(mut self, omega: f64) -> Self {
        for bath in [&mut self.cold, &mut self.work] {
            if let SpectralDensity::Brownian { omega: o, .. } = &mut bath.density {
                *o = omega;
            }
        }
        self
    }

    pub fn with_gap(mut self, delta: f64) -> Result<Self> {
        self.levels = SystemLevels::from_gap(delta)?;
        Ok(self)
    }

    pub fn with_truncation(mut self, m: usize) -> Self {
        self.truncation = m;
        self
    }

    pub fn betas(&self) -> (f64, f64, f64) {
        (self.cold.beta(), self.hot.beta(), self.work.beta())
    }

    /// Residual Ohmic bath seen by the reaction coordinate of `bath`.
    pub fn residual_bath(&self, label: BathLabel) -> Result<BathSpec> {
        let (spec, cutoff) = match label {
            BathLabel::Cold => (&self.cold, self.cutoff_cold),
            BathLabel::Work => (&self.work, self.cutoff_work),
            BathLabel::Hot => return Ok(self.hot),
        };
        match spec.density {
            SpectralDensity::Brownian { gamma, .. } => Ok(BathSpec {
                label,
                temperature: spec.temperature,
                density: SpectralDensity::Ohmic { gamma, cutoff },
            }),
            SpectralDensity::Ohmic { .. } => Err(QarError::InvalidParameter(format!(
                "{label:?} bath must be Brownian for the reaction-coordinate mapping"
            ))),
        }
    }
}
