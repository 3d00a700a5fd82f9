//! Three-level effective refrigerator built from the lowest extended-system
//! eigenstates.
//!
//! The tracked states `|1(λ)>, |2(λ)>, |3(λ)>` are the continuations of the
//! bare states `|i> ⊗ |0> ⊗ |0>`. Each of them lives in its own parity sector,
//! so the continuation of `|i, 0, 0>` is the lowest eigenstate of that sector
//! for as long as the reaction-coordinate excitations stay far above.

use nalgebra::{DMatrix, DVector};

use crate::error::{QarError, Result};
use crate::model::{BathLabel, BathSpec, QarConfig, SpectralDensity};
use crate::rcmap::{build_extended_hamiltonian, diagonalize, EigenSystem, ExtendedSystem};
use crate::redfield::{build_generator, solve_steady_state_with, DissipatorSpec, Generator, SolverOptions, SteadyStateResult};

/// Largest allowed change of the tracked energies when one more oscillator
/// level is added.
pub const TRUNCATION_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveModel {
    /// Tracked energies `E_1, E_2, E_3`, not necessarily ascending.
    pub energies: [f64; 3],
    /// `<1|x_c|2>`.
    pub f_c: f64,
    /// `<2|x_w|3>`.
    pub f_w: f64,
    /// `<1|S_h|3>`.
    pub f_h: f64,
    /// `E_2 < E_1`: the states from `ε1` and `ε2` have crossed.
    pub level_order_broken: bool,
    /// Indices of the tracked states in the extended eigenbasis.
    pub states: [usize; 3],
    /// Oscillator levels per reaction coordinate of the underlying basis.
    pub truncation: usize,
}

impl EffectiveModel {
    /// `(E_2 − E_1) / (E_3 − E_1)`.
    pub fn gap_ratio(&self) -> f64 {
        let [e1, e2, e3] = self.energies;
        (e2 - e1) / (e3 - e1)
    }

    pub fn factor(&self, label: BathLabel) -> f64 {
        match label {
            BathLabel::Cold => self.f_c,
            BathLabel::Work => self.f_w,
            BathLabel::Hot => self.f_h,
        }
    }
}

fn tracked_states(ext: &ExtendedSystem, eig: &EigenSystem) -> Result<[usize; 3]> {
    let mut states = [0; 3];
    for (level, slot) in states.iter_mut().enumerate() {
        let sector = ext.sectors[ext.index(level, 0, 0)];
        *slot = eig
            .sectors
            .iter()
            .position(|&s| s == sector)
            .ok_or_else(|| QarError::Eigen(format!("no eigenstate in parity sector {sector}")))?;
    }
    Ok(states)
}

/// Effective parameters of an already diagonalized extended system.
pub fn build_effective_model(ext: &ExtendedSystem, eig: &EigenSystem) -> Result<EffectiveModel> {
    if ext.dim() != eig.dim() {
        return Err(QarError::DimensionMismatch { expected: ext.dim(), found: eig.dim() });
    }
    let states = tracked_states(ext, eig)?;
    let [s1, s2, s3] = states;
    let energies = [eig.energies[s1], eig.energies[s2], eig.energies[s3]];
    Ok(EffectiveModel {
        energies,
        f_c: eig.coupling_cold[(s1, s2)],
        f_w: eig.coupling_work[(s2, s3)],
        f_h: eig.coupling_hot[(s1, s3)],
        level_order_broken: energies[1] < energies[0],
        states,
        truncation: ext.truncation,
    })
}

fn model_at(cfg: &QarConfig, m: usize) -> Result<EffectiveModel> {
    let ext = build_extended_hamiltonian(&cfg.clone().with_truncation(m))?;
    let eig = diagonalize(&ext)?;
    build_effective_model(&ext, &eig)
}

/// Effective model at `cfg.truncation`, checked against one more level per
/// reaction coordinate.
pub fn effective_model(cfg: &QarConfig) -> Result<EffectiveModel> {
    cfg.validate()?;
    warn_if_slow_oscillators(cfg);
    let m = cfg.truncation;
    let model = model_at(cfg, m)?;
    let finer = model_at(cfg, m + 1)?;
    let shift = model
        .energies
        .iter()
        .zip(finer.energies.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if shift > TRUNCATION_TOLERANCE {
        return Err(QarError::TruncationTooSmall { m, shift });
    }
    Ok(model)
}

/// Smallest truncation in `[start, max]` whose tracked energies are converged.
pub fn converged_effective_model(cfg: &QarConfig, start: usize, max: usize) -> Result<EffectiveModel> {
    let mut last = None;
    for m in start..=max {
        match effective_model(&cfg.clone().with_truncation(m)) {
            Ok(model) => return Ok(model),
            Err(e @ QarError::TruncationTooSmall { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or_else(|| QarError::InvalidParameter(format!("empty truncation range {start}..={max}"))))
}

fn warn_if_slow_oscillators(cfg: &QarConfig) {
    for bath in [&cfg.cold, &cfg.work] {
        if let SpectralDensity::Brownian { lambda, omega, .. } = bath.density {
            let scale = lambda.max(1.0).max(cfg.work.temperature);
            if omega < 5.0 * scale {
                log::warn!("RC frequency {omega} is not large against {scale}; the effective model may be inaccurate");
            }
        }
    }
}

/// Weak-coupling-like cooling condition on the renormalized levels.
pub fn effective_cooling_predicate(model: &EffectiveModel, beta_c: f64, beta_h: f64, beta_w: f64) -> bool {
    if model.level_order_broken {
        return false;
    }
    model.gap_ratio() <= (beta_h - beta_w) / (beta_c - beta_w)
}

fn scaled_bath(bath: BathSpec, factor: f64) -> BathSpec {
    let density = match bath.density {
        SpectralDensity::Ohmic { gamma, cutoff } => SpectralDensity::Ohmic { gamma: gamma * factor * factor, cutoff },
        other => other,
    };
    BathSpec { density, ..bath }
}

/// Redfield generator of the effective three-level refrigerator.
pub fn effective_generator(model: &EffectiveModel, cfg: &QarConfig) -> Result<Generator> {
    let energies = DVector::from_row_slice(&model.energies);
    let mut specs = Vec::with_capacity(3);
    for label in [BathLabel::Cold, BathLabel::Hot, BathLabel::Work] {
        let factor = model.factor(label);
        let (bath, coupling): (BathSpec, DMatrix<f64>) = match label {
            BathLabel::Hot => (cfg.hot, label.system_operator() * factor),
            _ => (scaled_bath(cfg.residual_bath(label)?, factor), label.system_operator()),
        };
        specs.push(DissipatorSpec { bath, coupling });
    }
    build_generator(&energies, specs)
}

pub fn eff_steady_state(model: &EffectiveModel, cfg: &QarConfig) -> Result<SteadyStateResult> {
    eff_steady_state_with(model, cfg, &SolverOptions::default())
}

pub fn eff_steady_state_with(model: &EffectiveModel, cfg: &QarConfig, opts: &SolverOptions) -> Result<SteadyStateResult> {
    for bath in [&cfg.cold, &cfg.work] {
        if let SpectralDensity::Brownian { lambda, .. } = bath.density {
            if lambda <= 0.0 {
                return Err(QarError::InvalidParameter("the effective model needs λ > 0".into()));
            }
        }
    }
    solve_steady_state_with(&effective_generator(model, cfg)?, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::defaults;

    fn cfg(lambda: f64, delta: f64) -> QarConfig {
        QarConfig::default().with_coupling(lambda).with_gap(delta).unwrap()
    }

    fn model(lambda: f64, delta: f64, m: usize) -> EffectiveModel {
        model_at(&cfg(lambda, delta), m).unwrap()
    }

    #[test]
    fn decoupled_limit_reproduces_bare_levels() {
        let m = model(0.0, 0.2, 4);
        let [e1, e2, e3] = m.energies;
        assert!((e2 - e1 - 0.2).abs() < 1e-10);
        assert!((e3 - e1 - 1.0).abs() < 1e-10);
        assert_eq!((m.f_c, m.f_w), (0.0, 0.0));
        assert!((m.f_h - 1.0).abs() < 1e-12);
        assert!(!m.level_order_broken);
    }

    #[test]
    fn predicate_examples() {
        let (bc, bh, bw) = QarConfig::default().betas();
        assert!(effective_cooling_predicate(&model(0.0, 0.2, 3), bc, bh, bw));
        assert!(!effective_cooling_predicate(&model(0.0, 0.6, 3), bc, bh, bw));
        let degenerate = EffectiveModel {
            energies: [0.0, 0.0, 1.0],
            f_c: 0.1,
            f_w: 0.1,
            f_h: 1.0,
            level_order_broken: false,
            states: [0, 1, 2],
            truncation: 2,
        };
        assert!(effective_cooling_predicate(&degenerate, bc, bh, bw));
        let broken = EffectiveModel { energies: [0.0, -0.1, 1.0], level_order_broken: true, ..degenerate };
        assert!(!effective_cooling_predicate(&broken, bc, bh, bw));
    }

    #[test]
    fn gap_ratio_shrinks_at_strong_coupling() {
        let weak = model(0.0, 0.2, 8).gap_ratio();
        let mut prev = f64::INFINITY;
        for k in 8..=24 {
            let r = model(0.5 * k as f64, 0.2, 8).gap_ratio();
            assert!(r < prev, "ratio grew at λ={}", 0.5 * k as f64);
            prev = r;
        }
        assert!(prev < weak);
    }

    fn crossing(delta: f64, f: impl Fn(&EffectiveModel) -> f64) -> Vec<f64> {
        let mut out = Vec::new();
        let mut prev: Option<(f64, f64)> = None;
        let mut lambda = 0.05;
        while lambda <= 12.0 + 1e-9 {
            let v = f(&model(lambda, delta, 8));
            if let Some((l0, v0)) = prev {
                if (v0 > 0.0) != (v > 0.0) {
                    out.push(l0 + (lambda - l0) * v0 / (v0 - v));
                }
            }
            prev = Some((lambda, v));
            lambda += 0.05;
        }
        out
    }

    #[test]
    fn cooling_window_moves_to_strong_coupling() {
        let eta = 0.4;
        // Δ=0.6 enters the window near λ≈8 and leaves through the crossing near λ≈11.
        let enter = crossing(0.6, |m| eta - m.gap_ratio());
        assert!(!enter.is_empty() && (enter[0] - 8.0).abs() < 1.0, "{enter:?}");
        let cross = crossing(0.6, |m| m.energies[1] - m.energies[0]);
        assert!(cross.len() == 1 && (cross[0] - 11.0).abs() < 1.0, "{cross:?}");
        // Δ=0.2 stops cooling near λ≈9.
        let stop = crossing(0.2, |m| m.energies[1] - m.energies[0]);
        assert!(stop.len() == 1 && (stop[0] - 9.0).abs() < 1.0, "{stop:?}");
    }

    #[test]
    fn level_order_flag_is_sticky() {
        let mut seen = false;
        for k in 1..=60 {
            let m = model(0.2 * k as f64, 0.2, 6);
            if seen {
                assert!(m.level_order_broken);
            }
            seen |= m.level_order_broken;
        }
        assert!(seen);
    }

    #[test]
    fn tracked_states_overlap_along_coupling() {
        let step = 0.05;
        let mut prev: Option<(DMatrix<f64>, [usize; 3])> = None;
        let mut lambda = 0.05;
        while lambda <= 12.0 {
            let c = cfg(lambda, 0.4).with_truncation(5);
            let ext = build_extended_hamiltonian(&c).unwrap();
            let eig = diagonalize(&ext).unwrap();
            let m = build_effective_model(&ext, &eig).unwrap();
            if let Some((u, s)) = &prev {
                for n in 0..3 {
                    let overlap = u.column(s[n]).dot(&eig.transform.column(m.states[n]));
                    assert!(overlap.abs() > 0.9, "state {n} at λ={lambda}");
                }
            }
            prev = Some((eig.transform.clone(), m.states));
            lambda += step;
        }
    }

    #[test]
    fn factors_grow_with_coupling() {
        let mut prev = (0.0, 0.0);
        for k in 0..=48 {
            let m = model(0.25 * k as f64, 0.2, 8);
            let (fc, fw) = (m.f_c.abs(), m.f_w.abs());
            assert!(fc >= prev.0 - 1e-12 && fw >= prev.1 - 1e-12, "λ={}", 0.25 * k as f64);
            prev = (fc, fw);
        }
    }

    #[test]
    fn hot_factor_decays_slowly() {
        let mut prev = 1.0 + 1e-12;
        for k in 0..=12 {
            let fh = model(k as f64, 0.2, 8).f_h.abs();
            assert!(fh <= prev && fh > 0.7, "λ={k}: {fh}");
            prev = fh;
        }
        assert!(model(1.0, 0.2, 8).f_h.abs() > 0.99);
    }

    #[test]
    fn truncation_check_rejects_coarse_basis() {
        let c = cfg(12.0, 0.2).with_truncation(2);
        assert!(matches!(effective_model(&c), Err(QarError::TruncationTooSmall { m: 2, .. })));
        assert!(effective_model(&cfg(1.0, 0.2).with_truncation(8)).is_ok());
    }

    #[test]
    fn equal_temperatures_carry_no_current() {
        let mut c = cfg(3.0, 0.3);
        for bath in [&mut c.cold, &mut c.hot, &mut c.work] {
            bath.temperature = 0.7;
        }
        let m = effective_model(&c.clone().with_truncation(8)).unwrap();
        let ss = eff_steady_state(&m, &c).unwrap();
        assert!(ss.j_c.abs() < 1e-12 && ss.j_h.abs() < 1e-12 && ss.j_w.abs() < 1e-12);
    }

    #[test]
    fn zero_coupling_is_rejected() {
        let c = cfg(0.0, 0.2);
        let m = model(0.0, 0.2, 3);
        assert!(eff_steady_state(&m, &c).is_err());
    }

    #[test]
    fn effective_bath_scales_with_factor_squared() {
        let c = cfg(2.0, 0.2);
        let m = model(2.0, 0.2, 8);
        let gen = effective_generator(&m, &c).unwrap();
        match gen.bath(0).density {
            SpectralDensity::Ohmic { gamma, .. } => {
                assert!((gamma - defaults::GAMMA * m.f_c * m.f_c).abs() < 1e-18)
            }
            _ => panic!("cold effective bath must be Ohmic"),
        }
    }
}
