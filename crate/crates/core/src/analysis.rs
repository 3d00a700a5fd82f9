//! Parameter scans over coupling and gap, operating regions, COP and
//! truncation convergence.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effective::{build_effective_model, converged_effective_model, eff_steady_state_with, effective_cooling_predicate, EffectiveModel};
use crate::error::{QarError, Result};
use crate::model::{BathLabel, QarConfig, SpectralDensity};
use crate::rcmap::{build_extended_hamiltonian, diagonalize, EigenSystem, MAX_BASIS_TRUNCATION, MAX_TRUNCATION};
use crate::redfield::{build_generator, build_generator_with_sectors, solve_steady_state_with, DissipatorSpec, Generator, SolverOptions, SteadyStateResult};

/// Currents smaller than this count as zero (and zero counts as negative).
pub const DEAD_BAND: f64 = 1e-14;

/// Required relative accuracy of `j_c + j_h + j_w = 0`.
pub const CONSERVATION_TOLERANCE: f64 = 1e-9;

pub const CSV_HEADER: &str = "lambda,delta,method,M,j_c,j_h,j_w,cop,region,residual,positivity_ok";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Local Redfield equation of the bare three-level system.
    Bmr,
    /// Redfield equation of the reaction-coordinate extended system.
    Rc,
    /// Redfield equation of the three-level effective model.
    Eff,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Bmr => "bmr",
            Method::Rc => "rc",
            Method::Eff => "eff",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = QarError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bmr" => Ok(Method::Bmr),
            "rc" => Ok(Method::Rc),
            "eff" => Ok(Method::Eff),
            other => Err(QarError::Config(format!("unknown method '{other}' (expected bmr, rc or eff)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RegionLabel {
    /// Heat flows out of the cold and the work bath.
    R1,
    /// Work bath heats the cold bath directly.
    R2,
    /// Refrigeration.
    R3,
    /// Like R2, after the two lowest levels have crossed.
    R4,
}

impl fmt::Display for RegionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RegionLabel::R1 => "R1",
            RegionLabel::R2 => "R2",
            RegionLabel::R3 => "R3",
            RegionLabel::R4 => "R4",
        };
        f.write_str(s)
    }
}

impl FromStr for RegionLabel {
    type Err = QarError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "R1" => Ok(RegionLabel::R1),
            "R2" => Ok(RegionLabel::R2),
            "R3" => Ok(RegionLabel::R3),
            "R4" => Ok(RegionLabel::R4),
            other => Err(QarError::Config(format!("unknown region '{other}'"))),
        }
    }
}

fn positive(j: f64) -> bool {
    j >= DEAD_BAND
}

pub fn classify_region(j_c: f64, j_w: f64, level_order_broken: bool) -> RegionLabel {
    match (positive(j_c), positive(j_w)) {
        (true, _) => RegionLabel::R3,
        (false, false) => RegionLabel::R1,
        (false, true) if level_order_broken => RegionLabel::R4,
        (false, true) => RegionLabel::R2,
    }
}

/// `j_c / j_w`, defined only while the work bath supplies heat.
pub fn cop(j_c: f64, j_w: f64) -> Option<f64> {
    (j_w > 0.0).then(|| j_c / j_w)
}

pub fn carnot_cop(beta_c: f64, beta_h: f64, beta_w: f64) -> f64 {
    (beta_h - beta_w) / (beta_c - beta_w)
}

/// Generator of the bare three-level system with the baths attached locally.
pub fn bmr_generator(cfg: &QarConfig) -> Result<Generator> {
    cfg.validate()?;
    let energies = DVector::from_row_slice(&cfg.levels.eps());
    let specs = [cfg.cold, cfg.hot, cfg.work]
        .into_iter()
        .map(|bath| DissipatorSpec { bath, coupling: bath.label.system_operator() })
        .collect();
    build_generator(&energies, specs)
}

/// Diagonalized extended system and its generator.
pub fn rc_generator(cfg: &QarConfig) -> Result<(EffectiveModel, EigenSystem, Generator)> {
    cfg.validate()?;
    if cfg.truncation > MAX_TRUNCATION {
        return Err(QarError::InvalidParameter(format!(
            "RC truncation {} exceeds the supported maximum {MAX_TRUNCATION}",
            cfg.truncation
        )));
    }
    let ext = build_extended_hamiltonian(cfg)?;
    let eig = diagonalize(&ext)?;
    let tracked = build_effective_model(&ext, &eig)?;
    let specs = [BathLabel::Cold, BathLabel::Hot, BathLabel::Work]
        .into_iter()
        .map(|label| Ok(DissipatorSpec { bath: cfg.residual_bath(label)?, coupling: eig.coupling(label).clone() }))
        .collect::<Result<Vec<_>>>()?;
    let gen = build_generator_with_sectors(&eig.energies, specs, Some(&eig.sectors))?;
    Ok((tracked, eig, gen))
}

/// Converged effective model, starting the truncation search at `cfg.truncation`.
pub fn eff_model(cfg: &QarConfig) -> Result<EffectiveModel> {
    converged_effective_model(cfg, cfg.truncation, MAX_BASIS_TRUNCATION - 1)
}

/// Outcome of one solved grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct PointData {
    pub j_c: f64,
    pub j_h: f64,
    pub j_w: f64,
    pub cop: Option<f64>,
    pub region: RegionLabel,
    pub residual: f64,
    pub positivity_ok: bool,
    pub level_order_broken: bool,
    /// Truncation actually used (absent for the bare model).
    pub truncation: Option<usize>,
}

fn point_data(ss: &SteadyStateResult, broken: bool, truncation: Option<usize>) -> Result<PointData> {
    let scale = ss.j_c.abs().max(ss.j_h.abs()).max(ss.j_w.abs());
    let total = ss.j_c + ss.j_h + ss.j_w;
    // Currents inside the dead band are zero, so there is nothing to balance.
    if scale >= DEAD_BAND && total.abs() > CONSERVATION_TOLERANCE * scale {
        return Err(QarError::SolverFailure(format!(
            "currents do not balance: sum {total:.3e} against scale {scale:.3e}"
        )));
    }
    Ok(PointData {
        j_c: ss.j_c,
        j_h: ss.j_h,
        j_w: ss.j_w,
        cop: cop(ss.j_c, ss.j_w),
        region: classify_region(ss.j_c, ss.j_w, broken),
        residual: ss.residual,
        positivity_ok: ss.positivity_ok(),
        level_order_broken: broken,
        truncation,
    })
}

/// Steady state of one configuration with the requested method.
pub fn solve_point(method: Method, cfg: &QarConfig, opts: &SolverOptions) -> Result<PointData> {
    match method {
        Method::Bmr => {
            let ss = solve_steady_state_with(&bmr_generator(cfg)?, opts)?;
            point_data(&ss, false, None)
        }
        Method::Rc => {
            require_coupling(cfg)?;
            let (tracked, _, gen) = rc_generator(cfg)?;
            let ss = solve_steady_state_with(&gen, opts)?;
            point_data(&ss, tracked.level_order_broken, Some(cfg.truncation))
        }
        Method::Eff => {
            require_coupling(cfg)?;
            let model = eff_model(cfg)?;
            let ss = eff_steady_state_with(&model, cfg, opts)?;
            point_data(&ss, model.level_order_broken, Some(model.truncation))
        }
    }
}

fn require_coupling(cfg: &QarConfig) -> Result<()> {
    for bath in [&cfg.cold, &cfg.work] {
        if let SpectralDensity::Brownian { lambda, .. } = bath.density {
            if lambda <= 0.0 {
                return Err(QarError::InvalidParameter(format!("{:?} coupling must be positive, got {lambda}", bath.label)));
            }
        }
    }
    Ok(())
}

/// One row of a scan.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanRow {
    pub lambda: f64,
    pub delta: f64,
    pub method: Method,
    /// Failed points keep the error message.
    pub outcome: std::result::Result<PointData, String>,
}

impl ScanRow {
    pub fn data(&self) -> Option<&PointData> {
        self.outcome.as_ref().ok()
    }

    pub fn region(&self) -> Option<RegionLabel> {
        self.data().map(|d| d.region)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScanTable {
    /// Row-major over the grids: all deltas for the first lambda, then the next.
    pub rows: Vec<ScanRow>,
}

fn fmt_float(x: f64) -> String {
    format!("{x:.11e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_float).unwrap_or_default()
}

impl ScanTable {
    pub fn get(&self, lambda: f64, delta: f64) -> Option<&ScanRow> {
        self.rows.iter().find(|r| r.lambda == lambda && r.delta == delta)
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome.is_err()).count()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{CSV_HEADER}")?;
        for row in &self.rows {
            let (lambda, delta) = (fmt_float(row.lambda), fmt_float(row.delta));
            match &row.outcome {
                Ok(d) => writeln!(
                    out,
                    "{lambda},{delta},{},{},{},{},{},{},{},{},{}",
                    row.method,
                    d.truncation.map(|m| m.to_string()).unwrap_or_default(),
                    fmt_float(d.j_c),
                    fmt_float(d.j_h),
                    fmt_float(d.j_w),
                    fmt_opt(d.cop),
                    d.region,
                    fmt_float(d.residual),
                    d.positivity_ok
                )?,
                Err(_) => writeln!(out, "{lambda},{delta},{},,,,,,,,false", row.method)?,
            }
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}

/// `n` evenly spaced points from `start` to `stop` inclusive.
pub fn linspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..n).map(|i| start + (stop - start) * i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn default_lambda_grid() -> Vec<f64> {
    linspace(0.05, 12.0, 60)
}

pub fn default_delta_grid() -> Vec<f64> {
    linspace(0.02, 0.98, 49)
}

fn check_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(QarError::Config(format!("{name} grid is empty")));
    }
    if grid.iter().any(|x| !x.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(QarError::Config(format!("{name} grid must be finite and strictly increasing")));
    }
    Ok(())
}

/// Solves every `(λ, Δ)` pair. Per-point failures are recorded, not raised.
pub fn scan_grid(
    method: Method,
    lambdas: &[f64],
    deltas: &[f64],
    cfg: &QarConfig,
    opts: &SolverOptions,
) -> Result<ScanTable> {
    check_grid("lambda", lambdas)?;
    check_grid("delta", deltas)?;
    cfg.validate()?;
    if method != Method::Bmr && lambdas[0] <= 0.0 {
        return Err(QarError::Config(format!("{method} scans need λ > 0")));
    }
    if !(deltas[0] >= 0.0 && deltas[deltas.len() - 1] <= 1.0) {
        return Err(QarError::Config("Δ must lie in [0, 1]".into()));
    }
    if method == Method::Rc && cfg.truncation > MAX_TRUNCATION {
        return Err(QarError::Config(format!("RC truncation must not exceed {MAX_TRUNCATION}")));
    }

    let points: Vec<(f64, f64)> = lambdas.iter().flat_map(|&l| deltas.iter().map(move |&d| (l, d))).collect();
    let rows = points
        .par_iter()
        .map(|&(lambda, delta)| {
            let outcome = cfg
                .clone()
                .with_coupling(lambda)
                .with_gap(delta)
                .and_then(|c| solve_point(method, &c, opts))
                .map_err(|e| {
                    log::warn!("{method} point λ={lambda}, Δ={delta} failed: {e}");
                    e.to_string()
                });
            ScanRow { lambda, delta, method, outcome }
        })
        .collect();
    Ok(ScanTable { rows })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub lambda: f64,
    pub truncation: usize,
    pub j_c: std::result::Result<f64, String>,
    /// `|j_c(M) − j_c(M_max)|`.
    pub deviation: Option<f64>,
    /// Deviation relative to `|j_c(M_max)|`.
    pub relative_deviation: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConvergenceTable {
    pub delta: f64,
    pub rows: Vec<ConvergenceRow>,
}

pub const CONVERGENCE_HEADER: &str = "lambda,delta,M,j_c,abs_deviation,rel_deviation";

impl ConvergenceTable {
    pub fn get(&self, lambda: f64, m: usize) -> Option<&ConvergenceRow> {
        self.rows.iter().find(|r| r.lambda == lambda && r.truncation == m)
    }

    /// Largest relative deviation of truncation `m` over all λ.
    pub fn max_relative_deviation(&self, m: usize) -> Option<f64> {
        self.rows
            .iter()
            .filter(|r| r.truncation == m)
            .map(|r| r.relative_deviation)
            .try_fold(0.0f64, |acc, x| x.map(|v| acc.max(v)))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{CONVERGENCE_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                fmt_float(r.lambda),
                fmt_float(self.delta),
                r.truncation,
                fmt_opt(r.j_c.as_ref().ok().copied()),
                fmt_opt(r.deviation),
                fmt_opt(r.relative_deviation)
            )?;
        }
        Ok(())
    }
}

/// Cooling current of RC-QME for every truncation in `m_list` and every λ.
pub fn convergence_sweep(
    m_list: &[usize],
    cfg: &QarConfig,
    lambdas: &[f64],
    opts: &SolverOptions,
) -> Result<ConvergenceTable> {
    check_grid("lambda", lambdas)?;
    if m_list.is_empty() || m_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(QarError::Config("M list must be non-empty and strictly increasing".into()));
    }
    let m_max = *m_list.last().expect("non-empty");
    if m_list[0] < 2 || m_max > MAX_TRUNCATION {
        return Err(QarError::Config(format!("M values must lie in [2, {MAX_TRUNCATION}]")));
    }
    if lambdas[0] <= 0.0 {
        return Err(QarError::Config("convergence sweeps need λ > 0".into()));
    }
    cfg.validate()?;

    let points: Vec<(f64, usize)> = lambdas.iter().flat_map(|&l| m_list.iter().map(move |&m| (l, m))).collect();
    let currents: Vec<std::result::Result<f64, String>> = points
        .par_iter()
        .map(|&(lambda, m)| {
            let c = cfg.clone().with_coupling(lambda).with_truncation(m);
            solve_point(Method::Rc, &c, opts).map(|d| d.j_c).map_err(|e| e.to_string())
        })
        .collect();

    let mut rows = Vec::with_capacity(points.len());
    for (chunk_points, chunk) in points.chunks(m_list.len()).zip(currents.chunks(m_list.len())) {
        let reference = chunk.last().and_then(|r| r.as_ref().ok()).copied();
        for (&(lambda, m), j) in chunk_points.iter().zip(chunk) {
            let deviation = match (j, reference) {
                (Ok(j), Some(r)) => Some((j - r).abs()),
                _ => None,
            };
            let relative_deviation = deviation.zip(reference).map(|(d, r)| d / r.abs());
            rows.push(ConvergenceRow { lambda, truncation: m, j_c: j.clone(), deviation, relative_deviation });
        }
    }
    Ok(ConvergenceTable { delta: cfg.levels.gap(), rows })
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowRow {
    pub lambda: f64,
    pub model: std::result::Result<EffectiveModel, String>,
    pub cools: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowTable {
    pub delta: f64,
    pub carnot: f64,
    pub rows: Vec<WindowRow>,
}

pub const WINDOW_HEADER: &str = "lambda,delta,E1,E2,E3,gap_ratio,carnot,F_c,F_w,F_h,level_order_broken,cools";

impl WindowTable {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{WINDOW_HEADER}")?;
        for r in &self.rows {
            let (l, d, c) = (fmt_float(r.lambda), fmt_float(self.delta), fmt_float(self.carnot));
            match &r.model {
                Ok(m) => writeln!(
                    out,
                    "{l},{d},{},{},{},{},{c},{},{},{},{},{}",
                    fmt_float(m.energies[0]),
                    fmt_float(m.energies[1]),
                    fmt_float(m.energies[2]),
                    fmt_float(m.gap_ratio()),
                    fmt_float(m.f_c),
                    fmt_float(m.f_w),
                    fmt_float(m.f_h),
                    m.level_order_broken,
                    r.cools
                )?,
                Err(_) => writeln!(out, "{l},{d},,,,,{c},,,,,false")?,
            }
        }
        Ok(())
    }
}

/// Effective-model cooling predicate along a λ grid at fixed Δ.
pub fn cooling_window(cfg: &QarConfig, lambdas: &[f64]) -> Result<WindowTable> {
    check_grid("lambda", lambdas)?;
    cfg.validate()?;
    let (bc, bh, bw) = cfg.betas();
    let rows = lambdas
        .par_iter()
        .map(|&lambda| {
            let model = eff_model(&cfg.clone().with_coupling(lambda)).map_err(|e| e.to_string());
            let cools = model.as_ref().map(|m| effective_cooling_predicate(m, bc, bh, bw)).unwrap_or(false);
            WindowRow { lambda, model, cools }
        })
        .collect();
    Ok(WindowTable { delta: cfg.levels.gap(), carnot: carnot_cop(bc, bh, bw), rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn region_examples() {
        assert_eq!(classify_region(1e-5, 1e-4, false), RegionLabel::R3);
        assert_eq!(classify_region(-1e-5, -1e-4, false), RegionLabel::R1);
        assert_eq!(classify_region(-1e-5, 1e-4, true), RegionLabel::R4);
        assert_eq!(classify_region(-1e-5, 1e-4, false), RegionLabel::R2);
        assert_eq!(classify_region(1e-5, -1e-4, true), RegionLabel::R3);
    }

    #[test]
    fn dead_band_counts_as_negative() {
        assert_eq!(classify_region(5e-15, 1e-4, false), RegionLabel::R2);
        assert_eq!(classify_region(0.0, 0.0, false), RegionLabel::R1);
        assert_eq!(classify_region(-1e-5, 1e-15, false), RegionLabel::R1);
        assert_eq!(classify_region(2e-14, 1e-4, false), RegionLabel::R3);
    }

    #[test]
    fn cop_and_carnot() {
        assert_eq!(cop(0.3, 0.3), Some(1.0));
        assert_eq!(cop(0.3, 0.0), None);
        assert_eq!(cop(0.3, -1.0), None);
        assert_eq!(carnot_cop(4.0, 2.0, 2.0 / 3.0), 0.4);
        let (bc, bh, bw) = QarConfig::default().betas();
        assert!((carnot_cop(bc, bh, bw) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn method_and_region_round_trip() {
        for m in [Method::Bmr, Method::Rc, Method::Eff] {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("xyz".parse::<Method>().is_err());
        for r in [RegionLabel::R1, RegionLabel::R2, RegionLabel::R3, RegionLabel::R4] {
            assert_eq!(r.to_string().parse::<RegionLabel>().unwrap(), r);
        }
    }

    #[test]
    fn default_grids() {
        let l = default_lambda_grid();
        assert_eq!(l.len(), 60);
        assert_eq!((l[0], l[59]), (0.05, 12.0));
        let d = default_delta_grid();
        assert_eq!(d.len(), 49);
        assert!((d[1] - d[0] - 0.02).abs() < 1e-15);
        assert_eq!(d[48], 0.98);
    }

    #[test]
    fn scan_rejects_bad_grids() {
        let cfg = QarConfig::default();
        let opts = SolverOptions::default();
        assert!(scan_grid(Method::Bmr, &[1.0, 0.5], &[0.2], &cfg, &opts).is_err());
        assert!(scan_grid(Method::Bmr, &[], &[0.2], &cfg, &opts).is_err());
        assert!(scan_grid(Method::Rc, &[0.0, 1.0], &[0.2], &cfg, &opts).is_err());
        assert!(scan_grid(Method::Bmr, &[1.0], &[0.5, 1.2], &cfg, &opts).is_err());
        assert!(scan_grid(Method::Rc, &[1.0], &[0.2], &cfg.clone().with_truncation(9), &opts).is_err());
    }

    #[test]
    fn failed_point_keeps_row() {
        let cfg = QarConfig::default();
        let mut table = scan_grid(Method::Bmr, &[1.0], &[0.2], &cfg, &SolverOptions::default()).unwrap();
        table.rows.push(ScanRow { lambda: 2.0, delta: 0.3, method: Method::Rc, outcome: Err("boom".into()) });
        let csv = table.to_csv_string();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[2], "2.00000000000e0,3.00000000000e-1,rc,,,,,,,,false");
        assert_eq!(lines[1].split(',').count(), 11);
        assert_eq!(table.failures(), 1);
    }

    #[test]
    fn float_format_has_twelve_significant_digits() {
        assert_eq!(fmt_float(0.1), "1.00000000000e-1");
        assert_eq!(fmt_float(-1.234567890123456e-7), "-1.23456789012e-7");
    }

    #[test]
    fn rc_truncation_is_bounded() {
        let cfg = QarConfig::default().with_truncation(MAX_TRUNCATION + 1);
        assert!(rc_generator(&cfg).is_err());
    }
}
