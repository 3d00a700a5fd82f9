//! Redfield generator in the eigenbasis of a diagonalized system, steady
//! states under the trace constraint, and per-bath heat currents.
//!
//! The rate tensor is real: `R_{mn,jk}(ω) = V_mn V_jk Γ(ω)` with the Lamb
//! shift dropped. Written with `Λ_jk = V_jk Γ(E_j − E_k)` and `K = V Λ` the
//! dissipator of one bath is
//!
//! ```text
//! D(ρ) = −K ρ − ρ Kᵀ + V ρ Λᵀ + Λ ρ V
//! ```
//!
//! which is the full (non-secular) four-term Redfield sum.

mod sparse;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use twofloat::TwoFloat;

use crate::error::{QarError, Result};
use crate::model::{occupation, BathLabel, BathSpec};

pub type C64 = Complex64;

/// Relative threshold below which a transition frequency counts as zero.
const ZERO_FREQUENCY: f64 = 1e-9;

/// Real part of the half Fourier transform of the bath correlation function.
///
/// `ω > 0` is absorption from the bath (`π J n`), `ω < 0` emission
/// (`π J (n + 1)`), and `ω = 0` the continuous limit `π J′(0) T`.
pub fn gamma_rate(bath: &BathSpec, w: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let beta = bath.beta();
    if w.abs() < ZERO_FREQUENCY * bath.density.frequency_scale() {
        return pi * bath.density.slope_at_zero() / beta;
    }
    let a = w.abs();
    let n = occupation(beta * a);
    let j = bath.density.eval(a);
    if w > 0.0 {
        pi * j * n
    } else {
        pi * j * (n + 1.0)
    }
}

/// One bath attached to the diagonalized system through `coupling` (in the
/// energy eigenbasis).
#[derive(Clone, Debug)]
pub struct DissipatorSpec {
    pub bath: BathSpec,
    pub coupling: DMatrix<f64>,
}

#[derive(Clone, Debug)]
struct Dissipator {
    bath: BathSpec,
    v: DMatrix<f64>,
    lam: DMatrix<f64>,
    k: DMatrix<f64>,
}

/// Knobs of the steady-state solver.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    /// `‖L(ρ)‖ < residual_tolerance · ‖L‖` is required of every solution.
    pub residual_tolerance: f64,
    /// Eigenvalues of ρ below `−positivity_tolerance` flag the result invalid.
    pub positivity_tolerance: f64,
    /// Relative residual target of the Krylov solver.
    pub krylov_tolerance: f64,
    pub max_iterations: usize,
    pub restart: usize,
    /// Systems up to this dimension are solved by dense row replacement.
    pub dense_max_dim: usize,
    /// Width of the Bohr-frequency windows of the block preconditioner.
    pub cluster_width: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            residual_tolerance: 1e-10,
            positivity_tolerance: 1e-7,
            krylov_tolerance: 1e-12,
            max_iterations: 3000,
            restart: 80,
            dense_max_dim: 16,
            cluster_width: 0.05,
        }
    }
}

/// Linear Redfield generator `L(ρ) = −i[H, ρ] + Σ_α D_α(ρ)`.
#[derive(Clone, Debug)]
pub struct Generator {
    energies: DVector<f64>,
    dissipators: Vec<Dissipator>,
    k_total: DMatrix<f64>,
    /// Symmetry sector of every eigenstate; all zero when no block structure
    /// is known or the couplings do not respect it.
    sectors: Vec<usize>,
}

pub fn build_generator(energies: &DVector<f64>, specs: Vec<DissipatorSpec>) -> Result<Generator> {
    build_generator_with_sectors(energies, specs, None)
}

/// Like [`build_generator`], with a symmetry labelling of the eigenstates.
///
/// The labels are kept only if every coupling maps each sector onto a single
/// partner sector (an involution), which makes block-diagonal density
/// matrices an invariant subspace of the generator.
pub fn build_generator_with_sectors(
    energies: &DVector<f64>,
    specs: Vec<DissipatorSpec>,
    sectors: Option<&[usize]>,
) -> Result<Generator> {
    let d = energies.len();
    if specs.is_empty() {
        return Err(QarError::InvalidParameter("generator needs at least one dissipator".into()));
    }
    let mut dissipators = Vec::with_capacity(specs.len());
    let mut k_total = DMatrix::zeros(d, d);
    for spec in specs {
        let v = spec.coupling;
        if v.nrows() != d || v.ncols() != d {
            return Err(QarError::DimensionMismatch { expected: d, found: v.nrows() });
        }
        spec.bath.validate()?;
        let lam = DMatrix::from_fn(d, d, |j, k| {
            if v[(j, k)] == 0.0 {
                0.0
            } else {
                v[(j, k)] * gamma_rate(&spec.bath, energies[j] - energies[k])
            }
        });
        let k = &v * &lam;
        k_total += &k;
        dissipators.push(Dissipator { bath: spec.bath, v, lam, k });
    }
    let sectors = match sectors {
        Some(s) if s.len() != d => return Err(QarError::DimensionMismatch { expected: d, found: s.len() }),
        Some(s) if dissipators.iter().all(|dis| sparse::maps_sectors(&dis.v, s)) => s.to_vec(),
        _ => vec![0; d],
    };
    Ok(Generator { energies: energies.clone(), dissipators, k_total, sectors })
}

/// Applies a real-linear map with real coefficients to a complex matrix.
fn split_apply(rho: &DMatrix<C64>, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> DMatrix<C64> {
    let re = f(&rho.map(|z| z.re));
    let im = f(&rho.map(|z| z.im));
    re.zip_map(&im, C64::new)
}

impl Generator {
    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn energies(&self) -> &DVector<f64> {
        &self.energies
    }

    pub fn n_dissipators(&self) -> usize {
        self.dissipators.len()
    }

    pub fn bath(&self, index: usize) -> &BathSpec {
        &self.dissipators[index].bath
    }

    pub fn sectors(&self) -> &[usize] {
        &self.sectors
    }

    fn omega(&self, m: usize, n: usize) -> f64 {
        self.energies[m] - self.energies[n]
    }

    /// `D_α(ρ)` for the dissipator at `index`.
    pub fn apply_dissipator(&self, index: usize, rho: &DMatrix<C64>) -> DMatrix<C64> {
        let dis = &self.dissipators[index];
        split_apply(rho, |x| {
            let mut out = -(&dis.k * x) - x * dis.k.transpose();
            out += &dis.v * x * dis.lam.transpose() + &dis.lam * x * &dis.v;
            out
        })
    }

    /// Dissipative part of `L` on a real matrix.
    fn dissipate_real(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = -(&self.k_total * x) - x * self.k_total.transpose();
        for dis in &self.dissipators {
            out += &dis.v * x * dis.lam.transpose() + &dis.lam * x * &dis.v;
        }
        out
    }

    /// Matrix-free action `ρ ↦ L(ρ)`.
    pub fn apply(&self, rho: &DMatrix<C64>) -> DMatrix<C64> {
        let d = self.dim();
        let mut out = split_apply(rho, |x| self.dissipate_real(x));
        for n in 0..d {
            for m in 0..d {
                out[(m, n)] -= C64::i() * self.omega(m, n) * rho[(m, n)];
            }
        }
        out
    }

    /// Coefficient of `ρ_kl` in `L(ρ)_mn`.
    pub fn entry(&self, m: usize, n: usize, k: usize, l: usize) -> C64 {
        let mut re = 0.0;
        if n == l {
            re -= self.k_total[(m, k)];
        }
        if m == k {
            re -= self.k_total[(n, l)];
        }
        for dis in &self.dissipators {
            re += dis.v[(m, k)] * dis.lam[(n, l)] + dis.lam[(m, k)] * dis.v[(n, l)];
        }
        let im = if m == k && n == l { -self.omega(m, n) } else { 0.0 };
        C64::new(re, im)
    }

    /// Dense `d² × d²` matrix acting on row-major `vec(ρ)` (index `m·d + n`).
    pub fn assemble(&self) -> DMatrix<C64> {
        let d = self.dim();
        DMatrix::from_fn(d * d, d * d, |row, col| self.entry(row / d, row % d, col / d, col % d))
    }

    /// Upper bound on the Frobenius-induced norm of `L`.
    pub fn norm_estimate(&self) -> f64 {
        let d = self.dim();
        let mut wmax: f64 = 0.0;
        for m in 0..d {
            for n in 0..d {
                wmax = wmax.max(self.omega(m, n).abs());
            }
        }
        let mut bound = wmax + 2.0 * self.k_total.norm();
        for dis in &self.dissipators {
            bound += 2.0 * dis.v.norm() * dis.lam.norm();
        }
        bound.max(f64::MIN_POSITIVE)
    }

    /// Classical rate matrix acting on populations, `W_mk = ∂ L(ρ)_mm / ∂ ρ_kk`.
    pub fn population_rates(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut w = DMatrix::zeros(d, d);
        for dis in &self.dissipators {
            w += dis.v.component_mul(&dis.lam) * 2.0;
        }
        for m in 0..d {
            w[(m, m)] -= 2.0 * self.k_total[(m, m)];
        }
        w
    }
}

/// Unit-trace Hermitian operator.
#[derive(Clone, Debug)]
pub struct DensityMatrix(DMatrix<C64>);

impl DensityMatrix {
    pub fn new(rho: DMatrix<C64>) -> Result<Self> {
        let d = rho.nrows();
        if rho.ncols() != d {
            return Err(QarError::DimensionMismatch { expected: d, found: rho.ncols() });
        }
        let tr = rho.trace();
        if (tr - C64::new(1.0, 0.0)).norm() > 1e-10 {
            return Err(QarError::InvalidParameter(format!("density matrix trace {tr} differs from 1")));
        }
        let herm = (&rho - rho.adjoint()).iter().fold(0.0f64, |a, x| a.max(x.norm()));
        if herm > 1e-10 {
            return Err(QarError::InvalidParameter(format!("density matrix is not Hermitian ({herm:.2e})")));
        }
        Ok(Self(rho))
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn populations(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.0.diagonal().iter().map(|z| z.re))
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let labels = vec![0; self.dim()];
        self.min_eigenvalue_blocked(&labels)
    }

    /// Smallest eigenvalue, using that `ρ` vanishes between different labels.
    pub fn min_eigenvalue_blocked(&self, labels: &[usize]) -> f64 {
        let mut distinct = labels.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        let mut lowest = f64::INFINITY;
        for s in distinct {
            let idx: Vec<usize> = (0..self.dim()).filter(|&i| labels[i] == s).collect();
            let n = idx.len();
            // Real symmetric embedding [[A, −B], [B, A]] doubles every eigenvalue.
            let emb = DMatrix::from_fn(2 * n, 2 * n, |r, c| {
                let z = self.0[(idx[r % n], idx[c % n])];
                match (r < n, c < n) {
                    (true, true) | (false, false) => z.re,
                    (true, false) => -z.im,
                    (false, true) => z.im,
                }
            });
            let ev = match crate::rcmap::diagonalize_symmetric(&emb, None) {
                Ok((e, _, _)) => e.min(),
                Err(_) => f64::NEG_INFINITY,
            };
            lowest = lowest.min(ev);
        }
        lowest
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Positivity {
    Ok,
    /// Smallest eigenvalue slightly negative but within tolerance.
    Tolerated,
    Violated,
}

#[derive(Clone, Debug)]
pub struct SteadyStateResult {
    pub rho: DensityMatrix,
    pub j_c: f64,
    pub j_h: f64,
    pub j_w: f64,
    /// `‖L(ρ_ss)‖_F`.
    pub residual: f64,
    pub generator_norm: f64,
    pub min_eigenvalue: f64,
    pub positivity: Positivity,
}

impl SteadyStateResult {
    pub fn current(&self, label: BathLabel) -> f64 {
        match label {
            BathLabel::Cold => self.j_c,
            BathLabel::Hot => self.j_h,
            BathLabel::Work => self.j_w,
        }
    }

    pub fn positivity_ok(&self) -> bool {
        self.positivity != Positivity::Violated
    }
}

/// Heat current into the system from the bath at `index`,
/// `j_α = Tr[D_α(ρ) H]`, with energies measured from the ground state.
pub fn heat_current(gen: &Generator, index: usize, rho: &DMatrix<C64>) -> f64 {
    let dis = &gen.dissipators[index];
    let d = gen.dim();
    let e0 = gen.energies.min();
    let re = rho.map(|z| z.re);
    let kx = &dis.k * &re;
    let vx = &dis.v * &re;
    let lx = &dis.lam * &re;
    let mut j = 0.0;
    for m in 0..d {
        // −(Kρ)_mm − (ρKᵀ)_mm + (VρΛᵀ)_mm + (ΛρV)_mm
        let dmm = -kx[(m, m)] - re.row(m).dot(&dis.k.row(m))
            + vx.row(m).dot(&dis.lam.row(m))
            + lx.row(m).dot(&dis.v.row(m));
        j += (gen.energies[m] - e0) * dmm;
    }
    j
}

pub fn solve_steady_state(gen: &Generator) -> Result<SteadyStateResult> {
    solve_steady_state_with(gen, &SolverOptions::default())
}

pub fn solve_steady_state_with(gen: &Generator, opts: &SolverOptions) -> Result<SteadyStateResult> {
    let rho = if gen.dim() <= opts.dense_max_dim {
        solve_dense(gen)?
    } else {
        sparse::solve(gen, opts)?
    };
    finish(gen, rho, opts)
}

/// Row-replacement solve of the assembled generator.
pub fn solve_dense(gen: &Generator) -> Result<DMatrix<C64>> {
    let d = gen.dim();
    let mut a = gen.assemble();
    let sv = a.clone().singular_values();
    let smax = sv.max();
    let nullity = sv.iter().filter(|&&s| s <= 1e-14 * smax).count();
    if nullity > 1 {
        return Err(QarError::NonUniqueSteadyState { nullity });
    }
    for col in 0..d * d {
        a[(0, col)] = C64::new(0.0, 0.0);
    }
    for m in 0..d {
        a[(0, m * d + m)] = C64::new(1.0, 0.0);
    }
    let mut rhs = DVector::zeros(d * d);
    rhs[0] = C64::new(1.0, 0.0);
    let x = a
        .full_piv_lu()
        .solve(&rhs)
        .ok_or_else(|| QarError::SolverFailure("singular bordered generator".into()))?;
    Ok(DMatrix::from_row_slice(d, d, x.as_slice()))
}

/// Diagonal of every `D_α(ρ)` as `c_α + W_α p`, with the coherences frozen.
struct PopulationBalance {
    coherent: Vec<DVector<f64>>,
    rates: Vec<DMatrix<f64>>,
}

impl PopulationBalance {
    fn new(gen: &Generator, rho: &DMatrix<C64>) -> Self {
        let d = gen.dim();
        let mut off = rho.map(|z| z.re);
        off.fill_diagonal(0.0);
        let mut coherent = Vec::with_capacity(gen.n_dissipators());
        let mut rates = Vec::with_capacity(gen.n_dissipators());
        for dis in &gen.dissipators {
            let kx = &dis.k * &off;
            let vx = &dis.v * &off;
            let lx = &dis.lam * &off;
            coherent.push(DVector::from_fn(d, |m, _| {
                -kx[(m, m)] - off.row(m).dot(&dis.k.row(m))
                    + vx.row(m).dot(&dis.lam.row(m))
                    + lx.row(m).dot(&dis.v.row(m))
            }));
            let mut w = dis.v.component_mul(&dis.lam) * 2.0;
            for m in 0..d {
                w[(m, m)] -= 2.0 * dis.k[(m, m)];
            }
            rates.push(w);
        }
        Self { coherent, rates }
    }

    /// `D_α(ρ)_mm` in double-double arithmetic.
    fn drift(&self, index: usize, p: &[TwoFloat]) -> Vec<TwoFloat> {
        let w = &self.rates[index];
        (0..p.len())
            .map(|m| {
                let mut acc = TwoFloat::from(self.coherent[index][m]);
                for (k, pk) in p.iter().enumerate() {
                    acc += w[(m, k)] * *pk;
                }
                acc
            })
            .collect()
    }
}

/// Re-solves the populations for the current coherences and returns the
/// heat current of every dissipator.
///
/// Residuals and currents are accumulated in double-double precision, so
/// the currents balance even where they are many orders of magnitude below
/// the individual transition fluxes.
fn polish_populations(gen: &Generator, rho: &mut DMatrix<C64>) -> Result<Vec<f64>> {
    let d = gen.dim();
    let balance = PopulationBalance::new(gen, rho);
    let mut w = gen.population_rates();
    // The replaced equation is the one weighted by zero in the heat currents.
    let pivot = gen.energies.imin();
    for k in 0..d {
        w[(pivot, k)] = 1.0;
    }
    let lu = w.full_piv_lu();
    let mut p: Vec<TwoFloat> = (0..d).map(|m| TwoFloat::from(rho[(m, m)].re)).collect();
    for _ in 0..4 {
        let mut total = vec![TwoFloat::from(0.0); d];
        for index in 0..gen.n_dissipators() {
            for (t, x) in total.iter_mut().zip(balance.drift(index, &p)) {
                *t += x;
            }
        }
        let trace = p.iter().fold(TwoFloat::from(0.0), |acc, x| acc + *x);
        let mut rhs = DVector::from_fn(d, |m, _| -f64::from(total[m]));
        rhs[pivot] = f64::from(1.0 - trace);
        let dp = lu
            .solve(&rhs)
            .ok_or_else(|| QarError::SolverFailure("singular population rate matrix".into()))?;
        for (pm, x) in p.iter_mut().zip(dp.iter()) {
            *pm += *x;
        }
    }
    for m in 0..d {
        rho[(m, m)] = C64::new(f64::from(p[m]), 0.0);
    }
    let e0 = gen.energies.min();
    Ok((0..gen.n_dissipators())
        .map(|index| {
            let drift = balance.drift(index, &p);
            let j = (0..d).fold(TwoFloat::from(0.0), |acc, m| acc + (gen.energies[m] - e0) * drift[m]);
            f64::from(j)
        })
        .collect())
}

fn finish(gen: &Generator, mut rho: DMatrix<C64>, opts: &SolverOptions) -> Result<SteadyStateResult> {
    rho = (&rho + rho.adjoint()) * C64::new(0.5, 0.0);
    let currents = polish_populations(gen, &mut rho)?;
    if rho.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(QarError::SolverFailure("non-finite steady state".into()));
    }

    let residual = gen.apply(&rho).norm();
    let generator_norm = gen.norm_estimate();
    if residual > opts.residual_tolerance * generator_norm {
        return Err(QarError::SolverFailure(format!(
            "steady-state residual {residual:.3e} exceeds {:.3e}",
            opts.residual_tolerance * generator_norm
        )));
    }

    let (mut j_c, mut j_h, mut j_w) = (0.0, 0.0, 0.0);
    for (index, &j) in currents.iter().enumerate() {
        match gen.bath(index).label {
            BathLabel::Cold => j_c += j,
            BathLabel::Hot => j_h += j,
            BathLabel::Work => j_w += j,
        }
    }

    let rho = DensityMatrix::new(rho)?;
    let min_eigenvalue = rho.min_eigenvalue_blocked(gen.sectors());
    let positivity = if min_eigenvalue >= 0.0 {
        Positivity::Ok
    } else if min_eigenvalue >= -opts.positivity_tolerance {
        log::warn!("steady state has a small negative eigenvalue {min_eigenvalue:.3e}");
        Positivity::Tolerated
    } else {
        Positivity::Violated
    };

    Ok(SteadyStateResult { rho, j_c, j_h, j_w, residual, generator_norm, min_eigenvalue, positivity })
}
