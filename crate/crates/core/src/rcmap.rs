//! Reaction-coordinate mapping of the cold and work baths.
//!
//! The extended system is the three-level system times two truncated
//! oscillators, stored in the product basis `|i> ⊗ |l_c> ⊗ |l_w>` with flat
//! index `i·M² + l_c·M + l_w`.
//!
//! The extended Hamiltonian commutes with two parities,
//! `Π_c = diag(−1, 1, 1) ⊗ (−1)^{N_c}` and `Π_w = diag(1, 1, −1) ⊗ (−1)^{N_w}`.
//! Every basis state carries its joint parity sector; diagonalization is done
//! sector by sector so each eigenvector has definite parity.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{QarError, Result};
use crate::model::{build_system_hamiltonian, BathLabel, QarConfig, SpectralDensity};

/// Largest truncation for which the extended-system master equation is solved.
pub const MAX_TRUNCATION: usize = 8;

/// Largest truncation accepted for diagonalization alone.
pub const MAX_BASIS_TRUNCATION: usize = 16;

#[derive(Clone, Debug)]
pub struct ExtendedSystem {
    pub truncation: usize,
    pub hamiltonian: DMatrix<f64>,
    /// `1 ⊗ x_c ⊗ 1`, coupling to the residual cold bath.
    pub coupling_cold: DMatrix<f64>,
    /// `1 ⊗ 1 ⊗ x_w`, coupling to the residual work bath.
    pub coupling_work: DMatrix<f64>,
    /// `S_h ⊗ 1 ⊗ 1`, coupling to the hot bath.
    pub coupling_hot: DMatrix<f64>,
    /// Joint parity sector (0..4) of every product-basis state.
    pub sectors: Vec<usize>,
}

impl ExtendedSystem {
    pub fn dim(&self) -> usize {
        self.hamiltonian.nrows()
    }

    /// Flat product-basis index of `|level> ⊗ |l_c> ⊗ |l_w>`.
    pub fn index(&self, level: usize, l_cold: usize, l_work: usize) -> usize {
        let m = self.truncation;
        level * m * m + l_cold * m + l_work
    }

    pub fn coupling(&self, label: BathLabel) -> &DMatrix<f64> {
        match label {
            BathLabel::Cold => &self.coupling_cold,
            BathLabel::Work => &self.coupling_work,
            BathLabel::Hot => &self.coupling_hot,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EigenSystem {
    /// Ascending eigenvalues.
    pub energies: DVector<f64>,
    /// Orthogonal transform, column `n` is eigenvector `n`.
    pub transform: DMatrix<f64>,
    pub coupling_cold: DMatrix<f64>,
    pub coupling_work: DMatrix<f64>,
    pub coupling_hot: DMatrix<f64>,
    /// Parity sector of every eigenvector.
    pub sectors: Vec<usize>,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn coupling(&self, label: BathLabel) -> &DMatrix<f64> {
        match label {
            BathLabel::Cold => &self.coupling_cold,
            BathLabel::Work => &self.coupling_work,
            BathLabel::Hot => &self.coupling_hot,
        }
    }
}

/// Truncated `a†a + 1/2`.
fn number_operator(m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, m, |i, j| if i == j { i as f64 + 0.5 } else { 0.0 })
}

/// Truncated `a + a†`, entries `√l` on the first off-diagonals.
pub fn position_operator(m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, m, |i, j| {
        if j == i + 1 {
            (j as f64).sqrt()
        } else if i == j + 1 {
            (i as f64).sqrt()
        } else {
            0.0
        }
    })
}

fn kron3(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b).kronecker(c)
}

fn parity_sector(level: usize, l_cold: usize, l_work: usize) -> usize {
    let cold_odd = (level == 0) ^ (l_cold % 2 == 1);
    let work_odd = (level == 2) ^ (l_work % 2 == 1);
    2 * cold_odd as usize + work_odd as usize
}

fn rc_parameters(density: &SpectralDensity, label: BathLabel) -> Result<(f64, f64)> {
    match *density {
        SpectralDensity::Brownian { lambda, omega, .. } => Ok((lambda, omega)),
        SpectralDensity::Ohmic { .. } => Err(QarError::InvalidParameter(format!(
            "{label:?} bath must be Brownian for the reaction-coordinate mapping"
        ))),
    }
}

pub fn build_extended_hamiltonian(cfg: &QarConfig) -> Result<ExtendedSystem> {
    let m = cfg.truncation;
    if !(2..=MAX_BASIS_TRUNCATION).contains(&m) {
        return Err(QarError::InvalidParameter(format!(
            "RC truncation must lie in [2, {MAX_BASIS_TRUNCATION}], got {m}"
        )));
    }
    let (lambda_c, omega_c) = rc_parameters(&cfg.cold.density, BathLabel::Cold)?;
    let (lambda_w, omega_w) = rc_parameters(&cfg.work.density, BathLabel::Work)?;

    let id3 = DMatrix::<f64>::identity(3, 3);
    let idm = DMatrix::<f64>::identity(m, m);
    let num = number_operator(m);
    let x = position_operator(m);
    let s_c = BathLabel::Cold.system_operator();
    let s_w = BathLabel::Work.system_operator();
    let s_h = BathLabel::Hot.system_operator();

    let mut h_sys = build_system_hamiltonian(&cfg.levels);
    if cfg.reorganization {
        h_sys += &s_c * &s_c * (lambda_c * lambda_c / omega_c);
        h_sys += &s_w * &s_w * (lambda_w * lambda_w / omega_w);
    }

    let mut h = kron3(&h_sys, &idm, &idm);
    h += kron3(&id3, &num, &idm) * omega_c;
    h += kron3(&id3, &idm, &num) * omega_w;
    h += kron3(&s_c, &x, &idm) * lambda_c;
    h += kron3(&s_w, &idm, &x) * lambda_w;

    let mut sectors = Vec::with_capacity(3 * m * m);
    for level in 0..3 {
        for lc in 0..m {
            for lw in 0..m {
                sectors.push(parity_sector(level, lc, lw));
            }
        }
    }

    Ok(ExtendedSystem {
        truncation: m,
        hamiltonian: h,
        coupling_cold: kron3(&id3, &x, &idm),
        coupling_work: kron3(&id3, &idm, &x),
        coupling_hot: kron3(&s_h, &idm, &idm),
        sectors,
    })
}

pub fn diagonalize(ext: &ExtendedSystem) -> Result<EigenSystem> {
    let (energies, transform, sectors) = diagonalize_symmetric(&ext.hamiltonian, Some(&ext.sectors))?;
    let rotate = |v: &DMatrix<f64>| {
        let r = transform.transpose() * v * &transform;
        (&r + r.transpose()) * 0.5
    };
    Ok(EigenSystem {
        coupling_cold: rotate(&ext.coupling_cold),
        coupling_work: rotate(&ext.coupling_work),
        coupling_hot: rotate(&ext.coupling_hot),
        energies,
        transform,
        sectors,
    })
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

/// Eigendecomposition of a real symmetric matrix.
///
/// When `sectors` labels a block structure of `h` the blocks are diagonalized
/// separately. Eigenvalues come back ascending; exact ties are ordered by the
/// index of the eigenvector's dominant component, and every eigenvector has
/// its largest-magnitude component positive.
pub fn diagonalize_symmetric(
    h: &DMatrix<f64>,
    sectors: Option<&[usize]>,
) -> Result<(DVector<f64>, DMatrix<f64>, Vec<usize>)> {
    let d = h.nrows();
    if h.ncols() != d {
        return Err(QarError::DimensionMismatch { expected: d, found: h.ncols() });
    }
    let scale = max_abs(h).max(f64::MIN_POSITIVE);
    if max_abs(&(h - h.transpose())) > 1e-12 * scale {
        return Err(QarError::Eigen("matrix is not symmetric".into()));
    }

    let labels: Vec<usize> = match sectors {
        Some(s) if s.len() == d && respects_blocks(h, s) => s.to_vec(),
        Some(s) if s.len() != d => return Err(QarError::DimensionMismatch { expected: d, found: s.len() }),
        _ => vec![0; d],
    };
    let mut distinct: Vec<usize> = labels.clone();
    distinct.sort_unstable();
    distinct.dedup();

    // (energy, dominant index, sector, full-length eigenvector)
    let mut pairs: Vec<(f64, usize, usize, DVector<f64>)> = Vec::with_capacity(d);
    for &sector in &distinct {
        let idx: Vec<usize> = (0..d).filter(|&i| labels[i] == sector).collect();
        let n = idx.len();
        let sub = DMatrix::from_fn(n, n, |a, b| h[(idx[a], idx[b])]);
        let eig = SymmetricEigen::try_new(sub.clone(), f64::EPSILON, 0)
            .ok_or_else(|| QarError::Eigen(format!("no convergence in sector {sector} (size {n})")))?;
        let (values, vectors) = jacobi_refine(&sub, eig.eigenvectors)?;
        for k in 0..n {
            let mut v = DVector::zeros(d);
            for (a, &i) in idx.iter().enumerate() {
                v[i] = vectors[(a, k)];
            }
            let dominant = dominant_index(&v);
            if v[dominant] < 0.0 {
                v.neg_mut();
            }
            pairs.push((values[k], dominant, sector, v));
        }
    }

    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let tie = 1e-12 * scale;
    let mut start = 0;
    while start < d {
        let mut end = start + 1;
        while end < d && pairs[end].0 - pairs[end - 1].0 <= tie {
            end += 1;
        }
        pairs[start..end].sort_by_key(|p| p.1);
        start = end;
    }

    let energies = DVector::from_iterator(d, pairs.iter().map(|p| p.0));
    let mut transform = DMatrix::zeros(d, d);
    for (n, p) in pairs.iter().enumerate() {
        transform.set_column(n, &p.3);
    }
    let out_sectors = pairs.iter().map(|p| p.2).collect();

    let rebuilt = &transform * DMatrix::from_diagonal(&energies) * transform.transpose();
    let err = max_abs(&(rebuilt - h));
    if err > 1e-10 * scale {
        return Err(QarError::Eigen(format!("reconstruction error {err:.3e} exceeds tolerance")));
    }
    Ok((energies, transform, out_sectors))
}

/// Cyclic Jacobi sweeps on `uᵀ h u` until it is diagonal to working precision.
fn jacobi_refine(h: &DMatrix<f64>, mut u: DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = h.nrows();
    let mut b = u.transpose() * h * &u;
    b = (&b + b.transpose()) * 0.5;
    let scale = max_abs(h).max(f64::MIN_POSITIVE);
    for _ in 0..50 {
        let off = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)));
        if off.map(|(i, j)| b[(i, j)] * b[(i, j)]).sum::<f64>().sqrt() <= 1e-15 * scale {
            return Ok((b.diagonal(), u));
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = b[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (b[(q, q)] - b[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (bkp, bkq) = (b[(k, p)], b[(k, q)]);
                    b[(k, p)] = c * bkp - s * bkq;
                    b[(k, q)] = s * bkp + c * bkq;
                }
                for k in 0..n {
                    let (bpk, bqk) = (b[(p, k)], b[(q, k)]);
                    b[(p, k)] = c * bpk - s * bqk;
                    b[(q, k)] = s * bpk + c * bqk;
                }
                for k in 0..n {
                    let (ukp, ukq) = (u[(k, p)], u[(k, q)]);
                    u[(k, p)] = c * ukp - s * ukq;
                    u[(k, q)] = s * ukp + c * ukq;
                }
            }
        }
    }
    Err(QarError::Eigen("Jacobi refinement did not converge".into()))
}

fn respects_blocks(h: &DMatrix<f64>, sectors: &[usize]) -> bool {
    let d = h.nrows();
    (0..d).all(|i| (0..d).all(|j| sectors[i] == sectors[j] || h[(i, j)] == 0.0))
}

fn dominant_index(v: &DVector<f64>) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() + 1e-12 {
            best = i;
        }
    }
    best
}
