//! Block-sparse steady-state solver for large generators.
//!
//! When every coupling maps symmetry sectors onto partner sectors the unique
//! steady state is block diagonal, so only the `Σ_s n_s²` in-sector entries
//! are unknowns. The bordered system `L(ρ) + c·Tr(ρ)·1/d = c·1/d` is solved by
//! restarted GMRES, right-preconditioned by the exact generator restricted to
//! windows of nearly equal Bohr frequency (a block-secular approximation).

use nalgebra::{DMatrix, DVector, LU, Dyn};

use super::{Generator, SolverOptions, C64};
use crate::error::{QarError, Result};

/// Largest preconditioner block outside the zero-frequency window.
const MAX_BLOCK: usize = 400;

/// True when `v` connects every sector to at most one partner sector and the
/// pairing is symmetric.
pub(super) fn maps_sectors(v: &DMatrix<f64>, sectors: &[usize]) -> bool {
    let n_sectors = sectors.iter().max().map_or(0, |s| s + 1);
    let mut partner: Vec<Option<usize>> = vec![None; n_sectors];
    let d = v.nrows();
    for j in 0..d {
        for i in 0..d {
            if v[(i, j)] == 0.0 {
                continue;
            }
            let (s, t) = (sectors[j], sectors[i]);
            match partner[s] {
                None => partner[s] = Some(t),
                Some(p) if p != t => return false,
                _ => {}
            }
        }
    }
    partner.iter().enumerate().all(|(s, p)| match p {
        Some(t) => partner[*t].is_none_or(|back| back == s),
        None => true,
    })
}

struct Layout {
    /// State indices of each sector.
    states: Vec<Vec<usize>>,
    /// Offset of each sector's block in the flat vector (column-major blocks).
    offsets: Vec<usize>,
    len: usize,
}

impl Layout {
    fn new(sectors: &[usize]) -> Self {
        let n_sectors = sectors.iter().max().map_or(0, |s| s + 1);
        let mut states = vec![Vec::new(); n_sectors];
        for (i, &s) in sectors.iter().enumerate() {
            states[s].push(i);
        }
        states.retain(|s| !s.is_empty());
        let mut offsets = Vec::with_capacity(states.len());
        let mut len = 0;
        for s in &states {
            offsets.push(len);
            len += s.len() * s.len();
        }
        Self { states, offsets, len }
    }

    /// `(m, n)` state pair of every flat index.
    fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.len);
        for idx in &self.states {
            for &n in idx {
                for &m in idx {
                    out.push((m, n));
                }
            }
        }
        out
    }

    fn block(&self, x: &DVector<C64>, s: usize) -> DMatrix<C64> {
        let n = self.states[s].len();
        DMatrix::from_column_slice(n, n, &x.as_slice()[self.offsets[s]..self.offsets[s] + n * n])
    }

    fn to_full(&self, x: &DVector<C64>, d: usize) -> DMatrix<C64> {
        let mut rho = DMatrix::zeros(d, d);
        for (s, idx) in self.states.iter().enumerate() {
            let b = self.block(x, s);
            for (a, &m) in idx.iter().enumerate() {
                for (c, &n) in idx.iter().enumerate() {
                    rho[(m, n)] = b[(a, c)];
                }
            }
        }
        rho
    }
}

fn sub(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<C64> {
    DMatrix::from_fn(rows.len(), cols.len(), |a, b| C64::new(m[(rows[a], cols[b])], 0.0))
}

struct Transfer {
    from: usize,
    to: usize,
    v: DMatrix<C64>,
    lam: DMatrix<C64>,
}

/// The bordered generator restricted to block-diagonal operators.
struct BlockOperator {
    layout: Layout,
    omega: Vec<f64>,
    k_blocks: Vec<DMatrix<C64>>,
    transfers: Vec<Transfer>,
    /// Flat indices of the diagonal entries (populations).
    diagonal: Vec<usize>,
    border: f64,
    dim: usize,
}

impl BlockOperator {
    fn new(gen: &Generator, border: f64) -> Self {
        let layout = Layout::new(gen.sectors());
        let sector_of: Vec<usize> = {
            let mut v = vec![0; gen.dim()];
            for (s, idx) in layout.states.iter().enumerate() {
                for &i in idx {
                    v[i] = s;
                }
            }
            v
        };
        let pairs = layout.pairs();
        let omega = pairs.iter().map(|&(m, n)| gen.omega(m, n)).collect();
        let diagonal = pairs.iter().enumerate().filter(|(_, p)| p.0 == p.1).map(|(i, _)| i).collect();
        let k_blocks = layout.states.iter().map(|idx| sub(&gen.k_total, idx, idx)).collect();
        let mut transfers = Vec::new();
        for dis in &gen.dissipators {
            for (s, idx) in layout.states.iter().enumerate() {
                let target = idx
                    .iter()
                    .find_map(|&j| (0..gen.dim()).find(|&i| dis.v[(i, j)] != 0.0).map(|i| sector_of[i]));
                if let Some(t) = target {
                    let to_idx = &layout.states[t];
                    transfers.push(Transfer {
                        from: s,
                        to: t,
                        v: sub(&dis.v, to_idx, idx),
                        lam: sub(&dis.lam, to_idx, idx),
                    });
                }
            }
        }
        Self { layout, omega, k_blocks, transfers, diagonal, border, dim: gen.dim() }
    }

    fn len(&self) -> usize {
        self.layout.len
    }

    fn trace(&self, x: &DVector<C64>) -> C64 {
        self.diagonal.iter().map(|&i| x[i]).sum()
    }

    /// `L(ρ)` on block-diagonal `ρ`, without the border term.
    fn apply_generator(&self, x: &DVector<C64>) -> DVector<C64> {
        let mut y = DVector::zeros(self.len());
        let blocks: Vec<DMatrix<C64>> = (0..self.layout.states.len()).map(|s| self.layout.block(x, s)).collect();
        for (s, rho) in blocks.iter().enumerate() {
            let k = &self.k_blocks[s];
            let out = -(k * rho) - rho * k.transpose();
            let off = self.layout.offsets[s];
            for (i, z) in out.iter().enumerate() {
                y[off + i] += z;
            }
        }
        for t in &self.transfers {
            let rho = &blocks[t.from];
            let out = &t.v * rho * t.lam.transpose() + &t.lam * rho * t.v.transpose();
            let off = self.layout.offsets[t.to];
            for (i, z) in out.iter().enumerate() {
                y[off + i] += z;
            }
        }
        for i in 0..self.len() {
            y[i] -= C64::i() * self.omega[i] * x[i];
        }
        y
    }

    fn apply(&self, x: &DVector<C64>) -> DVector<C64> {
        let mut y = self.apply_generator(x);
        let shift = self.trace(x) * (self.border / self.dim as f64);
        for &i in &self.diagonal {
            y[i] += shift;
        }
        y
    }

    fn rhs(&self) -> DVector<C64> {
        let mut b = DVector::zeros(self.len());
        for &i in &self.diagonal {
            b[i] = C64::new(self.border / self.dim as f64, 0.0);
        }
        b
    }
}

/// Block-Jacobi preconditioner over Bohr-frequency windows.
struct Preconditioner {
    blocks: Vec<(Vec<usize>, LU<C64, Dyn, Dyn>)>,
}

impl Preconditioner {
    fn new(gen: &Generator, op: &BlockOperator, width: f64) -> Result<Self> {
        let pairs = op.layout.pairs();
        let n = pairs.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| op.omega[a].total_cmp(&op.omega[b]));

        let mut clusters: Vec<Vec<usize>> = Vec::new();
        let zero: Vec<usize> = order.iter().copied().filter(|&i| op.omega[i].abs() <= width).collect();
        let mut current: Vec<usize> = Vec::new();
        let mut start = f64::NEG_INFINITY;
        for &i in &order {
            let w = op.omega[i];
            if w.abs() <= width {
                continue;
            }
            if current.is_empty() || w - start > width || current.len() >= MAX_BLOCK || (start < 0.0) != (w < 0.0) {
                if !current.is_empty() {
                    clusters.push(std::mem::take(&mut current));
                }
                start = w;
            }
            current.push(i);
        }
        if !current.is_empty() {
            clusters.push(current);
        }
        clusters.push(zero);

        let is_diag: Vec<bool> = pairs.iter().map(|p| p.0 == p.1).collect();
        let scale = op.border / op.dim as f64;
        let mut blocks = Vec::with_capacity(clusters.len());
        for cluster in clusters {
            let size = cluster.len();
            let a = DMatrix::from_fn(size, size, |r, c| {
                let (m, nn) = pairs[cluster[r]];
                let (k, l) = pairs[cluster[c]];
                let mut e = gen.entry(m, nn, k, l);
                if is_diag[cluster[r]] && is_diag[cluster[c]] {
                    e += scale;
                }
                e
            });
            let lu = a.lu();
            if !lu.is_invertible() {
                return Err(QarError::SolverFailure("singular preconditioner block".into()));
            }
            blocks.push((cluster, lu));
        }
        Ok(Self { blocks })
    }

    fn apply(&self, r: &DVector<C64>) -> DVector<C64> {
        let mut z = DVector::zeros(r.len());
        for (idx, lu) in &self.blocks {
            let local = DVector::from_iterator(idx.len(), idx.iter().map(|&i| r[i]));
            let sol = lu.solve(&local).expect("invertible block");
            for (a, &i) in idx.iter().enumerate() {
                z[i] = sol[a];
            }
        }
        z
    }
}

/// Restarted, right-preconditioned GMRES. Returns the solution and the final
/// relative residual.
fn gmres(
    op: &BlockOperator,
    prec: &Preconditioner,
    b: &DVector<C64>,
    mut x: DVector<C64>,
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> (DVector<C64>, f64, usize) {
    let bnorm = b.norm().max(f64::MIN_POSITIVE);
    let mut iters = 0;
    let mut rel = f64::INFINITY;
    while iters < max_iter {
        let r = b - op.apply(&x);
        let beta = r.norm();
        rel = beta / bnorm;
        if rel <= tol {
            break;
        }
        let mut basis: Vec<DVector<C64>> = vec![r / C64::new(beta, 0.0)];
        let mut hess = DMatrix::<C64>::zeros(restart + 1, restart);
        let mut cs = vec![C64::new(0.0, 0.0); restart];
        let mut sn = vec![C64::new(0.0, 0.0); restart];
        let mut g = DVector::<C64>::zeros(restart + 1);
        g[0] = C64::new(beta, 0.0);
        let mut k_used = 0;
        for k in 0..restart {
            iters += 1;
            let mut w = op.apply(&prec.apply(&basis[k]));
            for (i, v) in basis.iter().enumerate() {
                let h = v.dotc(&w);
                hess[(i, k)] = h;
                w -= v * h;
            }
            // one reorthogonalization pass
            for (i, v) in basis.iter().enumerate() {
                let h = v.dotc(&w);
                hess[(i, k)] += h;
                w -= v * h;
            }
            let hnorm = w.norm();
            hess[(k + 1, k)] = C64::new(hnorm, 0.0);
            for i in 0..k {
                let t = cs[i].conj() * hess[(i, k)] + sn[i].conj() * hess[(i + 1, k)];
                hess[(i + 1, k)] = -sn[i] * hess[(i, k)] + cs[i] * hess[(i + 1, k)];
                hess[(i, k)] = t;
            }
            let (a, bb) = (hess[(k, k)], hess[(k + 1, k)]);
            let denom = (a.norm_sqr() + bb.norm_sqr()).sqrt();
            if denom == 0.0 {
                k_used = k;
                break;
            }
            cs[k] = a / denom;
            sn[k] = bb / denom;
            hess[(k, k)] = C64::new(denom, 0.0);
            hess[(k + 1, k)] = C64::new(0.0, 0.0);
            g[k + 1] = -sn[k] * g[k];
            g[k] = cs[k].conj() * g[k];
            k_used = k + 1;
            rel = g[k + 1].norm() / bnorm;
            if rel <= tol || hnorm == 0.0 || iters >= max_iter {
                break;
            }
            basis.push(w / C64::new(hnorm, 0.0));
        }
        // back substitution
        let mut y = DVector::<C64>::zeros(k_used);
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= hess[(i, j)] * y[j];
            }
            y[i] = s / hess[(i, i)];
        }
        let mut update = DVector::<C64>::zeros(b.len());
        for (i, yi) in y.iter().enumerate() {
            update += &basis[i] * *yi;
        }
        x += prec.apply(&update);
        if rel <= tol {
            let true_rel = (b - op.apply(&x)).norm() / bnorm;
            rel = true_rel;
            if true_rel <= 10.0 * tol {
                break;
            }
        }
    }
    (x, rel, iters)
}

/// Steady state of a large generator; returns the full `d × d` matrix.
pub(super) fn solve(gen: &Generator, opts: &SolverOptions) -> Result<DMatrix<C64>> {
    let rates = gen.population_rates();
    let d = gen.dim();
    let sv = rates.clone().singular_values();
    let smax = sv.max();
    let nullity = sv.iter().filter(|&&s| s <= 1e-13 * smax).count();
    if nullity > 1 {
        return Err(QarError::NonUniqueSteadyState { nullity });
    }
    let border = (0..d).map(|m| rates[(m, m)].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);

    let op = BlockOperator::new(gen, border);
    let prec = Preconditioner::new(gen, &op, opts.cluster_width)?;
    let b = op.rhs();
    let x0 = prec.apply(&b);
    let (x, rel, iters) = gmres(&op, &prec, &b, x0, opts.krylov_tolerance, opts.restart, opts.max_iterations);
    log::debug!("GMRES finished after {iters} iterations, relative residual {rel:.2e}");
    if !(rel <= 1e3 * opts.krylov_tolerance) {
        return Err(QarError::SolverFailure(format!(
            "GMRES stalled at relative residual {rel:.2e} after {iters} iterations"
        )));
    }
    Ok(op.layout.to_full(&x, d))
}

#[cfg(test)]
pub(super) fn block_apply_for_test(gen: &Generator, rho: &DMatrix<C64>) -> DMatrix<C64> {
    let op = BlockOperator::new(gen, 0.0);
    let mut x = DVector::zeros(op.len());
    for (s, idx) in op.layout.states.iter().enumerate() {
        let n = idx.len();
        for (c, &nn) in idx.iter().enumerate() {
            for (a, &m) in idx.iter().enumerate() {
                x[op.layout.offsets[s] + a + c * n] = rho[(m, nn)];
            }
        }
    }
    op.layout.to_full(&op.apply_generator(&x), gen.dim())
}
