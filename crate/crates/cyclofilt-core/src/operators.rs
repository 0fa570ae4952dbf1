//! Matrix Fourier-coefficient operators S, P, Q of the filtering system and
//! the Hermitian positive-definite block solve for the C coefficients.
//!
//! All three families depend on a single integer index (a sum for S, a
//! difference for P and Q), so each distinct index is integrated once by
//! midpoint quadrature and tiled into the block matrices.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::exec::indexed_map;
use crate::increments::IncrementSpec;
use crate::spectral::{
    beta_chi_ratio, combined_density, hermitian_inverse, InverseReport, SpectralDensityGrid,
};

/// Fourier coefficients (1/2π)∫ e^{i·sign·λ·d} K(λ) dλ for d = min_d..=max_d,
/// by midpoint quadrature on the kernel's grid.
pub fn fourier_diff_table(
    kernel: &SpectralDensityGrid,
    min_d: i64,
    max_d: i64,
    sign: f64,
) -> Vec<DMatrix<Complex64>> {
    let w = kernel.weight();
    let count = (max_d - min_d + 1) as usize;
    indexed_map(count, |i| {
        let d = min_d + i as i64;
        let mut acc: DMatrix<Complex64> = DMatrix::zeros(kernel.t, kernel.t);
        for (v, &l) in kernel.values.iter().zip(&kernel.lambdas) {
            let phase = Complex64::new(0.0, sign * l * d as f64).exp();
            acc += v * (phase * w);
        }
        acc / Complex64::new(2.0 * std::f64::consts::PI, 0.0)
    })
}

/// The operator families at truncation L, stored per index and tiled on
/// access:
/// S^μ̄_{k,j} = (1/2π)∫ e^{+iλ(k+j)} (|β|²/|χ|²) p⁻¹ g dλ,
/// P^μ̄_{k,j} = (1/2π)∫ e^{iλ(k-j)} (|β|²/|χ|²) p⁻¹ dλ,
/// Q_{k,j}   = (1/2π)∫ e^{iλ(j-k)} ·½(g p⁻¹ f + f p⁻¹ g) dλ
/// (g p⁻¹ f = f p⁻¹ g identically since both equal g − |β|²g p⁻¹ g; the
/// symmetrization only removes roundoff skew). The linear system solves for
/// the conjugated coefficient blocks and solve_for_c undoes the conjugation.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    pub t: usize,
    /// Row-block truncation L.
    pub l: usize,
    pub n_gamma: usize,
    /// S sums δ = (l+1)+(k-n(γ)), δ ∈ [1-n(γ), 2L-1]; entry i is δ = i - n(γ) + 1.
    s_diffs: Vec<DMatrix<Complex64>>,
    /// P differences d = j-k for d ∈ [0, L-1]; negative d via adjoint.
    p_diffs: Vec<DMatrix<Complex64>>,
    /// Q differences, same layout as P.
    q_diffs: Vec<DMatrix<Complex64>>,
    /// Report from the pointwise inversion of p.
    pub inverse_report: InverseReport,
}

impl OperatorSet {
    /// Matrix entry (𝐒_μ̄)_{l,k} = S^μ̄_{l+1, k-n(γ)}; l ∈ [0,L), k ∈ [0, L+n(γ)).
    pub fn s_block(&self, l: usize, k: usize) -> &DMatrix<Complex64> {
        let delta = (l + 1 + k) as i64 - self.n_gamma as i64;
        let idx = (delta + self.n_gamma as i64 - 1) as usize;
        &self.s_diffs[idx]
    }

    /// Matrix entry (𝐏_μ̄)_{l,k} = P^μ̄_{l,k} (depends on k-l only).
    pub fn p_block(&self, l: usize, k: usize) -> DMatrix<Complex64> {
        let d = k as i64 - l as i64;
        if d >= 0 {
            self.p_diffs[d as usize].clone()
        } else {
            self.p_diffs[(-d) as usize].adjoint()
        }
    }

    /// Matrix entry (𝐐)_{l,k} = Q_{l,k} (depends on k-l only).
    pub fn q_block(&self, l: usize, k: usize) -> DMatrix<Complex64> {
        let d = k as i64 - l as i64;
        if d >= 0 {
            self.q_diffs[d as usize].clone()
        } else {
            self.q_diffs[(-d) as usize].adjoint()
        }
    }

    /// Dense (L·T)×(L·T) assembly of 𝐏_μ̄.
    pub fn p_full(&self) -> DMatrix<Complex64> {
        let (t, l) = (self.t, self.l);
        let mut full = DMatrix::zeros(l * t, l * t);
        for bl in 0..l {
            for bk in 0..l {
                let block = self.p_block(bl, bk);
                full.view_mut((bl * t, bk * t), (t, t)).copy_from(&block);
            }
        }
        full
    }

    /// Quadratic form ⟨𝐐a, a⟩ over real coefficient blocks a(0..N).
    pub fn q_form(&self, a: &[DVector<f64>]) -> Result<f64> {
        if a.len() > self.l {
            return Err(Error::Input(format!(
                "Q truncation too small: {} blocks for L = {}",
                a.len(),
                self.l
            )));
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for (bl, al) in a.iter().enumerate() {
            for (bk, ak) in a.iter().enumerate() {
                let q = self.q_block(bl, bk);
                for r in 0..self.t {
                    for c in 0..self.t {
                        acc += Complex64::new(al[r], 0.0) * q[(r, c)] * Complex64::new(ak[c], 0.0);
                    }
                }
            }
        }
        Ok(acc.re)
    }
}

/// Compute the operator families by midpoint quadrature at truncation L.
/// `ridge` is forwarded to the pointwise inversion of p (relative scale).
pub fn fourier_blocks(
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
    spec: &IncrementSpec,
    l: usize,
    ridge: Option<f64>,
) -> Result<OperatorSet> {
    if l == 0 {
        return Err(Error::Input("truncation L must be >= 1".into()));
    }
    f.check_same_grid(g)?;
    let n_gamma = spec.n_gamma();
    // Lags beyond half the grid alias on the midpoint quadrature.
    let max_lag = (2 * l - 1).max(n_gamma.saturating_sub(1));
    if max_lag > f.m_grid() / 2 {
        return Err(Error::Input(format!(
            "truncation L = {l} needs lag {max_lag} but grid M = {} resolves only {}; \
             raise the grid size",
            f.m_grid(),
            f.m_grid() / 2
        )));
    }
    let p = combined_density(f, g, spec)?;
    let (p_inv, inverse_report) = hermitian_inverse(&p, ridge)?;
    let r = beta_chi_ratio(spec, &f.lambdas);

    let k_s = p_inv.zip_map(g, |m, pi, gv| pi * gv * Complex64::new(r[m], 0.0))?;
    let k_p = p_inv.map(|m, pi| pi * Complex64::new(r[m], 0.0));
    let k_q = p_inv.zip_map(f, |m, pi, fv| {
        let gp_f = &g.values[m] * pi * fv;
        (&gp_f + gp_f.adjoint()) * Complex64::new(0.5, 0.0)
    })?;

    // S phase is e^{+iλδ}; P stores d ≥ 0 at phase e^{-iλd} so that the
    // (l,k) tile carries the l-k coefficient; Q phase is e^{+iλd}. The
    // orientations come from transposing the row-form one-sidedness
    // conditions into the column solve and matter once T > 1.
    let s_diffs = fourier_diff_table(&k_s, 1 - n_gamma as i64, 2 * l as i64 - 1, 1.0);
    let p_diffs = fourier_diff_table(&k_p, 0, l as i64 - 1, -1.0);
    let q_diffs = fourier_diff_table(&k_q, 0, l as i64 - 1, 1.0);

    for (name, table) in [("S", &s_diffs), ("P", &p_diffs), ("Q", &q_diffs)] {
        if table.iter().any(|m| m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())) {
            return Err(Error::Numerical(format!("non-finite {name} quadrature")));
        }
    }
    Ok(OperatorSet { t: f.t, l, n_gamma, s_diffs, p_diffs, q_diffs, inverse_report })
}

/// Right-hand side 𝐒_μ̄ 𝐚_μ̄: block row l gets Σ_k S_{l+1,k-n(γ)}·a_μ̄(k).
pub fn assemble_rhs(
    a_mu: &[DVector<f64>],
    ops: &OperatorSet,
) -> Result<Vec<DVector<Complex64>>> {
    if a_mu.len() > ops.l + ops.n_gamma {
        return Err(Error::Input(format!(
            "a_μ̄ has {} blocks, S truncation allows {}",
            a_mu.len(),
            ops.l + ops.n_gamma
        )));
    }
    if a_mu.iter().any(|b| b.len() != ops.t) {
        return Err(Error::Input("a_μ̄ block size mismatch".into()));
    }
    Ok(indexed_map(ops.l, |bl| {
        let mut acc: DVector<Complex64> = DVector::zeros(ops.t);
        for (bk, ak) in a_mu.iter().enumerate() {
            let s = ops.s_block(bl, bk);
            let akc = ak.map(|x| Complex64::new(x, 0.0));
            acc += s * akc;
        }
        acc
    }))
}

/// Diagnostics from the 𝐏𝐜 = rhs solve.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SolveReport {
    /// ‖𝐏𝐜 - rhs‖/‖rhs‖.
    pub residual: f64,
    /// Smallest eigenvalue of 𝐏 (inverse-iteration estimate).
    pub p_min_eig: f64,
}

/// Solve 𝐏_μ̄ 𝐜 = rhs by Cholesky factorization of the Hermitian
/// positive-definite block matrix.
pub fn solve_for_c(
    ops: &OperatorSet,
    rhs: &[DVector<Complex64>],
) -> Result<(Vec<DVector<Complex64>>, SolveReport)> {
    if rhs.len() != ops.l || rhs.iter().any(|b| b.len() != ops.t) {
        return Err(Error::Input("rhs shape does not match L, T".into()));
    }
    let n = ops.l * ops.t;
    let p_full = ops.p_full();
    let chol = match p_full.clone().cholesky() {
        Some(c) => c,
        None => {
            let eig = p_full.symmetric_eigen();
            let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            return Err(Error::Numerical(format!(
                "P is not positive definite at L = {} (min eigenvalue {min:.3e})",
                ops.l
            )));
        }
    };
    let mut b: DVector<Complex64> = DVector::zeros(n);
    for (bl, v) in rhs.iter().enumerate() {
        b.rows_mut(bl * ops.t, ops.t).copy_from(v);
    }
    let x = chol.solve(&b);
    if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numerical(format!(
            "linear solve produced non-finite coefficients at L = {}",
            ops.l
        )));
    }
    let resid_vec = &p_full * &x - &b;
    let bnorm = b.norm();
    let residual = if bnorm > 0.0 { resid_vec.norm() / bnorm } else { resid_vec.norm() };

    // Inverse iteration for the smallest eigenvalue; deterministic start.
    let mut v = DVector::from_fn(n, |i, _| Complex64::new(1.0 + (i as f64).sin(), 0.0));
    v /= Complex64::new(v.norm(), 0.0);
    let mut p_min_eig = f64::INFINITY;
    for _ in 0..25 {
        let y = chol.solve(&v);
        let ynorm = y.norm();
        if !(ynorm > 0.0) {
            break;
        }
        v = y / Complex64::new(ynorm, 0.0);
        let rayleigh = (v.adjoint() * &p_full * &v)[(0, 0)].re;
        p_min_eig = rayleigh;
    }
    // The assembled system is the transpose of the row-form one-sidedness
    // conditions, so its unknown is the conjugate of the coefficient blocks.
    let c = (0..ops.l)
        .map(|bl| DVector::from(x.rows(bl * ops.t, ops.t).map(|z| z.conj())))
        .collect();
    Ok((c, SolveReport { residual, p_min_eig }))
}

/// ⟨𝐒a, 𝐏⁻¹𝐒a⟩ given rhs = 𝐒a and the solved blocks c = conj(𝐏⁻¹𝐒a); the
/// plain (unconjugated) pairing restores the Hermitian form in the solve
/// variable.
pub fn s_quadratic(rhs: &[DVector<Complex64>], c: &[DVector<Complex64>]) -> f64 {
    rhs.iter().zip(c).map(|(r, ci)| (r.transpose() * ci)[(0, 0)].re).sum()
}
