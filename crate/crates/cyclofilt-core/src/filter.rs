//! Optimal filter solution: the C coefficients, the spectral characteristic,
//! the mean-square error in both its bilinear and integral forms, taps of the
//! increment-side filter, and application to observed data.
//!
//! Scale note: operator blocks follow the 1/2π conventions verbatim, while
//! covariances throughout the library are R(m) = ∫ e^{imλ}·density·dλ, so
//! reported errors carry the matching factor 2π.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::exec::indexed_map;
use crate::increments::{beta_at, chi_at, expand_increment_coeffs, IncrementSpec};
use crate::lift::{single_value_coefficients, LiftedCoefficients};
use crate::operators::{
    assemble_rhs, fourier_blocks, s_quadratic, solve_for_c, OperatorSet, SolveReport,
};
use crate::spectral::{beta_chi_ratio, combined_density, hermitian_inverse, SpectralDensityGrid};

/// Tail-energy cutoff for tap truncation.
pub const TAP_TAIL_TOL: f64 = 1e-6;
/// Relative Δ stabilization target for the adaptive truncation.
pub const ADAPT_REL_TOL: f64 = 1e-4;
/// Adaptive truncation start and cap.
pub const ADAPT_L_START: usize = 32;
pub const ADAPT_L_CAP: usize = 1024;

/// Truncation policy for the operator system.
#[derive(Debug, Clone, Copy)]
pub enum TruncationPolicy {
    Fixed(usize),
    Adaptive { start: usize, cap: usize },
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        TruncationPolicy::Adaptive { start: ADAPT_L_START, cap: ADAPT_L_CAP }
    }
}

/// Knobs for the solve pipeline.
#[derive(Debug, Clone, Copy, Default)]
pub struct FilterOptions {
    pub truncation: TruncationPolicy,
    /// Relative ridge forwarded to the pointwise inversion of p.
    pub ridge: Option<f64>,
}

/// Complete filter solution on a density grid.
#[derive(Debug, Clone)]
pub struct FilterSolution {
    pub t: usize,
    pub n_gamma: usize,
    /// Accepted truncation L.
    pub l: usize,
    /// True when the adaptive loop stabilized below the tolerance.
    pub l_converged: bool,
    /// Spectral characteristic h⃗_μ̄(λ_m), one T-vector per grid frequency.
    pub h: Vec<DVector<Complex64>>,
    /// Solved block coefficients c⃗_μ̄(k), k = 0..L-1.
    pub c: Vec<DVector<Complex64>>,
    /// Mean-square error (2π-scaled bilinear form of the theorem).
    pub delta: f64,
    /// The same error recomputed through the double-integral form.
    pub delta_integral: f64,
    /// ⟨𝐒a, 𝐏⁻¹𝐒a⟩ and ⟨𝐐a, a⟩ pieces (paper scale, before 2π).
    pub s_term: f64,
    pub q_term: f64,
    /// Time-domain taps s(k), k = 0..taps.len()-1, truncated at tail energy.
    pub taps: Vec<DVector<f64>>,
    /// Tail energy fraction dropped by the truncation.
    pub tap_tail_mass: f64,
    /// Largest imaginary defect seen when realizing the real taps.
    pub tap_imag_defect: f64,
    /// Largest norm among negative-index tap coefficients (one-sidedness).
    pub tap_negative_defect: f64,
    pub solve_report: SolveReport,
}

/// Differenced coefficient blocks: a⃗_{-μ̄}(m) = Σ_{l=max(m,0)}^{min(m+n(γ),N)}
/// e_γ(l-m)·ā(l) for m ∈ [-n(γ), N], reindexed as 𝐚_μ̄(k) = a⃗_{-μ̄}(k-n(γ)).
pub fn a_minus_mu(a: &LiftedCoefficients, spec: &IncrementSpec) -> Result<Vec<DVector<f64>>> {
    let e = expand_increment_coeffs(spec)?.to_f64();
    let n_gamma = e.len() - 1;
    let n = a.n_horizon() as i64;
    let t = a.t;
    let mut out = Vec::with_capacity((n_gamma as i64 + n + 1) as usize);
    for m in -(n_gamma as i64)..=n {
        let mut acc = DVector::zeros(t);
        let lo = m.max(0);
        let hi = (m + n_gamma as i64).min(n);
        for l in lo..=hi {
            acc += &a.blocks[l as usize] * e[(l - m) as usize];
        }
        out.push(acc);
    }
    Ok(out)
}

/// A(e^{-iλ}) = Σ_k ā(k)e^{-iλk} on the grid.
pub(crate) fn a_symbol(a: &LiftedCoefficients, lambdas: &[f64]) -> Vec<DVector<Complex64>> {
    lambdas
        .iter()
        .map(|&l| {
            let mut acc: DVector<Complex64> = DVector::zeros(a.t);
            for (k, b) in a.blocks.iter().enumerate() {
                let ph = Complex64::new(0.0, -l * k as f64).exp();
                acc += b.map(|x| Complex64::new(x, 0.0) * ph);
            }
            acc
        })
        .collect()
}

/// C_μ̄(e^{iλ}) = Σ_k c(k)e^{iλ(k+1)} on the grid.
pub(crate) fn c_symbol(
    c: &[DVector<Complex64>],
    lambdas: &[f64],
    t: usize,
) -> Vec<DVector<Complex64>> {
    lambdas
        .iter()
        .map(|&l| {
            let mut acc: DVector<Complex64> = DVector::zeros(t);
            for (k, b) in c.iter().enumerate() {
                let ph = Complex64::new(0.0, l * (k as f64 + 1.0)).exp();
                acc += b * ph;
            }
            acc
        })
        .collect()
}

struct Symbols {
    /// χ_μ̄(e^{iλ_m}).
    chi_plus: Vec<Complex64>,
    /// β(iλ_m).
    beta: Vec<Complex64>,
    /// |β|²/|χ|².
    ratio: Vec<f64>,
    a_sym: Vec<DVector<Complex64>>,
    c_sym: Vec<DVector<Complex64>>,
    p_inv: SpectralDensityGrid,
}

fn build_symbols(
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
    spec: &IncrementSpec,
    a: &LiftedCoefficients,
    c: &[DVector<Complex64>],
    ridge: Option<f64>,
) -> Result<Symbols> {
    let p = combined_density(f, g, spec)?;
    let (p_inv, _) = hermitian_inverse(&p, ridge)?;
    let chi_plus: Vec<Complex64> = f.lambdas.iter().map(|&l| chi_at(spec, -l)).collect();
    let beta: Vec<Complex64> = f.lambdas.iter().map(|&l| beta_at(spec, l)).collect();
    let ratio = beta_chi_ratio(spec, &f.lambdas);
    Ok(Symbols {
        chi_plus,
        beta,
        ratio,
        a_sym: a_symbol(a, &f.lambdas),
        c_sym: c_symbol(c, &f.lambdas, f.t),
        p_inv,
    })
}

/// Row u₂ᵀ(λ) = χ_μ̄(e^{iλ})·A(e^{-iλ})ᵀ·g(λ) − C_μ̄(e^{iλ})ᵀ, the common
/// factor of the spectral characteristic and the tap symbol.
fn u2_row(sym: &Symbols, g: &SpectralDensityGrid, m: usize) -> nalgebra::RowDVector<Complex64> {
    let a_row = sym.a_sym[m].transpose();
    let c_row = sym.c_sym[m].transpose();
    a_row * &g.values[m] * sym.chi_plus[m] - c_row
}

/// Spectral characteristic per the theorem:
/// h⃗ᵀ = [χ_μ̄(e^{iλ})Aᵀg − Cᵀ]·p⁻¹·conj(β)/χ_μ̄(e^{iλ}).
fn characteristic(sym: &Symbols, g: &SpectralDensityGrid) -> Vec<DVector<Complex64>> {
    indexed_map(g.m_grid(), |m| {
        let row = u2_row(sym, g, m) * &sym.p_inv.values[m];
        let scale = sym.beta[m].conj() / sym.chi_plus[m];
        (row * scale).transpose()
    })
}

/// Both MSE forms at the solved coefficients (2π scale applied).
fn mse_forms(
    sym: &Symbols,
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
    s_term: f64,
    q_term: f64,
) -> (f64, f64) {
    let w = f.weight();
    let two_pi = 2.0 * std::f64::consts::PI;
    let integral: f64 = (0..f.m_grid())
        .map(|m| {
            let pi = &sym.p_inv.values[m];
            let b2 = sym.beta[m].norm_sqr();
            let chi2 = sym.chi_plus[m].norm_sqr();
            // I₁ row: χ⁺Aᵀf + |β|²Cᵀ, kernel p⁻¹ g p⁻¹.
            let u1 = sym.a_sym[m].transpose() * &f.values[m] * sym.chi_plus[m]
                + sym.c_sym[m].transpose() * Complex64::new(b2, 0.0);
            let q1 = (&u1 * pi * &g.values[m] * pi * u1.adjoint())[(0, 0)].re / chi2;
            // I₂ row: χ⁺Aᵀg − Cᵀ, kernel p⁻¹ f p⁻¹, weight |β|²/|χ|².
            let u2 = u2_row(sym, g, m);
            let q2 = (&u2 * pi * &f.values[m] * pi * u2.adjoint())[(0, 0)].re * b2 / chi2;
            w * (q1 + q2)
        })
        .sum::<f64>()
        / two_pi;
    (two_pi * (s_term + q_term), two_pi * integral)
}

/// Tap symbol hᵀ(λ) = [χ⁺Aᵀg − Cᵀ]p⁻¹·(|β|²/|χ|²) and its Fourier
/// coefficients s(k)ᵀ = (1/2π)∫ hᵀ e^{iλk} dλ. Returns taps for k ≥ 0
/// truncated at cumulative tail energy, plus defect diagnostics.
fn taps_from_symbols(
    sym: &Symbols,
    g: &SpectralDensityGrid,
) -> (Vec<DVector<f64>>, f64, f64, f64) {
    let m_grid = g.m_grid();
    let t = g.t;
    let w = g.weight();
    let two_pi = 2.0 * std::f64::consts::PI;
    let rows: Vec<nalgebra::RowDVector<Complex64>> = indexed_map(m_grid, |m| {
        u2_row(sym, g, m) * &sym.p_inv.values[m] * Complex64::new(sym.ratio[m], 0.0)
    });
    let coeff = |k: i64| -> DVector<Complex64> {
        let mut acc: DVector<Complex64> = DVector::zeros(t);
        for (m, row) in rows.iter().enumerate() {
            let ph = Complex64::new(0.0, g.lambdas[m] * k as f64).exp();
            acc += row.transpose() * (ph * w);
        }
        acc / Complex64::new(two_pi, 0.0)
    };
    let k_max = (m_grid / 2).saturating_sub(1);
    let all: Vec<DVector<Complex64>> = indexed_map(k_max + 1, |k| coeff(k as i64));
    let energies: Vec<f64> = all.iter().map(|v| v.norm_squared()).collect();
    let total: f64 = energies.iter().sum();
    // Smallest prefix whose dropped suffix energy stays within tolerance.
    let mut suffix = vec![0.0; all.len() + 1];
    for k in (0..all.len()).rev() {
        suffix[k] = suffix[k + 1] + energies[k];
    }
    let mut keep = all.len();
    for (k, &s) in suffix.iter().enumerate() {
        if s <= TAP_TAIL_TOL * total {
            keep = k;
            break;
        }
    }
    let keep = keep.max(1).min(all.len());
    let tail_mass = if total > 0.0 { suffix[keep] / total } else { 0.0 };
    let mut imag_defect = 0.0_f64;
    let taps: Vec<DVector<f64>> = all[..keep]
        .iter()
        .map(|v| {
            imag_defect = imag_defect.max(v.iter().map(|z| z.im.abs()).fold(0.0, f64::max));
            v.map(|z| z.re)
        })
        .collect();
    // One-sidedness: negative-index coefficients should vanish.
    let scale = total.sqrt().max(f64::MIN_POSITIVE);
    let negative_defect = (1..=16)
        .map(|j| coeff(-(j as i64)).norm() / scale)
        .fold(0.0_f64, f64::max);
    (taps, tail_mass, imag_defect, negative_defect)
}

/// Solve at a fixed operator set (internal; drives all public entry points).
fn solve_with_ops(
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
    spec: &IncrementSpec,
    a: &LiftedCoefficients,
    ops: &OperatorSet,
    ridge: Option<f64>,
    want_symbols: bool,
) -> Result<(f64, f64, f64, SolveReport, Vec<DVector<Complex64>>, Option<(Symbols, f64, f64)>)>
{
    let a_mu = a_minus_mu(a, spec)?;
    let rhs = assemble_rhs(&a_mu, ops)?;
    let (c, solve_report) = solve_for_c(ops, &rhs)?;
    let s_term = s_quadratic(&rhs, &c);
    let q_term = ops.q_form(&a.blocks)?;
    if !want_symbols {
        return Ok((s_term, q_term, f64::NAN, solve_report, c, None));
    }
    let sym = build_symbols(f, g, spec, a, &c, ridge)?;
    let (delta, delta_integral) = mse_forms(&sym, f, g, s_term, q_term);
    Ok((s_term, q_term, delta, solve_report, c, Some((sym, delta, delta_integral))))
}

/// Error value and C coefficients at a fixed truncation; used by the robust
/// ascent where many density pairs are scored against one functional.
pub(crate) fn delta_and_c(
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
    spec: &IncrementSpec,
    a: &LiftedCoefficients,
    l: usize,
    ridge: Option<f64>,
) -> Result<(f64, Vec<DVector<Complex64>>)> {
    let ops = fourier_blocks(f, g, spec, l, ridge)?;
    let (s_term, q_term, _, _, c, _) = solve_with_ops(f, g, spec, a, &ops, ridge, false)?;
    Ok((2.0 * std::f64::consts::PI * (s_term + q_term), c))
}

/// Full pipeline: adaptive (or fixed) truncation, C solve, characteristic,
/// MSE in both forms with a 1e-6 consistency check, and taps.
pub fn solve_filter(
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
    spec: &IncrementSpec,
    a: &LiftedCoefficients,
    opts: FilterOptions,
) -> Result<FilterSolution> {
    f.check_same_grid(g)?;
    if a.t != f.t {
        return Err(Error::Input("coefficient block size must match density dimension".into()));
    }
    if f.t != spec.period {
        return Err(Error::Input(format!(
            "density dimension {} does not match spec period {}",
            f.t, spec.period
        )));
    }
    let n_blocks_min = a.n_horizon() + 1;
    // Largest L whose lags the quadrature grid still resolves.
    let l_grid = ((f.m_grid() / 2 + 1) / 2).max(1);
    let (mut l, cap, adaptive) = match opts.truncation {
        TruncationPolicy::Fixed(l) => (l.max(n_blocks_min), l.max(n_blocks_min), false),
        TruncationPolicy::Adaptive { start, cap } => {
            let cap = cap.max(n_blocks_min).min(l_grid.max(n_blocks_min));
            (start.max(n_blocks_min).min(cap), cap, true)
        }
    };
    let mut prev_delta: Option<f64> = None;
    let mut l_converged = !adaptive;
    loop {
        let ops = fourier_blocks(f, g, spec, l, opts.ridge)?;
        let (s_term, q_term, _, solve_report, c, _) =
            solve_with_ops(f, g, spec, a, &ops, opts.ridge, false)?;
        let delta_paper = s_term + q_term;
        let stabilized = prev_delta
            .map(|p| (delta_paper - p).abs() <= ADAPT_REL_TOL * delta_paper.abs().max(1e-300))
            .unwrap_or(false);
        if !adaptive || stabilized || l >= cap {
            if adaptive {
                l_converged = stabilized;
            }
            let sym = build_symbols(f, g, spec, a, &c, opts.ridge)?;
            let (delta, delta_integral) = mse_forms(&sym, f, g, s_term, q_term);
            let rel = (delta - delta_integral).abs() / delta.abs().max(1e-300);
            if rel > 1e-6 {
                return Err(Error::Numerical(format!(
                    "MSE forms disagree (bilinear {delta:.6e} vs integral {delta_integral:.6e}, \
                     rel {rel:.2e}); truncation L = {l} too small"
                )));
            }
            let h = characteristic(&sym, g);
            let (taps, tap_tail_mass, tap_imag_defect, tap_negative_defect) =
                taps_from_symbols(&sym, g);
            return Ok(FilterSolution {
                t: f.t,
                n_gamma: spec.n_gamma(),
                l,
                l_converged,
                h,
                c,
                delta,
                delta_integral,
                s_term,
                q_term,
                taps,
                tap_tail_mass,
                tap_imag_defect,
                tap_negative_defect,
                solve_report,
            });
        }
        prev_delta = Some(delta_paper);
        l = (l * 2).min(cap);
    }
}

/// Spectral characteristic built from arbitrary coefficient blocks at a
/// density pair. Every block choice yields an admissible one-sided filter;
/// the solved blocks give the optimal one.
pub fn characteristic_for_coefficients(
    c: &[DVector<Complex64>],
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
    spec: &IncrementSpec,
    a: &LiftedCoefficients,
    ridge: Option<f64>,
) -> Result<Vec<DVector<Complex64>>> {
    f.check_same_grid(g)?;
    if a.t != f.t || c.iter().any(|b| b.len() != f.t) {
        return Err(Error::Input("coefficient blocks do not match the density dimension".into()));
    }
    let sym = build_symbols(f, g, spec, a, c, ridge)?;
    Ok(characteristic(&sym, g))
}

/// Mean-square error of an arbitrary spectral characteristic at (f, g):
/// Δ(h; f, g) = Σ_m w·[(Aᵀ − βhᵀ)·g·(Aᵀ − βhᵀ)^H + hᵀ·f·h̄] evaluated on
/// the quadrature grid. At the solved characteristic this reproduces the
/// integral MSE form exactly.
pub fn delta_of_characteristic(
    h: &[DVector<Complex64>],
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
    spec: &IncrementSpec,
    a: &LiftedCoefficients,
) -> Result<f64> {
    f.check_same_grid(g)?;
    if a.t != f.t || h.len() != f.m_grid() || h.iter().any(|v| v.len() != f.t) {
        return Err(Error::Input("characteristic does not match the density grid".into()));
    }
    let a_sym = a_symbol(a, &f.lambdas);
    let w = f.weight();
    Ok((0..f.m_grid())
        .map(|m| {
            let beta = beta_at(spec, f.lambdas[m]);
            let e_row = a_sym[m].transpose() - h[m].transpose() * beta;
            let h_row = h[m].transpose();
            let i1 = (&e_row * &g.values[m] * e_row.adjoint())[(0, 0)].re;
            let i2 = (&h_row * &f.values[m] * h_row.adjoint())[(0, 0)].re;
            w * (i1 + i2)
        })
        .sum())
}

/// Mean-square error of the one-sided estimator with tap blocks s(k) on the
/// observed increments, evaluated at (f, g). The tap symbol σ(λ) = Σ s(k)e^{-iλk}
/// relates to the spectral characteristic by hᵀ = σᵀ·χ(e^{-iλ})/β, so
/// Δ = Σ_m w·[(Aᵀ − σᵀχ⁻)·g·(·)^H + σᵀ·f·σ̄·(|χ|²/|β|²)]. Any real tap
/// sequence is admissible, which makes this the comparator for saddle-point
/// checks against perturbed estimators.
pub fn delta_of_taps(
    taps: &[DVector<f64>],
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
    spec: &IncrementSpec,
    a: &LiftedCoefficients,
) -> Result<f64> {
    f.check_same_grid(g)?;
    if a.t != f.t || taps.is_empty() || taps.iter().any(|v| v.len() != f.t) {
        return Err(Error::Input("tap blocks do not match the density dimension".into()));
    }
    let a_sym = a_symbol(a, &f.lambdas);
    let ratio = beta_chi_ratio(spec, &f.lambdas);
    let w = f.weight();
    Ok((0..f.m_grid())
        .map(|m| {
            let l = f.lambdas[m];
            let mut sigma: DVector<Complex64> = DVector::zeros(f.t);
            for (k, s) in taps.iter().enumerate() {
                let ph = Complex64::new(0.0, -l * k as f64).exp();
                sigma += s.map(|x| Complex64::new(x, 0.0) * ph);
            }
            let chi_minus = chi_at(spec, l);
            let s_row = sigma.transpose();
            let e_row = a_sym[m].transpose() - &s_row * chi_minus;
            let i1 = (&e_row * &g.values[m] * e_row.adjoint())[(0, 0)].re;
            let i2 = (&s_row * &f.values[m] * s_row.adjoint())[(0, 0)].re / ratio[m];
            w * (i1 + i2)
        })
        .sum())
}

/// Mirror frames ζ⃗(-m) of a most-recent-first scalar past, then the frame
/// increments y_ζ(-k) = Σ_j e_γ(j)·ζ⃗(-k-j).
fn increment_frames(
    zeta_past: &[f64],
    spec: &IncrementSpec,
    frames_needed: usize,
) -> Result<Vec<DVector<f64>>> {
    let t = spec.period;
    let e = expand_increment_coeffs(spec)?.to_f64();
    let n_gamma = e.len() - 1;
    let need_frames = frames_needed + n_gamma;
    let need = need_frames * t;
    if zeta_past.len() < need {
        return Err(Error::Input(format!(
            "insufficient history: need {need} past values, got {}",
            zeta_past.len()
        )));
    }
    let (frames, _) = crate::lift::mirror_frames(&zeta_past[..need], t)?;
    Ok((0..frames_needed)
        .map(|k| {
            let mut acc = DVector::zeros(t);
            for (j, ej) in e.iter().enumerate() {
                acc += &frames[k + j] * *ej;
            }
            acc
        })
        .collect())
}

/// Apply the filter: Âξ = Σ_k ā(k)ᵀζ⃗(-k) − Σ_k s(k)ᵀ·y_ζ(-k) over the
/// truncated taps. `zeta_past` is most-recent-first: zeta_past[j] = ζ(-j).
pub fn estimate_functional(
    zeta_past: &[f64],
    a: &LiftedCoefficients,
    solution: &FilterSolution,
    spec: &IncrementSpec,
) -> Result<f64> {
    let t = spec.period;
    if a.t != t || solution.t != t {
        return Err(Error::Input("period mismatch between coefficients and solution".into()));
    }
    let needed_plain = (a.n_horizon() + 1) * t;
    if zeta_past.len() < needed_plain {
        return Err(Error::Input(format!(
            "insufficient history: need {needed_plain} past values for the plug-in term"
        )));
    }
    let (frames, _) = crate::lift::mirror_frames(zeta_past, t)?;
    let plug_in: f64 = a.blocks.iter().zip(&frames).map(|(b, z)| b.dot(z)).sum();
    let y = increment_frames(zeta_past, spec, solution.taps.len())?;
    let correction: f64 = solution.taps.iter().zip(&y).map(|(s, yk)| s.dot(yk)).sum();
    Ok(plug_in - correction)
}

/// Single-value entry point: estimate ξ(-M) and its error via the lifted
/// delta functional at (N, p) = ([M/T], M+1-NT).
pub fn solve_single_value(
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
    spec: &IncrementSpec,
    m_lag: usize,
    opts: FilterOptions,
) -> Result<(LiftedCoefficients, FilterSolution)> {
    let a = single_value_coefficients(m_lag, spec.period);
    let sol = solve_filter(f, g, spec, &a, opts)?;
    Ok((a, sol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::increments::Pattern;
    use crate::lift::lift_coefficients;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use std::f64::consts::PI;

    fn one_b_spec() -> IncrementSpec {
        IncrementSpec::new(vec![Pattern { s: 1, mu: 1, r: 1, d: 0.0 }], 1).unwrap()
    }

    fn toy(m_grid: usize, s1: f64, s2: f64) -> (SpectralDensityGrid, SpectralDensityGrid) {
        let f = SpectralDensityGrid::scalar_from_fn(m_grid, move |l| {
            s1 * s1
                / ((Complex64::new(1.0, 0.0) - Complex64::new(0.0, -l).exp()).norm_sqr()
                    * 2.0
                    * PI)
        });
        let g = SpectralDensityGrid::scalar_from_fn(m_grid, move |_| s2 * s2 / (2.0 * PI));
        (f, g)
    }

    #[test]
    fn a_minus_mu_examples() {
        // n(γ) = 0: identity.
        let degenerate =
            IncrementSpec::new(vec![Pattern { s: 1, mu: 1, r: 0, d: 0.0 }], 1).unwrap();
        let a = lift_coefficients(&[1.0, 2.0, 3.0], 1).unwrap();
        let out = a_minus_mu(&a, &degenerate).unwrap();
        assert_eq!(out.len(), 3);
        for (k, b) in out.iter().enumerate() {
            assert_abs_diff_eq!(b[0], a.blocks[k][0]);
        }
        // Single-value functional: a_{-μ̄}(m) = e_γ(N-m)·δ_p.
        let spec = IncrementSpec::new(
            vec![Pattern { s: 1, mu: 1, r: 1, d: 0.0 }, Pattern { s: 2, mu: 1, r: 1, d: 0.0 }],
            1,
        )
        .unwrap();
        let e = expand_increment_coeffs(&spec).unwrap().to_f64();
        let n_lag = 5usize;
        let a = single_value_coefficients(n_lag, 1);
        let out = a_minus_mu(&a, &spec).unwrap();
        let n_gamma = spec.n_gamma();
        assert_eq!(out.len(), n_lag + n_gamma + 1);
        for (idx, b) in out.iter().enumerate() {
            let m = idx as i64 - n_gamma as i64;
            let j = n_lag as i64 - m;
            let expect = if (0..=n_gamma as i64).contains(&j) { e[j as usize] } else { 0.0 };
            assert_abs_diff_eq!(b[0], expect, epsilon = 1e-14);
        }
    }

    #[test]
    fn a_minus_mu_generating_identity() {
        // Coefficient of z^m in χ_μ̄(z⁻¹)·A(z) is Σ_j e(j)·ā(m+j).
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let spec = IncrementSpec::new(
            vec![Pattern { s: 1, mu: 2, r: 1, d: 0.0 }, Pattern { s: 3, mu: 1, r: 1, d: 0.0 }],
            1,
        )
        .unwrap();
        let e = expand_increment_coeffs(&spec).unwrap().to_f64();
        let n_gamma = spec.n_gamma();
        let coeffs: Vec<f64> = (0..7).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = lift_coefficients(&coeffs, 1).unwrap();
        let out = a_minus_mu(&a, &spec).unwrap();
        for (idx, b) in out.iter().enumerate() {
            let m = idx as i64 - n_gamma as i64;
            let direct: f64 = e
                .iter()
                .enumerate()
                .map(|(j, ej)| {
                    let l = m + j as i64;
                    if l >= 0 && (l as usize) < coeffs.len() { ej * coeffs[l as usize] } else { 0.0 }
                })
                .sum();
            assert_abs_diff_eq!(b[0], direct, epsilon = 1e-13);
        }
    }

    #[test]
    fn zero_noise_gives_zero_characteristic_and_error() {
        let spec = one_b_spec();
        let f = SpectralDensityGrid::scalar_from_fn(256, |l| 1.0 / (1.0 + l * l));
        let g = SpectralDensityGrid::scalar_from_fn(256, |_| 0.0);
        let a = lift_coefficients(&[1.0, -0.5, 0.25], 1).unwrap();
        let sol =
            solve_filter(&f, &g, &spec, &a, FilterOptions::default()).unwrap();
        assert!(sol.delta.abs() < 1e-12);
        assert!(sol.h.iter().all(|v| v.norm() < 1e-12));
        assert!(sol.c.iter().all(|v| v.norm() < 1e-12));
        // Estimate reduces to the plug-in functional.
        let past: Vec<f64> = (0..64).map(|j| (j as f64 * 0.7).sin()).collect();
        let est = estimate_functional(&past, &a, &sol, &spec).unwrap();
        let plug: f64 =
            a.flat().iter().enumerate().map(|(k, ak)| ak * past[k]).sum();
        assert_abs_diff_eq!(est, plug, epsilon = 1e-12);
    }

    #[test]
    fn toy_solution_is_consistent_and_one_sided() {
        let spec = one_b_spec();
        let (f, g) = toy(4096, 1.0, 0.6);
        let a = lift_coefficients(&[1.0, 0.5], 1).unwrap();
        let sol = solve_filter(&f, &g, &spec, &a, FilterOptions::default()).unwrap();
        assert!(sol.l_converged, "L did not stabilize");
        assert!(sol.delta > 0.0);
        let rel = (sol.delta - sol.delta_integral).abs() / sol.delta;
        assert!(rel < 1e-6, "forms disagree: {rel}");
        assert!(sol.tap_negative_defect < 1e-4, "taps not one-sided: {}", sol.tap_negative_defect);
        assert!(sol.tap_imag_defect < 1e-10);
        assert!(sol.tap_tail_mass <= TAP_TAIL_TOL * 1.001);
    }

    #[test]
    fn homogeneity_of_solution() {
        let spec = one_b_spec();
        let a = lift_coefficients(&[0.8, -0.3, 0.1], 1).unwrap();
        let (f1, g1) = toy(512, 1.0, 0.8);
        let c = 7.0;
        let fc = f1.map(|_, v| v * Complex64::new(c, 0.0));
        let gc = g1.map(|_, v| v * Complex64::new(c, 0.0));
        let opts = FilterOptions { truncation: TruncationPolicy::Fixed(48), ridge: None };
        let s1 = solve_filter(&f1, &g1, &spec, &a, opts).unwrap();
        let sc = solve_filter(&fc, &gc, &spec, &a, opts).unwrap();
        for (h1, h2) in s1.h.iter().zip(&sc.h) {
            assert!((h1 - h2).norm() < 1e-10);
        }
        let rel = (sc.delta - c * s1.delta).abs() / (c * s1.delta);
        assert!(rel < 1e-8, "Δ homogeneity broken: {rel}");
    }

    #[test]
    fn single_value_consistency() {
        let spec = one_b_spec();
        let (f, g) = toy(512, 1.0, 0.5);
        let opts = FilterOptions { truncation: TruncationPolicy::Fixed(64), ridge: None };
        let (a, sol) = solve_single_value(&f, &g, &spec, 3, opts).unwrap();
        let sol2 = solve_filter(&f, &g, &spec, &a, opts).unwrap();
        assert_abs_diff_eq!(sol.delta, sol2.delta, epsilon = 1e-12);
        // Δ contains the additive ⟨Q_{0,0}δ_p, δ_p⟩ term.
        let ops = fourier_blocks(&f, &g, &spec, 64, None).unwrap();
        let q00 = ops.q_block(3, 3)[(0, 0)].re;
        assert!(sol.q_term >= q00 - 1e-12);
        let past: Vec<f64> = (0..256).map(|j| ((j * j) as f64 * 0.01).cos()).collect();
        let e1 = estimate_functional(&past, &a, &sol, &spec).unwrap();
        assert!(e1.is_finite());
    }

    #[test]
    fn insufficient_history_is_reported() {
        let spec = one_b_spec();
        let (f, g) = toy(256, 1.0, 0.5);
        let a = lift_coefficients(&[1.0], 1).unwrap();
        let sol = solve_filter(&f, &g, &spec, &a, FilterOptions::default()).unwrap();
        let short = vec![0.5; 3];
        assert!(estimate_functional(&short, &a, &sol, &spec).is_err());
    }

    fn blocked_pair(m_grid: usize) -> (SpectralDensityGrid, SpectralDensityGrid, IncrementSpec) {
        let params = crate::spectral::PsarimaParams {
            period: 2,
            phi: vec![vec![1.0], vec![1.0, -0.3]],
            theta: vec![vec![1.0], vec![1.0, 0.4]],
            sigma2: vec![1.0, 1.5],
        };
        let spec = IncrementSpec::new(vec![Pattern { s: 1, mu: 1, r: 1, d: 0.0 }], 2).unwrap();
        let f = crate::spectral::density_from_psarima(&params, m_grid).unwrap();
        let mut g_mat = DMatrix::zeros(2, 2);
        g_mat[(0, 0)] = Complex64::new(0.5, 0.0);
        g_mat[(1, 1)] = Complex64::new(0.8, 0.0);
        g_mat[(0, 1)] = Complex64::new(0.1, 0.05);
        g_mat[(1, 0)] = Complex64::new(0.1, -0.05);
        let g = SpectralDensityGrid::constant(m_grid, g_mat);
        (f, g, spec)
    }

    #[test]
    fn direct_error_functional_matches_the_solved_delta() {
        let spec = one_b_spec();
        let (f, g) = toy(512, 1.0, 0.6);
        let a = lift_coefficients(&[1.0, 0.5, 0.25], 1).unwrap();
        let opts = FilterOptions { truncation: TruncationPolicy::Fixed(32), ridge: None };
        let sol = solve_filter(&f, &g, &spec, &a, opts).unwrap();
        let direct = delta_of_characteristic(&sol.h, &f, &g, &spec, &a).unwrap();
        let rel = (direct - sol.delta_integral).abs() / sol.delta_integral;
        assert!(rel < 1e-10, "direct functional off by {rel}");

        let (f2, g2, spec2) = blocked_pair(512);
        let a2 = lift_coefficients(&[1.0, 0.5, 0.25, 0.125], 2).unwrap();
        let opts2 = FilterOptions { truncation: TruncationPolicy::Fixed(32), ridge: None };
        let sol2 = solve_filter(&f2, &g2, &spec2, &a2, opts2).unwrap();
        let direct2 = delta_of_characteristic(&sol2.h, &f2, &g2, &spec2, &a2).unwrap();
        let rel2 = (direct2 - sol2.delta_integral).abs() / sol2.delta_integral;
        assert!(rel2 < 1e-10, "blocked direct functional off by {rel2}");
        // The orientation of the block system shows up as one-sidedness of
        // the taps once the blocks stop commuting.
        assert!(sol2.tap_negative_defect < 1e-10, "defect {}", sol2.tap_negative_defect);

        let short = vec![DVector::zeros(1); 3];
        assert!(delta_of_characteristic(&short, &f, &g, &spec, &a).is_err());
    }

    #[test]
    fn coefficient_blocks_price_out_through_the_p_form() {
        // Δ(h(C)) = 2π·q_form + 2π·x^H 𝐏 x with x = conj(stacked C): the
        // error of any member of the affine family is the non-causal floor
        // plus the 𝐏 quadratic form, and the solved blocks land exactly on
        // the bilinear value. Dual route through the direct integrand.
        let t1 = {
            let spec = one_b_spec();
            let (f, g) = toy(256, 1.0, 0.6);
            let a = lift_coefficients(&[1.0, 0.5], 1).unwrap();
            (f, g, spec, a)
        };
        let t2 = {
            let (f, g, spec) = blocked_pair(512);
            let a = lift_coefficients(&[1.0, 0.5, 0.25, 0.125], 2).unwrap();
            (f, g, spec, a)
        };
        for (f, g, spec, a) in [t1, t2] {
            let l = if f.t == 1 { 24 } else { 32 };
            let opts = FilterOptions { truncation: TruncationPolicy::Fixed(l), ridge: None };
            let sol = solve_filter(&f, &g, &spec, &a, opts).unwrap();
            let ops = fourier_blocks(&f, &g, &spec, sol.l, None).unwrap();
            let p_full = ops.p_full();
            let floor = 2.0 * PI * sol.q_term;
            let t = f.t;
            let quad_of = |c: &[DVector<Complex64>]| -> f64 {
                let mut x: DVector<Complex64> = DVector::zeros(c.len() * t);
                for (k, b) in c.iter().enumerate() {
                    x.rows_mut(k * t, t).copy_from(&b.map(|z| z.conj()));
                }
                2.0 * PI * (x.adjoint() * &p_full * &x)[(0, 0)].re
            };
            let delta_of = |c: &[DVector<Complex64>]| -> f64 {
                let h = characteristic_for_coefficients(c, &f, &g, &spec, &a, None).unwrap();
                delta_of_characteristic(&h, &f, &g, &spec, &a).unwrap()
            };
            // The solved blocks reproduce the bilinear error value.
            let d_sol = delta_of(&sol.c);
            assert!((d_sol - sol.delta).abs() <= 1e-10 * sol.delta);
            assert!((quad_of(&sol.c) - 2.0 * PI * sol.s_term).abs() <= 1e-10 * sol.delta);
            // Arbitrary members, including perturbed and scaled blocks.
            for trial in 0..3u32 {
                let c: Vec<DVector<Complex64>> = sol
                    .c
                    .iter()
                    .enumerate()
                    .map(|(k, b)| {
                        let ph = 0.7 * k as f64 + 1.0 + trial as f64;
                        b * Complex64::new(0.9, 0.0)
                            + DVector::from_fn(t, |r, _| {
                                Complex64::new(0.0, ph + 1.3 * r as f64).exp()
                                    * (0.05 / (k + 1) as f64)
                            })
                    })
                    .collect();
                let want = floor + quad_of(&c);
                let got = delta_of(&c);
                assert!(
                    (got - want).abs() <= 1e-9 * want,
                    "T = {t} trial {trial}: direct {got} vs operator {want}"
                );
            }
        }
    }

    #[test]
    fn perturbed_taps_never_beat_the_solution() {
        // Real one-sided taps are exactly the admissible estimators, so the
        // tap-form error can only rise away from the solved filter.
        let t1 = {
            let spec = one_b_spec();
            let (f, g) = toy(512, 1.0, 0.6);
            let a = lift_coefficients(&[1.0, 0.5, 0.25], 1).unwrap();
            (f, g, spec, a)
        };
        let t2 = {
            let (f, g, spec) = blocked_pair(512);
            let a = lift_coefficients(&[1.0, 0.5, 0.25, 0.125], 2).unwrap();
            (f, g, spec, a)
        };
        for (f, g, spec, a) in [t1, t2] {
            let opts = FilterOptions { truncation: TruncationPolicy::Fixed(32), ridge: None };
            let sol = solve_filter(&f, &g, &spec, &a, opts).unwrap();
            // The truncated taps are themselves admissible: their error sits
            // at or above the solved value, and close to it (the tail is cut
            // by energy, so the spectral peak can amplify it a little).
            let base = delta_of_taps(&sol.taps, &f, &g, &spec, &a).unwrap();
            assert!(base >= sol.delta * (1.0 - 1e-9), "taps undercut the optimum");
            assert!(base <= sol.delta * 1.01, "tap-form error far off: {base} vs {}", sol.delta);
            let t = f.t;
            for trial in 0..4u32 {
                let scale = 10f64.powi(-(trial as i32));
                let taps: Vec<DVector<f64>> = sol
                    .taps
                    .iter()
                    .enumerate()
                    .map(|(k, s)| {
                        s + DVector::from_fn(t, |r, _| {
                            scale * (0.9 * k as f64 + 0.4 * r as f64 + trial as f64).cos()
                                / (k * k + 1) as f64
                        })
                    })
                    .collect();
                let d = delta_of_taps(&taps, &f, &g, &spec, &a).unwrap();
                assert!(
                    d >= sol.delta * (1.0 - 1e-9),
                    "T = {t} trial {trial}: perturbed taps beat the solution ({d} < {})",
                    sol.delta
                );
            }
        }
    }
}
