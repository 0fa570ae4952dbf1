//! Robust filtering over uncertainty classes of spectral densities: class
//! geometry (feasibility, projections, exact linear maximizers), ascent of
//! the concave error functional to a least favorable pair, the cross error
//! form anchored at a candidate pair, and stationarity residuals with
//! recovered multipliers.
//!
//! Signal classes constrain f through moments weighted by |χ|²/|β|²; noise
//! classes constrain g through pointwise corridors or contamination floors
//! plus unweighted moments. Only the four structure-matched signal × noise
//! pairings are accepted; contamination classes pair with a known f.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::exec::indexed_map;
use crate::filter::{self, FilterOptions, FilterSolution, TruncationPolicy};
use crate::increments::{chi_at, IncrementSpec};
use crate::lift::LiftedCoefficients;
use crate::spectral::{beta_abs2, chi_abs2, combined_density, hermitian_inverse, SpectralDensityGrid};

/// Default relative tolerance of the alternating-projection scheme.
pub const PROJECT_TOL: f64 = 1e-8;
/// Margin below which a pointwise bound counts as active when classifying
/// complementary slackness.
pub const SLACK_MARGIN: f64 = 1e-6;
const DYKSTRA_MAX_CYCLES: usize = 20_000;

// ---------------------------------------------------------------------------
// small Hermitian helpers
// ---------------------------------------------------------------------------

fn herm(x: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    (x + x.adjoint()) * Complex64::new(0.5, 0.0)
}

/// Re tr(A^H B); real Frobenius inner product of Hermitian matrices.
fn frob_inner(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

fn re_trace(x: &DMatrix<Complex64>) -> f64 {
    (0..x.nrows()).map(|k| x[(k, k)].re).sum()
}

fn recompose(vecs: &DMatrix<Complex64>, vals: &DVector<f64>) -> DMatrix<Complex64> {
    vecs * DMatrix::from_diagonal(&vals.map(|v| Complex64::new(v, 0.0))) * vecs.adjoint()
}

/// Split into the PSD part and the negative-semidefinite remainder.
fn psd_split(x: &DMatrix<Complex64>) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let se = herm(x).symmetric_eigen();
    let pos = recompose(&se.eigenvectors, &se.eigenvalues.map(|v| v.max(0.0)));
    let neg = recompose(&se.eigenvectors, &se.eigenvalues.map(|v| v.min(0.0)));
    (pos, neg)
}

fn psd_part(x: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    psd_split(x).0
}

fn min_eig(x: &DMatrix<Complex64>) -> f64 {
    herm(x).symmetric_eigen().eigenvalues.min()
}

fn top_eig(x: &DMatrix<Complex64>) -> (f64, DVector<Complex64>) {
    let se = herm(x).symmetric_eigen();
    let mut bi = 0;
    let mut bv = f64::NEG_INFINITY;
    for (i, &v) in se.eigenvalues.iter().enumerate() {
        if v > bv {
            bv = v;
            bi = i;
        }
    }
    (bv, se.eigenvectors.column(bi).into_owned())
}

/// Closest rank-one PSD matrix (top eigenpair, eigenvalue clamped at zero).
fn rank1_psd(x: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let (val, v) = top_eig(x);
    let val = val.max(0.0);
    (&v * v.adjoint()) * Complex64::new(val, 0.0)
}

fn gnorm(values: &[DMatrix<Complex64>], w: f64) -> f64 {
    values.iter().map(|v| w * v.norm_squared()).sum::<f64>().sqrt()
}

fn grid_from(template: &SpectralDensityGrid, values: Vec<DMatrix<Complex64>>) -> SpectralDensityGrid {
    SpectralDensityGrid { t: template.t, lambdas: template.lambdas.clone(), values }
}

// ---------------------------------------------------------------------------
// density classes
// ---------------------------------------------------------------------------

/// An admissible uncertainty class for one side of the density pair.
///
/// `Moment*` variants describe the signal density f (moments weighted by
/// |χ|²/|β|²); `Band*` variants describe the noise density g between two
/// pointwise bounds; `Mix*` variants describe contaminated noise
/// g = (1-ε)g₁ + ε·(arbitrary density), encoded exactly as the pointwise
/// floor (1-ε)g₁ plus the stated moment equality.
#[derive(Debug, Clone)]
pub enum DensityClass {
    /// (1/2π)∫ k(λ) f dλ = P with k = |χ|²/|β|².
    MomentMatrix { p: DMatrix<Complex64> },
    /// (1/2π)∫ k(λ) tr f dλ = p.
    MomentTrace { p: f64 },
    /// (1/2π)∫ k(λ) f_kk dλ = p_k per component.
    MomentDiag { p: Vec<f64> },
    /// (1/2π)∫ k(λ) ⟨B, f⟩ dλ = p with ⟨B, X⟩ = Re tr(Bᵀ X).
    MomentWeighted { b: DMatrix<Complex64>, p: f64 },
    /// V ⪯ g ⪯ U pointwise, (1/2π)∫ g dλ = Q.
    BandMatrix { v: SpectralDensityGrid, u: SpectralDensityGrid, q: DMatrix<Complex64> },
    /// tr V ≤ tr g ≤ tr U pointwise, (1/2π)∫ tr g dλ = q.
    BandTrace { v: SpectralDensityGrid, u: SpectralDensityGrid, q: f64 },
    /// v_kk ≤ g_kk ≤ u_kk pointwise, (1/2π)∫ g_kk dλ = q_k.
    BandDiag { v: SpectralDensityGrid, u: SpectralDensityGrid, q: Vec<f64> },
    /// ⟨B, V⟩ ≤ ⟨B, g⟩ ≤ ⟨B, U⟩ pointwise, (1/2π)∫ ⟨B, g⟩ dλ = q.
    BandWeighted { v: SpectralDensityGrid, u: SpectralDensityGrid, b: DMatrix<Complex64>, q: f64 },
    /// tr g ≥ (1-ε)tr g₁ pointwise, (1/2π)∫ tr g dλ = q.
    MixTrace { eps: f64, g1: SpectralDensityGrid, q: f64 },
    /// g_kk ≥ (1-ε)(g₁)_kk pointwise, (1/2π)∫ g_kk dλ = q_k.
    MixDiag { eps: f64, g1: SpectralDensityGrid, q: Vec<f64> },
    /// ⟨B, g⟩ ≥ (1-ε)⟨B, g₁⟩ pointwise, (1/2π)∫ ⟨B, g⟩ dλ = q.
    MixWeighted { eps: f64, g1: SpectralDensityGrid, b: DMatrix<Complex64>, q: f64 },
    /// g ⪰ (1-ε)g₁ pointwise, (1/2π)∫ g dλ = Q.
    MixMatrix { eps: f64, g1: SpectralDensityGrid, q: DMatrix<Complex64> },
}

impl DensityClass {
    pub fn label(&self) -> &'static str {
        match self {
            DensityClass::MomentMatrix { .. } => "moment-matrix",
            DensityClass::MomentTrace { .. } => "moment-trace",
            DensityClass::MomentDiag { .. } => "moment-diag",
            DensityClass::MomentWeighted { .. } => "moment-weighted",
            DensityClass::BandMatrix { .. } => "band-matrix",
            DensityClass::BandTrace { .. } => "band-trace",
            DensityClass::BandDiag { .. } => "band-diag",
            DensityClass::BandWeighted { .. } => "band-weighted",
            DensityClass::MixTrace { .. } => "mix-trace",
            DensityClass::MixDiag { .. } => "mix-diag",
            DensityClass::MixWeighted { .. } => "mix-weighted",
            DensityClass::MixMatrix { .. } => "mix-matrix",
        }
    }

    pub fn is_signal(&self) -> bool {
        matches!(
            self,
            DensityClass::MomentMatrix { .. }
                | DensityClass::MomentTrace { .. }
                | DensityClass::MomentDiag { .. }
                | DensityClass::MomentWeighted { .. }
        )
    }

    pub fn is_mix(&self) -> bool {
        matches!(
            self,
            DensityClass::MixTrace { .. }
                | DensityClass::MixDiag { .. }
                | DensityClass::MixWeighted { .. }
                | DensityClass::MixMatrix { .. }
        )
    }

    /// Structural slot used for diagonal pairing: matrix/trace/diag/weighted.
    fn pair_slot(&self) -> Option<(bool, usize)> {
        match self {
            DensityClass::MomentMatrix { .. } => Some((true, 0)),
            DensityClass::MomentTrace { .. } => Some((true, 1)),
            DensityClass::MomentDiag { .. } => Some((true, 2)),
            DensityClass::MomentWeighted { .. } => Some((true, 3)),
            DensityClass::BandMatrix { .. } => Some((false, 0)),
            DensityClass::BandTrace { .. } => Some((false, 1)),
            DensityClass::BandDiag { .. } => Some((false, 2)),
            DensityClass::BandWeighted { .. } => Some((false, 3)),
            _ => None,
        }
    }

    /// Frequency weight of the moment functional: |χ|²/|β|² on the signal
    /// side, one on the noise side.
    pub fn moment_weight(&self, spec: &IncrementSpec, lambdas: &[f64]) -> Vec<f64> {
        if self.is_signal() {
            let chi2 = chi_abs2(spec, lambdas);
            let b2 = beta_abs2(spec, lambdas);
            chi2.iter().zip(&b2).map(|(&c, &b)| c / b).collect()
        } else {
            vec![1.0; lambdas.len()]
        }
    }

    /// Structural feasibility: shapes, Hermitian parameters, bound ordering,
    /// ε range, and consistency of the moment target with the bounds.
    pub fn validate(&self, t: usize, m_grid: usize, spec: &IncrementSpec) -> Result<()> {
        let tol = 1e-8;
        let check_mat = |m: &DMatrix<Complex64>, name: &str, need_pd: bool| -> Result<()> {
            if m.nrows() != t || m.ncols() != t {
                return Err(Error::Input(format!("{name} must be {t}x{t}")));
            }
            if (m - m.adjoint()).norm() > 1e-10 * (1.0 + m.norm()) {
                return Err(Error::Input(format!("{name} must be Hermitian")));
            }
            let me = min_eig(m);
            if need_pd && me <= tol * (1.0 + m.norm()) {
                return Err(Error::Input(format!("{name} must be positive definite")));
            }
            if !need_pd && me < -tol * (1.0 + m.norm()) {
                return Err(Error::Input(format!("{name} must be positive semidefinite")));
            }
            Ok(())
        };
        let check_bound_grid = |b: &SpectralDensityGrid, name: &str| -> Result<()> {
            if b.t != t || b.m_grid() != m_grid {
                return Err(Error::Input(format!("{name} grid must be {t}x{t} on {m_grid} cells")));
            }
            b.validate()?;
            for v in &b.values {
                if min_eig(v) < -tol * (1.0 + v.norm()) {
                    return Err(Error::Input(format!("{name} must be PSD pointwise")));
                }
            }
            Ok(())
        };
        let check_order = |v: &SpectralDensityGrid, u: &SpectralDensityGrid| -> Result<()> {
            for m in 0..m_grid {
                let d = &u.values[m] - &v.values[m];
                if min_eig(&d) < -tol * (1.0 + d.norm()) {
                    return Err(Error::Input("lower bound exceeds upper bound".into()));
                }
            }
            Ok(())
        };
        let in_range = |q: f64, lo: f64, hi: f64, name: &str| -> Result<()> {
            let slack = tol * (1.0 + q.abs() + lo.abs() + hi.abs());
            if q < lo - slack || q > hi + slack {
                return Err(Error::Input(format!(
                    "moment {name} = {q} incompatible with bounds [{lo}, {hi}]"
                )));
            }
            Ok(())
        };
        let lambdas = crate::spectral::midpoint_lambdas(m_grid);
        let w = 2.0 * PI / m_grid as f64;
        let weight = self.moment_weight(spec, &lambdas);
        match self {
            DensityClass::MomentMatrix { p } => check_mat(p, "moment target", false),
            DensityClass::MomentTrace { p } => {
                if *p < 0.0 {
                    return Err(Error::Input("trace moment must be nonnegative".into()));
                }
                Ok(())
            }
            DensityClass::MomentDiag { p } => {
                if p.len() != t {
                    return Err(Error::Input(format!("need {t} diagonal moments")));
                }
                if p.iter().any(|&x| x < 0.0) {
                    return Err(Error::Input("diagonal moments must be nonnegative".into()));
                }
                Ok(())
            }
            DensityClass::MomentWeighted { b, p } => {
                check_mat(b, "weight matrix", true)?;
                if *p < 0.0 {
                    return Err(Error::Input("weighted moment must be nonnegative".into()));
                }
                Ok(())
            }
            DensityClass::BandMatrix { v, u, q } => {
                check_bound_grid(v, "lower bound")?;
                check_bound_grid(u, "upper bound")?;
                check_order(v, u)?;
                check_mat(q, "moment target", false)?;
                let mv = moment_full(&v.values, &weight, w);
                let mu = moment_full(&u.values, &weight, w);
                let s = tol * (1.0 + q.norm() + mv.norm() + mu.norm());
                if min_eig(&(q - &mv)) < -s || min_eig(&(&mu - q)) < -s {
                    return Err(Error::Input("matrix moment incompatible with bounds".into()));
                }
                Ok(())
            }
            DensityClass::BandTrace { v, u, q } => {
                check_bound_grid(v, "lower bound")?;
                check_bound_grid(u, "upper bound")?;
                check_order(v, u)?;
                let lo = moment_trace(&v.values, &weight, w);
                let hi = moment_trace(&u.values, &weight, w);
                in_range(*q, lo, hi, "q")
            }
            DensityClass::BandDiag { v, u, q } => {
                check_bound_grid(v, "lower bound")?;
                check_bound_grid(u, "upper bound")?;
                check_order(v, u)?;
                if q.len() != t {
                    return Err(Error::Input(format!("need {t} diagonal moments")));
                }
                let lo = moment_diag(&v.values, &weight, w);
                let hi = moment_diag(&u.values, &weight, w);
                for k in 0..t {
                    in_range(q[k], lo[k], hi[k], "q_k")?;
                }
                Ok(())
            }
            DensityClass::BandWeighted { v, u, b, q } => {
                check_bound_grid(v, "lower bound")?;
                check_bound_grid(u, "upper bound")?;
                check_order(v, u)?;
                check_mat(b, "weight matrix", true)?;
                let bt = herm(&b.transpose());
                let lo = moment_weighted(&v.values, &bt, &weight, w);
                let hi = moment_weighted(&u.values, &bt, &weight, w);
                in_range(*q, lo, hi, "q")
            }
            DensityClass::MixTrace { eps, g1, q } => {
                check_eps(*eps)?;
                check_bound_grid(g1, "anchor density")?;
                let lo = (1.0 - eps) * moment_trace(&g1.values, &weight, w);
                in_range(*q, lo, f64::INFINITY, "q")
            }
            DensityClass::MixDiag { eps, g1, q } => {
                check_eps(*eps)?;
                check_bound_grid(g1, "anchor density")?;
                if q.len() != t {
                    return Err(Error::Input(format!("need {t} diagonal moments")));
                }
                let lo = moment_diag(&g1.values, &weight, w);
                for k in 0..t {
                    in_range(q[k], (1.0 - eps) * lo[k], f64::INFINITY, "q_k")?;
                }
                Ok(())
            }
            DensityClass::MixWeighted { eps, g1, b, q } => {
                check_eps(*eps)?;
                check_bound_grid(g1, "anchor density")?;
                check_mat(b, "weight matrix", true)?;
                let bt = herm(&b.transpose());
                let lo = (1.0 - eps) * moment_weighted(&g1.values, &bt, &weight, w);
                in_range(*q, lo, f64::INFINITY, "q")
            }
            DensityClass::MixMatrix { eps, g1, q } => {
                check_eps(*eps)?;
                check_bound_grid(g1, "anchor density")?;
                check_mat(q, "moment target", false)?;
                let lo = moment_full(&g1.values, &weight, w) * Complex64::new(1.0 - eps, 0.0);
                let s = tol * (1.0 + q.norm() + lo.norm());
                if min_eig(&(q - &lo)) < -s {
                    return Err(Error::Input("matrix moment below the contamination floor".into()));
                }
                Ok(())
            }
        }
    }

    /// Worst relative violation of PSD-ness, pointwise bounds, and the
    /// moment equality at `d`.
    pub fn violation(&self, d: &SpectralDensityGrid, spec: &IncrementSpec) -> Result<f64> {
        let w = d.weight();
        let weight = self.moment_weight(spec, &d.lambdas);
        let mut worst = 0.0_f64;
        for v in &d.values {
            worst = worst.max(-min_eig(v) / (1.0 + v.norm()));
        }
        let rel = |x: f64, scale: f64| x.max(0.0) / (1.0 + scale.abs());
        match self {
            DensityClass::MomentMatrix { p } => {
                let m = moment_full(&d.values, &weight, w);
                worst = worst.max((&m - p).norm() / (1.0 + p.norm()));
            }
            DensityClass::MomentTrace { p } => {
                let m = moment_trace(&d.values, &weight, w);
                worst = worst.max((m - p).abs() / (1.0 + p.abs()));
            }
            DensityClass::MomentDiag { p } => {
                let m = moment_diag(&d.values, &weight, w);
                for k in 0..p.len() {
                    worst = worst.max((m[k] - p[k]).abs() / (1.0 + p[k].abs()));
                }
            }
            DensityClass::MomentWeighted { b, p } => {
                let bt = herm(&b.transpose());
                let m = moment_weighted(&d.values, &bt, &weight, w);
                worst = worst.max((m - p).abs() / (1.0 + p.abs()));
            }
            DensityClass::BandMatrix { v, u, q } => {
                v.check_same_grid(d)?;
                u.check_same_grid(d)?;
                for m in 0..d.m_grid() {
                    let dv = &d.values[m] - &v.values[m];
                    let du = &u.values[m] - &d.values[m];
                    worst = worst.max(rel(-min_eig(&dv), v.values[m].norm()));
                    worst = worst.max(rel(-min_eig(&du), u.values[m].norm()));
                }
                let mm = moment_full(&d.values, &weight, w);
                worst = worst.max((&mm - q).norm() / (1.0 + q.norm()));
            }
            DensityClass::BandTrace { v, u, q } => {
                v.check_same_grid(d)?;
                u.check_same_grid(d)?;
                for m in 0..d.m_grid() {
                    let x = re_trace(&d.values[m]);
                    let lo = re_trace(&v.values[m]);
                    let hi = re_trace(&u.values[m]);
                    worst = worst.max(rel(lo - x, lo)).max(rel(x - hi, hi));
                }
                let mm = moment_trace(&d.values, &weight, w);
                worst = worst.max((mm - q).abs() / (1.0 + q.abs()));
            }
            DensityClass::BandDiag { v, u, q } => {
                v.check_same_grid(d)?;
                u.check_same_grid(d)?;
                for m in 0..d.m_grid() {
                    for k in 0..d.t {
                        let x = d.values[m][(k, k)].re;
                        let lo = v.values[m][(k, k)].re;
                        let hi = u.values[m][(k, k)].re;
                        worst = worst.max(rel(lo - x, lo)).max(rel(x - hi, hi));
                    }
                }
                let mm = moment_diag(&d.values, &weight, w);
                for k in 0..q.len() {
                    worst = worst.max((mm[k] - q[k]).abs() / (1.0 + q[k].abs()));
                }
            }
            DensityClass::BandWeighted { v, u, b, q } => {
                v.check_same_grid(d)?;
                u.check_same_grid(d)?;
                let bt = herm(&b.transpose());
                for m in 0..d.m_grid() {
                    let x = frob_inner(&bt, &d.values[m]);
                    let lo = frob_inner(&bt, &v.values[m]);
                    let hi = frob_inner(&bt, &u.values[m]);
                    worst = worst.max(rel(lo - x, lo)).max(rel(x - hi, hi));
                }
                let mm = moment_weighted(&d.values, &bt, &weight, w);
                worst = worst.max((mm - q).abs() / (1.0 + q.abs()));
            }
            DensityClass::MixTrace { eps, g1, q } => {
                g1.check_same_grid(d)?;
                for m in 0..d.m_grid() {
                    let lo = (1.0 - eps) * re_trace(&g1.values[m]);
                    worst = worst.max(rel(lo - re_trace(&d.values[m]), lo));
                }
                let mm = moment_trace(&d.values, &weight, w);
                worst = worst.max((mm - q).abs() / (1.0 + q.abs()));
            }
            DensityClass::MixDiag { eps, g1, q } => {
                g1.check_same_grid(d)?;
                for m in 0..d.m_grid() {
                    for k in 0..d.t {
                        let lo = (1.0 - eps) * g1.values[m][(k, k)].re;
                        worst = worst.max(rel(lo - d.values[m][(k, k)].re, lo));
                    }
                }
                let mm = moment_diag(&d.values, &weight, w);
                for k in 0..q.len() {
                    worst = worst.max((mm[k] - q[k]).abs() / (1.0 + q[k].abs()));
                }
            }
            DensityClass::MixWeighted { eps, g1, b, q } => {
                g1.check_same_grid(d)?;
                let bt = herm(&b.transpose());
                for m in 0..d.m_grid() {
                    let lo = (1.0 - eps) * frob_inner(&bt, &g1.values[m]);
                    worst = worst.max(rel(lo - frob_inner(&bt, &d.values[m]), lo));
                }
                let mm = moment_weighted(&d.values, &bt, &weight, w);
                worst = worst.max((mm - q).abs() / (1.0 + q.abs()));
            }
            DensityClass::MixMatrix { eps, g1, q } => {
                g1.check_same_grid(d)?;
                for m in 0..d.m_grid() {
                    let floor = &g1.values[m] * Complex64::new(1.0 - eps, 0.0);
                    let dv = &d.values[m] - &floor;
                    worst = worst.max(rel(-min_eig(&dv), floor.norm()));
                }
                let mm = moment_full(&d.values, &weight, w);
                worst = worst.max((&mm - q).norm() / (1.0 + q.norm()));
            }
        }
        Ok(worst)
    }

    /// Constraint sets for the alternating-projection scheme.
    fn sets(&self, spec: &IncrementSpec, lambdas: &[f64]) -> Vec<SetOp> {
        let weight = self.moment_weight(spec, lambdas);
        let wsum2: f64 = weight.iter().map(|x| x * x).sum();
        let inf = f64::INFINITY;
        match self {
            DensityClass::MomentMatrix { p } => vec![
                SetOp::Psd,
                SetOp::MomentFull { weight, target: p.clone(), wsum2 },
            ],
            DensityClass::MomentTrace { p } => vec![
                SetOp::Psd,
                SetOp::MomentTrace { weight, target: *p, wsum2 },
            ],
            DensityClass::MomentDiag { p } => vec![
                SetOp::Psd,
                SetOp::MomentDiag { weight, target: p.clone(), wsum2 },
            ],
            DensityClass::MomentWeighted { b, p } => {
                let bt = herm(&b.transpose());
                let n2 = bt.norm_squared();
                vec![
                    SetOp::Psd,
                    SetOp::MomentWeighted { bt, bt_norm2: n2, weight, target: *p, wsum2 },
                ]
            }
            DensityClass::BandMatrix { v, u, q } => vec![
                SetOp::LowerGrid(v.values.clone()),
                SetOp::UpperGrid(u.values.clone()),
                SetOp::MomentFull { weight, target: q.clone(), wsum2 },
            ],
            DensityClass::BandTrace { v, u, q } => vec![
                SetOp::Psd,
                SetOp::TraceBox {
                    lo: v.values.iter().map(re_trace).collect(),
                    hi: u.values.iter().map(re_trace).collect(),
                },
                SetOp::MomentTrace { weight, target: *q, wsum2 },
            ],
            DensityClass::BandDiag { v, u, q } => vec![
                SetOp::Psd,
                SetOp::DiagBox {
                    lo: v.values.iter().map(diag_re).collect(),
                    hi: u.values.iter().map(diag_re).collect(),
                },
                SetOp::MomentDiag { weight, target: q.clone(), wsum2 },
            ],
            DensityClass::BandWeighted { v, u, b, q } => {
                let bt = herm(&b.transpose());
                let n2 = bt.norm_squared();
                vec![
                    SetOp::Psd,
                    SetOp::WeightBox {
                        lo: v.values.iter().map(|x| frob_inner(&bt, x)).collect(),
                        hi: u.values.iter().map(|x| frob_inner(&bt, x)).collect(),
                        bt: bt.clone(),
                        bt_norm2: n2,
                    },
                    SetOp::MomentWeighted { bt, bt_norm2: n2, weight, target: *q, wsum2 },
                ]
            }
            DensityClass::MixTrace { eps, g1, q } => vec![
                SetOp::Psd,
                SetOp::TraceBox {
                    lo: g1.values.iter().map(|x| (1.0 - eps) * re_trace(x)).collect(),
                    hi: vec![inf; lambdas.len()],
                },
                SetOp::MomentTrace { weight, target: *q, wsum2 },
            ],
            DensityClass::MixDiag { eps, g1, q } => vec![
                SetOp::Psd,
                SetOp::DiagBox {
                    lo: g1
                        .values
                        .iter()
                        .map(|x| diag_re(x).into_iter().map(|d| (1.0 - eps) * d).collect())
                        .collect(),
                    hi: vec![vec![inf; g1.t]; lambdas.len()],
                },
                SetOp::MomentDiag { weight, target: q.clone(), wsum2 },
            ],
            DensityClass::MixWeighted { eps, g1, b, q } => {
                let bt = herm(&b.transpose());
                let n2 = bt.norm_squared();
                vec![
                    SetOp::Psd,
                    SetOp::WeightBox {
                        lo: g1.values.iter().map(|x| (1.0 - eps) * frob_inner(&bt, x)).collect(),
                        hi: vec![inf; lambdas.len()],
                        bt: bt.clone(),
                        bt_norm2: n2,
                    },
                    SetOp::MomentWeighted { bt, bt_norm2: n2, weight, target: *q, wsum2 },
                ]
            }
            DensityClass::MixMatrix { eps, g1, q } => vec![
                SetOp::LowerGrid(
                    g1.values.iter().map(|x| x * Complex64::new(1.0 - eps, 0.0)).collect(),
                ),
                SetOp::MomentFull { weight, target: q.clone(), wsum2 },
            ],
        }
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::Input(format!("contamination level {eps} must lie in [0, 1)")));
    }
    Ok(())
}

fn diag_re(x: &DMatrix<Complex64>) -> Vec<f64> {
    (0..x.nrows()).map(|k| x[(k, k)].re).collect()
}

/// Σ_m (w/2π)·weight_m·x_m.
fn moment_full(x: &[DMatrix<Complex64>], weight: &[f64], w: f64) -> DMatrix<Complex64> {
    let mut acc = DMatrix::zeros(x[0].nrows(), x[0].ncols());
    for (m, v) in x.iter().enumerate() {
        acc += v * Complex64::new(w * weight[m] / (2.0 * PI), 0.0);
    }
    acc
}

fn moment_trace(x: &[DMatrix<Complex64>], weight: &[f64], w: f64) -> f64 {
    x.iter().enumerate().map(|(m, v)| w * weight[m] * re_trace(v) / (2.0 * PI)).sum()
}

fn moment_diag(x: &[DMatrix<Complex64>], weight: &[f64], w: f64) -> Vec<f64> {
    let t = x[0].nrows();
    (0..t)
        .map(|k| x.iter().enumerate().map(|(m, v)| w * weight[m] * v[(k, k)].re / (2.0 * PI)).sum())
        .collect()
}

fn moment_weighted(x: &[DMatrix<Complex64>], bt: &DMatrix<Complex64>, weight: &[f64], w: f64) -> f64 {
    x.iter().enumerate().map(|(m, v)| w * weight[m] * frob_inner(bt, v) / (2.0 * PI)).sum()
}

// ---------------------------------------------------------------------------
// alternating projections
// ---------------------------------------------------------------------------

enum SetOp {
    Psd,
    LowerGrid(Vec<DMatrix<Complex64>>),
    UpperGrid(Vec<DMatrix<Complex64>>),
    TraceBox { lo: Vec<f64>, hi: Vec<f64> },
    DiagBox { lo: Vec<Vec<f64>>, hi: Vec<Vec<f64>> },
    WeightBox { bt: DMatrix<Complex64>, bt_norm2: f64, lo: Vec<f64>, hi: Vec<f64> },
    MomentFull { weight: Vec<f64>, target: DMatrix<Complex64>, wsum2: f64 },
    MomentTrace { weight: Vec<f64>, target: f64, wsum2: f64 },
    MomentDiag { weight: Vec<f64>, target: Vec<f64>, wsum2: f64 },
    MomentWeighted { bt: DMatrix<Complex64>, bt_norm2: f64, weight: Vec<f64>, target: f64, wsum2: f64 },
}

impl SetOp {
    /// Exact Euclidean projection in the grid-weighted Frobenius metric.
    fn project(&self, x: &mut Vec<DMatrix<Complex64>>, w: f64) {
        let t = x[0].nrows();
        match self {
            SetOp::Psd => {
                *x = indexed_map(x.len(), |m| psd_part(&x[m]));
            }
            SetOp::LowerGrid(lo) => {
                *x = indexed_map(x.len(), |m| &lo[m] + psd_part(&(&x[m] - &lo[m])));
            }
            SetOp::UpperGrid(hi) => {
                *x = indexed_map(x.len(), |m| &x[m] - psd_part(&(&x[m] - &hi[m])));
            }
            SetOp::TraceBox { lo, hi } => {
                for (m, v) in x.iter_mut().enumerate() {
                    let tr = re_trace(v);
                    let shift = if tr < lo[m] {
                        (lo[m] - tr) / t as f64
                    } else if tr > hi[m] {
                        (hi[m] - tr) / t as f64
                    } else {
                        continue;
                    };
                    for k in 0..t {
                        v[(k, k)] += Complex64::new(shift, 0.0);
                    }
                }
            }
            SetOp::DiagBox { lo, hi } => {
                for (m, v) in x.iter_mut().enumerate() {
                    for k in 0..t {
                        let cur = v[(k, k)].re;
                        v[(k, k)] = Complex64::new(cur.clamp(lo[m][k], hi[m][k]), 0.0);
                    }
                }
            }
            SetOp::WeightBox { bt, bt_norm2, lo, hi } => {
                for (m, v) in x.iter_mut().enumerate() {
                    let s = frob_inner(bt, v);
                    let shift = if s < lo[m] {
                        (lo[m] - s) / bt_norm2
                    } else if s > hi[m] {
                        (hi[m] - s) / bt_norm2
                    } else {
                        continue;
                    };
                    *v += bt * Complex64::new(shift, 0.0);
                }
            }
            SetOp::MomentFull { weight, target, wsum2 } => {
                let e = moment_full(x, weight, w) - target;
                let c = 2.0 * PI / (w * wsum2.max(f64::MIN_POSITIVE));
                for (m, v) in x.iter_mut().enumerate() {
                    *v -= &e * Complex64::new(c * weight[m], 0.0);
                }
            }
            SetOp::MomentTrace { weight, target, wsum2 } => {
                let e = moment_trace(x, weight, w) - target;
                let gamma = 2.0 * PI * e / (w * t as f64 * wsum2.max(f64::MIN_POSITIVE));
                for (m, v) in x.iter_mut().enumerate() {
                    for k in 0..t {
                        v[(k, k)] -= Complex64::new(gamma * weight[m], 0.0);
                    }
                }
            }
            SetOp::MomentDiag { weight, target, wsum2 } => {
                let e = moment_diag(x, weight, w);
                let gammas: Vec<f64> = (0..t)
                    .map(|k| 2.0 * PI * (e[k] - target[k]) / (w * wsum2.max(f64::MIN_POSITIVE)))
                    .collect();
                for (m, v) in x.iter_mut().enumerate() {
                    for k in 0..t {
                        v[(k, k)] -= Complex64::new(gammas[k] * weight[m], 0.0);
                    }
                }
            }
            SetOp::MomentWeighted { bt, bt_norm2, weight, target, wsum2 } => {
                let e = moment_weighted(x, bt, weight, w) - target;
                let gamma = 2.0 * PI * e / (w * bt_norm2 * wsum2.max(f64::MIN_POSITIVE));
                for (m, v) in x.iter_mut().enumerate() {
                    *v -= bt * Complex64::new(gamma * weight[m], 0.0);
                }
            }
        }
    }
}

fn dykstra(
    start: &[DMatrix<Complex64>],
    sets: &[SetOp],
    w: f64,
    tol: f64,
) -> Result<Vec<DMatrix<Complex64>>> {
    let m_grid = start.len();
    let t = start[0].nrows();
    let mut x: Vec<DMatrix<Complex64>> = start.iter().map(herm).collect();
    let mut corr: Vec<Vec<DMatrix<Complex64>>> =
        vec![vec![DMatrix::zeros(t, t); m_grid]; sets.len()];
    let scale = 1.0 + gnorm(start, w);
    let mut last_change = f64::INFINITY;
    for _ in 0..DYKSTRA_MAX_CYCLES {
        let x_prev = x.clone();
        for (j, set) in sets.iter().enumerate() {
            for m in 0..m_grid {
                let y = &x[m] + &corr[j][m];
                corr[j][m] = y.clone();
                x[m] = y;
            }
            set.project(&mut x, w);
            for m in 0..m_grid {
                corr[j][m] -= &x[m];
            }
        }
        last_change = (0..m_grid)
            .map(|m| w * (&x[m] - &x_prev[m]).norm_squared())
            .sum::<f64>()
            .sqrt();
        if last_change <= tol * scale {
            return Ok(x);
        }
    }
    Err(Error::Numerical(format!(
        "alternating projections stalled: last cycle moved {:.3e} (target {:.3e})",
        last_change,
        tol * scale
    )))
}

/// Projection of `d` onto `cls` in the grid-weighted Frobenius metric.
/// In-class inputs are returned unchanged.
pub fn project_onto_class(
    d: &SpectralDensityGrid,
    cls: &DensityClass,
    spec: &IncrementSpec,
    tol: f64,
) -> Result<SpectralDensityGrid> {
    cls.validate(d.t, d.m_grid(), spec)?;
    if cls.violation(d, spec)? <= tol {
        return Ok(d.clone());
    }
    let sets = cls.sets(spec, &d.lambdas);
    let values = dykstra(&d.values, &sets, d.weight(), tol)?;
    Ok(grid_from(d, values))
}

/// Random in-class density: Hermitian perturbation of `template` projected
/// back onto the class. `spread` scales the perturbation relative to the
/// local matrix norm.
pub fn sample_member<R: rand::Rng>(
    cls: &DensityClass,
    template: &SpectralDensityGrid,
    spread: f64,
    rng: &mut R,
    spec: &IncrementSpec,
    tol: f64,
) -> Result<SpectralDensityGrid> {
    use rand_distr::StandardNormal;
    let t = template.t;
    let values: Vec<DMatrix<Complex64>> = template
        .values
        .iter()
        .map(|v| {
            let mut h = DMatrix::<Complex64>::zeros(t, t);
            for i in 0..t {
                for j in 0..t {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    h[(i, j)] = Complex64::new(re, im);
                }
            }
            let h = herm(&h);
            v + h * Complex64::new(spread * (1.0 + v.norm()), 0.0)
        })
        .collect();
    project_onto_class(&grid_from(template, values), cls, spec, tol)
}

// ---------------------------------------------------------------------------
// cross error functional and its supergradient weights
// ---------------------------------------------------------------------------

/// Error functional anchored at a candidate pair: the filter solved at
/// (f⁰, g⁰) is scored against arbitrary densities (f, g). Linear in (f, g);
/// at the anchor it reproduces Δ(f⁰, g⁰).
pub struct CrossContext {
    pub t: usize,
    pub l: usize,
    /// Δ at the anchor pair.
    pub delta0: f64,
    /// Solved coefficient blocks at the anchor pair.
    pub c0: Vec<DVector<Complex64>>,
    lambdas: Vec<f64>,
    w: f64,
    /// Per-frequency PSD weights: Δ(f, g) = Σ_m w·(⟨wf_m, f_m⟩ + ⟨wg_m, g_m⟩).
    wf: Vec<DMatrix<Complex64>>,
    wg: Vec<DMatrix<Complex64>>,
}

fn resolve_l(m_grid: usize, a: &LiftedCoefficients, l_opt: Option<usize>) -> usize {
    let n_min = a.n_horizon() + 1;
    let l_grid = ((m_grid / 2 + 1) / 2).max(1);
    match l_opt {
        Some(l) => l.max(n_min),
        None => 64usize.max(n_min).min(l_grid.max(n_min)),
    }
}

fn grad_context(
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
    spec: &IncrementSpec,
    a: &LiftedCoefficients,
    l: usize,
    ridge: Option<f64>,
) -> Result<CrossContext> {
    let (delta, c) = filter::delta_and_c(f, g, spec, a, l, ridge)?;
    let p = combined_density(f, g, spec)?;
    let (p_inv, _) = hermitian_inverse(&p, ridge)?;
    let a_sym = filter::a_symbol(a, &f.lambdas);
    let c_sym = filter::c_symbol(&c, &f.lambdas, f.t);
    let b2 = beta_abs2(spec, &f.lambdas);
    let chi2 = chi_abs2(spec, &f.lambdas);
    let m_grid = f.m_grid();
    let pairs: Vec<(DMatrix<Complex64>, DMatrix<Complex64>)> = indexed_map(m_grid, |m| {
        let lam = f.lambdas[m];
        let chi_p = chi_at(spec, -lam);
        let a_row = a_sym[m].transpose();
        let c_row = c_sym[m].transpose();
        let u_row = &a_row * &g.values[m] * chi_p - &c_row;
        let v_row = &a_row * &f.values[m] * chi_p + &c_row * Complex64::new(b2[m], 0.0);
        let yf = &p_inv.values[m] * u_row.adjoint();
        let yg = &p_inv.values[m] * v_row.adjoint();
        let wf = (&yf * yf.adjoint()) * Complex64::new(b2[m] / chi2[m], 0.0);
        let wg = (&yg * yg.adjoint()) * Complex64::new(1.0 / chi2[m], 0.0);
        (wf, wg)
    });
    let (wf, wg): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok(CrossContext {
        t: f.t,
        l,
        delta0: delta,
        c0: c,
        lambdas: f.lambdas.clone(),
        w: f.weight(),
        wf,
        wg,
    })
}

/// Build the cross error context at an anchor pair (f⁰, g⁰).
pub fn cross_context(
    f0: &SpectralDensityGrid,
    g0: &SpectralDensityGrid,
    spec: &IncrementSpec,
    a: &LiftedCoefficients,
    l: Option<usize>,
    ridge: Option<f64>,
) -> Result<CrossContext> {
    f0.check_same_grid(g0)?;
    let l = resolve_l(f0.m_grid(), a, l);
    grad_context(f0, g0, spec, a, l, ridge)
}

/// Evaluate the anchored error functional at (f, g).
pub fn cross_delta(
    ctx: &CrossContext,
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
) -> Result<f64> {
    if f.t != ctx.t || g.t != ctx.t || f.m_grid() != ctx.lambdas.len() || g.m_grid() != ctx.lambdas.len()
    {
        return Err(Error::Input("densities do not match the context grid".into()));
    }
    Ok((0..ctx.lambdas.len())
        .map(|m| ctx.w * (frob_inner(&ctx.wf[m], &f.values[m]) + frob_inner(&ctx.wg[m], &g.values[m])))
        .sum())
}

// ---------------------------------------------------------------------------
// exact linear maximizers
// ---------------------------------------------------------------------------

/// Fill `budget` over frequencies with per-unit values `vals` and bounds
/// [lo, hi] (hi may be infinite). Returns the allocation.
fn waterfill(vals: &[f64], lo: &[f64], hi: &[f64], budget: f64) -> Vec<f64> {
    let mut tau = lo.to_vec();
    let mut rem = budget - lo.iter().sum::<f64>();
    if rem <= 0.0 {
        return tau;
    }
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&i, &j| vals[j].partial_cmp(&vals[i]).unwrap_or(std::cmp::Ordering::Equal));
    for &m in &order {
        if rem <= 0.0 {
            break;
        }
        let room = (hi[m] - lo[m]).max(0.0);
        let add = room.min(rem);
        tau[m] += add;
        rem -= add;
    }
    tau
}

/// Top generalized eigenpair of (W, B) with x normalized to x^H B x = 1.
fn pencil_top(wm: &DMatrix<Complex64>, l_inv: &DMatrix<Complex64>) -> (f64, DVector<Complex64>) {
    let m = l_inv * wm * l_inv.adjoint();
    let (val, y) = top_eig(&m);
    let x = l_inv.adjoint() * y;
    (val.max(0.0), x)
}

fn chol_l_inv(bt: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    let chol = bt
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("weight matrix is not positive definite".into()))?;
    chol.l()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("weight matrix factor is singular".into()))
}

/// Exact maximizer of Σ_m w·⟨wgt_m, x_m⟩ over the class, where available.
/// Budget-style classes admit a closed form: one rank-one atom per frequency
/// along the best (possibly pencil-generalized) eigendirection, with the
/// scalar budget water-filled by per-unit value.
fn lmo(
    cls: &DensityClass,
    wgt: &[DMatrix<Complex64>],
    weight: &[f64],
    w: f64,
    t: usize,
) -> Result<Option<Vec<DMatrix<Complex64>>>> {
    let m_grid = wgt.len();
    let zero = || vec![DMatrix::<Complex64>::zeros(t, t); m_grid];
    let two_pi = 2.0 * PI;
    match cls {
        DensityClass::MomentTrace { p } => {
            let mut best = (0usize, f64::NEG_INFINITY);
            let mut tops = Vec::with_capacity(m_grid);
            for (m, g) in wgt.iter().enumerate() {
                let (val, x) = top_eig(g);
                let ratio = val.max(0.0) * two_pi / (w * weight[m]);
                if ratio > best.1 {
                    best = (m, ratio);
                }
                tops.push(x);
            }
            let mut out = zero();
            let m = best.0;
            let tau = two_pi * p / (w * weight[m]);
            out[m] = (&tops[m] * tops[m].adjoint()) * Complex64::new(tau, 0.0);
            Ok(Some(out))
        }
        DensityClass::MomentWeighted { b, p } => {
            let bt = herm(&b.transpose());
            let li = chol_l_inv(&bt)?;
            let mut best: (usize, f64, Option<DVector<Complex64>>) = (0, f64::NEG_INFINITY, None);
            for (m, g) in wgt.iter().enumerate() {
                let (val, x) = pencil_top(g, &li);
                let ratio = val * two_pi / (w * weight[m]);
                if ratio > best.1 {
                    best = (m, ratio, Some(x));
                }
            }
            let mut out = zero();
            let (m, _, x) = best;
            let x = x.expect("grid is nonempty");
            let tau = two_pi * p / (w * weight[m]);
            out[m] = (&x * x.adjoint()) * Complex64::new(tau, 0.0);
            Ok(Some(out))
        }
        DensityClass::BandTrace { v, u, q } => {
            let lo: Vec<f64> = v.values.iter().map(re_trace).collect();
            let hi: Vec<f64> = u.values.iter().map(re_trace).collect();
            let mut vals = Vec::with_capacity(m_grid);
            let mut tops = Vec::with_capacity(m_grid);
            for g in wgt {
                let (val, x) = top_eig(g);
                vals.push(val.max(0.0));
                tops.push(x);
            }
            let tau = waterfill(&vals, &lo, &hi, two_pi * q / w);
            let out = (0..m_grid)
                .map(|m| (&tops[m] * tops[m].adjoint()) * Complex64::new(tau[m], 0.0))
                .collect();
            Ok(Some(out))
        }
        DensityClass::MixTrace { eps, g1, q } => {
            let lo: Vec<f64> = g1.values.iter().map(|x| (1.0 - eps) * re_trace(x)).collect();
            let hi = vec![f64::INFINITY; m_grid];
            let mut vals = Vec::with_capacity(m_grid);
            let mut tops = Vec::with_capacity(m_grid);
            for g in wgt {
                let (val, x) = top_eig(g);
                vals.push(val.max(0.0));
                tops.push(x);
            }
            let tau = waterfill(&vals, &lo, &hi, two_pi * q / w);
            let out = (0..m_grid)
                .map(|m| (&tops[m] * tops[m].adjoint()) * Complex64::new(tau[m], 0.0))
                .collect();
            Ok(Some(out))
        }
        DensityClass::BandWeighted { v, u, b, q } => {
            let bt = herm(&b.transpose());
            let li = chol_l_inv(&bt)?;
            let lo: Vec<f64> = v.values.iter().map(|x| frob_inner(&bt, x)).collect();
            let hi: Vec<f64> = u.values.iter().map(|x| frob_inner(&bt, x)).collect();
            let mut vals = Vec::with_capacity(m_grid);
            let mut tops = Vec::with_capacity(m_grid);
            for g in wgt {
                let (val, x) = pencil_top(g, &li);
                vals.push(val);
                tops.push(x);
            }
            let tau = waterfill(&vals, &lo, &hi, two_pi * q / w);
            let out = (0..m_grid)
                .map(|m| (&tops[m] * tops[m].adjoint()) * Complex64::new(tau[m], 0.0))
                .collect();
            Ok(Some(out))
        }
        DensityClass::MixWeighted { eps, g1, b, q } => {
            let bt = herm(&b.transpose());
            let li = chol_l_inv(&bt)?;
            let lo: Vec<f64> =
                g1.values.iter().map(|x| (1.0 - eps) * frob_inner(&bt, x)).collect();
            let hi = vec![f64::INFINITY; m_grid];
            let mut vals = Vec::with_capacity(m_grid);
            let mut tops = Vec::with_capacity(m_grid);
            for g in wgt {
                let (val, x) = pencil_top(g, &li);
                vals.push(val);
                tops.push(x);
            }
            let tau = waterfill(&vals, &lo, &hi, two_pi * q / w);
            let out = (0..m_grid)
                .map(|m| (&tops[m] * tops[m].adjoint()) * Complex64::new(tau[m], 0.0))
                .collect();
            Ok(Some(out))
        }
        _ => Ok(None),
    }
}

// ---------------------------------------------------------------------------
// ascent
// ---------------------------------------------------------------------------

/// Knobs for the least-favorable search.
#[derive(Debug, Clone, Copy)]
pub struct MinimaxOptions {
    /// Operator truncation; defaults to a grid-aware cap.
    pub l: Option<usize>,
    pub max_iters: usize,
    /// Relative objective-change / stationarity-gap stop.
    pub rel_tol: f64,
    /// Tolerance of the class projections.
    pub project_tol: f64,
    pub ridge: Option<f64>,
}

impl Default for MinimaxOptions {
    fn default() -> Self {
        MinimaxOptions {
            l: None,
            max_iters: 500,
            rel_tol: 1e-6,
            project_tol: PROJECT_TOL,
            ridge: None,
        }
    }
}

/// Least favorable pair with the minimax characteristic and diagnostics.
#[derive(Debug, Clone)]
pub struct MinimaxSolution {
    pub f0: SpectralDensityGrid,
    pub g0: SpectralDensityGrid,
    /// Minimax spectral characteristic: the classical characteristic at
    /// (f⁰, g⁰).
    pub h0: Vec<DVector<Complex64>>,
    /// Δ(f⁰, g⁰).
    pub delta0: f64,
    /// Full filter solution at the least favorable pair.
    pub filter: FilterSolution,
    pub iterations: usize,
    /// False when the iteration cap was hit before the stop criterion.
    pub converged: bool,
    /// Final stationarity gap relative to delta0.
    pub rel_gap: f64,
    /// Accepted objective values, non-decreasing.
    pub objective_path: Vec<f64>,
    pub residuals: Option<ResidualReport>,
}

struct AscentOut {
    f: SpectralDensityGrid,
    g: SpectralDensityGrid,
    l: usize,
    iterations: usize,
    converged: bool,
    rel_gap: f64,
    path: Vec<f64>,
}

/// Projected supergradient direction d = P(x + step·W) − x together with a
/// stationarity gap. The step direction comes from the projection; the gap
/// is taken from the exact linear maximizer where one exists (at a fixed
/// point of the projected ascent the variational inequality drives it to
/// zero), otherwise from ⟨W, d⟩ ≥ 0.
#[allow(clippy::too_many_arguments)]
fn side_direction(
    cls: Option<&DensityClass>,
    x: &SpectralDensityGrid,
    wgt: &[DMatrix<Complex64>],
    weight: &[f64],
    tau: f64,
    spec: &IncrementSpec,
    tol: f64,
) -> Result<(Option<Vec<DMatrix<Complex64>>>, f64)> {
    let Some(cls) = cls else {
        return Ok((None, 0.0));
    };
    let w = x.weight();
    let gn = gnorm(wgt, w);
    if gn <= 0.0 {
        return Ok((None, 0.0));
    }
    let step = tau * gnorm(&x.values, w).max(1e-12) / gn;
    let y: Vec<DMatrix<Complex64>> = (0..wgt.len())
        .map(|m| &x.values[m] + &wgt[m] * Complex64::new(step, 0.0))
        .collect();
    let trial = project_onto_class(&grid_from(x, y), cls, spec, tol)?;
    let d: Vec<DMatrix<Complex64>> =
        (0..wgt.len()).map(|m| &trial.values[m] - &x.values[m]).collect();
    let score = |dm: &[DMatrix<Complex64>]| -> f64 {
        (0..dm.len()).map(|m| w * frob_inner(&wgt[m], &dm[m])).sum::<f64>().max(0.0)
    };
    let gap = match lmo(cls, wgt, weight, w, x.t)? {
        Some(s) => {
            let ds: Vec<DMatrix<Complex64>> =
                (0..s.len()).map(|m| &s[m] - &x.values[m]).collect();
            score(&ds)
        }
        None => score(&d),
    };
    Ok((Some(d), gap))
}

fn apply_step(
    x: &SpectralDensityGrid,
    d: &Option<Vec<DMatrix<Complex64>>>,
    gamma: f64,
) -> SpectralDensityGrid {
    match d {
        None => x.clone(),
        Some(d) => grid_from(
            x,
            (0..d.len())
                .map(|m| &x.values[m] + &d[m] * Complex64::new(gamma, 0.0))
                .collect(),
        ),
    }
}

fn ascend(
    cls_f: Option<&DensityClass>,
    cls_g: &DensityClass,
    a: &LiftedCoefficients,
    spec: &IncrementSpec,
    f_init: &SpectralDensityGrid,
    g_init: &SpectralDensityGrid,
    opts: &MinimaxOptions,
) -> Result<AscentOut> {
    f_init.check_same_grid(g_init)?;
    let l = resolve_l(f_init.m_grid(), a, opts.l);
    let weight_f = match cls_f {
        Some(c) => c.moment_weight(spec, &f_init.lambdas),
        None => vec![1.0; f_init.m_grid()],
    };
    let weight_g = cls_g.moment_weight(spec, &g_init.lambdas);
    let mut fx = match cls_f {
        Some(c) => project_onto_class(f_init, c, spec, opts.project_tol)?,
        None => f_init.clone(),
    };
    let mut gx = project_onto_class(g_init, cls_g, spec, opts.project_tol)?;
    let mut ctx = grad_context(&fx, &gx, spec, a, l, opts.ridge)?;
    let mut obj = ctx.delta0;
    let mut path = vec![obj];
    let mut tau_f = 1.0_f64;
    let mut tau_g = 1.0_f64;
    const TAU_FLOOR: f64 = 1e-5;
    let mut converged = false;
    let mut rel_gap = f64::INFINITY;
    let mut iterations = 0;
    let mut polish = 0usize;
    while iterations < opts.max_iters {
        iterations += 1;
        let (df, gap_f) =
            side_direction(cls_f, &fx, &ctx.wf, &weight_f, tau_f, spec, opts.project_tol)?;
        let (dg, gap_g) = side_direction(
            Some(cls_g),
            &gx,
            &ctx.wg,
            &weight_g,
            tau_g,
            spec,
            opts.project_tol,
        )?;
        rel_gap = (gap_f + gap_g) / obj.abs().max(1e-300);
        if rel_gap <= opts.rel_tol {
            converged = true;
            break;
        }
        // Joint backtracking line search; trial solves double as the
        // minimality guard (an ill-posed iterate rejects the step).
        let mut gamma = 1.0_f64;
        let mut accepted = None;
        while gamma >= 1e-7 {
            let fc = apply_step(&fx, &df, gamma);
            let gc = apply_step(&gx, &dg, gamma);
            match filter::delta_and_c(&fc, &gc, spec, a, l, opts.ridge) {
                Ok((delta, _)) if delta > obj => {
                    accepted = Some((fc, gc, delta, gamma));
                    break;
                }
                _ => gamma *= 0.5,
            }
        }
        let Some((fc, gc, delta, gamma)) = accepted else {
            // No ascent along the current trial: shrink the probe step and
            // retry from the same iterate. At the floor the objective is
            // exhausted to numerical precision; that counts as convergence
            // when a full-step plateau was already observed.
            if tau_f <= TAU_FLOOR && tau_g <= TAU_FLOOR {
                converged = polish > 0;
                break;
            }
            tau_f = (tau_f * 0.25).max(TAU_FLOOR);
            tau_g = (tau_g * 0.25).max(TAU_FLOOR);
            continue;
        };
        for tau in [&mut tau_f, &mut tau_g] {
            if gamma >= 1.0 {
                *tau = (*tau * 1.5).min(64.0);
            } else if gamma <= 0.25 {
                *tau = (*tau * 0.5).max(TAU_FLOOR);
            }
        }
        let improve = (delta - obj) / delta.abs().max(1e-300);
        fx = fc;
        gx = gc;
        obj = delta;
        path.push(obj);
        ctx = grad_context(&fx, &gx, spec, a, l, opts.ridge)?;
        if improve < opts.rel_tol && gamma >= 0.99 {
            // A full projected step no longer moves the objective. Refine
            // the probe scale a few times before declaring convergence; a
            // smaller scale realigns the projected direction with the
            // constrained gradient.
            if polish >= 3 {
                converged = true;
                break;
            }
            polish += 1;
            tau_f = (tau_f * 0.02).max(TAU_FLOOR);
            tau_g = (tau_g * 0.02).max(TAU_FLOOR);
        }
    }
    Ok(AscentOut { f: fx, g: gx, l, iterations, converged, rel_gap, path })
}

fn finalize(
    out: AscentOut,
    cls_f: Option<&DensityClass>,
    cls_g: &DensityClass,
    a: &LiftedCoefficients,
    spec: &IncrementSpec,
    opts: &MinimaxOptions,
) -> Result<MinimaxSolution> {
    let fopts =
        FilterOptions { truncation: TruncationPolicy::Fixed(out.l), ridge: opts.ridge };
    let filt = filter::solve_filter(&out.f, &out.g, spec, a, fopts)?;
    let mut sol = MinimaxSolution {
        f0: out.f,
        g0: out.g,
        h0: filt.h.clone(),
        delta0: filt.delta,
        filter: filt,
        iterations: out.iterations,
        converged: out.converged,
        rel_gap: out.rel_gap,
        objective_path: out.path,
        residuals: None,
    };
    sol.residuals = Some(saddle_residuals(&sol, cls_f, cls_g, spec, a)?);
    Ok(sol)
}

/// Maximize the error functional over a matched signal × noise class pair.
/// Only the four structure-matched pairings are supported.
pub fn least_favorable(
    cls_f: &DensityClass,
    cls_g: &DensityClass,
    a: &LiftedCoefficients,
    spec: &IncrementSpec,
    f_init: &SpectralDensityGrid,
    g_init: &SpectralDensityGrid,
    opts: &MinimaxOptions,
) -> Result<MinimaxSolution> {
    if cls_g.is_mix() {
        return Err(Error::Unsupported(format!(
            "contamination class {} pairs with a known signal density; use the semi entry point",
            cls_g.label()
        )));
    }
    match (cls_f.pair_slot(), cls_g.pair_slot()) {
        (Some((true, i)), Some((false, j))) if i == j => {}
        _ => {
            return Err(Error::Unsupported(format!(
                "unsupported class pairing {} x {}",
                cls_f.label(),
                cls_g.label()
            )));
        }
    }
    let out = ascend(Some(cls_f), cls_g, a, spec, f_init, g_init, opts)?;
    finalize(out, Some(cls_f), cls_g, a, spec, opts)
}

/// Least favorable noise when the signal density f is known: ascent over a
/// contamination class only. The operator set at (f, g) already has the
/// matching kernels, so the standard machinery applies unchanged.
pub fn least_favorable_noise_semi(
    f: &SpectralDensityGrid,
    cls_g: &DensityClass,
    a: &LiftedCoefficients,
    spec: &IncrementSpec,
    g_init: &SpectralDensityGrid,
    opts: &MinimaxOptions,
) -> Result<MinimaxSolution> {
    if !cls_g.is_mix() {
        return Err(Error::Unsupported(format!(
            "semi search expects a contamination class, got {}",
            cls_g.label()
        )));
    }
    let out = ascend(None, cls_g, a, spec, f, g_init, opts)?;
    finalize(out, None, cls_g, a, spec, opts)
}

/// The minimax spectral characteristic is the classical characteristic at
/// the least favorable pair.
pub fn minimax_characteristic(sol: &MinimaxSolution) -> &[DVector<Complex64>] {
    &sol.h0
}

// ---------------------------------------------------------------------------
// stationarity residuals
// ---------------------------------------------------------------------------

/// Residual of a single stationarity equation after multiplier fitting.
#[derive(Debug, Clone, Serialize)]
pub struct EquationResidual {
    pub equation: &'static str,
    /// ‖equation defect‖ relative to the equation's own scale, with slack
    /// functions allowed only where the matching bound is active.
    pub rel_residual: f64,
    /// Mass of slack that appears where its bound is strictly inactive
    /// (complementary slackness violation), same normalization.
    pub slack_violation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    pub pairing: String,
    pub equations: Vec<EquationResidual>,
    pub multipliers: Value,
}

/// Normalized stationarity frames N(λ) = (k·p⁰)⁻¹·y y^H·(k·p⁰)⁻¹ for a row
/// symbol y^H, with k = |χ|²/|β|².
struct SaddleFrames {
    w: f64,
    n_f: Vec<DMatrix<Complex64>>,
    n_g: Vec<DMatrix<Complex64>>,
}

fn saddle_frames(
    f0: &SpectralDensityGrid,
    g0: &SpectralDensityGrid,
    c0: &[DVector<Complex64>],
    spec: &IncrementSpec,
    a: &LiftedCoefficients,
    ridge: Option<f64>,
) -> Result<SaddleFrames> {
    let lambdas = &f0.lambdas;
    let chi2 = chi_abs2(spec, lambdas);
    let b2 = beta_abs2(spec, lambdas);
    let p0 = combined_density(f0, g0, spec)?;
    let kp0 = p0.map(|m, v| v * Complex64::new(chi2[m] / b2[m], 0.0));
    let (ikp, _) = hermitian_inverse(&kp0, ridge)?;
    let a_sym = filter::a_symbol(a, lambdas);
    let c_sym = filter::c_symbol(c0, lambdas, f0.t);
    let frames: Vec<(DMatrix<Complex64>, DMatrix<Complex64>)> = indexed_map(f0.m_grid(), |m| {
        let lam = lambdas[m];
        let chi_p = chi_at(spec, -lam);
        let chi_m = chi_at(spec, lam);
        let a_row = a_sym[m].transpose();
        let c_row = c_sym[m].transpose();
        let u_row = &a_row * &g0.values[m] * chi_p - &c_row;
        let cg_row = &a_row * &f0.values[m] * Complex64::new(chi2[m] / b2[m], 0.0) + &c_row * chi_m;
        let yf = u_row.adjoint();
        let yg = cg_row.adjoint();
        let nf = &ikp.values[m] * (&yf * yf.adjoint()) * &ikp.values[m];
        let ng = &ikp.values[m] * (&yg * yg.adjoint()) * &ikp.values[m];
        (nf, ng)
    });
    let (n_f, n_g): (Vec<_>, Vec<_>) = frames.into_iter().unzip();
    Ok(SaddleFrames { w: f0.weight(), n_f, n_g })
}

fn mean_matrix(n: &[DMatrix<Complex64>], mask: &[bool]) -> DMatrix<Complex64> {
    let t = n[0].nrows();
    let mut acc = DMatrix::<Complex64>::zeros(t, t);
    let mut cnt = 0usize;
    for (m, v) in n.iter().enumerate() {
        if mask[m] {
            acc += v;
            cnt += 1;
        }
    }
    if cnt == 0 {
        for v in n {
            acc += v;
        }
        cnt = n.len();
    }
    acc / Complex64::new(cnt as f64, 0.0)
}

fn base_norm(n: &[DMatrix<Complex64>], w: f64) -> f64 {
    gnorm(n, w).max(f64::MIN_POSITIVE)
}

fn vec_json(v: &DVector<Complex64>) -> Value {
    Value::Array(v.iter().map(|z| json!([z.re, z.im])).collect())
}

/// Rank-one factor of a PSD fit, as a vector.
fn rank1_vector(outer: &DMatrix<Complex64>) -> DVector<Complex64> {
    let (val, x) = top_eig(outer);
    x * Complex64::new(val.max(0.0).sqrt(), 0.0)
}

/// Signal-side fit without slack: model N(λ) ≈ M(λ; θ) by least squares.
fn fit_signal(
    n: &[DMatrix<Complex64>],
    w: f64,
    cls: &DensityClass,
    equation: &'static str,
) -> (EquationResidual, Value) {
    let t = n[0].nrows();
    let base = base_norm(n, w);
    let all = vec![true; n.len()];
    let (defect2, mult): (f64, Value) = match cls {
        DensityClass::MomentMatrix { .. } => {
            let outer = rank1_psd(&mean_matrix(n, &all));
            let d2 = n.iter().map(|v| w * (v - &outer).norm_squared()).sum();
            (d2, json!({ "alpha": vec_json(&rank1_vector(&outer)) }))
        }
        DensityClass::MomentTrace { .. } => {
            let a2 = n.iter().map(re_trace).sum::<f64>() / (t as f64 * n.len() as f64);
            let eye = DMatrix::<Complex64>::identity(t, t) * Complex64::new(a2, 0.0);
            let d2 = n.iter().map(|v| w * (v - &eye).norm_squared()).sum();
            (d2, json!({ "alpha2": a2 }))
        }
        DensityClass::MomentDiag { .. } => {
            let a2: Vec<f64> = (0..t)
                .map(|k| n.iter().map(|v| v[(k, k)].re).sum::<f64>() / n.len() as f64)
                .collect();
            let model = DMatrix::<Complex64>::from_fn(t, t, |i, j| {
                if i == j { Complex64::new(a2[i], 0.0) } else { Complex64::new(0.0, 0.0) }
            });
            let d2 = n.iter().map(|v| w * (v - &model).norm_squared()).sum();
            (d2, json!({ "alpha2_k": a2 }))
        }
        DensityClass::MomentWeighted { b, .. } => {
            let bt = herm(&b.transpose());
            let n2 = bt.norm_squared();
            let a2 = n.iter().map(|v| frob_inner(&bt, v)).sum::<f64>() / (n2 * n.len() as f64);
            let model = &bt * Complex64::new(a2, 0.0);
            let d2 = n.iter().map(|v| w * (v - &model).norm_squared()).sum();
            (d2, json!({ "alpha2": a2 }))
        }
        _ => (f64::NAN, Value::Null),
    };
    (
        EquationResidual {
            equation,
            rel_residual: defect2.sqrt() / base,
            slack_violation: 0.0,
        },
        mult,
    )
}

/// Noise-side fit: scalar profile s(λ) against a constant β² with one- or
/// two-sided slack gated by bound activity.
struct ScalarSlackFit {
    rel_residual: f64,
    slack_violation: f64,
    beta2: f64,
    slack_lo_mass: f64,
    slack_hi_mass: f64,
}

/// `lo_active`/`hi_active` mark frequencies where the matching bound binds;
/// `hi_active` empty means a floor-only class (slack must be ≤ 0).
fn fit_scalar_slack(
    s: &[f64],
    lo_active: &[bool],
    hi_active: Option<&[bool]>,
    w: f64,
    matrix_defect2: f64,
    base: f64,
) -> ScalarSlackFit {
    let inactive: Vec<bool> = (0..s.len())
        .map(|m| !lo_active[m] && hi_active.map_or(true, |h| !h[m]))
        .collect();
    let n_inact = inactive.iter().filter(|&&b| b).count();
    let beta2 = if n_inact > 0 {
        s.iter().zip(&inactive).filter(|(_, &b)| b).map(|(&v, _)| v).sum::<f64>() / n_inact as f64
    } else if hi_active.is_none() {
        // Floor active everywhere: the least multiplier dominating s.
        s.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    } else {
        s.iter().sum::<f64>() / s.len() as f64
    };
    let mut defect2 = matrix_defect2;
    let mut slack2 = 0.0;
    let mut lo_mass = 0.0;
    let mut hi_mass = 0.0;
    for m in 0..s.len() {
        let r = s[m] - beta2;
        let neg = r.min(0.0);
        let pos = r.max(0.0);
        let allowed_neg = if lo_active[m] { neg } else { 0.0 };
        let allowed_pos = match hi_active {
            Some(h) if h[m] => pos,
            Some(_) => 0.0,
            None => 0.0,
        };
        let bad = r - allowed_neg - allowed_pos;
        defect2 += w * bad * bad;
        slack2 += w * bad * bad;
        lo_mass += w * allowed_neg.abs();
        hi_mass += w * allowed_pos;
    }
    ScalarSlackFit {
        rel_residual: defect2.sqrt() / base,
        slack_violation: slack2.sqrt() / base,
        beta2,
        slack_lo_mass: lo_mass,
        slack_hi_mass: hi_mass,
    }
}

/// Matrix-valued noise fit: N(λ) ≈ ββ* + Γ(λ) with PSD-signed slack gated by
/// matrix bound activity.
fn fit_matrix_slack(
    n: &[DMatrix<Complex64>],
    lo_active: &[bool],
    hi_active: Option<&[bool]>,
    w: f64,
) -> (f64, f64, DMatrix<Complex64>, f64, f64) {
    let inactive: Vec<bool> = (0..n.len())
        .map(|m| !lo_active[m] && hi_active.map_or(true, |h| !h[m]))
        .collect();
    let n_inact = inactive.iter().filter(|&&b| b).count();
    let outer = if n_inact > 0 {
        rank1_psd(&mean_matrix(n, &inactive))
    } else if hi_active.is_none() {
        // Floor active everywhere: scale the dominant direction to majorize.
        let all = vec![true; n.len()];
        let (_, x) = top_eig(&mean_matrix(n, &all));
        let b2 = n
            .iter()
            .map(|v| (x.adjoint() * v * &x)[(0, 0)].re)
            .fold(f64::NEG_INFINITY, f64::max)
            .max(0.0);
        (&x * x.adjoint()) * Complex64::new(b2, 0.0)
    } else {
        let all = vec![true; n.len()];
        rank1_psd(&mean_matrix(n, &all))
    };
    let base = base_norm(n, w);
    let mut defect2 = 0.0;
    let mut slack2 = 0.0;
    let mut lo_mass = 0.0;
    let mut hi_mass = 0.0;
    for m in 0..n.len() {
        let r = &n[m] - &outer;
        let (pos, neg) = psd_split(&r);
        let mut allowed = DMatrix::<Complex64>::zeros(r.nrows(), r.ncols());
        if lo_active[m] {
            allowed += &neg;
            lo_mass += w * neg.norm();
        }
        if let Some(h) = hi_active {
            if h[m] {
                allowed += &pos;
                hi_mass += w * pos.norm();
            }
        }
        let bad = r - allowed;
        defect2 += w * bad.norm_squared();
        slack2 += w * bad.norm_squared();
    }
    (defect2.sqrt() / base, slack2.sqrt() / base, outer, lo_mass, hi_mass)
}

/// Activity masks for matrix bounds by smallest-eigenvalue margin.
fn matrix_activity(
    g0: &SpectralDensityGrid,
    bound: &SpectralDensityGrid,
    lower: bool,
    scale_mul: f64,
) -> Vec<bool> {
    (0..g0.m_grid())
        .map(|m| {
            let b = &bound.values[m] * Complex64::new(scale_mul, 0.0);
            let d = if lower { &g0.values[m] - &b } else { &b - &g0.values[m] };
            min_eig(&d) <= SLACK_MARGIN * (1.0 + b.norm())
        })
        .collect()
}

fn scalar_activity(vals: &[f64], bounds: &[f64], lower: bool) -> Vec<bool> {
    vals.iter()
        .zip(bounds)
        .map(|(&x, &b)| {
            let gap = if lower { x - b } else { b - x };
            gap <= SLACK_MARGIN * (1.0 + b.abs())
        })
        .collect()
}

/// Fit multipliers and report residuals of the stationarity equations for
/// the solution's class pair. `cls_f = None` selects the known-signal
/// equations of the contamination classes.
pub fn saddle_residuals(
    sol: &MinimaxSolution,
    cls_f: Option<&DensityClass>,
    cls_g: &DensityClass,
    spec: &IncrementSpec,
    a: &LiftedCoefficients,
) -> Result<ResidualReport> {
    let frames = saddle_frames(&sol.f0, &sol.g0, &sol.filter.c, spec, a, None)?;
    let w = frames.w;
    let t = sol.f0.t;
    let mut equations = Vec::new();
    let mut mult = serde_json::Map::new();
    let pairing = match cls_f {
        Some(cf) => format!("{} x {}", cf.label(), cls_g.label()),
        None => format!("known-signal x {}", cls_g.label()),
    };
    match (cls_f, cls_g) {
        (Some(cf @ DensityClass::MomentMatrix { .. }), DensityClass::BandMatrix { v, u, .. }) => {
            let (eq, mf) = fit_signal(&frames.n_f, w, cf, "signal-moment-matrix");
            equations.push(eq);
            mult.insert("signal".into(), mf);
            let lo = matrix_activity(&sol.g0, v, true, 1.0);
            let hi = matrix_activity(&sol.g0, u, false, 1.0);
            let (rel, slack, outer, lo_mass, hi_mass) =
                fit_matrix_slack(&frames.n_g, &lo, Some(&hi), w);
            equations.push(EquationResidual {
                equation: "noise-band-matrix",
                rel_residual: rel,
                slack_violation: slack,
            });
            mult.insert(
                "noise".into(),
                json!({
                    "beta": vec_json(&rank1_vector(&outer)),
                    "slack_lower_mass": lo_mass,
                    "slack_upper_mass": hi_mass,
                }),
            );
        }
        (Some(cf @ DensityClass::MomentTrace { .. }), DensityClass::BandTrace { v, u, .. }) => {
            let (eq, mf) = fit_signal(&frames.n_f, w, cf, "signal-moment-trace");
            equations.push(eq);
            mult.insert("signal".into(), mf);
            let tr_g: Vec<f64> = sol.g0.values.iter().map(re_trace).collect();
            let lo = scalar_activity(&tr_g, &v.values.iter().map(re_trace).collect::<Vec<_>>(), true);
            let hi =
                scalar_activity(&tr_g, &u.values.iter().map(re_trace).collect::<Vec<_>>(), false);
            let (s, extra2) = isotropic_profile(&frames.n_g, w);
            let fit = fit_scalar_slack(&s, &lo, Some(&hi), w * t as f64, extra2, base_norm(&frames.n_g, w));
            equations.push(EquationResidual {
                equation: "noise-band-trace",
                rel_residual: fit.rel_residual,
                slack_violation: fit.slack_violation,
            });
            mult.insert(
                "noise".into(),
                json!({
                    "beta2": fit.beta2,
                    "slack_lower_mass": fit.slack_lo_mass,
                    "slack_upper_mass": fit.slack_hi_mass,
                }),
            );
        }
        (Some(cf @ DensityClass::MomentDiag { .. }), DensityClass::BandDiag { v, u, .. }) => {
            let (eq, mf) = fit_signal(&frames.n_f, w, cf, "signal-moment-diag");
            equations.push(eq);
            mult.insert("signal".into(), mf);
            let (rel, slack, betas) =
                fit_diag_slack(&frames.n_g, &sol.g0, Some((v, u)), None, w);
            equations.push(EquationResidual {
                equation: "noise-band-diag",
                rel_residual: rel,
                slack_violation: slack,
            });
            mult.insert("noise".into(), json!({ "beta2_k": betas }));
        }
        (
            Some(cf @ DensityClass::MomentWeighted { .. }),
            DensityClass::BandWeighted { v, u, b, .. },
        ) => {
            let (eq, mf) = fit_signal(&frames.n_f, w, cf, "signal-moment-weighted");
            equations.push(eq);
            mult.insert("signal".into(), mf);
            let bt = herm(&b.transpose());
            let n2 = bt.norm_squared();
            let sg: Vec<f64> = sol.g0.values.iter().map(|x| frob_inner(&bt, x)).collect();
            let lo = scalar_activity(
                &sg,
                &v.values.iter().map(|x| frob_inner(&bt, x)).collect::<Vec<_>>(),
                true,
            );
            let hi = scalar_activity(
                &sg,
                &u.values.iter().map(|x| frob_inner(&bt, x)).collect::<Vec<_>>(),
                false,
            );
            let (s, extra2) = weighted_profile(&frames.n_g, &bt, n2, w);
            let fit =
                fit_scalar_slack(&s, &lo, Some(&hi), w * n2, extra2, base_norm(&frames.n_g, w));
            equations.push(EquationResidual {
                equation: "noise-band-weighted",
                rel_residual: fit.rel_residual,
                slack_violation: fit.slack_violation,
            });
            mult.insert(
                "noise".into(),
                json!({
                    "beta2": fit.beta2,
                    "slack_lower_mass": fit.slack_lo_mass,
                    "slack_upper_mass": fit.slack_hi_mass,
                }),
            );
        }
        (None, DensityClass::MixTrace { eps, g1, .. }) => {
            let tr_g: Vec<f64> = sol.g0.values.iter().map(re_trace).collect();
            let floors: Vec<f64> =
                g1.values.iter().map(|x| (1.0 - eps) * re_trace(x)).collect();
            let lo = scalar_activity(&tr_g, &floors, true);
            let (s, extra2) = isotropic_profile(&frames.n_g, w);
            let fit =
                fit_scalar_slack(&s, &lo, None, w * t as f64, extra2, base_norm(&frames.n_g, w));
            equations.push(EquationResidual {
                equation: "noise-mix-trace",
                rel_residual: fit.rel_residual,
                slack_violation: fit.slack_violation,
            });
            mult.insert(
                "noise".into(),
                json!({ "beta2": fit.beta2, "slack_lower_mass": fit.slack_lo_mass }),
            );
        }
        (None, DensityClass::MixDiag { eps, g1, .. }) => {
            let (rel, slack, betas) =
                fit_diag_slack(&frames.n_g, &sol.g0, None, Some((*eps, g1)), w);
            equations.push(EquationResidual {
                equation: "noise-mix-diag",
                rel_residual: rel,
                slack_violation: slack,
            });
            mult.insert("noise".into(), json!({ "beta2_k": betas }));
        }
        (None, DensityClass::MixWeighted { eps, g1, b, .. }) => {
            let bt = herm(&b.transpose());
            let n2 = bt.norm_squared();
            let sg: Vec<f64> = sol.g0.values.iter().map(|x| frob_inner(&bt, x)).collect();
            let floors: Vec<f64> =
                g1.values.iter().map(|x| (1.0 - eps) * frob_inner(&bt, x)).collect();
            let lo = scalar_activity(&sg, &floors, true);
            let (s, extra2) = weighted_profile(&frames.n_g, &bt, n2, w);
            let fit = fit_scalar_slack(&s, &lo, None, w * n2, extra2, base_norm(&frames.n_g, w));
            equations.push(EquationResidual {
                equation: "noise-mix-weighted",
                rel_residual: fit.rel_residual,
                slack_violation: fit.slack_violation,
            });
            mult.insert(
                "noise".into(),
                json!({ "beta2": fit.beta2, "slack_lower_mass": fit.slack_lo_mass }),
            );
        }
        (None, DensityClass::MixMatrix { eps, g1, .. }) => {
            let lo = matrix_activity(&sol.g0, g1, true, 1.0 - eps);
            let (rel, slack, outer, lo_mass, _) = fit_matrix_slack(&frames.n_g, &lo, None, w);
            equations.push(EquationResidual {
                equation: "noise-mix-matrix",
                rel_residual: rel,
                slack_violation: slack,
            });
            mult.insert(
                "noise".into(),
                json!({
                    "beta": vec_json(&rank1_vector(&outer)),
                    "slack_lower_mass": lo_mass,
                }),
            );
        }
        _ => {
            return Err(Error::Unsupported(format!(
                "no stationarity equations for pairing {pairing}"
            )));
        }
    }
    Ok(ResidualReport { pairing, equations, multipliers: Value::Object(mult) })
}

/// Isotropic scalar profile s(λ) = tr N/T and the residual mass of the
/// anisotropic remainder N − s·I.
fn isotropic_profile(n: &[DMatrix<Complex64>], w: f64) -> (Vec<f64>, f64) {
    let t = n[0].nrows();
    let s: Vec<f64> = n.iter().map(|v| re_trace(v) / t as f64).collect();
    let extra2: f64 = n
        .iter()
        .zip(&s)
        .map(|(v, &sv)| {
            let model = DMatrix::<Complex64>::identity(t, t) * Complex64::new(sv, 0.0);
            w * (v - model).norm_squared()
        })
        .sum();
    (s, extra2)
}

/// Weighted scalar profile s(λ) = ⟨Bᵀ, N⟩/‖Bᵀ‖² and the off-direction mass.
fn weighted_profile(
    n: &[DMatrix<Complex64>],
    bt: &DMatrix<Complex64>,
    bt_norm2: f64,
    w: f64,
) -> (Vec<f64>, f64) {
    let s: Vec<f64> = n.iter().map(|v| frob_inner(bt, v) / bt_norm2).collect();
    let extra2: f64 = n
        .iter()
        .zip(&s)
        .map(|(v, &sv)| {
            let model = bt * Complex64::new(sv, 0.0);
            w * (v - model).norm_squared()
        })
        .sum();
    (s, extra2)
}

/// Per-component diagonal fit with corridor (`band`) or floor (`mix`)
/// activity gating; off-diagonal mass counts toward the defect.
fn fit_diag_slack(
    n: &[DMatrix<Complex64>],
    g0: &SpectralDensityGrid,
    band: Option<(&SpectralDensityGrid, &SpectralDensityGrid)>,
    mix: Option<(f64, &SpectralDensityGrid)>,
    w: f64,
) -> (f64, f64, Vec<f64>) {
    let t = n[0].nrows();
    let m_grid = n.len();
    let base = base_norm(n, w);
    let mut defect2 = 0.0;
    let mut slack2 = 0.0;
    let mut betas = Vec::with_capacity(t);
    // Off-diagonal mass is pure defect.
    for v in n {
        let mut off = v.clone();
        for k in 0..t {
            off[(k, k)] = Complex64::new(0.0, 0.0);
        }
        defect2 += w * off.norm_squared();
    }
    for k in 0..t {
        let s: Vec<f64> = n.iter().map(|v| v[(k, k)].re).collect();
        let gk: Vec<f64> = g0.values.iter().map(|v| v[(k, k)].re).collect();
        let (lo, hi): (Vec<bool>, Option<Vec<bool>>) = match (band, mix) {
            (Some((v, u)), _) => {
                let lk: Vec<f64> = v.values.iter().map(|x| x[(k, k)].re).collect();
                let hk: Vec<f64> = u.values.iter().map(|x| x[(k, k)].re).collect();
                (scalar_activity(&gk, &lk, true), Some(scalar_activity(&gk, &hk, false)))
            }
            (_, Some((eps, g1))) => {
                let lk: Vec<f64> =
                    g1.values.iter().map(|x| (1.0 - eps) * x[(k, k)].re).collect();
                (scalar_activity(&gk, &lk, true), None)
            }
            _ => (vec![false; m_grid], None),
        };
        let fit = fit_scalar_slack(&s, &lo, hi.as_deref(), w, 0.0, 1.0);
        // fit returns unnormalized defect in rel_residual when base = 1.
        defect2 += fit.rel_residual * fit.rel_residual;
        slack2 += fit.slack_violation * fit.slack_violation;
        betas.push(fit.beta2);
    }
    (defect2.sqrt() / base, slack2.sqrt() / base, betas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::increments::Pattern;
    use crate::lift::lift_coefficients;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_b_spec() -> IncrementSpec {
        IncrementSpec::new(vec![Pattern { s: 1, mu: 1, r: 1, d: 0.0 }], 1).unwrap()
    }

    fn toy_f(m_grid: usize, s1: f64) -> SpectralDensityGrid {
        SpectralDensityGrid::scalar_from_fn(m_grid, move |l| {
            s1 * s1
                / ((Complex64::new(1.0, 0.0) - Complex64::new(0.0, -l).exp()).norm_sqr()
                    * 2.0
                    * PI)
        })
    }

    fn const_g(m_grid: usize, s2: f64) -> SpectralDensityGrid {
        SpectralDensityGrid::scalar_from_fn(m_grid, move |_| s2 * s2 / (2.0 * PI))
    }

    fn k_weight(spec: &IncrementSpec, lambdas: &[f64]) -> Vec<f64> {
        let chi2 = chi_abs2(spec, lambdas);
        let b2 = beta_abs2(spec, lambdas);
        chi2.iter().zip(&b2).map(|(&c, &b)| c / b).collect()
    }

    #[test]
    fn projection_examples() {
        let spec = one_b_spec();
        let m_grid = 64;
        let g_any = const_g(m_grid, 1.0);
        let k = k_weight(&spec, &g_any.lambdas);
        let w = g_any.weight();
        // In-class input returns unchanged: f = p/k has weighted moment p.
        let p_target = 0.7;
        let f_in = SpectralDensityGrid {
            t: 1,
            lambdas: g_any.lambdas.clone(),
            values: k
                .iter()
                .map(|&km| DMatrix::from_element(1, 1, Complex64::new(p_target / km, 0.0)))
                .collect(),
        };
        let cls = DensityClass::MomentTrace { p: p_target };
        assert!(cls.violation(&f_in, &spec).unwrap() < 1e-10);
        let back = project_onto_class(&f_in, &cls, &spec, PROJECT_TOL).unwrap();
        for m in 0..m_grid {
            assert!((&back.values[m] - &f_in.values[m]).norm() < 1e-12);
        }
        // Scaled copy of the moment-aligned profile projects to a rescale.
        let wsum2: f64 = k.iter().map(|x| x * x).sum();
        let alpha = p_target * 2.0 * PI / (w * wsum2);
        let aligned = SpectralDensityGrid {
            t: 1,
            lambdas: g_any.lambdas.clone(),
            values: k
                .iter()
                .map(|&km| DMatrix::from_element(1, 1, Complex64::new(alpha * km, 0.0)))
                .collect(),
        };
        assert!(cls.violation(&aligned, &spec).unwrap() < 1e-8);
        let scaled = aligned.map(|_, v| v * Complex64::new(3.0, 0.0));
        let proj = project_onto_class(&scaled, &cls, &spec, PROJECT_TOL).unwrap();
        for m in 0..m_grid {
            assert!(
                (&proj.values[m] - &aligned.values[m]).norm()
                    < 1e-8 * (1.0 + aligned.values[m].norm())
            );
        }
        // Degenerate contamination pins g to the anchor.
        let g1 = const_g(m_grid, 0.9);
        let weight = vec![1.0; m_grid];
        let q = moment_full(&g1.values, &weight, w);
        let cls_g = DensityClass::MixMatrix { eps: 0.0, g1: g1.clone(), q };
        let perturbed = g1.map(|m, v| v * Complex64::new(1.0 + 0.3 * ((m % 5) as f64 - 2.0), 0.0));
        let pg = project_onto_class(&perturbed, &cls_g, &spec, PROJECT_TOL).unwrap();
        for m in 0..m_grid {
            assert!(
                (&pg.values[m] - &g1.values[m]).norm() < 1e-6 * (1.0 + g1.values[m].norm()),
                "mix projection must collapse to the anchor at eps = 0"
            );
        }
    }

    #[test]
    fn cross_delta_anchor_linearity_and_zero_noise() {
        let spec = one_b_spec();
        let m_grid = 256;
        let f = toy_f(m_grid, 1.0);
        let g = const_g(m_grid, 0.7);
        let a = lift_coefficients(&[1.0, 0.5, 0.25], 1).unwrap();
        let ctx = cross_context(&f, &g, &spec, &a, Some(32), None).unwrap();
        let d = cross_delta(&ctx, &f, &g).unwrap();
        assert!(
            (d - ctx.delta0).abs() <= 1e-6 * ctx.delta0.abs(),
            "anchor self-consistency: {d} vs {}",
            ctx.delta0
        );
        let zf = f.map(|_, v| v * Complex64::new(0.0, 0.0));
        let zg = g.map(|_, v| v * Complex64::new(0.0, 0.0));
        let df = cross_delta(&ctx, &f, &zg).unwrap();
        let dg = cross_delta(&ctx, &zf, &g).unwrap();
        assert!((df + dg - d).abs() <= 1e-12 * d.abs().max(1.0));
        let f2 = f.map(|_, v| v * Complex64::new(2.0, 0.0));
        let g3 = g.map(|_, v| v * Complex64::new(3.0, 0.0));
        let d23 = cross_delta(&ctx, &f2, &g3).unwrap();
        assert!((d23 - (2.0 * df + 3.0 * dg)).abs() <= 1e-10 * d23.abs().max(1.0));
    }

    #[test]
    fn lmo_stays_in_class_and_beats_samples() {
        let spec = one_b_spec();
        let m_grid = 64;
        let v = const_g(m_grid, 0.5);
        let u = const_g(m_grid, 1.4);
        let weight = vec![1.0; m_grid];
        let w = v.weight();
        let q_lo = moment_trace(&v.values, &weight, w);
        let q_hi = moment_trace(&u.values, &weight, w);
        let q = 0.5 * (q_lo + q_hi);
        let cls = DensityClass::BandTrace { v: v.clone(), u: u.clone(), q };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        use rand_distr::StandardNormal;
        let wgt: Vec<DMatrix<Complex64>> = (0..m_grid)
            .map(|_| {
                let x: f64 = rng.sample(StandardNormal);
                DMatrix::from_element(1, 1, Complex64::new(x * x, 0.0))
            })
            .collect();
        let s = lmo(&cls, &wgt, &weight, w, 1).unwrap().unwrap();
        let s_grid = SpectralDensityGrid { t: 1, lambdas: v.lambdas.clone(), values: s.clone() };
        assert!(cls.violation(&s_grid, &spec).unwrap() < 1e-9);
        let score =
            |x: &[DMatrix<Complex64>]| (0..m_grid).map(|m| w * frob_inner(&wgt[m], &x[m])).sum::<f64>();
        let s_score = score(&s);
        for seed in 0..5 {
            let mut r2 = ChaCha8Rng::seed_from_u64(100 + seed);
            let member = sample_member(&cls, &u, 0.4, &mut r2, &spec, PROJECT_TOL).unwrap();
            assert!(cls.violation(&member, &spec).unwrap() < 1e-7);
            assert!(s_score >= score(&member.values) - 1e-9 * s_score.abs().max(1.0));
        }
    }

    #[test]
    fn trace_pair_desk_instance_converges_and_dominates() {
        let spec = one_b_spec();
        let m_grid = 128;
        let f_init = toy_f(m_grid, 1.0);
        let g_init = const_g(m_grid, 0.6);
        let a = lift_coefficients(&[1.0, 0.5], 1).unwrap();
        let k = k_weight(&spec, &f_init.lambdas);
        let w = f_init.weight();
        let p = moment_trace(&f_init.values, &k, w);
        let ones = vec![1.0; m_grid];
        let v = const_g(m_grid, 0.3);
        let u = const_g(m_grid, 1.2);
        let q = 0.6 * moment_trace(&v.values, &ones, w) + 0.4 * moment_trace(&u.values, &ones, w);
        let cls_f = DensityClass::MomentTrace { p };
        let cls_g = DensityClass::BandTrace { v: v.clone(), u: u.clone(), q };
        let opts = MinimaxOptions { l: Some(24), max_iters: 200, ..Default::default() };
        let sol = least_favorable(&cls_f, &cls_g, &a, &spec, &f_init, &g_init, &opts).unwrap();
        for win in sol.objective_path.windows(2) {
            assert!(win[1] >= win[0] - 1e-12 * win[0].abs());
        }
        assert!(cls_f.violation(&sol.f0, &spec).unwrap() < 1e-6);
        assert!(cls_g.violation(&sol.g0, &spec).unwrap() < 1e-6);
        assert!(sol.converged, "desk instance should converge: gap {}", sol.rel_gap);
        // Dominance of the anchored functional over sampled class members.
        let ctx = cross_context(&sol.f0, &sol.g0, &spec, &a, Some(24), None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..6 {
            let fs = sample_member(&cls_f, &sol.f0, 0.5, &mut rng, &spec, PROJECT_TOL).unwrap();
            let gs = sample_member(&cls_g, &sol.g0, 0.5, &mut rng, &spec, PROJECT_TOL).unwrap();
            let d = cross_delta(&ctx, &fs, &gs).unwrap();
            assert!(
                d <= sol.delta0 * (1.0 + 5e-3),
                "sampled pair beats the saddle: {d} vs {}",
                sol.delta0
            );
        }
        let res = sol.residuals.as_ref().unwrap();
        for eq in &res.equations {
            assert!(eq.rel_residual < 5e-2, "{}: residual {}", eq.equation, eq.rel_residual);
        }
    }

    #[test]
    fn semi_singleton_matches_forced_density_and_eps_is_monotone() {
        let spec = one_b_spec();
        let m_grid = 128;
        let f = toy_f(m_grid, 1.0);
        let g1 = const_g(m_grid, 0.8);
        let a = lift_coefficients(&[1.0, 0.5], 1).unwrap();
        let weight = vec![1.0; m_grid];
        let w = f.weight();
        let q = moment_full(&g1.values, &weight, w);
        let opts = MinimaxOptions { l: Some(24), max_iters: 120, ..Default::default() };
        let cls0 = DensityClass::MixMatrix { eps: 0.0, g1: g1.clone(), q: q.clone() };
        let sol0 = least_favorable_noise_semi(&f, &cls0, &a, &spec, &g1, &opts).unwrap();
        for m in 0..m_grid {
            assert!((&sol0.g0.values[m] - &g1.values[m]).norm() < 1e-7);
        }
        let classical = filter::solve_filter(
            &f,
            &g1,
            &spec,
            &a,
            FilterOptions { truncation: TruncationPolicy::Fixed(24), ridge: None },
        )
        .unwrap();
        assert!((sol0.delta0 - classical.delta).abs() <= 1e-9 * classical.delta);
        for m in (0..m_grid).step_by(17) {
            assert!((&sol0.h0[m] - &classical.h[m]).norm() < 1e-8);
        }
        let res = sol0.residuals.as_ref().unwrap();
        assert_eq!(res.equations.len(), 1);
        assert!(res.equations[0].rel_residual <= 1e-6);
        assert!(res.equations[0].slack_violation <= 1e-6);
        // Nested classes: growing contamination can only raise the value.
        let mut prev = sol0.delta0;
        for eps in [0.2, 0.5] {
            let cls = DensityClass::MixMatrix { eps, g1: g1.clone(), q: q.clone() };
            let sol = least_favorable_noise_semi(&f, &cls, &a, &spec, &g1, &opts).unwrap();
            assert!(
                sol.delta0 >= prev - 1e-6 * prev.abs(),
                "eps {eps}: {} < {prev}",
                sol.delta0
            );
            prev = sol.delta0;
        }
    }

    #[test]
    fn unsupported_pairings_are_rejected() {
        let spec = one_b_spec();
        let m_grid = 32;
        let f = toy_f(m_grid, 1.0);
        let g = const_g(m_grid, 0.5);
        let a = lift_coefficients(&[1.0], 1).unwrap();
        let v = const_g(m_grid, 0.3);
        let u = const_g(m_grid, 1.0);
        let ones = vec![1.0; m_grid];
        let w = f.weight();
        let cls_trace = DensityClass::MomentTrace { p: 1.0 };
        let q_mat = moment_full(&g.values, &ones, w);
        let cls_band_matrix = DensityClass::BandMatrix { v: v.clone(), u: u.clone(), q: q_mat.clone() };
        let opts = MinimaxOptions::default();
        let err = least_favorable(&cls_trace, &cls_band_matrix, &a, &spec, &f, &g, &opts)
            .err()
            .expect("mismatched slots must be rejected");
        assert!(matches!(err, Error::Unsupported(_)));
        let cls_mix = DensityClass::MixTrace { eps: 0.1, g1: g.clone(), q: 1.0 };
        let err2 = least_favorable(&cls_trace, &cls_mix, &a, &spec, &f, &g, &opts)
            .err()
            .expect("mix class on the pair route must be rejected");
        assert!(matches!(err2, Error::Unsupported(_)));
        let err3 = least_favorable_noise_semi(&f, &cls_band_matrix, &a, &spec, &g, &opts)
            .err()
            .expect("semi route needs a contamination class");
        assert!(matches!(err3, Error::Unsupported(_)));
    }

    #[test]
    fn residuals_are_scale_invariant() {
        let spec = one_b_spec();
        let m_grid = 64;
        let f = toy_f(m_grid, 1.0);
        let g = const_g(m_grid, 0.7);
        let a = lift_coefficients(&[1.0, 0.5], 1).unwrap();
        let k = k_weight(&spec, &f.lambdas);
        let w = f.weight();
        let ones = vec![1.0; m_grid];
        let make_sol = |c: f64| -> MinimaxSolution {
            let fc = f.map(|_, v| v * Complex64::new(c, 0.0));
            let gc = g.map(|_, v| v * Complex64::new(c, 0.0));
            let filt = filter::solve_filter(
                &fc,
                &gc,
                &spec,
                &a,
                FilterOptions { truncation: TruncationPolicy::Fixed(16), ridge: None },
            )
            .unwrap();
            MinimaxSolution {
                h0: filt.h.clone(),
                delta0: filt.delta,
                f0: fc,
                g0: gc,
                filter: filt,
                iterations: 0,
                converged: true,
                rel_gap: 0.0,
                objective_path: vec![],
                residuals: None,
            }
        };
        let scales = [1.0, 3.0];
        let mut reports = Vec::new();
        for &c in &scales {
            let sol = make_sol(c);
            let cls_f = DensityClass::MomentTrace { p: moment_trace(&sol.f0.values, &k, w) };
            let v = sol.g0.map(|_, x| x * Complex64::new(0.5, 0.0));
            let u = sol.g0.map(|_, x| x * Complex64::new(2.0, 0.0));
            let q = moment_trace(&sol.g0.values, &ones, w);
            let cls_g = DensityClass::BandTrace { v, u, q };
            reports.push(
                saddle_residuals(&sol, Some(&cls_f), &cls_g, &spec, &a).unwrap(),
            );
        }
        for (e1, e2) in reports[0].equations.iter().zip(&reports[1].equations) {
            assert_eq!(e1.equation, e2.equation);
            assert!(
                (e1.rel_residual - e2.rel_residual).abs() <= 1e-8 * (1.0 + e1.rel_residual),
                "{}: {} vs {}",
                e1.equation,
                e1.rel_residual,
                e2.rel_residual
            );
            assert!((e1.slack_violation - e2.slack_violation).abs() <= 1e-8);
        }
    }
}
