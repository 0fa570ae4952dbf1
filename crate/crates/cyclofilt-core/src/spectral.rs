//! Matrix-valued spectral densities on a symmetric midpoint frequency grid,
//! the combined density p = f + |β|²g, minimality and structural-function
//! quadratures, and blocked periodic-ARMA densities.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::indexed_map;
use crate::increments::{beta_at, chi_at, IncrementSpec};

/// Midpoint frequencies λ_m = -π + (m + 1/2)·2π/M, m = 0..M-1.
///
/// The grid is symmetric (λ_{M-1-m} = -λ_m) and never touches a zero of χ or
/// β, so singular ratios are only ever evaluated at regular points.
pub fn midpoint_lambdas(m_grid: usize) -> Vec<f64> {
    let w = 2.0 * PI / m_grid as f64;
    (0..m_grid).map(|m| -PI + (m as f64 + 0.5) * w).collect()
}

/// A matrix-valued spectral density sampled on the midpoint grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDensityGrid {
    pub t: usize,
    pub lambdas: Vec<f64>,
    pub values: Vec<DMatrix<Complex64>>,
}

impl SpectralDensityGrid {
    pub fn m_grid(&self) -> usize {
        self.lambdas.len()
    }

    /// Quadrature weight 2π/M of the midpoint rule.
    pub fn weight(&self) -> f64 {
        2.0 * PI / self.m_grid() as f64
    }

    /// Build by evaluating a matrix function at every grid frequency.
    pub fn from_fn<F>(t: usize, m_grid: usize, f: F) -> Self
    where
        F: Fn(f64) -> DMatrix<Complex64> + Sync,
    {
        let lambdas = midpoint_lambdas(m_grid);
        let values = indexed_map(m_grid, |m| f(lambdas[m]));
        SpectralDensityGrid { t, lambdas, values }
    }

    /// Scalar (T = 1) density from a real function.
    pub fn scalar_from_fn<F>(m_grid: usize, f: F) -> Self
    where
        F: Fn(f64) -> f64 + Sync,
    {
        Self::from_fn(1, m_grid, |l| DMatrix::from_element(1, 1, Complex64::new(f(l), 0.0)))
    }

    /// Constant density.
    pub fn constant(m_grid: usize, mat: DMatrix<Complex64>) -> Self {
        let t = mat.nrows();
        Self::from_fn(t, m_grid, |_| mat.clone())
    }

    /// Pointwise map over the values, keeping the grid.
    pub fn map<F>(&self, f: F) -> Self
    where
        F: Fn(usize, &DMatrix<Complex64>) -> DMatrix<Complex64> + Sync,
    {
        let values = indexed_map(self.m_grid(), |m| f(m, &self.values[m]));
        SpectralDensityGrid { t: self.t, lambdas: self.lambdas.clone(), values }
    }

    /// Pointwise combination with a second grid on the same frequencies.
    pub fn zip_map<F>(&self, other: &Self, f: F) -> Result<Self>
    where
        F: Fn(usize, &DMatrix<Complex64>, &DMatrix<Complex64>) -> DMatrix<Complex64> + Sync,
    {
        self.check_same_grid(other)?;
        let values = indexed_map(self.m_grid(), |m| f(m, &self.values[m], &other.values[m]));
        Ok(SpectralDensityGrid { t: self.t, lambdas: self.lambdas.clone(), values })
    }

    pub fn check_same_grid(&self, other: &Self) -> Result<()> {
        if self.t != other.t || self.m_grid() != other.m_grid() {
            return Err(Error::Input(format!(
                "grid mismatch: T {}x{} vs {}x{}",
                self.t,
                self.m_grid(),
                other.t,
                other.m_grid()
            )));
        }
        Ok(())
    }

    /// Hermitian-to-1e-12 and eigenvalues ≥ -1e-10 at every frequency.
    pub fn validate(&self) -> Result<()> {
        for (m, v) in self.values.iter().enumerate() {
            if v.nrows() != self.t || v.ncols() != self.t {
                return Err(Error::Input(format!("value {m} is not {0}x{0}", self.t)));
            }
            let herm_err = (v - v.adjoint()).norm();
            if herm_err > 1e-12 * (1.0 + v.norm()) {
                return Err(Error::Numerical(format!(
                    "density not Hermitian at λ = {:.6} (defect {herm_err:.3e})",
                    self.lambdas[m]
                )));
            }
            let eig = v.clone().symmetric_eigen();
            let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            let scale = eig.eigenvalues.iter().cloned().fold(0.0_f64, |a, b| a.max(b.abs()));
            if min < -1e-10 * (1.0 + scale) {
                return Err(Error::Numerical(format!(
                    "density not PSD at λ = {:.6} (min eigenvalue {min:.3e})",
                    self.lambdas[m]
                )));
            }
        }
        Ok(())
    }

    /// Enforce the real-process symmetry f(-λ) = f(λ)* by averaging mirror
    /// points (the grid is symmetric, so the mirror of index m is M-1-m).
    pub fn reflection_symmetrize(&self) -> Self {
        let m_grid = self.m_grid();
        self.map(|m, v| {
            let mirror = &self.values[m_grid - 1 - m];
            (v + mirror.map(|z| z.conj())) * Complex64::new(0.5, 0.0)
        })
    }

    /// Weighted moment Σ_m w·c_m·f(λ_m) for complex scalar weights.
    pub fn fourier_moment(&self, coeffs: &[Complex64]) -> DMatrix<Complex64> {
        let w = self.weight();
        let mut acc = DMatrix::zeros(self.t, self.t);
        for (v, c) in self.values.iter().zip(coeffs) {
            acc += v * (*c * w);
        }
        acc
    }

    /// Trace of each value against the frequency, as CSV text.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("lambda,trace\n");
        for (l, v) in self.lambdas.iter().zip(&self.values) {
            let tr: Complex64 = v.diagonal().iter().sum();
            out.push_str(&format!("{l:.12},{:.12}\n", tr.re));
        }
        out
    }

    pub fn to_json(&self) -> String {
        let values: Vec<Vec<Vec<(f64, f64)>>> = self
            .values
            .iter()
            .map(|v| {
                (0..self.t)
                    .map(|r| (0..self.t).map(|c| (v[(r, c)].re, v[(r, c)].im)).collect())
                    .collect()
            })
            .collect();
        let form = GridJson { t: self.t, m_grid: self.m_grid(), values };
        serde_json::to_string(&form).expect("grid serialization")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let form: GridJson =
            serde_json::from_str(text).map_err(|e| Error::Input(format!("density grid: {e}")))?;
        if form.values.len() != form.m_grid {
            return Err(Error::Input("density grid: value count != m_grid".into()));
        }
        let values = form
            .values
            .iter()
            .map(|rows| {
                if rows.len() != form.t || rows.iter().any(|r| r.len() != form.t) {
                    return Err(Error::Input("density grid: ragged matrix".into()));
                }
                Ok(DMatrix::from_fn(form.t, form.t, |r, c| {
                    Complex64::new(rows[r][c].0, rows[r][c].1)
                }))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SpectralDensityGrid { t: form.t, lambdas: midpoint_lambdas(form.m_grid), values })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridJson {
    t: usize,
    m_grid: usize,
    values: Vec<Vec<Vec<(f64, f64)>>>,
}

/// |χ(e^{-iλ})|² on a frequency list.
pub fn chi_abs2(spec: &IncrementSpec, lambdas: &[f64]) -> Vec<f64> {
    lambdas.iter().map(|&l| chi_at(spec, l).norm_sqr()).collect()
}

/// |β(iλ)|² on a frequency list.
pub fn beta_abs2(spec: &IncrementSpec, lambdas: &[f64]) -> Vec<f64> {
    lambdas.iter().map(|&l| beta_at(spec, l).norm_sqr()).collect()
}

/// The bounded ratio r(λ) = |β(iλ)|²/|χ(e^{-iλ})|² (zeros of χ and β match
/// wherever χ vanishes to the order of β; extra χ zeros give r = 0).
pub fn beta_chi_ratio(spec: &IncrementSpec, lambdas: &[f64]) -> Vec<f64> {
    lambdas
        .iter()
        .map(|&l| beta_at(spec, l).norm_sqr() / chi_at(spec, l).norm_sqr())
        .collect()
}

/// Combined density p(λ) = f(λ) + |β(iλ)|²·g(λ).
pub fn combined_density(
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
    spec: &IncrementSpec,
) -> Result<SpectralDensityGrid> {
    let b2 = beta_abs2(spec, &f.lambdas);
    f.zip_map(g, |m, fv, gv| fv + gv * Complex64::new(b2[m], 0.0))
}

/// Multiply a base density by the fractional factor
/// ∏_{ν∈M} |(e^{-iν} - e^{iλ})(e^{iν} - e^{iλ})|^{-2D̃_ν} = ∏ (2|cos λ - cos ν|)^{-2D̃_ν}.
pub fn fractional_density(
    spec: &IncrementSpec,
    base: &SpectralDensityGrid,
) -> Result<SpectralDensityGrid> {
    if spec.is_integer_mode() {
        return Ok(base.clone());
    }
    let roots = crate::increments::seasonal_root_set(spec)?;
    for (m, v) in base.values.iter().enumerate() {
        let eig = v.clone().symmetric_eigen();
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if !min.is_finite() || min <= 0.0 {
            return Err(Error::Input(format!(
                "fractional base density must be bounded away from 0 (λ = {:.6})",
                base.lambdas[m]
            )));
        }
    }
    Ok(base.map(|m, v| {
        let l = base.lambdas[m];
        let mut factor = 1.0;
        for root in &roots.roots {
            let gap = 2.0 * (l.cos() - root.nu.cos()).abs();
            factor *= gap.powf(-2.0 * root.d_tilde);
        }
        v * Complex64::new(factor, 0.0)
    }))
}

/// Outcome of the minimality quadrature with its grid-refinement check.
#[derive(Debug, Clone, Serialize)]
pub struct MinimalityReport {
    /// Quadrature of ∫ Tr[(|β|²/|χ|²)·p⁻¹] dλ at the full resolution.
    pub value: f64,
    /// Value recomputed at half resolution.
    pub coarse_value: f64,
    /// True when the relative change across resolutions is within 10%.
    pub finite: bool,
}

/// Single-resolution quadrature of the minimality integrand
/// ∫ Tr[(|β|²/|χ|²)·p⁻¹] dλ on the grid of `f` and `g`.
pub fn minimality_value(
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
    spec: &IncrementSpec,
) -> Result<f64> {
    let p = combined_density(f, g, spec)?;
    let r = beta_chi_ratio(spec, &p.lambdas);
    let w = p.weight();
    let mut bad: Vec<f64> = Vec::new();
    let mut value = 0.0;
    for (m, v) in p.values.iter().enumerate() {
        let eig = v.clone().symmetric_eigen();
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        if min <= 0.0 || max / min > COND_CAP {
            bad.push(p.lambdas[m]);
            continue;
        }
        let tr_inv: f64 = eig.eigenvalues.iter().map(|e| 1.0 / e).sum();
        value += w * r[m] * tr_inv;
    }
    if !bad.is_empty() {
        bad.truncate(8);
        return Err(Error::Numerical(format!(
            "combined density singular on the grid near λ ∈ {bad:?}"
        )));
    }
    Ok(value)
}

/// Decidable proxy for the minimality condition: the trace integral is
/// declared finite when its quadrature moves by at most 10% when the grid
/// resolution doubles. Densities are supplied as functions of frequency so
/// both resolutions can be evaluated.
pub fn check_minimality<F, G>(
    spec: &IncrementSpec,
    t: usize,
    m_grid: usize,
    f: F,
    g: G,
) -> Result<MinimalityReport>
where
    F: Fn(f64) -> DMatrix<Complex64> + Sync,
    G: Fn(f64) -> DMatrix<Complex64> + Sync,
{
    let coarse_f = SpectralDensityGrid::from_fn(t, m_grid, &f);
    let coarse_g = SpectralDensityGrid::from_fn(t, m_grid, &g);
    let fine_f = SpectralDensityGrid::from_fn(t, 2 * m_grid, &f);
    let fine_g = SpectralDensityGrid::from_fn(t, 2 * m_grid, &g);
    let coarse_value = minimality_value(&coarse_f, &coarse_g, spec)?;
    let value = minimality_value(&fine_f, &fine_g, spec)?;
    let rel = (value - coarse_value).abs() / value.abs().max(f64::MIN_POSITIVE);
    Ok(MinimalityReport { value, coarse_value, finite: rel <= 0.10 })
}

/// Structural function of the stationary GM increment:
/// D(m; μ̄₁, μ̄₂) = ∫ e^{iλm} χ_{μ̄₁}(e^{-iλ}) χ_{μ̄₂}(e^{iλ}) |β(iλ)|^{-2} f(λ) dλ.
pub fn structural_cov(
    spec: &IncrementSpec,
    f: &SpectralDensityGrid,
    m: i64,
    mu1: &[u32],
    mu2: &[u32],
) -> Result<DMatrix<Complex64>> {
    if !spec.is_integer_mode() {
        return Err(Error::Unsupported("structural_cov requires integer mode".into()));
    }
    let spec1 = with_steps(spec, mu1)?;
    let spec2 = with_steps(spec, mu2)?;
    let coeffs: Vec<Complex64> = f
        .lambdas
        .iter()
        .map(|&l| {
            let phase = Complex64::new(0.0, l * m as f64).exp();
            let c1 = chi_at(&spec1, l);
            let c2 = chi_at(&spec2, l).conj();
            let b2 = beta_at(spec, l).norm_sqr();
            phase * c1 * c2 / b2
        })
        .collect();
    Ok(f.fourier_moment(&coeffs))
}

fn with_steps(spec: &IncrementSpec, mu: &[u32]) -> Result<IncrementSpec> {
    if mu.len() != spec.patterns.len() {
        return Err(Error::Input("step vector length must match pattern count".into()));
    }
    let patterns = spec
        .patterns
        .iter()
        .zip(mu)
        .map(|(p, &m)| crate::increments::Pattern { mu: m, ..*p })
        .collect();
    IncrementSpec::new(patterns, spec.period)
}

/// Condition-number cap for pointwise Hermitian inversion.
pub const COND_CAP: f64 = 1e12;

/// Report accompanying a pointwise inverse.
#[derive(Debug, Clone, Serialize)]
pub struct InverseReport {
    pub max_condition: f64,
    /// Ridge actually added (absolute), zero when unregularized.
    pub ridge: f64,
}

/// Pointwise Hermitian inverse via eigendecomposition. `ridge` is relative to
/// the grid-mean of trace/T; when set, p + ridge·scale·I is inverted instead.
pub fn hermitian_inverse(
    p: &SpectralDensityGrid,
    ridge: Option<f64>,
) -> Result<(SpectralDensityGrid, InverseReport)> {
    let t = p.t;
    let scale = p
        .values
        .iter()
        .map(|v| v.diagonal().iter().map(|z| z.re).sum::<f64>() / t as f64)
        .sum::<f64>()
        / p.m_grid() as f64;
    let eps = ridge.map(|r| r * if scale > 0.0 { scale } else { 1.0 }).unwrap_or(0.0);
    let results: Vec<std::result::Result<(DMatrix<Complex64>, f64), f64>> =
        indexed_map(p.m_grid(), |m| {
            let mut v = p.values[m].clone();
            if eps > 0.0 {
                for i in 0..t {
                    v[(i, i)] += Complex64::new(eps, 0.0);
                }
            }
            let eig = v.symmetric_eigen();
            let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
            if min <= 0.0 || max / min > COND_CAP {
                return Err(p.lambdas[m]);
            }
            let mut inv = DMatrix::zeros(t, t);
            for (k, e) in eig.eigenvalues.iter().enumerate() {
                let col = eig.eigenvectors.column(k);
                inv += (&col * col.adjoint()) * Complex64::new(1.0 / e, 0.0);
            }
            Ok((inv, max / min))
        });
    let mut values = Vec::with_capacity(p.m_grid());
    let mut max_condition = 0.0_f64;
    let mut bad = Vec::new();
    for r in results {
        match r {
            Ok((inv, cond)) => {
                values.push(inv);
                max_condition = max_condition.max(cond);
            }
            Err(l) => bad.push(l),
        }
    }
    if !bad.is_empty() {
        bad.truncate(8);
        return Err(Error::Numerical(format!(
            "combined density ill-conditioned (cap {COND_CAP:.0e}) near λ ∈ {bad:?}; \
             consider --regularize"
        )));
    }
    Ok((
        SpectralDensityGrid { t, lambdas: p.lambdas.clone(), values },
        InverseReport { max_condition, ridge: eps },
    ))
}

/// Hermitian PSD square root via eigendecomposition; tiny negative
/// eigenvalues (roundoff) are clipped to zero.
pub fn hermitian_sqrt(v: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let t = v.nrows();
    let eig = v.clone().symmetric_eigen();
    let mut out = DMatrix::zeros(t, t);
    for (k, e) in eig.eigenvalues.iter().enumerate() {
        let col = eig.eigenvectors.column(k);
        out += (&col * col.adjoint()) * Complex64::new(e.max(0.0).sqrt(), 0.0);
    }
    out
}

/// Periodic seasonal ARMA parameter tables: per-slot expanded polynomials
/// Φ_m(z) = Σ_k phi[m][k] z^k, Θ_m(z) = Σ_k theta[m][k] z^k and per-slot
/// innovation variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PsarimaParams {
    pub period: usize,
    pub phi: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    pub sigma2: Vec<f64>,
}

impl PsarimaParams {
    pub fn validate(&self) -> Result<()> {
        let t = self.period;
        if t == 0 {
            return Err(Error::Input("period must be >= 1".into()));
        }
        if self.phi.len() != t || self.theta.len() != t {
            return Err(Error::Input("phi and theta need one table per slot".into()));
        }
        if self.sigma2.len() != t && self.sigma2.len() != 1 {
            return Err(Error::Input("sigma2 needs one entry per slot (or a single shared one)".into()));
        }
        for m in 0..t {
            if self.phi[m].is_empty() || self.phi[m][0] == 0.0 {
                return Err(Error::Input(format!("phi[{m}] must start with a nonzero constant")));
            }
            if self.theta[m].is_empty() {
                return Err(Error::Input(format!("theta[{m}] must be nonempty")));
            }
        }
        if self.sigma2.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Input("innovation variances must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: PsarimaParams =
            serde_json::from_str(text).map_err(|e| Error::Input(format!("psarima params: {e}")))?;
        p.validate()?;
        Ok(p)
    }

    pub fn sigma2_at(&self, slot: usize) -> f64 {
        if self.sigma2.len() == 1 { self.sigma2[0] } else { self.sigma2[slot] }
    }

    fn phi_coeff(&self, slot: usize, k: i64) -> f64 {
        if k < 0 {
            return 0.0;
        }
        *self.phi[slot].get(k as usize).unwrap_or(&0.0)
    }

    fn theta_coeff(&self, slot: usize, k: i64) -> f64 {
        if k < 0 {
            return 0.0;
        }
        *self.theta[slot].get(k as usize).unwrap_or(&0.0)
    }

    /// Block AR matrices Π_0 = Π, Π_l(k,j) = Φ_k(lT + k - j).
    pub fn ar_blocks(&self) -> Vec<DMatrix<f64>> {
        self.blocks(true)
    }

    /// Block MA matrices Ξ_0 = Ξ, Ξ_l(k,j) = Θ_k(lT + k - j).
    pub fn ma_blocks(&self) -> Vec<DMatrix<f64>> {
        self.blocks(false)
    }

    fn blocks(&self, ar: bool) -> Vec<DMatrix<f64>> {
        let t = self.period;
        let q = if ar {
            self.phi.iter().map(|v| v.len()).max().unwrap_or(1) - 1
        } else {
            self.theta.iter().map(|v| v.len()).max().unwrap_or(1) - 1
        };
        let l_max = (q + t - 1) / t;
        (0..=l_max)
            .map(|l| {
                DMatrix::from_fn(t, t, |k, j| {
                    let idx = (l * t) as i64 + k as i64 - j as i64;
                    if ar { self.phi_coeff(k, idx) } else { self.theta_coeff(k, idx) }
                })
            })
            .collect()
    }
}

fn poly_eval(blocks: &[DMatrix<f64>], z: Complex64) -> DMatrix<Complex64> {
    let t = blocks[0].nrows();
    let mut acc = DMatrix::zeros(t, t);
    let mut zp = Complex64::new(1.0, 0.0);
    for b in blocks {
        acc += b.map(|x| Complex64::new(x, 0.0)) * zp;
        zp *= z;
    }
    acc
}

/// Stability of det(Π + Σ Π_l z^l) ≠ 0 on |z| ≤ 1, checked on a 2048-point
/// unit circle: minimum |det| and winding number (zeros strictly inside).
pub fn check_ar_stability(blocks: &[DMatrix<f64>]) -> Result<()> {
    let n = 2048;
    let mut dets = Vec::with_capacity(n);
    for j in 0..n {
        let z = Complex64::new(0.0, 2.0 * PI * j as f64 / n as f64).exp();
        let a = poly_eval(blocks, z);
        dets.push(a.lu().determinant());
    }
    let max_abs = dets.iter().map(|d| d.norm()).fold(0.0_f64, f64::max);
    let near: Vec<f64> = (0..n)
        .filter(|&j| dets[j].norm() < 1e-9 * max_abs.max(f64::MIN_POSITIVE))
        .map(|j| 2.0 * PI * j as f64 / n as f64)
        .collect();
    if !near.is_empty() {
        let mut show = near.clone();
        show.truncate(8);
        return Err(Error::Input(format!(
            "AR operator nearly singular on the unit circle at angles {show:?}"
        )));
    }
    let mut winding = 0.0;
    for j in 0..n {
        let d = (dets[(j + 1) % n] / dets[j]).arg();
        winding += d;
    }
    let turns = (winding / (2.0 * PI)).round() as i64;
    if turns != 0 {
        return Err(Error::Input(format!(
            "AR operator has {turns} root(s) inside the unit disk"
        )));
    }
    Ok(())
}

/// Spectral density of the forward-blocked stationary increment sequence
/// Ȳ_m = (Y_{mT}, …, Y_{mT+T-1})ᵀ of the periodic ARMA model:
/// f(λ) = (1/2π)·A(e^{-iλ})⁻¹ M(e^{-iλ}) Σ M(e^{-iλ})^H A(e^{-iλ})^{-H}.
pub fn density_from_psarima(params: &PsarimaParams, m_grid: usize) -> Result<SpectralDensityGrid> {
    params.validate()?;
    let ar = params.ar_blocks();
    let ma = params.ma_blocks();
    check_ar_stability(&ar)?;
    let t = params.period;
    let sigma = DMatrix::from_fn(t, t, |r, c| {
        if r == c { Complex64::new(params.sigma2_at(r), 0.0) } else { Complex64::new(0.0, 0.0) }
    });
    let grid = SpectralDensityGrid::from_fn(t, m_grid, |l| {
        let z = Complex64::new(0.0, -l).exp();
        let a = poly_eval(&ar, z);
        let m = poly_eval(&ma, z);
        let ainv = a.lu().try_inverse().expect("stability check passed");
        let half = &ainv * &m;
        let f = &half * &sigma * half.adjoint() / Complex64::new(2.0 * PI, 0.0);
        // Hermitian cleanup of roundoff.
        (&f + f.adjoint()) * Complex64::new(0.5, 0.0)
    });
    Ok(grid)
}

/// Congruence from the forward within-block layout (slot p holds time mT+p)
/// to the mirrored layout used for estimation (slot p holds time mT-p):
/// f ↦ U(λ) f U(λ)^H with U(λ) = E₀ + e^{-iλ}E₁, U[0,0] = 1,
/// U[p, T-p] = e^{-iλ} for p ≥ 1. U is unitary, so Hermitian PSD is kept.
pub fn mirror_blocked_density(f: &SpectralDensityGrid) -> SpectralDensityGrid {
    let t = f.t;
    if t == 1 {
        return f.clone();
    }
    f.map(|m, v| {
        let l = f.lambdas[m];
        let e = Complex64::new(0.0, -l).exp();
        let u = DMatrix::from_fn(t, t, |r, c| {
            if r == 0 && c == 0 {
                Complex64::new(1.0, 0.0)
            } else if r >= 1 && c == t - r {
                e
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        &u * v * u.adjoint()
    })
}

/// Level-scale signal density from the density of the blocked increment
/// sequence: f = (|β|²/|χ|²)·f_Y (the bounded ratio r from `beta_chi_ratio`).
pub fn level_density_from_increment(
    f_y: &SpectralDensityGrid,
    spec: &IncrementSpec,
) -> SpectralDensityGrid {
    let r = beta_chi_ratio(spec, &f_y.lambdas);
    f_y.map(|m, v| v * Complex64::new(r[m], 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::increments::Pattern;
    use approx::assert_abs_diff_eq;

    fn one_b_spec() -> IncrementSpec {
        IncrementSpec::new(vec![Pattern { s: 1, mu: 1, r: 1, d: 0.0 }], 1).unwrap()
    }

    #[test]
    fn midpoint_grid_is_symmetric_and_avoids_zeros() {
        let l = midpoint_lambdas(64);
        for m in 0..64 {
            assert_abs_diff_eq!(l[m], -l[63 - m], epsilon = 1e-14);
        }
        let spec = one_b_spec();
        for &lam in &l {
            assert!(chi_at(&spec, lam).norm() > 1e-3);
        }
    }

    #[test]
    fn combined_density_examples() {
        let spec = one_b_spec();
        let f = SpectralDensityGrid::scalar_from_fn(128, |l| 1.0 + l * l);
        let zero = SpectralDensityGrid::scalar_from_fn(128, |_| 0.0);
        let p = combined_density(&f, &zero, &spec).unwrap();
        for m in 0..128 {
            assert_abs_diff_eq!(p.values[m][(0, 0)].re, f.values[m][(0, 0)].re, epsilon = 1e-14);
        }
        // f ≡ 0, g ≡ 1: p = |β|² pointwise.
        let one = SpectralDensityGrid::scalar_from_fn(128, |_| 1.0);
        let p = combined_density(&zero, &one, &spec).unwrap();
        for (m, &l) in p.lambdas.iter().enumerate() {
            assert_abs_diff_eq!(p.values[m][(0, 0)].re, l * l, epsilon = 1e-12);
        }
        // Linearity: (cf, cg) -> cp.
        let c = 3.5;
        let fc = f.map(|_, v| v * Complex64::new(c, 0.0));
        let gc = one.map(|_, v| v * Complex64::new(c, 0.0));
        let p1 = combined_density(&f, &one, &spec).unwrap();
        let p2 = combined_density(&fc, &gc, &spec).unwrap();
        for m in 0..128 {
            assert_abs_diff_eq!(
                p2.values[m][(0, 0)].re,
                c * p1.values[m][(0, 0)].re,
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn fractional_density_single_pattern_closed_form() {
        // (1-B)^D on base 1/(2π): f(λ) = |1-e^{iλ}|^{-2D}/(2π).
        let d = 0.3;
        let spec = IncrementSpec::new(vec![Pattern { s: 1, mu: 1, r: 0, d }], 1).unwrap();
        let base = SpectralDensityGrid::scalar_from_fn(256, |_| 1.0 / (2.0 * PI));
        let f = fractional_density(&spec, &base).unwrap();
        for (m, &l) in f.lambdas.iter().enumerate() {
            let expect = (Complex64::new(1.0, 0.0) - Complex64::new(0.0, l).exp())
                .norm()
                .powf(-2.0 * d)
                / (2.0 * PI);
            let got = f.values[m][(0, 0)].re;
            assert!((got - expect).abs() < 1e-10 * expect, "λ={l}: {got} vs {expect}");
        }
    }

    #[test]
    fn minimality_examples() {
        let spec = one_b_spec();
        let m = 2048;
        let scalar = |x: f64| DMatrix::from_element(1, 1, Complex64::new(x, 0.0));
        // f ≡ 0, g ≡ 1: integrand 1/|1-e^{-iλ}|², divergent.
        let rep = check_minimality(&spec, 1, m, |_| scalar(0.0), |_| scalar(1.0)).unwrap();
        assert!(!rep.finite, "divergent case flagged finite: {rep:?}");
        // f = |1-e^{-iλ}|^{-2}, g ≡ 1: bounded integrand.
        let f_fn = |l: f64| {
            scalar(1.0 / (Complex64::new(1.0, 0.0) - Complex64::new(0.0, -l).exp()).norm_sqr())
        };
        let rep = check_minimality(&spec, 1, m, f_fn, |_| scalar(1.0)).unwrap();
        assert!(rep.finite, "bounded case flagged divergent: {rep:?}");
        // Scaling (cf, cg) divides the value by c.
        let c = 4.0;
        let rep_c = check_minimality(
            &spec,
            1,
            m,
            |l| f_fn(l) * Complex64::new(c, 0.0),
            |_| scalar(c),
        )
        .unwrap();
        assert_abs_diff_eq!(rep_c.value, rep.value / c, epsilon = 1e-10 * rep.value);
    }

    #[test]
    fn structural_cov_examples() {
        let spec = one_b_spec();
        let m_grid = 512;
        // f chosen so χχ̄/|β|²·f ≡ 1/(2π): D(m) = δ_{m0}.
        let f = SpectralDensityGrid::scalar_from_fn(m_grid, |l| {
            let chi2 = (Complex64::new(1.0, 0.0) - Complex64::new(0.0, -l).exp()).norm_sqr();
            l * l / (2.0 * PI * chi2)
        });
        for m in [-3i64, -1, 0, 1, 5] {
            let d = structural_cov(&spec, &f, m, &[1], &[1]).unwrap();
            let expect = if m == 0 { 1.0 } else { 0.0 };
            assert_abs_diff_eq!(d[(0, 0)].re, expect, epsilon = 1e-10);
            assert_abs_diff_eq!(d[(0, 0)].im, 0.0, epsilon = 1e-10);
        }
        // Conjugate symmetry D(-m; μ̄₂, μ̄₁) = D(m; μ̄₁, μ̄₂)*.
        let g = SpectralDensityGrid::scalar_from_fn(m_grid, |l| 1.0 / (1.0 + l * l));
        let a = structural_cov(&spec, &g, 4, &[2], &[3]).unwrap();
        let b = structural_cov(&spec, &g, -4, &[3], &[2]).unwrap();
        assert_abs_diff_eq!(a[(0, 0)].re, b[(0, 0)].re, epsilon = 1e-12);
        assert_abs_diff_eq!(a[(0, 0)].im, -b[(0, 0)].im, epsilon = 1e-12);
        // f ≡ 0 → zero matrix.
        let z = SpectralDensityGrid::scalar_from_fn(m_grid, |_| 0.0);
        let d = structural_cov(&spec, &z, 2, &[1], &[1]).unwrap();
        assert_eq!(d[(0, 0)], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn hermitian_inverse_round_trip_and_cond_cap() {
        let g = SpectralDensityGrid::from_fn(2, 64, |l| {
            DMatrix::from_row_slice(
                2,
                2,
                &[
                    Complex64::new(2.0 + l * l, 0.0),
                    Complex64::new(0.3, 0.1 * l),
                    Complex64::new(0.3, -0.1 * l),
                    Complex64::new(1.5, 0.0),
                ],
            )
        });
        g.validate().unwrap();
        let (inv, rep) = hermitian_inverse(&g, None).unwrap();
        assert!(rep.max_condition < 50.0);
        for m in 0..64 {
            let prod = &g.values[m] * &inv.values[m];
            let eye = DMatrix::<Complex64>::identity(2, 2);
            assert!((prod - eye).norm() < 1e-12);
        }
        // Singular grid trips the cap; ridge rescues it.
        let sing = SpectralDensityGrid::scalar_from_fn(32, |_| 0.0);
        assert!(hermitian_inverse(&sing, None).is_err());
        let (inv, rep) = hermitian_inverse(&sing, Some(1e-3)).unwrap();
        assert!(rep.ridge > 0.0);
        assert!(inv.values[0][(0, 0)].re.is_finite());
    }

    #[test]
    fn psarima_density_examples() {
        // Pure innovation: density σ²/(2π)·I.
        let p = PsarimaParams {
            period: 2,
            phi: vec![vec![1.0], vec![1.0]],
            theta: vec![vec![1.0], vec![1.0]],
            sigma2: vec![2.0],
        };
        let f = density_from_psarima(&p, 64).unwrap();
        for v in &f.values {
            assert!((v - DMatrix::<Complex64>::identity(2, 2) * Complex64::new(2.0 / (2.0 * PI), 0.0)).norm() < 1e-12);
        }
        // Mirror congruence keeps scalar multiples of I.
        let fv = mirror_blocked_density(&f);
        for (a, b) in f.values.iter().zip(&fv.values) {
            assert!((a - b).norm() < 1e-12);
        }
        // T=1 ARMA(1,1) matches the scalar closed form.
        let (phi, theta, s2) = (0.6, 0.4, 1.3);
        let p = PsarimaParams {
            period: 1,
            phi: vec![vec![1.0, -phi]],
            theta: vec![vec![1.0, theta]],
            sigma2: vec![s2],
        };
        let f = density_from_psarima(&p, 128).unwrap();
        for (m, &l) in f.lambdas.iter().enumerate() {
            let z = Complex64::new(0.0, -l).exp();
            let expect = s2 * (Complex64::new(1.0, 0.0) + theta * z).norm_sqr()
                / (2.0 * PI * (Complex64::new(1.0, 0.0) - phi * z).norm_sqr());
            assert_abs_diff_eq!(f.values[m][(0, 0)].re, expect, epsilon = 1e-12 * expect);
        }
        f.validate().unwrap();
        // Unstable AR is rejected.
        let p = PsarimaParams {
            period: 1,
            phi: vec![vec![1.0, -1.01]],
            theta: vec![vec![1.0]],
            sigma2: vec![1.0],
        };
        assert!(density_from_psarima(&p, 32).is_err());
    }

    #[test]
    fn mirror_congruence_is_unitary_on_random_density() {
        // A genuinely periodic T=2 AR(1): slot-dependent coefficient.
        let p = PsarimaParams {
            period: 2,
            phi: vec![vec![1.0, -0.3], vec![1.0, -0.7]],
            theta: vec![vec![1.0], vec![1.0]],
            sigma2: vec![1.0, 2.0],
        };
        let f = density_from_psarima(&p, 64).unwrap();
        f.validate().unwrap();
        let fv = mirror_blocked_density(&f);
        fv.validate().unwrap();
        for (a, b) in f.values.iter().zip(&fv.values) {
            // Unitary congruence preserves trace and determinant modulus.
            let (ta, tb): (Complex64, Complex64) =
                (a.diagonal().iter().sum(), b.diagonal().iter().sum());
            assert_abs_diff_eq!(ta.re, tb.re, epsilon = 1e-12 * ta.re.abs());
            assert!(
                (a.clone().lu().determinant().norm() - b.clone().lu().determinant().norm()).abs()
                    < 1e-12
            );
        }
    }

    #[test]
    fn grid_json_round_trip() {
        let g = SpectralDensityGrid::from_fn(2, 16, |l| {
            DMatrix::from_row_slice(
                2,
                2,
                &[
                    Complex64::new(1.0 + l * l, 0.0),
                    Complex64::new(0.2, 0.3 * l),
                    Complex64::new(0.2, -0.3 * l),
                    Complex64::new(2.0, 0.0),
                ],
            )
        });
        let text = g.to_json();
        let back = SpectralDensityGrid::from_json(&text).unwrap();
        assert_eq!(g.t, back.t);
        for m in 0..16 {
            assert!((&g.values[m] - &back.values[m]).norm() < 1e-12);
        }
    }
}
