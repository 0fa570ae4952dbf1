//! Algebra of the generalized multiple (GM) seasonal increment operator.
//!
//! The operator is a product of seasonal differencing factors
//! `(1 - B^{mu_i s_i})^{d_i}` with integer orders `R_i` and optional
//! fractional parts `D_i`. Integer-order expansion is exact (arbitrary
//! precision); fractional analysis goes through the Gegenbauer factorization
//! over the seasonal root frequencies.

use std::f64::consts::PI;

use num_bigint::BigInt;
use num_complex::Complex64;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard cap on n(γ) = Σ mu_i s_i R_i for exact expansion.
pub const N_GAMMA_CAP: usize = 1_000_000;

/// One seasonal differencing pattern `(1 - B^{mu·s})^{R + D}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pattern {
    /// Seasonal period `s ≥ 1`.
    pub s: u32,
    /// Step `mu ≥ 1`.
    pub mu: u32,
    /// Integer differencing order.
    #[serde(rename = "R")]
    pub r: u32,
    /// Fractional differencing part (0 in purely integer mode).
    #[serde(rename = "D")]
    pub d: f64,
}

/// The GM increment operator: patterns plus the scalar period `T` of the
/// underlying periodically stationary sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncrementSpec {
    pub patterns: Vec<Pattern>,
    pub period: usize,
}

impl IncrementSpec {
    /// Validate pattern structure: `s ≥ 1` with at most one leading `s = 1`
    /// entry, seasonal periods strictly increasing, steps `mu ≥ 1`, and
    /// fractional mode restricted to unit steps.
    pub fn new(patterns: Vec<Pattern>, period: usize) -> Result<Self> {
        if patterns.is_empty() {
            return Err(Error::Input("increment spec needs at least one pattern".into()));
        }
        if period == 0 {
            return Err(Error::Input("period must be >= 1".into()));
        }
        let mut prev_seasonal: Option<u32> = None;
        for (i, p) in patterns.iter().enumerate() {
            if p.s == 0 || p.mu == 0 {
                return Err(Error::Input(format!("pattern {i}: s and mu must be >= 1")));
            }
            if p.s == 1 && i > 0 {
                return Err(Error::Input(
                    "a non-seasonal (s=1) pattern is allowed only as the first entry".into(),
                ));
            }
            if p.s > 1 {
                if let Some(q) = prev_seasonal {
                    if p.s <= q {
                        return Err(Error::Input(
                            "seasonal periods must be strictly increasing".into(),
                        ));
                    }
                }
                prev_seasonal = Some(p.s);
            }
            if !p.d.is_finite() {
                return Err(Error::Input(format!("pattern {i}: D must be finite")));
            }
        }
        let spec = IncrementSpec { patterns, period };
        if !spec.is_integer_mode() && spec.patterns.iter().any(|p| p.mu != 1) {
            return Err(Error::Input("fractional mode requires unit steps (mu = 1)".into()));
        }
        Ok(spec)
    }

    /// Parse from the JSON interchange form.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: IncrementSpec =
            serde_json::from_str(text).map_err(|e| Error::Input(format!("increment spec: {e}")))?;
        IncrementSpec::new(raw.patterns, raw.period)
    }

    /// True when every fractional part is zero.
    pub fn is_integer_mode(&self) -> bool {
        self.patterns.iter().all(|p| p.d == 0.0)
    }

    /// Degree n(γ) = Σ mu_i s_i R_i of the integer-order expansion.
    pub fn n_gamma(&self) -> usize {
        self.patterns
            .iter()
            .map(|p| p.mu as usize * p.s as usize * p.r as usize)
            .sum()
    }

    /// Sum of the integer orders (sign of the top coefficient is (-1)^ΣR).
    pub fn total_order(&self) -> u32 {
        self.patterns.iter().map(|p| p.r).sum()
    }
}

/// Exact integer coefficients `e_γ(k)` of `∏ (1 - B^{mu s})^R = Σ e_γ(k) B^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementCoeffs {
    pub e: Vec<BigInt>,
}

impl IncrementCoeffs {
    pub fn len(&self) -> usize {
        self.e.len()
    }

    pub fn is_empty(&self) -> bool {
        self.e.is_empty()
    }

    /// f64 view for numeric work (exactness is lost past 2^53).
    pub fn to_f64(&self) -> Vec<f64> {
        self.e.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()
    }

    /// i64 view; explicit failure on overflow, never silent wraparound.
    pub fn to_i64(&self) -> Result<Vec<i64>> {
        self.e
            .iter()
            .map(|v| {
                v.to_i64()
                    .ok_or_else(|| Error::Numerical("increment coefficient exceeds i64".into()))
            })
            .collect()
    }
}

/// Expand the integer-order operator by iterated polynomial convolution.
///
/// Exact in arbitrary-precision integers. `e[0] = 1`, `e[n(γ)] = (-1)^{ΣR}`,
/// and `Σ e = 0` whenever every order is ≥ 1.
pub fn expand_increment_coeffs(spec: &IncrementSpec) -> Result<IncrementCoeffs> {
    if !spec.is_integer_mode() {
        return Err(Error::Input("expansion requires integer mode (all D = 0)".into()));
    }
    let n = spec.n_gamma();
    if n > N_GAMMA_CAP {
        return Err(Error::Input(format!("n(gamma) = {n} exceeds the cap {N_GAMMA_CAP}")));
    }
    let mut e: Vec<BigInt> = vec![BigInt::one()];
    for p in &spec.patterns {
        let lag = p.mu as usize * p.s as usize;
        for _ in 0..p.r {
            // Multiply the running polynomial by (1 - B^lag).
            let mut next = vec![BigInt::zero(); e.len() + lag];
            for (k, c) in e.iter().enumerate() {
                next[k] += c;
                next[k + lag] -= c;
            }
            e = next;
        }
    }
    debug_assert_eq!(e.len(), n + 1);
    Ok(IncrementCoeffs { e })
}

/// Evaluate `χ(e^{-iλ}) = ∏ (1 - e^{-iλ mu s})^{R + D}` at a frequency.
///
/// Integer orders use exact integer powers; fractional orders use the
/// principal branch, with `0^d = 0` for `d > 0`.
pub fn chi_at(spec: &IncrementSpec, lambda: f64) -> Complex64 {
    let mut acc = Complex64::new(1.0, 0.0);
    for p in &spec.patterns {
        let arg = -lambda * (p.mu as f64) * (p.s as f64);
        let base = Complex64::new(1.0, 0.0) - Complex64::new(0.0, arg).exp();
        acc *= pow_split(base, p.r, p.d);
    }
    acc
}

/// Evaluate `β(iλ) = ∏_j ∏_{k=-[s_j/2]}^{[s_j/2]} (iλ - 2πik/s_j)^{R_j + D_j}`.
pub fn beta_at(spec: &IncrementSpec, lambda: f64) -> Complex64 {
    let mut acc = Complex64::new(1.0, 0.0);
    for p in &spec.patterns {
        let half = (p.s / 2) as i64;
        for k in -half..=half {
            let base = Complex64::new(0.0, lambda - 2.0 * PI * k as f64 / p.s as f64);
            acc *= pow_split(base, p.r, p.d);
        }
    }
    acc
}

/// `base^(r + d)` with the integer part exact and the fractional part on the
/// principal branch; `0^positive = 0`.
fn pow_split(base: Complex64, r: u32, d: f64) -> Complex64 {
    let int_part = base.powi(r as i32);
    if d == 0.0 {
        return int_part;
    }
    if base.norm_sqr() == 0.0 {
        return if (r as f64 + d) > 0.0 { Complex64::new(0.0, 0.0) } else { Complex64::new(f64::INFINITY, 0.0) };
    }
    int_part * base.powf(d)
}

/// One root frequency ν = 2π·num/den ∈ [0, π] with its accumulated exponents.
#[derive(Debug, Clone, PartialEq)]
pub struct RootFrequency {
    pub nu: f64,
    /// Reduced fraction ν/(2π) = num/den.
    pub num: u32,
    pub den: u32,
    /// Total fractional exponent D_ν = Σ_j D_j over patterns whose root set contains ν.
    pub d_nu: f64,
    /// Gegenbauer exponent: D_ν, halved at ν ∈ {0, π}.
    pub d_tilde: f64,
}

/// The merged seasonal root set M = ∪_j {2πk/s_j : 0 ≤ k ≤ [s_j/2]}.
#[derive(Debug, Clone, PartialEq)]
pub struct RootSet {
    /// Sorted by frequency.
    pub roots: Vec<RootFrequency>,
}

impl RootSet {
    pub fn frequencies(&self) -> Vec<f64> {
        self.roots.iter().map(|r| r.nu).collect()
    }
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// Build the root set and per-ν exponents of the fractional factorization
/// `∏_{ν∈M} (1 - 2cos ν·B + B²)^{D̃_ν}`.
pub fn seasonal_root_set(spec: &IncrementSpec) -> Result<RootSet> {
    if spec.is_integer_mode() {
        return Err(Error::Input("root-set analysis applies to fractional mode".into()));
    }
    // Key roots by the reduced fraction k/s so equal frequencies merge exactly.
    let mut acc: Vec<(u32, u32, f64)> = Vec::new();
    for p in &spec.patterns {
        for k in 0..=(p.s / 2) {
            let g = if k == 0 { p.s } else { gcd(k, p.s) };
            let (num, den) = (k / g.max(1), p.s / g.max(1));
            match acc.iter_mut().find(|(n, d, _)| *n == num && *d == den) {
                Some(entry) => entry.2 += p.d,
                None => acc.push((num, den, p.d)),
            }
        }
    }
    acc.sort_by(|a, b| {
        (a.0 as u64 * b.1 as u64).cmp(&(b.0 as u64 * a.1 as u64))
    });
    let roots = acc
        .into_iter()
        .map(|(num, den, d_nu)| {
            let nu = 2.0 * PI * num as f64 / den as f64;
            // ν = 0 ⇔ num = 0; ν = π ⇔ num/den = 1/2.
            let boundary = num == 0 || (den == 2 && num == 1);
            let d_tilde = if boundary { d_nu / 2.0 } else { d_nu };
            RootFrequency { nu, num, den, d_nu, d_tilde }
        })
        .collect();
    Ok(RootSet { roots })
}

/// Gegenbauer coefficients `C_0^{(d)}(u) … C_n^{(d)}(u)` of `(1-2uB+B²)^{-d}`.
///
/// Three-term recurrence `C_n = [2u(d+n-1)C_{n-1} - (2d+n-2)C_{n-2}]/n`; the
/// explicit factorial sum overflows and cancels badly for large n.
pub fn gegenbauer_coeffs(u: f64, d: f64, n: usize) -> Result<Vec<f64>> {
    if d <= 0.0 && d.fract() == 0.0 {
        return Err(Error::Input(format!("Gegenbauer order d = {d} hits a Gamma pole")));
    }
    if !(-1.0..=1.0).contains(&u) {
        return Err(Error::Input("Gegenbauer argument u must lie in [-1, 1]".into()));
    }
    let mut c = Vec::with_capacity(n + 1);
    c.push(1.0);
    if n >= 1 {
        c.push(2.0 * d * u);
    }
    for m in 2..=n {
        let mf = m as f64;
        let next = (2.0 * u * (d + mf - 1.0) * c[m - 1] - (2.0 * d + mf - 2.0) * c[m - 2]) / mf;
        c.push(next);
    }
    Ok(c)
}

/// Explicit factorial-sum form of `C_n^{(d)}(u)`, usable for small n only;
/// kept as an independent cross-check of the recurrence.
pub fn gegenbauer_explicit(u: f64, d: f64, n: usize) -> f64 {
    let mut total = 0.0;
    for k in 0..=(n / 2) {
        // Γ(d+n-k)/Γ(d) as a rising factorial, no Gamma evaluations.
        let mut poch = 1.0;
        for j in 0..(n - k) {
            poch *= d + j as f64;
        }
        let mut kfact = 1.0;
        for j in 1..=k {
            kfact *= j as f64;
        }
        let mut mfact = 1.0;
        for j in 1..=(n - 2 * k) {
            mfact *= j as f64;
        }
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * (2.0 * u).powi((n - 2 * k) as i32) * poch / (kfact * mfact);
    }
    total
}

/// Expansion coefficients G±(m) of the fractional operator (sign `-`) and its
/// inverse (sign `+`), by direct convolution of the per-root Gegenbauer
/// sequences. Roots with D̃_ν = 0 contribute the trivial factor δ.
pub fn expansion_coeffs_g(spec: &IncrementSpec, n: usize, plus: bool) -> Result<Vec<f64>> {
    let roots = seasonal_root_set(spec)?;
    let mut acc = vec![0.0; n + 1];
    acc[0] = 1.0;
    for root in &roots.roots {
        if root.d_tilde == 0.0 {
            continue;
        }
        let d = if plus { root.d_tilde } else { -root.d_tilde };
        let seq = gegenbauer_coeffs(root.nu.cos(), d, n)?;
        let mut next = vec![0.0; n + 1];
        for (i, a) in acc.iter().enumerate() {
            if *a == 0.0 {
                continue;
            }
            for (j, b) in seq.iter().take(n + 1 - i).enumerate() {
                next[i + j] += a * b;
            }
        }
        acc = next;
    }
    Ok(acc)
}

/// Stationarity classification of the fractional operator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationarityReport {
    pub stationary: bool,
    pub long_memory: bool,
    pub invertible: bool,
    /// (ν, D_ν) pairs over the root set.
    pub per_nu: Vec<(f64, f64)>,
}

/// Classify by the strict per-root conditions: stationary iff every
/// D_ν ∈ (-1/2, 1/2); long memory iff additionally some D_ν ∈ (0, 1/2);
/// invertible iff every D_ν ∈ (-1/2, 0). Boundary values fail.
pub fn check_stationarity(spec: &IncrementSpec) -> Result<StationarityReport> {
    let roots = seasonal_root_set(spec)?;
    let per_nu: Vec<(f64, f64)> = roots.roots.iter().map(|r| (r.nu, r.d_nu)).collect();
    let stationary = per_nu.iter().all(|&(_, d)| d > -0.5 && d < 0.5);
    let long_memory = stationary && per_nu.iter().any(|&(_, d)| d > 0.0 && d < 0.5);
    let invertible = per_nu.iter().all(|&(_, d)| d > -0.5 && d < 0.0);
    Ok(StationarityReport { stationary, long_memory, invertible, per_nu })
}

/// Apply the integer-mode increment operator to a chronologically ascending
/// series: `out[i] = Σ_k e_γ(k)·x[n(γ)+i-k]`. Output drops the first n(γ)
/// points (indices where some lag is missing).
pub fn apply_increment(x: &[f64], spec: &IncrementSpec) -> Result<Vec<f64>> {
    let coeffs = expand_increment_coeffs(spec)?;
    let e = coeffs.to_f64();
    let n = e.len() - 1;
    if x.len() <= n {
        return Err(Error::Input(format!(
            "series length {} too short for n(gamma) = {n}",
            x.len()
        )));
    }
    Ok((0..x.len() - n)
        .map(|i| e.iter().enumerate().map(|(k, ek)| ek * x[n + i - k]).sum())
        .collect())
}
