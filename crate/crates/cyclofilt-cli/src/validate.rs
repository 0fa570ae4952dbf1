//! Built-in validation suite: algebraic identities, oracle cross-checks,
//! Monte Carlo consistency, and a degenerate robust run, all on internally
//! constructed fixtures. Fully deterministic for a given seed.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use cyclofilt_core::error::Result;
use cyclofilt_core::filter::{solve_filter, FilterOptions, TruncationPolicy};
use cyclofilt_core::increments::{
    expand_increment_coeffs, expansion_coeffs_g, IncrementSpec, Pattern,
};
use cyclofilt_core::lift::lift_coefficients;
use cyclofilt_core::minimax::{least_favorable_noise_semi, DensityClass, MinimaxOptions};
use cyclofilt_core::simulate::{monte_carlo_mse_with_solution, oracle_finite_window, SimConfig};
use cyclofilt_core::spectral::SpectralDensityGrid;

#[derive(Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Debug, Serialize)]
pub struct SuiteReport {
    pub quick: bool,
    pub seed: u64,
    pub checks: Vec<Check>,
}

fn check(name: &'static str, measured: f64, threshold: f64, detail: String) -> Check {
    Check { name, pass: measured.is_finite() && measured <= threshold, measured, threshold, detail }
}

fn toy_f(m_grid: usize, s1: f64) -> SpectralDensityGrid {
    SpectralDensityGrid::scalar_from_fn(m_grid, move |l| {
        s1 * s1 / ((Complex64::new(1.0, 0.0) - Complex64::new(0.0, -l).exp()).norm_sqr() * 2.0 * PI)
    })
}

fn const_g(m_grid: usize, s2: f64) -> SpectralDensityGrid {
    SpectralDensityGrid::scalar_from_fn(m_grid, move |_| s2 * s2 / (2.0 * PI))
}

fn one_b_spec() -> Result<IncrementSpec> {
    IncrementSpec::new(vec![Pattern { s: 1, mu: 1, r: 1, d: 0.0 }], 1)
}

/// Multiply out ∏ (1 - z^{μ_i s_i})^{R_i} naively; exact in f64 for the
/// desk-sized orders used here.
fn naive_expansion(spec: &IncrementSpec) -> Vec<f64> {
    let mut acc = vec![1.0];
    for p in &spec.patterns {
        let step = (p.mu * p.s) as usize;
        for _ in 0..p.r {
            let mut next = vec![0.0; acc.len() + step];
            for (i, &a) in acc.iter().enumerate() {
                next[i] += a;
                next[i + step] -= a;
            }
            acc = next;
        }
    }
    acc
}

fn random_spec(rng: &mut ChaCha8Rng) -> IncrementSpec {
    loop {
        let k = rng.gen_range(1..=3usize);
        let mut s_values: Vec<u32> = Vec::new();
        let mut s = rng.gen_range(1..=2u32);
        for _ in 0..k {
            s_values.push(s);
            s += rng.gen_range(1..=4u32);
        }
        let patterns: Vec<Pattern> = s_values
            .into_iter()
            .map(|s| {
                let mu_max = (12 / s).max(1);
                Pattern { s, mu: rng.gen_range(1..=mu_max), r: rng.gen_range(1..=3u32), d: 0.0 }
            })
            .collect();
        if let Ok(spec) = IncrementSpec::new(patterns, 1) {
            return spec;
        }
    }
}

fn check_increment_expansion(n_specs: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    let mut detail = String::from("direct polynomial product, edge coefficients, zero sum");
    for i in 0..n_specs {
        let spec = random_spec(&mut rng);
        let e = match expand_increment_coeffs(&spec) {
            Ok(c) => c.to_f64(),
            Err(err) => {
                worst = f64::INFINITY;
                detail = format!("spec {i}: {err}");
                break;
            }
        };
        let naive = naive_expansion(&spec);
        if naive.len() != e.len() {
            worst = f64::INFINITY;
            detail = format!("spec {i}: length {} vs {}", e.len(), naive.len());
            break;
        }
        for (a, b) in e.iter().zip(&naive) {
            worst = worst.max((a - b).abs());
        }
        let total_r: u32 = spec.patterns.iter().map(|p| p.r).sum();
        let sign = if total_r % 2 == 0 { 1.0 } else { -1.0 };
        worst = worst.max((e[0] - 1.0).abs());
        worst = worst.max((e[e.len() - 1] - sign).abs());
        worst = worst.max(e.iter().sum::<f64>().abs());
    }
    check("increment-expansion", worst, 0.0, detail)
}

fn check_gegenbauer_inverse(n_trunc: usize, max_lag: usize) -> Result<Check> {
    let spec = IncrementSpec::new(
        vec![
            Pattern { s: 1, mu: 1, r: 0, d: 0.23 },
            Pattern { s: 4, mu: 1, r: 0, d: 0.17 },
        ],
        1,
    )?;
    let plus = expansion_coeffs_g(&spec, n_trunc, true)?;
    let minus = expansion_coeffs_g(&spec, n_trunc, false)?;
    let mut worst = 0.0_f64;
    for m in 0..=max_lag {
        let conv: f64 = (0..=m).map(|k| plus[k] * minus[m - k]).sum();
        let target = if m == 0 { 1.0 } else { 0.0 };
        worst = worst.max((conv - target).abs());
    }
    Ok(check(
        "gegenbauer-inverse",
        worst,
        1e-8,
        format!("series and inverse convolve to delta up to lag {max_lag}"),
    ))
}

pub fn run_suite(quick: bool, seed: u64) -> Result<SuiteReport> {
    let mut checks = Vec::new();

    checks.push(check_increment_expansion(if quick { 40 } else { 200 }, seed));
    checks.push(check_gegenbauer_inverse(
        if quick { 1024 } else { 4096 },
        if quick { 128 } else { 256 },
    )?);

    // Toy instance: spectral value vs finite-window time-domain oracle, and
    // internal agreement of the two error forms.
    let spec = one_b_spec()?;
    let m_grid = if quick { 1024 } else { 2048 };
    let f = toy_f(m_grid, 1.0);
    let g = const_g(m_grid, 0.7);
    let a = lift_coefficients(&[1.0, 0.5, 0.25], 1)?;
    let blocks = if quick { 160 } else { 320 };
    let sol = solve_filter(
        &f,
        &g,
        &spec,
        &a,
        FilterOptions { truncation: TruncationPolicy::Fixed(blocks), ridge: None },
    )?;
    let w_window = if quick { 120 } else { 200 };
    let oracle = oracle_finite_window(&f, &g, &spec, &a, w_window)?;
    checks.push(check(
        "delta-vs-oracle",
        (sol.delta - oracle).abs() / oracle.abs(),
        1e-2,
        format!("spectral {:.6e} vs window({w_window}) oracle {:.6e}", sol.delta, oracle),
    ));
    checks.push(check(
        "bilinear-vs-integral",
        (sol.delta - sol.delta_integral).abs() / sol.delta.abs(),
        1e-6,
        "two forms of the error functional".into(),
    ));

    // Joint scaling: h invariant, delta linear.
    let c = 7.0;
    let fc = f.map(|_, v| v * Complex64::new(c, 0.0));
    let gc = g.map(|_, v| v * Complex64::new(c, 0.0));
    let sol_c = solve_filter(
        &fc,
        &gc,
        &spec,
        &a,
        FilterOptions { truncation: TruncationPolicy::Fixed(blocks), ridge: None },
    )?;
    let h_diff = sol
        .h
        .iter()
        .zip(&sol_c.h)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0_f64, f64::max);
    checks.push(check("homogeneity-h", h_diff, 1e-10, format!("joint scale c = {c}")));
    checks.push(check(
        "homogeneity-delta",
        (sol_c.delta - c * sol.delta).abs() / (c * sol.delta).abs(),
        1e-8,
        format!("delta must scale by c = {c}"),
    ));

    // Monte Carlo consistency and residual-increment orthogonality on a
    // smaller grid.
    let m_mc = 512;
    let f_mc = toy_f(m_mc, 1.0);
    let g_mc = const_g(m_mc, 0.7);
    let sol_mc = solve_filter(&f_mc, &g_mc, &spec, &a, FilterOptions::default())?;
    let sim = SimConfig {
        length: 64,
        burn_in: 0,
        seed,
        replications: if quick { 300 } else { 2000 },
    };
    let mc = monte_carlo_mse_with_solution(&f_mc, &g_mc, &spec, &a, &sol_mc, &sim)?;
    checks.push(check(
        "monte-carlo-mse",
        mc.z_score.abs(),
        3.0,
        format!("empirical {:.6e} vs delta {:.6e} over {} reps", mc.mse, mc.delta, mc.replications),
    ));
    let orth_z = mc.orthogonality.iter().map(|l| l.max_z).fold(0.0_f64, f64::max);
    checks.push(check(
        "orthogonality",
        orth_z,
        3.0,
        format!("max |z| over lags 0..{}", mc.orthogonality.len().saturating_sub(1)),
    ));

    // Degenerate contamination class: the robust run must reproduce the
    // classical solution with vanishing stationarity residuals.
    let m_small = 256;
    let f_s = toy_f(m_small, 1.0);
    let g1 = const_g(m_small, 0.8);
    let ones = vec![1.0; m_small];
    let w = g1.weight();
    let mut q = DMatrix::<Complex64>::zeros(1, 1);
    for (m, v) in g1.values.iter().enumerate() {
        q += v * Complex64::new(w * ones[m] / (2.0 * PI), 0.0);
    }
    let cls = DensityClass::MixMatrix { eps: 0.0, g1: g1.clone(), q };
    let opts = MinimaxOptions { l: Some(24), ..Default::default() };
    let a2 = lift_coefficients(&[1.0, 0.5], 1)?;
    let mm = least_favorable_noise_semi(&f_s, &cls, &a2, &spec, &g1, &opts)?;
    let classical = solve_filter(
        &f_s,
        &g1,
        &spec,
        &a2,
        FilterOptions { truncation: TruncationPolicy::Fixed(24), ridge: None },
    )?;
    checks.push(check(
        "minimax-singleton-delta",
        (mm.delta0 - classical.delta).abs() / classical.delta.abs(),
        1e-9,
        "degenerate class must reproduce the classical error".into(),
    ));
    let worst_res = mm
        .residuals
        .as_ref()
        .map(|r| {
            r.equations
                .iter()
                .map(|e| e.rel_residual.max(e.slack_violation))
                .fold(0.0_f64, f64::max)
        })
        .unwrap_or(f64::INFINITY);
    checks.push(check(
        "minimax-singleton-residual",
        worst_res,
        1e-6,
        "stationarity equations at the degenerate solution".into(),
    ));

    Ok(SuiteReport { quick, seed, checks })
}
