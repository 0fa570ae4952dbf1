//! Shared builders for the integration and acceptance tests: small density
//! grids, on-disk JSON in the formats the binary reads, and moment targets
//! computed with the same quadrature the solver uses.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde_json::{json, Value};

use cyclofilt_core::increments::{IncrementSpec, Pattern};
use cyclofilt_core::spectral::{beta_abs2, chi_abs2, SpectralDensityGrid};

pub fn one_b_spec() -> IncrementSpec {
    IncrementSpec::new(vec![Pattern { s: 1, mu: 1, r: 1, d: 0.0 }], 1).unwrap()
}

pub fn toy_f(m_grid: usize, s1: f64) -> SpectralDensityGrid {
    SpectralDensityGrid::scalar_from_fn(m_grid, move |l| {
        s1 * s1 / ((Complex64::new(1.0, 0.0) - Complex64::new(0.0, -l).exp()).norm_sqr() * 2.0 * PI)
    })
}

pub fn const_g(m_grid: usize, s2: f64) -> SpectralDensityGrid {
    SpectralDensityGrid::scalar_from_fn(m_grid, move |_| s2 * s2 / (2.0 * PI))
}

/// Signal moment weight |χ|²/|β|² on the grid of `g`.
pub fn k_weight(spec: &IncrementSpec, g: &SpectralDensityGrid) -> Vec<f64> {
    let chi2 = chi_abs2(spec, &g.lambdas);
    let b2 = beta_abs2(spec, &g.lambdas);
    chi2.iter().zip(&b2).map(|(c, b)| c / b).collect()
}

/// Trace moment (2π)⁻¹ ∫ weight·tr d dλ under the midpoint rule.
pub fn trace_moment(d: &SpectralDensityGrid, weight: &[f64]) -> f64 {
    let w = d.weight();
    d.values
        .iter()
        .enumerate()
        .map(|(m, v)| {
            w * weight[m] * (0..d.t).map(|i| v[(i, i)].re).sum::<f64>() / (2.0 * PI)
        })
        .sum()
}

/// Full matrix moment (2π)⁻¹ ∫ weight·d dλ under the midpoint rule.
pub fn matrix_moment(d: &SpectralDensityGrid, weight: &[f64]) -> DMatrix<Complex64> {
    let w = d.weight();
    let mut acc = DMatrix::zeros(d.t, d.t);
    for (m, v) in d.values.iter().enumerate() {
        acc += v * Complex64::new(w * weight[m] / (2.0 * PI), 0.0);
    }
    acc
}

pub fn density_json(g: &SpectralDensityGrid) -> Value {
    let values: Vec<Vec<Vec<[f64; 2]>>> = g
        .values
        .iter()
        .map(|m| {
            (0..g.t)
                .map(|i| (0..g.t).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
                .collect()
        })
        .collect();
    json!({ "t": g.t, "values": values })
}

pub fn matrix_json(m: &DMatrix<Complex64>) -> Value {
    let rows: Vec<Vec<[f64; 2]>> = (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect();
    json!(rows)
}

pub fn write_json(path: &Path, v: &Value) {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).unwrap();
    }
    let mut text = serde_json::to_string_pretty(v).unwrap();
    text.push('\n');
    std::fs::write(path, text).unwrap();
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

pub fn bin() -> assert_cmd::Command {
    assert_cmd::Command::cargo_bin("cyclofilt").unwrap()
}

/// Repo-level fixtures directory (committed, regenerated by an ignored test).
pub fn fixtures_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}
