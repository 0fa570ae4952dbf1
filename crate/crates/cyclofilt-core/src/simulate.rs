//! Simulation of periodically stationary sequences with stationary
//! increments, plus the independent oracles (finite-window time-domain
//! projection and Monte Carlo) that cross-check the spectral engine.
//!
//! Initial values for re-integrated increments are fixed at zero: the
//! estimated functional's error depends only on increments of the observed
//! series and the stationary noise, so initial values are immaterial to
//! every validated quantity.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, RowDVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::indexed_map;
use crate::filter::{estimate_functional, solve_filter, FilterOptions, FilterSolution};
use crate::increments::{chi_at, expand_increment_coeffs, IncrementSpec};
use crate::lift::{LiftedCoefficients, LiftedSeries};
use crate::spectral::{
    beta_abs2, check_ar_stability, chi_abs2, hermitian_sqrt, PsarimaParams, SpectralDensityGrid,
};

/// Scalar simulation knobs. The model (parameter tables or a density grid)
/// rides alongside as a typed argument.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub length: usize,
    #[serde(default)]
    pub burn_in: usize,
    pub seed: u64,
    #[serde(default = "one")]
    pub replications: usize,
}

fn one() -> usize {
    1
}

/// Harmonic Gaussian synthesizer: precomputes per-frequency Hermitian square
/// roots of w·f(λ_j) so that sampled frames have exactly the grid-quadrature
/// covariance R(m) = Σ_j w·f(λ_j)·e^{iλ_j m}.
pub struct HarmonicSynth {
    t: usize,
    m_grid: usize,
    factors: Vec<DMatrix<Complex64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl HarmonicSynth {
    pub fn new(f: &SpectralDensityGrid) -> Result<Self> {
        let m_grid = f.m_grid();
        if m_grid % 2 != 0 {
            return Err(Error::Input("synthesis needs an even grid size".into()));
        }
        f.validate()?;
        let fs = f.reflection_symmetrize();
        let w = fs.weight();
        let factors: Vec<DMatrix<Complex64>> = fs
            .values
            .iter()
            .map(|v| hermitian_sqrt(&(v * Complex64::new(w, 0.0))))
            .collect();
        let fft = FftPlanner::new().plan_fft_inverse(m_grid);
        Ok(HarmonicSynth { t: f.t, m_grid, factors, fft })
    }

    /// Largest number of frames a single draw supports.
    pub fn frames_capacity(&self) -> usize {
        self.m_grid
    }

    /// One Gaussian draw of `frames` consecutive frames.
    pub fn sample(&self, rng: &mut ChaCha8Rng, frames: usize) -> Result<LiftedSeries> {
        if frames > self.m_grid {
            return Err(Error::Input(format!(
                "requested {frames} frames but the grid supports {}; raise the grid size",
                self.m_grid
            )));
        }
        let m = self.m_grid;
        let half = m / 2;
        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        // Complex-standard u_j for λ_j < 0; the mirror index carries the
        // conjugate so every sample path is real.
        let mut coeff: Vec<DVector<Complex64>> = vec![DVector::zeros(self.t); m];
        for j in 0..half {
            let u = DVector::from_fn(self.t, |_, _| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex64::new(re, im) * inv_sqrt2
            });
            let c = &self.factors[j] * u;
            coeff[m - 1 - j] = c.map(|z| z.conj());
            coeff[j] = c;
        }
        // X(t) = Σ_j c_j e^{iλ_j t} with λ_j = -π + 2π(j+1/2)/M realized as a
        // phase-twisted inverse DFT per component.
        let mut frames_out = vec![DVector::zeros(self.t); frames];
        let mut buf: Vec<Complex64> = Vec::with_capacity(m);
        for p in 0..self.t {
            buf.clear();
            buf.extend((0..m).map(|j| coeff[j][p]));
            self.fft.process(&mut buf);
            for (ti, frame) in frames_out.iter_mut().enumerate() {
                let tw = Complex64::new(0.0, std::f64::consts::PI * ti as f64 / m as f64).exp();
                let sign = if ti % 2 == 0 { 1.0 } else { -1.0 };
                frame[p] = (tw * buf[ti]).re * sign;
            }
        }
        Ok(LiftedSeries { t: self.t, frames: frames_out })
    }
}

/// Spectral synthesis of a stationary Gaussian vector sequence with density
/// `f`; the seed fully determines the output.
pub fn simulate_from_density(
    f: &SpectralDensityGrid,
    frames: usize,
    seed: u64,
) -> Result<LiftedSeries> {
    let synth = HarmonicSynth::new(f)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    synth.sample(&mut rng, frames)
}

/// Frame-wise stationarity diagnostic: split-half mean drift per slot,
/// standardized by batch-mean standard errors.
#[derive(Debug, Clone, Serialize)]
pub struct DriftReport {
    pub per_slot_z: Vec<f64>,
    pub max_z: f64,
    pub stable: bool,
}

pub fn frame_drift(y: &[f64], t: usize) -> Result<DriftReport> {
    let frames = y.len() / t;
    if frames < 64 {
        return Err(Error::Input("drift diagnostic needs at least 64 frames".into()));
    }
    let batches = 8;
    let per_slot_z: Vec<f64> = (0..t)
        .map(|q| {
            let series: Vec<f64> = (0..frames).map(|m| y[m * t + q]).collect();
            let half = frames / 2;
            let (a, b) = series.split_at(half);
            let z = |s: &[f64]| {
                let bl = s.len() / batches;
                let means: Vec<f64> = (0..batches)
                    .map(|i| s[i * bl..(i + 1) * bl].iter().sum::<f64>() / bl as f64)
                    .collect();
                let m = means.iter().sum::<f64>() / batches as f64;
                let v = means.iter().map(|x| (x - m) * (x - m)).sum::<f64>()
                    / (batches as f64 - 1.0);
                (m, (v / batches as f64).sqrt())
            };
            let (m1, s1) = z(a);
            let (m2, s2) = z(&b[..half]);
            (m1 - m2).abs() / (s1 * s1 + s2 * s2).sqrt().max(f64::MIN_POSITIVE)
        })
        .collect();
    let max_z = per_slot_z.iter().cloned().fold(0.0, f64::max);
    Ok(DriftReport { per_slot_z, max_z, stable: max_z < 3.0 })
}

/// Output of the scalar simulator: integrated levels, the stationary
/// increment series, and the stationarity diagnostic.
#[derive(Debug, Clone)]
pub struct PsarimaSim {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub drift: DriftReport,
}

/// Simulate the stationary increment via the per-slot causal ARMA recursion
/// Φ_k(B)Y = Θ_k(B)ε (k = τ mod T), then integrate through the scalar-level
/// operator Σ_k e_γ(k)B^{Tk}.
pub fn simulate_psarima(
    params: &PsarimaParams,
    spec: &IncrementSpec,
    cfg: &SimConfig,
) -> Result<PsarimaSim> {
    params.validate()?;
    if params.period != spec.period {
        return Err(Error::Input(format!(
            "parameter period {} does not match spec period {}",
            params.period, spec.period
        )));
    }
    if !spec.is_integer_mode() {
        return Err(Error::Unsupported("simulation needs integer increment orders".into()));
    }
    check_ar_stability(&params.ar_blocks())?;
    let t_block = params.period;
    let total = cfg
        .burn_in
        .checked_add(cfg.length)
        .ok_or_else(|| Error::Input("length + burn_in overflows".into()))?;
    if cfg.length < 64 * t_block {
        return Err(Error::Input("length too short for the stationarity diagnostic".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let eps: Vec<f64> = (0..total)
        .map(|tau| {
            let n: f64 = rng.sample(StandardNormal);
            n * params.sigma2_at(tau % t_block).sqrt()
        })
        .collect();
    let mut y = vec![0.0; total];
    for tau in 0..total {
        let k = tau % t_block;
        let phi = &params.phi[k];
        let theta = &params.theta[k];
        let mut acc = 0.0;
        for (j, th) in theta.iter().enumerate() {
            if tau >= j {
                acc += th * eps[tau - j];
            }
        }
        for (j, ph) in phi.iter().enumerate().skip(1) {
            if tau >= j {
                acc -= ph * y[tau - j];
            }
        }
        y[tau] = acc / phi[0];
    }
    let y = y.split_off(cfg.burn_in);
    let e = expand_increment_coeffs(spec)?.to_f64();
    let x = integrate_scalar(&y, &e, t_block);
    let drift = frame_drift(&y, t_block)?;
    Ok(PsarimaSim { x, y, drift })
}

/// Zero-initial inversion of Σ_k e(k)B^{Tk}: x(τ) = y(τ) − Σ_{k≥1} e(k)x(τ−Tk).
pub fn integrate_scalar(y: &[f64], e: &[f64], t_block: usize) -> Vec<f64> {
    let mut x = vec![0.0; y.len()];
    for tau in 0..y.len() {
        let mut acc = y[tau];
        for (k, ek) in e.iter().enumerate().skip(1) {
            if tau >= k * t_block {
                acc -= ek * x[tau - k * t_block];
            }
        }
        x[tau] = acc;
    }
    x
}

/// Slot-wise zero-initial inversion of Σ_k e(k)B^k acting on frames.
pub fn integrate_frames(y: &[DVector<f64>], e: &[f64]) -> Vec<DVector<f64>> {
    let mut x: Vec<DVector<f64>> = Vec::with_capacity(y.len());
    for m in 0..y.len() {
        let mut acc = y[m].clone();
        for (k, ek) in e.iter().enumerate().skip(1) {
            if m >= k {
                acc -= &x[m - k] * *ek;
            }
        }
        x.push(acc);
    }
    x
}

fn moment_real(grid: &SpectralDensityGrid, scale: &[f64], m: i64) -> DMatrix<f64> {
    let w = grid.weight();
    let mut acc: DMatrix<Complex64> = DMatrix::zeros(grid.t, grid.t);
    for (j, v) in grid.values.iter().enumerate() {
        let ph = Complex64::new(0.0, grid.lambdas[j] * m as f64).exp();
        acc += v * (ph * Complex64::new(w * scale[j], 0.0));
    }
    acc.map(|z| z.re)
}

/// Finite-window time-domain oracle: the exact MSE of the best linear
/// predictor of the functional from the observed increments at frames
/// m = -W..0, assembled from Fourier-coefficient covariances.
pub fn oracle_finite_window(
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
    spec: &IncrementSpec,
    a: &LiftedCoefficients,
    w_window: usize,
) -> Result<f64> {
    f.check_same_grid(g)?;
    if a.t != f.t || f.t != spec.period {
        return Err(Error::Input("period mismatch in oracle inputs".into()));
    }
    let t = f.t;
    let chi2 = chi_abs2(spec, &f.lambdas);
    let beta2 = beta_abs2(spec, &f.lambdas);
    // Observed-increment covariance kernel (|χ|²/|β|²)f + |χ|²g.
    let ratio: Vec<f64> = chi2.iter().zip(&beta2).map(|(c, b)| c / b).collect();
    let kz = f.zip_map(g, |j, fv, gv| {
        fv * Complex64::new(ratio[j], 0.0) + gv * Complex64::new(chi2[j], 0.0)
    })?;
    let ones = vec![1.0; f.m_grid()];
    let blocks: Vec<DMatrix<f64>> =
        (0..=w_window as i64).map(|m| moment_real(&kz, &ones, m)).collect();
    let n = (w_window + 1) * t;
    let mut cov = DMatrix::<f64>::zeros(n, n);
    for i in 0..=w_window {
        for j in 0..=w_window {
            let m = j as i64 - i as i64;
            let b = if m >= 0 { blocks[m as usize].clone() } else { blocks[(-m) as usize].transpose() };
            cov.view_mut((i * t, j * t), (t, t)).copy_from(&b);
        }
    }
    // Cross covariance of the functional with each observed increment and
    // the functional's own variance, both quadratures against g.
    let qw = g.weight();
    let mut var_a = 0.0;
    let mut cross = DVector::<f64>::zeros(n);
    let a_rows: Vec<RowDVector<Complex64>> = f
        .lambdas
        .iter()
        .map(|&l| {
            let mut acc: RowDVector<Complex64> = RowDVector::zeros(t);
            for (k, b) in a.blocks.iter().enumerate() {
                let ph = Complex64::new(0.0, -l * k as f64).exp();
                acc += b.map(|x| Complex64::new(x, 0.0)).transpose() * ph;
            }
            acc
        })
        .collect();
    for (j, &l) in f.lambdas.iter().enumerate() {
        let row = &a_rows[j] * &g.values[j];
        var_a += (&row * a_rows[j].adjoint())[(0, 0)].re * qw;
        let chi_conj = chi_at(spec, l).conj();
        for i in 0..=w_window {
            let ph = Complex64::new(0.0, l * i as f64).exp();
            let r = &row * (chi_conj * ph * Complex64::new(qw, 0.0));
            for p in 0..t {
                cross[i * t + p] += r[p].re;
            }
        }
    }
    // Projection MSE with an escalating jitter ladder.
    let scale = cov.diagonal().iter().sum::<f64>() / n as f64;
    let mut jitter = 0.0;
    loop {
        let mut c = cov.clone();
        for i in 0..n {
            c[(i, i)] += jitter;
        }
        if let Some(chol) = c.cholesky() {
            let sol = chol.solve(&cross);
            return Ok(var_a - cross.dot(&sol));
        }
        jitter = if jitter == 0.0 { 1e-14 * scale.max(1.0) } else { jitter * 100.0 };
        if jitter > 1e-10 * scale.max(1.0) {
            return Err(Error::Numerical(
                "oracle covariance is indefinite beyond the allowed jitter".into(),
            ));
        }
    }
}

/// One Monte Carlo replication's contributions.
struct RepOut {
    err: f64,
    /// err · y_ζ(-k)[p] flattened over lags then components.
    orth: Vec<f64>,
}

/// Per-lag orthogonality summary of the residual against observed increments.
#[derive(Debug, Clone, Serialize)]
pub struct OrthLag {
    pub lag: usize,
    pub max_abs_cov: f64,
    pub max_z: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MonteCarloReport {
    pub replications: usize,
    pub mse: f64,
    pub stderr: f64,
    /// Spectral-domain error the run validates against.
    pub delta: f64,
    pub z_score: f64,
    pub orthogonality: Vec<OrthLag>,
}

pub const ORTH_LAGS: usize = 20;

/// Monte Carlo cross-validation: synthesize observed increments and noise,
/// re-integrate, run the filter per replication, and compare the empirical
/// MSE against the spectral-domain value.
pub fn monte_carlo_mse(
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
    spec: &IncrementSpec,
    a: &LiftedCoefficients,
    cfg: &SimConfig,
) -> Result<MonteCarloReport> {
    let sol = solve_filter(f, g, spec, a, FilterOptions::default())?;
    monte_carlo_mse_with_solution(f, g, spec, a, &sol, cfg)
}

pub fn monte_carlo_mse_with_solution(
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
    spec: &IncrementSpec,
    a: &LiftedCoefficients,
    sol: &FilterSolution,
    cfg: &SimConfig,
) -> Result<MonteCarloReport> {
    if cfg.replications < 2 {
        return Err(Error::Input("need at least 2 replications".into()));
    }
    let t = spec.period;
    let e = expand_increment_coeffs(spec)?.to_f64();
    let n_gamma = e.len() - 1;
    let chi2 = chi_abs2(spec, &f.lambdas);
    let beta2 = beta_abs2(spec, &f.lambdas);
    let ky = f.map(|j, v| v * Complex64::new(chi2[j] / beta2[j], 0.0));
    let synth_y = HarmonicSynth::new(&ky)?;
    let synth_eta = HarmonicSynth::new(g)?;
    let frames = (a.n_horizon() + 1)
        .max(sol.taps.len() + n_gamma)
        .max(ORTH_LAGS + n_gamma)
        + 4;
    if frames > synth_y.frames_capacity() {
        return Err(Error::Input(format!(
            "replication needs {frames} frames but the grid supports {}; raise the grid size",
            synth_y.frames_capacity()
        )));
    }
    let reps = cfg.replications;
    let outs: Vec<Result<RepOut>> = indexed_map(reps, |rep| {
        let mut rng_y = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng_y.set_stream(2 * rep as u64);
        let mut rng_eta = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng_eta.set_stream(2 * rep as u64 + 1);
        let y = synth_y.sample(&mut rng_y, frames)?;
        let eta = synth_eta.sample(&mut rng_eta, frames)?;
        let xi = integrate_frames(&y.frames, &e);
        // ζ frames chronologically, then flattened most-recent-first.
        let zeta: Vec<DVector<f64>> =
            xi.iter().zip(&eta.frames). map(|(x, h)| x + h).collect();
        let mut zeta_past = Vec::with_capacity(frames * t);
        for j in 0..frames {
            let fr = &zeta[frames - 1 - j];
            zeta_past.extend(fr.iter().cloned());
        }
        let est = estimate_functional(&zeta_past, a, sol, spec)?;
        let truth: f64 = a
            .blocks
            .iter()
            .enumerate()
            .map(|(k, b)| b.dot(&xi[frames - 1 - k]))
            .sum();
        let err = est - truth;
        let mut orth = Vec::with_capacity(ORTH_LAGS * t);
        for k in 0..ORTH_LAGS {
            let mut yk = DVector::zeros(t);
            for (j, ej) in e.iter().enumerate() {
                yk += &zeta[frames - 1 - k - j] * *ej;
            }
            for p in 0..t {
                orth.push(err * yk[p]);
            }
        }
        Ok(RepOut { err, orth })
    });
    let mut errs = Vec::with_capacity(reps);
    let mut orth_acc = vec![Vec::with_capacity(reps); ORTH_LAGS * t];
    for o in outs {
        let o = o?;
        errs.push(o.err);
        for (slot, v) in o.orth.iter().enumerate() {
            orth_acc[slot].push(*v);
        }
    }
    let mean_sd = |xs: &[f64]| {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, (v / n).sqrt())
    };
    let sq: Vec<f64> = errs.iter().map(|e| e * e).collect();
    let (mse, stderr) = mean_sd(&sq);
    let z_score = (mse - sol.delta).abs() / stderr.max(f64::MIN_POSITIVE);
    let orthogonality = (0..ORTH_LAGS)
        .map(|k| {
            let mut max_abs = 0.0_f64;
            let mut max_z = 0.0_f64;
            for p in 0..t {
                let (m, s) = mean_sd(&orth_acc[k * t + p]);
                max_abs = max_abs.max(m.abs());
                max_z = max_z.max(m.abs() / s.max(f64::MIN_POSITIVE));
            }
            OrthLag { lag: k, max_abs_cov: max_abs, max_z }
        })
        .collect();
    Ok(MonteCarloReport { replications: reps, mse, stderr, delta: sol.delta, z_score, orthogonality })
}
