//! Translation between scalar T-periodic problems and T-vector problems:
//! series and coefficient lifting, the single-value index map, and the
//! summability report for infinite functionals.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// A scalar series chunked into T-vectors: frame m, slot p holds x(mT+p-1)
/// (slots are 1-indexed in the math, 0-indexed in storage).
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedSeries {
    pub t: usize,
    pub frames: Vec<DVector<f64>>,
}

/// Lifted functional coefficients ā(0..N) with the last block zero-padded.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedCoefficients {
    pub t: usize,
    pub blocks: Vec<DVector<f64>>,
}

impl LiftedCoefficients {
    /// Block horizon N (blocks run 0..=N).
    pub fn n_horizon(&self) -> usize {
        self.blocks.len() - 1
    }

    /// Flat scalar view a(k) = blocks[k / T][k % T].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.blocks.len() * self.t);
        for b in &self.blocks {
            out.extend(b.iter().copied());
        }
        out
    }
}

/// Chunk an ascending scalar series into frames; a trailing partial frame is
/// dropped and its length returned for the caller to warn about.
pub fn lift_series(x: &[f64], t: usize) -> Result<(LiftedSeries, usize)> {
    if t == 0 {
        return Err(Error::Input("period must be >= 1".into()));
    }
    let full = x.len() / t;
    let dropped = x.len() - full * t;
    let frames = (0..full).map(|m| DVector::from_row_slice(&x[m * t..(m + 1) * t])).collect();
    Ok((LiftedSeries { t, frames }, dropped))
}

/// Concatenate frames back to the scalar series.
pub fn unlift(series: &LiftedSeries) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.frames.len() * series.t);
    for f in &series.frames {
        out.extend(f.iter().copied());
    }
    out
}

/// Lift scalar coefficients a(0..M): N = [M/T], ā_p(m) = a(mT+p-1) for
/// mT+p-1 ≤ M and zero beyond.
pub fn lift_coefficients(a: &[f64], t: usize) -> Result<LiftedCoefficients> {
    if t == 0 {
        return Err(Error::Input("period must be >= 1".into()));
    }
    if a.is_empty() {
        return Err(Error::Input("coefficient list must be nonempty".into()));
    }
    let m_max = a.len() - 1;
    let n = m_max / t;
    let blocks = (0..=n)
        .map(|m| DVector::from_fn(t, |p, _| a.get(m * t + p).copied().unwrap_or(0.0)))
        .collect();
    Ok(LiftedCoefficients { t, blocks })
}

/// Block and slot of the single value ξ(-M): N = [M/T], p = M+1-NT (1-indexed).
pub fn index_single_value(m: usize, t: usize) -> (usize, usize) {
    let n = m / t;
    (n, m + 1 - n * t)
}

/// Coefficients of the single-value functional ξ(-M): δ at slot p of block N.
pub fn single_value_coefficients(m: usize, t: usize) -> LiftedCoefficients {
    let mut a = vec![0.0; m + 1];
    a[m] = 1.0;
    lift_coefficients(&a, t).expect("delta coefficients are valid")
}

/// Chunk a most-recent-first past list (past[j] = x(-j)) into the frames
/// ξ⃗(-m) used by estimation: frame m, slot p holds x(-(mT+p-1)), so the
/// functional identity Σ_k a(k)x(-k) = Σ_m ā(m)ᵀξ⃗(-m) is exact.
pub fn mirror_frames(past: &[f64], t: usize) -> Result<(Vec<DVector<f64>>, usize)> {
    let (lifted, dropped) = lift_series(past, t)?;
    Ok((lifted.frames, dropped))
}

/// Summability report for condition (12): finite-support coefficients always
/// pass; the numbers are surfaced for diagnostics.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Condition12Report {
    /// Σ_k ‖ā(k)‖
    pub sum_norm: f64,
    /// Σ_k (k+1)·‖ā(k)‖²
    pub sum_weighted_sq: f64,
}

pub fn condition_12_report(a: &LiftedCoefficients) -> Condition12Report {
    let sum_norm = a.blocks.iter().map(|b| b.norm()).sum();
    let sum_weighted_sq =
        a.blocks.iter().enumerate().map(|(k, b)| (k as f64 + 1.0) * b.norm_squared()).sum();
    Condition12Report { sum_norm, sum_weighted_sq }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn lift_series_examples() {
        let x: Vec<f64> = (0..6).map(|v| v as f64).collect();
        let (s, dropped) = lift_series(&x, 2).unwrap();
        assert_eq!(dropped, 0);
        assert_eq!(s.frames.len(), 3);
        assert_eq!(s.frames[0].as_slice(), &[0.0, 1.0]);
        assert_eq!(s.frames[2].as_slice(), &[4.0, 5.0]);
        assert_eq!(unlift(&s), x);
        // T = 1 is the identity.
        let (s, _) = lift_series(&x, 1).unwrap();
        assert_eq!(unlift(&s), x);
        // Partial frame dropped with its size reported.
        let (s, dropped) = lift_series(&x[..5], 2).unwrap();
        assert_eq!((s.frames.len(), dropped), (2, 1));
    }

    #[test]
    fn lift_coefficients_examples() {
        // M=3, T=2: blocks (a0,a1),(a2,a3).
        let a = [10.0, 11.0, 12.0, 13.0];
        let c = lift_coefficients(&a, 2).unwrap();
        assert_eq!(c.n_horizon(), 1);
        assert_eq!(c.blocks[0].as_slice(), &[10.0, 11.0]);
        assert_eq!(c.blocks[1].as_slice(), &[12.0, 13.0]);
        // M=2, T=2: blocks (a0,a1),(a2,0).
        let c = lift_coefficients(&a[..3], 2).unwrap();
        assert_eq!(c.blocks[1].as_slice(), &[12.0, 0.0]);
        // Flat view round-trips up to the zero padding.
        assert_eq!(&c.flat()[..3], &a[..3]);
    }

    #[test]
    fn single_value_indexing() {
        assert_eq!(index_single_value(0, 4), (0, 1));
        assert_eq!(index_single_value(5, 2), (2, 2));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let t = rng.gen_range(1..=8usize);
            let m = rng.gen_range(0..200usize);
            let (n, p) = index_single_value(m, t);
            assert!(1 <= p && p <= t);
            assert_eq!(n * t + p - 1, m);
            // The lifted delta sits exactly at (N, p).
            let c = single_value_coefficients(m, t);
            assert_eq!(c.n_horizon(), n);
            for (bi, b) in c.blocks.iter().enumerate() {
                for (pi, v) in b.iter().enumerate() {
                    let expect = if bi == n && pi == p - 1 { 1.0 } else { 0.0 };
                    assert_eq!(*v, expect, "m={m} t={t} block {bi} slot {pi}");
                }
            }
        }
    }

    #[test]
    fn functional_identity_on_mirror_frames() {
        // Σ_k a(k)·x(-k) = Σ_m ā(m)ᵀ·ξ⃗(-m) exactly.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let t = rng.gen_range(1..=5usize);
            let m_max = rng.gen_range(0..17usize);
            let a: Vec<f64> = (0..=m_max).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let lifted = lift_coefficients(&a, t).unwrap();
            let hist_len = (lifted.n_horizon() + 1) * t;
            let past: Vec<f64> = (0..hist_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let lhs: f64 = a.iter().zip(&past).map(|(ak, xk)| ak * xk).sum();
            let (frames, _) = mirror_frames(&past, t).unwrap();
            let rhs: f64 = lifted.blocks.iter().zip(&frames).map(|(b, f)| b.dot(f)).sum();
            assert!((lhs - rhs).abs() < 1e-12, "t={t} M={m_max}");
        }
    }

    #[test]
    fn condition_12_finite_support() {
        let c = lift_coefficients(&[1.0, -2.0, 0.5], 2).unwrap();
        let rep = condition_12_report(&c);
        assert!(rep.sum_norm.is_finite() && rep.sum_weighted_sq.is_finite());
        assert!(rep.sum_norm > 0.0);
    }
}
