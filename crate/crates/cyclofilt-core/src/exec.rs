//! Data-parallel execution helpers with a sequential fallback.
//!
//! Heavy per-frequency and per-replication loops route through [`indexed_map`].
//! With the `parallel` feature (default) the work is distributed with rayon;
//! results are collected into index order, so output is identical to the
//! sequential path regardless of thread count. The runtime switch
//! [`force_sequential`] lets benchmarks compare both paths in one build, and
//! backs the CLI `--threads 1` knob.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Globally force the sequential path even when the `parallel` feature is on.
pub fn force_sequential(on: bool) {
    FORCE_SEQUENTIAL.store(on, Ordering::Relaxed);
}

/// True when calls will run sequentially (feature off or switch set).
pub fn is_sequential() -> bool {
    if cfg!(not(feature = "parallel")) {
        return true;
    }
    FORCE_SEQUENTIAL.load(Ordering::Relaxed)
}

/// Map `f` over `0..n` and collect results in index order.
pub fn indexed_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if !is_sequential() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    indexed_map_seq(n, f)
}

/// Sequential reference implementation of [`indexed_map`].
pub fn indexed_map_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let a = indexed_map(1000, |i| (i as f64).sin());
        let b = indexed_map_seq(1000, |i| (i as f64).sin());
        assert_eq!(a, b);
    }

    #[test]
    fn force_switch_round_trip() {
        force_sequential(true);
        assert!(is_sequential());
        force_sequential(false);
    }
}
