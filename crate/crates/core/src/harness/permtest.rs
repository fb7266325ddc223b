use rand::Rng;
use serde::Serialize;

use super::metrics::SpanCounts;
use crate::error::{Error, Result};
use crate::seeded_rng;

/// Default number of random sign flips.
pub const DEFAULT_PERMUTATIONS: u64 = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PermMethod {
    Exact,
    MonteCarlo,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PermTestResult {
    pub p_value: f64,
    pub method: PermMethod,
    /// Sign patterns evaluated.
    pub permutations: u64,
    /// Absolute value of the observed statistic.
    pub observed: f64,
    pub units: usize,
}

/// Two-sided test on `|mean(a - b)|` under random swaps of paired units.
///
/// All `2^N` swap patterns are enumerated when that is at most
/// `n_permutations`; otherwise `n_permutations` patterns are drawn from a
/// generator seeded with `seed` and `p = (hits + 1) / (n + 1)`.
pub fn paired_permutation_test(a: &[f64], b: &[f64], n_permutations: u64, seed: u64) -> Result<PermTestResult> {
    mean_diff_test(a, b, n_permutations, seed, false)
}

/// [`paired_permutation_test`] that always samples, even when full
/// enumeration would be affordable.
pub fn monte_carlo_permutation_test(a: &[f64], b: &[f64], n_permutations: u64, seed: u64) -> Result<PermTestResult> {
    mean_diff_test(a, b, n_permutations, seed, true)
}

fn mean_diff_test(a: &[f64], b: &[f64], n_permutations: u64, seed: u64, sample: bool) -> Result<PermTestResult> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!("{} scores vs {} scores", a.len(), b.len())));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("scores must be finite".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    run(d.len(), n_permutations, seed, sample, |swap| {
        let s: f64 = d.iter().enumerate().map(|(i, v)| if swap(i) { -v } else { *v }).sum();
        (s / n).abs()
    })
}

/// Same test with corpus-level span F1 as the statistic: each unit carries
/// the per-sentence counts of both systems, and a swap exchanges them.
pub fn paired_permutation_test_counts(
    a: &[SpanCounts],
    b: &[SpanCounts],
    n_permutations: u64,
    seed: u64,
) -> Result<PermTestResult> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!("{} units vs {} units", a.len(), b.len())));
    }
    run(a.len(), n_permutations, seed, false, |swap| {
        let (mut ta, mut tb) = (SpanCounts::default(), SpanCounts::default());
        for i in 0..a.len() {
            let (x, y) = if swap(i) { (b[i], a[i]) } else { (a[i], b[i]) };
            ta.add(x);
            tb.add(y);
        }
        (ta.scores().f1 - tb.scores().f1).abs()
    })
}

fn run<F>(units: usize, n_permutations: u64, seed: u64, sample: bool, stat: F) -> Result<PermTestResult>
where
    F: Fn(&dyn Fn(usize) -> bool) -> f64,
{
    if units == 0 {
        return Err(Error::InvalidArgument("permutation test needs at least one paired unit".into()));
    }
    if n_permutations == 0 {
        return Err(Error::InvalidArgument("number of permutations must be positive".into()));
    }
    let observed = stat(&|_| false);
    let tol = 1e-12 * observed.max(1.0);
    let exact = !sample && units < 64 && (1u64 << units) <= n_permutations;
    if exact {
        let total = 1u64 << units;
        let hits = (0..total)
            .filter(|&mask| stat(&|i| mask >> i & 1 == 1) >= observed - tol)
            .count() as u64;
        return Ok(PermTestResult {
            p_value: hits as f64 / total as f64,
            method: PermMethod::Exact,
            permutations: total,
            observed,
            units,
        });
    }
    let mut rng = seeded_rng(seed);
    let words = units.div_ceil(64);
    let mut bits = vec![0u64; words];
    let mut hits = 0u64;
    for _ in 0..n_permutations {
        bits.iter_mut().for_each(|w| *w = rng.random());
        if stat(&|i| bits[i / 64] >> (i % 64) & 1 == 1) >= observed - tol {
            hits += 1;
        }
    }
    Ok(PermTestResult {
        p_value: (hits + 1) as f64 / (n_permutations + 1) as f64,
        method: PermMethod::MonteCarlo,
        permutations: n_permutations,
        observed,
        units,
    })
}
