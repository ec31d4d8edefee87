//! pass@k, fixed-bug sets and dispersion.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("invalid pass@k input n={n} c={c} k={k}")]
    PassAtK { n: usize, c: usize, k: usize },
    #[error("no bugs to aggregate")]
    Empty,
    #[error("coefficient of variation needs at least two samples")]
    TooFewSamples,
    #[error("coefficient of variation undefined for zero mean")]
    ZeroMean,
}

/// Expected probability that at least one of `k` samples drawn from `n`,
/// of which `c` are correct, is correct.
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64, MetricsError> {
    if c > n || k == 0 || k > n {
        return Err(MetricsError::PassAtK { n, c, k });
    }
    if c == 0 {
        return Ok(0.0);
    }
    if k > n - c {
        return Ok(1.0);
    }
    if k == 1 {
        return Ok(c as f64 / n as f64);
    }
    // C(n-c, k) / C(n, k) = prod_{i=n-c+1}^{n} (i - k) / i
    let miss: f64 = (n - c + 1..=n).map(|i| (i - k) as f64 / i as f64).product();
    Ok(1.0 - miss)
}

/// Mean pass@k over bugs given as `(n, c)`.
pub fn aggregate_pass_at_k(per_bug: &[(usize, usize)], k: usize) -> Result<f64, MetricsError> {
    if per_bug.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut sum = 0.0;
    for &(n, c) in per_bug {
        sum += pass_at_k(n, c, k)?;
    }
    Ok(sum / per_bug.len() as f64)
}

/// Bugs with at least one correct sample.
pub fn fixed_set<K: Ord + Clone>(verdicts: &BTreeMap<K, usize>) -> BTreeSet<K> {
    verdicts.iter().filter(|(_, c)| **c >= 1).map(|(b, _)| b.clone()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Venn {
    pub only_a: usize,
    pub both: usize,
    pub only_b: usize,
}

impl Venn {
    pub fn union(&self) -> usize {
        self.only_a + self.both + self.only_b
    }
}

pub fn venn<K: Ord>(a: &BTreeSet<K>, b: &BTreeSet<K>) -> Venn {
    let both = a.intersection(b).count();
    Venn { only_a: a.len() - both, both, only_b: b.len() - both }
}

/// Sample standard deviation over mean, in percent.
pub fn coefficient_of_variation(samples: &[f64]) -> Result<f64, MetricsError> {
    if samples.len() < 2 {
        return Err(MetricsError::TooFewSamples);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return Err(MetricsError::ZeroMean);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(100.0 * var.sqrt() / mean.abs())
}

/// pass@k curves: one row per k in `ks`, one column per method, each cell the
/// mean pass@k of that method over its bugs. Rows are the blocks fed to the
/// Friedman test.
pub fn pass_at_k_matrix(methods: &[Vec<(usize, usize)>], ks: &[usize]) -> Result<Vec<Vec<f64>>, MetricsError> {
    ks.iter()
        .map(|&k| methods.iter().map(|bugs| aggregate_pass_at_k(bugs, k)).collect())
        .collect()
}
