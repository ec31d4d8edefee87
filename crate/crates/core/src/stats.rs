//! Nonparametric tests: Friedman, Wilcoxon signed-rank, rank-biserial
//! correlation and Bonferroni thresholds.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} {what}, got {got}")]
    TooSmall { what: &'static str, needed: usize, got: usize },
    #[error("rows have different lengths")]
    Ragged,
    #[error("all paired differences are zero")]
    AllZero,
    #[error("non-finite value in input")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Exact,
    Asymptotic,
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub statistic: f64,
    pub p_value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effect_size: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub exact: bool,
}

impl ComparisonResult {
    pub fn with_threshold(mut self, alpha: f64) -> Self {
        self.threshold = Some(alpha);
        self
    }

    /// Significant at the attached threshold.
    pub fn significant(&self) -> Option<bool> {
        self.threshold.map(|t| self.p_value < t)
    }
}

pub fn bonferroni_threshold(alpha: f64, m: usize) -> f64 {
    alpha / m.max(1) as f64
}

/// 1-based ranks with ties sharing the average rank, doubled so they are integers.
fn doubled_ranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // average of (i+1)..=(j+1), doubled
        let doubled = (i + 1 + j + 1) as u64;
        for &idx in &order[i..=j] {
            ranks[idx] = doubled;
        }
        i = j + 1;
    }
    ranks
}

/// Average ranks (1-based).
pub fn rank_average(values: &[f64]) -> Vec<f64> {
    doubled_ranks(values).into_iter().map(|r| r as f64 / 2.0).collect()
}

fn tie_term(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|v| **v == sorted[i]).count();
        let t = j as f64;
        sum += t * t * t - t;
        i += j;
    }
    sum
}

fn check_finite(xs: &[f64]) -> Result<(), StatsError> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

struct SignedRanks {
    abs: Vec<f64>,
    doubled: Vec<u64>,
    positive: Vec<bool>,
}

fn signed_ranks(a: &[f64], b: &[f64]) -> Result<SignedRanks, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    check_finite(a)?;
    check_finite(b)?;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    Ok(SignedRanks { doubled: doubled_ranks(&abs), positive: diffs.iter().map(|d| *d > 0.0).collect(), abs })
}

impl SignedRanks {
    /// (T+, T-) doubled.
    fn sums(&self) -> (u64, u64) {
        self.doubled.iter().zip(&self.positive).fold((0, 0), |(p, m), (r, pos)| {
            if *pos { (p + r, m) } else { (p, m + r) }
        })
    }
}

/// (T+ - T-) / (T+ + T-) over the signed ranks of the nonzero differences a - b.
pub fn rank_biserial(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    let sr = signed_ranks(a, b)?;
    if sr.doubled.is_empty() {
        return Err(StatsError::AllZero);
    }
    let (p, m) = sr.sums();
    Ok((p as f64 - m as f64) / (p + m) as f64)
}

/// Largest effective sample size for which `Mode::Auto` uses the exact null.
pub const WILCOXON_EXACT_MAX_N: usize = 25;

/// Two-sided Wilcoxon signed-rank test on `a - b`; zero differences are dropped.
///
/// The statistic is `min(T+, T-)`. Exact p-values come from the permutation
/// null over the observed (possibly tied) ranks; the approximation is the
/// tie-corrected normal without continuity correction.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64], mode: Mode) -> Result<ComparisonResult, StatsError> {
    let sr = signed_ranks(a, b)?;
    let n = sr.doubled.len();
    if n == 0 {
        return Ok(ComparisonResult { statistic: 0.0, p_value: 1.0, effect_size: None, threshold: None, exact: true });
    }
    let (tp, tm) = sr.sums();
    let statistic = tp.min(tm) as f64 / 2.0;
    let effect_size = Some((tp as f64 - tm as f64) / (tp + tm) as f64);
    let exact = match mode {
        Mode::Exact => true,
        Mode::Asymptotic => false,
        Mode::Auto => n <= WILCOXON_EXACT_MAX_N,
    };
    let p_value = if exact {
        // counts[s] = number of sign assignments whose doubled T+ equals s
        let total_sum: u64 = sr.doubled.iter().sum();
        let mut counts = vec![0u128; total_sum as usize + 1];
        counts[0] = 1;
        let mut reach = 0usize;
        for &r in &sr.doubled {
            let r = r as usize;
            for s in (0..=reach).rev() {
                if counts[s] != 0 {
                    counts[s + r] += counts[s];
                }
            }
            reach += r;
        }
        let all: u128 = counts.iter().sum();
        let lower: u128 = counts[..=tp as usize].iter().sum();
        let upper: u128 = counts[tp as usize..].iter().sum();
        (2.0 * lower.min(upper) as f64 / all as f64).min(1.0)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term(&sr.abs) / 48.0;
        if var <= 0.0 {
            1.0
        } else {
            let z = (statistic - mean) / var.sqrt();
            (2.0 * Normal::standard().cdf(z)).min(1.0)
        }
    };
    Ok(ComparisonResult { statistic, p_value, effect_size, threshold: None, exact })
}

/// Largest `(k!)^n` for which `Mode::Auto` uses the exact Friedman null.
pub const FRIEDMAN_EXACT_MAX_ARRANGEMENTS: f64 = 1e6;

fn permutations(v: &[u64]) -> Vec<Vec<u64>> {
    if v.len() <= 1 {
        return vec![v.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..v.len() {
        let mut rest = v.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Friedman test. Rows are blocks, columns are treatments.
///
/// Ties within a block get average ranks and the statistic carries the usual
/// tie correction. A matrix in which every block is fully tied yields 0 / 1.
pub fn friedman_test(matrix: &[Vec<f64>], mode: Mode) -> Result<ComparisonResult, StatsError> {
    let n = matrix.len();
    if n < 2 {
        return Err(StatsError::TooSmall { what: "blocks", needed: 2, got: n });
    }
    let k = matrix[0].len();
    if k < 2 {
        return Err(StatsError::TooSmall { what: "treatments", needed: 2, got: k });
    }
    if matrix.iter().any(|row| row.len() != k) {
        return Err(StatsError::Ragged);
    }
    matrix.iter().try_for_each(|row| check_finite(row))?;

    let ranks: Vec<Vec<u64>> = matrix.iter().map(|row| doubled_ranks(row)).collect();
    let (nf, kf) = (n as f64, k as f64);
    let ties: f64 = matrix.iter().map(|row| tie_term(row)).sum();
    let denom = 1.0 - ties / (nf * kf * (kf * kf - 1.0));
    let col_sums = |rows: &[Vec<u64>]| -> Vec<u64> { (0..k).map(|j| rows.iter().map(|r| r[j]).sum()).collect() };
    let sum_sq = |sums: &[u64]| -> u128 { sums.iter().map(|&s| (s as u128) * (s as u128)).sum() };
    let observed = sum_sq(&col_sums(&ranks));
    // sums are doubled, so their squares are 4 * R_j^2
    let stat_from = |s: u128| (12.0 / (nf * kf * (kf + 1.0)) * (s as f64 / 4.0) - 3.0 * nf * (kf + 1.0)) / denom;

    if denom <= 0.0 {
        return Ok(ComparisonResult { statistic: 0.0, p_value: 1.0, effect_size: None, threshold: None, exact: true });
    }
    let statistic = stat_from(observed).max(0.0);
    let arrangements = (1..=k).map(|i| i as f64).product::<f64>().powi(n as i32);
    let exact = match mode {
        Mode::Exact => true,
        Mode::Asymptotic => false,
        Mode::Auto => arrangements <= FRIEDMAN_EXACT_MAX_ARRANGEMENTS,
    };
    let p_value = if exact {
        let mut dist: HashMap<Vec<u64>, u128> = HashMap::from([(vec![0; k], 1)]);
        for block in &ranks {
            let perms = permutations(block);
            let mut next: HashMap<Vec<u64>, u128> = HashMap::with_capacity(dist.len() * perms.len());
            for (sums, count) in &dist {
                for p in &perms {
                    let key: Vec<u64> = sums.iter().zip(p).map(|(a, b)| a + b).collect();
                    *next.entry(key).or_insert(0) += count;
                }
            }
            dist = next;
        }
        let total: u128 = dist.values().sum();
        let hits: u128 = dist.iter().filter(|(s, _)| sum_sq(s) >= observed).map(|(_, c)| c).sum();
        hits as f64 / total as f64
    } else {
        let chi = ChiSquared::new(kf - 1.0).expect("k >= 2");
        (1.0 - chi.cdf(statistic)).clamp(0.0, 1.0)
    };
    Ok(ComparisonResult { statistic, p_value, effect_size: None, threshold: None, exact })
}
