//! Wilcoxon-Mann-Whitney rank test with direction detection.
//!
//! Both one-sided p-values are computed against the null that before and
//! after values come from the same distribution. For small problems
//! (n_before * n_after <= 400) the p-values are exact: the null distribution
//! of the rank sum is enumerated over all C(m+n, m) assignments of the
//! observed pooled values, with midranks for ties, via a subset-sum count.
//! Larger problems use the normal approximation with tie-corrected variance
//! and continuity correction.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Product of sample sizes up to which p-values are exact.
pub const EXACT_LIMIT: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
    None,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::None => "none",
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WmwOutcome {
    /// P-value for the alternative "after tends smaller than before".
    pub p_less: f64,
    /// P-value for the alternative "after tends greater than before".
    pub p_greater: f64,
    pub direction: Direction,
    pub exact: bool,
}

/// Runs the test. `alpha` is the one-sided rejection threshold: the change
/// direction is `up` when `p_greater < alpha`, `down` when `p_less < alpha`,
/// `none` otherwise.
pub fn wmw_test(before: &[f64], after: &[f64], alpha: f64) -> Result<WmwOutcome> {
    if before.len() < 3 || after.len() < 3 {
        return Err(Error::insufficient(format!(
            "need at least 3 samples on each side, got {} before and {} after",
            before.len(),
            after.len()
        )));
    }
    if before.iter().chain(after).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite sample value"));
    }

    // Identical constant samples carry no direction information; both
    // one-sided p-values are reported as 0.5.
    let all_equal = {
        let first = before[0];
        before.iter().chain(after).all(|v| *v == first)
    };
    if all_equal {
        return Ok(WmwOutcome { p_less: 0.5, p_greater: 0.5, direction: Direction::None, exact: true });
    }

    let m = before.len();
    let n = after.len();
    let (p_less, p_greater, exact) = if m * n <= EXACT_LIMIT {
        let (l, g) = exact_p_values(before, after);
        (l, g, true)
    } else {
        let (l, g) = normal_p_values(before, after);
        (l, g, false)
    };

    let direction = match (p_greater < alpha, p_less < alpha) {
        (true, true) => {
            return Err(Error::internal(format!(
                "both one-sided p-values ({p_less:.6}, {p_greater:.6}) below alpha {alpha}"
            )))
        }
        (true, false) => Direction::Up,
        (false, true) => Direction::Down,
        (false, false) => Direction::None,
    };
    Ok(WmwOutcome { p_less, p_greater, direction, exact })
}

/// Doubled midranks of the pooled samples, in pool order (before then
/// after). Doubling keeps tied midranks integral.
fn doubled_midranks(before: &[f64], after: &[f64]) -> (Vec<u64>, Vec<(f64, u64)>) {
    let n = before.len() + after.len();
    let mut order: Vec<usize> = (0..n).collect();
    let value = |i: usize| if i < before.len() { before[i] } else { after[i - before.len()] };
    order.sort_by(|a, b| value(*a).partial_cmp(&value(*b)).expect("finite values"));

    let mut ranks2 = vec![0u64; n];
    let mut tie_groups: Vec<(f64, u64)> = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && value(order[j]) == value(order[i]) {
            j += 1;
        }
        // positions i..j (0-based) share midrank (i+1 + j)/2; doubled: i+j+1
        let doubled = (i + j + 1) as u64;
        for k in i..j {
            ranks2[order[k]] = doubled;
        }
        tie_groups.push((value(order[i]), (j - i) as u64));
        i = j;
    }
    (ranks2, tie_groups)
}

/// Exact one-sided p-values by counting, over all subsets of the pooled
/// ranks with the after-sample's size, how many achieve a rank sum at most /
/// at least the observed one. Equivalent to full enumeration of rank
/// assignments, including ties.
fn exact_p_values(before: &[f64], after: &[f64]) -> (f64, f64) {
    let m = before.len();
    let n = after.len();
    let (ranks2, _) = doubled_midranks(before, after);
    let observed: u64 = ranks2[m..].iter().sum();

    // dp[k][s] = number of ways to pick k of the pooled doubled ranks seen so
    // far with doubled rank sum s
    let max_sum: usize = ranks2.iter().map(|r| *r as usize).sum();
    let mut dp = vec![vec![0u128; max_sum + 1]; n + 1];
    dp[0][0] = 1;
    for &r in &ranks2 {
        let r = r as usize;
        for k in (0..n).rev() {
            for s in 0..=max_sum.saturating_sub(r) {
                if dp[k][s] != 0 {
                    let add = dp[k][s];
                    dp[k + 1][s + r] += add;
                }
            }
        }
    }

    let total: u128 = dp[n].iter().sum();
    let le: u128 = dp[n][..=observed as usize].iter().sum();
    let ge: u128 = dp[n][observed as usize..].iter().sum();
    (le as f64 / total as f64, ge as f64 / total as f64)
}

/// Normal approximation with tie-corrected variance and continuity
/// correction.
fn normal_p_values(before: &[f64], after: &[f64]) -> (f64, f64) {
    let m = before.len() as f64;
    let n = after.len() as f64;
    let big_n = m + n;
    let (ranks2, tie_groups) = doubled_midranks(before, after);
    let r_after: f64 = ranks2[before.len()..].iter().map(|r| *r as f64 / 2.0).sum();
    let u_after = r_after - n * (n + 1.0) / 2.0;

    let mean = m * n / 2.0;
    let tie_sum: f64 = tie_groups
        .iter()
        .map(|(_, t)| {
            let t = *t as f64;
            t * t * t - t
        })
        .sum();
    let variance = m * n / 12.0 * ((big_n + 1.0) - tie_sum / (big_n * (big_n - 1.0)));
    if variance <= 0.0 {
        return (0.5, 0.5);
    }
    let sd = variance.sqrt();
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let p_greater = 1.0 - std_normal.cdf((u_after - mean - 0.5) / sd);
    let p_less = std_normal.cdf((u_after - mean + 0.5) / sd);
    (p_less.clamp(0.0, 1.0), p_greater.clamp(0.0, 1.0))
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Brute-force reference: literally enumerate every assignment of the
    //! pooled ranks to the two samples. Test-only, independent of the DP
    //! above.

    use super::doubled_midranks;

    pub fn brute_force_p_values(before: &[f64], after: &[f64]) -> (f64, f64) {
        let m = before.len();
        let n = after.len();
        let (ranks2, _) = doubled_midranks(before, after);
        let observed: u64 = ranks2[m..].iter().sum();

        let total_items = m + n;
        let mut le = 0u64;
        let mut ge = 0u64;
        let mut total = 0u64;
        let mut pick = vec![0usize; n];
        enumerate_subsets(total_items, n, 0, 0, &mut pick, &mut |subset: &[usize]| {
            let s: u64 = subset.iter().map(|i| ranks2[*i]).sum();
            total += 1;
            if s <= observed {
                le += 1;
            }
            if s >= observed {
                ge += 1;
            }
        });
        (le as f64 / total as f64, ge as f64 / total as f64)
    }

    fn enumerate_subsets(
        n_items: usize,
        k: usize,
        start: usize,
        depth: usize,
        pick: &mut Vec<usize>,
        visit: &mut impl FnMut(&[usize]),
    ) {
        if depth == k {
            visit(pick);
            return;
        }
        for i in start..=(n_items - (k - depth)) {
            pick[depth] = i;
            enumerate_subsets(n_items, k, i + 1, depth + 1, pick, visit);
        }
    }
}
