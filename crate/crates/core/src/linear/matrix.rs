use std::fmt;

use serde::{Deserialize, Serialize};

use crate::chain::ReferenceChain;
use crate::dataset::Dataset;
use crate::error::FeatureError;
use crate::linear::forest::ChainForest;

/// Root counts of every sub-chain. Levels are numbered from the root table
/// (level 0). Row `j` holds `h[j][0..=j]`; `h[j][i]` for `i < j` is the
/// number of level-`i` tuples reached from some level-`j` tuple, and the
/// diagonal is zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearJoinMatrix {
    pub chain: Vec<String>,
    pub h: Vec<Vec<u64>>,
}

impl LinearJoinMatrix {
    pub fn zeros(chain: Vec<String>) -> Self {
        let h = (0..chain.len()).map(|j| vec![0; j + 1]).collect();
        LinearJoinMatrix { chain, h }
    }

    /// Builds from full rows, row `j` holding `j + 1` entries.
    pub fn from_rows(chain: &[&str], h: Vec<Vec<u64>>) -> Self {
        LinearJoinMatrix { chain: chain.iter().map(|s| s.to_string()).collect(), h }
    }

    pub fn k(&self) -> usize {
        self.chain.len()
    }

    pub fn get(&self, j: usize, i: usize) -> u64 {
        self.h[j][i]
    }

    pub fn check_shape(&self) -> Result<(), FeatureError> {
        if self.h.len() != self.chain.len() {
            return Err(FeatureError::ShapeMismatch(format!(
                "{} rows for a chain of {} tables",
                self.h.len(),
                self.chain.len()
            )));
        }
        for (j, row) in self.h.iter().enumerate() {
            if row.len() != j + 1 {
                return Err(FeatureError::ShapeMismatch(format!("row {} has {} entries, expected {}", j + 1, row.len(), j + 1)));
            }
            if row[j] != 0 {
                return Err(FeatureError::ShapeMismatch(format!("diagonal entry of row {} is nonzero", j + 1)));
            }
        }
        Ok(())
    }
}

pub fn compute_linear_matrix(ds: &Dataset, chain: &ReferenceChain) -> LinearJoinMatrix {
    ChainForest::build(ds, chain).matrix()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum LinearCondition {
    /// No more roots than tuples in any table of the sub-chain.
    L1,
    /// Column entries do not increase downwards.
    L2,
    /// Row entries do not decrease rightwards.
    L3,
    /// Roots lost when extending a sub-chain shrink towards the root.
    L4,
    /// L4 at the diagonal: the tuples of level `i + 1` cover the drop of
    /// column `i` between rows `i + 1` and `i + 2`.
    L4Boundary,
    /// A sub-chain with roots at level `i + 1` has roots at level `i`.
    Reachability,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LinearViolation {
    pub condition: LinearCondition,
    /// 1-based row and column of the offending entry.
    pub row: usize,
    pub col: usize,
}

impl fmt::Display for LinearViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} at ({},{})", self.condition, self.row, self.col)
    }
}

/// `c(i, j)` in the notation of the checks: entry `h[j][i]`, the table size
/// on the diagonal and zero past the last row.
fn column_value(h: &[Vec<u64>], sizes: &[u64], i: usize, j: usize) -> i128 {
    if j >= h.len() {
        0
    } else if j == i {
        sizes[i] as i128
    } else {
        h[j][i] as i128
    }
}

/// Lists every violated condition. Empty exactly when some dataset with
/// these level sizes has `target` as its matrix.
#[allow(clippy::needless_range_loop)]
pub fn check_necessity_l(target: &LinearJoinMatrix, sizes: &[u64]) -> Result<Vec<LinearViolation>, FeatureError> {
    target.check_shape()?;
    let k = target.k();
    if sizes.len() != k {
        return Err(FeatureError::ShapeMismatch(format!("{} sizes for a chain of {k} tables", sizes.len())));
    }
    let h = &target.h;
    let mut out = Vec::new();
    let mut push = |condition, j: usize, i: usize| out.push(LinearViolation { condition, row: j + 1, col: i + 1 });
    for j in 1..k {
        for i in 0..j {
            let cap = sizes[i..=j].iter().min().copied().unwrap_or(0);
            if h[j][i] > cap {
                push(LinearCondition::L1, j, i);
            }
        }
    }
    for i in 0..k {
        for j in i + 1..k.saturating_sub(1) {
            if h[j][i] < h[j + 1][i] {
                push(LinearCondition::L2, j + 1, i);
            }
        }
    }
    for j in 1..k {
        for i in 0..j.saturating_sub(1) {
            if h[j][i] > h[j][i + 1] {
                push(LinearCondition::L3, j, i);
            }
        }
    }
    for i in 0..k {
        for j in i + 2..k.saturating_sub(1) {
            let left = h[j][i + 1] as i128 - h[j + 1][i + 1] as i128;
            let right = h[j][i] as i128 - h[j + 1][i] as i128;
            if left < right {
                push(LinearCondition::L4, j, i);
            }
        }
    }
    for i in 0..k.saturating_sub(1) {
        let left = sizes[i + 1] as i128 - column_value(h, sizes, i + 1, i + 2);
        let right = column_value(h, sizes, i, i + 1) - column_value(h, sizes, i, i + 2);
        if left < right {
            push(LinearCondition::L4Boundary, i + 1, i);
        }
    }
    for i in 0..k.saturating_sub(1) {
        for j in i + 1..k {
            if column_value(h, sizes, i + 1, j) > 0 && h[j][i] == 0 {
                push(LinearCondition::Reachability, j, i);
            }
        }
    }
    Ok(out)
}

/// Projects `raw` onto the satisfiable matrices for `sizes`, column by column
/// from the root, each entry clamped to the interval the earlier columns and
/// the table sizes allow. Satisfiable inputs come back unchanged.
pub fn repair_target_l(raw: &LinearJoinMatrix, sizes: &[u64]) -> Result<LinearJoinMatrix, FeatureError> {
    raw.check_shape()?;
    let k = raw.k();
    if sizes.len() != k {
        return Err(FeatureError::ShapeMismatch(format!("{} sizes for a chain of {k} tables", sizes.len())));
    }
    // deepest level reachable through nonempty tables
    let last = sizes.iter().take_while(|&&s| s > 0).count();
    if let Some(bad) = (last..k).find(|&l| sizes[l] > 0) {
        return Err(FeatureError::InfeasibleRepair(format!(
            "`{}` is nonempty but `{}` is empty",
            raw.chain[bad],
            raw.chain[bad - 1]
        )));
    }
    let mut h: Vec<Vec<u64>> = (0..k).map(|j| vec![0; j + 1]).collect();
    if last < 2 {
        return Ok(LinearJoinMatrix { chain: raw.chain.clone(), h });
    }
    let big_j = last - 1;
    let cap = |i: usize, j: usize| sizes[i..=j].iter().min().copied().unwrap_or(0) as i128;
    let get = |h: &Vec<Vec<u64>>, i: usize, j: usize| -> i128 {
        if j > big_j {
            0
        } else if j == i {
            sizes[i] as i128
        } else {
            h[j][i] as i128
        }
    };
    for j in (1..=big_j).rev() {
        let lo = get(&h, 0, j + 1).max(if j == big_j { 1 } else { 0 });
        let hi = cap(0, j);
        h[j][0] = (raw.h[j][0] as i128).clamp(lo, hi) as u64;
    }
    for i in 1..big_j {
        for j in (i + 1..=big_j).rev() {
            let step_prev = get(&h, i - 1, j) - get(&h, i - 1, j + 1);
            let lo = get(&h, i, j + 1) + step_prev;
            let slack = (i..=j).map(|jj| cap(i, jj) - get(&h, i - 1, jj)).min().expect("nonempty range");
            let hi = get(&h, i - 1, j) + slack;
            debug_assert!(lo <= hi, "repair interval empty at ({j},{i})");
            h[j][i] = (raw.h[j][i] as i128).clamp(lo, hi.max(lo)) as u64;
        }
    }
    Ok(LinearJoinMatrix { chain: raw.chain.clone(), h })
}

/// Scales column `i` by the growth of its table, then repairs.
pub fn generate_target_l(orig: &LinearJoinMatrix, orig_sizes: &[u64], new_sizes: &[u64]) -> Result<LinearJoinMatrix, FeatureError> {
    orig.check_shape()?;
    if orig_sizes.len() != orig.k() || new_sizes.len() != orig.k() {
        return Err(FeatureError::ShapeMismatch("size list does not match the chain".into()));
    }
    let mut raw = orig.clone();
    for (j, row) in raw.h.iter_mut().enumerate() {
        for i in 0..j {
            row[i] = if orig_sizes[i] == 0 {
                0
            } else {
                (row[i] as f64 * new_sizes[i] as f64 / orig_sizes[i] as f64).round() as u64
            };
        }
    }
    repair_target_l(&raw, new_sizes)
}

/// Mean relative error over the strictly lower entries, relative to
/// `target`. A zero target entry contributes 0 when matched and 1 otherwise.
pub fn linear_error(target: &LinearJoinMatrix, actual: &LinearJoinMatrix) -> Result<f64, FeatureError> {
    target.check_shape()?;
    actual.check_shape()?;
    if target.k() != actual.k() {
        return Err(FeatureError::ShapeMismatch(format!("{} vs {} tables", target.k(), actual.k())));
    }
    Ok(linear_error_rows(&target.h, &actual.h))
}

pub(crate) fn linear_error_rows(target: &[Vec<u64>], actual: &[Vec<u64>]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for j in 1..target.len() {
        for i in 0..j {
            let (t, a) = (target[j][i], actual[j][i]);
            sum += if t == 0 {
                if a == 0 {
                    0.0
                } else {
                    1.0
                }
            } else {
                t.abs_diff(a) as f64 / t as f64
            };
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}
