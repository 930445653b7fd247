//! Exact minimum-cost assignment with a deterministic tie-break.
//!
//! The solver is the standard shortest-augmenting-path formulation with dual
//! potentials, O(n²·m) for n rows and m ≥ n columns. On top of it sits a
//! lexicographic refinement: row by row, commit the smallest column that still
//! completes to an optimal total. That costs one extra solve per candidate
//! column but guarantees a unique, reproducible optimum — cheap at the sizes
//! this crate deals in, and worth it for tests that pin exact assignments.

use crate::error::{Error, Result};

/// Square pairwise-cost table. Rows index padded ground-truth entries,
/// columns index predictions. Construction enforces squareness (by shape)
/// and finiteness, so a `CostMatrix` is always safe to solve.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n: usize,
    data: Vec<f64>, // row-major n×n
}

impl CostMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::InvalidCostMatrix(format!(
                "{} entries cannot fill {n}x{n}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidCostMatrix(format!("non-finite entry {bad}")));
        }
        Ok(CostMatrix { n, data })
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        CostMatrix::new(n, data)
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n + col]
    }
}

/// A row-to-column matching: `column_of(i)` is the prediction assigned to
/// padded ground-truth row `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    perm: Vec<usize>,
}

impl Assignment {
    pub(crate) fn new(perm: Vec<usize>) -> Self {
        debug_assert!({
            let mut seen = vec![false; perm.len()];
            perm.iter().all(|&j| {
                j < seen.len() && !std::mem::replace(&mut seen[j], true)
            })
        });
        Assignment { perm }
    }

    pub fn column_of(&self, row: usize) -> usize {
        self.perm[row]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.perm
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    /// Total cost of this assignment, summed in row order.
    pub fn total_cost(&self, cost: &CostMatrix) -> f64 {
        self.perm
            .iter()
            .enumerate()
            .map(|(i, &j)| cost.at(i, j))
            .sum()
    }
}

/// Shortest-augmenting-path assignment for `rows <= cols`; returns the
/// row→column matching of one minimum-total solution (no tie-break).
fn lap(rows: usize, cols: usize, cost: &dyn Fn(usize, usize) -> f64) -> Vec<usize> {
    debug_assert!(rows <= cols);
    // 1-indexed potentials; p[j] = row currently matched to column j (0 = none).
    let mut u = vec![0.0f64; rows + 1];
    let mut v = vec![0.0f64; cols + 1];
    let mut p = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![usize::MAX; rows];
    for j in 1..=cols {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Minimum achievable total for `rows <= cols`, summed in row order.
fn lap_value(rows: usize, cols: usize, cost: &dyn Fn(usize, usize) -> f64) -> f64 {
    lap(rows, cols, cost)
        .iter()
        .enumerate()
        .map(|(i, &j)| cost(i, j))
        .sum()
}

/// Minimum-cost row→column matching for `rows <= cols` that is
/// lexicographically smallest (as the sequence `column_of(0), column_of(1),
/// …`) among all optimal matchings.
///
/// Greedy-per-row with an exact completion solve: committing the smallest
/// column whose completion is still optimal yields the lexicographic minimum
/// by the usual prefix-exchange argument.
pub(crate) fn lex_min_assignment(
    rows: usize,
    cols: usize,
    cost: &dyn Fn(usize, usize) -> f64,
) -> Vec<usize> {
    debug_assert!(rows <= cols);
    let mut taken = vec![false; cols];
    let mut perm = Vec::with_capacity(rows);
    for i in 0..rows {
        let free: Vec<usize> = (0..cols).filter(|&j| !taken[j]).collect();
        let mut best: Option<(f64, usize)> = None;
        for (slot, &j) in free.iter().enumerate() {
            let others: Vec<usize> = free
                .iter()
                .enumerate()
                .filter(|&(s, _)| s != slot)
                .map(|(_, &c)| c)
                .collect();
            let completion = lap_value(rows - i - 1, others.len(), &|r, c| {
                cost(i + 1 + r, others[c])
            });
            let total = cost(i, j) + completion;
            // Strict `<` with columns visited in ascending order keeps the
            // smallest column among ties.
            if best.is_none_or(|(bv, _)| total < bv) {
                best = Some((total, j));
            }
        }
        let (_, j) = best.expect("rows <= cols leaves a free column for every row");
        taken[j] = true;
        perm.push(j);
    }
    perm
}

/// Exact minimum-cost assignment over a square cost table; among equal-cost
/// optima, returns the lexicographically smallest permutation.
pub fn hungarian(cost: &CostMatrix) -> Result<Assignment> {
    let n = cost.size();
    Ok(Assignment::new(lex_min_assignment(n, n, &|i, j| {
        cost.at(i, j)
    })))
}
