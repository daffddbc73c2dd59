//! Sparse matrices and a threshold-pivoting sparse LU factorization.
//!
//! The factorization orders columns by a greedy minimum-degree pass over the
//! symmetrized pattern, then runs right-looking elimination on sparse rows.
//! Pivots stay on the diagonal unless the diagonal entry falls below a
//! fraction of the column maximum, which keeps admittance-like matrices free
//! of row exchanges while still handling general unsymmetric systems.

use std::collections::{BTreeMap, BTreeSet};

use crate::SolverError;

/// Relative threshold for accepting the diagonal as pivot.
const DIAGONAL_PREFERENCE: f64 = 0.1;
/// Absolute pivot floor, scaled by the largest matrix entry.
const PIVOT_TOLERANCE: f64 = 1e-13;

/// Square or rectangular sparse matrix in compressed-row form.
///
/// Duplicate coordinates are summed on construction, so entries are unique.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self, SolverError> {
        let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (r, c, v) in triplets {
            if r >= n_rows || c >= n_cols {
                return Err(SolverError::Dimension(format!(
                    "entry ({r}, {c}) outside {n_rows}x{n_cols}"
                )));
            }
            if !v.is_finite() {
                return Err(SolverError::NonFinite(format!("entry ({r}, {c}) = {v}")));
            }
            *acc.entry((r, c)).or_insert(0.0) += v;
        }
        let mut row_ptr = vec![0; n_rows + 1];
        let mut col_idx = Vec::with_capacity(acc.len());
        let mut values = Vec::with_capacity(acc.len());
        for (&(r, c), &v) in &acc {
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self { n_rows, n_cols, row_ptr, col_idx, values })
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0))).expect("identity is well formed")
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterates over the stored entries of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    /// Iterates over all stored entries as triplets.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(cc, _)| cc == c).map_or(0.0, |(_, v)| v)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols, "vector length mismatch");
        (0..self.n_rows).map(|r| self.row(r).map(|(c, v)| v * x[c]).sum()).collect()
    }

    pub fn is_structurally_symmetric(&self) -> bool {
        self.n_rows == self.n_cols
            && self.triplets().all(|(r, c, _)| self.row(c).any(|(cc, _)| cc == r))
    }

    fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// LU factors of a square sparse matrix: `P A Q = L U`.
#[derive(Debug, Clone)]
pub struct LuFactor {
    n: usize,
    /// Column eliminated at step k.
    col_order: Vec<usize>,
    /// Row chosen as pivot at step k.
    row_order: Vec<usize>,
    /// Multipliers applied at step k: (target row, factor).
    lower: Vec<Vec<(usize, f64)>>,
    /// Pivot row k after elimination, restricted to not-yet-eliminated columns.
    upper: Vec<Vec<(usize, f64)>>,
    pivots: Vec<f64>,
}

impl LuFactor {
    /// Factorizes `a`, reporting the offending column when a pivot vanishes.
    pub fn new(a: &SparseMatrix) -> Result<Self, SolverError> {
        let n = a.n_rows();
        if a.n_cols() != n {
            return Err(SolverError::Dimension(format!(
                "LU needs a square matrix, got {}x{}",
                a.n_rows(),
                a.n_cols()
            )));
        }
        let floor = PIVOT_TOLERANCE * a.max_abs().max(1.0);
        let col_order = minimum_degree_order(a);

        let mut rows: Vec<BTreeMap<usize, f64>> = (0..n).map(|r| a.row(r).collect()).collect();
        let mut col_rows: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for (r, c, _) in a.triplets() {
            col_rows[c].insert(r);
        }
        let mut row_done = vec![false; n];
        let mut col_done = vec![false; n];
        let mut row_order = Vec::with_capacity(n);
        let mut lower = Vec::with_capacity(n);
        let mut upper = Vec::with_capacity(n);
        let mut pivots = Vec::with_capacity(n);

        for &k in &col_order {
            let candidates: Vec<usize> = col_rows[k].iter().copied().collect();
            let col_max = candidates
                .iter()
                .map(|&r| rows[r].get(&k).copied().unwrap_or(0.0).abs())
                .fold(0.0_f64, f64::max);
            if col_max <= floor {
                return Err(SolverError::Singular { pivot: k });
            }
            let diag = if row_done[k] { 0.0 } else { rows[k].get(&k).copied().unwrap_or(0.0).abs() };
            let pivot_row = if diag >= DIAGONAL_PREFERENCE * col_max {
                k
            } else {
                // Largest entry; ties go to the lowest row index.
                let mut best = candidates[0];
                let mut best_val = -1.0;
                for &r in &candidates {
                    let v = rows[r].get(&k).copied().unwrap_or(0.0).abs();
                    if v > best_val {
                        best = r;
                        best_val = v;
                    }
                }
                best
            };
            let pivot_vals: Vec<(usize, f64)> = rows[pivot_row].iter().map(|(&c, &v)| (c, v)).collect();
            let pivot = rows[pivot_row][&k];
            let mut multipliers = Vec::new();
            for &r in &candidates {
                if r == pivot_row {
                    continue;
                }
                let factor = rows[r].remove(&k).unwrap_or(0.0) / pivot;
                if factor == 0.0 {
                    continue;
                }
                for &(c, v) in &pivot_vals {
                    if c == k {
                        continue;
                    }
                    let entry = rows[r].entry(c).or_insert_with(|| {
                        col_rows[c].insert(r);
                        0.0
                    });
                    *entry -= factor * v;
                }
                multipliers.push((r, factor));
            }
            for &(c, _) in &pivot_vals {
                col_rows[c].remove(&pivot_row);
            }
            col_rows[k].clear();
            row_done[pivot_row] = true;
            col_done[k] = true;
            row_order.push(pivot_row);
            lower.push(multipliers);
            upper.push(pivot_vals.into_iter().filter(|&(c, _)| c != k).collect());
            pivots.push(pivot);
            rows[pivot_row].clear();
        }
        debug_assert!(col_done.iter().all(|&d| d));
        Ok(Self { n, col_order, row_order, lower, upper, pivots })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b` with the stored factors.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "rhs length mismatch");
        let mut work = b.to_vec();
        // Forward: replay the row operations in elimination order.
        for (step, mults) in self.lower.iter().enumerate() {
            let pv = work[self.row_order[step]];
            if pv != 0.0 {
                for &(r, f) in mults {
                    work[r] -= f * pv;
                }
            }
        }
        let mut x = vec![0.0; self.n];
        for step in (0..self.n).rev() {
            let mut acc = work[self.row_order[step]];
            for &(c, v) in &self.upper[step] {
                acc -= v * x[c];
            }
            x[self.col_order[step]] = acc / self.pivots[step];
        }
        x
    }
}

/// Solves `A x = b` for square sparse `A`.
pub fn solve_linear(a: &SparseMatrix, b: &[f64]) -> Result<Vec<f64>, SolverError> {
    if b.len() != a.n_rows() {
        return Err(SolverError::Dimension(format!(
            "rhs has {} entries, matrix has {} rows",
            b.len(),
            a.n_rows()
        )));
    }
    Ok(LuFactor::new(a)?.solve(b))
}

/// Greedy minimum-degree ordering on the pattern of `A + A^T`.
fn minimum_degree_order(a: &SparseMatrix) -> Vec<usize> {
    let n = a.n_rows();
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (r, c, _) in a.triplets() {
        if r != c {
            adj[r].insert(c);
            adj[c].insert(r);
        }
    }
    let mut eliminated = vec![false; n];
    let mut by_degree: BTreeSet<(usize, usize)> = (0..n).map(|v| (adj[v].len(), v)).collect();
    let mut order = Vec::with_capacity(n);
    while let Some((_, v)) = by_degree.pop_first() {
        eliminated[v] = true;
        order.push(v);
        let nbrs: Vec<usize> = adj[v].iter().copied().filter(|&u| !eliminated[u]).collect();
        for &u in &nbrs {
            by_degree.remove(&(adj[u].len(), u));
            adj[u].remove(&v);
        }
        for (i, &u) in nbrs.iter().enumerate() {
            for &w in &nbrs[i + 1..] {
                adj[u].insert(w);
                adj[w].insert(u);
            }
        }
        for &u in &nbrs {
            by_degree.insert((adj[u].len(), u));
        }
        adj[v].clear();
    }
    order
}

/// Infinity norm of `A x - b`.
pub fn residual_inf(a: &SparseMatrix, x: &[f64], b: &[f64]) -> f64 {
    a.mul_vec(x).iter().zip(b).map(|(ax, bi)| (ax - bi).abs()).fold(0.0, f64::max)
}
