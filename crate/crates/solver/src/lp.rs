//! Linear programs and a bounded-variable revised simplex.
//!
//! Every constraint row `a_r x (sense) rhs` is rewritten as `a_r x - s_r = 0`
//! with a logical variable `s_r` whose bounds carry the right-hand side. The
//! starting basis is all logicals. Phase one minimizes the sum of bound
//! infeasibilities of basic variables, phase two the true objective.
//!
//! Pricing is Dantzig's rule with lowest-index tie breaking. After a run of
//! degenerate pivots the solver switches to Bland's rule (lowest eligible
//! index enters, lowest index leaves among ratio ties) until progress resumes.

use crate::SolverError;

const PRIMAL_TOL: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 64;
const DEGENERATE_RUN_FOR_BLAND: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// `minimize c^T x` subject to row constraints and variable bounds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a variable and returns its index.
    pub fn add_var(&mut self, cost: f64, lower: f64, upper: f64) -> usize {
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.len() - 1
    }

    /// Adds a constraint row and returns its index.
    pub fn add_constraint(&mut self, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> usize {
        self.constraints.push(Constraint { coeffs, sense, rhs });
        self.constraints.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let n = self.objective.len();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(SolverError::Dimension("bound vectors differ from objective length".into()));
        }
        for j in 0..n {
            if !self.objective[j].is_finite() {
                return Err(SolverError::NonFinite(format!("objective coefficient {j}")));
            }
            if self.lower[j].is_nan() || self.upper[j].is_nan() || self.lower[j] > self.upper[j] {
                return Err(SolverError::Dimension(format!(
                    "variable {j} has bounds [{}, {}]",
                    self.lower[j], self.upper[j]
                )));
            }
            if self.lower[j] == f64::INFINITY || self.upper[j] == f64::NEG_INFINITY {
                return Err(SolverError::Dimension(format!("variable {j} has an empty domain")));
            }
        }
        for (r, row) in self.constraints.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(SolverError::NonFinite(format!("rhs of row {r}")));
            }
            for &(j, v) in &row.coeffs {
                if j >= n {
                    return Err(SolverError::Dimension(format!("row {r} references variable {j}")));
                }
                if !v.is_finite() {
                    return Err(SolverError::NonFinite(format!("row {r} coefficient for {j}")));
                }
            }
        }
        Ok(())
    }

    /// Evaluates the objective at `x`.
    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest bound or row violation at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0_f64;
        for j in 0..self.num_vars() {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        for row in &self.constraints {
            let lhs: f64 = row.coeffs.iter().map(|&(j, v)| v * x[j]).sum();
            let viol = match row.sense {
                Sense::Le => lhs - row.rhs,
                Sense::Ge => row.rhs - lhs,
                Sense::Eq => (lhs - row.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        worst
    }
}

/// Optimal primal/dual pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// One multiplier per constraint row (nonnegative for active `>=` rows of a minimization).
    pub row_duals: Vec<f64>,
    /// `c_j - a_j^T y` for each structural variable.
    pub reduced_costs: Vec<f64>,
    /// Lagrangian bound implied by the duals; equals `objective` at optimality.
    pub dual_objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable resting at zero.
    FreeZero,
}

struct Simplex<'a> {
    lp: &'a LinearProgram,
    n: usize,
    m: usize,
    /// Structural columns in compressed form.
    cols: Vec<Vec<(usize, f64)>>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    x: Vec<f64>,
    status: Vec<Status>,
    head: Vec<usize>,
    binv: Vec<f64>,
    iterations: usize,
    since_refactor: usize,
    bland: bool,
    degenerate_run: usize,
}

impl<'a> Simplex<'a> {
    fn new(lp: &'a LinearProgram) -> Self {
        let n = lp.num_vars();
        let m = lp.num_constraints();
        let mut cols = vec![Vec::new(); n];
        for (r, row) in lp.constraints.iter().enumerate() {
            for &(j, v) in &row.coeffs {
                if v != 0.0 {
                    cols[j].push((r, v));
                }
            }
        }
        // Merge duplicate (row, var) coefficients.
        for col in &mut cols {
            col.sort_by_key(|&(r, _)| r);
            col.dedup_by(|b, a| {
                if a.0 == b.0 {
                    a.1 += b.1;
                    true
                } else {
                    false
                }
            });
        }
        let mut lo = lp.lower.clone();
        let mut hi = lp.upper.clone();
        for row in &lp.constraints {
            let (l, h) = match row.sense {
                Sense::Le => (f64::NEG_INFINITY, row.rhs),
                Sense::Ge => (row.rhs, f64::INFINITY),
                Sense::Eq => (row.rhs, row.rhs),
            };
            lo.push(l);
            hi.push(h);
        }
        let mut x = vec![0.0; n + m];
        let mut status = vec![Status::Basic; n + m];
        for j in 0..n {
            let (st, v) = if lo[j].is_finite() {
                (Status::AtLower, lo[j])
            } else if hi[j].is_finite() {
                (Status::AtUpper, hi[j])
            } else {
                (Status::FreeZero, 0.0)
            };
            status[j] = st;
            x[j] = v;
        }
        let head: Vec<usize> = (n..n + m).collect();
        let mut binv = vec![0.0; m * m];
        for i in 0..m {
            binv[i * m + i] = -1.0;
        }
        let mut s = Self {
            lp,
            n,
            m,
            cols,
            lo,
            hi,
            x,
            status,
            head,
            binv,
            iterations: 0,
            since_refactor: 0,
            bland: false,
            degenerate_run: 0,
        };
        s.recompute_basics();
        s
    }

    fn column(&self, j: usize) -> Vec<(usize, f64)> {
        if j < self.n {
            self.cols[j].clone()
        } else {
            vec![(j - self.n, -1.0)]
        }
    }

    /// `B^{-1} a_j` as a dense vector.
    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.m;
        let mut out = vec![0.0; m];
        for (r, v) in self.column(j) {
            for i in 0..m {
                out[i] += self.binv[i * m + r] * v;
            }
        }
        out
    }

    /// `c_B^T B^{-1}`.
    fn btran(&self, cb: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (i, &c) in cb.iter().enumerate() {
            if c != 0.0 {
                let row = &self.binv[i * m..(i + 1) * m];
                for (yk, bk) in y.iter_mut().zip(row) {
                    *yk += c * bk;
                }
            }
        }
        y
    }

    fn dot_column(&self, j: usize, y: &[f64]) -> f64 {
        if j < self.n {
            self.cols[j].iter().map(|&(r, v)| v * y[r]).sum()
        } else {
            -y[j - self.n]
        }
    }

    /// x_B = -B^{-1} N x_N (all rows are homogeneous).
    fn recompute_basics(&mut self) {
        let m = self.m;
        let mut rhs = vec![0.0; m];
        for j in 0..self.n + self.m {
            if self.status[j] != Status::Basic && self.x[j] != 0.0 {
                for (r, v) in self.column(j) {
                    rhs[r] -= v * self.x[j];
                }
            }
        }
        for i in 0..m {
            let row = &self.binv[i * m..(i + 1) * m];
            self.x[self.head[i]] = row.iter().zip(&rhs).map(|(a, b)| a * b).sum();
        }
    }

    fn refactor(&mut self) -> Result<(), SolverError> {
        let m = self.m;
        let mut b = vec![0.0; m * m];
        for (i, &j) in self.head.iter().enumerate() {
            for (r, v) in self.column(j) {
                b[r * m + i] = v;
            }
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..m {
            inv[i * m + i] = 1.0;
        }
        for k in 0..m {
            let p = (k..m)
                .max_by(|&a, &c| b[a * m + k].abs().total_cmp(&b[c * m + k].abs()))
                .unwrap_or(k);
            if b[p * m + k].abs() < 1e-12 {
                return Err(SolverError::Numerical("basis matrix became singular".into()));
            }
            if p != k {
                for c in 0..m {
                    b.swap(k * m + c, p * m + c);
                    inv.swap(k * m + c, p * m + c);
                }
            }
            let piv = b[k * m + k];
            for c in 0..m {
                b[k * m + c] /= piv;
                inv[k * m + c] /= piv;
            }
            for r in 0..m {
                if r != k {
                    let f = b[r * m + k];
                    if f != 0.0 {
                        for c in 0..m {
                            b[r * m + c] -= f * b[k * m + c];
                            inv[r * m + c] -= f * inv[k * m + c];
                        }
                    }
                }
            }
        }
        // inv = B^{-1} with rows indexed by basis position.
        self.binv = inv;
        self.since_refactor = 0;
        self.recompute_basics();
        Ok(())
    }

    fn infeasibility(&self) -> f64 {
        self.head
            .iter()
            .map(|&j| (self.lo[j] - self.x[j]).max(self.x[j] - self.hi[j]).max(0.0))
            .sum()
    }

    fn tol_for(v: f64) -> f64 {
        PRIMAL_TOL * (1.0 + v.abs())
    }

    fn phase_costs(&self, phase_one: bool) -> Vec<f64> {
        self.head
            .iter()
            .map(|&j| {
                if phase_one {
                    if self.x[j] < self.lo[j] - Self::tol_for(self.lo[j]) {
                        -1.0
                    } else if self.x[j] > self.hi[j] + Self::tol_for(self.hi[j]) {
                        1.0
                    } else {
                        0.0
                    }
                } else if j < self.n {
                    self.lp.objective[j]
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn cost(&self, j: usize, phase_one: bool) -> f64 {
        if phase_one || j >= self.n {
            0.0
        } else {
            self.lp.objective[j]
        }
    }

    /// Picks the entering variable and its direction (+1 increase, -1 decrease).
    fn price(&self, y: &[f64], phase_one: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.n + self.m {
            let st = self.status[j];
            if st == Status::Basic || self.lo[j] == self.hi[j] {
                continue;
            }
            let d = self.cost(j, phase_one) - self.dot_column(j, y);
            let dir = match st {
                Status::AtLower if d < -DUAL_TOL => 1.0,
                Status::AtUpper if d > DUAL_TOL => -1.0,
                Status::FreeZero if d < -DUAL_TOL => 1.0,
                Status::FreeZero if d > DUAL_TOL => -1.0,
                _ => continue,
            };
            if self.bland {
                return Some((j, dir));
            }
            let score = d.abs();
            if best.is_none_or(|(_, _, s)| score > s) {
                best = Some((j, dir, score));
            }
        }
        best.map(|(j, dir, _)| (j, dir))
    }

    fn run(&mut self, phase_one: bool, max_iter: usize) -> Result<(), SolverError> {
        loop {
            if self.iterations >= max_iter {
                return Err(SolverError::IterationLimit(self.iterations));
            }
            if self.since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
            }
            let cb = self.phase_costs(phase_one);
            if phase_one && cb.iter().all(|&c| c == 0.0) {
                return Ok(());
            }
            let y = self.btran(&cb);
            let Some((q, dir)) = self.price(&y, phase_one) else {
                return Ok(());
            };
            let alpha = self.ftran(q);
            // Step length limited by the entering variable's own range.
            let mut t_max = self.hi[q] - self.lo[q];
            let mut leave: Option<(usize, f64)> = None;
            for (i, &a) in alpha.iter().enumerate() {
                if a.abs() < PIVOT_TOL {
                    continue;
                }
                let j = self.head[i];
                let rate = -dir * a;
                let xj = self.x[j];
                let bound = if rate < 0.0 {
                    if xj > self.hi[j] + Self::tol_for(self.hi[j]) {
                        self.hi[j]
                    } else if xj >= self.lo[j] - Self::tol_for(self.lo[j]) {
                        self.lo[j]
                    } else {
                        continue;
                    }
                } else if xj < self.lo[j] - Self::tol_for(self.lo[j]) {
                    self.lo[j]
                } else if xj <= self.hi[j] + Self::tol_for(self.hi[j]) {
                    self.hi[j]
                } else {
                    continue;
                };
                if !bound.is_finite() {
                    continue;
                }
                let t = ((bound - xj) / rate).max(0.0);
                let take = match leave {
                    None => t < t_max - 1e-12,
                    Some((li, _)) => {
                        if t < t_max - 1e-12 {
                            true
                        } else if t <= t_max + 1e-12 {
                            if self.bland {
                                j < self.head[li]
                            } else {
                                a.abs() > alpha[li].abs()
                            }
                        } else {
                            false
                        }
                    }
                };
                if take {
                    t_max = t_max.min(t);
                    leave = Some((i, bound));
                }
            }
            if !t_max.is_finite() {
                if phase_one {
                    return Err(SolverError::Numerical("phase one ray without bound".into()));
                }
                return Err(SolverError::Unbounded);
            }
            self.iterations += 1;
            if t_max <= 1e-12 {
                self.degenerate_run += 1;
                if self.degenerate_run >= DEGENERATE_RUN_FOR_BLAND {
                    self.bland = true;
                }
            } else {
                self.degenerate_run = 0;
                self.bland = false;
            }
            // Move along the edge.
            self.x[q] += dir * t_max;
            for (i, &a) in alpha.iter().enumerate() {
                if a != 0.0 {
                    let j = self.head[i];
                    self.x[j] -= dir * t_max * a;
                }
            }
            match leave {
                Some((p, bound)) => {
                    let out = self.head[p];
                    self.x[out] = bound;
                    self.status[out] = if bound == self.lo[out] { Status::AtLower } else { Status::AtUpper };
                    self.status[q] = Status::Basic;
                    self.head[p] = q;
                    self.pivot(p, &alpha);
                }
                _ => {
                    // Bound flip of the entering variable.
                    self.status[q] = if dir > 0.0 { Status::AtUpper } else { Status::AtLower };
                    self.x[q] = if dir > 0.0 { self.hi[q] } else { self.lo[q] };
                }
            }
        }
    }

    fn pivot(&mut self, p: usize, alpha: &[f64]) {
        let m = self.m;
        let ap = alpha[p];
        for c in 0..m {
            self.binv[p * m + c] /= ap;
        }
        for i in 0..m {
            if i != p && alpha[i] != 0.0 {
                let f = alpha[i];
                for c in 0..m {
                    self.binv[i * m + c] -= f * self.binv[p * m + c];
                }
            }
        }
        self.since_refactor += 1;
    }
}

/// Solves `lp`, distinguishing infeasible and unbounded outcomes.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution, SolverError> {
    lp.validate()?;
    let mut sx = Simplex::new(lp);
    let max_iter = 100 * (sx.n + sx.m) + 1000;
    let mut attempts = 0;
    loop {
        sx.run(true, max_iter)?;
        sx.refactor()?;
        let scale = 1.0 + sx.x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if sx.infeasibility() > 1e-7 * scale {
            return Err(SolverError::Infeasible);
        }
        sx.run(false, max_iter)?;
        sx.refactor()?;
        if sx.infeasibility() <= 1e-9 * scale || attempts >= 3 {
            break;
        }
        attempts += 1;
    }
    let n = sx.n;
    let cb: Vec<f64> = sx.head.iter().map(|&j| sx.cost(j, false)).collect();
    let y = sx.btran(&cb);
    let mut x: Vec<f64> = sx.x[..n].to_vec();
    // Snap nonbasic structurals exactly to their bounds.
    for j in 0..n {
        match sx.status[j] {
            Status::AtLower => x[j] = sx.lo[j],
            Status::AtUpper => x[j] = sx.hi[j],
            _ => {}
        }
    }
    let reduced_costs: Vec<f64> = (0..n).map(|j| lp.objective[j] - sx.dot_column(j, &y)).collect();
    let mut dual_objective = 0.0;
    for j in 0..n + sx.m {
        let d = if j < n { reduced_costs[j] } else { y[j - n] };
        if d.abs() <= DUAL_TOL * (1.0 + lp.objective.get(j).map_or(0.0, |c| c.abs())) {
            continue;
        }
        let bound = if d > 0.0 { sx.lo[j] } else { sx.hi[j] };
        dual_objective += d * bound;
    }
    Ok(LpSolution {
        objective: lp.objective_value(&x),
        x,
        row_duals: y,
        reduced_costs,
        dual_objective,
        iterations: sx.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_lower_bound_row() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var(1.0, f64::NEG_INFINITY, f64::INFINITY);
        lp.add_constraint(vec![(x, 1.0)], Sense::Ge, 3.0);
        let sol = solve_lp(&lp).unwrap();
        assert!((sol.x[0] - 3.0).abs() < 1e-9);
        assert!((sol.row_duals[0] - 1.0).abs() < 1e-9);
        assert!((sol.dual_objective - 3.0).abs() < 1e-9);
    }

    #[test]
    fn detects_infeasible() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var(1.0, 0.0, 1.0);
        lp.add_constraint(vec![(x, 1.0)], Sense::Ge, 2.0);
        assert!(matches!(solve_lp(&lp), Err(SolverError::Infeasible)));
    }

    #[test]
    fn detects_unbounded() {
        let mut lp = LinearProgram::new();
        let x = lp.add_var(-1.0, 0.0, f64::INFINITY);
        let y = lp.add_var(0.0, 0.0, f64::INFINITY);
        lp.add_constraint(vec![(x, 1.0), (y, -1.0)], Sense::Le, 1.0);
        assert!(matches!(solve_lp(&lp), Err(SolverError::Unbounded)));
    }

    #[test]
    fn textbook_maximization() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
        let mut lp = LinearProgram::new();
        let x = lp.add_var(-3.0, 0.0, f64::INFINITY);
        let y = lp.add_var(-5.0, 0.0, f64::INFINITY);
        lp.add_constraint(vec![(x, 1.0)], Sense::Le, 4.0);
        lp.add_constraint(vec![(y, 2.0)], Sense::Le, 12.0);
        lp.add_constraint(vec![(x, 3.0), (y, 2.0)], Sense::Le, 18.0);
        let sol = solve_lp(&lp).unwrap();
        assert!((sol.objective + 36.0).abs() < 1e-9);
        assert!((sol.x[0] - 2.0).abs() < 1e-9 && (sol.x[1] - 6.0).abs() < 1e-9);
        assert!((sol.dual_objective - sol.objective).abs() < 1e-9);
    }

    #[test]
    fn equality_with_free_variables() {
        // min |x - y| style: x - y = 2, x + y = 4, both free -> (3, 1)
        let mut lp = LinearProgram::new();
        let x = lp.add_var(0.0, f64::NEG_INFINITY, f64::INFINITY);
        let y = lp.add_var(0.0, f64::NEG_INFINITY, f64::INFINITY);
        lp.add_constraint(vec![(x, 1.0), (y, -1.0)], Sense::Eq, 2.0);
        lp.add_constraint(vec![(x, 1.0), (y, 1.0)], Sense::Eq, 4.0);
        let sol = solve_lp(&lp).unwrap();
        assert!((sol.x[0] - 3.0).abs() < 1e-9 && (sol.x[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_crossed_bounds() {
        let mut lp = LinearProgram::new();
        lp.add_var(0.0, 2.0, 1.0);
        assert!(matches!(solve_lp(&lp), Err(SolverError::Dimension(_))));
    }
}
