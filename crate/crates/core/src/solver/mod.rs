//! Dense convex quadratic programming.
//!
//! Programs have the form
//!
//! ```text
//!     minimize     1/2 x' Q x + c' x
//!     subject to   A x  = b
//!                  G x <= h
//!                  l <= x <= u
//! ```
//!
//! with `Q` symmetric positive semidefinite. Constraint rows are stored
//! sparsely; the Newton systems are dense. The algorithm is a Mehrotra
//! predictor-corrector interior point method, with an elastic phase-1
//! program to classify runs that fail to converge.

mod ipm;

use crate::error::{invalid, Result};

/// Feasibility tolerance used to classify a phase-1 optimum as infeasible,
/// relative to `1 + max |rhs|`.
pub const INFEASIBILITY_TOL: f64 = 1e-7;

/// A sparse linear form `sum val[k] * x[idx[k]]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRow {
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl SparseRow {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, i: usize, v: f64) {
        if v != 0.0 {
            self.idx.push(i);
            self.val.push(v);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.idx.iter().copied().zip(self.val.iter().copied())
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.idx.iter().zip(&self.val).map(|(&i, &v)| v * x[i]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.val.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, f: f64) -> SparseRow {
        SparseRow { idx: self.idx.clone(), val: self.val.iter().map(|v| v * f).collect() }
    }
}

impl FromIterator<(usize, f64)> for SparseRow {
    fn from_iter<T: IntoIterator<Item = (usize, f64)>>(iter: T) -> Self {
        let mut row = SparseRow::new();
        for (i, v) in iter {
            row.push(i, v);
        }
        row
    }
}

/// Identifies a constraint row of a [`ConvexProgram`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowRef {
    Eq(usize),
    Ineq(usize),
}

/// A convex quadratic program assembled through builder calls.
#[derive(Debug, Clone)]
pub struct ConvexProgram {
    n: usize,
    /// Upper-triangular entries `(i, j, q)` with `i <= j` of `Q`.
    quad: Vec<(usize, usize, f64)>,
    linear: Vec<f64>,
    eq_rows: Vec<SparseRow>,
    eq_rhs: Vec<f64>,
    ineq_rows: Vec<SparseRow>,
    ineq_rhs: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ConvexProgram {
    /// A program over `n` free variables with zero objective.
    pub fn new(n: usize) -> Self {
        Self {
            n,
            quad: Vec::new(),
            linear: vec![0.0; n],
            eq_rows: Vec::new(),
            eq_rhs: Vec::new(),
            ineq_rows: Vec::new(),
            ineq_rhs: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn num_eq(&self) -> usize {
        self.eq_rows.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.ineq_rows.len()
    }

    pub fn add_linear(&mut self, i: usize, c: f64) {
        self.linear[i] += c;
    }

    /// Adds `coef * x_i^2` to the objective.
    pub fn add_square(&mut self, i: usize, coef: f64) {
        self.quad.push((i, i, 2.0 * coef));
    }

    /// Adds `q` to the entries `Q[i][j]` and `Q[j][i]` of the half-quadratic form.
    pub fn add_quadratic(&mut self, i: usize, j: usize, q: f64) {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        self.quad.push((a, b, q));
    }

    pub fn set_bounds(&mut self, i: usize, lo: f64, hi: f64) {
        self.lower[i] = lo;
        self.upper[i] = hi;
    }

    pub fn bounds(&self, i: usize) -> (f64, f64) {
        (self.lower[i], self.upper[i])
    }

    /// Adds `row . x = rhs`; returns its reference.
    pub fn add_eq(&mut self, row: impl IntoIterator<Item = (usize, f64)>, rhs: f64) -> RowRef {
        self.eq_rows.push(row.into_iter().collect());
        self.eq_rhs.push(rhs);
        RowRef::Eq(self.eq_rows.len() - 1)
    }

    /// Adds `row . x <= rhs`.
    pub fn add_le(&mut self, row: impl IntoIterator<Item = (usize, f64)>, rhs: f64) -> RowRef {
        self.ineq_rows.push(row.into_iter().collect());
        self.ineq_rhs.push(rhs);
        RowRef::Ineq(self.ineq_rows.len() - 1)
    }

    /// Adds `row . x >= rhs`.
    pub fn add_ge(&mut self, row: impl IntoIterator<Item = (usize, f64)>, rhs: f64) -> RowRef {
        self.add_le(row.into_iter().map(|(i, v)| (i, -v)), -rhs)
    }

    /// Objective value `1/2 x'Qx + c'x`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.linear.iter().zip(x).map(|(c, x)| c * x).sum();
        let quad: f64 =
            self.quad.iter().map(|&(i, j, q)| if i == j { 0.5 * q * x[i] * x[i] } else { q * x[i] * x[j] }).sum();
        lin + quad
    }

    /// Gradient `Qx + c`.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.linear.clone();
        for &(i, j, q) in &self.quad {
            g[i] += q * x[j];
            if i != j {
                g[j] += q * x[i];
            }
        }
        g
    }

    /// Largest violation of any constraint or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0_f64;
        for (row, &b) in self.eq_rows.iter().zip(&self.eq_rhs) {
            worst = worst.max((row.dot(x) - b).abs());
        }
        for (row, &h) in self.ineq_rows.iter().zip(&self.ineq_rhs) {
            worst = worst.max(row.dot(x) - h);
        }
        for i in 0..self.n {
            worst = worst.max(self.lower[i] - x[i]).max(x[i] - self.upper[i]);
        }
        worst
    }

    /// Value of inequality row `r` at `x` minus its right-hand side.
    pub fn ineq_slack(&self, r: usize, x: &[f64]) -> f64 {
        self.ineq_rhs[r] - self.ineq_rows[r].dot(x)
    }

    fn validate(&self) -> Result<()> {
        let check_row = |row: &SparseRow| -> Result<()> {
            if row.idx.iter().any(|&i| i >= self.n) {
                return Err(invalid("constraint references a variable out of range"));
            }
            if row.val.iter().any(|v| !v.is_finite()) {
                return Err(invalid("non-finite constraint coefficient"));
            }
            Ok(())
        };
        for row in self.eq_rows.iter().chain(&self.ineq_rows) {
            check_row(row)?;
        }
        if self.eq_rhs.iter().chain(&self.ineq_rhs).any(|v| !v.is_finite()) {
            return Err(invalid("non-finite right-hand side"));
        }
        if self.linear.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite linear cost"));
        }
        for &(i, j, q) in &self.quad {
            if j >= self.n || !q.is_finite() {
                return Err(invalid("bad quadratic entry"));
            }
            if i == j && q < 0.0 {
                return Err(invalid("quadratic cost matrix is not positive semidefinite"));
            }
        }
        if self.lower.iter().chain(&self.upper).any(|v| v.is_nan()) {
            return Err(invalid("NaN variable bound"));
        }
        if self.quad.iter().any(|&(i, j, _)| i != j) && !self.quad_is_psd() {
            return Err(invalid("quadratic cost matrix is not positive semidefinite"));
        }
        Ok(())
    }

    fn quad_is_psd(&self) -> bool {
        let mut q = nalgebra::DMatrix::<f64>::zeros(self.n, self.n);
        for &(i, j, v) in &self.quad {
            q[(i, j)] += v;
            if i != j {
                q[(j, i)] += v;
            }
        }
        let scale = q.amax().max(1.0);
        let eig = q.symmetric_eigenvalues();
        eig.iter().all(|&e| e >= -1e-10 * scale)
    }
}

/// Termination status of [`solve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub status: Status,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Multipliers of `A x = b`.
    pub eq_duals: Option<Vec<f64>>,
    /// Multipliers of `G x <= h`, nonnegative.
    pub ineq_duals: Option<Vec<f64>>,
    pub iterations: usize,
    /// Rows that needed elastic slack in the phase-1 program (infeasible runs).
    pub infeasible_rows: Vec<RowRef>,
}

impl Solution {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }

    fn failed(status: Status, n: usize, iterations: usize) -> Self {
        Solution {
            status,
            x: vec![f64::NAN; n],
            objective: f64::NAN,
            eq_duals: None,
            ineq_duals: None,
            iterations,
            infeasible_rows: Vec::new(),
        }
    }
}

/// Primal and stationarity residuals of a solution, in the program's units
/// and relative to `1 + ` the magnitude of the data they compare against.
#[derive(Debug, Clone, Copy)]
pub struct KktResiduals {
    pub primal: f64,
    pub stationarity: f64,
    pub complementarity: f64,
}

impl ConvexProgram {
    /// KKT residuals of `sol` for this program. Bound multipliers are
    /// recovered from the reduced gradient.
    pub fn kkt_residuals(&self, sol: &Solution) -> KktResiduals {
        let x = &sol.x;
        let scale_rhs = 1.0 + self.eq_rhs.iter().chain(&self.ineq_rhs).fold(0.0_f64, |m, v| m.max(v.abs()));
        let primal = self.max_violation(x).max(0.0) / scale_rhs;

        let mut g = self.gradient(x);
        if let Some(y) = &sol.eq_duals {
            for (row, &yi) in self.eq_rows.iter().zip(y) {
                for (&i, &v) in row.idx.iter().zip(&row.val) {
                    g[i] += v * yi;
                }
            }
        }
        let mut comp = 0.0_f64;
        if let Some(z) = &sol.ineq_duals {
            for (r, (row, &zi)) in self.ineq_rows.iter().zip(z).enumerate() {
                for (&i, &v) in row.idx.iter().zip(&row.val) {
                    g[i] += v * zi;
                }
                comp = comp.max((zi * self.ineq_slack(r, x)).abs());
            }
        }
        // Whatever remains must be explained by an active bound with the right sign.
        let mut stat = 0.0_f64;
        for i in 0..self.n {
            let r = g[i];
            let at_lower = (x[i] - self.lower[i]).abs() <= 1e-7 * (1.0 + self.lower[i].abs());
            let at_upper = (self.upper[i] - x[i]).abs() <= 1e-7 * (1.0 + self.upper[i].abs());
            let unexplained = if at_lower && at_upper {
                0.0
            } else if at_lower {
                (-r).max(0.0)
            } else if at_upper {
                r.max(0.0)
            } else {
                r.abs()
            };
            stat = stat.max(unexplained);
        }
        let scale_c = 1.0 + self.linear.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        KktResiduals { primal, stationarity: stat / scale_c, complementarity: comp / scale_c }
    }
}

/// Solves `p`. Infeasible and unbounded programs are reported through
/// [`Status`]; malformed programs are errors.
pub fn solve(p: &ConvexProgram) -> Result<Solution> {
    p.validate()?;
    Ok(ipm::solve_classified(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn min_x_with_lower_row() {
        let mut p = ConvexProgram::new(1);
        p.add_linear(0, 1.0);
        p.add_ge([(0, 1.0)], 1.0);
        let s = solve(&p).unwrap();
        assert!(s.is_optimal());
        assert_abs_diff_eq!(s.x[0], 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(s.objective, 1.0, epsilon = 1e-7);
    }

    #[test]
    fn active_upper_bound_on_square() {
        // (x - 3)^2 = x^2 - 6x + 9
        let mut p = ConvexProgram::new(1);
        p.add_square(0, 1.0);
        p.add_linear(0, -6.0);
        p.set_bounds(0, f64::NEG_INFINITY, 2.0);
        let s = solve(&p).unwrap();
        assert!(s.is_optimal());
        assert_abs_diff_eq!(s.x[0], 2.0, epsilon = 1e-7);
        assert_abs_diff_eq!(s.objective + 9.0, 1.0, epsilon = 1e-7);
    }

    #[test]
    fn equality_constrained_least_norm() {
        let mut p = ConvexProgram::new(2);
        p.add_square(0, 1.0);
        p.add_square(1, 1.0);
        p.add_eq([(0, 1.0), (1, 1.0)], 1.0);
        let s = solve(&p).unwrap();
        assert!(s.is_optimal());
        assert_abs_diff_eq!(s.x[0], 0.5, epsilon = 1e-7);
        assert_abs_diff_eq!(s.x[1], 0.5, epsilon = 1e-7);
        assert_abs_diff_eq!(s.objective, 0.5, epsilon = 1e-7);
        // Lagrange multiplier of x + y = 1 is -1.
        assert_abs_diff_eq!(s.eq_duals.as_ref().unwrap()[0], -1.0, epsilon = 1e-6);
    }

    #[test]
    fn infeasible_rows_are_reported() {
        let mut p = ConvexProgram::new(2);
        p.add_linear(0, 1.0);
        p.set_bounds(0, 0.0, 1.0);
        p.set_bounds(1, 0.0, 1.0);
        p.add_ge([(0, 1.0), (1, 1.0)], 3.0);
        let s = solve(&p).unwrap();
        assert_eq!(s.status, Status::Infeasible);
        assert_eq!(s.infeasible_rows, vec![RowRef::Ineq(0)]);
    }

    #[test]
    fn crossed_bounds_are_infeasible() {
        let mut p = ConvexProgram::new(1);
        p.set_bounds(0, 2.0, 1.0);
        assert_eq!(solve(&p).unwrap().status, Status::Infeasible);
    }

    #[test]
    fn unbounded_lp() {
        let mut p = ConvexProgram::new(2);
        p.add_linear(0, -1.0);
        p.set_bounds(0, 0.0, f64::INFINITY);
        p.set_bounds(1, 0.0, 1.0);
        p.add_le([(1, 1.0), (0, -1.0)], 0.5);
        assert_eq!(solve(&p).unwrap().status, Status::Unbounded);
    }

    #[test]
    fn fixed_variable() {
        let mut p = ConvexProgram::new(2);
        p.add_square(0, 1.0);
        p.add_square(1, 1.0);
        p.set_bounds(1, 0.3, 0.3);
        p.add_eq([(0, 1.0), (1, 1.0)], 1.0);
        let s = solve(&p).unwrap();
        assert!(s.is_optimal());
        assert_abs_diff_eq!(s.x[0], 0.7, epsilon = 1e-7);
        assert_abs_diff_eq!(s.x[1], 0.3, epsilon = 1e-9);
    }

    #[test]
    fn rejects_indefinite_quadratic() {
        let mut p = ConvexProgram::new(2);
        p.add_quadratic(0, 1, 1.0);
        assert!(solve(&p).is_err());
        let mut p = ConvexProgram::new(1);
        p.add_square(0, -1.0);
        assert!(solve(&p).is_err());
    }

    #[test]
    fn redundant_equalities() {
        let mut p = ConvexProgram::new(2);
        p.add_linear(0, 1.0);
        p.add_linear(1, 2.0);
        p.set_bounds(0, 0.0, 10.0);
        p.set_bounds(1, 0.0, 10.0);
        p.add_eq([(0, 1.0), (1, 1.0)], 4.0);
        p.add_eq([(0, 2.0), (1, 2.0)], 8.0);
        let s = solve(&p).unwrap();
        assert!(s.is_optimal(), "{:?}", s.status);
        assert_abs_diff_eq!(s.x[0], 4.0, epsilon = 1e-6);
        assert_abs_diff_eq!(s.objective, 4.0, epsilon = 1e-6);
    }
}
