//! Dense linear-program solver: bounded-variable primal simplex.
//!
//! Solves `maximize cᵀx` subject to inequality and equality rows and per
//! variable box bounds. Every row is turned into an equality by a slack
//! variable whose bounds encode the relation; rows whose slack cannot absorb
//! the initial residual get an artificial variable, and a phase-one pass
//! drives the artificials to zero before the real objective is optimized.
//!
//! Pivoting uses Dantzig's rule and falls back to Bland's rule after a stall,
//! which guarantees termination on the degenerate, budget-tight programs this
//! crate produces. At optimality the basic values are recomputed from the
//! original coefficients with an LU solve, so the returned vertex does not
//! carry accumulated tableau drift.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// Row relation against its right-hand side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

/// One linear constraint row.
#[derive(Debug, Clone, PartialEq)]
pub struct LpRow {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

impl LpRow {
    pub fn new(coeffs: Vec<f64>, relation: Relation, rhs: f64) -> Self {
        Self { coeffs, relation, rhs }
    }

    /// Signed violation of the row at a point (0 when satisfied).
    pub fn residual(&self, x: &[f64]) -> f64 {
        let lhs: f64 = self.coeffs.iter().zip(x).map(|(a, v)| a * v).sum();
        match self.relation {
            Relation::Le => (lhs - self.rhs).max(0.0),
            Relation::Ge => (self.rhs - lhs).max(0.0),
            Relation::Eq => math::abs(lhs - self.rhs),
        }
    }
}

/// A dense LP: `maximize cᵀx` over `rows` and box bounds `lo ≤ x ≤ hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub rows: Vec<LpRow>,
    pub bounds: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpError {
    DimensionMismatch(String),
    InvalidNumber(String),
    IterationLimit,
}

impl core::fmt::Display for LpError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            LpError::DimensionMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            LpError::InvalidNumber(msg) => write!(f, "invalid number: {msg}"),
            LpError::IterationLimit => f.write_str("simplex iteration limit reached"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for LpError {}

impl LpProblem {
    pub fn new(objective: Vec<f64>, rows: Vec<LpRow>, bounds: Vec<(f64, f64)>) -> Self {
        Self { objective, rows, bounds }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.num_vars();
        if self.bounds.len() != n {
            return Err(LpError::DimensionMismatch(format!(
                "{} bounds for {n} variables",
                self.bounds.len()
            )));
        }
        for (i, row) in self.rows.iter().enumerate() {
            if row.coeffs.len() != n {
                return Err(LpError::DimensionMismatch(format!(
                    "row {i} has {} coefficients for {n} variables",
                    row.coeffs.len()
                )));
            }
            if row.coeffs.iter().any(|v| v.is_nan()) || row.rhs.is_nan() {
                return Err(LpError::InvalidNumber(format!("NaN in row {i}")));
            }
        }
        if self.objective.iter().any(|v| v.is_nan()) {
            return Err(LpError::InvalidNumber("NaN in objective".into()));
        }
        for (j, &(lo, hi)) in self.bounds.iter().enumerate() {
            if lo.is_nan() || hi.is_nan() {
                return Err(LpError::InvalidNumber(format!("NaN bound on variable {j}")));
            }
            if lo > hi {
                return Err(LpError::DimensionMismatch(format!(
                    "variable {j} has lo {lo} > hi {hi}"
                )));
            }
        }
        Ok(())
    }
}

/// Plain-text tabular dump, for cross-checking against external solvers.
impl core::fmt::Display for LpProblem {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        writeln!(f, "maximize")?;
        for (j, c) in self.objective.iter().enumerate() {
            writeln!(f, "  c[{j}] = {c}")?;
        }
        writeln!(f, "subject to")?;
        for row in &self.rows {
            write!(f, " ")?;
            for a in &row.coeffs {
                write!(f, " {a}")?;
            }
            let rel = match row.relation {
                Relation::Le => "<=",
                Relation::Eq => "=",
                Relation::Ge => ">=",
            };
            writeln!(f, "  {rel} {}", row.rhs)?;
        }
        writeln!(f, "bounds")?;
        for (j, (lo, hi)) in self.bounds.iter().enumerate() {
            writeln!(f, "  {lo} <= x[{j}] <= {hi}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Solver output. `x` and `objective` are meaningful only when `status` is
/// [`LpStatus::Optimal`].
#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
}

/// Solver tolerances; the defaults match the crate-wide contracts
/// (feasibility and optimality to 1e-9).
#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    /// Reduced costs and pivot elements below this magnitude are treated as zero.
    pub pivot_tol: f64,
    /// Feasibility and optimality tolerance.
    pub feas_tol: f64,
    /// Iterations without objective improvement before switching to Bland's rule.
    pub stall_threshold: u32,
    pub max_iterations: u32,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            pivot_tol: 1e-10,
            feas_tol: 1e-9,
            stall_threshold: 200,
            max_iterations: 1_000_000,
        }
    }
}

/// Residuals of a claimed solution against the original problem data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualReport {
    pub max_row_residual: f64,
    pub max_bound_violation: f64,
    pub objective_gap: f64,
}

impl ResidualReport {
    pub fn max(&self) -> f64 {
        self.max_row_residual
            .max(self.max_bound_violation)
            .max(self.objective_gap)
    }
}

/// Evaluates how well a solution satisfies the problem it claims to solve.
pub fn check_solution(problem: &LpProblem, solution: &LpSolution) -> ResidualReport {
    let x = &solution.x;
    let max_row_residual = problem
        .rows
        .iter()
        .map(|row| row.residual(x))
        .fold(0.0, f64::max);
    let max_bound_violation = problem
        .bounds
        .iter()
        .zip(x)
        .map(|(&(lo, hi), &v)| (lo - v).max(v - hi).max(0.0))
        .fold(0.0, f64::max);
    let cx: f64 = problem.objective.iter().zip(x).map(|(c, v)| c * v).sum();
    ResidualReport {
        max_row_residual,
        max_bound_violation,
        objective_gap: math::abs(cx - solution.objective),
    }
}

pub fn solve(problem: &LpProblem) -> Result<LpSolution, LpError> {
    solve_with(problem, &SolverConfig::default())
}

pub fn solve_with(problem: &LpProblem, config: &SolverConfig) -> Result<LpSolution, LpError> {
    problem.validate()?;
    Simplex::new(problem, config).run()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic,
    AtLower,
    AtUpper,
}

struct Simplex<'a> {
    cfg: &'a SolverConfig,
    n_struct: usize,
    m: usize,
    /// Columns of the original (untransformed) augmented matrix, column-major.
    orig_cols: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// Working tableau, row-major m x n_total: B⁻¹·A.
    tableau: Vec<Vec<f64>>,
    /// Current value of every variable.
    x: Vec<f64>,
    state: Vec<VarState>,
    /// Basic variable of each row.
    basis: Vec<usize>,
    /// Reduced-cost row for the current phase objective.
    reduced: Vec<f64>,
    cost: Vec<f64>,
    objective: Vec<f64>,
    artificial_start: usize,
}

impl<'a> Simplex<'a> {
    fn new(problem: &'a LpProblem, cfg: &'a SolverConfig) -> Self {
        let n_struct = problem.num_vars();
        let m = problem.rows.len();
        let n_total = n_struct + m;

        let mut orig_cols = vec![vec![0.0; m]; n_total];
        let mut lo = Vec::with_capacity(n_total);
        let mut hi = Vec::with_capacity(n_total);
        for &(l, h) in &problem.bounds {
            lo.push(l);
            hi.push(h);
        }
        let mut rhs = Vec::with_capacity(m);
        for (i, row) in problem.rows.iter().enumerate() {
            for (j, &a) in row.coeffs.iter().enumerate() {
                orig_cols[j][i] = a;
            }
            orig_cols[n_struct + i][i] = 1.0;
            let (sl, sh) = match row.relation {
                Relation::Le => (0.0, f64::INFINITY),
                Relation::Ge => (f64::NEG_INFINITY, 0.0),
                Relation::Eq => (0.0, 0.0),
            };
            lo.push(sl);
            hi.push(sh);
            rhs.push(row.rhs);
        }

        let mut objective = vec![0.0; n_total];
        objective[..n_struct].copy_from_slice(&problem.objective);

        Self {
            cfg,
            n_struct,
            m,
            orig_cols,
            rhs,
            lo,
            hi,
            tableau: Vec::new(),
            x: Vec::new(),
            state: Vec::new(),
            basis: Vec::new(),
            reduced: Vec::new(),
            cost: Vec::new(),
            objective,
            artificial_start: n_total,
        }
    }

    fn run(mut self) -> Result<LpSolution, LpError> {
        let needs_phase_one = self.initialize();
        if needs_phase_one {
            self.set_cost_phase_one();
            if let Some(status) = self.optimize()? {
                // Phase one is always bounded; an Unbounded signal here would
                // be a logic error, surface it as an iteration problem.
                debug_assert!(status != LpStatus::Unbounded);
                return Err(LpError::IterationLimit);
            }
            let infeasibility: f64 = (self.artificial_start..self.total_vars())
                .map(|j| self.x[j])
                .sum();
            if infeasibility > self.cfg.feas_tol {
                return Ok(LpSolution {
                    status: LpStatus::Infeasible,
                    x: Vec::new(),
                    objective: f64::NAN,
                });
            }
            // Lock artificials at zero for phase two.
            for j in self.artificial_start..self.total_vars() {
                self.lo[j] = 0.0;
                self.hi[j] = 0.0;
            }
        }
        self.set_cost_phase_two();
        if let Some(status) = self.optimize()? {
            return Ok(LpSolution { status, x: Vec::new(), objective: f64::NAN });
        }
        self.refine();
        let x: Vec<f64> = self.x[..self.n_struct].to_vec();
        let objective = self.objective[..self.n_struct]
            .iter()
            .zip(&x)
            .map(|(c, v)| c * v)
            .sum();
        Ok(LpSolution { status: LpStatus::Optimal, x, objective })
    }

    fn total_vars(&self) -> usize {
        self.orig_cols.len()
    }

    /// Places structural variables at their bound nearest zero, slacks basic
    /// where they can absorb the residual, and artificials elsewhere.
    /// Returns whether any artificial was created.
    fn initialize(&mut self) -> bool {
        let n_total = self.n_struct + self.m;
        self.x = vec![0.0; n_total];
        self.state = vec![VarState::AtLower; n_total];
        for j in 0..self.n_struct {
            let (l, h) = (self.lo[j], self.hi[j]);
            let (v, st) = if l.is_finite() && (h.is_infinite() || math::abs(l) <= math::abs(h)) {
                (l, VarState::AtLower)
            } else if h.is_finite() {
                (h, VarState::AtUpper)
            } else {
                (0.0, VarState::AtLower) // free variable
            };
            self.x[j] = v;
            self.state[j] = st;
        }

        self.tableau = (0..self.m)
            .map(|i| {
                let mut row = vec![0.0; n_total];
                for (j, col) in self.orig_cols.iter().enumerate() {
                    row[j] = col[i];
                }
                row
            })
            .collect();
        self.basis = Vec::with_capacity(self.m);

        let mut any_artificial = false;
        for i in 0..self.m {
            let slack = self.n_struct + i;
            let residual: f64 = self.rhs[i]
                - (0..self.n_struct)
                    .map(|j| self.orig_cols[j][i] * self.x[j])
                    .sum::<f64>();
            if residual >= self.lo[slack] && residual <= self.hi[slack] {
                self.x[slack] = residual;
                self.state[slack] = VarState::Basic;
                self.basis.push(slack);
            } else {
                let clamped = residual.clamp(self.lo[slack], self.hi[slack]);
                self.x[slack] = clamped;
                self.state[slack] = if clamped == self.lo[slack] {
                    VarState::AtLower
                } else {
                    VarState::AtUpper
                };
                let leftover = residual - clamped;
                let sigma = if leftover >= 0.0 { 1.0 } else { -1.0 };
                let art = self.total_vars();
                let mut col = vec![0.0; self.m];
                col[i] = sigma;
                self.orig_cols.push(col);
                self.lo.push(0.0);
                self.hi.push(f64::INFINITY);
                self.x.push(math::abs(leftover));
                self.state.push(VarState::Basic);
                for (r, row) in self.tableau.iter_mut().enumerate() {
                    row.push(if r == i { sigma } else { 0.0 });
                }
                if sigma < 0.0 {
                    for v in self.tableau[i].iter_mut() {
                        *v = -*v;
                    }
                }
                self.basis.push(art);
                any_artificial = true;
            }
        }
        if any_artificial {
            // Columns appended after earlier rows were built: pad and fix up.
            let n_final = self.total_vars();
            for row in self.tableau.iter_mut() {
                row.resize(n_final, 0.0);
            }
            for (t, col) in self.orig_cols[self.artificial_start..].iter().enumerate() {
                let j = self.artificial_start + t;
                for i in 0..self.m {
                    // Artificial columns live in exactly one row; the row
                    // scaling above already put +1 there.
                    if col[i] != 0.0 && self.basis[i] == j {
                        self.tableau[i][j] = 1.0;
                    }
                }
            }
        }
        self.artificial_start = n_total;
        any_artificial
    }

    fn set_cost_phase_one(&mut self) {
        self.cost = vec![0.0; self.total_vars()];
        for j in self.artificial_start..self.total_vars() {
            self.cost[j] = -1.0;
        }
        self.recompute_reduced();
    }

    fn set_cost_phase_two(&mut self) {
        self.cost = vec![0.0; self.total_vars()];
        self.cost[..self.objective.len()].copy_from_slice(&self.objective);
        self.recompute_reduced();
    }

    fn recompute_reduced(&mut self) {
        let n = self.total_vars();
        self.reduced = self.cost.clone();
        for (i, row) in self.tableau.iter().enumerate() {
            let cb = self.cost[self.basis[i]];
            if cb != 0.0 {
                for j in 0..n {
                    self.reduced[j] -= cb * row[j];
                }
            }
        }
        for i in 0..self.m {
            self.reduced[self.basis[i]] = 0.0;
        }
    }

    fn objective_value(&self) -> f64 {
        self.cost.iter().zip(&self.x).map(|(c, v)| c * v).sum()
    }

    /// Runs the simplex loop for the current cost vector. Returns `None` at
    /// optimality or `Some(Unbounded)`.
    fn optimize(&mut self) -> Result<Option<LpStatus>, LpError> {
        let mut bland = false;
        let mut stall: u32 = 0;
        let mut best = self.objective_value();
        for iter in 0..self.cfg.max_iterations {
            if iter > 0 && iter % 64 == 0 {
                self.recompute_reduced();
            }
            let entering = self.choose_entering(bland);
            let Some((q, direction)) = entering else {
                return Ok(None);
            };
            match self.step(q, direction, bland) {
                StepOutcome::Unbounded => return Ok(Some(LpStatus::Unbounded)),
                StepOutcome::Moved => {}
            }
            let value = self.objective_value();
            if value > best + 1e-12 {
                best = value;
                stall = 0;
            } else {
                stall += 1;
                if stall >= self.cfg.stall_threshold {
                    bland = true;
                }
            }
        }
        Err(LpError::IterationLimit)
    }

    /// Picks a nonbasic variable whose move improves the objective, together
    /// with its direction (+1 from lower, −1 from upper).
    fn choose_entering(&self, bland: bool) -> Option<(usize, f64)> {
        let tol = self.cfg.pivot_tol;
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.total_vars() {
            if self.state[j] == VarState::Basic || self.lo[j] >= self.hi[j] {
                continue;
            }
            let d = self.reduced[j];
            let dir = match self.state[j] {
                VarState::AtLower if d > tol => 1.0,
                VarState::AtUpper if d < -tol => -1.0,
                // A free variable parked at 0 can move either way.
                VarState::AtLower if self.lo[j].is_infinite() && d < -tol => -1.0,
                _ => continue,
            };
            if bland {
                return Some((j, dir));
            }
            let score = math::abs(d);
            if best.map_or(true, |(_, _, s)| score > s) {
                best = Some((j, dir, score));
            }
        }
        best.map(|(j, dir, _)| (j, dir))
    }

    fn step(&mut self, q: usize, direction: f64, bland: bool) -> StepOutcome {
        let eps = self.cfg.pivot_tol;
        let span = self.hi[q] - self.lo[q];
        let mut t_min = span;
        let mut leave: Option<usize> = None; // row index
        let mut leave_at_lower = true;
        for i in 0..self.m {
            let a = self.tableau[i][q];
            let rate = direction * a;
            let b = self.basis[i];
            if rate > eps {
                let room = self.x[b] - self.lo[b];
                if self.lo[b].is_finite() {
                    let t = (room / rate).max(0.0);
                    if t < t_min - 1e-15 || (leave.is_none() && t <= t_min) {
                        t_min = t;
                        leave = Some(i);
                        leave_at_lower = true;
                    } else if leave.is_some() && math::abs(t - t_min) <= 1e-15 {
                        let cur = leave.unwrap();
                        let better = if bland {
                            self.basis[i] < self.basis[cur]
                        } else {
                            math::abs(self.tableau[i][q]) > math::abs(self.tableau[cur][q])
                        };
                        if better {
                            leave = Some(i);
                            leave_at_lower = true;
                        }
                    }
                }
            } else if rate < -eps {
                let room = self.hi[b] - self.x[b];
                if self.hi[b].is_finite() {
                    let t = (room / -rate).max(0.0);
                    if t < t_min - 1e-15 || (leave.is_none() && t <= t_min) {
                        t_min = t;
                        leave = Some(i);
                        leave_at_lower = false;
                    } else if leave.is_some() && math::abs(t - t_min) <= 1e-15 {
                        let cur = leave.unwrap();
                        let better = if bland {
                            self.basis[i] < self.basis[cur]
                        } else {
                            math::abs(self.tableau[i][q]) > math::abs(self.tableau[cur][q])
                        };
                        if better {
                            leave = Some(i);
                            leave_at_lower = false;
                        }
                    }
                }
            }
        }

        if t_min.is_infinite() {
            return StepOutcome::Unbounded;
        }
        let t = t_min;

        // Update all basic values along the ratio direction.
        for i in 0..self.m {
            let a = self.tableau[i][q];
            if a != 0.0 {
                let b = self.basis[i];
                self.x[b] -= direction * a * t;
            }
        }
        self.x[q] += direction * t;

        match leave {
            None => {
                // Bound flip: the entering variable hits its opposite bound.
                self.state[q] = if direction > 0.0 {
                    VarState::AtUpper
                } else {
                    VarState::AtLower
                };
                self.x[q] = if direction > 0.0 { self.hi[q] } else { self.lo[q] };
            }
            Some(r) => {
                let leaving = self.basis[r];
                self.x[leaving] = if leave_at_lower {
                    self.lo[leaving]
                } else {
                    self.hi[leaving]
                };
                self.state[leaving] = if leave_at_lower {
                    VarState::AtLower
                } else {
                    VarState::AtUpper
                };
                self.state[q] = VarState::Basic;
                self.basis[r] = q;
                self.pivot(r, q);
            }
        }
        StepOutcome::Moved
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let pv = self.tableau[r][q];
        debug_assert!(math::abs(pv) > 0.0);
        let inv = 1.0 / pv;
        for v in self.tableau[r].iter_mut() {
            *v *= inv;
        }
        let pivot_row = self.tableau[r].clone();
        for (i, row) in self.tableau.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let factor = row[q];
            if factor != 0.0 {
                for (v, p) in row.iter_mut().zip(&pivot_row) {
                    *v -= factor * p;
                }
                row[q] = 0.0;
            }
        }
        let dq = self.reduced[q];
        if dq != 0.0 {
            for (v, p) in self.reduced.iter_mut().zip(&pivot_row) {
                *v -= dq * p;
            }
        }
        self.reduced[q] = 0.0;
    }

    /// Recomputes the basic values from the original coefficients, removing
    /// tableau round-off from the reported vertex.
    fn refine(&mut self) {
        let m = self.m;
        if m == 0 {
            return;
        }
        let mut rhs: Vec<f64> = self.rhs.clone();
        for j in 0..self.total_vars() {
            if self.state[j] != VarState::Basic && self.x[j] != 0.0 {
                for i in 0..m {
                    rhs[i] -= self.orig_cols[j][i] * self.x[j];
                }
            }
        }
        let mut mat = vec![vec![0.0; m]; m];
        for (k, &b) in self.basis.iter().enumerate() {
            for i in 0..m {
                mat[i][k] = self.orig_cols[b][i];
            }
        }
        if let Some(solved) = lu_solve(&mut mat, &mut rhs) {
            for (k, &b) in self.basis.iter().enumerate() {
                self.x[b] = solved[k];
            }
        }
    }
}

enum StepOutcome {
    Moved,
    Unbounded,
}

/// Solves `mat · y = rhs` in place by Gaussian elimination with partial
/// pivoting; returns `None` on a (numerically) singular basis.
fn lu_solve(mat: &mut [Vec<f64>], rhs: &mut [f64]) -> Option<Vec<f64>> {
    let n = rhs.len();
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let (mut best_row, mut best_val) = (col, math::abs(mat[perm[col]][col]));
        for r in col + 1..n {
            let v = math::abs(mat[perm[r]][col]);
            if v > best_val {
                best_row = r;
                best_val = v;
            }
        }
        if best_val < 1e-300 {
            return None;
        }
        perm.swap(col, best_row);
        let prow = perm[col];
        let pval = mat[prow][col];
        for r in col + 1..n {
            let row = perm[r];
            let factor = mat[row][col] / pval;
            if factor != 0.0 {
                for c in col..n {
                    mat[row][c] -= factor * mat[prow][c];
                }
                rhs[row] -= factor * rhs[prow];
            }
        }
    }
    let mut y = vec![0.0; n];
    for col in (0..n).rev() {
        let row = perm[col];
        let mut v = rhs[row];
        for c in col + 1..n {
            v -= mat[row][c] * y[c];
        }
        y[col] = v / mat[row][col];
    }
    Some(y)
}
