use serde::{Deserialize, Serialize};

use super::SolverError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

/// A sparse row `Σ coeffs · x (cmp) rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub cmp: Cmp,
    pub rhs: f64,
}

/// `min objective·x` subject to rows and `lower ≤ x ≤ upper`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub constraints: Vec<Constraint>,
    /// Optional column names, used only by the text dump.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub names: Vec<String>,
}

impl LpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_var(&mut self, cost: f64, lower: f64, upper: f64) -> usize {
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.len() - 1
    }

    pub fn add_named_var(&mut self, name: impl Into<String>, cost: f64, lower: f64, upper: f64) -> usize {
        let j = self.add_var(cost, lower, upper);
        if self.names.len() < j {
            self.names.extend((self.names.len()..j).map(|k| format!("x{k}")));
        }
        self.names.push(name.into());
        j
    }

    pub fn add_constraint(&mut self, coeffs: Vec<(usize, f64)>, cmp: Cmp, rhs: f64) {
        self.constraints.push(Constraint { coeffs, cmp, rhs });
    }

    pub fn name(&self, j: usize) -> String {
        self.names.get(j).cloned().unwrap_or_else(|| format!("x{j}"))
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let n = self.num_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(SolverError::Malformed("bound vectors do not match objective".into()));
        }
        for (j, (&l, &u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(SolverError::Malformed(format!("variable {j} has bounds [{l}, {u}]")));
            }
        }
        if let Some(c) = self.objective.iter().find(|c| !c.is_finite()) {
            return Err(SolverError::Malformed(format!("objective coefficient {c}")));
        }
        for (i, row) in self.constraints.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(SolverError::Malformed(format!("row {i} has rhs {}", row.rhs)));
            }
            for &(j, a) in &row.coeffs {
                if j >= n || !a.is_finite() {
                    return Err(SolverError::Malformed(format!("row {i} has entry ({j}, {a})")));
                }
            }
        }
        Ok(())
    }

    /// Largest violation of rows and bounds at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        for row in &self.constraints {
            let act: f64 = row.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
            let viol = match row.cmp {
                Cmp::Le => act - row.rhs,
                Cmp::Ge => row.rhs - act,
                Cmp::Eq => (act - row.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Row duals `∂objective/∂rhs`; nonnegative on `≥` rows of a minimisation.
    pub duals: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn optimal(self) -> Option<LpSolution> {
        match self {
            LpOutcome::Optimal(s) => Some(s),
            _ => None,
        }
    }
}

/// Solves `problem` to a basic optimal solution. Deterministic for a fixed input.
pub fn lp_solve(problem: &LpProblem) -> Result<LpOutcome, SolverError> {
    problem.validate()?;
    let mut tab = Tableau::build(problem);
    tab.solve(problem)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free column resting at zero.
    Free,
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

const PIVOT_TOL: f64 = 1e-9;
const OPT_TOL: f64 = 1e-9;
const MAX_REINVERSIONS: usize = 3;

struct Tableau {
    m: usize,
    n_struct: usize,
    ncols: usize,
    /// `B⁻¹A`, row-major `m × ncols`.
    a: Vec<f64>,
    /// `B⁻¹b`.
    rhs: Vec<f64>,
    /// Row-flipped original system, kept for reinversion.
    orig_a: Vec<f64>,
    orig_b: Vec<f64>,
    basis: Vec<usize>,
    status: Vec<Status>,
    val: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    beta: Vec<f64>,
    artificial_start: usize,
    feas_tol: f64,
}

impl Tableau {
    fn build(p: &LpProblem) -> Self {
        let m = p.constraints.len();
        let n = p.num_vars();
        let mut lo = p.lower.clone();
        let mut hi = p.upper.clone();
        let mut status = Vec::with_capacity(n + 2 * m);
        let mut val = Vec::with_capacity(n + 2 * m);
        for j in 0..n {
            let (s, v) = if lo[j].is_finite() {
                (Status::AtLower, lo[j])
            } else if hi[j].is_finite() {
                (Status::AtUpper, hi[j])
            } else {
                (Status::Free, 0.0)
            };
            status.push(s);
            val.push(v);
        }
        // Slack columns: a·x + s = b.
        let mut residual = vec![0.0; m];
        for (i, row) in p.constraints.iter().enumerate() {
            let act: f64 = row.coeffs.iter().map(|&(j, a)| a * val[j]).sum();
            residual[i] = row.rhs - act;
            let (sl, sh) = match row.cmp {
                Cmp::Le => (0.0, f64::INFINITY),
                Cmp::Ge => (f64::NEG_INFINITY, 0.0),
                Cmp::Eq => (0.0, 0.0),
            };
            lo.push(sl);
            hi.push(sh);
        }
        let max_b = p.constraints.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
        let feas_tol = 1e-9 * (1.0 + max_b);

        let mut needs_art = Vec::new();
        let mut slack_basic = vec![false; m];
        for i in 0..m {
            let (sl, sh) = (lo[n + i], hi[n + i]);
            let r = residual[i];
            if r >= sl - feas_tol && r <= sh + feas_tol {
                slack_basic[i] = true;
                status.push(Status::Basic);
                val.push(0.0);
            } else {
                let at = if r < sl { sl } else { sh };
                status.push(if at == sl { Status::AtLower } else { Status::AtUpper });
                val.push(at);
                needs_art.push(i);
            }
        }
        let artificial_start = n + m;
        let ncols = n + m + needs_art.len();
        for _ in &needs_art {
            lo.push(0.0);
            hi.push(f64::INFINITY);
            status.push(Status::Basic);
            val.push(0.0);
        }

        let mut a = vec![0.0; m * ncols];
        let mut b = vec![0.0; m];
        let mut basis = vec![0; m];
        for (i, row) in p.constraints.iter().enumerate() {
            for &(j, c) in &row.coeffs {
                a[i * ncols + j] += c;
            }
            a[i * ncols + n + i] = 1.0;
            b[i] = row.rhs;
            if slack_basic[i] {
                basis[i] = n + i;
            }
        }
        for (k, &i) in needs_art.iter().enumerate() {
            let col = artificial_start + k;
            let e = residual[i] - val[n + i];
            if e < 0.0 {
                for v in &mut a[i * ncols..(i + 1) * ncols] {
                    *v = -*v;
                }
                b[i] = -b[i];
            }
            a[i * ncols + col] = 1.0;
            basis[i] = col;
        }

        let mut tab = Tableau {
            m,
            n_struct: n,
            ncols,
            orig_a: a.clone(),
            orig_b: b.clone(),
            a,
            rhs: b,
            basis,
            status,
            val,
            lo,
            hi,
            beta: vec![0.0; m],
            artificial_start,
            feas_tol,
        };
        tab.recompute_beta();
        tab
    }

    fn recompute_beta(&mut self) {
        for i in 0..self.m {
            let row = &self.a[i * self.ncols..(i + 1) * self.ncols];
            let mut v = self.rhs[i];
            for j in 0..self.ncols {
                if self.status[j] != Status::Basic && self.val[j] != 0.0 {
                    v -= row[j] * self.val[j];
                }
            }
            self.beta[i] = v;
        }
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let mut d = cost.to_vec();
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.a[i * self.ncols..(i + 1) * self.ncols];
                for (dj, aij) in d.iter_mut().zip(row) {
                    *dj -= cb * aij;
                }
            }
        }
        d
    }

    fn pivot(&mut self, r: usize, q: usize, d: &mut [f64]) {
        let nc = self.ncols;
        let p = self.a[r * nc + q];
        {
            let row = &mut self.a[r * nc..(r + 1) * nc];
            for v in row.iter_mut() {
                *v /= p;
            }
            row[q] = 1.0;
        }
        self.rhs[r] /= p;
        let (pivot_row, pivot_rhs) = (self.a[r * nc..(r + 1) * nc].to_vec(), self.rhs[r]);
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.a[i * nc + q];
            if f != 0.0 {
                let row = &mut self.a[i * nc..(i + 1) * nc];
                for (v, pr) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pr;
                }
                row[q] = 0.0;
                self.rhs[i] -= f * pivot_rhs;
            }
        }
        let dq = d[q];
        if dq != 0.0 {
            for (dj, pr) in d.iter_mut().zip(&pivot_row) {
                *dj -= dq * pr;
            }
            d[q] = 0.0;
        }
    }

    fn run_phase(&mut self, cost: &[f64]) -> Result<PhaseEnd, SolverError> {
        let nc = self.ncols;
        let mut d = self.reduced_costs(cost);
        let opt_tol = OPT_TOL * (1.0 + cost.iter().fold(0.0f64, |a, c| a.max(c.abs())));
        let degenerate_limit = 2 * (self.m + nc);
        let max_iter = 100 * (self.m + nc) + 10_000;
        let mut degenerate_run = 0usize;
        let mut bland = false;

        for iter in 0..max_iter {
            if iter % 64 == 63 {
                self.recompute_beta();
                d = self.reduced_costs(cost);
            }
            // Pricing.
            let mut entering: Option<(usize, f64)> = None;
            let mut best = 0.0;
            for j in 0..nc {
                let st = self.status[j];
                if st == Status::Basic || self.lo[j] == self.hi[j] {
                    continue;
                }
                let dj = d[j];
                let dir = if dj < -opt_tol && matches!(st, Status::AtLower | Status::Free) {
                    1.0
                } else if dj > opt_tol && matches!(st, Status::AtUpper | Status::Free) {
                    -1.0
                } else {
                    continue;
                };
                if bland {
                    entering = Some((j, dir));
                    break;
                }
                if dj.abs() > best {
                    best = dj.abs();
                    entering = Some((j, dir));
                }
            }
            let Some((q, dir)) = entering else {
                return Ok(PhaseEnd::Optimal);
            };

            // Ratio test.
            let mut theta = self.hi[q] - self.lo[q];
            let mut leave: Option<(usize, bool)> = None;
            let mut leave_alpha = 0.0;
            for i in 0..self.m {
                let alpha = self.a[i * nc + q] * dir;
                let b = self.basis[i];
                let (ratio, to_upper) = if alpha > PIVOT_TOL {
                    if !self.lo[b].is_finite() {
                        continue;
                    }
                    (((self.beta[i] - self.lo[b]) / alpha).max(0.0), false)
                } else if alpha < -PIVOT_TOL {
                    if !self.hi[b].is_finite() {
                        continue;
                    }
                    (((self.hi[b] - self.beta[i]) / -alpha).max(0.0), true)
                } else {
                    continue;
                };
                let better = match leave {
                    None => ratio < theta,
                    Some((li, _)) => {
                        if ratio < theta - 1e-12 {
                            true
                        } else if ratio <= theta + 1e-12 {
                            if bland {
                                b < self.basis[li]
                            } else {
                                alpha.abs() > leave_alpha
                            }
                        } else {
                            false
                        }
                    }
                };
                if better {
                    theta = ratio;
                    leave = Some((i, to_upper));
                    leave_alpha = alpha.abs();
                }
            }
            if !theta.is_finite() {
                return Ok(PhaseEnd::Unbounded);
            }

            if theta <= 1e-12 {
                degenerate_run += 1;
                if degenerate_run > degenerate_limit {
                    bland = true;
                }
            } else {
                degenerate_run = 0;
            }

            if theta != 0.0 {
                for i in 0..self.m {
                    let alpha = self.a[i * nc + q] * dir;
                    if alpha != 0.0 {
                        self.beta[i] -= theta * alpha;
                    }
                }
            }
            match leave {
                None => {
                    // Bound flip of the entering column.
                    self.val[q] += dir * theta;
                    self.status[q] = if dir > 0.0 { Status::AtUpper } else { Status::AtLower };
                }
                Some((r, to_upper)) => {
                    let entering_value = self.val[q] + dir * theta;
                    let lv = self.basis[r];
                    if to_upper {
                        self.val[lv] = self.hi[lv];
                        self.status[lv] = Status::AtUpper;
                    } else {
                        self.val[lv] = self.lo[lv];
                        self.status[lv] = Status::AtLower;
                    }
                    self.pivot(r, q, &mut d);
                    self.basis[r] = q;
                    self.status[q] = Status::Basic;
                    self.beta[r] = entering_value;
                }
            }
        }
        Err(SolverError::Numerical(format!("simplex iteration limit reached ({} rows, {} columns)", self.m, nc)))
    }

    /// Rebuilds `B⁻¹A` from the original rows for the current basis.
    fn reinvert(&mut self) -> Result<(), SolverError> {
        let nc = self.ncols;
        self.a.copy_from_slice(&self.orig_a);
        self.rhs.copy_from_slice(&self.orig_b);
        let cols = self.basis.clone();
        let mut row_of = vec![usize::MAX; self.m];
        let mut used = vec![false; self.m];
        let mut dummy = vec![0.0; nc];
        for (k, &col) in cols.iter().enumerate() {
            let mut best = None;
            let mut best_abs = 1e-11;
            for i in 0..self.m {
                if !used[i] && self.a[i * nc + col].abs() > best_abs {
                    best_abs = self.a[i * nc + col].abs();
                    best = Some(i);
                }
            }
            let Some(r) = best else {
                return Err(SolverError::Numerical("singular basis during reinversion".into()));
            };
            used[r] = true;
            row_of[k] = r;
            self.pivot(r, col, &mut dummy);
        }
        for (k, &col) in cols.iter().enumerate() {
            self.basis[row_of[k]] = col;
        }
        self.recompute_beta();
        Ok(())
    }

    fn solve(&mut self, p: &LpProblem) -> Result<LpOutcome, SolverError> {
        let n = self.n_struct;
        let nc = self.ncols;
        if self.artificial_start < nc {
            let mut cost = vec![0.0; nc];
            for c in &mut cost[self.artificial_start..] {
                *c = 1.0;
            }
            match self.run_phase(&cost)? {
                PhaseEnd::Unbounded => return Err(SolverError::Numerical("phase one reported unbounded".into())),
                PhaseEnd::Optimal => {}
            }
            self.recompute_beta();
            let infeas: f64 =
                (0..self.m).filter(|&i| self.basis[i] >= self.artificial_start).map(|i| self.beta[i].max(0.0)).sum();
            if infeas > self.feas_tol * (self.m as f64).max(1.0) {
                return Ok(LpOutcome::Infeasible);
            }
            for j in self.artificial_start..nc {
                self.lo[j] = 0.0;
                self.hi[j] = 0.0;
                if self.status[j] != Status::Basic {
                    self.status[j] = Status::AtLower;
                    self.val[j] = 0.0;
                }
            }
            // Drive zero-valued artificials out of the basis where possible.
            let mut dummy = vec![0.0; nc];
            for r in 0..self.m {
                if self.basis[r] < self.artificial_start {
                    continue;
                }
                let candidate = (0..self.artificial_start)
                    .find(|&j| self.status[j] != Status::Basic && self.a[r * nc + j].abs() > 1e-7);
                if let Some(j) = candidate {
                    let art = self.basis[r];
                    self.status[art] = Status::AtLower;
                    self.val[art] = 0.0;
                    self.pivot(r, j, &mut dummy);
                    self.basis[r] = j;
                    self.status[j] = Status::Basic;
                }
            }
            self.recompute_beta();
        }

        let mut cost = vec![0.0; nc];
        cost[..n].copy_from_slice(&p.objective);
        for attempt in 0..=MAX_REINVERSIONS {
            match self.run_phase(&cost)? {
                PhaseEnd::Unbounded => return Ok(LpOutcome::Unbounded),
                PhaseEnd::Optimal => {}
            }
            self.recompute_beta();
            let x = self.primal();
            let scale = 1.0 + x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if p.max_violation(&x) <= 1e-6 * scale {
                let d = self.reduced_costs(&cost);
                let duals = (0..self.m).map(|i| -d[n + i]).collect();
                let objective = p.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
                return Ok(LpOutcome::Optimal(LpSolution { x, objective, duals }));
            }
            if attempt < MAX_REINVERSIONS {
                self.reinvert()?;
            }
        }
        Err(SolverError::Numerical("solution violates constraints after repeated reinversion".into()))
    }

    fn primal(&self) -> Vec<f64> {
        let mut x: Vec<f64> = self.val[..self.n_struct].to_vec();
        for (i, &b) in self.basis.iter().enumerate() {
            if b < self.n_struct {
                x[b] = self.beta[i];
            }
        }
        // Snap to bounds within tolerance.
        for j in 0..self.n_struct {
            if x[j] < self.lo[j] && x[j] > self.lo[j] - self.feas_tol {
                x[j] = self.lo[j];
            }
            if x[j] > self.hi[j] && x[j] < self.hi[j] + self.feas_tol {
                x[j] = self.hi[j];
            }
        }
        x
    }
}
