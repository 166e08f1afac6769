//! Single-server appointment scheduling.
//!
//! `n` appointments arrive in a fixed order; slot `i` is allotted `x_i`
//! minutes with `Σ x_i = T_h`. For realised durations `s` the second-stage
//! cost is the weighted idle, waiting and overtime time, which the recursion
//! in [`cost_recursion`] evaluates exactly. The extreme points of the dual
//! feasible set are in bijection with interval partitions of `{1, …, n+1}`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::weighted_quantile;
use crate::solver::{lp_solve, Cmp, LpOutcome, LpProblem};
use crate::twostage::{DualVertex, Matrix, ScenarioSet, TwoStageLP};

/// Feasibility tolerance for dual vertices.
pub const DUAL_FEAS_TOL: f64 = 1e-9;
/// Strong-duality tolerance between the recursion and an extracted vertex.
pub const STRONG_DUALITY_TOL: f64 = 1e-6;
/// Largest `n` for which the `2^n` partitions are enumerated.
pub const MAX_ENUMERATION_N: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspInstance {
    pub n: usize,
    /// Idle cost per minute after each slot.
    pub c_u: Vec<f64>,
    /// Waiting cost per minute of each appointment; entry 0 multiplies `w₁ ≡ 0`.
    pub c_w: Vec<f64>,
    /// Overtime cost per minute.
    pub c_o: f64,
    #[serde(rename = "T_h")]
    pub horizon: f64,
}

impl AspInstance {
    pub fn new(c_u: Vec<f64>, c_w: Vec<f64>, c_o: f64, horizon: f64) -> Result<Self> {
        let inst = Self { n: c_u.len(), c_u, c_w, c_o, horizon };
        inst.validate()?;
        Ok(inst)
    }

    /// Uniform costs in the 0.5 : 1 : 10 idle/wait/overtime ratio.
    pub fn with_standard_costs(n: usize, horizon: f64) -> Result<Self> {
        Self::new(vec![0.5; n], vec![1.0; n], 10.0, horizon)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("instance has no appointments".into()));
        }
        if self.c_u.len() != self.n || self.c_w.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "n = {} but |c_u| = {}, |c_w| = {}",
                self.n,
                self.c_u.len(),
                self.c_w.len()
            )));
        }
        let all = self.c_u.iter().chain(&self.c_w).chain(std::iter::once(&self.c_o));
        if let Some(c) = all.clone().find(|c| !(**c >= 0.0) || !c.is_finite()) {
            return Err(Error::InvalidArgument(format!("cost {c} must be finite and nonnegative")));
        }
        for i in 1..self.n {
            if self.c_u[i] - self.c_u[i - 1] > self.c_w[i] + 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "c_u[{}] - c_u[{}] exceeds c_w[{}]; the recursion is no longer optimal",
                    i + 1,
                    i,
                    i + 1
                )));
            }
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("horizon {} must be positive", self.horizon)));
        }
        Ok(())
    }

    /// Multiplies every cost by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            n: self.n,
            c_u: self.c_u.iter().map(|c| c * factor).collect(),
            c_w: self.c_w.iter().map(|c| c * factor).collect(),
            c_o: self.c_o * factor,
            horizon: self.horizon,
        }
    }

    /// The recursion as a generic two-stage LP `min q·y, W y ≥ h − T x − C s`.
    ///
    /// Recourse columns are `w₂ … w_{n+1}` followed by `u₁ … u_n`; every
    /// balance equation is written as a `≥` pair so that `h − T x − C s`
    /// stacks `(s − x, x − s)`.
    pub fn two_stage(&self) -> TwoStageLP {
        let n = self.n;
        let m = 2 * n;
        let rows = 2 * n;
        let mut q = Vec::with_capacity(m);
        q.extend_from_slice(&self.c_w[1..]);
        q.push(self.c_o);
        q.extend_from_slice(&self.c_u);
        let mut w0 = Matrix::zeros(n, m);
        for i in 0..n {
            // w_{i+1} − w_i − u_i = s_i − x_i with w_1 ≡ 0.
            w0.set(i, i, 1.0);
            if i > 0 {
                w0.set(i, i - 1, -1.0);
            }
            w0.set(i, n + i, -1.0);
        }
        let mut w = Matrix::zeros(rows, m);
        let mut t = Matrix::zeros(rows, n);
        let mut c = Matrix::zeros(rows, n);
        for i in 0..n {
            for j in 0..m {
                w.set(i, j, w0.get(i, j));
                w.set(n + i, j, -w0.get(i, j));
            }
            t.set(i, i, 1.0);
            t.set(n + i, i, -1.0);
            c.set(i, i, -1.0);
            c.set(n + i, i, 1.0);
        }
        let first_stage = crate::twostage::FirstStage {
            constraints: vec![crate::solver::Constraint {
                coeffs: (0..n).map(|j| (j, 1.0)).collect(),
                cmp: Cmp::Eq,
                rhs: self.horizon,
            }],
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
        };
        TwoStageLP { q, w, t, c, h: vec![0.0; rows], first_stage }
    }

    /// Direct LP form of the recourse problem for one `(x, s)`.
    pub fn recourse_lp(&self, x: &[f64], s: &[f64]) -> LpProblem {
        let n = self.n;
        let mut lp = LpProblem::new();
        // w_2 … w_{n+1}
        let w: Vec<usize> = (1..=n)
            .map(|i| {
                let cost = if i < n { self.c_w[i] } else { self.c_o };
                lp.add_named_var(format!("w{}", i + 1), cost, 0.0, f64::INFINITY)
            })
            .collect();
        let u: Vec<usize> =
            (0..n).map(|i| lp.add_named_var(format!("u{}", i + 1), self.c_u[i], 0.0, f64::INFINITY)).collect();
        for i in 0..n {
            let mut coeffs = vec![(w[i], 1.0), (u[i], -1.0)];
            if i > 0 {
                coeffs.push((w[i - 1], -1.0));
            }
            lp.add_constraint(coeffs, Cmp::Eq, s[i] - x[i]);
        }
        lp
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub x: Vec<f64>,
}

impl Schedule {
    pub fn new(x: Vec<f64>, instance: &AspInstance) -> Result<Self> {
        let s = Self { x };
        s.validate(instance)?;
        Ok(s)
    }

    pub fn validate(&self, instance: &AspInstance) -> Result<()> {
        if self.x.len() != instance.n {
            return Err(Error::DimensionMismatch(format!(
                "schedule has {} slots, instance has {}",
                self.x.len(),
                instance.n
            )));
        }
        if let Some(v) = self.x.iter().find(|v| !(**v >= -1e-9)) {
            return Err(Error::InvalidArgument(format!("negative allocation {v}")));
        }
        let total: f64 = self.x.iter().sum();
        if (total - instance.horizon).abs() > 1e-9 * instance.horizon.max(1.0) {
            return Err(Error::InvalidArgument(format!("allocations sum to {total}, horizon is {}", instance.horizon)));
        }
        Ok(())
    }

    /// Equal split of the horizon.
    pub fn uniform(instance: &AspInstance) -> Self {
        Self { x: vec![instance.horizon / instance.n as f64; instance.n] }
    }

    /// Clips tiny negatives and rescales onto the horizon exactly.
    pub fn projected(mut x: Vec<f64>, instance: &AspInstance) -> Self {
        for v in &mut x {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let total: f64 = x.iter().sum();
        if total > 0.0 {
            let f = instance.horizon / total;
            for v in &mut x {
                *v *= f;
            }
        } else {
            return Self::uniform(instance);
        }
        Self { x }
    }
}

/// Waiting, idle and overtime amounts together with their cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Recourse {
    pub cost: f64,
    /// `w₁ … w_{n+1}`; the last entry is overtime.
    pub w: Vec<f64>,
    /// `u₁ … u_n`.
    pub u: Vec<f64>,
}

fn check_lengths(instance: &AspInstance, x: &[f64], s: &[f64]) -> Result<()> {
    if x.len() != instance.n || s.len() != instance.n {
        return Err(Error::DimensionMismatch(format!("n = {} but |x| = {}, |s| = {}", instance.n, x.len(), s.len())));
    }
    if let Some(v) = s.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::InvalidArgument(format!("negative duration {v}")));
    }
    Ok(())
}

/// Closed-form recourse: `w_{i+1} = (s_i + w_i − x_i)⁺`, `u_i = (x_i − s_i − w_i)⁺`.
pub fn cost_recursion(instance: &AspInstance, x: &[f64], s: &[f64]) -> Result<Recourse> {
    check_lengths(instance, x, s)?;
    let n = instance.n;
    let mut w = vec![0.0; n + 1];
    let mut u = vec![0.0; n];
    let mut cost = 0.0;
    for i in 0..n {
        let d = s[i] + w[i] - x[i];
        w[i + 1] = d.max(0.0);
        u[i] = (-d).max(0.0);
        cost += instance.c_u[i] * u[i];
        cost += if i + 1 < n { instance.c_w[i + 1] * w[i + 1] } else { instance.c_o * w[n] };
    }
    Ok(Recourse { cost, w, u })
}

/// Allocation-free variant of [`cost_recursion`] for hot loops; inputs are
/// assumed validated.
#[inline]
pub fn recourse_cost(instance: &AspInstance, x: &[f64], s: &[f64]) -> f64 {
    let n = instance.n;
    let mut wait = 0.0;
    let mut cost = 0.0;
    for i in 0..n {
        let d = s[i] + wait - x[i];
        if d > 0.0 {
            wait = d;
            cost += if i + 1 < n { instance.c_w[i + 1] * d } else { instance.c_o * d };
        } else {
            wait = 0.0;
            cost -= instance.c_u[i] * d;
        }
    }
    cost
}

/// An interval partition of `{1, …, n+1}`, stored as a bit mask of breaks:
/// bit `k` is set when `k+1` and `k+2` lie in different blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IntervalPartition {
    n: usize,
    breaks: u64,
}

impl IntervalPartition {
    pub fn from_breaks(n: usize, breaks: u64) -> Result<Self> {
        if n == 0 || n > 63 {
            return Err(Error::InvalidArgument(format!("partition size n = {n} out of range")));
        }
        if breaks >> n != 0 {
            return Err(Error::InvalidArgument(format!("break mask {breaks:#b} has bits beyond n = {n}")));
        }
        Ok(Self { n, breaks })
    }

    /// Builds from 1-based inclusive blocks, validating that they tile `{1, …, n+1}`.
    pub fn from_blocks(n: usize, blocks: &[(usize, usize)]) -> Result<Self> {
        let mut next = 1;
        let mut breaks = 0u64;
        for (k, &(a, b)) in blocks.iter().enumerate() {
            if a != next || b < a || b > n + 1 {
                return Err(Error::InvalidArgument(format!("block {k} = [{a}, {b}] does not continue at {next}")));
            }
            if b <= n {
                breaks |= 1 << (b - 1);
            }
            next = b + 1;
        }
        if next != n + 2 {
            return Err(Error::InvalidArgument(format!("blocks stop at {} instead of {}", next - 1, n + 1)));
        }
        Self::from_breaks(n, breaks)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn breaks(&self) -> u64 {
        self.breaks
    }

    /// True when `i` and `i+1` share a block (1-based, `i ≤ n`).
    pub fn joined(&self, i: usize) -> bool {
        self.breaks >> (i - 1) & 1 == 0
    }

    /// 1-based inclusive blocks in order.
    pub fn blocks(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut start = 1;
        for i in 1..=self.n {
            if !self.joined(i) {
                out.push((start, i));
                start = i + 1;
            }
        }
        out.push((start, self.n + 1));
        out
    }
}

impl fmt::Display for IntervalPartition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (a, b) in self.blocks() {
            let items: Vec<String> = (a..=b).map(|i| i.to_string()).collect();
            write!(f, "{{{}}}", items.join(","))?;
        }
        Ok(())
    }
}

/// An extreme point `y` of the recourse dual together with its partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspDualVertex {
    pub y: Vec<f64>,
    pub partition: IntervalPartition,
}

impl AspDualVertex {
    /// `Σ (s_i − x_i) y_i`.
    pub fn value(&self, x: &[f64], s: &[f64]) -> f64 {
        dual_objective(&self.y, x, s)
    }
}

pub fn dual_objective(y: &[f64], x: &[f64], s: &[f64]) -> f64 {
    y.iter().zip(x).zip(s).map(|((y, x), s)| (s - x) * y).sum()
}

/// Checks `−c_u_n ≤ y_n ≤ c_o` and `−c_u_{i−1} ≤ y_{i−1} ≤ y_i + c_w_i`.
pub fn is_dual_feasible(instance: &AspInstance, y: &[f64], tol: f64) -> bool {
    let n = instance.n;
    if y.len() != n {
        return false;
    }
    if y[n - 1] < -instance.c_u[n - 1] - tol || y[n - 1] > instance.c_o + tol {
        return false;
    }
    (1..n).all(|i| y[i - 1] >= -instance.c_u[i - 1] - tol && y[i - 1] <= y[i] + instance.c_w[i] + tol)
}

pub fn vertex_from_partition(instance: &AspInstance, partition: &IntervalPartition) -> Result<AspDualVertex> {
    let n = instance.n;
    if partition.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "partition of {{1..{}}} for an instance with n = {n}",
            partition.n() + 1
        )));
    }
    let mut y = vec![0.0; n];
    for (k, j) in partition.blocks() {
        // Walk the block backwards from its last slot inside {1..n}.
        let last = j.min(n);
        if k > last {
            continue;
        }
        let mut v = if j <= n { -instance.c_u[j - 1] } else { instance.c_o };
        y[last - 1] = v;
        for i in (k..last).rev() {
            v += instance.c_w[i]; // c_w_{i+1}, 0-based index i
            y[i - 1] = v;
        }
    }
    Ok(AspDualVertex { y, partition: *partition })
}

/// All `2^n` interval partitions of `{1, …, n+1}`, ordered by break mask.
pub fn enumerate_partitions(n: usize) -> Result<Vec<IntervalPartition>> {
    if n == 0 || n > MAX_ENUMERATION_N {
        return Err(Error::InvalidArgument(format!("enumeration supports 1 ≤ n ≤ {MAX_ENUMERATION_N}, got {n}")));
    }
    (0..1u64 << n).map(|b| IntervalPartition::from_breaks(n, b)).collect()
}

/// Reads the busy-period structure of the recursion at `(x, s)` off as a
/// partition and returns the matching dual vertex.
///
/// `i` and `i+1` share a block iff `w_{i+1} > 0`. If the strong-duality check
/// fails, boundaries where both `w` and `u` vanish are merged and the check is
/// repeated; a second failure is reported as [`Error::DegenerateDual`].
pub fn optimal_dual(instance: &AspInstance, x: &[f64], s: &[f64]) -> Result<(IntervalPartition, AspDualVertex)> {
    let rec = cost_recursion(instance, x, s)?;
    let n = instance.n;
    let mut breaks = 0u64;
    let mut degenerate = 0u64;
    for i in 1..=n {
        if !(rec.w[i] > 0.0) {
            breaks |= 1 << (i - 1);
            if !(rec.u[i - 1] > 0.0) {
                degenerate |= 1 << (i - 1);
            }
        }
    }
    let mut last = f64::NAN;
    for mask in [breaks, breaks & !degenerate] {
        let p = IntervalPartition::from_breaks(n, mask)?;
        let v = vertex_from_partition(instance, &p)?;
        last = v.value(x, s);
        if (last - rec.cost).abs() <= STRONG_DUALITY_TOL {
            return Ok((p, v));
        }
        if degenerate == 0 {
            break;
        }
    }
    Err(Error::DegenerateDual { primal: rec.cost, dual: last })
}

/// Solves the dual LP directly and maps its basic optimum back to a partition.
pub fn optimal_dual_lp(instance: &AspInstance, x: &[f64], s: &[f64]) -> Result<(IntervalPartition, AspDualVertex)> {
    check_lengths(instance, x, s)?;
    let n = instance.n;
    let mut lp = LpProblem::new();
    let y: Vec<usize> = (0..n)
        .map(|i| lp.add_named_var(format!("y{}", i + 1), -(s[i] - x[i]), -instance.c_u[i], f64::INFINITY))
        .collect();
    lp.upper[y[n - 1]] = instance.c_o;
    for i in 1..n {
        lp.add_constraint(vec![(y[i - 1], 1.0), (y[i], -1.0)], Cmp::Le, instance.c_w[i]);
    }
    let sol = match lp_solve(&lp)? {
        LpOutcome::Optimal(sol) => sol,
        other => return Err(Error::Model(format!("recourse dual LP ended {other:?}"))),
    };
    let yv = sol.x;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-7 * (1.0 + a.abs().max(b.abs()));
    let mut breaks = 0u64;
    for i in 1..n {
        if !close(yv[i - 1], yv[i] + instance.c_w[i]) {
            breaks |= 1 << (i - 1);
        }
    }
    if !close(yv[n - 1], instance.c_o) {
        breaks |= 1 << (n - 1);
    }
    let p = IntervalPartition::from_breaks(n, breaks)?;
    let v = vertex_from_partition(instance, &p)?;
    let primal = recourse_cost(instance, x, s);
    if (v.value(x, s) - primal).abs() <= STRONG_DUALITY_TOL {
        Ok((p, v))
    } else {
        Err(Error::DegenerateDual { primal, dual: v.value(x, s) })
    }
}

/// [`optimal_dual`] with the LP fallback.
pub fn optimal_dual_or_lp(instance: &AspInstance, x: &[f64], s: &[f64]) -> Result<(IntervalPartition, AspDualVertex)> {
    match optimal_dual(instance, x, s) {
        Err(Error::DegenerateDual { .. }) => optimal_dual_lp(instance, x, s),
        other => other,
    }
}

/// The ASP dual vertex as a multiplier on the stacked `≥` rows of
/// [`AspInstance::two_stage`]: `π = (y⁺, y⁻)`.
pub fn generic_vertex(instance: &AspInstance, vertex: &AspDualVertex) -> Result<DualVertex> {
    let mut pi: Vec<f64> = vertex.y.iter().map(|y| y.max(0.0)).collect();
    pi.extend(vertex.y.iter().map(|y| (-y).max(0.0)));
    DualVertex::new(&instance.two_stage(), pi)
}

/// Recourse cost of every scenario at `x`, in scenario order.
pub fn scenario_costs(instance: &AspInstance, x: &[f64], scenarios: &ScenarioSet) -> Vec<f64> {
    crate::par::map(scenarios.scenarios(), |s| recourse_cost(instance, x, s))
}

/// `Q̂_τ(x)` together with the index of the scenario attaining it.
pub fn quantile_objective(
    instance: &AspInstance,
    x: &[f64],
    scenarios: &ScenarioSet,
    tau: f64,
) -> Result<(f64, usize)> {
    if scenarios.dim() != instance.n || x.len() != instance.n {
        return Err(Error::DimensionMismatch(format!(
            "instance n = {}, scenarios have {} slots, schedule has {}",
            instance.n,
            scenarios.dim(),
            x.len()
        )));
    }
    let costs = scenario_costs(instance, x, scenarios);
    weighted_quantile(&costs, scenarios.weights(), tau)
}

/// `max ‖y‖₂` over all dual vertices: a Lipschitz constant of every
/// `x ↦ f(x, s)` and hence of the weighted quantile of those costs.
pub fn lipschitz_constant(instance: &AspInstance) -> Result<f64> {
    let mut best: f64 = 0.0;
    for p in enumerate_partitions(instance.n)? {
        let v = vertex_from_partition(instance, &p)?;
        best = best.max(v.y.iter().map(|y| y * y).sum::<f64>().sqrt());
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_slot() -> AspInstance {
        AspInstance::new(vec![0.5, 0.5], vec![1.0, 1.0], 10.0, 2.0).unwrap()
    }

    #[test]
    fn recursion_examples() {
        let r = cost_recursion(&two_slot(), &[1.0, 1.0], &[2.0, 0.0]).unwrap();
        assert_eq!(r.w, vec![0.0, 1.0, 0.0]);
        assert_eq!(r.u, vec![0.0, 0.0]);
        assert_eq!(r.cost, 1.0);
        let r = cost_recursion(&two_slot(), &[1.3, 0.7], &[1.3, 0.7]).unwrap();
        assert_eq!(r.cost, 0.0);
        let one = AspInstance::new(vec![0.5], vec![1.0], 10.0, 4.0).unwrap();
        let r = cost_recursion(&one, &[4.0], &[6.0]).unwrap();
        assert_eq!(r.w[1], 2.0);
        assert_eq!(r.cost, 20.0);
        assert_eq!(recourse_cost(&one, &[4.0], &[6.0]), 20.0);
    }

    #[test]
    fn recursion_rejects_bad_input() {
        assert!(cost_recursion(&two_slot(), &[1.0, 1.0], &[-1.0, 0.0]).is_err());
        assert!(cost_recursion(&two_slot(), &[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn instance_validation() {
        assert!(AspInstance::new(vec![0.0, 2.0], vec![1.0, 1.0], 10.0, 5.0).is_err());
        assert!(AspInstance::new(vec![0.5], vec![1.0], 10.0, 0.0).is_err());
        assert!(AspInstance::new(vec![0.5, 0.5], vec![1.0], 10.0, 1.0).is_err());
        assert!(AspInstance::new(vec![-0.5], vec![1.0], 10.0, 1.0).is_err());
    }

    #[test]
    fn vertex_examples() {
        let inst = two_slot();
        let all = IntervalPartition::from_blocks(2, &[(1, 3)]).unwrap();
        assert_eq!(vertex_from_partition(&inst, &all).unwrap().y, vec![11.0, 10.0]);
        let p = IntervalPartition::from_blocks(2, &[(1, 2), (3, 3)]).unwrap();
        assert_eq!(vertex_from_partition(&inst, &p).unwrap().y, vec![0.5, -0.5]);
        let one = AspInstance::new(vec![0.75], vec![1.0], 10.0, 4.0).unwrap();
        let p = IntervalPartition::from_blocks(1, &[(1, 1), (2, 2)]).unwrap();
        assert_eq!(vertex_from_partition(&one, &p).unwrap().y, vec![-0.75]);
    }

    #[test]
    fn partition_enumeration() {
        let ps = enumerate_partitions(2).unwrap();
        let names: Vec<String> = ps.iter().map(|p| p.to_string()).collect();
        assert_eq!(names, ["{1,2,3}", "{1}{2,3}", "{1,2}{3}", "{1}{2}{3}"]);
        assert_eq!(enumerate_partitions(1).unwrap().len(), 2);
        assert_eq!(enumerate_partitions(6).unwrap().len(), 64);
        assert!(enumerate_partitions(13).is_err());
        assert!(IntervalPartition::from_blocks(2, &[(1, 1), (3, 3)]).is_err());
        assert!(IntervalPartition::from_blocks(2, &[(1, 2)]).is_err());
    }

    #[test]
    fn dual_extraction_example() {
        let inst = two_slot();
        let (p, v) = optimal_dual(&inst, &[1.0, 1.0], &[2.0, 0.0]).unwrap();
        assert_eq!(p.to_string(), "{1,2}{3}");
        assert_eq!(v.y, vec![0.5, -0.5]);
        assert!((v.value(&[1.0, 1.0], &[2.0, 0.0]) - 1.0).abs() < 1e-12);
        let (p, v) = optimal_dual(&inst, &[1.3, 0.7], &[1.3, 0.7]).unwrap();
        assert_eq!(p.to_string(), "{1}{2}{3}");
        assert_eq!(v.value(&[1.3, 0.7], &[1.3, 0.7]), 0.0);
    }

    #[test]
    fn lp_fallback_agrees() {
        let inst = two_slot();
        let x = [0.4, 1.6];
        let s = [1.0, 0.2];
        let (_, v) = optimal_dual_lp(&inst, &x, &s).unwrap();
        assert!((v.value(&x, &s) - recourse_cost(&inst, &x, &s)).abs() < 1e-9);
    }

    #[test]
    fn lipschitz_examples() {
        let one = AspInstance::new(vec![0.5], vec![1.0], 10.0, 4.0).unwrap();
        assert_eq!(lipschitz_constant(&one).unwrap(), 10.0);
        let inst = two_slot();
        assert!((lipschitz_constant(&inst).unwrap() - (221.0f64).sqrt()).abs() < 1e-12);
        let l = lipschitz_constant(&inst).unwrap();
        assert!((lipschitz_constant(&inst.scaled(3.0)).unwrap() - 3.0 * l).abs() < 1e-9);
    }

    #[test]
    fn every_vertex_is_dual_feasible() {
        let inst = AspInstance::new(vec![0.2, 0.9, 1.4, 1.5], vec![3.0, 0.8, 0.6, 0.3], 7.0, 10.0).unwrap();
        for p in enumerate_partitions(4).unwrap() {
            let v = vertex_from_partition(&inst, &p).unwrap();
            assert!(is_dual_feasible(&inst, &v.y, DUAL_FEAS_TOL), "{p}: {:?}", v.y);
        }
    }
}
