use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::lp::{lp_solve, LpOutcome, LpProblem, LpSolution};
use super::SolverError;

/// Denominator floor of the relative gap `(U − L) / max(|U|, ε₀)`.
pub const GAP_DENOMINATOR_FLOOR: f64 = 1e-9;

const INTEGRALITY_TOL: f64 = 1e-6;
const ROUNDING_EVERY: usize = 50;

pub fn relative_gap(upper: f64, lower: f64) -> f64 {
    if !upper.is_finite() {
        return f64::INFINITY;
    }
    ((upper - lower) / upper.abs().max(GAP_DENOMINATOR_FLOOR)).max(0.0)
}

/// An LP plus the subset of its columns restricted to `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilpProblem {
    pub lp: LpProblem,
    pub binaries: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MilpOptions {
    pub rel_gap: f64,
    pub time_limit: Option<Duration>,
    /// Externally known lower bound on the optimum.
    pub floor: Option<f64>,
}

impl Default for MilpOptions {
    fn default() -> Self {
        Self { rel_gap: 1e-6, time_limit: None, floor: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MilpStatus {
    /// Tree exhausted; carries the final gap.
    Optimal(f64),
    GapReached,
    TimeLimit,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpResult {
    pub incumbent: Option<(Vec<f64>, f64)>,
    pub lower_bound: f64,
    pub status: MilpStatus,
    pub node_count: usize,
}

impl MilpResult {
    pub fn objective(&self) -> Option<f64> {
        self.incumbent.as_ref().map(|(_, v)| *v)
    }

    pub fn gap(&self) -> f64 {
        match &self.incumbent {
            Some((_, u)) => relative_gap(*u, self.lower_bound),
            None => f64::INFINITY,
        }
    }
}

/// Anything that solves a [`MilpProblem`] under the [`milp_solve`] contract.
pub trait MilpBackend {
    fn solve(&self, problem: &MilpProblem, options: &MilpOptions) -> Result<MilpResult, SolverError>;
}

/// The built-in branch-and-bound engine.
#[derive(Debug, Clone, Copy, Default)]
pub struct EmbeddedMilp;

impl MilpBackend for EmbeddedMilp {
    fn solve(&self, problem: &MilpProblem, options: &MilpOptions) -> Result<MilpResult, SolverError> {
        milp_solve(problem, options)
    }
}

struct Node {
    bound: f64,
    id: usize,
    fixings: Vec<(usize, f64)>,
    solution: LpSolution,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap: invert so the smallest bound (then oldest id) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then(other.id.cmp(&self.id))
    }
}

struct Search<'a> {
    problem: &'a MilpProblem,
    incumbent: Option<(Vec<f64>, f64)>,
    work: LpProblem,
}

impl<'a> Search<'a> {
    fn solve_with(&mut self, fixings: &[(usize, f64)]) -> Result<LpOutcome, SolverError> {
        self.work.lower.copy_from_slice(&self.problem.lp.lower);
        self.work.upper.copy_from_slice(&self.problem.lp.upper);
        for &(j, v) in fixings {
            self.work.lower[j] = v;
            self.work.upper[j] = v;
        }
        lp_solve(&self.work)
    }

    /// Most fractional binary; ties go to the lowest column index.
    fn branching_column(&self, x: &[f64]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for &j in &self.problem.binaries {
            let frac = (x[j] - x[j].floor()).min(x[j].ceil() - x[j]);
            if frac > INTEGRALITY_TOL && best.is_none_or(|(_, f)| frac > f + 1e-12) {
                best = Some((j, frac));
            }
        }
        best.map(|(j, _)| j)
    }

    fn offer(&mut self, mut x: Vec<f64>, value: f64) {
        if self.incumbent.as_ref().is_none_or(|(_, u)| value < *u - 1e-12) {
            for &j in &self.problem.binaries {
                x[j] = x[j].round();
            }
            self.incumbent = Some((x, value));
        }
    }

    fn try_rounding(&mut self, x: &[f64]) -> Result<(), SolverError> {
        let fix: Vec<(usize, f64)> = self.problem.binaries.iter().map(|&j| (j, x[j].round().clamp(0.0, 1.0))).collect();
        if let LpOutcome::Optimal(s) = self.solve_with(&fix)? {
            self.offer(s.x, s.objective);
        }
        Ok(())
    }
}

/// Best-bound branch-and-bound over `problem.binaries`.
///
/// The time limit is checked between node solves only; the root relaxation
/// is always solved so a zero limit still returns its bound.
pub fn milp_solve(problem: &MilpProblem, options: &MilpOptions) -> Result<MilpResult, SolverError> {
    if !(options.rel_gap > 0.0) {
        return Err(SolverError::Malformed(format!("relative gap {} must be positive", options.rel_gap)));
    }
    if let Some(&j) = problem.binaries.iter().find(|&&j| j >= problem.lp.num_vars()) {
        return Err(SolverError::Malformed(format!("binary column {j} out of range")));
    }
    let start = Instant::now();
    let floor = options.floor.unwrap_or(f64::NEG_INFINITY);
    let mut work = problem.lp.clone();
    for &j in &problem.binaries {
        work.lower[j] = work.lower[j].max(0.0);
        work.upper[j] = work.upper[j].min(1.0);
    }
    // Binary box is part of the base problem from here on.
    let base = MilpProblem { lp: work.clone(), binaries: problem.binaries.clone() };
    let mut search = Search { problem: &base, incumbent: None, work };

    let root = match search.solve_with(&[])? {
        LpOutcome::Infeasible => {
            return Ok(MilpResult {
                incumbent: None,
                lower_bound: f64::INFINITY,
                status: MilpStatus::Infeasible,
                node_count: 1,
            })
        }
        LpOutcome::Unbounded => {
            return Ok(MilpResult {
                incumbent: None,
                lower_bound: f64::NEG_INFINITY,
                status: MilpStatus::Unbounded,
                node_count: 1,
            })
        }
        LpOutcome::Optimal(s) => s,
    };
    let mut node_count = 1usize;
    let mut next_id = 1usize;
    let mut heap = BinaryHeap::new();
    if search.branching_column(&root.x).is_none() {
        search.offer(root.x.clone(), root.objective);
    } else {
        search.try_rounding(&root.x)?;
        heap.push(Node { bound: root.objective, id: 0, fixings: Vec::new(), solution: root.clone() });
    }

    let finish = |search: Search, heap: &BinaryHeap<Node>, status: Option<MilpStatus>, nodes: usize| {
        let open = heap.peek().map_or(f64::INFINITY, |n| n.bound);
        let inc_val = search.incumbent.as_ref().map_or(f64::INFINITY, |(_, u)| *u);
        let lower_bound = open.min(inc_val).max(floor);
        let status = status.unwrap_or_else(|| {
            if heap.is_empty() {
                if search.incumbent.is_some() {
                    MilpStatus::Optimal(relative_gap(inc_val, lower_bound))
                } else {
                    MilpStatus::Infeasible
                }
            } else {
                MilpStatus::GapReached
            }
        });
        MilpResult { incumbent: search.incumbent, lower_bound, status, node_count: nodes }
    };

    loop {
        let open = heap.peek().map_or(f64::INFINITY, |n| n.bound);
        if let Some((_, u)) = &search.incumbent {
            let lb = open.min(*u).max(floor);
            if heap.is_empty() || relative_gap(*u, lb) <= options.rel_gap {
                return Ok(finish(search, &heap, None, node_count));
            }
        } else if heap.is_empty() {
            return Ok(finish(search, &heap, None, node_count));
        }
        if let Some(limit) = options.time_limit {
            if start.elapsed() >= limit {
                return Ok(finish(search, &heap, Some(MilpStatus::TimeLimit), node_count));
            }
        }
        let node = heap.pop().expect("heap checked non-empty");
        if let Some((_, u)) = &search.incumbent {
            if node.bound >= *u - 1e-9 * u.abs().max(1.0) {
                continue;
            }
        }
        let Some(col) = search.branching_column(&node.solution.x) else {
            continue;
        };
        for value in [0.0, 1.0] {
            let mut fixings = node.fixings.clone();
            fixings.push((col, value));
            node_count += 1;
            if let LpOutcome::Optimal(s) = search.solve_with(&fixings)? {
                if search.incumbent.as_ref().is_some_and(|(_, u)| s.objective >= *u - 1e-12) {
                    continue;
                }
                if search.branching_column(&s.x).is_none() {
                    search.offer(s.x.clone(), s.objective);
                    continue;
                }
                heap.push(Node { bound: s.objective, id: next_id, fixings, solution: s });
                next_id += 1;
            }
        }
        if node_count % ROUNDING_EVERY < 2 {
            if let Some(top) = heap.peek() {
                let x = top.solution.x.clone();
                search.try_rounding(&x)?;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::lp::Cmp;

    #[test]
    fn forced_binary() {
        // min t, t ≥ 5(1 − v), v ≤ 0
        let mut lp = LpProblem::new();
        let t = lp.add_var(1.0, f64::NEG_INFINITY, f64::INFINITY);
        let v = lp.add_var(0.0, 0.0, 1.0);
        lp.add_constraint(vec![(t, 1.0), (v, 5.0)], Cmp::Ge, 5.0);
        lp.add_constraint(vec![(v, 1.0)], Cmp::Le, 0.0);
        let r = milp_solve(&MilpProblem { lp, binaries: vec![v] }, &MilpOptions::default()).unwrap();
        let (x, obj) = r.incumbent.unwrap();
        assert!((obj - 5.0).abs() < 1e-9);
        assert_eq!(x[v], 0.0);
        assert!(matches!(r.status, MilpStatus::Optimal(g) if g <= 1e-12));
    }

    #[test]
    fn knapsack_matches_enumeration() {
        let values = [10.0, 13.0, 7.0, 8.0, 4.0];
        let weights = [5.0, 6.0, 4.0, 3.0, 2.0];
        let cap = 10.0;
        let mut lp = LpProblem::new();
        let cols: Vec<usize> = values.iter().map(|v| lp.add_var(-v, 0.0, 1.0)).collect();
        lp.add_constraint(cols.iter().zip(&weights).map(|(&j, &w)| (j, w)).collect(), Cmp::Le, cap);
        let r = milp_solve(&MilpProblem { lp, binaries: cols }, &MilpOptions::default()).unwrap();
        let mut best: f64 = 0.0;
        for mask in 0u32..32 {
            let (mut v, mut w) = (0.0, 0.0);
            for k in 0..5 {
                if mask >> k & 1 == 1 {
                    v += values[k];
                    w += weights[k];
                }
            }
            if w <= cap {
                best = best.max(v);
            }
        }
        assert!((r.objective().unwrap() + best).abs() < 1e-9);
    }

    #[test]
    fn zero_time_limit_returns_root_bound() {
        let mut lp = LpProblem::new();
        let t = lp.add_var(1.0, f64::NEG_INFINITY, f64::INFINITY);
        let vs: Vec<usize> = (0..3).map(|_| lp.add_var(0.0, 0.0, 1.0)).collect();
        for (k, &v) in vs.iter().enumerate() {
            lp.add_constraint(vec![(t, 1.0), (v, 10.0)], Cmp::Ge, 10.0 + k as f64);
        }
        lp.add_constraint(vs.iter().map(|&v| (v, 1.0)).collect(), Cmp::Le, 1.5);
        let root = lp_solve(&lp).unwrap().optimal().unwrap().objective;
        let opts = MilpOptions { rel_gap: 1e-6, time_limit: Some(Duration::ZERO), floor: None };
        let r = milp_solve(&MilpProblem { lp: lp.clone(), binaries: vs.clone() }, &opts).unwrap();
        assert_eq!(r.status, MilpStatus::TimeLimit);
        assert!((r.lower_bound - root).abs() < 1e-9);
        let opts = MilpOptions { floor: Some(root + 1.0), ..opts };
        let r = milp_solve(&MilpProblem { lp, binaries: vs }, &opts).unwrap();
        assert!((r.lower_bound - (root + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn infeasible_root() {
        let mut lp = LpProblem::new();
        let v = lp.add_var(1.0, 0.0, 1.0);
        lp.add_constraint(vec![(v, 1.0)], Cmp::Ge, 2.0);
        let r = milp_solve(&MilpProblem { lp, binaries: vec![v] }, &MilpOptions::default()).unwrap();
        assert_eq!(r.status, MilpStatus::Infeasible);
        assert!(r.incumbent.is_none());
    }

    #[test]
    fn integer_infeasible_after_branching() {
        // 0.4 ≤ v ≤ 0.6 has LP solutions but no binary one.
        let mut lp = LpProblem::new();
        let v = lp.add_var(1.0, 0.0, 1.0);
        lp.add_constraint(vec![(v, 1.0)], Cmp::Ge, 0.4);
        lp.add_constraint(vec![(v, 1.0)], Cmp::Le, 0.6);
        let r = milp_solve(&MilpProblem { lp, binaries: vec![v] }, &MilpOptions::default()).unwrap();
        assert_eq!(r.status, MilpStatus::Infeasible);
    }

    #[test]
    fn nonpositive_gap_rejected() {
        let mut lp = LpProblem::new();
        lp.add_var(1.0, 0.0, 1.0);
        let p = MilpProblem { lp, binaries: vec![0] };
        assert!(milp_solve(&p, &MilpOptions { rel_gap: 0.0, ..Default::default() }).is_err());
    }
}
