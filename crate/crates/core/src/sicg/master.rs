//! Master problems over a pool of ASP dual vertices.
//!
//! For a pool `{y_r}` the master minimises `t` over `x ∈ X` such that the
//! scenarios with `t ≥ g_i(x) = max_r y_r·(s^i − x)` carry weight at least τ,
//! with `t ≥ L̄`. Two engines solve it:
//!
//! * [`MasterKind::Structured`] branches directly on keeping or dropping
//!   scenarios. A node fixes a kept set `K` and a dropped set `D`; its bound is
//!   the LP `min { t : t ≥ g_i(x), i ∈ K, x ∈ X, t ≥ L̄ }`, solved with lazily
//!   generated cuts. Dropping needs no big-M, so the bounds are those of the
//!   big-M model with a perfectly tight `M`.
//! * [`MasterKind::BigM`] builds the generic big-M MILP and hands it to the
//!   embedded branch-and-bound.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::asp::{generic_vertex, AspDualVertex, AspInstance};
use crate::error::{Error, Result};
use crate::estimator::weighted_quantile;
use crate::solver::{lp_solve, Cmp, LpOutcome, LpProblem, MilpOptions, MilpStatus, SolverError};
use crate::twostage::{build_master, ScenarioSet};

const COVER_TOL: f64 = 1e-12;
const CUTS_PER_ROUND: usize = 12;
const MAX_CUT_ROUNDS: usize = 500;
const DESCENT_EVERY: usize = 25;
const MAX_OPEN_NODES: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MasterKind {
    #[default]
    Structured,
    #[serde(rename = "bigm")]
    BigM,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MasterStatus {
    Optimal,
    GapReached,
    /// Stopped on the time or node limit.
    Limit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MasterOutcome {
    pub x: Vec<f64>,
    /// Master objective `t` of the incumbent.
    pub t: f64,
    pub lower_bound: f64,
    /// `v_i` of the incumbent.
    pub kept: Vec<bool>,
    /// `max_r y_r·(s^i − x)` at the incumbent, for every scenario; empty when the pool is empty.
    pub pool_costs: Vec<f64>,
    pub status: MasterStatus,
    pub nodes: usize,
}

pub struct MasterInput<'a> {
    pub instance: &'a AspInstance,
    pub scenarios: &'a ScenarioSet,
    pub tau: f64,
    pub big_m: f64,
    pub pool: &'a [AspDualVertex],
    pub floor: f64,
    pub rel_gap: f64,
    pub deadline: Option<Instant>,
    /// Feasible schedules to seed the incumbent search.
    pub warm_starts: &'a [Vec<f64>],
}

pub fn solve_master(kind: MasterKind, input: &MasterInput<'_>) -> Result<MasterOutcome> {
    match kind {
        MasterKind::Structured => Structured::new(input).solve(),
        MasterKind::BigM => solve_big_m(input),
    }
}

/// Cut data `a[r][i] = y_r·s^i` for the pool.
struct Cuts<'a> {
    input: &'a MasterInput<'a>,
    n: usize,
    scen: usize,
    a: Vec<f64>,
}

impl<'a> Cuts<'a> {
    fn new(input: &'a MasterInput<'a>) -> Self {
        let scen = input.scenarios.len();
        let mut a = Vec::with_capacity(input.pool.len() * scen);
        for v in input.pool {
            a.extend(input.scenarios.scenarios().iter().map(|s| dot(&v.y, s)));
        }
        Self { input, n: input.instance.n, scen, a }
    }

    fn pool_len(&self) -> usize {
        self.input.pool.len()
    }

    fn yx(&self, x: &[f64]) -> Vec<f64> {
        self.input.pool.iter().map(|v| dot(&v.y, x)).collect()
    }

    /// `(g_i(x), argmax r)` for one scenario.
    #[inline]
    fn g_one(&self, yx: &[f64], i: usize) -> (f64, u32) {
        let mut best = f64::NEG_INFINITY;
        let mut arg = 0;
        for (r, yxr) in yx.iter().enumerate() {
            let v = self.a[r * self.scen + i] - yxr;
            if v > best {
                best = v;
                arg = r as u32;
            }
        }
        (best, arg)
    }

    fn g_all(&self, x: &[f64]) -> Vec<f64> {
        let yx = self.yx(x);
        (0..self.scen).map(|i| self.g_one(&yx, i).0).collect()
    }

    /// Master objective of `x`: `max(L̄, Q_τ(g(x)))`.
    fn value(&self, g: &[f64]) -> Result<f64> {
        let (q, _) = weighted_quantile(g, self.input.scenarios.weights(), self.input.tau)?;
        Ok(q.max(self.input.floor))
    }

    fn lp(&self, rows: &[(u32, u32)]) -> Result<(Vec<f64>, f64)> {
        let n = self.n;
        let mut lp = LpProblem::new();
        for _ in 0..n {
            lp.add_var(0.0, 0.0, f64::INFINITY);
        }
        let t = lp.add_var(1.0, self.input.floor, f64::INFINITY);
        lp.add_constraint((0..n).map(|j| (j, 1.0)).collect(), Cmp::Eq, self.input.instance.horizon);
        for &(r, i) in rows {
            let y = &self.input.pool[r as usize].y;
            let mut coeffs: Vec<(usize, f64)> =
                y.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, v)| (j, *v)).collect();
            coeffs.push((t, 1.0));
            lp.add_constraint(coeffs, Cmp::Ge, self.a[r as usize * self.scen + i as usize]);
        }
        match lp_solve(&lp)? {
            LpOutcome::Optimal(sol) => {
                let tv = sol.x[t];
                let mut x = sol.x;
                x.truncate(n);
                Ok((x, tv))
            }
            other => Err(Error::Solver(SolverError::Numerical(format!("master node LP ended {other:?}")))),
        }
    }

    /// `min t` over `X` with `t ≥ g_i(x)` for `i ∈ kept`, generating cuts lazily.
    /// On return `rows` holds the cuts that are tight at the solution.
    fn solve_kept(&self, kept: &[u32], rows: &mut Vec<(u32, u32)>, fallback_x: &[f64]) -> Result<(Vec<f64>, f64)> {
        if kept.is_empty() || self.pool_len() == 0 {
            rows.clear();
            return Ok((fallback_x.to_vec(), self.input.floor));
        }
        let mut seen: HashSet<(u32, u32)> = rows.iter().copied().collect();
        if rows.is_empty() {
            let yx = self.yx(fallback_x);
            let mut worst: Vec<(f64, u32, u32)> = kept
                .iter()
                .map(|&i| {
                    let (g, r) = self.g_one(&yx, i as usize);
                    (g, i, r)
                })
                .collect();
            worst.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for &(_, i, r) in worst.iter().take(self.n + 1) {
                if seen.insert((r, i)) {
                    rows.push((r, i));
                }
            }
        }
        for _ in 0..MAX_CUT_ROUNDS {
            let (x, t) = self.lp(rows)?;
            let yx = self.yx(&x);
            let tol = 1e-9 * t.abs().max(1.0);
            let mut viol: Vec<(f64, u32, u32)> = Vec::new();
            for &i in kept {
                let (g, r) = self.g_one(&yx, i as usize);
                if g > t + tol {
                    viol.push((g - t, i, r));
                }
            }
            if viol.is_empty() {
                rows.retain(|&(r, i)| {
                    let slack = t + yx[r as usize] - self.a[r as usize * self.scen + i as usize];
                    slack <= 1e-7 * t.abs().max(1.0)
                });
                return Ok((x, t));
            }
            viol.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut added = false;
            for &(_, i, r) in viol.iter().take(CUTS_PER_ROUND) {
                if seen.insert((r, i)) {
                    rows.push((r, i));
                    added = true;
                }
            }
            if !added {
                // Every violated cut is already present: the violation is LP round-off.
                return Ok((x, t));
            }
        }
        Err(Error::Solver(SolverError::Numerical("master cut loop did not settle".into())))
    }

    /// Smallest-weight set of scenarios with the lowest `g` covering τ.
    fn cover_set(&self, g: &[f64]) -> Vec<u32> {
        let w = self.input.scenarios.weights();
        let mut order: Vec<usize> = (0..g.len()).collect();
        order.sort_by(|&a, &b| g[a].total_cmp(&g[b]).then(a.cmp(&b)));
        let mut cum = 0.0;
        let mut out = Vec::new();
        for i in order {
            out.push(i as u32);
            cum += w[i];
            if cum >= self.input.tau - COVER_TOL {
                break;
            }
        }
        out
    }

    /// Alternates between the τ-covering set at `x` and the LP over that
    /// set; each step is non-increasing in the master objective.
    fn descend(&self, x0: &[f64], deadline: Option<Instant>) -> Result<(Vec<f64>, f64)> {
        let mut x = x0.to_vec();
        let mut g = self.g_all(&x);
        let mut val = self.value(&g)?;
        let mut rows = Vec::new();
        for _ in 0..100 {
            if val <= self.input.floor || deadline.is_some_and(|d| Instant::now() >= d) {
                break;
            }
            let keep = self.cover_set(&g);
            let (x1, _) = self.solve_kept(&keep, &mut rows, &x)?;
            let g1 = self.g_all(&x1);
            let v1 = self.value(&g1)?;
            if v1 < val - 1e-9 * val.abs().max(1.0) {
                x = x1;
                g = g1;
                val = v1;
            } else {
                break;
            }
        }
        Ok((x, val))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

#[derive(Clone)]
struct BitSet(Vec<u64>);

impl BitSet {
    fn new(n: usize) -> Self {
        Self(vec![0; n.div_ceil(64)])
    }
    fn get(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }
    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }
}

struct Node {
    bound: f64,
    id: usize,
    kept: Vec<u32>,
    fixed: BitSet,
    drop_w: f64,
    x: Vec<f64>,
    t: f64,
    rows: Vec<(u32, u32)>,
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
    // Max-heap: smallest bound first, newest node first among ties.
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then(self.id.cmp(&other.id))
    }
}

struct Structured<'a> {
    input: &'a MasterInput<'a>,
}

impl<'a> Structured<'a> {
    fn new(input: &'a MasterInput<'a>) -> Self {
        Self { input }
    }

    fn solve(&self) -> Result<MasterOutcome> {
        let inp = self.input;
        let n = inp.instance.n;
        let scen = inp.scenarios.len();
        let cuts = Cuts::new(inp);
        let weights = inp.scenarios.weights();
        let budget = 1.0 - inp.tau + COVER_TOL;
        let expired = || inp.deadline.is_some_and(|d| Instant::now() >= d);

        let mut starts: Vec<Vec<f64>> = inp.warm_starts.iter().filter(|x| x.len() == n).cloned().collect();
        if starts.is_empty() {
            starts.push(vec![inp.instance.horizon / n as f64; n]);
        }

        // Incumbent from descent at every warm start.
        let mut best_x = starts[0].clone();
        let mut best = f64::INFINITY;
        for s in &starts {
            let (x, v) = if cuts.pool_len() == 0 { (s.clone(), inp.floor) } else { cuts.descend(s, inp.deadline)? };
            if v < best {
                best = v;
                best_x = x;
            }
        }

        let finish = |x: Vec<f64>, t: f64, lb: f64, status: MasterStatus, nodes: usize| -> MasterOutcome {
            let pool_costs = if cuts.pool_len() == 0 { Vec::new() } else { cuts.g_all(&x) };
            let kept = if pool_costs.is_empty() {
                vec![true; scen]
            } else {
                let tol = 1e-9 * t.abs().max(1.0);
                pool_costs.iter().map(|g| *g <= t + tol).collect()
            };
            MasterOutcome { x, t, lower_bound: lb.max(inp.floor).min(t), kept, pool_costs, status, nodes }
        };

        if cuts.pool_len() == 0 || best <= inp.floor {
            return Ok(finish(best_x, best.max(inp.floor), best.max(inp.floor), MasterStatus::Optimal, 0));
        }

        let mut heap = BinaryHeap::new();
        let mut next_id = 0;
        heap.push(Node {
            bound: inp.floor,
            id: next_id,
            kept: Vec::new(),
            fixed: BitSet::new(scen),
            drop_w: 0.0,
            x: best_x.clone(),
            t: inp.floor,
            rows: Vec::new(),
        });
        next_id += 1;
        let mut pruned_min = f64::INFINITY;
        let mut nodes = 0;
        let prune_tol = |v: f64| 1e-9 * v.abs().max(1.0);

        while let Some(node) = heap.pop() {
            if node.bound >= best - prune_tol(best) {
                pruned_min = pruned_min.min(node.bound);
                continue;
            }
            let lb = node.bound.min(pruned_min);
            if crate::solver::relative_gap(best, lb) <= inp.rel_gap {
                return Ok(finish(best_x, best, lb, MasterStatus::GapReached, nodes));
            }
            if expired() || heap.len() > MAX_OPEN_NODES {
                return Ok(finish(best_x, best, lb, MasterStatus::Limit, nodes));
            }
            nodes += 1;

            let g = cuts.g_all(&node.x);
            let v = cuts.value(&g)?;
            if v < best {
                best = v;
                best_x = node.x.clone();
            }
            if nodes % DESCENT_EVERY == 0 {
                let (x, v) = cuts.descend(&node.x, inp.deadline)?;
                if v < best {
                    best = v;
                    best_x = x;
                }
            }

            let tol = 1e-9 * node.t.abs().max(1.0);
            let mut viol_w = 0.0;
            let mut branch: Option<usize> = None;
            for i in 0..scen {
                if !node.fixed.get(i) && g[i] > node.t + tol {
                    viol_w += weights[i];
                    if branch.is_none_or(|b| g[i] > g[b]) {
                        branch = Some(i);
                    }
                }
            }
            let Some(i) = branch else { continue };
            if node.drop_w + viol_w <= budget {
                // Dropping every violator is feasible: this subtree is solved at `node.t`.
                continue;
            }

            // Keep child.
            let mut kept = node.kept.clone();
            kept.push(i as u32);
            let mut rows = node.rows.clone();
            let (x, t) = cuts.solve_kept(&kept, &mut rows, &node.x)?;
            if t < best - prune_tol(best) {
                let mut fixed = node.fixed.clone();
                fixed.set(i);
                heap.push(Node { bound: t.max(node.bound), id: next_id, kept, fixed, drop_w: node.drop_w, x, t, rows });
                next_id += 1;
            } else {
                pruned_min = pruned_min.min(t);
            }

            // Drop child: same relaxation, one less unit of budget.
            if node.drop_w + weights[i] <= budget {
                let mut fixed = node.fixed;
                fixed.set(i);
                heap.push(Node { drop_w: node.drop_w + weights[i], fixed, id: next_id, ..node });
                next_id += 1;
            }
        }
        let lb = pruned_min.min(best);
        Ok(finish(best_x, best, lb, MasterStatus::Optimal, nodes))
    }
}

fn solve_big_m(input: &MasterInput<'_>) -> Result<MasterOutcome> {
    let inst = input.instance;
    let problem = inst.two_stage();
    let pool: Vec<_> = input.pool.iter().map(|v| generic_vertex(inst, v)).collect::<Result<_>>()?;
    let q = build_master(&problem, input.scenarios, input.tau, input.big_m, &pool, input.floor)?;
    let time_limit = input.deadline.map(|d| d.saturating_duration_since(Instant::now()));
    let res = q.solve(&MilpOptions { rel_gap: input.rel_gap, time_limit, floor: Some(input.floor) })?;
    let status = match res.status {
        MilpStatus::Optimal(_) => MasterStatus::Optimal,
        MilpStatus::GapReached => MasterStatus::GapReached,
        MilpStatus::TimeLimit => MasterStatus::Limit,
        MilpStatus::Infeasible | MilpStatus::Unbounded => {
            return Err(Error::Model(format!("master MILP ended {:?}", res.status)))
        }
    };
    let cuts = Cuts::new(input);
    let (x, t, kept) = match &res.incumbent {
        Some((sol, t)) => (q.x_of(sol).to_vec(), *t, q.v_of(sol)),
        None => {
            // No integer point yet: fall back to a warm start, which is master-feasible.
            let n = inst.n;
            let x = input.warm_starts.first().cloned().unwrap_or_else(|| vec![inst.horizon / n as f64; n]);
            let t = if pool.is_empty() { input.floor } else { cuts.value(&cuts.g_all(&x))? };
            let g = if pool.is_empty() { vec![f64::NEG_INFINITY; input.scenarios.len()] } else { cuts.g_all(&x) };
            let kept = g.iter().map(|v| *v <= t + 1e-9 * t.abs().max(1.0)).collect();
            (x, t, kept)
        }
    };
    let pool_costs = if pool.is_empty() { Vec::new() } else { cuts.g_all(&x) };
    Ok(MasterOutcome {
        x,
        t,
        lower_bound: res.lower_bound.max(input.floor).min(t),
        kept,
        pool_costs,
        status,
        nodes: res.node_count,
    })
}
