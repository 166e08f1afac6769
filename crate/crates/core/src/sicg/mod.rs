//! Stochastic inexact constraint generation for quantile minimisation.
//!
//! Each iteration solves a master problem over a pool of dual vertices to an
//! adaptive gap (and optionally a time limit), evaluates the true quantile at
//! the master's schedule, then either tightens the master (exploitation) or
//! adds a dual vertex (exploration). The loop stops once the best true
//! objective `Ū` and the last valid lower bound `L^ℓ` are within `ε`.

mod master;

use std::collections::HashSet;
use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::asp::{
    optimal_dual_or_lp, quantile_objective, vertex_from_partition, AspDualVertex, AspInstance, IntervalPartition,
    Schedule,
};
use crate::error::{Error, Result};
use crate::estimator::weighted_quantile;
use crate::twostage::{big_m_bound, ScenarioSet};

pub use master::{solve_master, MasterInput, MasterKind, MasterOutcome, MasterStatus};

/// Largest `n` accepted by the loop; partitions are stored as 64-bit masks.
pub const MAX_N: usize = 30;
/// Random partition draws per vertex before the deterministic sweep.
const REJECTIONS_PER_VERTEX: u64 = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SicgParams {
    /// Termination gap `ε`.
    pub eps: f64,
    /// Exploitation threshold `ε̃`.
    pub eps_tilde: f64,
    /// Initial master gap.
    pub eps_mp0: f64,
    /// Master gap shrink factor.
    pub alpha: f64,
    /// Master time limit in seconds.
    pub kappa: Option<f64>,
    /// Increment of `kappa` at each exploitation, in seconds.
    pub beta: Option<f64>,
    pub tau: f64,
    pub seed: u64,
    /// Iteration cap; `None` means `10·2^n + 1000`.
    pub max_iterations: Option<usize>,
    /// Wall-clock budget for the whole run in seconds.
    pub time_limit: Option<f64>,
    pub master: MasterKind,
    /// Overrides the closed-form big-M.
    pub big_m: Option<f64>,
}

impl Default for SicgParams {
    fn default() -> Self {
        Self {
            eps: 0.02,
            eps_tilde: 0.015,
            eps_mp0: 0.05,
            alpha: 0.5,
            kappa: Some(30.0),
            beta: Some(60.0),
            tau: 0.95,
            seed: 0,
            max_iterations: None,
            time_limit: None,
            master: MasterKind::Structured,
            big_m: None,
        }
    }
}

impl SicgParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return bad(format!("eps = {} must lie in (0, 1)", self.eps));
        }
        if !(self.eps_tilde > 0.0 && self.eps_tilde < self.eps / (1.0 + self.eps)) {
            return bad(format!("eps_tilde = {} must lie in (0, eps/(1+eps))", self.eps_tilde));
        }
        if !(self.eps_mp0 > 0.0) {
            return bad(format!("eps_mp0 = {} must be positive", self.eps_mp0));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha = {} must lie in (0, 1)", self.alpha));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau = {} must lie in (0, 1]", self.tau));
        }
        for (name, v) in [("kappa", self.kappa), ("beta", self.beta), ("time_limit", self.time_limit)] {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return bad(format!("{name} = {v} must be a finite nonnegative number of seconds"));
                }
            }
        }
        if let Some(m) = self.big_m {
            if !(m > 0.0 && m.is_finite()) {
                return bad(format!("big_m = {m} must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Exploit,
    Explore,
    Done,
}

/// One row of the iteration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub phase: Phase,
    #[serde(rename = "L_ell")]
    pub l_ell: f64,
    #[serde(rename = "U_bar")]
    pub u_bar: f64,
    #[serde(rename = "U_j")]
    pub u_j: f64,
    pub eps_mp: f64,
    pub pool_size: usize,
    /// Seconds spent in the master solve.
    pub master_time: f64,
}

/// Writes the trace as `iter,phase,L_ell,U_bar,U_j,eps_mp,pool_size,master_time`.
pub fn write_trace<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(["iter", "phase", "L_ell", "U_bar", "U_j", "eps_mp", "pool_size", "master_time"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trace(rows: &[TraceRow], path: impl AsRef<Path>) -> Result<()> {
    write_trace(rows, std::io::BufWriter::new(std::fs::File::create(path)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SicgStatus {
    Converged,
    TimeLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SicgOutcome {
    pub schedule: Schedule,
    /// `Ū`, the true quantile objective of `schedule`.
    pub objective: f64,
    /// `L^ℓ`.
    pub lower_bound: f64,
    /// `(Ū − L^ℓ) / Ū`.
    pub gap: f64,
    pub status: SicgStatus,
    pub iterations: usize,
    pub explorations: usize,
    pub pool: Vec<IntervalPartition>,
    pub trace: Vec<TraceRow>,
}

/// Dual vertices collected so far, identified by partition.
#[derive(Debug, Clone, Default)]
pub struct VertexPool {
    vertices: Vec<AspDualVertex>,
    masks: HashSet<u64>,
}

impl VertexPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, p: &IntervalPartition) -> bool {
        self.masks.contains(&p.breaks())
    }

    /// Inserts unless the partition is already present; returns whether it was new.
    pub fn insert(&mut self, v: AspDualVertex) -> bool {
        if self.masks.insert(v.partition.breaks()) {
            self.vertices.push(v);
            true
        } else {
            false
        }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertices(&self) -> &[AspDualVertex] {
        &self.vertices
    }
}

/// Finds a dual vertex outside `pool`: the optimal dual of scenario `idx` at
/// `x`, then that of `idx_master`, then uniformly random partitions. After
/// `50·2^n` rejected draws the partitions are swept in mask order. Returns
/// `None` only when the pool already holds all `2^n` vertices.
pub fn explore_vertex(
    pool: &VertexPool,
    instance: &AspInstance,
    x: &[f64],
    scenarios: &ScenarioSet,
    idx: usize,
    idx_master: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> Result<Option<AspDualVertex>> {
    let n = instance.n;
    if n > MAX_N {
        return Err(Error::InvalidArgument(format!("n = {n} exceeds {MAX_N}")));
    }
    for i in std::iter::once(idx).chain(idx_master) {
        let (p, v) = optimal_dual_or_lp(instance, x, scenarios.scenario(i))?;
        if !pool.contains(&p) {
            return Ok(Some(v));
        }
    }
    let total = 1u64 << n;
    if pool.len() as u64 >= total {
        return Ok(None);
    }
    for _ in 0..REJECTIONS_PER_VERTEX.saturating_mul(total) {
        let p = IntervalPartition::from_breaks(n, rng.gen_range(0..total))?;
        if !pool.contains(&p) {
            return Ok(Some(vertex_from_partition(instance, &p)?));
        }
    }
    for mask in 0..total {
        let p = IntervalPartition::from_breaks(n, mask)?;
        if !pool.contains(&p) {
            return Ok(Some(vertex_from_partition(instance, &p)?));
        }
    }
    Ok(None)
}

fn secs(v: f64) -> Duration {
    Duration::from_secs_f64(v.min(1e9))
}

/// Gap with the `Ū = ∞` convention and a zero-objective guard.
fn rel(upper: f64, lower: f64) -> f64 {
    if !upper.is_finite() {
        1.0
    } else if upper <= 1e-12 {
        0.0
    } else {
        ((upper - lower) / upper).max(0.0)
    }
}

/// Runs the constraint-generation loop on an appointment-scheduling instance.
pub fn sicg_solve(instance: &AspInstance, scenarios: &ScenarioSet, params: &SicgParams) -> Result<SicgOutcome> {
    instance.validate()?;
    params.validate()?;
    let n = instance.n;
    if n > MAX_N {
        return Err(Error::InvalidArgument(format!("n = {n} exceeds {MAX_N}")));
    }
    if scenarios.dim() != n {
        return Err(Error::DimensionMismatch(format!("scenarios have {} slots, instance has {n}", scenarios.dim())));
    }
    if scenarios.scenarios().iter().flatten().any(|v| *v < 0.0) {
        return Err(Error::InvalidArgument("negative scenario duration".into()));
    }
    let big_m = match params.big_m {
        Some(m) => m,
        None => big_m_bound(instance, scenarios)?,
    };
    let cap = params.max_iterations.unwrap_or_else(|| {
        let explore = if n >= 20 { usize::MAX / 4 } else { 10 << n };
        explore.saturating_add(1000)
    });
    let start = Instant::now();
    let run_deadline = params.time_limit.map(|t| start + secs(t));

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut pool = VertexPool::new();
    let mut floor = 0.0;
    let mut l_ell: f64 = 0.0;
    let mut u_bar = f64::INFINITY;
    let mut eps_mp = params.eps_mp0;
    let mut kappa = params.kappa;
    let mut best_x = Schedule::uniform(instance).x;
    let mut last_x: Option<Vec<f64>> = None;
    let mut trace = Vec::new();
    let mut explorations = 0;
    let mut status = SicgStatus::TimeLimit;

    let mut iter = 0;
    loop {
        iter += 1;
        if iter > cap {
            return Err(Error::IterationCap { cap, iterations: iter - 1 });
        }
        // Step 1: inexact master solve.
        let now = Instant::now();
        let master_deadline = match (kappa.map(|k| now + secs(k)), run_deadline) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        let mut warm = vec![best_x.clone()];
        if let Some(x) = &last_x {
            warm.push(x.clone());
        }
        let input = MasterInput {
            instance,
            scenarios,
            tau: params.tau,
            big_m,
            pool: pool.vertices(),
            floor,
            rel_gap: eps_mp,
            deadline: master_deadline,
            warm_starts: &warm,
        };
        let master = solve_master(params.master, &input)?;
        let master_time = now.elapsed().as_secs_f64();
        let l_j = master.lower_bound.max(floor);
        let u_j = master.t;
        if l_j > floor {
            l_ell = l_ell.max(l_j);
        }
        floor = u_j;
        let x_j = Schedule::projected(master.x.clone(), instance).x;

        // Step 2: true quantile at the master schedule.
        let (q, idx) = quantile_objective(instance, &x_j, scenarios, params.tau)?;
        if q < u_bar {
            u_bar = q;
            best_x = x_j.clone();
        }
        let idx_master = master_attaining(&master, scenarios, params.tau)?;
        last_x = Some(x_j.clone());

        let mut row =
            TraceRow { iter, phase: Phase::Done, l_ell, u_bar, u_j, eps_mp, pool_size: pool.len(), master_time };
        if rel(u_bar, l_ell) <= params.eps {
            trace.push(row);
            status = SicgStatus::Converged;
            break;
        }
        if run_deadline.is_some_and(|d| Instant::now() >= d) {
            trace.push(row);
            break;
        }

        // Step 3: exploitation or exploration.
        let mut exploit = rel(u_bar, u_j) < params.eps_tilde;
        if !exploit {
            match explore_vertex(&pool, instance, &x_j, scenarios, idx, idx_master, &mut rng)? {
                Some(v) => {
                    pool.insert(v);
                    explorations += 1;
                    row.phase = Phase::Explore;
                }
                None => exploit = true,
            }
        }
        if exploit {
            floor = l_ell;
            eps_mp *= params.alpha;
            if let (Some(k), Some(b)) = (kappa, params.beta) {
                kappa = Some(k + b);
            }
            row.phase = Phase::Exploit;
        }
        trace.push(row);
    }

    Ok(SicgOutcome {
        schedule: Schedule { x: best_x },
        objective: u_bar,
        lower_bound: l_ell,
        gap: rel(u_bar, l_ell),
        status,
        iterations: iter,
        explorations,
        pool: pool.vertices().iter().map(|v| v.partition).collect(),
        trace,
    })
}

/// Smallest kept scenario whose master-side cost equals `t^j`; otherwise the
/// scenario attaining the quantile of the master-side costs.
fn master_attaining(master: &MasterOutcome, scenarios: &ScenarioSet, tau: f64) -> Result<Option<usize>> {
    if master.pool_costs.is_empty() {
        return Ok(None);
    }
    let hit = master.pool_costs.iter().zip(&master.kept).position(|(g, k)| *k && (g - master.t).abs() <= 1e-6);
    if hit.is_some() {
        return Ok(hit);
    }
    Ok(Some(weighted_quantile(&master.pool_costs, scenarios.weights(), tau)?.1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asp::enumerate_partitions;

    fn small() -> (AspInstance, ScenarioSet) {
        let inst = AspInstance::new(vec![0.5, 0.5], vec![1.0, 1.0], 10.0, 6.0).unwrap();
        let set =
            ScenarioSet::uniform(vec![vec![2.0, 3.5], vec![4.0, 1.0], vec![3.0, 3.0], vec![1.0, 2.0], vec![5.0, 2.5]])
                .unwrap();
        (inst, set)
    }

    #[test]
    fn params_validation() {
        SicgParams::default().validate().unwrap();
        let p = SicgParams { eps_tilde: 0.02, ..SicgParams::default() };
        assert!(p.validate().is_err());
        let p = SicgParams { alpha: 1.0, ..SicgParams::default() };
        assert!(p.validate().is_err());
        let p = SicgParams { eps_mp0: 0.0, ..SicgParams::default() };
        assert!(p.validate().is_err());
    }

    #[test]
    fn explore_returns_first_trial_on_empty_pool() {
        let (inst, set) = small();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = [3.0, 3.0];
        let v = explore_vertex(&VertexPool::new(), &inst, &x, &set, 2, None, &mut rng).unwrap().unwrap();
        let (p, _) = crate::asp::optimal_dual(&inst, &x, set.scenario(2)).unwrap();
        assert_eq!(v.partition, p);
    }

    #[test]
    fn explore_finds_the_missing_vertex() {
        let (inst, set) = small();
        let all = enumerate_partitions(2).unwrap();
        for missing in &all {
            let mut pool = VertexPool::new();
            for p in all.iter().filter(|p| *p != missing) {
                pool.insert(vertex_from_partition(&inst, p).unwrap());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let v = explore_vertex(&pool, &inst, &[3.0, 3.0], &set, 0, Some(1), &mut rng).unwrap().unwrap();
            assert_eq!(v.partition, *missing);
            pool.insert(v);
            assert!(explore_vertex(&pool, &inst, &[3.0, 3.0], &set, 0, None, &mut rng).unwrap().is_none());
        }
    }

    #[test]
    fn solves_small_instance_to_gap() {
        let (inst, set) = small();
        let params = SicgParams { eps: 1e-3, eps_tilde: 4e-4, tau: 0.6, kappa: None, beta: None, ..Default::default() };
        let out = sicg_solve(&inst, &set, &params).unwrap();
        assert_eq!(out.status, SicgStatus::Converged);
        assert!(out.gap <= 1e-3);
        assert!(out.pool.len() <= 4);
        out.schedule.validate(&inst).unwrap();
        let (q, _) = quantile_objective(&inst, &out.schedule.x, &set, 0.6).unwrap();
        assert_eq!(q, out.objective);
        for w in out.trace.windows(2) {
            assert!(w[1].u_bar <= w[0].u_bar);
        }
    }

    #[test]
    fn big_m_master_agrees_with_structured() {
        let (inst, set) = small();
        let base = SicgParams { eps: 1e-3, eps_tilde: 4e-4, tau: 0.6, kappa: None, beta: None, ..Default::default() };
        let a = sicg_solve(&inst, &set, &base).unwrap();
        let b = sicg_solve(&inst, &set, &SicgParams { master: MasterKind::BigM, ..base }).unwrap();
        assert!((a.objective - b.objective).abs() <= 2e-3 * a.objective.max(1.0));
    }

    #[test]
    fn trace_csv_header() {
        let row = TraceRow {
            iter: 1,
            phase: Phase::Explore,
            l_ell: 0.0,
            u_bar: 2.5,
            u_j: 0.0,
            eps_mp: 0.05,
            pool_size: 0,
            master_time: 0.25,
        };
        let mut buf = Vec::new();
        write_trace(&[row], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iter,phase,L_ell,U_bar,U_j,eps_mp,pool_size,master_time\n1,explore,0.0,2.5,"));
    }
}
