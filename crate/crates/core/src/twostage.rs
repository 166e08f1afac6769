//! Generic two-stage LP with a quantile objective.
//!
//! The second-stage cost is `f(x, ξ) = min { q·y : W y ≥ h − T x − C ξ, y ≥ 0 }`.
//! Minimising the weighted τ-quantile of `f(x, ξ^i)` is written as a big-M
//! MILP, either with explicit recourse copies `y^i` ([`build_direct_milp`]) or
//! through a pool of dual vertices `π` ([`build_master`]).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::asp::AspInstance;
use crate::error::{Error, Result};
use crate::estimator::{format_float, WeightVector};
use crate::solver::{
    lp_solve, milp_solve, Cmp, Constraint, LpOutcome, LpProblem, MilpOptions, MilpProblem, MilpResult,
};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged matrix rows".into()));
        }
        Ok(Self { rows: rows.len(), cols, data: rows.concat() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|r| dot(self.row(r), v)).collect()
    }

    /// `Aᵀ v`.
    pub fn tmul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (r, vr) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(r)) {
                *o += a * vr;
            }
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

/// Linear constraints and bounds describing the first-stage set `X`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstStage {
    pub constraints: Vec<Constraint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageLP {
    pub q: Vec<f64>,
    pub w: Matrix,
    pub t: Matrix,
    pub c: Matrix,
    pub h: Vec<f64>,
    pub first_stage: FirstStage,
}

impl TwoStageLP {
    pub fn validate(&self) -> Result<()> {
        let m = self.h.len();
        if self.w.rows() != m || self.t.rows() != m || self.c.rows() != m {
            return Err(Error::DimensionMismatch(format!(
                "rows: W {}, T {}, C {}, h {}",
                self.w.rows(),
                self.t.rows(),
                self.c.rows(),
                m
            )));
        }
        if self.w.cols() != self.q.len() {
            return Err(Error::DimensionMismatch(format!("W has {} columns, q has {}", self.w.cols(), self.q.len())));
        }
        let nx = self.t.cols();
        if self.first_stage.lower.len() != nx || self.first_stage.upper.len() != nx {
            return Err(Error::DimensionMismatch("first-stage bounds do not match T".into()));
        }
        if self.first_stage.constraints.iter().any(|c| c.coeffs.iter().any(|&(j, _)| j >= nx)) {
            return Err(Error::DimensionMismatch("first-stage constraint column out of range".into()));
        }
        Ok(())
    }

    pub fn n_x(&self) -> usize {
        self.t.cols()
    }

    pub fn n_y(&self) -> usize {
        self.q.len()
    }

    pub fn n_xi(&self) -> usize {
        self.c.cols()
    }

    fn check_point(&self, x: &[f64], xi: &[f64]) -> Result<()> {
        if x.len() != self.n_x() || xi.len() != self.n_xi() {
            return Err(Error::DimensionMismatch(format!(
                "|x| = {} (want {}), |ξ| = {} (want {})",
                x.len(),
                self.n_x(),
                xi.len(),
                self.n_xi()
            )));
        }
        Ok(())
    }

    /// `h − T x − C ξ`.
    pub fn rhs(&self, x: &[f64], xi: &[f64]) -> Vec<f64> {
        let tx = self.t.mul_vec(x);
        let cxi = self.c.mul_vec(xi);
        self.h.iter().zip(tx).zip(cxi).map(|((h, a), b)| h - a - b).collect()
    }

    pub fn recourse_lp(&self, x: &[f64], xi: &[f64]) -> Result<LpProblem> {
        self.check_point(x, xi)?;
        let rhs = self.rhs(x, xi);
        let mut lp = LpProblem::new();
        for (j, &q) in self.q.iter().enumerate() {
            lp.add_named_var(format!("y{j}"), q, 0.0, f64::INFINITY);
        }
        for (r, b) in rhs.into_iter().enumerate() {
            let coeffs = self.w.row(r).iter().enumerate().filter(|(_, a)| **a != 0.0).map(|(j, a)| (j, *a)).collect();
            lp.add_constraint(coeffs, Cmp::Ge, b);
        }
        Ok(lp)
    }

    /// `f(x, ξ)`, via the embedded simplex.
    pub fn recourse_value(&self, x: &[f64], xi: &[f64]) -> Result<f64> {
        Ok(self.recourse_dual(x, xi)?.0)
    }

    /// `f(x, ξ)` together with an optimal dual multiplier.
    pub fn recourse_dual(&self, x: &[f64], xi: &[f64]) -> Result<(f64, DualVertex)> {
        let lp = self.recourse_lp(x, xi)?;
        match lp_solve(&lp)? {
            LpOutcome::Optimal(sol) => {
                let pi = sol.duals.iter().map(|d| d.max(0.0)).collect();
                Ok((sol.objective, DualVertex::new(self, pi)?))
            }
            LpOutcome::Infeasible => Err(Error::Model("recourse problem is infeasible".into())),
            LpOutcome::Unbounded => Err(Error::Model("recourse problem is unbounded".into())),
        }
    }

    /// `πᵀ(h − T x − C ξ)`, a lower bound on `f(x, ξ)` for any feasible `π`.
    pub fn dual_value(&self, pi: &DualVertex, x: &[f64], xi: &[f64]) -> Result<f64> {
        self.check_point(x, xi)?;
        if pi.pi.len() != self.h.len() {
            return Err(Error::DimensionMismatch(format!(
                "π has {} entries, problem has {} rows",
                pi.pi.len(),
                self.h.len()
            )));
        }
        Ok(dot(&pi.pi, &self.rhs(x, xi)))
    }
}

/// A dual-feasible multiplier: `π ≥ 0`, `Wᵀπ ≤ q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualVertex {
    pub pi: Vec<f64>,
}

impl DualVertex {
    pub fn new(problem: &TwoStageLP, pi: Vec<f64>) -> Result<Self> {
        const TOL: f64 = crate::asp::DUAL_FEAS_TOL;
        if pi.len() != problem.h.len() {
            return Err(Error::DimensionMismatch(format!(
                "π has {} entries, problem has {} rows",
                pi.len(),
                problem.h.len()
            )));
        }
        if let Some(p) = pi.iter().find(|p| !(**p >= -TOL)) {
            return Err(Error::InvalidArgument(format!("dual entry {p} is negative")));
        }
        let wt = problem.w.tmul_vec(&pi);
        for (j, (a, q)) in wt.iter().zip(&problem.q).enumerate() {
            if *a > q + TOL * (1.0 + q.abs()) {
                return Err(Error::InvalidArgument(format!("dual infeasible in column {j}: {a} > {q}")));
            }
        }
        Ok(Self { pi })
    }
}

/// Weighted scenarios `ξ^i` with weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    weights: Vec<f64>,
    scenarios: Vec<Vec<f64>>,
}

impl ScenarioSet {
    pub fn new(weights: WeightVector, scenarios: Vec<Vec<f64>>) -> Result<Self> {
        if weights.len() != scenarios.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} scenarios",
                weights.len(),
                scenarios.len()
            )));
        }
        let dim = scenarios.first().map_or(0, Vec::len);
        if dim == 0 || scenarios.iter().any(|s| s.len() != dim) {
            return Err(Error::DimensionMismatch("scenarios must share a positive dimension".into()));
        }
        if scenarios.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite scenario entry".into()));
        }
        Ok(Self { weights: weights.into_inner(), scenarios })
    }

    pub fn uniform(scenarios: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(WeightVector::uniform(scenarios.len())?, scenarios)
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.scenarios[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn scenarios(&self) -> &[Vec<f64>] {
        &self.scenarios
    }

    pub fn scenario(&self, i: usize) -> &[f64] {
        &self.scenarios[i]
    }

    /// Writes the `w,s_1,…,s_n` CSV form.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["w".to_string()];
        header.extend((1..=self.dim()).map(|k| format!("s_{k}")));
        w.write_record(&header)?;
        for (wi, s) in self.weights.iter().zip(&self.scenarios) {
            let mut row = vec![format_float(*wi)];
            row.extend(s.iter().map(|v| format_float(*v)));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers()?.clone();
        let n = headers.len().saturating_sub(1);
        let ok = n > 0 && &headers[0] == "w" && (1..=n).all(|k| headers[k] == format!("s_{k}"));
        if !ok {
            return Err(Error::Data(format!(
                "scenario header must be `w,s_1,...,s_n`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut weights = Vec::new();
        let mut scenarios = Vec::new();
        for (line, row) in rdr.records().enumerate() {
            let row = row?;
            let vals = row
                .iter()
                .enumerate()
                .map(|(k, f)| {
                    f.trim().parse::<f64>().map_err(|e| Error::Data(format!("row {}: column {}: {e}", line + 2, k + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            if vals[1..].iter().any(|v| *v < 0.0) {
                return Err(Error::Data(format!("row {}: negative duration", line + 2)));
            }
            weights.push(vals[0]);
            scenarios.push(vals[1..].to_vec());
        }
        let weights = WeightVector::new(weights).map_err(|e| Error::Data(e.to_string()))?;
        Self::new(weights, scenarios).map_err(|e| Error::Data(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// A big-M quantile MILP together with the column layout needed to read
/// its solution back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileMilp {
    pub milp: MilpProblem,
    pub big_m: f64,
    pub tau: f64,
    pub weights: Vec<f64>,
    pub x_cols: Vec<usize>,
    pub t_col: usize,
    pub v_cols: Vec<usize>,
}

impl QuantileMilp {
    pub fn solve(&self, options: &MilpOptions) -> Result<MilpResult> {
        Ok(milp_solve(&self.milp, options)?)
    }

    pub fn x_of<'a>(&self, sol: &'a [f64]) -> &'a [f64] {
        &sol[self.x_cols[0]..=self.x_cols[self.x_cols.len() - 1]]
    }

    pub fn v_of(&self, sol: &[f64]) -> Vec<bool> {
        self.v_cols.iter().map(|&j| sol[j] > 0.5).collect()
    }

    /// Debug dump listing variables, constraints and `M`.
    pub fn to_json(&self) -> serde_json::Value {
        let lp = &self.milp.lp;
        let binaries: std::collections::HashSet<usize> = self.milp.binaries.iter().copied().collect();
        let bound = |v: f64| if v.is_finite() { serde_json::json!(v) } else { serde_json::Value::Null };
        let variables: Vec<_> = (0..lp.num_vars())
            .map(|j| {
                serde_json::json!({
                    "name": lp.name(j),
                    "cost": lp.objective[j],
                    "lower": bound(lp.lower[j]),
                    "upper": bound(lp.upper[j]),
                    "binary": binaries.contains(&j),
                })
            })
            .collect();
        let constraints: Vec<_> = lp
            .constraints
            .iter()
            .map(|c| {
                let terms: Vec<_> = c.coeffs.iter().map(|(j, a)| serde_json::json!([lp.name(*j), a])).collect();
                let sense = match c.cmp {
                    Cmp::Le => "<=",
                    Cmp::Ge => ">=",
                    Cmp::Eq => "=",
                };
                serde_json::json!({ "terms": terms, "sense": sense, "rhs": c.rhs })
            })
            .collect();
        serde_json::json!({
            "M": self.big_m,
            "tau": self.tau,
            "weights": self.weights,
            "variables": variables,
            "constraints": constraints,
        })
    }
}

fn check_quantile_inputs(problem: &TwoStageLP, scenarios: &ScenarioSet, tau: f64, big_m: f64) -> Result<()> {
    problem.validate()?;
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidArgument(format!("τ = {tau} must lie in (0, 1]")));
    }
    if !(big_m > 0.0 && big_m.is_finite()) {
        return Err(Error::InvalidArgument(format!("big-M {big_m} must be positive and finite")));
    }
    if scenarios.dim() != problem.n_xi() {
        return Err(Error::DimensionMismatch(format!(
            "scenarios have dimension {}, C has {} columns",
            scenarios.dim(),
            problem.n_xi()
        )));
    }
    Ok(())
}

/// Adds `x`, `t` and `v` columns, the first-stage rows and the coverage row.
fn quantile_skeleton(
    problem: &TwoStageLP,
    scenarios: &ScenarioSet,
    tau: f64,
) -> (LpProblem, Vec<usize>, usize, Vec<usize>) {
    let fs = &problem.first_stage;
    let mut lp = LpProblem::new();
    let x_cols: Vec<usize> =
        (0..problem.n_x()).map(|j| lp.add_named_var(format!("x{}", j + 1), 0.0, fs.lower[j], fs.upper[j])).collect();
    let t_col = lp.add_named_var("t", 1.0, f64::NEG_INFINITY, f64::INFINITY);
    let v_cols: Vec<usize> =
        (0..scenarios.len()).map(|i| lp.add_named_var(format!("v{}", i + 1), 0.0, 0.0, 1.0)).collect();
    for c in &fs.constraints {
        let coeffs = c.coeffs.iter().map(|&(j, a)| (x_cols[j], a)).collect();
        lp.add_constraint(coeffs, c.cmp, c.rhs);
    }
    let cover = v_cols.iter().zip(scenarios.weights()).map(|(&j, &w)| (j, w)).collect();
    lp.add_constraint(cover, Cmp::Ge, tau);
    (lp, x_cols, t_col, v_cols)
}

/// `min t` s.t. `M(1 − v_i) ≥ q·y^i − t`, `T x + W y^i + C ξ^i ≥ h`, `Σ w_i v_i ≥ τ`.
pub fn build_direct_milp(problem: &TwoStageLP, scenarios: &ScenarioSet, tau: f64, big_m: f64) -> Result<QuantileMilp> {
    check_quantile_inputs(problem, scenarios, tau, big_m)?;
    let (mut lp, x_cols, t_col, v_cols) = quantile_skeleton(problem, scenarios, tau);
    for (i, xi) in scenarios.scenarios().iter().enumerate() {
        let y: Vec<usize> = (0..problem.n_y())
            .map(|j| lp.add_named_var(format!("y{}_{}", i + 1, j + 1), 0.0, 0.0, f64::INFINITY))
            .collect();
        let cxi = problem.c.mul_vec(xi);
        for r in 0..problem.h.len() {
            let mut coeffs: Vec<(usize, f64)> = Vec::new();
            coeffs
                .extend(problem.t.row(r).iter().enumerate().filter(|(_, a)| **a != 0.0).map(|(j, a)| (x_cols[j], *a)));
            coeffs.extend(problem.w.row(r).iter().enumerate().filter(|(_, a)| **a != 0.0).map(|(j, a)| (y[j], *a)));
            lp.add_constraint(coeffs, Cmp::Ge, problem.h[r] - cxi[r]);
        }
        let mut coeffs: Vec<(usize, f64)> =
            y.iter().zip(&problem.q).filter(|(_, q)| **q != 0.0).map(|(&j, &q)| (j, q)).collect();
        coeffs.push((t_col, -1.0));
        coeffs.push((v_cols[i], big_m));
        lp.add_constraint(coeffs, Cmp::Le, big_m);
    }
    Ok(QuantileMilp {
        milp: MilpProblem { lp, binaries: v_cols.clone() },
        big_m,
        tau,
        weights: scenarios.weights().to_vec(),
        x_cols,
        t_col,
        v_cols,
    })
}

/// Relaxation over a vertex pool: `M(1 − v_i) + t ≥ πᵀ(h − T x − C ξ^i)` for
/// every `π` in the pool and every scenario, plus the floor `t ≥ L̄`.
pub fn build_master(
    problem: &TwoStageLP,
    scenarios: &ScenarioSet,
    tau: f64,
    big_m: f64,
    pool: &[DualVertex],
    floor: f64,
) -> Result<QuantileMilp> {
    check_quantile_inputs(problem, scenarios, tau, big_m)?;
    if !floor.is_finite() {
        return Err(Error::InvalidArgument(format!("floor {floor} must be finite")));
    }
    let (mut lp, x_cols, t_col, v_cols) = quantile_skeleton(problem, scenarios, tau);
    lp.add_constraint(vec![(t_col, 1.0)], Cmp::Ge, floor);
    for pi in pool {
        if pi.pi.len() != problem.h.len() {
            return Err(Error::DimensionMismatch("pool vertex length differs from row count".into()));
        }
        // t − M v_i + (Tᵀπ)·x ≥ πᵀh − (Cᵀπ)·ξ^i − M
        let ttpi = problem.t.tmul_vec(&pi.pi);
        let ctpi = problem.c.tmul_vec(&pi.pi);
        let pih = dot(&pi.pi, &problem.h);
        for (i, xi) in scenarios.scenarios().iter().enumerate() {
            let mut coeffs = vec![(t_col, 1.0), (v_cols[i], -big_m)];
            coeffs.extend(ttpi.iter().enumerate().filter(|(_, a)| **a != 0.0).map(|(j, a)| (x_cols[j], *a)));
            lp.add_constraint(coeffs, Cmp::Ge, pih - dot(&ctpi, xi) - big_m);
        }
    }
    Ok(QuantileMilp {
        milp: MilpProblem { lp, binaries: v_cols.clone() },
        big_m,
        tau,
        weights: scenarios.weights().to_vec(),
        x_cols,
        t_col,
        v_cols,
    })
}

/// `M = S·Σ c_w + S·c_o + T_h·max c_u` with `S` the largest total scenario
/// duration: every wait and the overtime are at most `S`, every idle at most `T_h`.
pub fn big_m_bound(instance: &AspInstance, scenarios: &ScenarioSet) -> Result<f64> {
    if scenarios.dim() != instance.n {
        return Err(Error::DimensionMismatch(format!(
            "scenarios have {} slots, instance has {}",
            scenarios.dim(),
            instance.n
        )));
    }
    let s = scenarios.scenarios().iter().map(|s| s.iter().sum::<f64>()).fold(0.0, f64::max);
    let cu = instance.c_u.iter().copied().fold(0.0, f64::max);
    let m = s * instance.c_w.iter().sum::<f64>() + s * instance.c_o + instance.horizon * cu;
    // Keep M strictly positive so the big-M rows stay meaningful.
    Ok(if m > 0.0 { m } else { 1.0 })
}
