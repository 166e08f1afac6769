//! Synthetic appointment data, contextual and non-contextual scenario
//! pipelines, the expectation baseline and out-of-sample evaluation.
//!
//! Durations follow a lognormal law with mean `μ + z` and standard deviation
//! `ν·μ`, where `z ~ U[−15, 15]` is the appointment characteristic. A query
//! fixes one characteristic per slot; CSO keeps the records whose `z` lies
//! within `h` of it, SAA keeps everything, and the "true" benchmark samples
//! the conditional law directly.

mod experiment;
mod report;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::LogNormal;
use serde::{Deserialize, Serialize};

use crate::asp::{recourse_cost, AspInstance, Schedule};
use crate::error::{Error, Result};
use crate::estimator::{kernel_weights, weighted_quantile, ContextRecord, Dataset, KernelKind};
use crate::solver::{lp_solve, Cmp, LpOutcome, LpProblem};
use crate::twostage::ScenarioSet;

pub use experiment::{
    preset, preset_names, run_experiment, ExperimentConfig, ExperimentReport, Method, Objective, OosRow, ScheduleRow,
    Variant,
};
pub use report::{write_report, ReportSummary};

/// Half-width of the characteristic's support.
pub const Z_RANGE: f64 = 15.0;
pub const DEFAULT_MU: f64 = 40.0;

/// Independent random streams derived from one base seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Pool = 1,
    Subsample = 2,
    OutOfSample = 3,
    Sicg = 4,
    Means = 5,
    TrueDraws = 6,
}

/// ChaCha stream `(stream, index)` under `seed`.
pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 40) | (index & ((1 << 40) - 1)));
    rng
}

/// Per-slot characteristics of the query, or independent random means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Predictor {
    Values(Vec<f64>),
    /// `"a"` (all zero), `"b"` (increasing), `"c"` (decreasing) or `"iid"`.
    Named(String),
}

impl Predictor {
    /// `None` in the independent-means mode.
    pub fn contexts(&self, n: usize) -> Result<Option<Vec<f64>>> {
        let ramp = |sign: f64| -> Vec<f64> {
            if n == 1 {
                return vec![0.0];
            }
            (0..n).map(|k| sign * (-Z_RANGE + 2.0 * Z_RANGE * k as f64 / (n - 1) as f64)).collect()
        };
        match self {
            Predictor::Values(v) if v.len() == n => Ok(Some(v.clone())),
            Predictor::Values(v) => Err(Error::DimensionMismatch(format!("{} characteristics for n = {n}", v.len()))),
            Predictor::Named(s) => match s.as_str() {
                "a" => Ok(Some(vec![0.0; n])),
                "b" => Ok(Some(ramp(1.0))),
                "c" => Ok(Some(ramp(-1.0))),
                "iid" => Ok(None),
                other => Err(Error::InvalidArgument(format!("unknown predictor `{other}`"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub n: usize,
    /// Coefficient of variation of the durations.
    pub nu: f64,
    /// Horizon slack multiplier.
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(default = "default_mu")]
    pub mu_base: f64,
    pub predictor: Predictor,
    /// Number of historical records.
    #[serde(rename = "N")]
    pub pool_size: usize,
    pub seed: u64,
}

fn default_mu() -> f64 {
    DEFAULT_MU
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be positive".into()));
        }
        if !(self.nu > 0.0) || !(self.r >= 0.0) {
            return Err(Error::InvalidArgument(format!("need nu > 0 and R ≥ 0, got {} and {}", self.nu, self.r)));
        }
        if !(self.mu_base > Z_RANGE) {
            return Err(Error::InvalidArgument(format!("mu_base {} must exceed {Z_RANGE}", self.mu_base)));
        }
        self.predictor.contexts(self.n)?;
        Ok(())
    }

    /// Per-slot duration means `μ_k` and standard deviations `σ_k` of the
    /// conditional law at the configured predictor.
    pub fn slot_moments(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let sd = self.nu * self.mu_base;
        match self.predictor.contexts(self.n)? {
            Some(z) => Ok((z.iter().map(|z| self.mu_base + z).collect(), vec![sd; self.n])),
            None => {
                let mut rng = stream_rng(self.seed, Stream::Means, 0);
                let means: Vec<f64> = (0..self.n).map(|_| rng.gen_range(36.0..44.0)).collect();
                let sds = means.iter().map(|m| self.nu * m).collect();
                Ok((means, sds))
            }
        }
    }

    /// `n·μ + R·√n·νμ`, or `Σμ_i + R·√(Σσ_i²)` with independent means.
    pub fn horizon(&self) -> Result<f64> {
        if self.predictor.contexts(self.n)?.is_some() {
            let n = self.n as f64;
            Ok(n * self.mu_base + self.r * n.sqrt() * self.nu * self.mu_base)
        } else {
            let (m, s) = self.slot_moments()?;
            Ok(m.iter().sum::<f64>() + self.r * s.iter().map(|s| s * s).sum::<f64>().sqrt())
        }
    }

    /// Instance with the standard 0.5 : 1 : 10 cost ratio.
    pub fn instance(&self) -> Result<AspInstance> {
        AspInstance::with_standard_costs(self.n, self.horizon()?)
    }
}

/// `(μ_log, σ_log)` such that the lognormal has the given mean and sd.
pub fn lognormal_params(mean: f64, sd: f64) -> Result<(f64, f64)> {
    if !(mean > 0.0) || !(sd >= 0.0) {
        return Err(Error::InvalidArgument(format!("lognormal needs mean > 0 and sd ≥ 0, got {mean}, {sd}")));
    }
    let s2 = (1.0 + (sd / mean).powi(2)).ln();
    Ok((mean.ln() - s2 / 2.0, s2.sqrt()))
}

fn lognormal(mean: f64, sd: f64) -> Result<LogNormal<f64>> {
    let (m, s) = lognormal_params(mean, sd)?;
    LogNormal::new(m, s).map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// `N` historical `(z, s)` pairs with `z ~ U[−15, 15]`, `s ~ LN(mean μ + z, sd νμ)`.
pub fn generate_pool(config: &GenConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = stream_rng(config.seed, Stream::Pool, 0);
    let sd = config.nu * config.mu_base;
    let mut records = Vec::with_capacity(config.pool_size);
    while records.len() < config.pool_size {
        let z: f64 = rng.gen_range(-Z_RANGE..=Z_RANGE);
        let mean = config.mu_base + z;
        if mean <= 0.0 {
            continue;
        }
        let s = lognormal(mean, sd)?.sample(&mut rng);
        records.push(ContextRecord::new(z, s)?);
    }
    Ok(Dataset::new(records))
}

/// Joint scenarios from independent per-slot draws, each slot sampling the
/// pool in proportion to its kernel weight at that slot's characteristic.
pub fn cso_subsample(
    pool: &Dataset,
    query: &[f64],
    kernel: KernelKind,
    n_sub: usize,
    seed: u64,
) -> Result<ScenarioSet> {
    let zs = pool.contexts();
    let durations = pool.durations();
    let mut samplers = Vec::with_capacity(query.len());
    for (k, &zq) in query.iter().enumerate() {
        let w = kernel_weights(&zs, zq, kernel).map_err(|e| match e {
            Error::NoMass { .. } => Error::NoMass { slot: Some(k + 1) },
            other => other,
        })?;
        samplers.push(WeightedIndex::new(w.as_slice()).map_err(|_| Error::NoMass { slot: Some(k + 1) })?);
    }
    draw_joint(&samplers, &durations, n_sub, seed)
}

/// As [`cso_subsample`] with every record eligible for every slot.
pub fn saa_subsample(pool: &Dataset, n: usize, n_sub: usize, seed: u64) -> Result<ScenarioSet> {
    if pool.is_empty() {
        return Err(Error::NoMass { slot: Some(1) });
    }
    let uniform = WeightedIndex::new(vec![1.0; pool.len()]).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    draw_joint(&vec![uniform; n], &pool.durations(), n_sub, seed)
}

fn draw_joint(samplers: &[WeightedIndex<f64>], durations: &[f64], n_sub: usize, seed: u64) -> Result<ScenarioSet> {
    if n_sub == 0 {
        return Err(Error::InvalidArgument("sub-sample size must be positive".into()));
    }
    let mut rng = stream_rng(seed, Stream::Subsample, 0);
    let scenarios = (0..n_sub).map(|_| samplers.iter().map(|d| durations[d.sample(&mut rng)]).collect()).collect();
    ScenarioSet::uniform(scenarios)
}

/// Scenarios drawn from the conditional law at the configured predictor
/// (or from the independent-means law).
pub fn true_scenarios(config: &GenConfig, n_sub: usize, seed: u64) -> Result<ScenarioSet> {
    let (means, sds) = config.slot_moments()?;
    let laws: Vec<LogNormal<f64>> = means.iter().zip(&sds).map(|(m, s)| lognormal(*m, *s)).collect::<Result<_>>()?;
    let mut rng = stream_rng(seed, Stream::TrueDraws, 0);
    let scenarios = (0..n_sub).map(|_| laws.iter().map(|d| d.sample(&mut rng)).collect()).collect();
    ScenarioSet::uniform(scenarios)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationSet {
    #[default]
    None,
    /// Variance ×1.5, applied as sd ×√1.5.
    #[serde(rename = "set1")]
    SetI,
    /// Mean ×1.2 with the sd unchanged.
    #[serde(rename = "set2")]
    SetII,
}

impl PerturbationSet {
    pub const ALL: [PerturbationSet; 3] = [PerturbationSet::None, PerturbationSet::SetI, PerturbationSet::SetII];

    pub fn apply(&self, mean: f64, sd: f64) -> (f64, f64) {
        match self {
            PerturbationSet::None => (mean, sd),
            PerturbationSet::SetI => (mean, sd * 1.5f64.sqrt()),
            PerturbationSet::SetII => (mean * 1.2, sd),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PerturbationSet::None => "none",
            PerturbationSet::SetI => "set1",
            PerturbationSet::SetII => "set2",
        }
    }
}

impl std::str::FromStr for PerturbationSet {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "set1" => Ok(Self::SetI),
            "set2" => Ok(Self::SetII),
            other => Err(Error::InvalidArgument(format!("unknown perturbation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OosSummary {
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub p95: f64,
    pub p99: f64,
}

/// Costs of `schedule` on `n_oos` fresh draws from the (perturbed) true law.
pub fn out_of_sample(
    schedule: &Schedule,
    instance: &AspInstance,
    config: &GenConfig,
    perturbation: PerturbationSet,
    n_oos: usize,
    seed: u64,
) -> Result<(Vec<f64>, OosSummary)> {
    schedule.validate(instance)?;
    if n_oos == 0 {
        return Err(Error::InvalidArgument("out-of-sample size must be positive".into()));
    }
    let (means, sds) = config.slot_moments()?;
    if means.len() != instance.n {
        return Err(Error::DimensionMismatch(format!("config has n = {}, instance {}", means.len(), instance.n)));
    }
    let laws: Vec<LogNormal<f64>> = means
        .iter()
        .zip(&sds)
        .map(|(m, s)| {
            let (m, s) = perturbation.apply(*m, *s);
            lognormal(m, s)
        })
        .collect::<Result<_>>()?;
    let mut rng = stream_rng(seed, Stream::OutOfSample, 0);
    let mut s = vec![0.0; instance.n];
    let costs: Vec<f64> = (0..n_oos)
        .map(|_| {
            for (v, d) in s.iter_mut().zip(&laws) {
                *v = d.sample(&mut rng);
            }
            recourse_cost(instance, &schedule.x, &s)
        })
        .collect();
    let summary = summarize(&costs)?;
    Ok((costs, summary))
}

pub fn summarize(costs: &[f64]) -> Result<OosSummary> {
    let w = vec![1.0 / costs.len() as f64; costs.len()];
    let q = |tau: f64| weighted_quantile(costs, &w, tau).map(|r| r.0);
    Ok(OosSummary {
        mean: costs.iter().sum::<f64>() / costs.len() as f64,
        p50: q(0.5)?,
        p90: q(0.9)?,
        p95: q(0.95)?,
        p99: q(0.99)?,
    })
}

/// `min_x Σ w_i f(x, ξ^i)` by single-cut outer linearisation: each round
/// adds the cut `θ ≥ Σ w_i y_i·(s^i − x)` from the optimal duals at the
/// current point, until the cut model and the true value agree.
pub fn solve_expectation(instance: &AspInstance, scenarios: &ScenarioSet) -> Result<Schedule> {
    const MAX_ROUNDS: usize = 20_000;
    let n = instance.n;
    if scenarios.dim() != n {
        return Err(Error::DimensionMismatch(format!("scenarios have {} slots, instance {n}", scenarios.dim())));
    }
    let w = scenarios.weights();
    let evaluate = |x: &[f64]| -> Result<(f64, Vec<f64>, f64)> {
        // Value, subgradient coefficient on x, and constant term of the cut.
        let parts: Vec<Result<(f64, Vec<f64>, f64)>> = crate::par::map_range(scenarios.len(), |i| {
            let s = scenarios.scenario(i);
            let (_, v) = crate::asp::optimal_dual_or_lp(instance, x, s)?;
            let c: f64 = v.y.iter().zip(s).map(|(y, s)| y * s).sum();
            Ok((recourse_cost(instance, x, s), v.y, c))
        });
        let mut val = 0.0;
        let mut grad = vec![0.0; n];
        let mut cst = 0.0;
        for (i, p) in parts.into_iter().enumerate() {
            let (f, y, c) = p?;
            val += w[i] * f;
            cst += w[i] * c;
            for (g, y) in grad.iter_mut().zip(&y) {
                *g += w[i] * y;
            }
        }
        Ok((val, grad, cst))
    };
    let mut x = Schedule::uniform(instance).x;
    let mut best = (f64::INFINITY, x.clone());
    let mut cuts: Vec<(Vec<f64>, f64)> = Vec::new();
    for _ in 0..MAX_ROUNDS {
        let (val, grad, cst) = evaluate(&x)?;
        if val < best.0 {
            best = (val, x.clone());
        }
        cuts.push((grad, cst));
        // min θ, θ + ḡ·x ≥ c̄, Σx = T, x ≥ 0, θ ≥ 0 (costs are nonnegative).
        let mut lp = LpProblem::new();
        for _ in 0..n {
            lp.add_var(0.0, 0.0, f64::INFINITY);
        }
        let theta = lp.add_var(1.0, 0.0, f64::INFINITY);
        lp.add_constraint((0..n).map(|j| (j, 1.0)).collect(), Cmp::Eq, instance.horizon);
        for (g, c) in &cuts {
            let mut coeffs: Vec<(usize, f64)> = g.iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect();
            coeffs.push((theta, 1.0));
            lp.add_constraint(coeffs, Cmp::Ge, *c);
        }
        let sol = match lp_solve(&lp)? {
            LpOutcome::Optimal(s) => s,
            other => return Err(Error::Model(format!("expectation master ended {other:?}"))),
        };
        let lower = sol.x[theta];
        if best.0 - lower <= 1e-9 * best.0.abs().max(1.0) {
            return Ok(Schedule::projected(best.1, instance));
        }
        x = Schedule::projected(sol.x[..n].to_vec(), instance).x;
    }
    Err(Error::IterationCap { cap: MAX_ROUNDS, iterations: MAX_ROUNDS })
}

/// The expectation problem as one LP with a recourse copy per scenario.
/// Exact but quadratic in size; meant for small scenario sets.
pub fn solve_expectation_extensive(instance: &AspInstance, scenarios: &ScenarioSet) -> Result<(Schedule, f64)> {
    let n = instance.n;
    let mut lp = LpProblem::new();
    let x: Vec<usize> = (0..n).map(|j| lp.add_named_var(format!("x{}", j + 1), 0.0, 0.0, f64::INFINITY)).collect();
    lp.add_constraint(x.iter().map(|&j| (j, 1.0)).collect(), Cmp::Eq, instance.horizon);
    for (i, s) in scenarios.scenarios().iter().enumerate() {
        let wi = scenarios.weights()[i];
        let w: Vec<usize> = (1..=n)
            .map(|k| {
                let c = if k < n { instance.c_w[k] } else { instance.c_o };
                lp.add_var(wi * c, 0.0, f64::INFINITY)
            })
            .collect();
        let u: Vec<usize> = (0..n).map(|k| lp.add_var(wi * instance.c_u[k], 0.0, f64::INFINITY)).collect();
        for k in 0..n {
            let mut coeffs = vec![(w[k], 1.0), (u[k], -1.0), (x[k], 1.0)];
            if k > 0 {
                coeffs.push((w[k - 1], -1.0));
            }
            lp.add_constraint(coeffs, Cmp::Eq, s[k]);
        }
    }
    match lp_solve(&lp)? {
        LpOutcome::Optimal(sol) => Ok((Schedule::projected(sol.x[..n].to_vec(), instance), sol.objective)),
        other => Err(Error::Model(format!("extensive expectation LP ended {other:?}"))),
    }
}
