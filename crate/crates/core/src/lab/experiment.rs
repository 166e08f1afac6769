//! Replicated experiment protocol and presets.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{
    cso_subsample, generate_pool, out_of_sample, saa_subsample, solve_expectation, stream_rng, true_scenarios,
    GenConfig, PerturbationSet, Predictor, Stream,
};
use crate::asp::Schedule;
use crate::error::{Error, Result};
use crate::estimator::KernelKind;
use crate::sicg::{save_trace, sicg_solve, SicgParams, SicgStatus, TraceRow};
use crate::twostage::ScenarioSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Cso,
    Saa,
    True,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Cso => "cso",
            Method::Saa => "saa",
            Method::True => "true",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Quantile,
    Mean,
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Objective::Quantile => "quantile",
            Objective::Mean => "mean",
        }
    }
}

/// One model solved in every replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub method: Method,
    pub objective: Objective,
    /// Overrides the config's sub-sample size.
    #[serde(default)]
    pub n_sub: Option<usize>,
    /// Overrides the config's bandwidth.
    #[serde(default)]
    pub bandwidth: Option<f64>,
}

impl Variant {
    pub fn new(method: Method, objective: Objective) -> Self {
        Self { method, objective, n_sub: None, bandwidth: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(rename = "gen")]
    pub generation: GenConfig,
    pub variants: Vec<Variant>,
    #[serde(default = "default_n_sub")]
    pub n_sub: usize,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
    #[serde(default = "default_n_oos")]
    pub n_oos: usize,
    #[serde(default = "default_perturbations")]
    pub perturbations: Vec<PerturbationSet>,
    #[serde(default = "default_sicg")]
    pub sicg: SicgParams,
}

fn default_n_sub() -> usize {
    1000
}
fn default_bandwidth() -> f64 {
    1.0
}
fn default_n_oos() -> usize {
    10_000
}
fn default_perturbations() -> Vec<PerturbationSet> {
    PerturbationSet::ALL.to_vec()
}
/// Experiments stop at a 5% gap or after 30 minutes per solve.
fn default_sicg() -> SicgParams {
    SicgParams { eps: 0.05, eps_tilde: 0.015, time_limit: Some(1800.0), ..SicgParams::default() }
}

fn standard_variants() -> Vec<Variant> {
    let mut v = Vec::new();
    for m in [Method::Cso, Method::Saa, Method::True] {
        for o in [Objective::Quantile, Objective::Mean] {
            v.push(Variant::new(m, o));
        }
    }
    v
}

fn contextual(name: String, predictor: &str, nu: f64, r: f64, variants: Vec<Variant>) -> ExperimentConfig {
    ExperimentConfig {
        name,
        generation: GenConfig {
            n: 6,
            nu,
            r,
            mu_base: super::DEFAULT_MU,
            predictor: Predictor::Named(predictor.into()),
            pool_size: 10_000,
            seed: 2024,
        },
        variants,
        n_sub: default_n_sub(),
        bandwidth: default_bandwidth(),
        n_oos: default_n_oos(),
        perturbations: default_perturbations(),
        sicg: default_sicg(),
    }
}

fn timing(n: usize, name: String) -> ExperimentConfig {
    let variants = [200, 500, 1000]
        .into_iter()
        .map(|k| Variant { n_sub: Some(k), ..Variant::new(Method::True, Objective::Quantile) })
        .collect();
    ExperimentConfig {
        name,
        generation: GenConfig {
            n,
            nu: 0.2,
            r: 0.5,
            mu_base: super::DEFAULT_MU,
            predictor: Predictor::Named("iid".into()),
            pool_size: 1,
            seed: 2024,
        },
        variants,
        n_sub: 1000,
        bandwidth: default_bandwidth(),
        n_oos: default_n_oos(),
        perturbations: Vec::new(),
        sicg: SicgParams { time_limit: Some(3600.0), ..SicgParams::default() },
    }
}

/// Names accepted by [`preset`].
pub fn preset_names() -> Vec<String> {
    let mut out = Vec::new();
    for p in ["a", "b", "c"] {
        for nu in ["2", "5"] {
            for r in ["5", "10"] {
                out.push(format!("table5-{p}-nu{nu}-R{r}"));
            }
        }
    }
    out.extend(["figure2", "subsample", "bandwidth", "timing-n6", "timing-n8"].map(String::from));
    out
}

/// Expands a preset name into the configurations it runs.
pub fn preset(name: &str) -> Result<Vec<ExperimentConfig>> {
    let unknown = || Error::InvalidArgument(format!("unknown preset `{name}`; known: {}", preset_names().join(", ")));
    if let Some(rest) = name.strip_prefix("table5-") {
        let parts: Vec<&str> = rest.split('-').collect();
        let [p, nu, r] = parts[..] else { return Err(unknown()) };
        if !["a", "b", "c"].contains(&p) {
            return Err(unknown());
        }
        let nu = match nu {
            "nu2" => 0.2,
            "nu5" => 0.5,
            _ => return Err(unknown()),
        };
        let r = match r {
            "R5" => 0.5,
            "R10" => 1.0,
            _ => return Err(unknown()),
        };
        return Ok(vec![contextual(name.to_string(), p, nu, r, standard_variants())]);
    }
    match name {
        "figure2" => Ok(["a", "b", "c"]
            .iter()
            .map(|p| {
                let v = [Method::Cso, Method::Saa, Method::True].map(|m| Variant::new(m, Objective::Quantile)).to_vec();
                ExperimentConfig { perturbations: Vec::new(), ..contextual(format!("figure2-{p}"), p, 0.2, 0.5, v) }
            })
            .collect()),
        "subsample" => {
            let v = [10, 20, 50, 100, 200, 500, 1000]
                .into_iter()
                .flat_map(|k| {
                    [Method::Cso, Method::Saa]
                        .map(|m| Variant { n_sub: Some(k), ..Variant::new(m, Objective::Quantile) })
                })
                .collect();
            Ok(vec![ExperimentConfig {
                perturbations: vec![PerturbationSet::None],
                ..contextual(name.into(), "b", 0.2, 0.5, v)
            }])
        }
        "bandwidth" => {
            let v = (1..=11)
                .flat_map(|k| {
                    let h = 0.2 * k as f64;
                    [Objective::Quantile, Objective::Mean]
                        .map(|o| Variant { bandwidth: Some((h * 10.0).round() / 10.0), ..Variant::new(Method::Cso, o) })
                })
                .collect();
            Ok(vec![ExperimentConfig {
                perturbations: vec![PerturbationSet::None],
                ..contextual(name.into(), "b", 0.2, 0.5, v)
            }])
        }
        "timing-n6" => Ok(vec![timing(6, name.into())]),
        "timing-n8" => Ok(vec![timing(8, name.into())]),
        _ => Err(unknown()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub preset: String,
    pub rep: usize,
    pub method: Method,
    pub objective: Objective,
    pub n_sub: usize,
    pub bandwidth: f64,
    pub x: Vec<f64>,
    /// Quantile or mean of the in-sample costs at `x`.
    pub in_sample: f64,
    /// Certified relative gap; zero for the expectation LP.
    pub gap: f64,
    pub converged: bool,
    pub seconds: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OosRow {
    pub preset: String,
    pub rep: usize,
    pub method: Method,
    pub objective: Objective,
    pub n_sub: usize,
    pub bandwidth: f64,
    pub perturbation: PerturbationSet,
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub p95: f64,
    pub p99: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExperimentReport {
    pub schedules: Vec<ScheduleRow>,
    pub oos: Vec<OosRow>,
    pub traces: Vec<(String, Vec<TraceRow>)>,
    pub configs: Vec<ExperimentConfig>,
    pub replications: usize,
}

struct RepOutput {
    schedules: Vec<ScheduleRow>,
    oos: Vec<OosRow>,
    traces: Vec<(String, Vec<TraceRow>)>,
}

fn rep_seed(base: u64, rep: usize) -> u64 {
    stream_rng(base, Stream::Pool, rep as u64 + 1).next_u64()
}

fn run_replication(cfg: &ExperimentConfig, rep: usize) -> Result<RepOutput> {
    let seed = rep_seed(cfg.generation.seed, rep);
    let gen = GenConfig { seed, ..cfg.generation.clone() };
    let instance = gen.instance()?;
    let contexts = gen.predictor.contexts(gen.n)?;
    let needs_pool = cfg.variants.iter().any(|v| v.method != Method::True);
    let pool = if needs_pool { Some(generate_pool(&gen)?) } else { None };

    // Scenario sets are shared across objectives so comparisons are paired.
    let mut sets: BTreeMap<(Method, usize, u64), ScenarioSet> = BTreeMap::new();
    let mut out = RepOutput { schedules: Vec::new(), oos: Vec::new(), traces: Vec::new() };
    for v in &cfg.variants {
        let n_sub = v.n_sub.unwrap_or(cfg.n_sub);
        let h = v.bandwidth.unwrap_or(cfg.bandwidth);
        let key = (v.method, n_sub, h.to_bits());
        let sub_seed = seed ^ (n_sub as u64).rotate_left(17) ^ h.to_bits().rotate_left(29);
        if let std::collections::btree_map::Entry::Vacant(e) = sets.entry(key) {
            let set = match v.method {
                Method::Cso => {
                    let z = contexts.as_ref().ok_or_else(|| {
                        Error::InvalidArgument("CSO needs per-slot characteristics, not independent means".into())
                    })?;
                    cso_subsample(pool.as_ref().expect("pool generated"), z, KernelKind::naive(h)?, n_sub, sub_seed)?
                }
                Method::Saa => saa_subsample(pool.as_ref().expect("pool generated"), gen.n, n_sub, sub_seed)?,
                Method::True => true_scenarios(&gen, n_sub, sub_seed)?,
            };
            e.insert(set);
        }
        let set = &sets[&key];
        let started = Instant::now();
        let (schedule, in_sample, gap, converged, sicg_seed) = match v.objective {
            Objective::Quantile => {
                let params = SicgParams { seed: stream_rng(seed, Stream::Sicg, 0).next_u64(), ..cfg.sicg.clone() };
                let res = sicg_solve(&instance, set, &params)?;
                let tag = format!("{}_rep{rep}_{}_{}_n{n_sub}_h{}", cfg.name, v.method.name(), v.objective.name(), h);
                out.traces.push((tag, res.trace));
                (res.schedule, res.objective, res.gap, res.status == SicgStatus::Converged, params.seed)
            }
            Objective::Mean => {
                let s = solve_expectation(&instance, set)?;
                let costs = crate::asp::scenario_costs(&instance, &s.x, set);
                let mean = costs.iter().zip(set.weights()).map(|(c, w)| c * w).sum();
                (s, mean, 0.0, true, 0)
            }
        };
        let seconds = started.elapsed().as_secs_f64();
        for (k, p) in cfg.perturbations.iter().enumerate() {
            // Common random numbers across variants within a replication.
            let (_, s) = out_of_sample(&schedule, &instance, &gen, *p, cfg.n_oos, seed.wrapping_add(k as u64))?;
            out.oos.push(OosRow {
                preset: cfg.name.clone(),
                rep,
                method: v.method,
                objective: v.objective,
                n_sub,
                bandwidth: h,
                perturbation: *p,
                mean: s.mean,
                p50: s.p50,
                p90: s.p90,
                p95: s.p95,
                p99: s.p99,
            });
        }
        out.schedules.push(ScheduleRow {
            preset: cfg.name.clone(),
            rep,
            method: v.method,
            objective: v.objective,
            n_sub,
            bandwidth: h,
            x: Schedule::projected(schedule.x, &instance).x,
            in_sample,
            gap,
            converged,
            seconds,
            seed: sicg_seed,
        });
    }
    Ok(out)
}

/// Runs `replications` of every configuration, fanning replications out over
/// at most `jobs` threads (`0` keeps the default pool). Rows are ordered by
/// configuration, replication and variant regardless of scheduling.
pub fn run_experiment(configs: &[ExperimentConfig], replications: usize, jobs: usize) -> Result<ExperimentReport> {
    if replications == 0 {
        return Err(Error::InvalidArgument("at least one replication is required".into()));
    }
    for c in configs {
        c.generation.validate()?;
        c.sicg.validate()?;
        if c.variants.is_empty() {
            return Err(Error::InvalidArgument(format!("configuration `{}` has no variants", c.name)));
        }
    }
    let tasks: Vec<(usize, usize)> = (0..configs.len()).flat_map(|c| (0..replications).map(move |r| (c, r))).collect();
    let results = crate::par::with_jobs(jobs, || crate::par::map(&tasks, |&(c, r)| run_replication(&configs[c], r)));
    let mut report = ExperimentReport { configs: configs.to_vec(), replications, ..Default::default() };
    for res in results {
        let r = res?;
        report.schedules.extend(r.schedules);
        report.oos.extend(r.oos);
        report.traces.extend(r.traces);
    }
    Ok(report)
}

impl ExperimentReport {
    /// Writes `schedules.csv`, `oos_summary.csv`, `trace/*.csv` and `metadata.json`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir.join("trace"))?;
        let n = self.schedules.iter().map(|r| r.x.len()).max().unwrap_or(0);
        let mut w = csv::Writer::from_path(dir.join("schedules.csv"))?;
        let mut header: Vec<String> =
            ["preset", "rep", "method", "objective", "n_sub", "bandwidth"].map(String::from).to_vec();
        header.extend((1..=n).map(|k| format!("x_{k}")));
        header.extend(["in_sample", "gap", "converged", "seconds", "seed"].map(String::from));
        w.write_record(&header)?;
        for r in &self.schedules {
            let mut row = vec![
                r.preset.clone(),
                r.rep.to_string(),
                r.method.name().into(),
                r.objective.name().into(),
                r.n_sub.to_string(),
                format_float(r.bandwidth),
            ];
            row.extend((0..n).map(|k| r.x.get(k).map_or(String::new(), |v| format_float(*v))));
            row.extend([
                format_float(r.in_sample),
                format_float(r.gap),
                r.converged.to_string(),
                format!("{:.3}", r.seconds),
                r.seed.to_string(),
            ]);
            w.write_record(&row)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("oos_summary.csv"))?;
        for r in &self.oos {
            w.serialize(r)?;
        }
        w.flush()?;
        for (tag, rows) in &self.traces {
            save_trace(rows, dir.join("trace").join(format!("{tag}.csv")))?;
        }
        let meta = serde_json::json!({
            "version": env!("CARGO_PKG_VERSION"),
            "replications": self.replications,
            "sampling": "per-slot independent draws with replacement",
            "oos_percentile": "weighted quantile with uniform weights",
            "configs": self.configs,
        });
        std::fs::write(dir.join("metadata.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(())
    }

    /// Reads back `schedules.csv` and `oos_summary.csv`.
    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut rdr = csv::Reader::from_path(dir.join("schedules.csv"))?;
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| Error::Data(format!("schedules.csv lacks `{name}`")))
        };
        let xs: Vec<usize> = headers.iter().enumerate().filter(|(_, h)| h.starts_with("x_")).map(|(i, _)| i).collect();
        let (c_preset, c_rep, c_method, c_obj, c_nsub, c_h) =
            (col("preset")?, col("rep")?, col("method")?, col("objective")?, col("n_sub")?, col("bandwidth")?);
        let (c_in, c_gap, c_conv, c_sec, c_seed) =
            (col("in_sample")?, col("gap")?, col("converged")?, col("seconds")?, col("seed")?);
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|e| Error::Data(format!("bad {what} `{s}`: {e}")))
        };
        let mut schedules = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let method = serde_json::from_value(serde_json::Value::String(row[c_method].into()))
                .map_err(|_| Error::Data(format!("bad method `{}`", &row[c_method])))?;
            let objective = serde_json::from_value(serde_json::Value::String(row[c_obj].into()))
                .map_err(|_| Error::Data(format!("bad objective `{}`", &row[c_obj])))?;
            schedules.push(ScheduleRow {
                preset: row[c_preset].into(),
                rep: parse(&row[c_rep], "rep")? as usize,
                method,
                objective,
                n_sub: parse(&row[c_nsub], "n_sub")? as usize,
                bandwidth: parse(&row[c_h], "bandwidth")?,
                x: xs.iter().filter(|&&i| !row[i].is_empty()).map(|&i| parse(&row[i], "x")).collect::<Result<_>>()?,
                in_sample: parse(&row[c_in], "in_sample")?,
                gap: parse(&row[c_gap], "gap")?,
                converged: &row[c_conv] == "true",
                seconds: parse(&row[c_sec], "seconds")?,
                seed: row[c_seed].parse().map_err(|_| Error::Data("bad seed".into()))?,
            });
        }
        let oos_path = dir.join("oos_summary.csv");
        let mut oos = Vec::new();
        if oos_path.exists() {
            for r in csv::Reader::from_path(oos_path)?.deserialize() {
                oos.push(r?);
            }
        }
        Ok(Self { schedules, oos, ..Default::default() })
    }
}

fn format_float(v: f64) -> String {
    v.to_string()
}
