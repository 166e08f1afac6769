//! `quantsched` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use quantsched::asp::{quantile_objective, scenario_costs, AspInstance, Schedule};
use quantsched::estimator::{weighted_mean, KernelKind};
use quantsched::lab::{
    cso_subsample, generate_pool, out_of_sample, preset, run_experiment, saa_subsample, solve_expectation,
    true_scenarios, write_report, GenConfig, PerturbationSet,
};
use quantsched::sicg::{save_trace, sicg_solve, SicgParams, SicgStatus};
use quantsched::solver::MilpOptions;
use quantsched::twostage::{big_m_bound, build_direct_milp, ScenarioSet};
use quantsched::Error;
use serde::{Deserialize, Serialize};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(
    name = "quantsched",
    version,
    about = "Quantile-objective appointment scheduling",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a historical (z, s) pool and optionally a scenario set from it.
    GenData(GenDataArgs),
    /// Optimise a schedule over a scenario set.
    Solve(SolveArgs),
    /// Out-of-sample costs of a schedule under the true (or perturbed) law.
    Evaluate(EvaluateArgs),
    /// Run a replicated experiment preset.
    Experiment(ExperimentArgs),
    /// Summarise an experiment directory into tables and SVG plots.
    Report(ReportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Sampler {
    Cso,
    Saa,
    True,
}

#[derive(clap::Args, Debug)]
struct GenDataArgs {
    #[arg(long)]
    config: PathBuf,
    /// Pool CSV with columns `z,s`.
    #[arg(long)]
    out: PathBuf,
    /// Also write a scenario set drawn from the pool (or the true law).
    #[arg(long)]
    scenarios: Option<PathBuf>,
    #[arg(long, value_enum)]
    sample: Option<Sampler>,
    #[arg(long)]
    n_sub: Option<usize>,
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum SolveMethod {
    Sicg,
    Milp,
    Expectation,
}

#[derive(clap::Args, Debug)]
struct SolveArgs {
    #[arg(long, value_enum)]
    method: Option<SolveMethod>,
    #[arg(long)]
    tau: Option<f64>,
    /// Relative optimality gap.
    #[arg(long)]
    gap: Option<f64>,
    #[arg(long)]
    scenarios: PathBuf,
    /// Instance JSON, or a config file with an `instance` or `gen` entry.
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Per-iteration SiCG trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Wall-clock budget in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    /// Config file supplying defaults for the flags above.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    schedule: PathBuf,
    /// Config file whose `gen` entry defines the true law.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "none")]
    perturb: String,
    #[arg(long)]
    n_oos: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Summary JSON; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-draw cost CSV.
    #[arg(long)]
    costs: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct ExperimentArgs {
    #[arg(long)]
    preset: String,
    #[arg(long, default_value_t = 20)]
    reps: usize,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Overrides the base seed of every configuration in the preset.
    #[arg(long)]
    seed: Option<u64>,
    /// Per-solve time limit in seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long)]
    gap: Option<f64>,
}

#[derive(clap::Args, Debug)]
struct ReportArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Optional config file shared by the subcommands; flags win on conflict.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    preset: Option<String>,
    #[serde(default, rename = "gen")]
    generation: Option<GenConfig>,
    #[serde(default)]
    instance: Option<AspInstance>,
    #[serde(default)]
    sicg: Option<SicgParams>,
    #[serde(default)]
    method: Option<SolveMethod>,
    #[serde(default)]
    sample: Option<Sampler>,
    #[serde(default)]
    n_sub: Option<usize>,
    #[serde(default)]
    bandwidth: Option<f64>,
    #[serde(default)]
    n_oos: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScheduleFile {
    x: Vec<f64>,
    objective: f64,
    lower_bound: f64,
    gap: f64,
    method: SolveMethod,
    tau: f64,
    seed: u64,
    status: String,
    version: String,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) => match e {
                Error::InvalidArgument(_) => 1,
                Error::Solver(_) | Error::Model(_) | Error::DegenerateDual { .. } | Error::IterationCap { .. } => 3,
                _ => 2,
            },
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "Usage",
            CliError::Core(e) => e.kind(),
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Usage(m) => m.clone(),
            CliError::Core(e) => e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Core(Error::Data(format!("cannot read {}: {e}", path.display()))))?;
    serde_json::from_str(&text).map_err(|e| CliError::Core(Error::Data(format!("{}: {e}", path.display()))))
}

fn load_config(path: Option<&Path>) -> CliResult<ConfigFile> {
    path.map_or(Ok(ConfigFile::default()), read_json)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn gen_config(cfg: &ConfigFile) -> CliResult<GenConfig> {
    if let Some(g) = &cfg.generation {
        return Ok(g.clone());
    }
    if let Some(name) = &cfg.preset {
        return Ok(preset(name)?.remove(0).generation);
    }
    Err(usage("config needs a `gen` entry or a `preset` name"))
}

fn gen_data(a: GenDataArgs) -> CliResult<()> {
    let cfg = load_config(Some(&a.config))?;
    let mut g = gen_config(&cfg)?;
    if let Some(s) = a.seed {
        g.seed = s;
    }
    let pool = generate_pool(&g)?;
    pool.save(&a.out)?;
    if let Some(path) = a.scenarios {
        let n_sub = a.n_sub.or(cfg.n_sub).unwrap_or(1000);
        let h = a.bandwidth.or(cfg.bandwidth).unwrap_or(1.0);
        let set = match a.sample.or(cfg.sample).unwrap_or(Sampler::Cso) {
            Sampler::Cso => {
                let z = g
                    .predictor
                    .contexts(g.n)?
                    .ok_or_else(|| usage("CSO sampling needs a predictor with per-slot characteristics"))?;
                cso_subsample(&pool, &z, KernelKind::naive(h)?, n_sub, g.seed)?
            }
            Sampler::Saa => saa_subsample(&pool, g.n, n_sub, g.seed)?,
            Sampler::True => true_scenarios(&g, n_sub, g.seed)?,
        };
        set.save(path)?;
    }
    Ok(())
}

/// Accepts a bare instance, a config with `instance`, or a config with `gen`.
fn load_instance(path: &Path) -> CliResult<AspInstance> {
    let value: serde_json::Value = read_json(path)?;
    if let Ok(inst) = serde_json::from_value::<AspInstance>(value.clone()) {
        inst.validate()?;
        return Ok(inst);
    }
    let cfg: ConfigFile =
        serde_json::from_value(value).map_err(|e| CliError::Core(Error::Data(format!("{}: {e}", path.display()))))?;
    if let Some(inst) = cfg.instance {
        inst.validate()?;
        return Ok(inst);
    }
    Ok(gen_config(&cfg)?.instance()?)
}

fn solve(a: SolveArgs) -> CliResult<()> {
    let cfg = load_config(a.config.as_deref())?;
    let instance = load_instance(&a.instance)?;
    let scenarios = ScenarioSet::load(&a.scenarios)?;
    let mut params = cfg.sicg.clone().unwrap_or_default();
    if let Some(t) = a.tau {
        params.tau = t;
    }
    if let Some(g) = a.gap {
        params.eps = g;
        params.eps_tilde = params.eps_tilde.min(0.75 * g);
    }
    if let Some(s) = a.seed {
        params.seed = s;
    }
    if a.time_limit.is_some() {
        params.time_limit = a.time_limit;
    }
    let method = a.method.or(cfg.method).unwrap_or(SolveMethod::Sicg);
    let out = match method {
        SolveMethod::Sicg => {
            let res = sicg_solve(&instance, &scenarios, &params)?;
            if let Some(path) = &a.trace {
                save_trace(&res.trace, path)?;
            }
            ScheduleFile {
                x: res.schedule.x,
                objective: res.objective,
                lower_bound: res.lower_bound,
                gap: res.gap,
                method,
                tau: params.tau,
                seed: params.seed,
                status: match res.status {
                    SicgStatus::Converged => "converged",
                    SicgStatus::TimeLimit => "time_limit",
                }
                .into(),
                version: VERSION.into(),
            }
        }
        SolveMethod::Milp => {
            let m = match params.big_m {
                Some(m) => m,
                None => big_m_bound(&instance, &scenarios)?,
            };
            let milp = build_direct_milp(&instance.two_stage(), &scenarios, params.tau, m)?;
            let res = milp.solve(&MilpOptions {
                rel_gap: params.eps,
                time_limit: params.time_limit.map(Duration::from_secs_f64),
                floor: None,
            })?;
            let (sol, _) = res
                .incumbent
                .as_ref()
                .ok_or_else(|| CliError::Core(Error::Model("MILP stopped without an incumbent".into())))?;
            let x = Schedule::projected(milp.x_of(sol).to_vec(), &instance).x;
            let objective = quantile_objective(&instance, &x, &scenarios, params.tau)?.0;
            ScheduleFile {
                x,
                objective,
                lower_bound: res.lower_bound,
                gap: res.gap(),
                method,
                tau: params.tau,
                seed: params.seed,
                status: format!("{:?}", res.status).to_lowercase(),
                version: VERSION.into(),
            }
        }
        SolveMethod::Expectation => {
            let s = solve_expectation(&instance, &scenarios)?;
            let mean = weighted_mean(&scenario_costs(&instance, &s.x, &scenarios), scenarios.weights())?;
            ScheduleFile {
                x: s.x,
                objective: mean,
                lower_bound: mean,
                gap: 0.0,
                method,
                tau: params.tau,
                seed: params.seed,
                status: "optimal".into(),
                version: VERSION.into(),
            }
        }
    };
    write_json(&a.out, &out)
}

fn evaluate(a: EvaluateArgs) -> CliResult<()> {
    let cfg = load_config(Some(&a.config))?;
    let mut g = gen_config(&cfg)?;
    if let Some(s) = a.seed {
        g.seed = s;
    }
    let instance = g.instance()?;
    let file: ScheduleFile = read_json(&a.schedule)?;
    let schedule = Schedule::new(file.x, &instance)?;
    let perturbation: PerturbationSet = a.perturb.parse()?;
    let n_oos = a.n_oos.or(cfg.n_oos).unwrap_or(10_000);
    let (costs, summary) = out_of_sample(&schedule, &instance, &g, perturbation, n_oos, g.seed)?;
    if let Some(path) = &a.costs {
        let mut text = String::from("cost\n");
        for c in &costs {
            text.push_str(&format!("{c}\n"));
        }
        std::fs::write(path, text)?;
    }
    let report = serde_json::json!({
        "perturbation": perturbation,
        "n_oos": n_oos,
        "seed": g.seed,
        "summary": summary,
        "version": VERSION,
    });
    match &a.out {
        Some(path) => write_json(path, &report)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

fn experiment(a: ExperimentArgs) -> CliResult<()> {
    let mut configs = preset(&a.preset)?;
    for c in &mut configs {
        if let Some(s) = a.seed {
            c.generation.seed = s;
        }
        if a.time_limit.is_some() {
            c.sicg.time_limit = a.time_limit;
        }
        if let Some(g) = a.gap {
            c.sicg.eps = g;
            c.sicg.eps_tilde = c.sicg.eps_tilde.min(0.75 * g);
        }
    }
    let report = run_experiment(&configs, a.reps, a.jobs)?;
    report.write_dir(&a.out)?;
    eprintln!(
        "{} schedules and {} out-of-sample rows written to {}",
        report.schedules.len(),
        report.oos.len(),
        a.out.display()
    );
    Ok(())
}

fn report(a: ReportArgs) -> CliResult<()> {
    let summary = write_report(&a.input, &a.out)?;
    for f in &summary.files {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Solve(a) => solve(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Experiment(a) => experiment(a),
        Command::Report(a) => report(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.message(), "exit_code": e.exit_code() });
            eprintln!("{line}");
            ExitCode::from(e.exit_code())
        }
    }
}
