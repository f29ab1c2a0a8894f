use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use reflsde::bel::{
    estimate_bel, estimate_fd_payoff, estimate_pathwise, variance_report, EstimatorReport, SimulationSetup,
};
use reflsde::config::{from_table, normalize_keys, parse_table, sha256_hex, to_toml, ExperimentConfig};
use reflsde::drift::{mollified_drift, DriftFunction};
use reflsde::experiments::{num, run_experiment, Table};
use reflsde::grid_rng::{SeedSpec, TimeGrid};
use reflsde::payoff::Payoff;
use reflsde::pde::{pde_derivative, solve_kolmogorov, SpaceGrid};
use reflsde::sde::{batch_moments, CoefficientSet, PenalizationParams, Scheme};
use reflsde::sensitivity::{second_moment_sweep, SweepSettings};
use reflsde::skorohod::{penalization_gap, DrivingFunction};
use reflsde::Error;

mod keys;
use keys::{GreeksKeys, PdeKeys, SimulateKeys, SkorohodKeys, SweepKeys};

#[derive(Parser)]
#[command(name = "reflsde", version, about = "Reflected SDE lab: simulation, sensitivities, PDE oracle")]
struct Cli {
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Flat TOML file of keys for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Penalized-ODE gap table against the explicit reflection map.
    Skorohod(SkorohodArgs),
    /// Moments of X, X^2 and the local time.
    Simulate(SimulateArgs),
    /// Second moment of the tangent across mollification levels.
    SensitivitySweep(SweepArgs),
    /// Monte Carlo estimate of d/dx E[u0(X_t(x))].
    Greeks(GreeksArgs),
    /// Finite-difference Kolmogorov solution and derivative queries.
    Pde(PdeArgs),
    /// Registered experiments.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
}

#[derive(Subcommand)]
enum ExperimentCommand {
    /// Run an experiment; exit code 1 if any registered criterion fails.
    Run {
        name: String,
        /// Override a key, `key=value` in TOML syntax (repeatable).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Print an experiment's default config.
    Defaults { name: String },
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct SkorohodArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    x0: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dt: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilons: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    driver: Option<String>,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct SimulateArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    x0: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    t: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dt: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    scheme: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mollifier_index: Option<u32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    drift: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    drift_mollification: Option<u32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    drift_cutoff: Option<u32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_paths: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    report_every: Option<usize>,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct SweepArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    x0: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    t: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dt: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mollifier_index: Option<u32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    drift: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma: Option<String>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    levels: Option<Vec<u32>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    cutoff_index: Option<u32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    lipschitz_range: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_paths: Option<usize>,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct GreeksArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    method: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    payoff: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    x0: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    t: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dt: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mollifier_index: Option<u32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    drift: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    drift_mollification: Option<u32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    drift_cutoff: Option<u32>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_paths: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    h: Option<f64>,
}

#[derive(Args, Serialize)]
#[serde(rename_all = "kebab-case")]
struct PdeArgs {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dx: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dt: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    x_max: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    t: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    payoff: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    drift: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma: Option<String>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    x: Option<Vec<f64>>,
}

/// Usage problems exit with 2, criterion failures with 1.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidArgument(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<ExitCode, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(&cli) {
        Ok(code) => code,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Skorohod(a) => skorohod(&merge(cli, a, true)?, cli.out.as_deref()),
        Command::Simulate(a) => simulate(&merge(cli, a, true)?, cli.out.as_deref()),
        Command::SensitivitySweep(a) => sweep(&merge(cli, a, true)?, cli.out.as_deref()),
        Command::Greeks(a) => greeks(&merge(cli, a, true)?, cli.out.as_deref()),
        Command::Pde(a) => pde(&merge(cli, a, false)?, cli.out.as_deref()),
        Command::Experiment(ExperimentCommand::Run { name, set }) => experiment(cli, name, set),
        Command::Experiment(ExperimentCommand::Defaults { name }) => {
            print!("{}", ExperimentConfig::default_for(name)?.echo()?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn read_config(cli: &Cli) -> Result<Option<String>, Failure> {
    match &cli.config {
        None => Ok(None),
        Some(p) => fs::read_to_string(p)
            .map(Some)
            .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", p.display()))),
    }
}

/// Config file, then subcommand flags, then `--seed`.
fn merge<K: DeserializeOwned, A: Serialize>(cli: &Cli, args: &A, seeded: bool) -> Result<K, Failure> {
    let mut table = normalize_keys(parse_table(read_config(cli)?.as_deref())?)?;
    let flags = toml::Table::try_from(args).map_err(|e| Failure::Runtime(e.to_string()))?;
    table.extend(flags);
    if let Some(seed) = cli.seed {
        if !seeded {
            return Err(Failure::Usage("--seed does not apply to this subcommand".into()));
        }
        table.insert("seed".into(), toml::Value::Integer(seed_to_toml(seed)?));
    }
    Ok(from_table(table)?)
}

fn seed_to_toml(seed: u64) -> Result<i64, Failure> {
    i64::try_from(seed).map_err(|_| Failure::Usage(format!("seed {seed} does not fit in a TOML integer")))
}

/// Config echo plus its hash, shared by every JSON document.
fn echo<K: Serialize>(keys: &K) -> Result<(String, String, serde_json::Value), Failure> {
    let toml_text = to_toml(keys)?;
    let hash = sha256_hex(toml_text.as_bytes());
    let value = serde_json::to_value(keys).map_err(|e| Failure::Runtime(e.to_string()))?;
    Ok((toml_text, hash, value))
}

fn to_json(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values serialize");
    s.push('\n');
    s
}

/// Writes `files` under `out` (with the config echo), or prints `stdout`.
fn emit(out: Option<&Path>, config_toml: &str, files: &[(&str, String)], stdout: &str) -> Result<(), Failure> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("config.toml"), config_toml)?;
            for (name, body) in files {
                fs::write(dir.join(name), body)?;
            }
        }
        None => print!("{stdout}"),
    }
    Ok(())
}

fn coefficients(drift: &str, sigma: &str, mollification: u32, cutoff: u32) -> Result<CoefficientSet, Failure> {
    let coeffs = CoefficientSet::from_presets(drift, sigma)?;
    if mollification == 0 {
        return Ok(coeffs);
    }
    let smooth = mollified_drift(&DriftFunction::from_preset(drift)?, mollification, cutoff)?;
    Ok(coeffs.with_drift(smooth, format!("mollified:{drift}:{mollification},{cutoff}")))
}

fn params(epsilon: f64, index: u32) -> Result<PenalizationParams, Failure> {
    Ok(PenalizationParams::new(epsilon, (index > 0).then_some(index))?)
}

fn skorohod(k: &SkorohodKeys, out: Option<&Path>) -> CmdResult {
    let grid = TimeGrid::with_step(1.0, k.dt)?;
    let g = match k.driver.split_once(':') {
        None if k.driver == "random" => DrivingFunction::random_fourier(grid, &mut SeedSpec::new(k.seed, 0).rng()),
        Some(("fourier", coeffs)) => {
            let a = coeffs
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| Failure::Usage(format!("bad driver {:?}", k.driver)))?;
            DrivingFunction::fourier(grid, &a)
        }
        _ => return Err(Failure::Usage(format!("unknown driver {:?}; use random or fourier:a1,a2,...", k.driver))),
    };
    let rows = penalization_gap(k.x0, &g, &k.epsilons)?;
    let mut table = Table::new(&["epsilon", "sup_gap", "sup_negative_part", "complementarity_residual"]);
    for r in &rows {
        table.push(vec![num(r.epsilon), num(r.sup_gap), num(r.sup_negative_part), num(r.complementarity_residual)]);
    }
    let (toml_text, hash, config) = echo(k)?;
    let doc = json!({ "command": "skorohod", "config": config, "config_hash": hash, "gdot_sup": g.gdot_sup(), "rows": rows });
    let csv = table.to_csv();
    emit(out, &toml_text, &[("skorohod.csv", csv.clone()), ("skorohod.json", to_json(&doc))], &csv)?;
    Ok(ExitCode::SUCCESS)
}

fn simulate(k: &SimulateKeys, out: Option<&Path>) -> CmdResult {
    let coeffs = coefficients(&k.drift, &k.sigma, k.drift_mollification, k.drift_cutoff)?;
    let scheme = match k.scheme.as_str() {
        "penalized" => Scheme::Penalized(params(k.epsilon, k.mollifier_index)?),
        "exact" => Scheme::ExactReflection,
        other => return Err(Failure::Usage(format!("unknown scheme {other:?}; use penalized or exact"))),
    };
    let grid = TimeGrid::with_step(k.t, k.dt)?;
    let report = batch_moments(k.x0, &coeffs, &scheme, grid, k.n_paths, k.seed, k.report_every)?;
    let mut table = Table::new(&["t", "mean_x", "stderr_x", "mean_L", "stderr_L"]);
    for r in &report.rows {
        table.push(vec![num(r.t), num(r.x.mean), num(r.x.stderr), num(r.local_time.mean), num(r.local_time.stderr)]);
    }
    let (toml_text, hash, config) = echo(k)?;
    let doc = json!({ "command": "simulate", "config": config, "config_hash": hash, "report": report });
    let csv = table.to_csv();
    emit(out, &toml_text, &[("simulate.csv", csv.clone()), ("simulate.json", to_json(&doc))], &csv)?;
    Ok(ExitCode::SUCCESS)
}

fn sweep(k: &SweepKeys, out: Option<&Path>) -> CmdResult {
    let base = DriftFunction::from_preset(&k.drift)?;
    let coeffs = CoefficientSet::from_presets(&k.drift, &k.sigma)?;
    let settings = SweepSettings {
        x0: k.x0,
        grid: TimeGrid::with_step(k.t, k.dt)?,
        params: params(k.epsilon, k.mollifier_index)?,
        cutoff_index: k.cutoff_index,
        n_paths: k.n_paths,
        master_seed: k.seed,
        lipschitz_range: k.lipschitz_range,
    };
    let rows = second_moment_sweep(&base, &k.levels, &coeffs, &settings)?;
    let mut table = Table::new(&["j", "lipschitz_estimate", "second_moment", "stderr"]);
    for r in &rows {
        table.push(vec![r.j.to_string(), num(r.lipschitz_estimate), num(r.second_moment), num(r.stderr)]);
    }
    let (toml_text, hash, config) = echo(k)?;
    let doc = json!({ "command": "sensitivity-sweep", "config": config, "config_hash": hash, "rows": rows });
    let csv = table.to_csv();
    emit(out, &toml_text, &[("sensitivity_sweep.csv", csv.clone()), ("sensitivity_sweep.json", to_json(&doc))], &csv)?;
    Ok(ExitCode::SUCCESS)
}

fn greeks(k: &GreeksKeys, out: Option<&Path>) -> CmdResult {
    let payoff = Payoff::from_preset(&k.payoff)?;
    let setup = SimulationSetup {
        coeffs: coefficients(&k.drift, &k.sigma, k.drift_mollification, k.drift_cutoff)?,
        params: params(k.epsilon, k.mollifier_index)?,
        dt: k.dt,
        n_paths: k.n_paths,
        master_seed: k.seed,
    };
    let run = |method: &str| -> Result<EstimatorReport, Failure> {
        Ok(match method {
            "bel" => estimate_bel(&payoff, k.x0, k.t, &setup, false)?,
            "bel-cv" => estimate_bel(&payoff, k.x0, k.t, &setup, true)?,
            "pathwise" => estimate_pathwise(&payoff, k.x0, k.t, &setup)?,
            "fd" => estimate_fd_payoff(&payoff, k.x0, k.t, &setup, k.h)?,
            other => {
                return Err(Failure::Usage(format!(
                    "unknown method {other:?}; use bel, bel-cv, pathwise, fd or all"
                )))
            }
        })
    };
    let (toml_text, hash, config) = echo(k)?;
    let doc = if k.method == "all" {
        let mut reports = vec![run("bel")?, run("bel-cv")?];
        if payoff.derivative(0.0).is_some() {
            reports.push(run("pathwise")?);
        }
        reports.push(run("fd")?);
        let table = variance_report(&reports)?;
        json!({ "command": "greeks", "config": config, "config_hash": hash, "reports": reports, "variance": table })
    } else {
        let report = run(&k.method)?;
        json!({ "command": "greeks", "config": config, "config_hash": hash, "report": report })
    };
    let text = to_json(&doc);
    emit(out, &toml_text, &[("greeks.json", text.clone())], &text)?;
    Ok(ExitCode::SUCCESS)
}

fn pde(k: &PdeKeys, out: Option<&Path>) -> CmdResult {
    let payoff = Payoff::from_preset(&k.payoff)?;
    let coeffs = CoefficientSet::from_presets(&k.drift, &k.sigma)?;
    let x_hi = k.x.iter().copied().fold(0.0, f64::max);
    let x_max = k.x_max.unwrap_or_else(|| SpaceGrid::default_x_max(x_hi, k.t, coeffs.sigma.sup()));
    if k.dt.is_nan() || k.dt <= 0.0 {
        return Err(Failure::Usage(format!("dt must be positive, got {}", k.dt)));
    }
    let grid = SpaceGrid::with_step(x_max, k.dx)?;
    let steps = (k.t / k.dt).round().max(1.0) as usize;
    let sol = solve_kolmogorov(&payoff, &coeffs, k.t, grid, steps)?;
    let last = sol.times.len() - 1;
    let queries = k
        .x
        .iter()
        .map(|&x| {
            Ok(json!({
                "x": x,
                "u": sol.value_at(last, x)?,
                "derivative": pde_derivative(&sol, last, x)?,
            }))
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let mut table = Table::new(&["x", "u"]);
    for (x, u) in sol.grid.nodes().into_iter().zip(sol.terminal()) {
        table.push(vec![num(x), num(*u)]);
    }
    let (toml_text, hash, config) = echo(k)?;
    let doc = json!({
        "command": "pde",
        "config": config,
        "config_hash": hash,
        "t": k.t,
        "grid": sol.metadata,
        "queries": queries,
    });
    let text = to_json(&doc);
    emit(out, &toml_text, &[("pde.csv", table.to_csv()), ("pde.json", text.clone())], &text)?;
    if sol.metadata.peclet_warning {
        eprintln!("warning: cell Peclet number {:.3} exceeds 2", sol.metadata.max_cell_peclet);
    }
    Ok(ExitCode::SUCCESS)
}

fn experiment(cli: &Cli, name: &str, set: &[String]) -> CmdResult {
    let mut overrides = toml::Table::new();
    for item in set {
        let parsed: toml::Table = item
            .parse()
            .map_err(|e| Failure::Usage(format!("--set {item:?} is not key=value TOML: {e}")))?;
        overrides.extend(parsed);
    }
    if let Some(seed) = cli.seed {
        overrides.insert("seed".into(), toml::Value::Integer(seed_to_toml(seed)?));
    }
    let config = ExperimentConfig::load(name, read_config(cli)?.as_deref(), overrides)?;
    let result = run_experiment(&config)?;
    if let Some(dir) = &cli.out {
        result.write(dir)?;
    } else {
        print!("{}", result.summary_json()?);
    }
    eprint!("{}", result.report());
    Ok(if result.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
