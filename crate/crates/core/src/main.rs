use std::fs::File;
use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use twinmigrate::checks::{run_checks, CheckConfig};
use twinmigrate::env::{Env, EnvConfig};
use twinmigrate::equilibrium::{admm_solve, write_trace_csv, AdmmConfig, EquilibriumReport, InnerSolver};
use twinmigrate::error::{Error, Result};
use twinmigrate::game_model::Scenario;
use twinmigrate::protocol::{serve_tcp, Server};
use twinmigrate::scenario::{load_scenario, sample_scenario, ScenarioSpec, FIG3_SEED};
use twinmigrate::sweep::{run_sweep, write_sweep_csv, SweepAxis, SweepConfig};

const EXIT_ERROR: u8 = 1;
const EXIT_NO_CONVERGENCE: u8 = 2;
const EXIT_NOT_CERTIFIED: u8 = 3;

#[derive(Parser)]
#[command(name = "twinmigrate", version, about = "Bandwidth market for vehicular-twin migration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute and certify the market equilibrium.
    Solve(SolveArgs),
    /// Sweep one scenario parameter and write averaged equilibria as CSV.
    Sweep(SweepArgs),
    /// Run the randomized invariant suites.
    Check(CheckArgs),
    /// Serve the multi-agent environment over line-delimited JSON.
    EnvServe(ServeArgs),
}

#[derive(Args, Default)]
struct SpecArgs {
    /// Load a scenario file instead of sampling one.
    #[arg(long, conflicts_with = "fig3")]
    scenario: Option<PathBuf>,
    /// Use the bundled three-MSP, two-MRP scenario.
    #[arg(long)]
    fig3: bool,
    /// Sampling seed (falls back to TWINMIGRATE_SEED).
    #[arg(long, env = "TWINMIGRATE_SEED")]
    seed: Option<u64>,
    #[arg(long = "n_msps")]
    n_msps: Option<usize>,
    #[arg(long = "n_mrps")]
    n_mrps: Option<usize>,
    #[arg(long = "mean_alpha")]
    mean_alpha: Option<f64>,
    #[arg(long = "sd_alpha")]
    sd_alpha: Option<f64>,
    #[arg(long = "mean_beta")]
    mean_beta: Option<f64>,
    #[arg(long = "sd_beta")]
    sd_beta: Option<f64>,
    #[arg(long = "mean_social")]
    mean_social: Option<f64>,
    #[arg(long = "sd_social")]
    sd_social: Option<f64>,
    #[arg(long = "mean_cost")]
    mean_cost: Option<f64>,
    #[arg(long = "sd_cost")]
    sd_cost: Option<f64>,
    #[arg(long = "data_size_mb_min")]
    data_size_mb_min: Option<f64>,
    #[arg(long = "data_size_mb_max")]
    data_size_mb_max: Option<f64>,
    #[arg(long = "cpu_megacycles_mean")]
    cpu_megacycles_mean: Option<f64>,
    #[arg(long = "cpu_megacycles_sd")]
    cpu_megacycles_sd: Option<f64>,
    #[arg(long = "max_delay_s_min")]
    max_delay_s_min: Option<f64>,
    #[arg(long = "max_delay_s_max")]
    max_delay_s_max: Option<f64>,
    #[arg(long = "arrival_rate_mean")]
    arrival_rate_mean: Option<f64>,
    #[arg(long = "arrival_rate_sd")]
    arrival_rate_sd: Option<f64>,
    #[arg(long = "service_rate_mean")]
    service_rate_mean: Option<f64>,
    #[arg(long = "service_rate_sd")]
    service_rate_sd: Option<f64>,
    #[arg(long = "cpu_ghz_mean")]
    cpu_ghz_mean: Option<f64>,
    #[arg(long = "cpu_ghz_sd")]
    cpu_ghz_sd: Option<f64>,
    #[arg(long = "price_max")]
    price_max: Option<f64>,
    #[arg(long = "bandwidth_unit_hz")]
    bandwidth_unit_hz: Option<f64>,
    #[arg(long = "demand_max")]
    demand_max: Option<f64>,
    /// Comma-separated per-MSP α values.
    #[arg(long = "alpha_override", value_delimiter = ',')]
    alpha_override: Option<Vec<f64>>,
    /// Comma-separated per-MRP cost values.
    #[arg(long = "cost_override", value_delimiter = ',')]
    cost_override: Option<Vec<f64>>,
}

macro_rules! overlay {
    ($spec:ident, $args:ident, $($field:ident),*) => {
        $(if let Some(v) = $args.$field { $spec.$field = v; })*
    };
}

impl SpecArgs {
    fn spec(&self, base: ScenarioSpec) -> ScenarioSpec {
        let mut spec = base;
        let a = self;
        overlay!(
            spec, a, seed, n_msps, n_mrps, mean_alpha, sd_alpha, mean_beta, sd_beta, mean_social, sd_social,
            mean_cost, sd_cost, data_size_mb_min, data_size_mb_max, cpu_megacycles_mean, cpu_megacycles_sd,
            max_delay_s_min, max_delay_s_max, arrival_rate_mean, arrival_rate_sd, service_rate_mean,
            service_rate_sd, cpu_ghz_mean, cpu_ghz_sd, price_max, bandwidth_unit_hz, demand_max
        );
        if let Some(v) = &self.alpha_override {
            spec.alpha_override = Some(v.clone());
        }
        if let Some(v) = &self.cost_override {
            spec.cost_override = Some(v.clone());
        }
        spec
    }

    fn scenario(&self) -> Result<Scenario> {
        if let Some(path) = &self.scenario {
            return load_scenario(path);
        }
        if self.fig3 {
            // the bundled market keeps its own draw; --seed only seeds the env
            let mut spec = self.spec(ScenarioSpec::fig3());
            spec.seed = FIG3_SEED;
            return sample_scenario(&spec);
        }
        sample_scenario(&self.spec(ScenarioSpec::default()))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum InnerSolverArg {
    ExactReplies,
    Multipliers,
}

#[derive(Args, Default)]
struct AdmmArgs {
    #[arg(long)]
    damping: Option<f64>,
    #[arg(long = "stop_threshold")]
    stop_threshold: Option<f64>,
    #[arg(long = "price_tol")]
    price_tol: Option<f64>,
    #[arg(long = "inner_tol")]
    inner_tol: Option<f64>,
    #[arg(long = "inner_max_iters")]
    inner_max_iters: Option<usize>,
    #[arg(long = "outer_max_iters")]
    outer_max_iters: Option<usize>,
    #[arg(long = "price_grid_points")]
    price_grid_points: Option<usize>,
    #[arg(long = "multiplier_init")]
    multiplier_init: Option<f64>,
    #[arg(long = "certify_tol")]
    certify_tol: Option<f64>,
    #[arg(long = "certify_probes")]
    certify_probes: Option<usize>,
    #[arg(long = "inner_solver", value_enum)]
    inner_solver: Option<InnerSolverArg>,
}

impl AdmmArgs {
    fn config(&self) -> AdmmConfig {
        let mut cfg = AdmmConfig::default();
        let a = self;
        overlay!(
            cfg, a, damping, stop_threshold, price_tol, inner_tol, inner_max_iters, outer_max_iters,
            price_grid_points, multiplier_init, certify_tol, certify_probes
        );
        if let Some(s) = self.inner_solver {
            cfg.inner_solver = match s {
                InnerSolverArg::ExactReplies => InnerSolver::ExactReplies,
                InnerSolverArg::Multipliers => InnerSolver::Multipliers,
            };
        }
        cfg
    }
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    spec: SpecArgs,
    #[command(flatten)]
    admm: AdmmArgs,
    /// Directory for report.json and trace.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    axis: SweepAxis,
    /// Comma-separated axis values; defaults to the axis' standard range.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<f64>>,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, env = "TWINMIGRATE_SEED", default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    admm: AdmmArgs,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, env = "TWINMIGRATE_SEED", default_value_t = 0)]
    seed: u64,
    /// Trials per suite; each suite's default count when omitted.
    #[arg(long)]
    trials: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum, Default)]
enum Transport {
    #[default]
    Stdio,
    Tcp,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    spec: SpecArgs,
    #[arg(long = "history_len")]
    history_len: Option<usize>,
    #[arg(long = "episode_len")]
    episode_len: Option<usize>,
    /// Keep each MRP's queue rates fixed across slots.
    #[arg(long = "fixed_rates")]
    fixed_rates: bool,
    #[arg(long, value_enum, default_value = "stdio")]
    transport: Transport,
    #[arg(long, default_value_t = 7070)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Stop after this many TCP clients.
    #[arg(long = "max_clients")]
    max_clients: Option<usize>,
}

fn print_summary(report: &EquilibriumReport) {
    println!("outer iterations: {} (converged: {})", report.outer_iters, report.converged);
    for (j, (p, u)) in report.profile.prices.iter().zip(&report.mrp_utilities).enumerate() {
        println!("MRP {}: price {:.6}, utility {:.6}", j + 1, p, u);
    }
    for (i, (row, u)) in report.profile.demands.iter().zip(&report.msp_utilities).enumerate() {
        let cells: Vec<String> = row.iter().map(|b| format!("{b:.6}")).collect();
        println!("MSP {}: demand [{}], utility {:.6}", i + 1, cells.join(", "), u);
    }
    if !report.delay_exempt.is_empty() {
        println!("delay-exempt MSPs: {:?}", report.delay_exempt);
    }
    println!("social welfare: {:.6}", report.social_welfare);
    println!(
        "max deviation gap: {:.3e} (tolerance {:.1e}) -> {}",
        report.deviation_gaps.max_gap(),
        report.deviation_gaps.tol,
        if report.certified { "certified" } else { "NOT certified" }
    );
}

fn write_report(report: &EquilibriumReport, dir: &PathBuf) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(dir.join("report.json"), json)?;
    write_trace_csv(&report.trace, BufWriter::new(File::create(dir.join("trace.csv"))?))?;
    info!("wrote {}", dir.join("report.json").display());
    Ok(())
}

fn solve(args: SolveArgs) -> Result<u8> {
    let scenario = args.spec.scenario()?;
    let config = args.admm.config();
    match admm_solve(&scenario, &config) {
        Ok(report) => {
            write_report(&report, &args.out)?;
            print_summary(&report);
            Ok(if report.certified { 0 } else { EXIT_NOT_CERTIFIED })
        }
        Err(Error::AdmmNoConvergence { iters, stop_stat, report }) => {
            write_report(&report, &args.out)?;
            print_summary(&report);
            eprintln!("error: outer loop did not converge after {iters} iterations (stop statistic {stop_stat:e})");
            Ok(EXIT_NO_CONVERGENCE)
        }
        Err(e) => Err(e),
    }
}

fn sweep(args: SweepArgs) -> Result<u8> {
    let mut config = SweepConfig::new(args.axis, args.repeats, args.seed);
    if let Some(values) = args.values {
        config.values = values;
    }
    config.admm = args.admm.config();
    let points = run_sweep(&config)?;
    let failed: usize = points.iter().map(|p| p.failed_runs).sum();
    match args.out {
        Some(path) => write_sweep_csv(&points, BufWriter::new(File::create(path)?))?,
        None => write_sweep_csv(&points, io::stdout().lock())?,
    }
    if failed > 0 {
        eprintln!("warning: {failed} runs did not converge (see failed_runs column)");
    }
    Ok(0)
}

fn check(args: CheckArgs) -> Result<u8> {
    let mut config = CheckConfig {
        seed: args.seed,
        ..CheckConfig::default()
    };
    if let Some(t) = args.trials {
        config = config.with_trials(t);
    }
    let reports = run_checks(&config);
    for r in &reports {
        println!("{r}");
    }
    Ok(if reports.iter().all(|r| r.passed()) { 0 } else { EXIT_ERROR })
}

fn env_serve(args: ServeArgs) -> Result<u8> {
    let scenario = args.spec.scenario()?;
    let mut config = EnvConfig::default();
    if let Some(seed) = args.spec.seed {
        config.seed = seed;
    }
    if let Some(l) = args.history_len {
        config.history_len = l;
    }
    if let Some(t) = args.episode_len {
        config.episode_len = t;
    }
    config.redraw_rates_each_step = !args.fixed_rates;
    let env = Env::new(config, scenario)?;
    match args.transport {
        Transport::Stdio => Server::new(env).serve(io::stdin().lock(), io::stdout().lock())?,
        Transport::Tcp => serve_tcp(env, (args.host.as_str(), args.port), args.max_clients)?,
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Solve(a) => solve(a),
        Command::Sweep(a) => sweep(a),
        Command::Check(a) => check(a),
        Command::EnvServe(a) => env_serve(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
