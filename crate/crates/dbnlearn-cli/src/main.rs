//! Command-line front end: generate synthetic panels, solve a dataset to a
//! certified-optimal graph, run benchmark experiments, and score estimates
//! against a known truth. Settings resolve as defaults < config file <
//! flags. Exit codes: 0 success, 1 usage error, 2 data/generation error,
//! 3 solver failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dbnlearn::bench::{
    self, default_reg_for, load_timeseries_csv, parse_ensemble, resolve_big_m, resolve_reg,
    resolve_solver, run_experiment, write_timeseries_csv, ExperimentConfig, RegSearch,
    SolveConfigFile,
};
use dbnlearn::datagen::{self, GenConfig, NoiseSpec};
use dbnlearn::error::Error;
use dbnlearn::graph::DbnGraph;
use dbnlearn::metrics::{self, default_delta_grid};
use dbnlearn::objective::{build_instance, RegMode, RegVariant};
use dbnlearn::oracle;

#[derive(Parser)]
#[command(
    name = "dbnlearn",
    about = "Exact structure learning for dynamic Bayesian networks",
    version,
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a ground-truth network and simulate a time series from it.
    Generate(GenerateArgs),
    /// Learn a network from a time-series CSV.
    Solve(SolveArgs),
    /// Run a benchmark experiment from a config file.
    Benchmark(BenchmarkArgs),
    /// Score an estimated graph against a ground-truth graph.
    Score(ScoreArgs),
    /// Brute-force reference solver for tiny instances (debugging aid).
    #[command(hide = true)]
    Oracle(OracleArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Ensemble name, e.g. ER3-1 (model, intra ratio, one inter ratio per lag).
    #[arg(long)]
    ensemble: String,
    /// Vertex count.
    #[arg(long)]
    d: usize,
    /// Sample count (rows of the lagged panel; the CSV gets n + p rows).
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Innovation standard deviation.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Inter-slice weight decay (>= 1).
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    /// Advance to the first seed >= --seed whose system is stable instead
    /// of failing on an explosive draw.
    #[arg(long)]
    require_stable: bool,
    /// Output CSV for the simulated series.
    #[arg(long)]
    data_out: PathBuf,
    /// Output file for the ground-truth graph.
    #[arg(long)]
    truth_out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    /// Input time-series CSV (header row = variable names).
    #[arg(long)]
    data: PathBuf,
    /// Autoregressive order (number of lags).
    #[arg(long, default_value_t = 1)]
    p: usize,
    /// TOML file with [solver], [reg] and big_m sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Penalty family: auto, l1, l2 (squared), or l2_literal_abs.
    #[arg(long)]
    reg: Option<String>,
    /// Intra-slice penalty coefficient.
    #[arg(long)]
    lambda: Option<f64>,
    /// Inter-slice penalty coefficient (defaults to --lambda).
    #[arg(long)]
    eta: Option<f64>,
    /// Comma-separated intra penalties to grid-search; the combo with the
    /// smallest final gap wins.
    #[arg(long, value_delimiter = ',')]
    grid_lambda: Vec<f64>,
    /// Comma-separated inter penalties for the grid (defaults to the
    /// --grid-lambda values).
    #[arg(long, value_delimiter = ',')]
    grid_eta: Vec<f64>,
    /// Weight bound: "auto" or a positive number.
    #[arg(long)]
    big_m: Option<String>,
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long)]
    gap_tolerance: Option<f64>,
    /// FIRST_CYCLE, SHORTEST_CYCLE or ALL_CYCLES.
    #[arg(long)]
    cut_strategy: Option<String>,
    /// BEST_BOUND or DFS_DIVE.
    #[arg(long)]
    node_selection: Option<String>,
    #[arg(long)]
    integrality_tol: Option<f64>,
    #[arg(long)]
    parallel_nodes: Option<usize>,
    /// Where to write the learned graph.
    #[arg(long)]
    graph_out: Option<PathBuf>,
    /// Where to write the full solve report.
    #[arg(long)]
    report_out: Option<PathBuf>,
    /// Zero out learned weights below this magnitude before writing.
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Experiment TOML file.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Override the config's worker count.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct ScoreArgs {
    /// Estimated graph file.
    #[arg(long)]
    est: PathBuf,
    /// Ground-truth graph file.
    #[arg(long)]
    truth: PathBuf,
    /// Time-series CSV the estimate was learned from (for the fit-gap metric).
    #[arg(long)]
    data: PathBuf,
    /// Score at this fixed threshold instead of sweeping for the best one.
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1)]
    p: usize,
    /// l1, l2 or l2_literal_abs.
    #[arg(long, default_value = "l1")]
    reg: String,
    #[arg(long, default_value_t = 0.05)]
    lambda: f64,
    #[arg(long)]
    eta: Option<f64>,
    /// Weight bound ("auto" or a number).
    #[arg(long, default_value = "auto")]
    big_m: String,
    /// Vertex-count guard; brute force is exponential.
    #[arg(long, default_value_t = oracle::ORACLE_MAX_D)]
    max_d: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::DimensionMismatch(_) | Error::Data { .. } | Error::Generation(_) | Error::Io(_) => {
            2
        }
        Error::Solver(_) => 3,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate(args) => generate(args),
        Command::Solve(args) => solve(args),
        Command::Benchmark(args) => benchmark(args),
        Command::Score(args) => score(args),
        Command::Oracle(args) => run_oracle(args),
    }
}

fn generate(args: GenerateArgs) -> Result<(), Error> {
    let ens = parse_ensemble(&args.ensemble)?;
    let mut cfg = GenConfig::new(
        args.d,
        ens.p(),
        ens.model,
        ens.intra_ratio,
        ens.inter_ratio()?,
        args.seed,
        args.n,
    );
    cfg.eta = args.eta;
    cfg.noise = NoiseSpec::Gaussian { sigma: args.sigma };
    if args.require_stable {
        let seed = datagen::stable_seeds(&cfg, 1)?[0];
        if seed != args.seed {
            eprintln!("seed {} draws an explosive system; using seed {}", args.seed, seed);
        }
        cfg.seed = seed;
    }
    let truth = datagen::generate_ground_truth(&cfg)?;
    let series = datagen::simulate_series(&truth, &cfg)?;
    let names = datagen::default_names(args.d);
    write_timeseries_csv(&args.data_out, &names, series.view())?;
    println!(
        "wrote {} rows x {} variables to {}",
        series.nrows(),
        series.ncols(),
        args.data_out.display()
    );
    if let Some(path) = &args.truth_out {
        truth.write_file(path)?;
        println!("wrote ground truth to {}", path.display());
    }
    Ok(())
}

fn solve(args: SolveArgs) -> Result<(), Error> {
    // defaults < config file < flags.
    let mut file = match &args.config {
        Some(path) => SolveConfigFile::from_file(path)?,
        None => SolveConfigFile::default(),
    };
    if let Some(v) = args.time_limit {
        file.solver.time_limit = Some(v);
    }
    if let Some(v) = args.gap_tolerance {
        file.solver.gap_tolerance = Some(v);
    }
    if let Some(v) = &args.cut_strategy {
        file.solver.cut_strategy = Some(v.clone());
    }
    if let Some(v) = &args.node_selection {
        file.solver.node_selection = Some(v.clone());
    }
    if let Some(v) = args.integrality_tol {
        file.solver.integrality_tol = Some(v);
    }
    if let Some(v) = args.parallel_nodes {
        file.solver.parallel_nodes = Some(v);
    }
    if let Some(v) = &args.reg {
        file.reg.mode = Some(v.clone());
    }
    if let Some(v) = args.lambda {
        file.reg.lambda = Some(v);
    }
    if let Some(v) = args.eta {
        file.reg.eta = Some(v);
    }
    if let Some(v) = &args.big_m {
        file.big_m = Some(if v == "auto" {
            toml::Value::String("auto".to_string())
        } else {
            toml::Value::Float(v.parse::<f64>().map_err(|_| {
                Error::Config(format!("--big-m must be \"auto\" or a number, got {:?}", v))
            })?)
        });
    }

    let panel = load_timeseries_csv(&args.data, args.p)?;
    let solver = resolve_solver(&file.solver)?;
    let big_m = resolve_big_m(&file.big_m)?;

    let search = if args.grid_lambda.is_empty() {
        RegSearch::Single(resolve_reg(&file.reg, panel.n)?)
    } else {
        let variant = match file.reg.mode.as_deref() {
            None | Some("auto") => default_reg_for(panel.n).variant,
            Some(name) => RegVariant::parse(name)?,
        };
        let etas: &[f64] = if args.grid_eta.is_empty() {
            &args.grid_lambda
        } else {
            &args.grid_eta
        };
        let mut combos = Vec::new();
        for &lam in &args.grid_lambda {
            for &eta in etas {
                combos.push(RegMode::new(variant, lam, eta)?);
            }
        }
        RegSearch::Grid(combos)
    };

    let outcome = bench::fit(&panel, &solver, big_m, &search)?;
    let report = &outcome.report;
    println!(
        "status={} objective={:.6} gap={:.3e} nodes={} cuts={} time={:.1}s reg={}(lambda={}, eta={})",
        report.status.name(),
        report.incumbent_objective,
        report.mip_gap,
        report.nodes_explored,
        report.cuts_added,
        report.wall_time,
        report.reg.variant.name(),
        report.reg.lambda,
        report.reg.eta_reg,
    );
    for rejected in &outcome.rejected {
        println!(
            "  rejected: reg={}(lambda={}, eta={}) gap={:.3e}",
            rejected.reg.variant.name(),
            rejected.reg.lambda,
            rejected.reg.eta_reg,
            rejected.mip_gap
        );
    }
    let graph = match args.delta {
        Some(delta) => dbnlearn::graph::threshold(&outcome.graph, delta),
        None => outcome.graph,
    };
    if let Some(path) = &args.graph_out {
        graph.write_file(path)?;
        println!("wrote graph to {}", path.display());
    }
    if let Some(path) = &args.report_out {
        std::fs::write(path, report.to_text())?;
        println!("wrote report to {}", path.display());
    }
    Ok(())
}

fn benchmark(args: BenchmarkArgs) -> Result<(), Error> {
    let mut cfg = ExperimentConfig::from_file(&args.config)?;
    if let Some(dir) = &args.output_dir {
        cfg.experiment.output_dir = dir.display().to_string();
    }
    if let Some(workers) = args.workers {
        cfg.experiment.workers = workers;
    }
    let summary = run_experiment(&cfg)?;
    if summary.up_to_date {
        println!("up to date ({} rows, config {})", summary.rows_total, summary.config_hash);
    } else {
        println!(
            "ran {} cells ({} rows total, config {})",
            summary.rows_run, summary.rows_total, summary.config_hash
        );
    }
    println!("rows:       {}", summary.rows_path.display());
    println!("aggregates: {}", summary.aggregates_path.display());
    for plot in &summary.plot_paths {
        println!("plot:       {}", plot.display());
    }
    Ok(())
}

fn score(args: ScoreArgs) -> Result<(), Error> {
    let est = DbnGraph::read_file(&args.est)?;
    let truth = DbnGraph::read_file(&args.truth)?;
    let panel = load_timeseries_csv(&args.data, truth.p())?;
    let (delta, report) = match args.delta {
        Some(delta) => (delta, metrics::metric_report(
            &dbnlearn::graph::threshold(&est, delta),
            &truth,
            &panel,
            delta,
        )?),
        None => metrics::best_delta_sweep(&est, &truth, &panel, &default_delta_grid())?,
    };
    println!("delta     = {}", delta);
    println!("shd       = {}", report.shd);
    println!("precision = {}", report.precision);
    println!("recall    = {}", report.recall);
    println!("f1        = {}", report.f1);
    println!("g_score   = {}", report.g_score);
    println!("sigma_p   = {}", report.sigma_p);
    println!("frobenius = {}", report.frobenius);
    Ok(())
}

fn run_oracle(args: OracleArgs) -> Result<(), Error> {
    let panel = load_timeseries_csv(&args.data, args.p)?;
    let variant = RegVariant::parse(&args.reg)?;
    let reg = RegMode::new(variant, args.lambda, args.eta.unwrap_or(args.lambda))?;
    let big_m = if args.big_m == "auto" {
        dbnlearn::objective::BigM::Auto
    } else {
        dbnlearn::objective::BigM::Fixed(args.big_m.parse::<f64>().map_err(|_| {
            Error::Config(format!("--big-m must be \"auto\" or a number, got {:?}", args.big_m))
        })?)
    };
    let inst = build_instance(&panel, reg, big_m)?;
    let result = oracle::exhaustive_min(&inst, args.max_d)?;
    println!(
        "optimum = {:.9} over {} acyclic supports",
        result.best_objective, result.supports_evaluated
    );
    let mut text = Vec::new();
    result.best_graph.write_text(&mut text)?;
    print!("{}", String::from_utf8_lossy(&text));
    Ok(())
}
