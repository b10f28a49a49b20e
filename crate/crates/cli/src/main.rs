//! `acmpc`: run closed-loop experiments, gradient maps and benchmarks.
//!
//! Exit status: 0 on success, 1 on usage or configuration errors, 2 when a
//! run fails at runtime.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use acmpc::harness::{
    bench, gradient_map, run_experiment, ExperimentConfig, ExperimentKind, HarnessError, RunMode,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "acmpc", version, about = "Adaptive contact-implicit MPC experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a closed-loop experiment and write its logs.
    Simulate(SimulateArgs),
    /// Label a grid of cart-pole transitions by contact event and prediction.
    GradientMap(MapArgs),
    /// Time learner updates and controller solves.
    Bench(BenchArgs),
    /// Parse and check a config file.
    ValidateConfig(ConfigArg),
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// Experiment config (TOML).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Deterministic,
    Realtime,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    seed: Option<u64>,
    /// Keep the residual at zero.
    #[arg(long)]
    no_adapt: bool,
    /// Output directory (overrides ACMPC_OUT_DIR and the config).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Simulated duration in seconds.
    #[arg(long, value_name = "S")]
    duration: Option<f64>,
}

#[derive(Args, Debug)]
struct MapArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Number of pole-tip positions.
    #[arg(long, default_value_t = 20)]
    tips: usize,
    /// Number of offset errors (even).
    #[arg(long, default_value_t = 20)]
    deltas: usize,
    /// Largest offset error magnitude.
    #[arg(long, default_value_t = 0.2)]
    max_delta: f64,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Invocations per timed operation.
    #[arg(long, default_value_t = 1000)]
    calls: usize,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_) => Failure::Config(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn load(arg: &ConfigArg) -> Result<ExperimentConfig, Failure> {
    let path = arg
        .config
        .as_ref()
        .ok_or_else(|| Failure::Config("missing required flag --config <PATH>".into()))?;
    Ok(ExperimentConfig::load(path)?)
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let mut cfg = load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.no_adapt {
        cfg.adapt = false;
    }
    if let Some(mode) = args.mode {
        cfg.mode = match mode {
            Mode::Deterministic => RunMode::Deterministic,
            Mode::Realtime => RunMode::Realtime,
        };
    }
    if let Some(d) = args.duration {
        cfg.duration_s = d;
    }
    cfg.validate()?;
    let out = cfg.resolve_out_dir(args.out.as_deref());
    let record = run_experiment(&cfg)?;
    record.write(&out)?;
    print!("{}", record.summary.to_toml());
    println!("# logs written to {}", out.display());
    Ok(())
}

fn map(args: MapArgs) -> Result<(), Failure> {
    let cfg = load(&args.config)?;
    if cfg.experiment != ExperimentKind::CartpoleWalls {
        return Err(Failure::Config("gradient-map needs a cartpole_walls config".into()));
    }
    let out = cfg.resolve_out_dir(args.out.as_deref());
    let learn = cfg.learn_config()?;
    let grid = gradient_map(&cfg.cartpole_params(), &learn, args.tips, args.deltas, args.max_delta)?;
    std::fs::create_dir_all(&out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    grid.write_csv(&out.join("gradient_map.csv"))?;
    let summary = toml::to_string(&grid.summary()).expect("summary serializes");
    write(&out.join("gradient_map_summary.toml"), &summary)?;
    print!("{summary}");
    println!("# map written to {}", out.display());
    Ok(())
}

fn run_bench(args: BenchArgs) -> Result<(), Failure> {
    let cfg = load(&args.config)?;
    if args.calls == 0 {
        return Err(Failure::Config("--calls must be positive".into()));
    }
    let out = cfg.resolve_out_dir(args.out.as_deref());
    let report = bench(&cfg, args.calls)?;
    let text = report.to_toml();
    write(&out.join("bench.toml"), &text)?;
    print!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::GradientMap(a) => map(a),
        Command::Bench(a) => run_bench(a),
        Command::ValidateConfig(a) => load(&a).map(|cfg| {
            println!("{}: ok ({} steps)", cfg.experiment.name(), cfg.steps());
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
