//! `txsel`: equilibrium transaction selection from the command line.
//!
//! Exit codes: 0 success, 2 usage or invalid input, 3 solver did not
//! converge (output is still written), 4 I/O or malformed input file.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use txsel_core::experiments::write_rows;
use txsel_core::optim::kkt_residual;
use txsel_core::{
    ne_gap, pts, read_pool, rts, run_sweep, simulate, solve_ne, validate_marginals, zipf_pool,
    Error, GameConfig, Mechanism, OutputFormat, SolverConfig, StrategyKind, SweepBase, SweepParam,
    SweepSpec, ThroughputReport, TransactionPool, ZipfSpec,
};

const EXIT_USAGE: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(
    name = "txsel",
    version,
    about = "Symmetric equilibria for transaction selection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a selection strategy and its equilibrium diagnostics.
    Solve(SolveArgs),
    /// Evaluate a strategy file analytically.
    Metrics(MetricsArgs),
    /// Monte Carlo simulation of a strategy.
    Simulate(SimulateArgs),
    /// Sweep m, maxfee or s and write aggregated metrics.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Rfa,
    Cfs,
    Rts,
    Pts,
}

impl Model {
    fn name(self) -> &'static str {
        match self {
            Model::Rfa => "rfa",
            Model::Cfs => "cfs",
            Model::Rts => "rts",
            Model::Pts => "pts",
        }
    }

    fn mechanism(self) -> Option<Mechanism> {
        match self {
            Model::Rfa => Some(Mechanism::Rfa),
            Model::Cfs => Some(Mechanism::Cfs),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MechanismArg {
    Rfa,
    Cfs,
}

impl From<MechanismArg> for Mechanism {
    fn from(m: MechanismArg) -> Self {
        match m {
            MechanismArg::Rfa => Mechanism::Rfa,
            MechanismArg::Cfs => Mechanism::Cfs,
        }
    }
}

#[derive(Args)]
struct GameArgs {
    /// Pool file: JSON array, or one fee per line.
    #[arg(long, conflicts_with = "zipf")]
    pool: Option<PathBuf>,
    /// Generated pool `maxfee,s,m,seed` (default 10,0,1000,0).
    #[arg(long, value_parser = parse_zipf)]
    zipf: Option<ZipfSpec>,
    /// Number of validators.
    #[arg(long, default_value_t = 10)]
    n: u32,
    /// Block capacity.
    #[arg(long, default_value_t = 100)]
    b: usize,
}

impl GameArgs {
    fn load(&self) -> Result<(TransactionPool, GameConfig), Error> {
        let pool = match (&self.pool, &self.zipf) {
            (Some(path), _) => read_pool(path)?,
            (None, Some(spec)) => zipf_pool(spec)?,
            (None, None) => zipf_pool(&ZipfSpec {
                max_fee: 10,
                shape: 0.0,
                m: 1000,
                seed: 0,
            })?,
        };
        let config = GameConfig::new(self.n, self.b)?;
        config.check_pool_size(pool.len())?;
        Ok((pool, config))
    }
}

#[derive(Args)]
struct SolverArgs {
    /// Stop when no marginal moves by more than this.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = 100_000)]
    max_iters: usize,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            tol: self.tol,
            max_iters: self.max_iters,
            ..SolverConfig::default()
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long, value_enum)]
    model: Model,
    #[command(flatten)]
    game: GameArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Mechanism for the diagnostics of `rts` and `pts`.
    #[arg(long, value_enum, default_value = "rfa")]
    mechanism: MechanismArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Strategy file written by `solve`, or a JSON array of marginals.
    #[arg(long)]
    strategy: PathBuf,
    #[command(flatten)]
    game: GameArgs,
    /// Payoff rule; defaults to the strategy's model when it is rfa or cfs.
    #[arg(long, value_enum)]
    mechanism: Option<MechanismArg>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Strategy file; without it the strategy is computed from `--model`.
    #[arg(long, conflicts_with = "model")]
    strategy: Option<PathBuf>,
    #[arg(long, value_enum)]
    model: Option<Model>,
    #[command(flatten)]
    game: GameArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value_t = 50)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum)]
    mechanism: Option<MechanismArg>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_parser = parse_sweep_param)]
    vary: SweepParam,
    /// Comma-separated values, strictly increasing.
    #[arg(
        long,
        value_delimiter = ',',
        required_unless_present = "standard_grid",
        conflicts_with = "standard_grid"
    )]
    values: Option<Vec<f64>>,
    /// Use the standard grid for `--vary`.
    #[arg(long)]
    standard_grid: bool,
    /// Comma-separated subset of rts, pts, rfa, cfs.
    #[arg(long, value_delimiter = ',', value_parser = parse_strategy, default_value = "rts,pts,rfa,cfs")]
    strategies: Vec<StrategyKind>,
    #[arg(long, default_value_t = 10)]
    n: u32,
    #[arg(long, default_value_t = 100)]
    b: usize,
    #[arg(long, default_value_t = 1000)]
    m: usize,
    #[arg(long, default_value_t = 10)]
    max_fee: u32,
    #[arg(long, default_value_t = 0.0)]
    s: f64,
    /// Replicate pools per value.
    #[arg(long, default_value_t = 50)]
    sim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    solver: SolverArgs,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Defaults to the extension of `--out`, else csv.
    #[arg(long, value_parser = parse_format)]
    format: Option<OutputFormat>,
}

fn parse_zipf(s: &str) -> Result<ZipfSpec, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err("expected maxfee,s,m,seed".into());
    }
    let spec = ZipfSpec {
        max_fee: parts[0].parse().map_err(|e| format!("maxfee: {e}"))?,
        shape: parts[1].parse().map_err(|e| format!("s: {e}"))?,
        m: parts[2].parse().map_err(|e| format!("m: {e}"))?,
        seed: parts[3].parse().map_err(|e| format!("seed: {e}"))?,
    };
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

fn parse_sweep_param(s: &str) -> Result<SweepParam, String> {
    s.parse()
}

fn parse_strategy(s: &str) -> Result<StrategyKind, String> {
    s.parse()
}

fn parse_format(s: &str) -> Result<OutputFormat, String> {
    s.parse()
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } | Error::Parse { .. } => EXIT_IO,
            Error::NotConverged(_) => EXIT_NOT_CONVERGED,
            _ => EXIT_USAGE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure {
        code: EXIT_IO,
        message: format!("{}: {e}", path.display()),
    }
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, bytes).map_err(|e| io_failure(path, e)),
        None => {
            let mut stdout = io::stdout().lock();
            stdout
                .write_all(bytes)
                .and_then(|_| stdout.flush())
                .map_err(|e| io_failure(Path::new("<stdout>"), e))
        }
    }
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    emit(out, text.as_bytes())
}

#[derive(Serialize)]
struct Diagnostics {
    iterations: usize,
    kkt_residual: f64,
    converged: bool,
    ne_gap: f64,
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    model: &'a str,
    n: u32,
    b: usize,
    q: &'a [f64],
    diagnostics: Diagnostics,
}

fn cmd_solve(args: &SolveArgs) -> Result<(), Failure> {
    let (pool, config) = args.game.load()?;
    let solver = args.solver.config();
    solver.validate()?;
    let (q, iterations, converged, mechanism) = match args.model.mechanism() {
        Some(mech) => {
            let result = match solve_ne(mech, &pool, &config, &solver) {
                Ok(r) => r,
                Err(Error::NotConverged(r)) => *r,
                Err(e) => return Err(e.into()),
            };
            (result.strategy, result.iterations, result.converged, mech)
        }
        None => {
            let q = match args.model {
                Model::Rts => rts(&pool, &config)?,
                _ => pts(&pool, &config)?,
            };
            (q, 0, true, args.mechanism.into())
        }
    };
    let diagnostics = Diagnostics {
        iterations,
        kkt_residual: kkt_residual(mechanism, &q, &pool, &config)?,
        converged,
        ne_gap: ne_gap(mechanism, &q, &pool, &config)?,
    };
    emit_json(
        args.out.as_deref(),
        &SolveOutput {
            model: args.model.name(),
            n: config.n_validators(),
            b: config.block_capacity(),
            q: &q,
            diagnostics,
        },
    )?;
    if converged {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_NOT_CONVERGED,
            message: format!(
                "solver did not converge within {} iterations",
                solver.max_iters
            ),
        })
    }
}

/// Reads marginals from a `solve` output file or a bare JSON array, with
/// the model named in the file if any.
fn read_strategy(path: &Path) -> Result<(Vec<f64>, Option<String>), Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    let malformed = |msg: String| Failure {
        code: EXIT_IO,
        message: format!("{}: {msg}", path.display()),
    };
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    let (q, model) = match &value {
        serde_json::Value::Array(_) => (value.clone(), None),
        serde_json::Value::Object(map) => (
            map.get("q")
                .cloned()
                .ok_or_else(|| malformed("missing `q`".into()))?,
            map.get("model")
                .and_then(|m| m.as_str())
                .map(str::to_string),
        ),
        _ => return Err(malformed("expected an object or an array".into())),
    };
    let q: Vec<f64> = serde_json::from_value(q).map_err(|e| malformed(format!("`q`: {e}")))?;
    Ok((q, model))
}

fn mechanism_for(explicit: Option<MechanismArg>, model: Option<&str>) -> Mechanism {
    match (explicit, model) {
        (Some(m), _) => m.into(),
        (None, Some("cfs")) => Mechanism::Cfs,
        _ => Mechanism::Rfa,
    }
}

#[derive(Serialize)]
struct MetricsOutput {
    theta_tx: f64,
    theta_fee: f64,
    per_validator_payoff: f64,
    ne_gap: f64,
}

fn cmd_metrics(args: &MetricsArgs) -> Result<(), Failure> {
    let (q, model) = read_strategy(&args.strategy)?;
    let (pool, config) = args.game.load()?;
    let q = validate_marginals(q, &config)?;
    let mechanism = mechanism_for(args.mechanism, model.as_deref());
    let report = ThroughputReport::new(mechanism, &q, &pool, &config)?;
    emit_json(
        args.out.as_deref(),
        &MetricsOutput {
            theta_tx: report.theta_tx,
            theta_fee: report.theta_fee,
            per_validator_payoff: report.per_validator_payoff,
            ne_gap: ne_gap(mechanism, &q, &pool, &config)?,
        },
    )
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let (pool, config) = args.game.load()?;
    let (q, model) = match &args.strategy {
        Some(path) => {
            let (q, model) = read_strategy(path)?;
            (validate_marginals(q, &config)?.into_vec(), model)
        }
        None => {
            let model = args.model.unwrap_or(Model::Rts);
            let q = match model {
                Model::Rts => rts(&pool, &config)?,
                Model::Pts => pts(&pool, &config)?,
                Model::Rfa | Model::Cfs => {
                    let solver = args.solver.config();
                    solver.validate()?;
                    let mech = model.mechanism().expect("equilibrium model");
                    solve_ne(mech, &pool, &config, &solver)?.strategy
                }
            };
            (q.into_vec(), Some(model.name().to_string()))
        }
    };
    let mechanism = mechanism_for(args.mechanism, model.as_deref());
    let report = simulate(&q, &pool, &config, mechanism, args.runs, args.seed)?;
    emit_json(args.out.as_deref(), &report)
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), Failure> {
    let values = if args.standard_grid {
        args.vary.standard_grid()
    } else {
        args.values.clone().unwrap_or_default()
    };
    let spec = SweepSpec {
        vary: args.vary,
        values,
        base: SweepBase {
            n: args.n,
            b: args.b,
            m: args.m,
            max_fee: args.max_fee,
            s: args.s,
            sim: args.sim,
            seed: args.seed,
        },
        strategies: args.strategies.clone(),
        solver: args.solver.config(),
    };
    let rows = run_sweep(&spec)?;
    let format = args.format.unwrap_or_else(|| {
        match args
            .out
            .as_deref()
            .and_then(|p| p.extension())
            .and_then(|e| e.to_str())
        {
            Some(ext) if ext.eq_ignore_ascii_case("json") => OutputFormat::Json,
            _ => OutputFormat::Csv,
        }
    });
    let mut buf = Vec::new();
    write_rows(&rows, &mut buf, format).expect("writing to memory cannot fail");
    emit(args.out.as_deref(), &buf)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
