use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

mod commands;
mod output;

/// Markov-modulated interest rates and multi-state life insurance.
#[derive(Debug, Parser)]
#[command(name = "phrates", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a rate model to a zero-coupon curve.
    Calibrate(CalibrateArgs),
    /// Zero-coupon bond prices of a rate model.
    Price(CurveArgs),
    /// Yields and forward rates of a rate model.
    Yield(CurveArgs),
    /// Reserves, moments, premium and distribution of a product's present value.
    Value(ValueArgs),
    /// Prices from the two-factor Gaussian model and their ρ.
    G2pp(G2ppArgs),
    /// Monte Carlo present values of a product.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum StructureArg {
    General,
    Coxian,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum PlacementArg {
    Midpoint,
    Right,
}

#[derive(Debug, Args, Serialize)]
struct CalibrateArgs {
    /// Curve CSV with header `maturity,price[,forward]`.
    curve: PathBuf,
    /// Number of rate states.
    #[arg(long)]
    p: usize,
    #[arg(long, value_enum, default_value = "general")]
    structure: StructureArg,
    /// `auto` to fit the rates, or a comma-separated list of `p` rates.
    #[arg(long, default_value = "auto")]
    rates: String,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 5000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, value_enum, default_value = "midpoint")]
    placement: PlacementArg,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct CurveArgs {
    /// Rate model JSON.
    model: PathBuf,
    /// Comma-separated maturities; defaults to 1, 2, …, `--max-maturity`.
    #[arg(long, value_delimiter = ',')]
    maturities: Option<Vec<f64>>,
    #[arg(long, default_value_t = 30.0)]
    max_maturity: f64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct ProductArgs {
    /// Rate model JSON.
    model: PathBuf,
    /// Product JSON on the biometric state space.
    product: PathBuf,
    /// Premium parameter used when `--premium-solve` is absent.
    #[arg(long, default_value_t = 0.0)]
    theta: f64,
    /// Initial rate state; defaults to the state the model's π starts in.
    #[arg(long)]
    rate_state: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
struct ValueArgs {
    #[command(flatten)]
    product: ProductArgs,
    /// Highest raw moment of the present value to report.
    #[arg(long, default_value_t = 0)]
    moments: usize,
    /// Solve for the equivalence premium before valuing.
    #[arg(long)]
    premium_solve: bool,
    /// Gram–Charlier approximation `alpha,beta,a,b,N`.
    #[arg(long, value_parser = parse_gc)]
    gc: Option<GcSpec>,
    /// Quantile levels for the Gram–Charlier and simulated distributions.
    #[arg(long, value_delimiter = ',', default_value = "0.95,0.97,0.99,0.995")]
    levels: Vec<f64>,
    /// Points in the Gram–Charlier density/CDF table.
    #[arg(long, default_value_t = 401)]
    table_points: usize,
    /// Monte Carlo cross-check `paths,seed`.
    #[arg(long, value_parser = parse_sim)]
    simulate: Option<SimSpec>,
    /// Spacing of the reserve table.
    #[arg(long, default_value_t = 1.0)]
    reserve_step: f64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct G2ppArgs {
    /// Parameter JSON (`r0, k1, k2, sigma1, sigma2, theta, sigma12`);
    /// defaults to the guide's example.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Integer maturities 1..=T.
    #[arg(long, default_value_t = 120)]
    max_maturity: u32,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    #[command(flatten)]
    product: ProductArgs,
    #[arg(long, default_value_t = 100_000)]
    paths: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    workers: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.95,0.97,0.99,0.995")]
    levels: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    bins: usize,
    /// Also write the raw present values (little-endian binary).
    #[arg(long)]
    raw: bool,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, Serialize)]
struct GcSpec {
    alpha: f64,
    beta: f64,
    a: f64,
    b: f64,
    order: usize,
}

#[derive(Debug, Clone, Copy, Serialize)]
struct SimSpec {
    paths: usize,
    seed: u64,
}

fn numbers(s: &str, n: usize) -> Result<Vec<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| format!("{x:?} is not a number")))
        .collect::<Result<_, _>>()?;
    if v.len() != n {
        return Err(format!("expected {n} comma-separated values, got {}", v.len()));
    }
    Ok(v)
}

fn whole(x: f64, what: &str) -> Result<u64, String> {
    if x >= 0.0 && x.fract() == 0.0 {
        Ok(x as u64)
    } else {
        Err(format!("{what} must be a nonnegative integer"))
    }
}

fn parse_gc(s: &str) -> Result<GcSpec, String> {
    let v = numbers(s, 5)?;
    Ok(GcSpec {
        alpha: v[0],
        beta: v[1],
        a: v[2],
        b: v[3],
        order: whole(v[4], "N")? as usize,
    })
}

fn parse_sim(s: &str) -> Result<SimSpec, String> {
    let v = numbers(s, 2)?;
    Ok(SimSpec {
        paths: whole(v[0], "path count")? as usize,
        seed: whole(v[1], "seed")?,
    })
}

/// A failed run: exit code 2 for bad input, 3 for failed computations.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn compute(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }

    pub fn output(e: impl fmt::Display) -> Self {
        Self::input(format!("writing output: {e}"))
    }

    /// Tags a library error with the input it came from.
    pub fn from_lib(context: &str, e: phrates::Error) -> Self {
        use phrates::Error as E;
        let message = format!("{context}: {e}");
        match e {
            E::Parse { .. } | E::Io(_) | E::Json(_) | E::Structure(_) | E::Domain(_) | E::NonMonotone { .. } => {
                Self::input(message)
            }
            _ => Self::compute(message),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Price(a) => commands::price(a),
        Command::Yield(a) => commands::yields(a),
        Command::Value(a) => commands::value(a),
        Command::G2pp(a) => commands::g2pp(a),
        Command::Simulate(a) => commands::simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
