//! Command-line front end: CSV ingestion, `test` and `simulate` subcommands, JSON/CSV reports.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bridge_continuous::{default_lambda_grid, Basis, BridgeMode};
use crate::dataset::{Column, Dataset};
use crate::error::{Error, Result};
use crate::harness::{
    run_simulation, run_test, Bandwidths, LambdaChoice, Recentering, Scenario, SimulationReport, TestConfig, TestMode,
    TestReport, DEFAULT_UNDERSMOOTH, VERSION,
};
use crate::scenarios::Hypothesis;
use crate::teststats::WeightMeasure;

pub const THREADS_ENV: &str = "PROXYTEST_THREADS";
pub const MIN_SAMPLE: usize = 10;

pub const EXIT_ACCEPT: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_REJECT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "proxytest", version, about = "Proxy-variable conditional independence tests")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test Y ⊥ X | U on a CSV file using the proxy W (and optionally Z).
    Test(TestArgs),
    /// Run a Monte-Carlo rejection-rate campaign on a built-in scenario.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    ContinuousSingle,
    ContinuousTwoProxy,
    Discrete,
}

impl From<ModeArg> for TestMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::ContinuousSingle => TestMode::ContinuousSingle,
            ModeArg::ContinuousTwoProxy => TestMode::ContinuousTwoProxy,
            ModeArg::Discrete => TestMode::Discrete,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BridgeArg {
    Pmcr,
    Mmr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BasisArg {
    Exp,
    Sin,
    Cos,
    Identity,
    Indicator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RecenterArg {
    Projected,
    Plain,
}

/// Options shared by both subcommands.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long, value_enum, default_value = "pmcr")]
    pub bridge: BridgeArg,
    #[arg(long, value_enum, default_value = "exp")]
    pub basis: BasisArg,
    /// Number of t grid points.
    #[arg(long = "k", default_value_t = 100)]
    pub k: usize,
    #[arg(long, default_value_t = 3.0)]
    pub t_max: f64,
    /// Scale of the Gaussian weight measure on s.
    #[arg(long, default_value_t = 1.0)]
    pub sigma_s: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Fixed regularization; cross-validated when absent.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// The cross-validated λ is divided by this factor before the test fit.
    #[arg(long, default_value_t = DEFAULT_UNDERSMOOTH)]
    pub undersmooth: f64,
    #[arg(long, value_enum, default_value = "projected")]
    pub recenter: RecenterArg,
    /// Skip standardization of continuous columns.
    #[arg(long)]
    pub raw: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker-thread cap; results do not depend on it.
    #[arg(long, env = THREADS_ENV)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub x: String,
    #[arg(long)]
    pub y: String,
    #[arg(long)]
    pub w: String,
    #[arg(long)]
    pub z: Option<String>,
    /// Observed covariates added to both conditioning sets.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Columns read as categorical labels. Discrete mode treats x, y, w as categorical regardless.
    #[arg(long, value_delimiter = ',')]
    pub categorical: Vec<String>,
    #[arg(long, default_value = ",")]
    pub delimiter: char,
    /// The first CSV line holds data rather than names; columns are then named by 0-based index.
    #[arg(long)]
    pub no_header: bool,
    #[arg(long, value_enum, default_value = "continuous-single")]
    pub mode: ModeArg,
    /// Bootstrap replications.
    #[arg(long = "b", default_value_t = 500)]
    pub b: usize,
    /// Write the JSON report here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProxyArg {
    Single,
    Two,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: String,
    #[arg(long, value_delimiter = ',', required = true)]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// γ_W values for example1.
    #[arg(long = "gamma-w", value_delimiter = ',', default_value = "1.0")]
    pub gamma_w: Vec<f64>,
    /// Proxy setting for continuous scenarios.
    #[arg(long, value_enum)]
    pub mode: Option<ProxyArg>,
    #[arg(long = "b", default_value_t = 200)]
    pub b: usize,
    /// Output prefix; writes <prefix>.json and <prefix>.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

/// JSON body of a `test` run.
#[derive(Debug, Clone, Serialize)]
pub struct TestOutput {
    pub version: String,
    pub mode: TestMode,
    pub bridge: BridgeMode,
    pub n: usize,
    pub statistic: f64,
    pub argmax_t: usize,
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
    pub lambda: Option<f64>,
    pub lambda_cv: Option<f64>,
    pub undersmooth: Option<f64>,
    pub bandwidths: Option<Bandwidths>,
    #[serde(rename = "K")]
    pub k: usize,
    pub t_max: f64,
    pub sigma_s: f64,
    #[serde(rename = "B")]
    pub b: usize,
    pub alpha: f64,
    pub folds: Option<usize>,
    pub lambda_grid_size: Option<usize>,
    pub seed: u64,
    pub boot_stats: Vec<f64>,
    pub runtime_ms: u128,
}

impl TestOutput {
    pub fn from_report(r: &TestReport) -> Self {
        let (folds, grid, undersmooth) = match (&r.config.lambda, r.mode) {
            (_, TestMode::Discrete) => (None, None, None),
            (LambdaChoice::Cv { grid, folds, undersmooth }, _) => (Some(*folds), Some(grid.len()), Some(*undersmooth)),
            (LambdaChoice::Fixed(_), _) => (None, None, None),
        };
        TestOutput {
            version: VERSION.to_string(),
            mode: r.mode,
            bridge: r.config.bridge,
            n: r.n,
            statistic: r.statistic.delta,
            argmax_t: r.statistic.argmax_t,
            critical_value: r.critical_value,
            p_value: r.p_value,
            reject: r.reject,
            lambda: r.lambda,
            lambda_cv: r.lambda_cv,
            undersmooth,
            bandwidths: r.bandwidths.clone(),
            k: r.config.k,
            t_max: r.config.t_max,
            sigma_s: r.config.measure.scale,
            b: r.config.bootstrap.replications,
            alpha: r.config.bootstrap.alpha,
            folds,
            lambda_grid_size: grid,
            seed: r.seed,
            boot_stats: r.boot_stats.clone(),
            runtime_ms: r.runtime_ms,
        }
    }
}

/// JSON body of a `simulate` run: one report per γ_W value (a single one otherwise).
#[derive(Debug, Clone, Serialize)]
pub struct SimulateOutput {
    pub version: String,
    pub config: SimulateConfigEcho,
    pub runs: Vec<SimulationReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateConfigEcho {
    #[serde(rename = "K")]
    pub k: usize,
    pub t_max: f64,
    pub sigma_s: f64,
    #[serde(rename = "B")]
    pub b: usize,
    pub alpha: f64,
    pub folds: usize,
    pub lambda: Option<f64>,
    pub lambda_grid_size: usize,
    pub undersmooth: f64,
    pub seed: u64,
}

fn build_config(mode: TestMode, c: &CommonArgs, b: usize) -> TestConfig {
    let mut cfg = TestConfig::new(mode);
    cfg.bridge = match c.bridge {
        BridgeArg::Pmcr => BridgeMode::Pmcr,
        BridgeArg::Mmr => BridgeMode::Mmr,
    };
    cfg.basis = match c.basis {
        BasisArg::Exp => Basis::ComplexExp,
        BasisArg::Sin => Basis::Sin,
        BasisArg::Cos => Basis::Cos,
        BasisArg::Identity => Basis::Identity,
        BasisArg::Indicator => Basis::Indicator,
    };
    cfg.k = c.k;
    cfg.t_max = c.t_max;
    cfg.measure = WeightMeasure { scale: c.sigma_s };
    cfg.lambda = match c.lambda {
        Some(l) => LambdaChoice::Fixed(l),
        None => LambdaChoice::Cv { grid: default_lambda_grid(), folds: c.folds, undersmooth: c.undersmooth },
    };
    cfg.bootstrap.replications = b;
    cfg.bootstrap.alpha = c.alpha;
    cfg.bootstrap.seed = c.seed;
    cfg.recentering = match c.recenter {
        RecenterArg::Projected => Recentering::Projected,
        RecenterArg::Plain => Recentering::Plain,
    };
    cfg.standardize = !c.raw;
    cfg
}

/// Reads the mapped columns of a CSV file.
#[allow(clippy::too_many_arguments)]
pub fn read_csv(
    path: &Path,
    delimiter: char,
    header: bool,
    x: &str,
    y: &str,
    w: &str,
    z: Option<&str>,
    covariates: &[String],
    categorical: &[String],
) -> Result<Dataset> {
    if !delimiter.is_ascii() {
        return Err(Error::InvalidConfig(format!("delimiter '{delimiter}' is not a single-byte character")));
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter as u8)
        .has_headers(header)
        .from_path(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::BadCell { row: i + 1, msg: format!("malformed CSV record: {e}") })?;
        records.push(rec);
    }
    let names: Vec<String> = if header {
        reader.headers().map_err(|e| Error::Io(e.to_string()))?.iter().map(|s| s.trim().to_string()).collect()
    } else {
        (0..records.first().map_or(0, |r| r.len())).map(|i| i.to_string()).collect()
    };
    let index = |name: &str| names.iter().position(|n| n == name).ok_or_else(|| Error::MissingColumn(name.to_string()));
    let read = |name: &str| -> Result<Column> {
        let j = index(name)?;
        let cells: Vec<&str> = records.iter().map(|r| r.get(j).unwrap_or("").trim()).collect();
        if categorical.iter().any(|c| c == name) {
            if let Some(i) = cells.iter().position(|c| c.is_empty()) {
                return Err(Error::BadCell { row: i + 1, msg: format!("empty cell in column {name}") });
            }
            return Ok(Column::from_labels(&cells));
        }
        let values = cells
            .iter()
            .enumerate()
            .map(|(i, c)| match c.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(_) => Err(Error::BadCell { row: i + 1, msg: format!("non-finite value '{c}' in column {name}") }),
                Err(_) => Err(Error::BadCell { row: i + 1, msg: format!("cannot parse '{c}' as a number in column {name}") }),
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(Column::continuous(values))
    };
    Ok(Dataset {
        x: read(x)?,
        y: read(y)?,
        w: read(w)?,
        z: z.map(read).transpose()?,
        covariates: covariates.iter().map(|c| read(c)).collect::<Result<_>>()?,
    })
}

fn pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(t) => Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?
            .install(f)),
        None => Ok(f()),
    }
}

pub fn cmd_test(args: &TestArgs, stdout: &mut dyn Write) -> Result<i32> {
    let mode: TestMode = args.mode.into();
    let mut categorical = args.categorical.clone();
    if mode == TestMode::Discrete {
        categorical.extend([args.x.clone(), args.y.clone(), args.w.clone()]);
    }
    let data = read_csv(
        &args.input,
        args.delimiter,
        !args.no_header,
        &args.x,
        &args.y,
        &args.w,
        args.z.as_deref(),
        &args.covariates,
        &categorical,
    )?;
    if data.n() < MIN_SAMPLE {
        return Err(Error::SampleSize(data.n()));
    }
    let cfg = build_config(mode, &args.common, args.b);
    let report = pool(args.common.threads, || run_test(&data, &cfg))??;
    let json = serde_json::to_string_pretty(&TestOutput::from_report(&report)).map_err(|e| Error::Io(e.to_string()))?;
    match &args.out {
        Some(p) => std::fs::write(p, json + "\n")?,
        None => writeln!(stdout, "{json}")?,
    }
    Ok(if report.reject { EXIT_REJECT } else { EXIT_ACCEPT })
}

/// Scenario list for a simulate invocation, one entry per γ_W for example1.
pub fn resolve_scenarios(args: &SimulateArgs) -> Result<Vec<Scenario>> {
    let first = Scenario::parse(&args.scenario, args.gamma_w.first().copied().unwrap_or(1.0))?;
    if args.scenario != "example1" {
        return Ok(vec![first]);
    }
    if args.gamma_w.is_empty() {
        return Err(Error::InvalidConfig("example1 needs at least one --gamma-w value".into()));
    }
    Ok(args.gamma_w.iter().map(|&g| Scenario::LinearTwoProxy { gamma_w: g, hypothesis: Hypothesis::H1 }).collect())
}

fn scenario_mode(s: &Scenario, proxy: Option<ProxyArg>) -> Result<TestMode> {
    let base = s.default_mode();
    match (base, proxy) {
        (TestMode::Discrete, Some(_)) => Err(Error::InvalidConfig("--mode applies to continuous scenarios only".into())),
        (TestMode::Discrete, None) => Ok(TestMode::Discrete),
        (_, Some(ProxyArg::Single)) => Ok(TestMode::ContinuousSingle),
        (_, Some(ProxyArg::Two)) => Ok(TestMode::ContinuousTwoProxy),
        (m, None) => Ok(m),
    }
}

pub fn cmd_simulate(args: &SimulateArgs, stdout: &mut dyn Write) -> Result<i32> {
    if args.reps == 0 {
        return Err(Error::InvalidConfig("--reps must be at least 1".into()));
    }
    if let Some(&n) = args.n.iter().find(|&&n| n < MIN_SAMPLE) {
        return Err(Error::SampleSize(n));
    }
    let scenarios = resolve_scenarios(args)?;
    let mut runs = Vec::new();
    for s in &scenarios {
        let cfg = build_config(scenario_mode(s, args.mode)?, &args.common, args.b);
        runs.push(run_simulation(s, &args.n, args.reps, &cfg, args.common.seed, args.common.threads)?);
    }
    let out = SimulateOutput {
        version: VERSION.to_string(),
        config: SimulateConfigEcho {
            k: args.common.k,
            t_max: args.common.t_max,
            sigma_s: args.common.sigma_s,
            b: args.b,
            alpha: args.common.alpha,
            folds: args.common.folds,
            lambda: args.common.lambda,
            lambda_grid_size: default_lambda_grid().len(),
            undersmooth: args.common.undersmooth,
            seed: args.common.seed,
        },
        runs,
    };
    let prefix = args.out.clone().unwrap_or_else(|| PathBuf::from(format!("proxytest-{}", args.scenario)));
    let json = serde_json::to_string_pretty(&out).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(with_suffix(&prefix, ".json"), json + "\n")?;
    std::fs::write(with_suffix(&prefix, ".csv"), replicate_csv(&out.runs)?)?;
    write!(stdout, "{}", rate_table(&out.runs))?;
    Ok(EXIT_ACCEPT)
}

/// CSV with one row per replicate: scenario, n, rep, p_value, reject.
/// Appends rather than replaces, so prefixes like `gw0.5` keep their dot.
fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn replicate_csv(runs: &[SimulationReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["scenario", "n", "rep", "p_value", "reject"]).map_err(|e| Error::Io(e.to_string()))?;
    for run in runs {
        for r in &run.replicates {
            w.write_record([run.scenario.clone(), r.n.to_string(), r.rep.to_string(), r.p_value.to_string(), r.reject.to_string()])
                .map_err(|e| Error::Io(e.to_string()))?;
        }
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.to_string()))?).map_err(|e| Error::Io(e.to_string()))
}

pub fn rate_table(runs: &[SimulationReport]) -> String {
    let mut s = format!("{:<24} {:>7} {:>6} {:>7} {:>17}\n", "scenario", "n", "reps", "rate", "wilson95");
    for run in runs {
        for r in &run.rates {
            s += &format!(
                "{:<24} {:>7} {:>6} {:>7.3} [{:>6.3}, {:>6.3}]\n",
                run.scenario, r.n, r.reps, r.rate, r.wilson_low, r.wilson_high
            );
        }
    }
    s
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = write!(stdout, "{}", e.render());
                    return if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand { EXIT_ERROR } else { EXIT_ACCEPT };
                }
                _ => EXIT_ERROR,
            };
            let _ = write!(stderr, "{}", e.render());
            return code;
        }
    };
    let result = match &cli.command {
        Command::Test(a) => cmd_test(a, stdout),
        Command::Simulate(a) => cmd_simulate(a, stdout),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_ERROR
        }
    }
}
