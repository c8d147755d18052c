//! Single-dataset test pipeline and Monte-Carlo rejection-rate campaigns.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{bootstrap_distribution, decide, Aggregate, BootstrapConfig, BootstrapKernel};
use crate::bridge_continuous::{default_lambda_grid, fit, select_lambda, Basis, BridgeMode, Design, TGrid};
use crate::bridge_discrete::{ols_bridge, projected_residual, sample_residuals, statistic_map, tabulate};
use crate::dataset::{Dataset, VarKind};
use crate::error::{Error, Result};
use crate::numerics::{median_heuristic, standardize};
use crate::scenarios::{
    gen_covariate, gen_random_scm, gen_two_proxy, DiscreteDgp, Hypothesis, LinearGaussianParams, RandomScmConfig,
    TwoProxyKind,
};
use crate::teststats::{delta_continuous, delta_discrete, grid_weights, weight_factor, StatisticValue, WeightMeasure};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Diagonal tolerance of the weight-matrix factor used inside the bootstrap.
const WEIGHT_FACTOR_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestMode {
    ContinuousSingle,
    ContinuousTwoProxy,
    Discrete,
}

impl TestMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TestMode::ContinuousSingle => "continuous-single",
            TestMode::ContinuousTwoProxy => "continuous-two-proxy",
            TestMode::Discrete => "discrete",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaChoice {
    Fixed(f64),
    /// K-fold selection; the test then uses the selected value divided by `undersmooth`.
    Cv { grid: Vec<f64>, folds: usize, undersmooth: f64 },
}

/// How bootstrap replicates treat the fitted bridge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Recentering {
    /// ω ∘ Û passed through the estimator's residual-maker (I − S).
    Projected,
    /// ω ∘ Û used as is.
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub mode: TestMode,
    pub bridge: BridgeMode,
    pub basis: Basis,
    pub k: usize,
    pub t_max: f64,
    pub measure: WeightMeasure,
    pub lambda: LambdaChoice,
    pub bootstrap: BootstrapConfig,
    pub recentering: Recentering,
    pub standardize: bool,
}

pub const DEFAULT_UNDERSMOOTH: f64 = 20.0;

impl TestConfig {
    pub fn new(mode: TestMode) -> Self {
        TestConfig {
            mode,
            bridge: BridgeMode::Pmcr,
            basis: Basis::ComplexExp,
            k: 100,
            t_max: 3.0,
            measure: WeightMeasure::default(),
            lambda: LambdaChoice::Cv { grid: default_lambda_grid(), folds: 5, undersmooth: DEFAULT_UNDERSMOOTH },
            bootstrap: BootstrapConfig { replications: 500, alpha: 0.05, seed: 0 },
            recentering: Recentering::Projected,
            standardize: true,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.bootstrap.seed = seed;
        self
    }

    pub fn with_replications(mut self, b: usize) -> Self {
        self.bootstrap.replications = b;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bandwidths {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    pub z: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub mode: TestMode,
    pub n: usize,
    pub statistic: StatisticValue,
    pub boot_stats: Vec<f64>,
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
    /// λ used by the fit (after undersmoothing); None for discrete mode.
    pub lambda: Option<f64>,
    pub lambda_cv: Option<f64>,
    pub bandwidths: Option<Bandwidths>,
    pub config: TestConfig,
    pub seed: u64,
    pub runtime_ms: u128,
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive hash of a sequence of words and a label.
pub fn derive_seed(master: u64, label: &str, parts: &[u64]) -> u64 {
    let mut h = mix64(master);
    for b in label.bytes() {
        h = mix64(h ^ b as u64);
    }
    for &p in parts {
        h = mix64(h ^ p);
    }
    h
}

fn raw_or_standardized(v: &[f64], standardize_it: bool) -> Result<Vec<f64>> {
    if standardize_it {
        Ok(standardize(v)?.0)
    } else {
        Ok(v.to_vec())
    }
}

pub fn run_test(data: &Dataset, cfg: &TestConfig) -> Result<TestReport> {
    let start = Instant::now();
    data.validate()?;
    cfg.bootstrap.validate()?;
    if cfg.k == 0 {
        return Err(Error::InvalidConfig("K must be at least 1".into()));
    }
    let mut report = match cfg.mode {
        TestMode::ContinuousSingle | TestMode::ContinuousTwoProxy => run_continuous(data, cfg)?,
        TestMode::Discrete => run_discrete(data, cfg)?,
    };
    report.runtime_ms = start.elapsed().as_millis();
    Ok(report)
}

fn check_continuous(data: &Dataset, cfg: &TestConfig) -> Result<()> {
    for (name, c) in [("x", &data.x), ("y", &data.y), ("w", &data.w)] {
        if c.kind != VarKind::Continuous && name != "y" {
            return Err(Error::InvalidConfig(format!("continuous modes need a continuous {name} column")));
        }
    }
    if cfg.mode == TestMode::ContinuousTwoProxy && data.z.is_none() {
        return Err(Error::InvalidConfig("two-proxy mode requires a z column".into()));
    }
    Ok(())
}

fn run_continuous(data: &Dataset, cfg: &TestConfig) -> Result<TestReport> {
    check_continuous(data, cfg)?;
    let mut design = Design::from_dataset(data)?;
    if !cfg.standardize {
        let mut x = vec![data.x.values.clone()];
        let mut w = vec![data.w.values.clone()];
        for v in &data.covariates {
            x.push(v.values.clone());
            w.push(v.values.clone());
        }
        design.x = x;
        design.w = w;
        design.y = data.y.numeric_values();
        design.kernel_x = design.x.iter().map(|c| crate::numerics::KernelConfig::gaussian(median_heuristic(c)?)).collect::<Result<_>>()?;
        design.kernel_w = design.w.iter().map(|c| crate::numerics::KernelConfig::gaussian(median_heuristic(c)?)).collect::<Result<_>>()?;
    }
    let grid = TGrid::uniform(cfg.k, cfg.t_max)?;
    let (lambda, lambda_cv) = match &cfg.lambda {
        LambdaChoice::Fixed(l) => (*l, None),
        LambdaChoice::Cv { grid: lg, folds, undersmooth } => {
            if !(*undersmooth >= 1.0) {
                return Err(Error::InvalidConfig("undersmoothing factor must be at least 1".into()));
            }
            let sel = select_lambda(&design, &grid, lg, *folds, cfg.basis, cfg.bridge, derive_seed(cfg.bootstrap.seed, "cv", &[]))?;
            (sel.lambda / undersmooth, Some(sel.lambda))
        }
    };
    let fitted = fit(&design, &grid, lambda, cfg.basis, cfg.bridge)?;
    let field = fitted.residual_field();

    let mut cond: Vec<Vec<f64>> = design.x.clone();
    let mut z_bw = None;
    if cfg.mode == TestMode::ContinuousTwoProxy {
        let z = raw_or_standardized(&data.z.as_ref().expect("checked above").values, cfg.standardize)?;
        z_bw = Some(median_heuristic(&z)?);
        cond.push(z);
    }
    let cond_refs: Vec<&[f64]> = cond.iter().map(|c| c.as_slice()).collect();
    let statistic = delta_continuous(&field, &cond_refs, &cfg.measure)?;

    let g = weight_factor(&cond_refs, &cfg.measure, WEIGHT_FACTOR_TOL).g;
    let map = match cfg.recentering {
        Recentering::Projected => fitted.smoother.left_residual_maker(&g),
        Recentering::Plain => g.transpose(),
    };
    let n = design.n();
    let kernel = BootstrapKernel { map, scale: 1.0 / n as f64, aggregate: Aggregate::Max };
    let boot = bootstrap_distribution(&field, &kernel, &cfg.bootstrap)?;
    let decision = decide(&statistic, &boot)?;
    Ok(TestReport {
        mode: cfg.mode,
        n,
        statistic,
        boot_stats: boot.boot_stats,
        critical_value: decision.critical_value,
        p_value: decision.p_value,
        reject: decision.reject,
        lambda: Some(lambda),
        lambda_cv,
        bandwidths: Some(Bandwidths {
            x: design.kernel_x.iter().map(|k| k.bandwidth).collect(),
            w: design.kernel_w.iter().map(|k| k.bandwidth).collect(),
            z: z_bw,
        }),
        config: cfg.clone(),
        seed: cfg.bootstrap.seed,
        runtime_ms: 0,
    })
}

fn run_discrete(data: &Dataset, cfg: &TestConfig) -> Result<TestReport> {
    let grid = match cfg.basis {
        Basis::Indicator => TGrid::levels((0..data.y.levels.len().max(1)).map(|v| v as f64).collect()),
        _ => TGrid::uniform(cfg.k, cfg.t_max)?,
    };
    let table = tabulate(data, &grid, cfg.basis)?;
    let bridge = ols_bridge(&table)?;
    let projected = projected_residual(&table, &bridge);
    let statistic = delta_discrete(&table, &projected, &grid, &cfg.measure)?;
    let field = sample_residuals(&table, &bridge)?;
    let map = statistic_map(&table, cfg.recentering == Recentering::Projected)?;
    let kernel = BootstrapKernel { map, scale: 1.0, aggregate: Aggregate::Weighted(grid_weights(&grid, &cfg.measure)) };
    let boot = bootstrap_distribution(&field, &kernel, &cfg.bootstrap)?;
    let decision = decide(&statistic, &boot)?;
    Ok(TestReport {
        mode: cfg.mode,
        n: table.n,
        statistic,
        boot_stats: boot.boot_stats,
        critical_value: decision.critical_value,
        p_value: decision.p_value,
        reject: decision.reject,
        lambda: None,
        lambda_cv: None,
        bandwidths: None,
        config: cfg.clone(),
        seed: cfg.bootstrap.seed,
        runtime_ms: 0,
    })
}

/// Named data-generating processes for simulation campaigns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Random nonlinear SCM.
    RandomScm(Hypothesis),
    /// The three-level discrete tables.
    DiscreteTables(Hypothesis),
    /// Random discrete tables with |W| = |U| = 5, |X| = 7, |Y| = 4.
    RandomDiscrete(Hypothesis),
    /// Standardized linear-Gaussian two-proxy model with a given γ_W.
    LinearTwoProxy { gamma_w: f64, hypothesis: Hypothesis },
    /// Nonlinear two-proxy model.
    Nonlinear(Hypothesis),
    /// Unit linear-Gaussian model with γ_X = 1.
    LinearMoment { gamma_x: f64 },
    /// Observed covariate confounding X and Y.
    Covariate { delta: f64 },
}

pub const SCENARIO_IDS: &[&str] =
    &["sec611-h0", "sec611-h1", "sec612-h0", "sec612-h1", "example1", "h3-nonlinear", "b3-mmr", "random-discrete-h0", "random-discrete-h1", "covariate-h0", "covariate-h1"];

impl Scenario {
    /// Parses a scenario id; `gamma_w` applies to example1.
    pub fn parse(id: &str, gamma_w: f64) -> Result<Self> {
        Ok(match id {
            "sec611-h0" => Scenario::RandomScm(Hypothesis::H0),
            "sec611-h1" => Scenario::RandomScm(Hypothesis::H1),
            "sec612-h0" => Scenario::DiscreteTables(Hypothesis::H0),
            "sec612-h1" => Scenario::DiscreteTables(Hypothesis::H1),
            "example1" => Scenario::LinearTwoProxy { gamma_w, hypothesis: Hypothesis::H1 },
            "h3-nonlinear" => Scenario::Nonlinear(Hypothesis::H1),
            "b3-mmr" => Scenario::LinearMoment { gamma_x: 1.0 },
            "random-discrete-h0" => Scenario::RandomDiscrete(Hypothesis::H0),
            "random-discrete-h1" => Scenario::RandomDiscrete(Hypothesis::H1),
            "covariate-h0" => Scenario::Covariate { delta: 0.0 },
            "covariate-h1" => Scenario::Covariate { delta: 1.0 },
            other => {
                return Err(Error::InvalidConfig(format!("unknown scenario '{other}'; available: {}", SCENARIO_IDS.join(", "))))
            }
        })
    }

    pub fn id(&self) -> String {
        let h = |h: &Hypothesis| if *h == Hypothesis::H0 { "h0" } else { "h1" };
        match self {
            Scenario::RandomScm(x) => format!("sec611-{}", h(x)),
            Scenario::DiscreteTables(x) => format!("sec612-{}", h(x)),
            Scenario::RandomDiscrete(x) => format!("random-discrete-{}", h(x)),
            Scenario::LinearTwoProxy { gamma_w, hypothesis } => format!("example1-gw{gamma_w}-{}", h(hypothesis)),
            Scenario::Nonlinear(x) => format!("h3-nonlinear-{}", h(x)),
            Scenario::LinearMoment { gamma_x } => format!("b3-mmr-gx{gamma_x}"),
            Scenario::Covariate { delta } => format!("covariate-d{delta}"),
        }
    }

    /// Test mode a scenario is run in unless overridden.
    pub fn default_mode(&self) -> TestMode {
        match self {
            Scenario::DiscreteTables(_) | Scenario::RandomDiscrete(_) => TestMode::Discrete,
            Scenario::Nonlinear(_) => TestMode::ContinuousTwoProxy,
            _ => TestMode::ContinuousSingle,
        }
    }

    pub fn generate(&self, n: usize, seed: u64) -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(match self {
            Scenario::RandomScm(h) => gen_random_scm(&RandomScmConfig::full(*h), n, &mut rng)?.0,
            Scenario::DiscreteTables(h) => DiscreteDgp::three_level(*h).sample(n, &mut rng)?,
            Scenario::RandomDiscrete(h) => DiscreteDgp::random(*h, &mut rng).sample(n, &mut rng)?,
            Scenario::LinearTwoProxy { gamma_w, hypothesis } => gen_two_proxy(TwoProxyKind::LinearStandardized, *gamma_w, *hypothesis, n, &mut rng),
            Scenario::Nonlinear(h) => gen_two_proxy(TwoProxyKind::NonlinearSine, 0.0, *h, n, &mut rng),
            Scenario::LinearMoment { gamma_x } => LinearGaussianParams::unit(*gamma_x).sample(n, &mut rng),
            Scenario::Covariate { delta } => gen_covariate(*delta, n, &mut rng),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replicate {
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub n: usize,
    pub reps: usize,
    pub rejections: usize,
    pub rate: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    /// Binomial standard error of the rate.
    pub rate_se: f64,
    /// Standard deviation of the 0/1 outcomes.
    pub outcome_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub version: String,
    pub scenario: String,
    pub mode: TestMode,
    pub bridge: BridgeMode,
    pub master_seed: u64,
    pub reps: usize,
    pub b: usize,
    pub alpha: f64,
    pub rates: Vec<RateSummary>,
    pub replicates: Vec<Replicate>,
}

/// Wilson score interval at 95%.
pub fn wilson_interval(k: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let nf = n as f64;
    let p = k as f64 / nf;
    let denom = 1.0 + z * z / nf;
    let center = (p + z * z / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt() / denom;
    let low = if k == 0 { 0.0 } else { (center - half).max(0.0) };
    let high = if k == n { 1.0 } else { (center + half).min(1.0) };
    (low, high)
}

pub fn summarize(n: usize, outcomes: &[bool]) -> RateSummary {
    let reps = outcomes.len();
    let rejections = outcomes.iter().filter(|&&r| r).count();
    let rate = if reps == 0 { 0.0 } else { rejections as f64 / reps as f64 };
    let (wilson_low, wilson_high) = wilson_interval(rejections, reps);
    RateSummary {
        n,
        reps,
        rejections,
        rate,
        wilson_low,
        wilson_high,
        rate_se: if reps == 0 { 0.0 } else { (rate * (1.0 - rate) / reps as f64).sqrt() },
        outcome_sd: (rate * (1.0 - rate)).sqrt(),
    }
}

/// Seed of replicate `rep` at sample size `n`.
pub fn replicate_seed(master: u64, scenario: &str, n: usize, rep: usize) -> u64 {
    derive_seed(master, scenario, &[n as u64, rep as u64])
}

/// Runs `reps` fresh generate-and-test pipelines per sample size. `threads` caps the worker count;
/// results do not depend on it.
pub fn run_simulation(
    scenario: &Scenario,
    n_list: &[usize],
    reps: usize,
    cfg: &TestConfig,
    master_seed: u64,
    threads: Option<usize>,
) -> Result<SimulationReport> {
    if reps == 0 {
        return Err(Error::InvalidConfig("reps must be at least 1".into()));
    }
    if n_list.is_empty() {
        return Err(Error::InvalidConfig("empty n list".into()));
    }
    let id = scenario.id();
    let jobs: Vec<(usize, usize)> = n_list.iter().flat_map(|&n| (0..reps).map(move |r| (n, r))).collect();
    let work = || -> Result<Vec<Replicate>> {
        jobs.par_iter()
            .map(|&(n, rep)| {
                let seed = replicate_seed(master_seed, &id, n, rep);
                let data = scenario.generate(n, seed)?;
                let report = run_test(&data, &cfg.clone().with_seed(seed))?;
                Ok(Replicate { n, rep, seed, statistic: report.statistic.delta, p_value: report.p_value, reject: report.reject })
            })
            .collect()
    };
    let replicates = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?
            .install(work)?,
        None => work()?,
    };
    let rates = n_list
        .iter()
        .map(|&n| summarize(n, &replicates.iter().filter(|r| r.n == n).map(|r| r.reject).collect::<Vec<_>>()))
        .collect();
    Ok(SimulationReport {
        version: VERSION.to_string(),
        scenario: id,
        mode: cfg.mode,
        bridge: cfg.bridge,
        master_seed,
        reps,
        b: cfg.bootstrap.replications,
        alpha: cfg.bootstrap.alpha,
        rates,
        replicates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_contains_rate() {
        for (k, n) in [(0, 10), (5, 10), (10, 10), (3, 100)] {
            let s = summarize(n, &(0..n).map(|i| i < k).collect::<Vec<_>>());
            assert!(s.wilson_low <= s.rate && s.rate <= s.wilson_high);
        }
    }

    #[test]
    fn seeds_differ_across_cells() {
        let a = replicate_seed(1, "x", 100, 0);
        assert_ne!(a, replicate_seed(1, "x", 100, 1));
        assert_ne!(a, replicate_seed(1, "x", 200, 0));
        assert_ne!(a, replicate_seed(1, "y", 100, 0));
        assert_eq!(a, replicate_seed(1, "x", 100, 0));
    }

    #[test]
    fn unknown_scenario_lists_ids() {
        let e = Scenario::parse("nope", 1.0).unwrap_err();
        assert!(e.to_string().contains("sec611-h0"));
    }

    #[test]
    fn single_rep_rate_is_binary() {
        let cfg = TestConfig::new(TestMode::Discrete).with_replications(50);
        let r = run_simulation(&Scenario::DiscreteTables(Hypothesis::H0), &[300], 1, &cfg, 3, Some(1)).unwrap();
        assert!(r.rates[0].rate == 0.0 || r.rates[0].rate == 1.0);
    }

    #[test]
    fn alpha_one_always_rejects() {
        let mut cfg = TestConfig::new(TestMode::Discrete).with_replications(40);
        cfg.bootstrap.alpha = 1.0;
        let r = run_simulation(&Scenario::DiscreteTables(Hypothesis::H0), &[300], 4, &cfg, 3, None).unwrap();
        assert_eq!(r.rates[0].rate, 1.0);
    }

    #[test]
    fn zero_reps_is_invalid() {
        let cfg = TestConfig::new(TestMode::Discrete);
        assert!(run_simulation(&Scenario::DiscreteTables(Hypothesis::H0), &[300], 0, &cfg, 3, None).is_err());
    }

    #[test]
    fn two_proxy_requires_z() {
        let d = LinearGaussianParams::unit(0.0).sample(50, &mut ChaCha8Rng::seed_from_u64(1));
        let cfg = TestConfig::new(TestMode::ContinuousTwoProxy);
        assert!(matches!(run_test(&d, &cfg), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn report_reject_matches_inequality() {
        let d = LinearGaussianParams::unit(1.0).sample(150, &mut ChaCha8Rng::seed_from_u64(2));
        let mut cfg = TestConfig::new(TestMode::ContinuousSingle).with_replications(99).with_seed(4);
        cfg.k = 10;
        let r = run_test(&d, &cfg).unwrap();
        assert_eq!(r.reject, r.statistic.delta >= r.critical_value);
        assert!(r.p_value > 0.0 && r.p_value <= 1.0);
    }
}
