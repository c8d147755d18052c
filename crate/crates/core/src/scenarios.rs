//! Synthetic data generators and closed-form oracles for linear-Gaussian models.

use nalgebra::DMatrix;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Exp, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bridge_continuous::{phi, Basis, TGrid};
use crate::bridge_discrete::CategoricalTable;
use crate::dataset::{Column, Dataset};
use crate::error::{Error, Result};

fn normal<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// U ~ N(0,1); X = α₀ + α_U U + ε; W = β₀ + β_U U + ε; Y = γ₀ + γ_U U + γ_X X + γ_W W + ε.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LinearGaussianParams {
    pub alpha_u: f64,
    pub alpha_0: f64,
    pub beta_u: f64,
    pub beta_0: f64,
    pub gamma_u: f64,
    pub gamma_x: f64,
    pub gamma_w: f64,
    pub gamma_0: f64,
}

impl LinearGaussianParams {
    pub fn unit(gamma_x: f64) -> Self {
        LinearGaussianParams { alpha_u: 1.0, beta_u: 1.0, gamma_u: 1.0, gamma_x, ..Default::default() }
    }

    /// Standardized two-proxy model in the X, W scale: Y = X/√5 + U + γ_W W/√5 + ε.
    pub fn standardized(gamma_w: f64) -> Self {
        let s5 = 5f64.sqrt();
        LinearGaussianParams { alpha_u: 2.0, beta_u: -2.0, gamma_u: 1.0, gamma_x: 1.0 / s5, gamma_w: gamma_w / s5, ..Default::default() }
    }

    pub fn sample<R: RngCore + ?Sized>(&self, n: usize, rng: &mut R) -> Dataset {
        let (mut x, mut y, mut w) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let u = normal(rng);
            let xi = self.alpha_0 + self.alpha_u * u + normal(rng);
            let wi = self.beta_0 + self.beta_u * u + normal(rng);
            let yi = self.gamma_0 + self.gamma_u * u + self.gamma_x * xi + self.gamma_w * wi + normal(rng);
            x.push(xi);
            w.push(wi);
            y.push(yi);
        }
        Dataset::continuous(x, y, w)
    }
}

/// Gaussian bridge h(w, y) = N(y; intercept + slope·w, variance).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticBridge {
    pub slope: f64,
    pub intercept: f64,
    pub variance: f64,
}

impl AnalyticBridge {
    /// H(w, t) = ∫ e^{ity} h(w, y) dy.
    pub fn transform(&self, w: f64, t: f64) -> (f64, f64) {
        let amp = (-0.5 * t * t * self.variance).exp();
        let (s, c) = (t * (self.intercept + self.slope * w)).sin_cos();
        (amp * c, amp * s)
    }

    pub fn density(&self, w: f64, y: f64) -> f64 {
        let z = y - self.intercept - self.slope * w;
        (-0.5 * z * z / self.variance).exp() / (2.0 * std::f64::consts::PI * self.variance).sqrt()
    }

    /// The same bridge after Y is replaced by (Y − mean)/sd: H'(w, t) = H(w, t/sd) e^{−it·mean/sd}.
    pub fn transform_standardized(&self, w: f64, t: f64, mean: f64, sd: f64) -> (f64, f64) {
        let (a, b) = self.transform(w, t / sd);
        let (s, c) = (-t * mean / sd).sin_cos();
        (a * c - b * s, a * s + b * c)
    }
}

/// Closed-form bridge of the model with γ_X = γ_W = 0.
pub fn analytic_bridge(p: &LinearGaussianParams) -> Result<AnalyticBridge> {
    if p.gamma_x != 0.0 || p.gamma_w != 0.0 {
        return Err(Error::InvalidConfig("the closed-form bridge needs gamma_x = gamma_w = 0".into()));
    }
    if p.beta_u == 0.0 {
        return Err(Error::Undefined("beta_u = 0".into()));
    }
    let slope = p.gamma_u / p.beta_u;
    let variance = 1.0 - slope * slope;
    if !(variance > 0.0) {
        return Err(Error::NoSolution(format!("bridge variance {variance} is not positive")));
    }
    Ok(AnalyticBridge { slope, intercept: p.gamma_0 - slope * p.beta_0, variance })
}

/// Linear h(W) = b_w W + b₀ with E[Y − h(W) | X] = 0.
pub fn mmr_first_moment_solution(p: &LinearGaussianParams) -> Result<(f64, f64)> {
    if p.gamma_w != 0.0 {
        return Err(Error::InvalidConfig("the first-moment solution needs gamma_w = 0".into()));
    }
    if p.alpha_u * p.beta_u == 0.0 {
        return Err(Error::Undefined("alpha_u * beta_u = 0".into()));
    }
    let bw = ((p.alpha_u.powi(2) + 1.0) * p.gamma_x + p.gamma_u * p.alpha_u) / (p.beta_u * p.alpha_u);
    Ok((bw, p.gamma_0 + p.gamma_x * p.alpha_0 - bw * p.beta_0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Solvability {
    pub solvable: bool,
    /// σ²_{Y|X} − (μ^{Y|X})² σ²_{W|X} / (μ^{W|X})².
    pub margin: f64,
}

/// A Gaussian bridge exists iff the conditional variance of Y given X exceeds
/// what the W-regression already explains: the margin is the leftover variance.
pub fn solvability_linear_gaussian(p: &LinearGaussianParams) -> Result<Solvability> {
    if p.alpha_u * p.beta_u == 0.0 {
        return Err(Error::Undefined("alpha_u * beta_u = 0".into()));
    }
    let var_u = 1.0 / (p.alpha_u.powi(2) + 1.0);
    let shrink = p.alpha_u * var_u;
    let mu_w = p.beta_u * shrink;
    let load = p.gamma_u + p.gamma_w * p.beta_u;
    let mu_y = p.gamma_x + load * shrink;
    let var_w = p.beta_u.powi(2) * var_u + 1.0;
    let var_y = load.powi(2) * var_u + p.gamma_w.powi(2) + 1.0;
    let margin = var_y - mu_y.powi(2) * var_w / mu_w.powi(2);
    Ok(Solvability { solvable: margin > 0.0, margin })
}

/// Root of the standardized-model margin in γ_W by bisection on [lo, hi].
pub fn standardized_gaussian_boundary(lo: f64, hi: f64) -> Result<f64> {
    let f = |g: f64| solvability_linear_gaussian(&LinearGaussianParams::standardized(g)).map(|s| s.margin);
    let (mut a, mut b) = (lo, hi);
    let (fa, fb) = (f(a)?, f(b)?);
    if fa.signum() == fb.signum() {
        return Err(Error::InvalidInput("margin does not change sign on the interval".into()));
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if f(m)?.signum() == fa.signum() {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hypothesis {
    H0,
    H1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScmFunction {
    Linear,
    Tanh,
    Sin,
    Sqrt,
}

impl ScmFunction {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            ScmFunction::Linear => v,
            ScmFunction::Tanh => v.tanh(),
            ScmFunction::Sin => v.sin(),
            ScmFunction::Sqrt => v.signum() * v.abs().sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Noise {
    Gaussian,
    Uniform,
    Exponential,
    Gamma,
}

impl Noise {
    /// Mean-zero draw: uniform on ±√3, Exp(1) − 1, Gamma(2, 1) − 2.
    pub fn draw<R: RngCore + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            Noise::Gaussian => normal(rng),
            Noise::Uniform => rng.random_range(-3f64.sqrt()..3f64.sqrt()),
            Noise::Exponential => Exp::new(1.0).expect("valid rate").sample(rng) - 1.0,
            Noise::Gamma => Gamma::new(2.0, 1.0).expect("valid shape").sample(rng) - 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomScmConfig {
    pub hypothesis: Hypothesis,
    pub functions: Vec<ScmFunction>,
    pub noises: Vec<Noise>,
}

impl RandomScmConfig {
    pub fn full(hypothesis: Hypothesis) -> Self {
        RandomScmConfig {
            hypothesis,
            functions: vec![ScmFunction::Linear, ScmFunction::Tanh, ScmFunction::Sin, ScmFunction::Sqrt],
            noises: vec![Noise::Gaussian, Noise::Uniform, Noise::Exponential, Noise::Gamma],
        }
    }
}

/// Structure drawn once per dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmDraw {
    pub f: [ScmFunction; 3],
    pub noise: [Noise; 4],
    pub a_x: f64,
    pub a_w: f64,
    pub a_yu: f64,
    pub a_yx: f64,
}

fn coefficient<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    let m = rng.random_range(0.5..1.5);
    if rng.random::<bool>() {
        m
    } else {
        -m
    }
}

pub fn draw_scm<R: RngCore + ?Sized>(cfg: &RandomScmConfig, rng: &mut R) -> Result<ScmDraw> {
    if cfg.functions.is_empty() || cfg.noises.is_empty() {
        return Err(Error::InvalidConfig("function and noise pools must be nonempty".into()));
    }
    let mut f = || cfg.functions[rng.random_range(0..cfg.functions.len())];
    let fs = [f(), f(), f()];
    let mut e = || cfg.noises[rng.random_range(0..cfg.noises.len())];
    let ns = [e(), e(), e(), e()];
    Ok(ScmDraw { f: fs, noise: ns, a_x: coefficient(rng), a_w: coefficient(rng), a_yu: coefficient(rng), a_yx: coefficient(rng) })
}

/// U = ε_U; X = f_X(a_X U) + ε_X; W = f_W(a_W U) + ε_W; Y = f_Y(a_YU U [+ a_YX X]) + ε_Y.
pub fn gen_random_scm<R: RngCore + ?Sized>(cfg: &RandomScmConfig, n: usize, rng: &mut R) -> Result<(Dataset, ScmDraw)> {
    let d = draw_scm(cfg, rng)?;
    Ok((sample_scm(&d, cfg.hypothesis, n, rng), d))
}

/// Samples n rows from a fixed draw.
pub fn sample_scm<R: RngCore + ?Sized>(d: &ScmDraw, hypothesis: Hypothesis, n: usize, rng: &mut R) -> Dataset {
    let h1 = hypothesis == Hypothesis::H1;
    let (mut x, mut y, mut w) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        let u = d.noise[0].draw(rng);
        let xi = d.f[0].apply(d.a_x * u) + d.noise[1].draw(rng);
        let wi = d.f[1].apply(d.a_w * u) + d.noise[2].draw(rng);
        let arg = d.a_yu * u + if h1 { d.a_yx * xi } else { 0.0 };
        let yi = d.f[2].apply(arg) + d.noise[3].draw(rng);
        x.push(xi);
        w.push(wi);
        y.push(yi);
    }
    Dataset::continuous(x, y, w)
}

/// Ancestral sampler for categorical X → U → W and (U, X) → Y.
/// Conditional tables are column-stochastic: column j is the law given parent level j.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDgp {
    pub p_x: Vec<f64>,
    pub p_u_given_x: Vec<Vec<f64>>,
    pub p_w_given_u: Vec<Vec<f64>>,
    /// One |Y| × |U| table per x level.
    pub p_y_given_ux: Vec<Vec<Vec<f64>>>,
}

fn rows(r: &[&[f64]]) -> Vec<Vec<f64>> {
    r.iter().map(|v| v.to_vec()).collect()
}

fn check_columns(t: &[Vec<f64>], what: &str) -> Result<()> {
    let cols = t.first().map_or(0, |r| r.len());
    if t.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidConfig(format!("{what} is ragged")));
    }
    for j in 0..cols {
        let s: f64 = t.iter().map(|r| r[j]).sum();
        if (s - 1.0).abs() > 1e-12 || t.iter().any(|r| !(r[j] >= 0.0)) {
            return Err(Error::InvalidConfig(format!("column {j} of {what} is not a probability vector")));
        }
    }
    Ok(())
}

fn draw_from<R: RngCore + ?Sized>(probs: impl Iterator<Item = f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

impl DiscreteDgp {
    pub fn three_level(h: Hypothesis) -> Self {
        let h0 = rows(&[&[0.5, 0.4], &[0.3, 0.5], &[0.2, 0.1]]);
        let p_y = match h {
            Hypothesis::H0 => vec![h0.clone(), h0.clone(), h0],
            Hypothesis::H1 => vec![
                rows(&[&[0.5, 0.4], &[0.3, 0.2], &[0.2, 0.4]]),
                rows(&[&[0.4, 0.6], &[0.2, 0.3], &[0.4, 0.1]]),
                rows(&[&[0.3, 0.2], &[0.4, 0.5], &[0.3, 0.3]]),
            ],
        };
        DiscreteDgp {
            p_x: vec![0.3, 0.3, 0.4],
            p_u_given_x: rows(&[&[0.3, 0.6, 0.5], &[0.7, 0.4, 0.5]]),
            p_w_given_u: rows(&[&[0.8, 0.3], &[0.2, 0.7]]),
            p_y_given_ux: p_y,
        }
    }

    /// Random tables with |W| = |U| = 5, |X| = 7, |Y| = 4; under H0 P(Y | U, x) is shared across x.
    pub fn random<R: RngCore + ?Sized>(h: Hypothesis, rng: &mut R) -> Self {
        let (nw, nu, nx, ny) = (5, 5, 7, 4);
        let stoch = |r: usize, c: usize, rng: &mut R| -> Vec<Vec<f64>> {
            let raw: Vec<Vec<f64>> = (0..r).map(|_| (0..c).map(|_| rng.random_range(0.05..1.0)).collect()).collect();
            let sums: Vec<f64> = (0..c).map(|j| raw.iter().map(|row| row[j]).sum()).collect();
            raw.iter().map(|row| row.iter().zip(&sums).map(|(v, s)| v / s).collect()).collect()
        };
        let px = stoch(nx, 1, rng).into_iter().map(|r| r[0]).collect();
        let pux = stoch(nu, nx, rng);
        let pwu = stoch(nw, nu, rng);
        let shared = stoch(ny, nu, rng);
        let pyux = (0..nx)
            .map(|_| match h {
                Hypothesis::H0 => shared.clone(),
                Hypothesis::H1 => stoch(ny, nu, rng),
            })
            .collect();
        DiscreteDgp { p_x: px, p_u_given_x: pux, p_w_given_u: pwu, p_y_given_ux: pyux }
    }

    pub fn validate(&self) -> Result<()> {
        check_columns(&self.p_x.iter().map(|&p| vec![p]).collect::<Vec<_>>(), "P(X)")?;
        check_columns(&self.p_u_given_x, "P(U|X)")?;
        check_columns(&self.p_w_given_u, "P(W|U)")?;
        for t in &self.p_y_given_ux {
            check_columns(t, "P(Y|U,X)")?;
        }
        let (nx, nu) = (self.p_x.len(), self.p_w_given_u[0].len());
        if self.p_u_given_x[0].len() != nx || self.p_u_given_x.len() != nu || self.p_y_given_ux.len() != nx {
            return Err(Error::InvalidConfig("table dimensions disagree".into()));
        }
        Ok(())
    }

    pub fn levels(&self) -> (usize, usize, usize) {
        (self.p_x.len(), self.p_w_given_u.len(), self.p_y_given_ux[0].len())
    }

    pub fn sample<R: RngCore + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Dataset> {
        self.validate()?;
        let (nx, nw, ny) = self.levels();
        let (mut xs, mut ws, mut ys) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let x = draw_from(self.p_x.iter().copied(), rng);
            let u = draw_from(self.p_u_given_x.iter().map(|r| r[x]), rng);
            let w = draw_from(self.p_w_given_u.iter().map(|r| r[u]), rng);
            let y = draw_from(self.p_y_given_ux[x].iter().map(|r| r[u]), rng);
            xs.push(x);
            ws.push(w);
            ys.push(y);
        }
        let labels = |k: usize| (0..k).map(|i| i.to_string()).collect::<Vec<_>>();
        Ok(Dataset {
            x: Column::categorical(xs, labels(nx)),
            w: Column::categorical(ws, labels(nw)),
            y: Column::categorical(ys, labels(ny)),
            z: None,
            covariates: vec![],
        })
    }

    /// Exact P(W | X) as an |X| × |W| matrix.
    pub fn w_given_x(&self) -> DMatrix<f64> {
        let (nx, nw, _) = self.levels();
        let nu = self.p_u_given_x.len();
        DMatrix::from_fn(nx, nw, |x, w| (0..nu).map(|u| self.p_w_given_u[w][u] * self.p_u_given_x[u][x]).sum())
    }

    /// Exact P(Y = y | X = x) as an |X| × |Y| matrix.
    pub fn y_given_x(&self) -> DMatrix<f64> {
        let (nx, _, ny) = self.levels();
        let nu = self.p_u_given_x.len();
        DMatrix::from_fn(nx, ny, |x, y| (0..nu).map(|u| self.p_y_given_ux[x][y][u] * self.p_u_given_x[u][x]).sum())
    }

    /// Table with probabilities in place of frequencies; Y takes the values 0, 1, ... inside φ.
    pub fn population_table(&self, grid: &TGrid, basis: Basis) -> CategoricalTable {
        let (nx, _, ny) = self.levels();
        let py = self.y_given_x();
        let k = grid.len();
        let mut q_re = DMatrix::zeros(nx, k);
        let mut q_im = DMatrix::zeros(nx, k);
        for x in 0..nx {
            for (c, &t) in grid.points().iter().enumerate() {
                for y in 0..ny {
                    let (re, im) = phi(y as f64, t, basis);
                    q_re[(x, c)] += re * py[(x, y)];
                    q_im[(x, c)] += im * py[(x, y)];
                }
            }
        }
        CategoricalTable::from_population(self.w_given_x(), q_re, q_im, self.p_x.clone(), 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwoProxyKind {
    LinearStandardized,
    NonlinearSine,
}

/// Data with a negative-control exposure Z.
/// Standardized two-proxy model: X = 2U + ε, W = −2U + ε, Z = 2U + ε, Y = [X/√5] + U + γ_W W/√5 + ε.
/// Nonlinear: X = 2 sin U + ε, W = −2 sin U + ε, Z = 2 sin U + ε, Y = [X] + sin U + 2W² + ε.
pub fn gen_two_proxy<R: RngCore + ?Sized>(kind: TwoProxyKind, gamma_w: f64, h: Hypothesis, n: usize, rng: &mut R) -> Dataset {
    gen_two_proxy_latent(kind, gamma_w, h, n, rng).0
}

/// As [`gen_two_proxy`], also returning the confounder draws.
pub fn gen_two_proxy_latent<R: RngCore + ?Sized>(
    kind: TwoProxyKind,
    gamma_w: f64,
    h: Hypothesis,
    n: usize,
    rng: &mut R,
) -> (Dataset, Vec<f64>) {
    let s5 = 5f64.sqrt();
    let on = if h == Hypothesis::H1 { 1.0 } else { 0.0 };
    let (mut x, mut y, mut w, mut z, mut us) = (vec![], vec![], vec![], vec![], vec![]);
    for _ in 0..n {
        let u = normal(rng);
        us.push(u);
        let (xi, wi, zi, yi) = match kind {
            TwoProxyKind::LinearStandardized => {
                let xi = 2.0 * u + normal(rng);
                let wi = -2.0 * u + normal(rng);
                let zi = 2.0 * u + normal(rng);
                (xi, wi, zi, on * xi / s5 + u + gamma_w * wi / s5 + normal(rng))
            }
            TwoProxyKind::NonlinearSine => {
                let su = u.sin();
                let wi = -2.0 * su + normal(rng);
                let zi = 2.0 * su + normal(rng);
                let xi = 2.0 * su + normal(rng);
                (xi, wi, zi, on * xi + su + 2.0 * wi * wi + normal(rng))
            }
        };
        x.push(xi);
        w.push(wi);
        z.push(zi);
        y.push(yi);
    }
    (Dataset::continuous(x, y, w).with_z(z), us)
}

/// Observed covariate V confounding both X and Y next to U.
pub fn gen_covariate<R: RngCore + ?Sized>(delta: f64, n: usize, rng: &mut R) -> Dataset {
    let (mut x, mut y, mut w, mut v) = (vec![], vec![], vec![], vec![]);
    for _ in 0..n {
        let u = normal(rng);
        let vi = normal(rng);
        let xi = 0.5 + u + 0.3 * u * u + 0.5 * vi + normal(rng);
        let yi = -1.0 + u + 0.4 * u * u + vi + delta * xi + normal(rng);
        let wi = 1.0 + u + 0.5 * vi + normal(rng);
        x.push(xi);
        y.push(yi);
        w.push(wi);
        v.push(vi);
    }
    Dataset::continuous(x, y, w).with_covariate(v)
}
