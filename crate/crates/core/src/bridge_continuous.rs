//! Kernel estimator of the bridge H(w, t) under E[φ(Y,t) − H(W,t) | X] = 0.
//!
//! The coefficients solve (K_W K_X K_W + n²λ K_W) α = K_W K_X φ(y, t), the
//! stationarity condition of the penalized V-statistic risk. K_W enters through
//! a pivoted Cholesky factor F (K_W ≈ F Fᵀ), which turns the system into an
//! r × r ridge problem (Fᵀ K_X F + n²λ I) β = Fᵀ K_X φ with Ĥ = F β.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{
    cross_gram, gram_factor, gram_product, median_heuristic, solve_regularized_spd, standardize, ComplexVector,
    KernelConfig, RealMatrix,
};

/// Diagonal tolerance of the K_W factorization.
pub const FACTOR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    ComplexExp,
    Sin,
    Cos,
    Identity,
    /// 1(y = t): t is read as a level value.
    Indicator,
}

pub fn phi(y: f64, t: f64, basis: Basis) -> (f64, f64) {
    match basis {
        Basis::ComplexExp => {
            let (s, c) = (t * y).sin_cos();
            (c, s)
        }
        Basis::Sin => ((t * y).sin(), 0.0),
        Basis::Cos => ((t * y).cos(), 0.0),
        Basis::Identity => (y, 0.0),
        Basis::Indicator => (if (y - t).abs() < 0.5 { 1.0 } else { 0.0 }, 0.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TGrid {
    points: Vec<f64>,
}

impl TGrid {
    /// K equi-spaced points t_max/K, 2 t_max/K, ..., t_max.
    pub fn uniform(k: usize, t_max: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidConfig("K must be at least 1".into()));
        }
        if !(t_max > 0.0) || !t_max.is_finite() {
            return Err(Error::InvalidConfig(format!("t_max must be positive, got {t_max}")));
        }
        Ok(TGrid { points: (1..=k).map(|i| t_max * i as f64 / k as f64).collect() })
    }

    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::InvalidConfig("grid points must be positive and finite".into()));
        }
        if points.len() > 1 {
            let h = points[1] - points[0];
            if !(h > 0.0) || points.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-12) {
                return Err(Error::InvalidConfig("grid must be increasing and equi-spaced".into()));
            }
        }
        Ok(TGrid { points })
    }

    /// Grid used by levels-based bases, which need not be positive.
    pub(crate) fn levels(points: Vec<f64>) -> Self {
        TGrid { points }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// n × 2K matrix with Re φ(y_i, t_k) in column k and Im φ in column K + k.
pub fn phi_matrix(y: &[f64], grid: &TGrid, basis: Basis) -> RealMatrix {
    let k = grid.len();
    let mut m = DMatrix::zeros(y.len(), 2 * k);
    for (c, &t) in grid.points().iter().enumerate() {
        for (i, &yi) in y.iter().enumerate() {
            let (re, im) = phi(yi, t, basis);
            m[(i, c)] = re;
            m[(i, k + c)] = im;
        }
    }
    m
}

/// Standardized inputs and median-heuristic bandwidths.
#[derive(Debug, Clone)]
pub struct Design {
    pub x: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub kernel_x: Vec<KernelConfig>,
    pub kernel_w: Vec<KernelConfig>,
    pub y_mean: f64,
    pub y_sd: f64,
    /// Fit Ĥ(·, t) = c(t) + h(·) with the constant c(t) left unpenalized.
    pub free_intercept: bool,
}

fn bandwidths(cols: &[Vec<f64>]) -> Result<Vec<KernelConfig>> {
    cols.iter().map(|c| KernelConfig::gaussian(median_heuristic(c)?)).collect()
}

impl Design {
    /// Standardizes every column. Covariates join both the conditioning set and the bridge input.
    pub fn new(x: &[&[f64]], w: &[&[f64]], y: &[f64]) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(Error::InvalidInput("need at least 2 samples".into()));
        }
        if x.iter().chain(w).any(|c| c.len() != n) {
            return Err(Error::InvalidInput("column lengths differ".into()));
        }
        let sx: Vec<Vec<f64>> = x.iter().map(|c| standardize(c).map(|s| s.0)).collect::<Result<_>>()?;
        let sw: Vec<Vec<f64>> = w.iter().map(|c| standardize(c).map(|s| s.0)).collect::<Result<_>>()?;
        let (sy, y_mean, y_sd) = standardize(y)?;
        Ok(Design {
            kernel_x: bandwidths(&sx)?,
            kernel_w: bandwidths(&sw)?,
            x: sx,
            w: sw,
            y: sy,
            y_mean,
            y_sd,
            free_intercept: false,
        })
    }

    pub fn from_dataset(data: &Dataset) -> Result<Self> {
        let y = data.y.numeric_values();
        let mut x: Vec<&[f64]> = vec![&data.x.values];
        let mut w: Vec<&[f64]> = vec![&data.w.values];
        for v in &data.covariates {
            x.push(&v.values);
            w.push(&v.values);
        }
        Design::new(&x, &w, &y)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn x_refs(&self) -> Vec<&[f64]> {
        self.x.iter().map(|c| c.as_slice()).collect()
    }

    pub fn w_refs(&self) -> Vec<&[f64]> {
        self.w.iter().map(|c| c.as_slice()).collect()
    }

    fn subset(&self, idx: &[usize]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>) {
        let pick = |c: &Vec<f64>| idx.iter().map(|&i| c[i]).collect::<Vec<f64>>();
        (self.x.iter().map(pick).collect(), self.w.iter().map(pick).collect(), pick(&self.y))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BridgeMode {
    Pmcr,
    Mmr,
}

#[derive(Debug, Clone)]
pub struct BridgeEstimate {
    pub mode: BridgeMode,
    pub basis: Basis,
    pub t_grid: TGrid,
    /// Representer coefficients per grid point, length n each.
    pub alpha: Vec<ComplexVector>,
    /// Unpenalized constant per grid point; zero when the design has no free intercept.
    pub intercept: Vec<(f64, f64)>,
    pub w_train: Vec<Vec<f64>>,
    pub kernel_w: Vec<KernelConfig>,
    pub lambda: f64,
    /// Rank of the K_W factor.
    pub rank: usize,
    pub jitter: f64,
}

impl BridgeEstimate {
    /// Ĥ(w, t_k) for every k at one (standardized) point.
    pub fn evaluate(&self, w: &[f64]) -> Vec<(f64, f64)> {
        let kw: Vec<f64> = (0..self.w_train[0].len())
            .map(|j| {
                self.w_train.iter().zip(&self.kernel_w).zip(w).map(|((c, k), &wi)| {
                    let d = (wi - c[j]) / k.bandwidth;
                    (-0.5 * d * d).exp()
                })
                .product()
            })
            .collect();
        self.alpha
            .iter()
            .zip(&self.intercept)
            .map(|(a, &(c_re, c_im))| {
                let re = c_re + a.re.iter().zip(&kw).map(|(x, y)| x * y).sum::<f64>();
                let im = c_im + a.im.iter().zip(&kw).map(|(x, y)| x * y).sum::<f64>();
                (re, im)
            })
            .collect()
    }
}

/// Complex residuals, n × K for each part.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualField {
    pub re: RealMatrix,
    pub im: RealMatrix,
}

impl ResidualField {
    pub fn n(&self) -> usize {
        self.re.nrows()
    }

    pub fn k(&self) -> usize {
        self.re.ncols()
    }

    pub fn at(&self, k: usize) -> ComplexVector {
        ComplexVector { re: self.re.column(k).iter().copied().collect(), im: self.im.column(k).iter().copied().collect() }
    }

    /// Stacked [re | im] as one n × 2K matrix.
    pub fn stacked(&self) -> RealMatrix {
        let (n, k) = (self.n(), self.k());
        let mut m = DMatrix::zeros(n, 2 * k);
        m.columns_mut(0, k).copy_from(&self.re);
        m.columns_mut(k, k).copy_from(&self.im);
        m
    }

    pub fn from_stacked(m: &RealMatrix) -> Self {
        let k = m.ncols() / 2;
        ResidualField { re: m.columns(0, k).into_owned(), im: m.columns(k, k).into_owned() }
    }
}

/// The linear map v ↦ S v that sends φ(y) to the fitted Ĥ at the training points.
#[derive(Debug, Clone)]
pub struct Smoother {
    f: RealMatrix,
    /// M⁻¹ Fᵀ K̃_X with M = Fᵀ K̃_X F + n²λ I.
    m_inv_p: RealMatrix,
    /// Intercept weights q: c = qᵀ(v − F M⁻¹Fᵀ K̃_X v). Absent without a free intercept.
    q: Option<DVector<f64>>,
}

impl Smoother {
    /// S v = F A v + 1 qᵀ (I − F A) v with A = M⁻¹ Fᵀ K̃_X.
    pub fn apply(&self, v: &RealMatrix) -> RealMatrix {
        let kern = &self.f * (&self.m_inv_p * v);
        match &self.q {
            None => kern,
            Some(q) => {
                let c = q.transpose() * (v - &kern);
                let mut out = kern;
                for mut row in out.row_iter_mut() {
                    row += &c;
                }
                out
            }
        }
    }

    /// Gᵀ (I − S) for an n × m matrix G.
    pub fn left_residual_maker(&self, g: &RealMatrix) -> RealMatrix {
        let mut gt = g.transpose();
        if let Some(q) = &self.q {
            // (I − S) = (I − 1qᵀ)(I − F A).
            let col_sums = g.row_sum().transpose();
            gt -= col_sums * q.transpose();
        }
        &gt - (&gt * &self.f) * &self.m_inv_p
    }

    pub fn dense(&self) -> RealMatrix {
        let n = self.f.nrows();
        self.apply(&DMatrix::identity(n, n))
    }
}

/// K̃_X = K_X − a aᵀ / (1ᵀa) with a = K_X 1, and q = a / (1ᵀa): the K_X metric with constants profiled out.
fn profile_constant(kx: &RealMatrix) -> (RealMatrix, DVector<f64>) {
    let a = kx.column_sum();
    let s = a.sum();
    let q = &a / s;
    (kx - &a * q.transpose(), q)
}

#[derive(Debug, Clone)]
pub struct BridgeFit {
    pub estimate: BridgeEstimate,
    /// Ĥ at the training points, stacked [re | im].
    pub fitted: RealMatrix,
    pub smoother: Smoother,
    phi: RealMatrix,
}

impl BridgeFit {
    pub fn residual_field(&self) -> ResidualField {
        ResidualField::from_stacked(&(&self.phi - &self.fitted))
    }
}

fn grid_for(mode: BridgeMode, grid: &TGrid) -> (TGrid, Basis, bool) {
    match mode {
        BridgeMode::Pmcr => (grid.clone(), Basis::ComplexExp, false),
        BridgeMode::Mmr => (TGrid { points: vec![1.0] }, Basis::Identity, true),
    }
}

/// Fits the bridge on every grid point. MMR mode ignores `grid` and `basis` and fits E[Y − h(W) | X] = 0.
pub fn fit(design: &Design, grid: &TGrid, lambda: f64, basis: Basis, mode: BridgeMode) -> Result<BridgeFit> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidConfig(format!("lambda must be positive, got {lambda}")));
    }
    let (grid, basis) = match grid_for(mode, grid) {
        (g, b, true) => (g, b),
        (g, _, false) => (g, basis),
    };
    let n = design.n();
    let xr = design.x_refs();
    let wr = design.w_refs();
    let kx = gram_product(&xr, &design.kernel_x);
    let (kx, q) = if design.free_intercept {
        let (k, q) = profile_constant(&kx);
        (k, Some(q))
    } else {
        (kx, None)
    };
    let factor = gram_factor(&wr, &design.kernel_w, FACTOR_TOL);
    let f = factor.g;
    let r = f.ncols();
    let p = f.transpose() * &kx;
    let mut m = &p * &f;
    let shift = (n as f64).powi(2) * lambda;
    for i in 0..r {
        m[(i, i)] += shift;
    }
    let m = (&m + m.transpose()) * 0.5;
    let sol = solve_regularized_spd(&m, &p, 0.0).map_err(|e| Error::Estimation(e.to_string()))?;
    let m_inv_p = sol.x;
    let phi_m = phi_matrix(&design.y, &grid, basis);
    let beta = &m_inv_p * &phi_m;
    let smoother = Smoother { f, m_inv_p, q };
    let fitted = smoother.apply(&phi_m);
    let f = &smoother.f;
    let k = grid.len();
    let intercept: Vec<(f64, f64)> = match &smoother.q {
        None => vec![(0.0, 0.0); k],
        Some(_) => {
            let c = (fitted.row(0) - (f.row(0) * &beta)).into_owned();
            (0..k).map(|j| (c[j], c[k + j])).collect()
        }
    };

    let lp = DMatrix::from_fn(r, r, |i, j| f[(factor.pivots[i], j)]);
    let alpha_p = lp
        .transpose()
        .solve_upper_triangular(&beta)
        .ok_or_else(|| Error::Estimation("singular pivot block".into()))?;
    let mut alpha = Vec::with_capacity(k);
    for c in 0..k {
        let mut a = ComplexVector::zeros(n);
        for (i, &pv) in factor.pivots.iter().enumerate() {
            a.re[pv] = alpha_p[(i, c)];
            a.im[pv] = alpha_p[(i, k + c)];
        }
        alpha.push(a);
    }
    let estimate = BridgeEstimate {
        mode,
        basis,
        t_grid: grid,
        alpha,
        intercept,
        w_train: design.w.clone(),
        kernel_w: design.kernel_w.clone(),
        lambda,
        rank: r,
        jitter: sol.jitter,
    };
    Ok(BridgeFit { estimate, fitted, smoother, phi: phi_m })
}

/// Direct dense solve of (K_W K_X K_W + n²λ K_W) α = K_W K_X φ. Cubic in n; kept as a reference path.
pub fn fit_dense(design: &Design, grid: &TGrid, lambda: f64, basis: Basis) -> Result<(Vec<ComplexVector>, f64)> {
    let n = design.n();
    let kx = gram_product(&design.x_refs(), &design.kernel_x);
    let kw = gram_product(&design.w_refs(), &design.kernel_w);
    let kwkx = &kw * &kx;
    let mut a = &kwkx * &kw + &kw * ((n as f64).powi(2) * lambda);
    a = (&a + a.transpose()) * 0.5;
    let rhs = &kwkx * phi_matrix(&design.y, grid, basis);
    let sol = solve_regularized_spd(&a, &rhs, 0.0).map_err(|e| Error::Estimation(e.to_string()))?;
    let k = grid.len();
    let alpha = (0..k)
        .map(|c| ComplexVector {
            re: sol.x.column(c).iter().copied().collect(),
            im: sol.x.column(k + c).iter().copied().collect(),
        })
        .collect();
    Ok((alpha, sol.jitter))
}

/// Û_i(t_k) = φ(y_i, t_k) − Ĥ(w_i, t_k) by evaluating the representer expansion at each w_i.
pub fn residuals(bridge: &BridgeEstimate, design: &Design) -> Result<ResidualField> {
    if design.w.len() != bridge.w_train.len() {
        return Err(Error::InvalidInput("bridge input dimension does not match the data".into()));
    }
    let n = design.n();
    let k = bridge.t_grid.len();
    let kw = cross_gram(&design.w_refs(), &bridge.w_train.iter().map(|c| c.as_slice()).collect::<Vec<_>>(), &bridge.kernel_w);
    let mut a = DMatrix::zeros(bridge.w_train[0].len(), 2 * k);
    for (c, al) in bridge.alpha.iter().enumerate() {
        for j in 0..al.len() {
            a[(j, c)] = al.re[j];
            a[(j, k + c)] = al.im[j];
        }
    }
    let mut h = kw * a;
    for (c, &(re, im)) in bridge.intercept.iter().enumerate() {
        h.column_mut(c).add_scalar_mut(re);
        h.column_mut(k + c).add_scalar_mut(im);
    }
    let phi_m = phi_matrix(&design.y, &bridge.t_grid, bridge.basis);
    debug_assert_eq!(h.nrows(), n);
    Ok(ResidualField::from_stacked(&(phi_m - h)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSelection {
    pub lambda: f64,
    pub index: usize,
    /// Held-out risk per grid value, averaged over folds and t.
    pub risks: Vec<f64>,
}

/// 50 log-spaced values from 4.9e-6 to 0.25.
pub fn default_lambda_grid() -> Vec<f64> {
    log_grid(4.9e-6, 0.25, 50)
}

pub fn log_grid(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..m).map(|i| (a + (b - a) * i as f64 / (m - 1) as f64).exp()).collect()
}

/// Splits a seeded permutation of 0..n into `folds` contiguous blocks whose sizes differ by at most one.
pub fn fold_indices(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (q, rem) = (n / folds, n % folds);
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = q + usize::from(f < rem);
        out.push(perm[start..start + len].to_vec());
        start += len;
    }
    out
}

/// K-fold selection of λ by the held-out V-statistic risk
/// Σ_{i,j} Re[Δ_i conj(Δ_j)] K_X[i,j] / m², averaged over folds and t. Ties go to the larger λ.
pub fn select_lambda(
    design: &Design,
    grid: &TGrid,
    lambda_grid: &[f64],
    folds: usize,
    basis: Basis,
    mode: BridgeMode,
    seed: u64,
) -> Result<LambdaSelection> {
    if lambda_grid.is_empty() || lambda_grid.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::InvalidConfig("lambda grid must be nonempty and positive".into()));
    }
    if folds < 2 {
        return Err(Error::InvalidConfig("at least 2 folds are required".into()));
    }
    let n = design.n();
    if n < folds {
        return Err(Error::InvalidConfig(format!("{folds} folds leave an empty fold with n = {n}")));
    }
    if lambda_grid.len() == 1 {
        return Ok(LambdaSelection { lambda: lambda_grid[0], index: 0, risks: vec![f64::NAN] });
    }
    let (grid, basis) = match grid_for(mode, grid) {
        (g, b, true) => (g, b),
        (g, _, false) => (g, basis),
    };
    let k = grid.len() as f64;
    let splits = fold_indices(n, folds, seed);
    let mut risks = vec![0.0; lambda_grid.len()];
    for held in &splits {
        let train: Vec<usize> = {
            let mut mask = vec![true; n];
            held.iter().for_each(|&i| mask[i] = false);
            (0..n).filter(|&i| mask[i]).collect()
        };
        let fold_risk = held_out_risks(design, &train, held, &grid, basis, lambda_grid)?;
        for (r, v) in risks.iter_mut().zip(fold_risk) {
            *r += v / (folds as f64 * k);
        }
    }
    let best = risks.iter().copied().fold(f64::INFINITY, f64::min);
    let index = risks.iter().rposition(|&r| r <= best).unwrap_or(0);
    Ok(LambdaSelection { lambda: lambda_grid[index], index, risks })
}

fn refs(c: &[Vec<f64>]) -> Vec<&[f64]> {
    c.iter().map(|v| v.as_slice()).collect()
}

/// Summed-over-t held-out risk for each λ on one split. One symmetric
/// eigendecomposition of Fᵀ K_X F serves the whole λ path.
fn held_out_risks(
    design: &Design,
    train: &[usize],
    held: &[usize],
    grid: &TGrid,
    basis: Basis,
    lambda_grid: &[f64],
) -> Result<Vec<f64>> {
    let (xt, wt, yt) = design.subset(train);
    let (xh, wh, yh) = design.subset(held);
    let m = train.len() as f64;
    let mh = held.len() as f64;

    let kx = gram_product(&refs(&xt), &design.kernel_x);
    let (kx, icpt) = if design.free_intercept {
        let (k, q) = profile_constant(&kx);
        (k, Some(q))
    } else {
        (kx, None)
    };
    let factor = gram_factor(&refs(&wt), &design.kernel_w, FACTOR_TOL);
    let f = &factor.g;
    let r = f.ncols();
    let p = f.transpose() * &kx;
    let g = &p * f;
    let g = (&g + g.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(g);
    let q = &eig.eigenvectors;
    let phi_t = phi_matrix(&yt, grid, basis);
    let rhs = q.transpose() * (&p * &phi_t);

    // Held-out prediction Ĥ = K_W(held, pivots) L_P⁻ᵀ β = Z (Qᵀ β).
    let piv: Vec<Vec<f64>> = wt.iter().map(|c| factor.pivots.iter().map(|&i| c[i]).collect()).collect();
    let kwh = cross_gram(&refs(&wh), &refs(&piv), &design.kernel_w);
    let lp = DMatrix::from_fn(r, r, |i, j| f[(factor.pivots[i], j)]);
    let e_t = lp
        .solve_lower_triangular(&kwh.transpose())
        .ok_or_else(|| Error::Estimation("singular pivot block".into()))?;
    let mut z = e_t.transpose() * q;

    let kxh = gram_product(&refs(&xh), &design.kernel_x);
    let mut ph = phi_matrix(&yh, grid, basis);
    if let Some(qi) = &icpt {
        // Prediction gains 1 qᵀ(φ_t − F β): shift Z by 1 (QᵀFᵀq)ᵀ and the target by 1 (qᵀφ_t).
        let v = (q.transpose() * (f.transpose() * qi)).transpose();
        let rho = qi.transpose() * &phi_t;
        for mut row in z.row_iter_mut() {
            row -= &v;
        }
        for mut row in ph.row_iter_mut() {
            row -= &rho;
        }
    }
    let kz = &kxh * &z;
    let c0 = (ph.transpose() * &kxh * &ph).trace();
    let b = z.transpose() * (&kxh * &ph);
    let cm = z.transpose() * kz;
    let cols = rhs.ncols();
    Ok(lambda_grid
        .iter()
        .map(|&lam| {
            let d: Vec<f64> = eig.eigenvalues.iter().map(|&ev| 1.0 / (ev.max(0.0) + m * m * lam)).collect();
            let mut db = rhs.clone();
            for i in 0..r {
                for c in 0..cols {
                    db[(i, c)] *= d[i];
                }
            }
            let cross: f64 = db.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
            let quad: f64 = db.iter().zip((&cm * &db).iter()).map(|(x, y)| x * y).sum();
            (c0 - 2.0 * cross + quad) / (mh * mh)
        })
        .collect())
}
