//! Bridge estimation for categorical X and W from conditional frequencies.

use nalgebra::DMatrix;

use crate::bridge_continuous::{phi, phi_matrix, Basis, ResidualField, TGrid};
use crate::dataset::{Dataset, VarKind};
use crate::error::{Error, Result};
use crate::numerics::{standardize, RealMatrix};

/// Cell frequencies. Rows of `q_re`, `q_im`, `q_mat` and entries of `d_hat` follow `x_levels`.
#[derive(Debug, Clone)]
pub struct CategoricalTable {
    pub x_levels: Vec<String>,
    pub w_levels: Vec<String>,
    /// q̂(x, t_k), |X| × K.
    pub q_re: RealMatrix,
    pub q_im: RealMatrix,
    /// P̂(w | x), |X| × |W|.
    pub q_mat: RealMatrix,
    /// n(x) / n.
    pub d_hat: Vec<f64>,
    pub n: usize,
    samples: Option<Samples>,
}

/// Per-sample codes and φ values, kept for the per-sample statistic and the bootstrap.
#[derive(Debug, Clone)]
struct Samples {
    x: Vec<usize>,
    w: Vec<usize>,
    phi: RealMatrix,
}

impl CategoricalTable {
    /// A table built from population quantities rather than counts.
    pub fn from_population(q_mat: RealMatrix, q_re: RealMatrix, q_im: RealMatrix, d_hat: Vec<f64>, n: usize) -> Self {
        let nx = q_mat.nrows();
        let nw = q_mat.ncols();
        CategoricalTable {
            x_levels: (0..nx).map(|i| i.to_string()).collect(),
            w_levels: (0..nw).map(|i| i.to_string()).collect(),
            q_re,
            q_im,
            q_mat,
            d_hat,
            n,
            samples: None,
        }
    }

    pub fn k(&self) -> usize {
        self.q_re.ncols()
    }
}

/// Value of Y inside φ: standardized for the trigonometric bases, raw for the others.
pub fn y_for_basis(data: &Dataset, basis: Basis) -> Result<Vec<f64>> {
    let y = data.y.numeric_values();
    match basis {
        Basis::ComplexExp | Basis::Sin | Basis::Cos => Ok(standardize(&y)?.0),
        Basis::Identity | Basis::Indicator => Ok(y),
    }
}

pub fn tabulate(data: &Dataset, t_grid: &TGrid, basis: Basis) -> Result<CategoricalTable> {
    for (name, c) in [("x", &data.x), ("w", &data.w)] {
        if c.kind != VarKind::Categorical {
            return Err(Error::InvalidConfig(format!("discrete mode needs a categorical {name} column")));
        }
    }
    let n = data.n();
    let xs = data.x.codes();
    let ws = data.w.codes();
    let nx = data.x.levels.len();
    let nw = data.w.levels.len();
    let y = y_for_basis(data, basis)?;
    let k = t_grid.len();

    let mut nx_count = vec![0usize; nx];
    let mut counts = DMatrix::<f64>::zeros(nx, nw);
    let mut q_re = DMatrix::<f64>::zeros(nx, k);
    let mut q_im = DMatrix::<f64>::zeros(nx, k);
    for i in 0..n {
        nx_count[xs[i]] += 1;
        counts[(xs[i], ws[i])] += 1.0;
        for (c, &t) in t_grid.points().iter().enumerate() {
            let (re, im) = phi(y[i], t, basis);
            q_re[(xs[i], c)] += re;
            q_im[(xs[i], c)] += im;
        }
    }
    if let Some(l) = nx_count.iter().position(|&c| c == 0) {
        return Err(Error::InsufficientData(data.x.levels[l].clone()));
    }
    for (r, &c) in nx_count.iter().enumerate() {
        let inv = 1.0 / c as f64;
        for j in 0..nw {
            counts[(r, j)] *= inv;
        }
        for j in 0..k {
            q_re[(r, j)] *= inv;
            q_im[(r, j)] *= inv;
        }
    }
    Ok(CategoricalTable {
        x_levels: data.x.levels.clone(),
        w_levels: data.w.levels.clone(),
        q_re,
        q_im,
        q_mat: counts,
        d_hat: nx_count.iter().map(|&c| c as f64 / n as f64).collect(),
        n,
        samples: Some(Samples { x: xs, w: ws, phi: phi_matrix(&y, t_grid, basis) }),
    })
}

/// Ĥ_t over W's support, |W| × K per part.
#[derive(Debug, Clone)]
pub struct DiscreteBridge {
    pub h_re: RealMatrix,
    pub h_im: RealMatrix,
}

fn stacked(re: &RealMatrix, im: &RealMatrix) -> RealMatrix {
    let k = re.ncols();
    let mut m = DMatrix::zeros(re.nrows(), 2 * k);
    m.columns_mut(0, k).copy_from(re);
    m.columns_mut(k, k).copy_from(im);
    m
}

/// Numerical rank with the 1e-10 relative singular-value cut.
pub fn numerical_rank(q: &RealMatrix) -> usize {
    let sv = q.clone().svd(false, false).singular_values;
    let top = sv.iter().copied().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > 1e-10 * top).count()
}

/// Ĥ_t = (Q̂ᵀQ̂)⁻¹ Q̂ᵀ q̂_t for every t.
pub fn ols_bridge(table: &CategoricalTable) -> Result<DiscreteBridge> {
    let q = &table.q_mat;
    let rank = numerical_rank(q);
    if rank < q.ncols() {
        return Err(Error::RankDeficient { rank, cols: q.ncols() });
    }
    let qtq = q.transpose() * q;
    let rhs = q.transpose() * stacked(&table.q_re, &table.q_im);
    let h = qtq
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or(Error::RankDeficient { rank, cols: q.ncols() })?;
    let k = table.k();
    Ok(DiscreteBridge { h_re: h.columns(0, k).into_owned(), h_im: h.columns(k, k).into_owned() })
}

/// (I − P̂) q̂_t = q̂_t − Q̂ Ĥ_t as |X| × K real and imaginary parts.
pub fn projected_residual(table: &CategoricalTable, bridge: &DiscreteBridge) -> (RealMatrix, RealMatrix) {
    (&table.q_re - &table.q_mat * &bridge.h_re, &table.q_im - &table.q_mat * &bridge.h_im)
}

/// Û_i(t) = φ(y_i, t) − Ĥ_t(w_i) for every sample.
pub fn sample_residuals(table: &CategoricalTable, bridge: &DiscreteBridge) -> Result<ResidualField> {
    let s = table
        .samples
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("table was not built from samples".into()))?;
    let k = table.k();
    let mut u = s.phi.clone();
    for (i, &w) in s.w.iter().enumerate() {
        for c in 0..k {
            u[(i, c)] -= bridge.h_re[(w, c)];
            u[(i, k + c)] -= bridge.h_im[(w, c)];
        }
    }
    Ok(ResidualField::from_stacked(&u))
}

/// Level codes of X per sample.
pub fn sample_x_codes(table: &CategoricalTable) -> Option<&[usize]> {
    table.samples.as_ref().map(|s| s.x.as_slice())
}

/// Linear map taking per-sample weighted residuals to T_n:
/// v ↦ √n D̂ (I − P̂) D̂⁻¹ (1/n) Σ_i v_i e(x_i). Without projection it is (1/√n) Σ_i v_i e(x_i).
pub fn statistic_map(table: &CategoricalTable, project: bool) -> Result<RealMatrix> {
    let xs = sample_x_codes(table).ok_or_else(|| Error::InvalidInput("table was not built from samples".into()))?;
    let nx = table.q_mat.nrows();
    let n = table.n as f64;
    let mut e = DMatrix::<f64>::zeros(nx, xs.len());
    for (i, &x) in xs.iter().enumerate() {
        e[(x, i)] = 1.0 / n.sqrt();
    }
    if !project {
        return Ok(e);
    }
    let q = &table.q_mat;
    let qtq = (q.transpose() * q)
        .try_inverse()
        .ok_or(Error::RankDeficient { rank: numerical_rank(q), cols: q.ncols() })?;
    let p = q * qtq * q.transpose();
    let resid = DMatrix::<f64>::identity(nx, nx) - p;
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&table.d_hat));
    let dinv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(nx, table.d_hat.iter().map(|v| 1.0 / v)));
    Ok(d * resid * dinv * e)
}
