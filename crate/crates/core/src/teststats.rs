//! Cramér–von Mises type statistics built from residual fields.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bridge_continuous::{ResidualField, TGrid};
use crate::bridge_discrete::CategoricalTable;
use crate::error::{Error, Result};
use crate::numerics::{pivoted_cholesky, ComplexVector, LowRankFactor, RealMatrix};

/// Gaussian measure N(0, scale²) over the weight index s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightMeasure {
    pub scale: f64,
}

impl WeightMeasure {
    pub fn gaussian(scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::InvalidConfig(format!("weight scale must be positive, got {scale}")));
        }
        Ok(WeightMeasure { scale })
    }
}

impl Default for WeightMeasure {
    fn default() -> Self {
        WeightMeasure { scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticValue {
    pub delta: f64,
    pub per_t: Vec<f64>,
    pub argmax_t: usize,
}

impl StatisticValue {
    fn from_max(per_t: Vec<f64>) -> Self {
        let mut argmax_t = 0;
        for (k, &v) in per_t.iter().enumerate() {
            if v > per_t[argmax_t] {
                argmax_t = k;
            }
        }
        StatisticValue { delta: per_t.get(argmax_t).copied().unwrap_or(0.0), per_t, argmax_t }
    }
}

fn check_points(cond: &[&[f64]], n: usize) -> Result<()> {
    if cond.is_empty() || cond.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidInput(format!("conditioning points do not match {n} residuals")));
    }
    Ok(())
}

#[inline]
fn rho(cond: &[&[f64]], s2: f64, i: usize, j: usize) -> f64 {
    let d2: f64 = cond.iter().map(|c| (c[i] - c[j]).powi(2)).sum();
    (-0.5 * s2 * d2).exp()
}

/// ρ_ij = Π_d exp(−σ²(c_di − c_dj)²/2), the closed form of ∫ e^{is·(c_i − c_j)} dμ(s).
pub fn weight_matrix(cond: &[&[f64]], measure: &WeightMeasure) -> RealMatrix {
    let n = cond.first().map_or(0, |c| c.len());
    let s2 = measure.scale * measure.scale;
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        m[(j, j)] = 1.0;
        for i in (j + 1)..n {
            let v = rho(cond, s2, i, j);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Low-rank factor of the weight matrix, ρ ≈ G Gᵀ.
pub fn weight_factor(cond: &[&[f64]], measure: &WeightMeasure, tol: f64) -> LowRankFactor {
    let n = cond.first().map_or(0, |c| c.len());
    let s2 = measure.scale * measure.scale;
    pivoted_cholesky(
        n,
        &vec![1.0; n],
        |p, out| {
            for (i, o) in out.iter_mut().enumerate() {
                *o = rho(cond, s2, i, p);
            }
        },
        tol,
        n,
    )
}

/// (1/n) Σ_ij Re[Û_i conj(Û_j)] ρ_ij = ∫ |n^{-1/2} Σ_i Û_i e^{is·c_i}|² dμ(s).
pub fn s_integrated_square(residual: &ComplexVector, cond: &[&[f64]], measure: &WeightMeasure) -> Result<f64> {
    let n = residual.len();
    if residual.im.len() != n {
        return Err(Error::InvalidInput("real and imaginary parts differ in length".into()));
    }
    check_points(cond, n)?;
    if n == 0 {
        return Ok(0.0);
    }
    let s2 = measure.scale * measure.scale;
    let (re, im) = (&residual.re, &residual.im);
    let mut total = 0.0;
    for i in 0..n {
        total += re[i] * re[i] + im[i] * im[i];
        for j in (i + 1)..n {
            total += 2.0 * (re[i] * re[j] + im[i] * im[j]) * rho(cond, s2, i, j);
        }
    }
    Ok(total / n as f64)
}

/// Per-t s-integrated squares from a precomputed weight matrix; Δ is their maximum.
pub fn delta_with_weights(field: &ResidualField, weights: &RealMatrix) -> StatisticValue {
    let n = field.n() as f64;
    let stacked = field.stacked();
    let prod = weights * &stacked;
    let k = field.k();
    let per_t = (0..k)
        .map(|c| (stacked.column(c).dot(&prod.column(c)) + stacked.column(k + c).dot(&prod.column(k + c))) / n)
        .collect();
    StatisticValue::from_max(per_t)
}

pub fn delta_continuous(field: &ResidualField, cond: &[&[f64]], measure: &WeightMeasure) -> Result<StatisticValue> {
    if field.k() == 0 {
        return Err(Error::InvalidInput("empty t grid".into()));
    }
    check_points(cond, field.n())?;
    Ok(delta_with_weights(field, &weight_matrix(cond, measure)))
}

/// Normalized N(0, scale²) density weights over the grid.
pub fn grid_weights(grid: &TGrid, measure: &WeightMeasure) -> Vec<f64> {
    let s2 = measure.scale * measure.scale;
    let raw: Vec<f64> = grid.points().iter().map(|t| (-0.5 * t * t / s2).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

/// T_n(t_k) = √n D̂ (I − P̂) q̂_t; Δ = Σ_k ω_k ‖T_n(t_k)‖².
pub fn delta_discrete(
    table: &CategoricalTable,
    projected: &(RealMatrix, RealMatrix),
    grid: &TGrid,
    measure: &WeightMeasure,
) -> Result<StatisticValue> {
    let (re, im) = projected;
    if re.ncols() != grid.len() || im.ncols() != grid.len() {
        return Err(Error::InvalidInput("projected residual columns do not match the t grid".into()));
    }
    let rn = (table.n as f64).sqrt();
    let per_t: Vec<f64> = (0..grid.len())
        .map(|k| {
            table
                .d_hat
                .iter()
                .enumerate()
                .map(|(x, d)| (rn * d * re[(x, k)]).powi(2) + (rn * d * im[(x, k)]).powi(2))
                .sum()
        })
        .collect();
    Ok(weighted(per_t, &grid_weights(grid, measure)))
}

pub(crate) fn weighted(per_t: Vec<f64>, weights: &[f64]) -> StatisticValue {
    let delta = per_t.iter().zip(weights).map(|(v, w)| v * w).sum();
    let argmax_t = StatisticValue::from_max(per_t.clone()).argmax_t;
    StatisticValue { delta, per_t, argmax_t }
}

/// The same statistic from the per-sample sum T_n(t) = n^{-1/2} Σ_i Û_i(t) e(x_i).
pub fn delta_discrete_per_sample(
    field: &ResidualField,
    x_codes: &[usize],
    levels: usize,
    grid: &TGrid,
    measure: &WeightMeasure,
) -> Result<StatisticValue> {
    if field.n() != x_codes.len() || field.k() != grid.len() {
        return Err(Error::InvalidInput("residual field does not match codes or grid".into()));
    }
    let rn = (field.n() as f64).sqrt();
    let per_t = (0..grid.len())
        .map(|k| {
            let mut acc = vec![(0.0, 0.0); levels];
            for (i, &x) in x_codes.iter().enumerate() {
                acc[x].0 += field.re[(i, k)] / rn;
                acc[x].1 += field.im[(i, k)] / rn;
            }
            acc.iter().map(|(a, b)| a * a + b * b).sum()
        })
        .collect();
    Ok(weighted(per_t, &grid_weights(grid, measure)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Gauss–Hermite nodes and weights for ∫ e^{-x²} f(x) dx by Golub–Welsch.
    pub(crate) fn gauss_hermite(m: usize) -> (Vec<f64>, Vec<f64>) {
        let j = DMatrix::from_fn(m, m, |i, k| if i + 1 == k || k + 1 == i { ((i.max(k)) as f64 / 2.0).sqrt() } else { 0.0 });
        let e = SymmetricEigen::new(j);
        let sp = std::f64::consts::PI.sqrt();
        (e.eigenvalues.iter().copied().collect(), (0..m).map(|i| sp * e.eigenvectors[(0, i)].powi(2)).collect())
    }

    fn quadrature(res: &ComplexVector, cond: &[&[f64]], sigma: f64) -> f64 {
        let (x, w) = gauss_hermite(64);
        let n = res.len();
        let nodes: Vec<(f64, f64)> = x.iter().zip(&w).map(|(&xi, &wi)| (std::f64::consts::SQRT_2 * sigma * xi, wi / std::f64::consts::PI.sqrt())).collect();
        let mut total = 0.0;
        let dims = cond.len();
        let mut idx = vec![0usize; dims];
        loop {
            let weight: f64 = idx.iter().map(|&i| nodes[i].1).product();
            let (mut a, mut b) = (0.0, 0.0);
            for i in 0..n {
                let arg: f64 = idx.iter().zip(cond).map(|(&q, c)| nodes[q].0 * c[i]).sum();
                let (s, c) = arg.sin_cos();
                a += res.re[i] * c - res.im[i] * s;
                b += res.re[i] * s + res.im[i] * c;
            }
            total += weight * (a * a + b * b) / n as f64;
            let mut d = 0;
            while d < dims {
                idx[d] += 1;
                if idx[d] < nodes.len() {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == dims {
                break;
            }
        }
        total
    }

    fn random_instance(n: usize, seed: u64, dims: usize) -> (ComplexVector, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let res = ComplexVector {
            re: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            im: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let cond = (0..dims).map(|_| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        (res, cond)
    }

    #[test]
    fn trivial_values() {
        let m = WeightMeasure::default();
        assert_eq!(s_integrated_square(&ComplexVector::zeros(4), &[&[0.0, 1.0, 2.0, 3.0]], &m).unwrap(), 0.0);
        let one = ComplexVector { re: vec![1.0], im: vec![0.0] };
        assert_eq!(s_integrated_square(&one, &[&[0.3]], &m).unwrap(), 1.0);
        assert!(s_integrated_square(&one, &[&[0.3, 0.1]], &m).is_err());
    }

    #[test]
    fn closed_form_matches_quadrature() {
        let (res, cond) = random_instance(50, 1, 1);
        let refs: Vec<&[f64]> = cond.iter().map(|c| c.as_slice()).collect();
        let closed = s_integrated_square(&res, &refs, &WeightMeasure::default()).unwrap();
        let quad = quadrature(&res, &refs, 1.0);
        assert!((closed - quad).abs() <= 1e-8 * quad.abs());
    }

    #[test]
    fn two_proxy_closed_form_matches_product_quadrature() {
        let (res, cond) = random_instance(30, 2, 2);
        let refs: Vec<&[f64]> = cond.iter().map(|c| c.as_slice()).collect();
        let closed = s_integrated_square(&res, &refs, &WeightMeasure::default()).unwrap();
        let quad = quadrature(&res, &refs, 1.0);
        assert!((closed - quad).abs() <= 1e-8 * quad.abs());
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        let field = ResidualField { re: DMatrix::from_element(3, 4, 0.5), im: DMatrix::zeros(3, 4) };
        let c = [0.0, 1.0, 2.0];
        let s = delta_continuous(&field, &[&c], &WeightMeasure::default()).unwrap();
        assert_eq!(s.argmax_t, 0);
        assert!(s.per_t.iter().all(|&v| (v - s.delta).abs() < 1e-15));
    }

    #[test]
    fn batched_matches_per_t_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, k) = (300, 12);
        let field = ResidualField {
            re: DMatrix::from_fn(n, k, |_, _| rng.random_range(-1.0..1.0)),
            im: DMatrix::from_fn(n, k, |_, _| rng.random_range(-1.0..1.0)),
        };
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let m = WeightMeasure::default();
        let s = delta_continuous(&field, &[&c], &m).unwrap();
        for kk in 0..k {
            let v = s_integrated_square(&field.at(kk), &[&c], &m).unwrap();
            assert!((v - s.per_t[kk]).abs() <= 1e-12 * v.abs());
        }
    }

    #[test]
    fn factor_reproduces_weight_matrix() {
        let (_, cond) = random_instance(200, 3, 2);
        let refs: Vec<&[f64]> = cond.iter().map(|c| c.as_slice()).collect();
        let m = WeightMeasure::default();
        let f = weight_factor(&refs, &m, 1e-13);
        assert!((&f.g * f.g.transpose() - weight_matrix(&refs, &m)).amax() < 1e-11);
    }

    #[test]
    fn single_grid_point_discrete_weight_is_one() {
        let g = TGrid::uniform(1, 3.0).unwrap();
        assert_eq!(grid_weights(&g, &WeightMeasure::default()), vec![1.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn quadrature_agreement(n in 5usize..200, seed in any::<u64>(), s in prop::sample::select(vec![0.5, 1.0, 2.0])) {
            let (res, cond) = random_instance(n, seed, 1);
            let refs: Vec<&[f64]> = cond.iter().map(|c| c.as_slice()).collect();
            let closed = s_integrated_square(&res, &refs, &WeightMeasure::gaussian(s).unwrap()).unwrap();
            let quad = quadrature(&res, &refs, s);
            prop_assert!((closed - quad).abs() <= 1e-8 * quad.abs());
        }

        #[test]
        fn phase_rotation_and_scaling(seed in any::<u64>(), theta in -3.0f64..3.0, c in -3.0f64..3.0) {
            let (res, cond) = random_instance(40, seed, 1);
            let refs: Vec<&[f64]> = cond.iter().map(|c| c.as_slice()).collect();
            let m = WeightMeasure::default();
            let base = s_integrated_square(&res, &refs, &m).unwrap();
            let (s, co) = theta.sin_cos();
            let rot = ComplexVector {
                re: res.re.iter().zip(&res.im).map(|(a, b)| a * co - b * s).collect(),
                im: res.re.iter().zip(&res.im).map(|(a, b)| a * s + b * co).collect(),
            };
            prop_assert!((s_integrated_square(&rot, &refs, &m).unwrap() - base).abs() <= 1e-10 * (1.0 + base));
            let scaled = ComplexVector { re: res.re.iter().map(|v| v * c).collect(), im: res.im.iter().map(|v| v * c).collect() };
            prop_assert!((s_integrated_square(&scaled, &refs, &m).unwrap() - c * c * base).abs() <= 1e-10 * (1.0 + c * c * base));
        }
    }
}
