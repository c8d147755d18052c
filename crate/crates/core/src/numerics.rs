//! Dense kernel and linear-algebra primitives shared by the estimators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub type RealMatrix = DMatrix<f64>;

/// Complex values stored as paired real parts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComplexVector {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexVector {
    pub fn zeros(n: usize) -> Self {
        ComplexVector { re: vec![0.0; n], im: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.re.iter().zip(&self.im).map(|(a, b)| a * a + b * b).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    pub bandwidth: f64,
}

impl KernelConfig {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::InvalidConfig(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(KernelConfig { bandwidth })
    }

    #[inline]
    fn eval(&self, a: f64, b: f64) -> f64 {
        let d = (a - b) / self.bandwidth;
        (-0.5 * d * d).exp()
    }
}

pub fn gaussian_kernel(a: f64, b: f64, cfg: &KernelConfig) -> Result<f64> {
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidInput("non-finite kernel argument".into()));
    }
    if !(cfg.bandwidth > 0.0) {
        return Err(Error::InvalidConfig("bandwidth must be positive".into()));
    }
    Ok(cfg.eval(a, b))
}

/// Median of |p_i - p_j| over i < j. Even pair counts average the two middle values.
pub fn median_heuristic(points: &[f64]) -> Result<f64> {
    let n = points.len();
    if n < 2 {
        return Err(Error::InvalidInput("median heuristic needs at least 2 points".into()));
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidInput("non-finite point".into()));
    }
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            d.push((points[i] - points[j]).abs());
        }
    }
    let m = d.len();
    let mid = m / 2;
    let (lo, upper, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    let med = if m % 2 == 1 {
        upper
    } else {
        let lower = lo.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    if med <= 0.0 {
        return Err(Error::DegenerateBandwidth(n));
    }
    Ok(med)
}

/// Gram matrix of a one-dimensional sample. Both triangles come from one evaluation.
pub fn gram(points: &[f64], cfg: &KernelConfig) -> RealMatrix {
    let n = points.len();
    let mut g = DMatrix::zeros(n, n);
    for j in 0..n {
        g[(j, j)] = 1.0;
        for i in (j + 1)..n {
            let v = cfg.eval(points[i], points[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// Product-kernel Gram matrix over several coordinates, one bandwidth per coordinate.
pub fn gram_product(coords: &[&[f64]], cfgs: &[KernelConfig]) -> RealMatrix {
    assert_eq!(coords.len(), cfgs.len());
    let n = coords.first().map_or(0, |c| c.len());
    let mut g = DMatrix::from_element(n, n, 1.0);
    for (c, cfg) in coords.iter().zip(cfgs) {
        for j in 0..n {
            for i in (j + 1)..n {
                let v = g[(i, j)] * cfg.eval(c[i], c[j]);
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
    }
    g
}

/// Rectangular kernel matrix k(a_i, b_j) over product coordinates.
pub fn cross_gram(a: &[&[f64]], b: &[&[f64]], cfgs: &[KernelConfig]) -> RealMatrix {
    let na = a.first().map_or(0, |c| c.len());
    let nb = b.first().map_or(0, |c| c.len());
    DMatrix::from_fn(na, nb, |i, j| {
        a.iter().zip(b).zip(cfgs).map(|((ca, cb), cfg)| cfg.eval(ca[i], cb[j])).product()
    })
}

/// Centers and scales to unit population variance. Returns (values, mean, sd).
pub fn standardize(v: &[f64]) -> Result<(Vec<f64>, f64, f64)> {
    let n = v.len() as f64;
    if v.is_empty() {
        return Err(Error::InvalidInput("cannot standardize an empty column".into()));
    }
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::InvalidInput("column has zero variance".into()));
    }
    Ok((v.iter().map(|x| (x - mean) / sd).collect(), mean, sd))
}

#[derive(Debug, Clone)]
pub struct SpdSolution {
    pub x: RealMatrix,
    /// Diagonal shift actually used for the successful factorization.
    pub jitter: f64,
}

fn inf_norm(m: &RealMatrix) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Solves (A + jitter I) X = B by Cholesky, escalating jitter tenfold on failure
/// up to 1e-4 trace(A)/n. A zero starting jitter escalates from 1e-14 trace(A)/n.
pub fn solve_regularized_spd(a: &RealMatrix, b: &RealMatrix, jitter: f64) -> Result<SpdSolution> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::InvalidInput(format!("matrix is {}x{}, expected square", n, a.ncols())));
    }
    if b.nrows() != n {
        return Err(Error::InvalidInput(format!("right-hand side has {} rows, expected {n}", b.nrows())));
    }
    if !(jitter >= 0.0) {
        return Err(Error::InvalidConfig("jitter must be nonnegative".into()));
    }
    if n == 0 {
        return Ok(SpdSolution { x: b.clone(), jitter });
    }
    let scale = (a.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let max_jitter = 1e-4 * scale;
    let tol = 1e-8 * (1.0 + inf_norm(b));
    let mut j = jitter;
    let mut last_cond = f64::INFINITY;
    loop {
        let mut shifted = a.clone();
        for i in 0..n {
            shifted[(i, i)] += j;
        }
        if let Some(ch) = Cholesky::<f64, Dyn>::new(shifted.clone()) {
            let l = ch.l_dirty();
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for i in 0..n {
                let d = l[(i, i)] * l[(i, i)];
                lo = lo.min(d);
                hi = hi.max(d);
            }
            last_cond = hi / lo;
            let x = ch.solve(b);
            let resid = inf_norm(&(&shifted * &x - b));
            if resid <= tol {
                return Ok(SpdSolution { x, jitter: j });
            }
        }
        if j >= max_jitter {
            return Err(Error::IllConditioned { jitter: j, condition: last_cond });
        }
        j = if j == 0.0 { 1e-14 * scale } else { (j * 10.0).min(max_jitter) };
    }
}

/// Low-rank factor G (n x r) with A ≈ G Gᵀ from a pivoted partial Cholesky that
/// stops once the largest remaining diagonal falls below `tol`.
#[derive(Debug, Clone)]
pub struct LowRankFactor {
    pub g: RealMatrix,
    pub pivots: Vec<usize>,
}

pub fn pivoted_cholesky<F>(n: usize, diag: &[f64], column: F, tol: f64, max_rank: usize) -> LowRankFactor
where
    F: Fn(usize, &mut [f64]),
{
    let mut d = diag.to_vec();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut pivots = Vec::new();
    let mut buf = vec![0.0; n];
    while cols.len() < max_rank.min(n) {
        let (p, &dp) = d
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty diagonal");
        if !(dp > tol) {
            break;
        }
        column(p, &mut buf);
        let s = dp.sqrt();
        let mut c = buf.clone();
        for prev in &cols {
            let f = prev[p];
            for (ci, pi) in c.iter_mut().zip(prev) {
                *ci -= f * pi;
            }
        }
        for (ci, di) in c.iter_mut().zip(d.iter_mut()) {
            *ci /= s;
            *di -= *ci * *ci;
        }
        for &q in &pivots {
            c[q] = 0.0;
            d[q] = 0.0;
        }
        d[p] = 0.0;
        c[p] = s;
        pivots.push(p);
        cols.push(c);
    }
    let r = cols.len();
    let g = DMatrix::from_fn(n, r, |i, k| cols[k][i]);
    LowRankFactor { g, pivots }
}

/// Low-rank factor of a one-dimensional Gaussian Gram matrix.
pub fn gram_factor(coords: &[&[f64]], cfgs: &[KernelConfig], tol: f64) -> LowRankFactor {
    let n = coords.first().map_or(0, |c| c.len());
    let diag = vec![1.0; n];
    pivoted_cholesky(
        n,
        &diag,
        |p, out| {
            for (i, o) in out.iter_mut().enumerate() {
                *o = coords.iter().zip(cfgs).map(|(c, cfg)| cfg.eval(c[i], c[p])).product();
            }
        },
        tol,
        n,
    )
}

pub fn column(m: &RealMatrix, j: usize) -> DVector<f64> {
    m.column(j).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn kernel_values() {
        let cfg = KernelConfig::gaussian(1.0).unwrap();
        assert_eq!(gaussian_kernel(0.3, 0.3, &cfg).unwrap(), 1.0);
        assert!((gaussian_kernel(0.0, 1.0, &cfg).unwrap() - (-0.5f64).exp()).abs() < 1e-15);
        assert!(gaussian_kernel(f64::NAN, 1.0, &cfg).is_err());
        assert!(KernelConfig::gaussian(0.0).is_err());
    }

    #[test]
    fn gram_is_psd_and_symmetric() {
        let x = normals(5, 1);
        let g = gram(&x, &KernelConfig::gaussian(0.7).unwrap());
        assert_eq!(g, g.transpose());
        let ev = SymmetricEigen::new(g).eigenvalues;
        assert!(ev.iter().all(|&e| e >= -1e-10));
    }

    #[test]
    fn median_small_cases() {
        assert_eq!(median_heuristic(&[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(median_heuristic(&[0.0, 1.0, 3.0]).unwrap(), 2.0);
        assert_eq!(median_heuristic(&[2.0, 2.0, 2.0]), Err(Error::DegenerateBandwidth(3)));
    }

    #[test]
    fn median_matches_sorted_enumeration() {
        let x = normals(100, 7);
        let mut all = Vec::new();
        for i in 0..x.len() {
            for j in (i + 1)..x.len() {
                all.push((x[i] - x[j]).abs());
            }
        }
        all.sort_by(f64::total_cmp);
        let m = all.len();
        let oracle = if m % 2 == 1 { all[m / 2] } else { 0.5 * (all[m / 2 - 1] + all[m / 2]) };
        assert_eq!(median_heuristic(&x).unwrap(), oracle);
    }

    #[test]
    fn solve_small_systems() {
        let b = DMatrix::from_column_slice(3, 1, &[1.0, -2.0, 0.5]);
        let s = solve_regularized_spd(&DMatrix::identity(3, 3), &b, 0.0).unwrap();
        assert_eq!(s.x, b);
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let s = solve_regularized_spd(&a, &DMatrix::from_column_slice(2, 1, &[2.0, 4.0]), 0.0).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-15 && (s.x[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn singular_system_escalates_jitter() {
        let a = DMatrix::from_element(3, 3, 1.0);
        let b = DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 1.0]);
        let s = solve_regularized_spd(&a, &b, 0.0).unwrap();
        assert!(s.jitter > 0.0);
        let neg = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(
            solve_regularized_spd(&neg, &DMatrix::zeros(2, 1), 0.0),
            Err(Error::IllConditioned { .. })
        ));
    }

    fn random_spd(n: usize, seed: u64) -> RealMatrix {
        let m = DMatrix::from_vec(n, n, normals(n * n, seed));
        &m * m.transpose() + DMatrix::identity(n, n) * 0.1
    }

    #[test]
    fn random_spd_residual() {
        let a = random_spd(20, 3);
        let b = DMatrix::from_vec(20, 2, normals(40, 4));
        let s = solve_regularized_spd(&a, &b, 0.0).unwrap();
        assert!(inf_norm(&(&a * &s.x - &b)) <= 1e-8 * (1.0 + inf_norm(&b)));
    }

    #[test]
    fn pivoted_factor_reconstructs_gram() {
        let x = normals(200, 9);
        let cfg = KernelConfig::gaussian(median_heuristic(&x).unwrap()).unwrap();
        let f = gram_factor(&[&x], &[cfg], 1e-13);
        let full = gram(&x, &cfg);
        assert!(f.g.ncols() < 100);
        assert!(inf_norm(&(&f.g * f.g.transpose() - &full)) < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn spd_solve_recovers_rhs(n in 2usize..50, seed in any::<u64>()) {
            let a = random_spd(n, seed);
            let b = DMatrix::from_vec(n, 1, normals(n, seed ^ 1));
            let s = solve_regularized_spd(&a, &b, 0.0).unwrap();
            let mut shifted = a.clone();
            for i in 0..n { shifted[(i, i)] += s.jitter; }
            prop_assert!(inf_norm(&(&shifted * &s.x - &b)) <= 1e-8 * (1.0 + inf_norm(&b)));
        }

        #[test]
        fn kernel_translation_invariant(a in -50.0f64..50.0, b in -50.0f64..50.0, c in -50.0f64..50.0) {
            let cfg = KernelConfig::gaussian(1.3).unwrap();
            let k1 = gaussian_kernel(a + c, b + c, &cfg).unwrap();
            let k0 = gaussian_kernel(a, b, &cfg).unwrap();
            prop_assert!((k1 - k0).abs() <= 1e-12);
        }

        #[test]
        fn gram_quadratic_form_nonnegative(seed in any::<u64>(), n in 2usize..40) {
            let x = normals(n, seed);
            let g = gram(&x, &KernelConfig::gaussian(0.5).unwrap());
            let v = DVector::from_vec(normals(n, seed ^ 7));
            prop_assert!(v.dot(&(&g * &v)) >= -1e-10 * v.norm_squared());
        }
    }
}
