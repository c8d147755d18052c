//! Wild bootstrap with two-point golden-ratio multipliers.

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bridge_continuous::ResidualField;
use crate::error::{Error, Result};
use crate::numerics::RealMatrix;
use crate::teststats::StatisticValue;

/// κ = (1 + √5)/2.
pub const KAPPA: f64 = 1.618_033_988_749_895;

/// P(ω = 1 − κ) = κ/√5.
pub fn low_point_probability() -> f64 {
    KAPPA / 5f64.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replications: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidConfig("B must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidConfig(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Sorted ascending.
    pub boot_stats: Vec<f64>,
    pub critical_value: f64,
    pub p_value: Option<f64>,
}

/// Multiplier ω_i of replicate b: ChaCha8 keyed by `seed`, stream b, i-th 64-bit word.
pub fn multiplier_stream(seed: u64, b: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b);
    let p = low_point_probability();
    (0..n)
        .map(|_| {
            let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            if u < p {
                1.0 - KAPPA
            } else {
                KAPPA
            }
        })
        .collect()
}

pub fn multiplier_weights(n: usize, seed: u64) -> Vec<f64> {
    multiplier_stream(seed, 0, n)
}

/// How per-t squared norms combine into one statistic.
#[derive(Debug, Clone, PartialEq)]
pub enum Aggregate {
    Max,
    Weighted(Vec<f64>),
}

const THIN_MAP_ROWS: usize = 32;

/// Δ^b = aggregate_k scale · ‖L (ω ∘ Û_k)‖² for a fixed linear map L.
#[derive(Debug, Clone)]
pub struct BootstrapKernel {
    pub map: RealMatrix,
    pub scale: f64,
    pub aggregate: Aggregate,
}

impl BootstrapKernel {
    /// L diag(ω) Û. Thin maps go through contiguous column dot products, which beat a
    /// general product by several times when L has only a handful of rows.
    pub fn statistic(&self, stacked: &RealMatrix, omega: &[f64]) -> f64 {
        let w = nalgebra::DVector::from_column_slice(omega);
        if self.map.nrows() <= THIN_MAP_ROWS {
            let mut lt = self.map.transpose();
            for mut col in lt.column_iter_mut() {
                col.component_mul_assign(&w);
            }
            // Rows of Ûᵀ (L diag ω)ᵀ are the grid points.
            let t = stacked.tr_mul(&lt);
            let k = t.nrows() / 2;
            self.reduce((0..k).map(|c| t.row(c).norm_squared() + t.row(k + c).norm_squared()))
        } else {
            let mut weighted = stacked.clone();
            for mut col in weighted.column_iter_mut() {
                col.component_mul_assign(&w);
            }
            self.evaluate(&weighted)
        }
    }

    pub fn evaluate(&self, weighted: &RealMatrix) -> f64 {
        let t = &self.map * weighted;
        let k = t.ncols() / 2;
        self.reduce((0..k).map(|c| t.column(c).norm_squared() + t.column(k + c).norm_squared()))
    }

    fn reduce(&self, per_t: impl Iterator<Item = f64>) -> f64 {
        let per_t = per_t.map(|v| self.scale * v);
        match &self.aggregate {
            Aggregate::Max => per_t.fold(0.0, f64::max),
            Aggregate::Weighted(w) => per_t.zip(w).map(|(v, w)| v * w).sum(),
        }
    }
}

/// Draws B multiplier vectors and evaluates the kernel on each weighted field.
/// Replicate b depends only on (seed, b), so results do not depend on the worker count.
pub fn bootstrap_distribution(field: &ResidualField, kernel: &BootstrapKernel, cfg: &BootstrapConfig) -> Result<BootstrapResult> {
    cfg.validate()?;
    if kernel.map.ncols() != field.n() {
        return Err(Error::InvalidInput("bootstrap map does not match the residual count".into()));
    }
    let stacked = field.stacked();
    let n = field.n();
    let mut boot_stats: Vec<f64> = (0..cfg.replications as u64)
        .into_par_iter()
        .map(|b| kernel.statistic(&stacked, &multiplier_stream(cfg.seed, b, n)))
        .collect();
    boot_stats.sort_by(f64::total_cmp);
    let critical_value = critical_value(&boot_stats, cfg.alpha);
    Ok(BootstrapResult { boot_stats, critical_value, p_value: None })
}

/// The ⌈(1 − α)B⌉-th order statistic, clamped to the first one.
pub fn critical_value(sorted: &[f64], alpha: f64) -> f64 {
    let b = sorted.len();
    let idx = ((1.0 - alpha) * b as f64 - 1e-9).ceil().max(1.0) as usize;
    sorted[idx.min(b) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub reject: bool,
    pub p_value: f64,
    pub critical_value: f64,
}

/// Rejects iff Δ ≥ critical value; p = (1 + #{Δ^b ≥ Δ})/(B + 1).
pub fn decide(observed: &StatisticValue, boot: &BootstrapResult) -> Result<Decision> {
    if boot.boot_stats.is_empty() {
        return Err(Error::InvalidInput("empty bootstrap distribution".into()));
    }
    let b = boot.boot_stats.len();
    let exceed = boot.boot_stats.iter().filter(|&&s| s >= observed.delta).count();
    Ok(Decision {
        reject: observed.delta >= boot.critical_value,
        p_value: (1 + exceed) as f64 / (b + 1) as f64,
        critical_value: boot.critical_value,
    })
}

/// Kernel that evaluates (1/n)‖Gᵀ v‖², i.e. the s-integrated square under ρ = G Gᵀ.
pub fn continuous_kernel(map: RealMatrix, n: usize) -> BootstrapKernel {
    BootstrapKernel { map, scale: 1.0 / n as f64, aggregate: Aggregate::Max }
}

pub fn identity_map(n: usize) -> RealMatrix {
    DMatrix::identity(n, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::teststats::{delta_with_weights, weight_factor, weight_matrix, WeightMeasure};

    #[test]
    fn support_points_and_moments() {
        assert!((KAPPA - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-15);
        assert!((KAPPA * KAPPA - KAPPA - 1.0).abs() < 1e-15);
        let p = low_point_probability();
        let mean = (1.0 - KAPPA) * p + KAPPA * (1.0 - p);
        let second = (1.0 - KAPPA).powi(2) * p + KAPPA * KAPPA * (1.0 - p);
        assert!(mean.abs() < 1e-15);
        assert!((second - 1.0).abs() < 1e-14);
        let w = multiplier_weights(1000, 3);
        assert!(w.iter().all(|&v| v == 1.0 - KAPPA || v == KAPPA));
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        assert_eq!(multiplier_stream(7, 3, 50), multiplier_stream(7, 3, 50));
        assert_ne!(multiplier_stream(7, 3, 50), multiplier_stream(7, 4, 50));
        assert_eq!(&multiplier_stream(7, 3, 80)[..50], &multiplier_stream(7, 3, 50)[..]);
    }

    fn field(n: usize, k: usize) -> ResidualField {
        ResidualField {
            re: DMatrix::from_fn(n, k, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.5),
            im: DMatrix::from_fn(n, k, |i, j| ((i * 5 + j) % 13) as f64 / 13.0 - 0.5),
        }
    }

    #[test]
    fn zero_field_gives_zero_distribution() {
        let f = ResidualField { re: DMatrix::zeros(20, 3), im: DMatrix::zeros(20, 3) };
        let k = continuous_kernel(identity_map(20), 20);
        let r = bootstrap_distribution(&f, &k, &BootstrapConfig { replications: 30, alpha: 0.05, seed: 1 }).unwrap();
        assert!(r.boot_stats.iter().all(|&v| v == 0.0));
        assert_eq!(r.critical_value, 0.0);
    }

    #[test]
    fn unit_multipliers_reproduce_observed() {
        let n = 60;
        let f = field(n, 4);
        let c: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin() * 2.0).collect();
        let m = WeightMeasure::default();
        let observed = delta_with_weights(&f, &weight_matrix(&[&c], &m));
        let g = weight_factor(&[&c], &m, 1e-14).g;
        let k = continuous_kernel(g.transpose(), n);
        let s = k.statistic(&f.stacked(), &vec![1.0; n]);
        assert!((s - observed.delta).abs() <= 1e-10 * observed.delta);
    }

    #[test]
    fn b_zero_is_rejected() {
        let f = field(5, 1);
        let k = continuous_kernel(identity_map(5), 5);
        assert!(bootstrap_distribution(&f, &k, &BootstrapConfig { replications: 0, alpha: 0.05, seed: 1 }).is_err());
    }

    #[test]
    fn decision_rules() {
        let boot = BootstrapResult { boot_stats: (1..=499).map(|v| v as f64).collect(), critical_value: 475.0, p_value: None };
        let stat = |d: f64| StatisticValue { delta: d, per_t: vec![d], argmax_t: 0 };
        let low = decide(&stat(0.0), &boot).unwrap();
        assert!(!low.reject && (low.p_value - 1.0).abs() < 1e-15);
        let high = decide(&stat(1e6), &boot).unwrap();
        assert!(high.reject && (high.p_value - 1.0 / 500.0).abs() < 1e-15);
        assert!(decide(&stat(475.0), &boot).unwrap().reject);
        assert_eq!(critical_value(&boot.boot_stats, 0.05), 475.0);
    }

    #[test]
    fn degenerate_alpha_uses_smallest() {
        assert_eq!(critical_value(&[1.0, 2.0, 3.0], 1.0), 1.0);
    }

    #[test]
    fn permutation_with_matching_multipliers_is_invariant() {
        let n = 40;
        let f = field(n, 3);
        let c: Vec<f64> = (0..n).map(|i| i as f64 / 10.0).collect();
        let w = weight_matrix(&[&c], &WeightMeasure::default());
        let omega = multiplier_stream(9, 0, n);
        // Quadratic form with ρ applied directly: vᵀ ρ v, done by two maps.
        let base = {
            let mut v = f.stacked();
            for i in 0..n {
                v.row_mut(i).scale_mut(omega[i]);
            }
            (v.transpose() * &w * &v).diagonal()
        };
        let perm: Vec<usize> = (0..n).rev().collect();
        let pf = DMatrix::from_fn(n, 6, |i, j| f.stacked()[(perm[i], j)]);
        let pc: Vec<f64> = perm.iter().map(|&i| c[i]).collect();
        let pw = weight_matrix(&[&pc], &WeightMeasure::default());
        let mut pv = pf.clone();
        for i in 0..n {
            pv.row_mut(i).scale_mut(omega[perm[i]]);
        }
        let permuted = (pv.transpose() * &pw * &pv).diagonal();
        assert!((base - permuted).amax() < 1e-10);
    }

    #[test]
    fn thin_and_wide_maps_agree() {
        let n = 60;
        let f = field(n, 4);
        let stacked = f.stacked();
        let omega = multiplier_stream(3, 1, n);
        let mut weighted = stacked.clone();
        for i in 0..n {
            weighted.row_mut(i).scale_mut(omega[i]);
        }
        for rows in [3, THIN_MAP_ROWS + 5] {
            let map = DMatrix::from_fn(rows, n, |i, j| ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.5);
            for aggregate in [Aggregate::Max, Aggregate::Weighted(vec![0.1, 0.2, 0.3, 0.4])] {
                let k = BootstrapKernel { map: map.clone(), scale: 0.5, aggregate };
                let (a, b) = (k.statistic(&stacked, &omega), k.evaluate(&weighted));
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }
}
