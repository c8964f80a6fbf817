//! Samplers for the limit of degenerate V-statistics.
//!
//! The limit is the multiple stochastic integral `∫ f dY ⋯ dY` against a
//! centred Gaussian process `Y` with covariance `C`. [`GaussianGrid`] draws
//! the increments of `Y` over a uniform grid, so for a grid kernel the
//! integral is the finite sum `Σ_J c_J Π ΔY_{j_i}`. In the IID case with
//! `d = 2` the same law is also the series `Σ λ_k (τ_k² − 1) + trace`, which
//! [`EigenSeriesSampler`] samples from Nyström eigenvalues.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::covariance::{pairings, CellMeasure, Covariance};
use crate::error::{Error, Result};
use crate::kernels::{AnalyticKernel, GridKernel};
use crate::par;
use crate::rng::stream_rng;

/// Most negative eigenvalue of an increment covariance accepted as rounding.
pub const EIGEN_TOLERANCE: f64 = 1e-8;
/// Largest diagonal jitter the factorisation may add.
pub const MAX_JITTER: f64 = 1e-7;
/// Largest `n_cells^d` accepted by [`GaussianGrid::msi_mean`].
pub const MEAN_BUDGET: usize = 100_000_000;

/// Increment law of `Y` over `n_cells` uniform cells, with its lower
/// Cholesky factor.
#[derive(Clone, Debug)]
pub struct GaussianGrid {
    n_cells: usize,
    increment_cov: CellMeasure,
    factor: Vec<f64>,
    jitter: f64,
    lambda_min: f64,
}

impl GaussianGrid {
    /// Double-differences `c` over the grid and factorises the result.
    ///
    /// Jitter starts at the smallest power of ten at or above
    /// `1.1·max(0, −λ_min)` and is raised tenfold while Cholesky fails.
    pub fn build<C: Covariance + ?Sized>(c: &C, n_cells: usize) -> Result<Self> {
        if n_cells < 2 {
            return Err(Error::input("the Gaussian grid needs at least 2 cells"));
        }
        let cells = CellMeasure::new(c, n_cells);
        if let Some(v) = cells.values().iter().find(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("increment covariance has a non-finite entry {v}")));
        }
        let asym = cells.max_asymmetry();
        if asym > 1e-12 {
            return Err(Error::numeric(format!("increment covariance is asymmetric by {asym:e}")));
        }
        let lambda_min = cells.min_eigenvalue();
        if lambda_min < -EIGEN_TOLERANCE {
            return Err(Error::Indefinite { lambda_min });
        }
        let matrix = cells.to_matrix();
        let max_diag = matrix.diagonal().iter().copied().fold(0.0, f64::max);
        let mut jitter = power_of_ten_at_least(1.1 * (-lambda_min).max(0.0));
        let chol = loop {
            let mut m = matrix.clone();
            for i in 0..n_cells {
                m[(i, i)] += jitter;
            }
            if let Some(ch) = Cholesky::new(m) {
                break ch;
            }
            jitter = if jitter == 0.0 {
                power_of_ten_at_least(1e-16 * max_diag.max(f64::MIN_POSITIVE))
            } else {
                jitter * 10.0
            };
            if jitter > MAX_JITTER {
                return Err(Error::Convergence(format!(
                    "Cholesky failed with jitter up to {MAX_JITTER:e} (λ_min = {lambda_min:e})"
                )));
            }
        };
        let l = chol.l();
        let mut factor = vec![0.0; n_cells * n_cells];
        for i in 0..n_cells {
            for j in 0..=i {
                factor[i * n_cells + j] = l[(i, j)];
            }
        }
        let grid = Self {
            n_cells,
            increment_cov: cells,
            factor,
            jitter,
            lambda_min,
        };
        let err = grid.reconstruction_error();
        if err > 1e-8 {
            return Err(Error::numeric(format!("factor reproduces the jittered covariance only to {err:e}")));
        }
        Ok(grid)
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn increment_cov(&self) -> &CellMeasure {
        &self.increment_cov
    }

    /// Diagonal jitter added before factorisation.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Smallest eigenvalue of the increment covariance before jitter.
    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    /// Row-major lower-triangular factor.
    pub fn factor(&self) -> &[f64] {
        &self.factor
    }

    /// `max |L Lᵀ − (M + εI)|`.
    pub fn reconstruction_error(&self) -> f64 {
        let n = self.n_cells;
        let l = DMatrix::from_row_slice(n, n, &self.factor);
        let ll = &l * l.transpose();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let target = self.increment_cov.get(i, j) + if i == j { self.jitter } else { 0.0 };
                worst = worst.max((ll[(i, j)] - target).abs());
            }
        }
        worst
    }

    /// One draw of the increment vector `L z` from stream `stream`.
    pub fn draw_increments(&self, seed: u64, stream: u64) -> Vec<f64> {
        let n = self.n_cells;
        let mut rng = stream_rng(seed, stream);
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        (0..n)
            .map(|i| {
                let row = &self.factor[i * n..i * n + i + 1];
                row.iter().zip(&z).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    fn check_kernel(&self, kernel: &GridKernel) -> Result<()> {
        if kernel.n_cells() != self.n_cells {
            return Err(Error::input(format!(
                "kernel has {} cells, the Gaussian grid {}",
                kernel.n_cells(),
                self.n_cells
            )));
        }
        Ok(())
    }

    /// `reps` draws of `Σ_J c_J Π ΔY_{j_i}`; replication `r` uses stream `r`.
    pub fn sample_msi(&self, kernel: &GridKernel, reps: usize, seed: u64) -> Result<Vec<f64>> {
        self.check_kernel(kernel)?;
        if reps == 0 {
            return Err(Error::input("replication count must be positive"));
        }
        let values = par::map_indexed(reps, |r| kernel.contract(&self.draw_increments(seed, r as u64)));
        check_finite(&values)?;
        Ok(values)
    }

    /// Exact mean of [`Self::sample_msi`]: `Σ_J c_J Σ_pairings Π m(A × A)`.
    pub fn msi_mean(&self, kernel: &GridKernel) -> Result<f64> {
        self.check_kernel(kernel)?;
        let d = kernel.dim();
        if d % 2 == 1 {
            return Ok(0.0);
        }
        if kernel.coeffs().len() > MEAN_BUDGET {
            return Err(Error::size("kernel too large for the exact mean"));
        }
        let matchings = pairings(d)?;
        let n = self.n_cells;
        let coeffs = kernel.coeffs();
        Ok(par::chunked_sum(coeffs.len(), |flat| {
            let mut idx = vec![0; d];
            let mut r = flat;
            for slot in idx.iter_mut().rev() {
                *slot = r % n;
                r /= n;
            }
            let m: f64 = matchings
                .iter()
                .map(|pi| pi.iter().map(|&(a, b)| self.increment_cov.get(idx[a], idx[b])).product::<f64>())
                .sum();
            coeffs[flat] * m
        }))
    }
}

fn power_of_ten_at_least(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let mut p = 10f64.powi(x.log10().ceil() as i32);
    // guard against log10 rounding at exact powers
    if p < x {
        p *= 10.0;
    }
    p
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(r) => Err(Error::numeric(format!("replication {r} produced a non-finite value"))),
        None => Ok(()),
    }
}

/// Multiple integral against the increments `ΔW − δ W(1)` of `W(t) − tW(1)`,
/// drawn directly from white noise without any factorisation.
pub fn sample_msi_white_noise(kernel: &GridKernel, reps: usize, seed: u64) -> Result<Vec<f64>> {
    if reps == 0 {
        return Err(Error::input("replication count must be positive"));
    }
    let n = kernel.n_cells();
    let delta = 1.0 / n as f64;
    let sd = delta.sqrt();
    let values = par::map_indexed(reps, |r| {
        let mut rng = stream_rng(seed, r as u64);
        let dw: Vec<f64> = (0..n).map(|_| sd * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
        let w1: f64 = dw.iter().sum();
        let dy: Vec<f64> = dw.iter().map(|x| x - delta * w1).collect();
        kernel.contract(&dy)
    });
    check_finite(&values)?;
    Ok(values)
}

/// Nyström eigenvalues of a symmetric bivariate kernel, for the series
/// `Σ λ_k (τ_k² − 1)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EigenSeriesSampler {
    eigenvalues: Vec<f64>,
    trace: Option<f64>,
    k_terms: usize,
}

impl EigenSeriesSampler {
    /// Sampler from given eigenvalues (descending by magnitude) and an
    /// optional trace `∫ f(t,t) dt`.
    pub fn new(eigenvalues: Vec<f64>, trace: Option<f64>) -> Result<Self> {
        if eigenvalues.iter().any(|l| !l.is_finite()) || trace.is_some_and(|t| !t.is_finite()) {
            return Err(Error::numeric("eigenvalues and trace must be finite"));
        }
        Ok(Self {
            k_terms: eigenvalues.len(),
            eigenvalues,
            trace,
        })
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn trace(&self) -> Option<f64> {
        self.trace
    }

    pub fn k_terms(&self) -> usize {
        self.k_terms
    }

    /// `Σ λ_k` over the retained terms.
    pub fn retained_sum(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }
}

/// Eigenvalues of `[f(m_i, m_j)/N]` over the `N` cell midpoints, keeping
/// the `k_terms` largest in magnitude; the trace is the midpoint rule for
/// `∫ f(t,t) dt`.
pub fn nystrom_eigens(kernel: &AnalyticKernel, n_cells: usize, k_terms: usize) -> Result<EigenSeriesSampler> {
    if kernel.dim() != 2 {
        return Err(Error::input("the eigen-series needs a bivariate kernel"));
    }
    if n_cells < 2 || k_terms == 0 {
        return Err(Error::input("need at least 2 cells and one retained term"));
    }
    let n = n_cells;
    let mid = |i: usize| (i as f64 + 0.5) / n as f64;
    let rows = par::map_indexed(n, |i| (0..n).map(|j| kernel.eval(&[mid(i), mid(j)]) / n as f64).collect::<Vec<f64>>());
    let m = DMatrix::from_row_slice(n, n, &rows.concat());
    let mut asym: f64 = 0.0;
    for i in 0..n {
        for j in 0..i {
            asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if asym > 1e-8 {
        return Err(Error::input(format!("kernel is asymmetric by {asym:e}")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("kernel matrix has non-finite entries"));
    }
    let trace = m.diagonal().iter().sum::<f64>();
    let mut eig: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
    eig.truncate(k_terms);
    EigenSeriesSampler::new(eig, Some(trace))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
pub enum StatisticKind {
    /// Centred series, the limit of U-statistics.
    U,
    /// Series shifted by the trace, the limit of V-statistics.
    V,
}

/// `reps` draws of `Σ λ_k (τ_k² − 1)`, plus the full trace for kind V;
/// replication `r` uses stream `r`.
pub fn sample_eigen_series(es: &EigenSeriesSampler, kind: StatisticKind, reps: usize, seed: u64) -> Result<Vec<f64>> {
    let shift = match (kind, es.trace) {
        (StatisticKind::U, _) => 0.0,
        (StatisticKind::V, Some(t)) => t,
        (StatisticKind::V, None) => return Err(Error::input("the V series needs the kernel trace")),
    };
    if reps == 0 {
        return Err(Error::input("replication count must be positive"));
    }
    let values = par::map_indexed(reps, |r| {
        let mut rng = stream_rng(seed, r as u64);
        shift
            + es.eigenvalues
                .iter()
                .map(|l| {
                    let tau: f64 = StandardNormal.sample(&mut rng);
                    l * (tau * tau - 1.0)
                })
                .sum::<f64>()
    });
    check_finite(&values)?;
    Ok(values)
}

/// Two-sample Kolmogorov–Smirnov statistic `sup_x |F_a(x) − F_b(x)|`.
pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::input("both samples must be nonempty"));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(Error::numeric("samples contain NaN"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut worst: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        worst = worst.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(worst)
}

/// Location and spread of a sample with standard errors.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct SampleSummary {
    pub reps: usize,
    pub mean: f64,
    pub mean_se: f64,
    pub var: f64,
    pub var_se: f64,
    /// `(p, quantile)` pairs.
    pub quantiles: Vec<(f64, f64)>,
}

pub const REPORT_QUANTILES: [f64; 7] = [0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99];

/// Summary of `xs`; the variance standard error uses the fourth central
/// moment, `√((m₄ − s⁴)/n)`.
pub fn summarize(xs: &[f64]) -> Result<SampleSummary> {
    if xs.len() < 2 {
        return Err(Error::input("a summary needs at least two values"));
    }
    check_finite(xs)?;
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(SampleSummary {
        reps: xs.len(),
        mean,
        mean_se: (var / n).sqrt(),
        var,
        var_se: ((m4 - var * var).max(0.0) / n).sqrt(),
        quantiles: REPORT_QUANTILES.iter().map(|&p| (p, quantile(&sorted, p))).collect(),
    })
}

/// Linear-interpolation quantile of a sorted sample.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Writes eigenvalues as CSV with header `k,lambda` (k from 1).
pub fn write_eigen_csv<W: Write>(mut out: W, eigenvalues: &[f64]) -> Result<()> {
    check_finite(eigenvalues)?;
    writeln!(out, "k,lambda")?;
    for (k, l) in eigenvalues.iter().enumerate() {
        writeln!(out, "{},{l:?}", k + 1)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::CovarianceModel;
    use crate::kernels::discretize;
    use crate::mixing::MarkovUniformGenerator;
    use std::f64::consts::PI;

    #[test]
    fn bridge_increments_on_two_cells() {
        let g = GaussianGrid::build(&CovarianceModel::brownian_bridge(), 2).unwrap();
        let c = g.increment_cov();
        for (i, j, v) in [(0, 0, 0.25), (0, 1, -0.25), (1, 0, -0.25), (1, 1, 0.25)] {
            assert!((c.get(i, j) - v).abs() < 1e-15);
        }
        assert!(g.jitter() > 0.0);
        assert!(g.reconstruction_error() <= 1e-8);
        assert!(GaussianGrid::build(&CovarianceModel::brownian_bridge(), 1).is_err());
    }

    #[test]
    fn bridge_rows_sum_to_zero() {
        let g = GaussianGrid::build(&CovarianceModel::brownian_bridge(), 64).unwrap();
        for i in 0..64 {
            let row: f64 = (0..64).map(|j| g.increment_cov().get(i, j)).sum();
            assert!(row.abs() < 1e-10);
        }
    }

    #[test]
    fn markov_limit_covariance_is_psd() {
        let gen = MarkovUniformGenerator::two_state(0.7, 1).unwrap();
        let c = gen.limit_covariance(1e-12).unwrap();
        let g = GaussianGrid::build(&c, 64).unwrap();
        assert!(g.lambda_min() >= -EIGEN_TOLERANCE);
        assert!(g.reconstruction_error() <= 1e-8);
    }

    #[test]
    fn indefinite_covariance_is_rejected() {
        let bad = CovarianceModel::mixed(
            "bad",
            std::sync::Arc::new(|t: f64, s: f64| -(t.min(s))),
            std::sync::Arc::new(|_| -1.0),
            std::sync::Arc::new(|_, _| 0.0),
        );
        assert!(matches!(GaussianGrid::build(&bad, 8), Err(Error::Indefinite { .. })));
    }

    #[test]
    fn jitter_is_a_power_of_ten() {
        assert_eq!(power_of_ten_at_least(0.0), 0.0);
        assert_eq!(power_of_ten_at_least(1.1e-17), 1e-16);
        assert_eq!(power_of_ten_at_least(1e-3), 1e-3);
        assert_eq!(power_of_ten_at_least(0.02), 0.1);
    }

    #[test]
    fn zero_kernel_samples_zero() {
        let g = GaussianGrid::build(&CovarianceModel::brownian_bridge(), 16).unwrap();
        let z = GridKernel::zeros(2, 16).unwrap();
        assert!(g.sample_msi(&z, 50, 1).unwrap().iter().all(|&v| v == 0.0));
        let wrong = GridKernel::zeros(2, 8).unwrap();
        assert!(g.sample_msi(&wrong, 5, 1).is_err());
    }

    #[test]
    fn rank_one_msi_mean() {
        let g = GaussianGrid::build(&CovarianceModel::brownian_bridge(), 64).unwrap();
        let k = discretize(&AnalyticKernel::rank_one(), 64).unwrap();
        let s = summarize(&g.sample_msi(&k, 100_000, 3).unwrap()).unwrap();
        assert!((s.mean - 1.0 / 12.0).abs() <= 3.0 * s.mean_se, "{} ± {}", s.mean, s.mean_se);
        let exact = g.msi_mean(&k).unwrap();
        assert!((exact - 1.0 / 12.0).abs() < 1e-4);
    }

    #[test]
    fn msi_mean_identity_markov() {
        let gen = MarkovUniformGenerator::two_state(0.7, 1).unwrap();
        let c = gen.limit_covariance(1e-12).unwrap();
        let g = GaussianGrid::build(&c, 64).unwrap();
        let k = discretize(&AnalyticKernel::cramer_von_mises(), 64).unwrap();
        let s = summarize(&g.sample_msi(&k, 20_000, 4).unwrap()).unwrap();
        let exact = g.msi_mean(&k).unwrap();
        assert!((s.mean - exact).abs() <= 3.0 * s.mean_se);
    }

    #[test]
    fn white_noise_bridge_matches_factorised_bridge() {
        let k = discretize(&AnalyticKernel::cramer_von_mises(), 64).unwrap();
        let g = GaussianGrid::build(&CovarianceModel::brownian_bridge(), 64).unwrap();
        let a = g.sample_msi(&k, 10_000, 11).unwrap();
        let b = sample_msi_white_noise(&k, 10_000, 12).unwrap();
        assert!(ks_distance(&a, &b).unwrap() <= 0.02);
    }

    #[test]
    fn nystrom_examples() {
        let r = nystrom_eigens(&AnalyticKernel::rank_one(), 256, 10).unwrap();
        assert!((r.eigenvalues()[0] - 1.0 / 12.0).abs() < 1e-3);
        assert!(r.eigenvalues()[1..].iter().all(|l| l.abs() < 1e-10));
        let cvm = nystrom_eigens(&AnalyticKernel::cramer_von_mises(), 512, 200).unwrap();
        for k in 1..=5 {
            let exact = 1.0 / (PI * PI * (k * k) as f64);
            assert!(((cvm.eigenvalues()[k - 1] - exact) / exact).abs() < 0.01);
        }
        assert_eq!(cvm.k_terms(), 200);
        assert!((cvm.trace().unwrap() - 1.0 / 6.0).abs() < 1e-5);
        let z = nystrom_eigens(&AnalyticKernel::zero(2), 32, 5).unwrap();
        assert!(z.eigenvalues().iter().all(|&l| l == 0.0));
        let asym = AnalyticKernel::new("a", 2, std::sync::Arc::new(|x: &[f64]| x[0]), false).unwrap();
        assert!(matches!(nystrom_eigens(&asym, 16, 3), Err(Error::Input(_))));
    }

    #[test]
    fn eigen_series_examples() {
        let one = EigenSeriesSampler::new(vec![1.0 / 12.0], None).unwrap();
        let s = summarize(&sample_eigen_series(&one, StatisticKind::U, 20_000, 1).unwrap()).unwrap();
        assert!(s.mean.abs() <= 3.0 * s.mean_se);
        assert!(sample_eigen_series(&one, StatisticKind::V, 10, 1).is_err());
        let zero = EigenSeriesSampler::new(vec![0.0; 3], Some(0.25)).unwrap();
        assert!(sample_eigen_series(&zero, StatisticKind::V, 10, 1).unwrap().iter().all(|&v| v == 0.25));
        let cvm = nystrom_eigens(&AnalyticKernel::cramer_von_mises(), 512, 200).unwrap();
        let s = summarize(&sample_eigen_series(&cvm, StatisticKind::V, 100_000, 2).unwrap()).unwrap();
        assert!((s.mean - 1.0 / 6.0).abs() <= 3.0 * s.mean_se);
        assert!(((s.var - 1.0 / 45.0) * 45.0).abs() <= 0.1);
    }

    #[test]
    fn ks_examples() {
        let a = [0.3, 0.1, 0.7];
        assert_eq!(ks_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(ks_distance(&[0.0], &[1.0]).unwrap(), 1.0);
        assert!(ks_distance(&[], &[1.0]).is_err());
        assert!((ks_distance(&[1.0, 2.0], &[1.0, 1.0, 3.0, 4.0]).unwrap() - 0.5).abs() < 1e-15);
        let cvm = nystrom_eigens(&AnalyticKernel::cramer_von_mises(), 256, 200).unwrap();
        let x = sample_eigen_series(&cvm, StatisticKind::V, 10_000, 5).unwrap();
        let y = sample_eigen_series(&cvm, StatisticKind::V, 10_000, 6).unwrap();
        assert!(ks_distance(&x, &y).unwrap() <= 0.0272);
    }

    #[test]
    fn summary_and_csv() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert!((s.var - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.quantiles[3], (0.5, 2.5));
        let mut buf = Vec::new();
        write_eigen_csv(&mut buf, &[0.5, 0.25]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "k,lambda\n1,0.5\n2,0.25\n");
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = GaussianGrid::build(&CovarianceModel::brownian_bridge(), 32).unwrap();
        let k = discretize(&AnalyticKernel::cramer_von_mises(), 32).unwrap();
        assert_eq!(g.sample_msi(&k, 100, 9).unwrap(), g.sample_msi(&k, 100, 9).unwrap());
    }
}
