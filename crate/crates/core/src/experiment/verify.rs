//! The invariant battery behind `verify`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::salt;
use super::{prepare, write_json, ExperimentConfig, VERIFY_JSON};
use crate::covariance::{CellMeasure, CovarianceModel, Interval};
use crate::empirical::{
    cramer_von_mises_statistic, lemma2_lhs_exact, mean_and_std_err, moment_bound_probe, v_statistic, EmpiricalPath, VMethod,
};
use crate::error::Result;
use crate::kernels::{combined_norm_sq, discretize, norm_domination_constant, seminorm_sq, seminorm_sq_cells, wiener_ito_norm_sq, AnalyticKernel, GridKernel};
use crate::limitlaw::{nystrom_eigens, summarize, GaussianGrid};
use crate::mixing::MarkovUniformGenerator;
use crate::par;
use crate::rng::{derive_seed, stream_rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyEntry {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub entries: Vec<VerifyEntry>,
    /// Tube-decay check repeated at tightening thresholds.
    pub sweep: Vec<SweepPoint>,
    /// First swept threshold that fails.
    pub failure_onset: Option<f64>,
    pub pass: bool,
}

impl VerifyReport {
    pub fn failures(&self) -> impl Iterator<Item = &VerifyEntry> {
        self.entries.iter().filter(|e| !e.pass)
    }
}

struct Battery {
    entries: Vec<VerifyEntry>,
}

impl Battery {
    /// Records `measured ≤ bound`; NaN never passes.
    fn at_most(&mut self, name: &str, measured: f64, bound: f64) {
        self.push(name, measured, bound, measured <= bound);
    }

    fn push(&mut self, name: &str, measured: f64, bound: f64, pass: bool) {
        self.entries.push(VerifyEntry {
            name: name.into(),
            measured,
            bound,
            pass: pass && measured.is_finite(),
        });
    }

    /// Records a failed entry for a check that could not be evaluated.
    fn error(&mut self, name: &str, bound: f64) {
        self.push(name, f64::NAN, bound, false);
    }
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Log-log slope of the normalised moment ratio against `n`.
pub fn probe_slope(generator: &MarkovUniformGenerator, sets: &[Interval], exponents: &[u32], ns: &[usize], reps: usize) -> Result<f64> {
    let mut log_n = Vec::new();
    let mut log_ratio = Vec::new();
    for &n in ns {
        let probe = moment_bound_probe(generator, sets, exponents, n, reps)?;
        log_n.push((n as f64).ln());
        log_ratio.push(probe.ratio.ln());
    }
    Ok(least_squares_slope(&log_n, &log_ratio))
}

/// Largest ratio of multiplicity-3 tube masses between consecutive
/// halvings of `δ` from 1/16 to 1/128.
pub fn tube_decay_ratio(model: &CovarianceModel) -> Result<f64> {
    let deltas = [1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0];
    let masses = deltas.iter().map(|&d| model.diagonal_tube_mass(3, d)).collect::<Result<Vec<f64>>>()?;
    Ok(masses.windows(2).map(|w| w[1] / w[0]).fold(f64::NEG_INFINITY, f64::max))
}

/// Worst slack `|F_k(t,s) − ts| − ψ(k)·ts` over lags `1..=50` and the
/// 32×32 grid `t = i/31`.
pub fn psi_consequence_excess(generator: &MarkovUniformGenerator) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for k in 1..=50 {
        let psi = generator.psi_bound(k);
        for i in 0..32 {
            for j in 0..32 {
                let (t, s) = (i as f64 / 31.0, j as f64 / 31.0);
                let f = generator.joint_cdf(k, t, s)?;
                worst = worst.max((f - t * s).abs() - psi * t * s);
            }
        }
    }
    Ok(worst)
}

/// Random kernel vanishing on every cell with a repeated index.
pub fn off_diagonal_kernel(d: usize, n_cells: usize, seed: u64) -> Result<GridKernel> {
    let mut rng = stream_rng(seed, 0);
    GridKernel::from_fn(d, n_cells, |idx| {
        let repeated = (0..d).any(|a| (a + 1..d).any(|b| idx[a] == idx[b]));
        if repeated {
            0.0
        } else {
            rng.random::<f64>() - 0.5
        }
    })
}

/// Runs the battery and writes `verify.json`. Failures are report entries;
/// only I/O and configuration problems are errors.
pub fn run_verify(cfg: &ExperimentConfig) -> Result<VerifyReport> {
    prepare(cfg)?;
    let th = &cfg.thresholds;
    let seed = derive_seed(cfg.run.seed, salt::VERIFY);
    let mut b = Battery { entries: Vec::new() };

    match cfg.generator() {
        Ok(generator) => {
            b.push("generator_valid", 1.0, 1.0, true);
            generator_checks(&mut b, cfg, &generator, seed)?;
        }
        Err(_) => b.push("generator_valid", 0.0, 1.0, false),
    }

    let mut rng = stream_rng(seed, 1);
    let mut worst_lemma2: f64 = 0.0;
    for _ in 0..1000 {
        let q = rng.random_range(1..=4);
        let mut cuts: Vec<f64> = (0..2 * q).map(|_| rng.random()).collect();
        cuts.sort_by(f64::total_cmp);
        let sets: Vec<Interval> = cuts.chunks(2).filter_map(|c| Interval::new(c[0], c[1]).ok()).collect();
        let exps: Vec<u32> = sets.iter().map(|_| rng.random_range(1..=6)).collect();
        let check = lemma2_lhs_exact(&sets, &exps)?;
        worst_lemma2 = worst_lemma2.max(check.lhs / check.bound);
    }
    b.at_most("lemma2_lhs_over_bound", worst_lemma2, 1.0);

    let bridge = CovarianceModel::brownian_bridge();
    let tube = tube_decay_ratio(&bridge)?;
    b.at_most("bridge_tube_decay_ratio", tube, th.tube_factor);

    let one = GridKernel::from_fn(1, 64, |_| 1.0)?;
    let wiener = CovarianceModel::wiener();
    b.at_most("wiener_unit_seminorm_error", (seminorm_sq(&one, &wiener)?.sqrt() - 1.0).abs(), th.seminorm_abs);
    b.at_most("bridge_unit_seminorm", seminorm_sq(&one, &bridge)?.max(0.0).sqrt(), th.seminorm_abs);
    let mut worst_iso: f64 = 0.0;
    for (d, n) in [(1, 32), (2, 12), (3, 6)] {
        let f = off_diagonal_kernel(d, n, seed + d as u64)?;
        let s = seminorm_sq(&f, &wiener)?;
        let w = wiener_ito_norm_sq(&f);
        worst_iso = worst_iso.max(((s - w) / w).abs());
    }
    b.at_most("wiener_isometry_rel_error", worst_iso, th.isometry_rel);

    let path = EmpiricalPath::new((0..200).map(|_| rng.random()).collect())?;
    let degenerate = GridKernel::from_fn(2, 16, |_| rng.random::<f64>() - 0.5)?.project_degenerate();
    let naive = v_statistic(&path, &degenerate, 2, VMethod::Naive)?.value;
    let grid = v_statistic(&path, &degenerate, 2, VMethod::Grid)?.value;
    b.at_most("grid_naive_rel_difference", ((naive - grid) / grid).abs(), th.equivalence_rel);

    let rank_one = nystrom_eigens(&AnalyticKernel::rank_one(), 256, 5)?;
    b.at_most("nystrom_rank_one_error", (rank_one.eigenvalues()[0] - 1.0 / 12.0).abs(), th.rank_one_abs);
    let cvm = nystrom_eigens(&AnalyticKernel::cramer_von_mises(), 512, 5)?;
    let worst_eig = (1..=5)
        .map(|k| {
            let exact = 1.0 / (std::f64::consts::PI.powi(2) * (k * k) as f64);
            ((cvm.eigenvalues()[k - 1] - exact) / exact).abs()
        })
        .fold(0.0, f64::max);
    b.at_most("nystrom_cvm_rel_error", worst_eig, th.eigen_rel);

    let sweep: Vec<SweepPoint> = th.sweep.iter().map(|&t| SweepPoint { threshold: t, pass: tube <= t }).collect();
    let failure_onset = sweep.iter().find(|p| !p.pass).map(|p| p.threshold);
    let monotone = sweep.windows(2).all(|w| w[0].pass || !w[1].pass);
    b.push("tolerance_sweep_monotone", if monotone { 1.0 } else { 0.0 }, 1.0, monotone);

    let pass = b.entries.iter().all(|e| e.pass);
    let report = VerifyReport {
        entries: b.entries,
        sweep,
        failure_onset,
        pass,
    };
    write_json(&cfg.run.out.join(VERIFY_JSON), &report)?;
    Ok(report)
}

fn generator_checks(b: &mut Battery, cfg: &ExperimentConfig, generator: &MarkovUniformGenerator, seed: u64) -> Result<()> {
    let th = &cfg.thresholds;
    let reps = th.verify_reps;

    b.at_most("psi_consequence_excess", psi_consequence_excess(generator)?, th.psi_slack);

    let profile = generator.psi_profile()?;
    let psi_sum: f64 = (1..=200).map(|k| generator.psi_bound(k)).sum::<f64>() + profile.tail_sum(200);
    let mut worst_b: f64 = 0.0;
    for i in 0..16 {
        for j in 0..16 {
            let (t, s) = ((i as f64 + 0.5) / 16.0, (j as f64 + 0.5) / 16.0);
            worst_b = worst_b.max(generator.b_density(t, s, 200).value.abs());
        }
    }
    b.at_most("b_density_max", worst_b, 2.0 * psi_sum);

    match generator.limit_covariance(cfg.run.tail_tol) {
        Ok(cov) => {
            let cells = CellMeasure::new(&cov, 64);
            b.push("limit_covariance_min_eigenvalue", cells.min_eigenvalue(), -th.eigen_tolerance, cells.min_eigenvalue() >= -th.eigen_tolerance);
            match GaussianGrid::build(&cov, 64) {
                Ok(grid) => {
                    let kernel = discretize(&AnalyticKernel::cramer_von_mises(), 64)?;
                    let exact = grid.msi_mean(&kernel)?;
                    let samples = grid.sample_msi(&kernel, reps, seed)?;
                    let s = summarize(&samples)?;
                    b.at_most("msi_mean_deviation_in_se", (s.mean - exact).abs() / s.mean_se, th.sigma);
                    let again = grid.sample_msi(&kernel, 64, seed)?;
                    let same = again[..] == samples[..64];
                    b.push("msi_deterministic", if same { 1.0 } else { 0.0 }, 1.0, same);
                }
                Err(_) => b.error("msi_mean_deviation_in_se", th.sigma),
            }
            let mixed = CovarianceModel::mixed_from_generator(generator, cov.k_max());
            let cells = CellMeasure::new(&mixed, 16);
            let constant = norm_domination_constant(&cells, 2);
            let mut worst: f64 = 0.0;
            for r in 0..8 {
                let mut rng = stream_rng(seed, 100 + r);
                let f = GridKernel::from_fn(2, 16, |_| rng.random::<f64>() * 2.0 - 1.0)?;
                worst = worst.max(seminorm_sq_cells(&f, &cells)? / (constant * combined_norm_sq(&f, 0)?));
            }
            b.at_most("norm_domination_ratio", worst, 1.0);
        }
        Err(_) => b.error("limit_covariance_min_eigenvalue", -th.eigen_tolerance),
    }

    let sets = [Interval::new(0.0, 0.25)?, Interval::new(0.5, 0.75)?];
    let slope = probe_slope(&generator.with_seed(seed), &sets, &[2, 2], &[100, 200, 400, 800], reps)?;
    b.at_most("moment_probe_slope", slope, th.probe_slope);

    if generator.is_iid() {
        let values = par::map_indexed(reps, |r| {
            let path = EmpiricalPath::new(generator.with_seed(seed).sample_path_stream(200, r as u64)).expect("values lie in [0,1]");
            cramer_von_mises_statistic(&path)
        });
        let (mean, se) = mean_and_std_err(&values);
        b.at_most("cvm_mean_deviation_in_se", (mean - 1.0 / 6.0).abs() / se, th.sigma);
    }
    Ok(())
}
