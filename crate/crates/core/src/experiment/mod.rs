//! End-to-end experiments: sample `V_n`, sample its limit, compare the two,
//! tabulate norms, and run the invariant battery.
//!
//! Every stage writes CSV samples plus a JSON sidecar with the run metadata
//! into the configured output directory. Sample files depend only on the
//! configuration; timestamps live in the sidecars.

mod config;
mod verify;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

pub use config::{ExperimentConfig, GeneratorSpec, KernelSpec, ResolvedKernel, RunSpec, Thresholds, KERNEL_PRESETS};
pub use verify::{off_diagonal_kernel, probe_slope, psi_consequence_excess, run_verify, tube_decay_ratio, SweepPoint, VerifyEntry, VerifyReport};

use crate::covariance::{CellMeasure, CovarianceModel};
use crate::empirical::{read_samples_csv, simulate_v_statistics, write_samples_csv};
use crate::error::{Error, Result};
use crate::kernels::{combined_norm_sq, discretize, norm_domination_constant, seminorm_sq_cells};
use crate::limitlaw::{
    ks_distance, nystrom_eigens, sample_eigen_series, summarize, write_eigen_csv, GaussianGrid, SampleSummary, StatisticKind,
};
use crate::rng::derive_seed;
use config::salt;

pub const SIMULATE_CSV: &str = "simulate.csv";
pub const SIMULATE_JSON: &str = "simulate.json";
pub const LIMIT_CSV: &str = "limit_msi.csv";
pub const LIMIT_EIGEN_CSV: &str = "limit_eigen.csv";
pub const EIGENVALUES_CSV: &str = "eigenvalues.csv";
pub const LIMIT_JSON: &str = "limit.json";
pub const COMPARE_JSON: &str = "compare.json";
pub const NORMS_JSON: &str = "norms.json";
pub const VERIFY_JSON: &str = "verify.json";

/// Numerical conventions recorded with every run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policies {
    pub rng: String,
    pub reduction: String,
    pub cells: String,
    pub jitter: String,
    pub projection: String,
    pub v_statistic: String,
}

impl Default for Policies {
    fn default() -> Self {
        Self {
            rng: "ChaCha8, seed derived per stage, one stream per replication".into(),
            reduction: "fixed 64-index chunks summed in index order".into(),
            cells: "(i/N,(i+1)/N], first cell closed at 0; kernels sampled at cell midpoints".into(),
            jitter: "smallest power of 10 >= 1.1*max(0,-lambda_min), x10 on Cholesky failure, cap 1e-7".into(),
            projection: "inclusion-exclusion over argument subsets, midpoint rule".into(),
            v_statistic: "grid method: sum_J c_J prod dS_n(A_j)".into(),
        }
    }
}

/// JSON sidecar written next to every sample file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub stage: String,
    pub kernel: String,
    pub d: usize,
    pub n_cells: usize,
    pub generator: String,
    pub seed: u64,
    pub reps: usize,
    pub n: Option<usize>,
    pub created_unix: u64,
    pub policies: Policies,
    pub summary: SampleSummary,
    #[serde(default)]
    pub details: serde_json::Value,
}

impl RunMetadata {
    fn new(stage: &str, cfg: &ExperimentConfig, kernel: &ResolvedKernel, summary: SampleSummary) -> Result<Self> {
        Ok(Self {
            stage: stage.into(),
            kernel: kernel.name.clone(),
            d: kernel.dim(),
            n_cells: kernel.grid.n_cells(),
            generator: cfg.generator_label()?,
            seed: cfg.run.seed,
            reps: cfg.run.reps,
            n: None,
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            policies: Policies::default(),
            summary,
            details: serde_json::Value::Null,
        })
    }

    /// Errors unless both runs used the same kernel, grid and generator.
    pub fn check_matches(&self, other: &RunMetadata) -> Result<()> {
        let mismatch = [
            ("kernel", self.kernel != other.kernel),
            ("d", self.d != other.d),
            ("n_cells", self.n_cells != other.n_cells),
            ("generator", self.generator != other.generator),
        ];
        match mismatch.iter().find(|(_, differs)| *differs) {
            Some((field, _)) => Err(Error::Consistency(format!(
                "{} and {} runs differ in {field}: {} vs {}",
                self.stage,
                other.stage,
                field_value(self, field),
                field_value(other, field)
            ))),
            None => Ok(()),
        }
    }
}

fn field_value(m: &RunMetadata, field: &str) -> String {
    match field {
        "kernel" => m.kernel.clone(),
        "d" => m.d.to_string(),
        "n_cells" => m.n_cells.to_string(),
        _ => m.generator.clone(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(file, value)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

fn write_samples(path: &Path, values: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_samples_csv(&mut w, values)?;
    std::io::Write::flush(&mut w)?;
    Ok(())
}

fn read_samples(path: &Path) -> Result<Vec<f64>> {
    read_samples_csv(BufReader::new(File::open(path)?))
}

fn prepare(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.run.out)?;
    Ok(())
}

/// Result of [`run_simulate`].
#[derive(Clone, Debug)]
pub struct SimulateOutput {
    pub values: Vec<f64>,
    pub metadata: RunMetadata,
}

/// Samples `reps` independent paths of length `n` and records the
/// grid-method V-statistic of each.
pub fn run_simulate(cfg: &ExperimentConfig) -> Result<SimulateOutput> {
    prepare(cfg)?;
    let generator = cfg.generator()?;
    let kernel = cfg.kernel()?;
    let values = simulate_v_statistics(&generator, &kernel.grid, cfg.run.n, cfg.run.reps)?;
    let mut metadata = RunMetadata::new("simulate", cfg, &kernel, summarize(&values)?)?;
    metadata.n = Some(cfg.run.n);
    write_samples(&cfg.run.out.join(SIMULATE_CSV), &values)?;
    write_json(&cfg.run.out.join(SIMULATE_JSON), &metadata)?;
    Ok(SimulateOutput { values, metadata })
}

/// Result of [`run_limit`].
#[derive(Clone, Debug)]
pub struct LimitOutput {
    pub msi: Vec<f64>,
    /// Eigen-series V-samples, for IID data and symmetric bivariate kernels.
    pub eigen: Option<Vec<f64>>,
    pub eigenvalues: Option<Vec<f64>>,
    pub metadata: RunMetadata,
}

#[derive(Serialize)]
struct LimitDetails {
    jitter: f64,
    lambda_min: f64,
    k_max: usize,
    covariance_tail_bound: f64,
    msi_mean_exact: Option<f64>,
    eigen_summary: Option<SampleSummary>,
    eigen_trace: Option<f64>,
    k_terms: Option<usize>,
    eigen_cells: Option<usize>,
}

/// Samples the limit law: the multiple integral over the Gaussian grid of
/// the generator's limit covariance, and for IID data with a symmetric
/// bivariate kernel also the eigen-series.
pub fn run_limit(cfg: &ExperimentConfig) -> Result<LimitOutput> {
    prepare(cfg)?;
    let generator = cfg.generator()?;
    let kernel = cfg.kernel()?;
    let cov = generator.limit_covariance(cfg.run.tail_tol)?;
    let grid = GaussianGrid::build(&cov, kernel.grid.n_cells())?;
    let msi = grid.sample_msi(&kernel.grid, cfg.run.reps, derive_seed(cfg.run.seed, salt::MSI))?;
    let msi_mean_exact = if kernel.dim() <= 4 { Some(grid.msi_mean(&kernel.grid)?) } else { None };

    let mut eigen = None;
    let mut eigenvalues = None;
    let mut trace = None;
    if let Some(analytic) = kernel.analytic.as_ref().filter(|k| generator.is_iid() && k.dim() == 2 && k.is_symmetric()) {
        let es = nystrom_eigens(analytic, cfg.run.eigen_cells, cfg.run.k_terms)?;
        let samples = sample_eigen_series(&es, StatisticKind::V, cfg.run.reps, derive_seed(cfg.run.seed, salt::EIGEN))?;
        let out = &cfg.run.out;
        write_samples(&out.join(LIMIT_EIGEN_CSV), &samples)?;
        let mut w = BufWriter::new(File::create(out.join(EIGENVALUES_CSV))?);
        write_eigen_csv(&mut w, es.eigenvalues())?;
        std::io::Write::flush(&mut w)?;
        trace = es.trace();
        eigenvalues = Some(es.eigenvalues().to_vec());
        eigen = Some(samples);
    }

    let mut metadata = RunMetadata::new("limit", cfg, &kernel, summarize(&msi)?)?;
    let details = LimitDetails {
        jitter: grid.jitter(),
        lambda_min: grid.lambda_min(),
        k_max: cov.k_max(),
        covariance_tail_bound: cov.tail_bound(),
        msi_mean_exact,
        eigen_summary: eigen.as_deref().map(summarize).transpose()?,
        eigen_trace: trace,
        k_terms: eigen.as_ref().map(|_| cfg.run.k_terms),
        eigen_cells: eigen.as_ref().map(|_| cfg.run.eigen_cells),
    };
    metadata.details = serde_json::to_value(details)?;
    write_samples(&cfg.run.out.join(LIMIT_CSV), &msi)?;
    write_json(&cfg.run.out.join(LIMIT_JSON), &metadata)?;
    Ok(LimitOutput {
        msi,
        eigen,
        eigenvalues,
        metadata,
    })
}

/// Report written by [`run_compare`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub ks: f64,
    pub ks_threshold: f64,
    /// KS distance between the two limit samplers, when both exist.
    pub ks_limit_samplers: Option<f64>,
    pub quantiles_sim: BTreeMap<String, f64>,
    pub quantiles_limit: BTreeMap<String, f64>,
    pub mean_sim: f64,
    pub mean_sim_se: f64,
    pub mean_limit: f64,
    pub mean_limit_se: f64,
    pub var_sim: f64,
    pub var_sim_se: f64,
    pub var_limit: f64,
    pub var_limit_se: f64,
    pub reps_sim: usize,
    pub reps_limit: usize,
    pub kernel: String,
    pub generator: String,
    pub n_cells: usize,
    pub pass: bool,
}

fn quantile_table(s: &SampleSummary) -> BTreeMap<String, f64> {
    s.quantiles.iter().map(|&(p, q)| (format!("p{:02}", (p * 100.0).round() as u32), q)).collect()
}

/// Compares the `V_n` replications with the limit sampler. Existing outputs
/// in the output directory are reused; missing ones are generated.
pub fn run_compare(cfg: &ExperimentConfig) -> Result<CompareReport> {
    prepare(cfg)?;
    let out = &cfg.run.out;
    let (sim, sim_meta) = if out.join(SIMULATE_CSV).exists() && out.join(SIMULATE_JSON).exists() {
        (read_samples(&out.join(SIMULATE_CSV))?, read_json::<RunMetadata>(&out.join(SIMULATE_JSON))?)
    } else {
        let s = run_simulate(cfg)?;
        (s.values, s.metadata)
    };
    let (lim, lim_eigen, lim_meta) = if out.join(LIMIT_CSV).exists() && out.join(LIMIT_JSON).exists() {
        let eigen_path = out.join(LIMIT_EIGEN_CSV);
        let eigen = if eigen_path.exists() { Some(read_samples(&eigen_path)?) } else { None };
        (read_samples(&out.join(LIMIT_CSV))?, eigen, read_json::<RunMetadata>(&out.join(LIMIT_JSON))?)
    } else {
        let l = run_limit(cfg)?;
        (l.msi, l.eigen, l.metadata)
    };
    sim_meta.check_matches(&lim_meta)?;
    let kernel = cfg.kernel()?;
    let expected = RunMetadata {
        stage: "config".into(),
        kernel: kernel.name.clone(),
        d: kernel.dim(),
        n_cells: kernel.grid.n_cells(),
        generator: cfg.generator_label()?,
        ..sim_meta.clone()
    };
    sim_meta.check_matches(&expected)?;

    let ks = ks_distance(&sim, &lim)?;
    let ks_limit_samplers = lim_eigen.as_deref().map(|e| ks_distance(&lim, e)).transpose()?;
    let threshold = if cfg.generator()?.is_iid() {
        cfg.thresholds.ks_iid
    } else {
        cfg.thresholds.ks_dependent
    };
    let s = summarize(&sim)?;
    let l = summarize(&lim)?;
    let report = CompareReport {
        ks,
        ks_threshold: threshold,
        ks_limit_samplers,
        quantiles_sim: quantile_table(&s),
        quantiles_limit: quantile_table(&l),
        mean_sim: s.mean,
        mean_sim_se: s.mean_se,
        mean_limit: l.mean,
        mean_limit_se: l.mean_se,
        var_sim: s.var,
        var_sim_se: s.var_se,
        var_limit: l.var,
        var_limit_se: l.var_se,
        reps_sim: s.reps,
        reps_limit: l.reps,
        kernel: sim_meta.kernel.clone(),
        generator: sim_meta.generator.clone(),
        n_cells: sim_meta.n_cells,
        pass: ks <= threshold,
    };
    write_json(&out.join(COMPARE_JSON), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormRow {
    pub model: String,
    pub seminorm_sq: f64,
    pub combined_norm_sq: f64,
    /// `C` with `seminorm² ≤ C · combined²` for every kernel on this grid.
    pub domination_constant: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormsReport {
    pub kernel: String,
    pub n_cells: usize,
    pub rows: Vec<NormRow>,
}

impl NormsReport {
    /// Fixed-width text table.
    pub fn to_table(&self) -> String {
        let mut s = format!("kernel {} on {} cells\n", self.kernel, self.n_cells);
        s += &format!("{:<28} {:>14} {:>14} {:>14}\n", "model", "seminorm^2", "norm0^2", "constant");
        for r in &self.rows {
            s += &format!("{:<28} {:>14.6e} {:>14.6e} {:>14.6e}\n", r.model, r.seminorm_sq, r.combined_norm_sq, r.domination_constant);
        }
        s
    }
}

/// Seminorm and combined norm of the configured kernel, discretised on
/// `norm_cells` cells, against the preset covariance models and the
/// generator's limit covariance.
pub fn run_norms(cfg: &ExperimentConfig) -> Result<NormsReport> {
    prepare(cfg)?;
    let kernel = cfg.kernel()?;
    let grid = match &kernel.analytic {
        Some(a) => discretize(a, cfg.run.norm_cells)?,
        None => kernel.grid.clone(),
    };
    let generator = cfg.generator()?;
    let limit = generator.limit_covariance(cfg.run.tail_tol)?;
    let models: Vec<(String, CellMeasure)> = vec![
        ("wiener".into(), CellMeasure::new(&CovarianceModel::wiener(), grid.n_cells())),
        ("brownian_bridge".into(), CellMeasure::new(&CovarianceModel::brownian_bridge(), grid.n_cells())),
        ("ou(alpha=1)".into(), CellMeasure::new(&CovarianceModel::stationary_ou(1.0)?, grid.n_cells())),
        ("fbm(h=0.75)".into(), CellMeasure::new(&CovarianceModel::fbm(0.75)?, grid.n_cells())),
        ("limit:".to_string() + &cfg.generator_label()?, CellMeasure::new(&limit, grid.n_cells())),
    ];
    let combined = combined_norm_sq(&grid, 0)?;
    let rows = models
        .into_iter()
        .map(|(model, cells)| {
            Ok(NormRow {
                model,
                seminorm_sq: seminorm_sq_cells(&grid, &cells)?,
                combined_norm_sq: combined,
                domination_constant: norm_domination_constant(&cells, grid.dim()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = NormsReport {
        kernel: kernel.name,
        n_cells: grid.n_cells(),
        rows,
    };
    write_json(&cfg.run.out.join(NORMS_JSON), &report)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(dir: &Path, extra: &str) -> ExperimentConfig {
        let text = format!("[run]\nn = 200\nreps = 400\nn_cells = 16\neigen_cells = 64\nk_terms = 20\nnorm_cells = 8\n{extra}");
        ExperimentConfig::from_toml_str(&text, dir).unwrap()
    }

    #[test]
    fn simulate_is_deterministic_and_writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(dir.path(), "");
        let a = run_simulate(&c).unwrap();
        let bytes_a = fs::read(c.run.out.join(SIMULATE_CSV)).unwrap();
        let b = run_simulate(&c).unwrap();
        let bytes_b = fs::read(c.run.out.join(SIMULATE_CSV)).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(bytes_a, bytes_b);
        let meta: RunMetadata = read_json(&c.run.out.join(SIMULATE_JSON)).unwrap();
        assert_eq!(meta.n, Some(200));
        assert_eq!(meta.kernel, "cvm");
    }

    #[test]
    fn limit_emits_eigen_outputs_for_iid() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(dir.path(), "");
        let l = run_limit(&c).unwrap();
        assert!(l.eigen.is_some());
        assert!(c.run.out.join(EIGENVALUES_CSV).exists());
        let markov = cfg(dir.path(), "[generator]\ntransition = [[0.7, 0.3], [0.3, 0.7]]\n");
        let l = run_limit(&markov).unwrap();
        assert!(l.eigen.is_none());
    }

    #[test]
    fn zero_kernel_limit_is_zero() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(dir.path(), "[kernel]\npreset = \"zero\"\n");
        let l = run_limit(&c).unwrap();
        assert!(l.msi.iter().all(|&v| v == 0.0));
        assert!(l.eigen.unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn compare_detects_mismatched_runs() {
        let dir = tempfile::tempdir().unwrap();
        run_simulate(&cfg(dir.path(), "")).unwrap();
        run_limit(&cfg(dir.path(), "[kernel]\npreset = \"rank1\"\n")).unwrap();
        let err = run_compare(&cfg(dir.path(), "")).unwrap_err();
        assert!(matches!(err, Error::Consistency(_)), "{err:?}");
    }

    #[test]
    fn compare_report_has_all_fields() {
        let dir = tempfile::tempdir().unwrap();
        let r = run_compare(&cfg(dir.path(), "")).unwrap();
        assert_eq!(r.quantiles_sim.len(), 7);
        assert!(r.ks_limit_samplers.is_some());
        let v: serde_json::Value = read_json(&dir.path().join("out").join(COMPARE_JSON)).unwrap();
        for key in ["ks", "quantiles_sim", "quantiles_limit", "mean_sim", "mean_limit", "var_sim", "var_limit", "pass"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn norms_table() {
        let dir = tempfile::tempdir().unwrap();
        let r = run_norms(&cfg(dir.path(), "[kernel]\npreset = \"rank1\"\n")).unwrap();
        assert_eq!(r.rows.len(), 5);
        for row in &r.rows {
            assert!(row.seminorm_sq <= row.domination_constant * row.combined_norm_sq + 1e-12);
        }
        assert!(r.to_table().contains("brownian_bridge"));
    }
}
