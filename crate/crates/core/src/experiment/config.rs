//! Experiment configuration in TOML.
//!
//! ```toml
//! [generator]
//! transition = [[0.7, 0.3], [0.3, 0.7]]   # or `file = "chain.txt"`, or `states = 2` for IID
//!
//! [kernel]
//! preset = "cvm"        # cvm | rank1 | min | bridge | product | zero | grid
//! project = false
//! # grid_file = "kernel.txt"
//!
//! [run]
//! n = 2000
//! reps = 10000
//! n_cells = 256
//! seed = 1
//! out = "out"
//!
//! [thresholds]
//! ks_dependent = 0.05
//! ```
//!
//! Every field has a default, so an empty file is a valid configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{discretize, project_degenerate, AnalyticKernel, GridKernel};
use crate::mixing::MarkovUniformGenerator;
use crate::rng::derive_seed;

pub const KERNEL_PRESETS: [&str; 7] = ["cvm", "rank1", "min", "bridge", "product", "zero", "grid"];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub generator: GeneratorSpec,
    pub kernel: KernelSpec,
    pub run: RunSpec,
    pub thresholds: Thresholds,
}

/// The data generator: a transition matrix given inline, a generator file,
/// or (when neither is given) IID uniform data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSpec {
    pub file: Option<PathBuf>,
    pub transition: Option<Vec<Vec<f64>>>,
    /// Number of hidden states of the IID generator.
    pub states: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            file: None,
            transition: None,
            states: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSpec {
    pub preset: String,
    /// Replace the kernel by its degenerate projection.
    pub project: bool,
    pub grid_file: Option<PathBuf>,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            preset: "cvm".into(),
            project: false,
            grid_file: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSpec {
    /// Kernel dimension; checked against the kernel when given.
    pub d: Option<usize>,
    pub n: usize,
    pub reps: usize,
    pub n_cells: usize,
    pub seed: u64,
    pub tail_tol: f64,
    pub out: PathBuf,
    /// Eigen-series terms kept by the limit sampler.
    pub k_terms: usize,
    /// Nyström resolution for the eigen-series.
    pub eigen_cells: usize,
    /// Grid used by `norms`; the seminorm costs `norm_cells^(2d)`.
    pub norm_cells: usize,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            d: None,
            n: 1000,
            reps: 10_000,
            n_cells: 256,
            seed: 20_240_601,
            tail_tol: 1e-12,
            out: PathBuf::from("out"),
            k_terms: 200,
            eigen_cells: 512,
            norm_cells: 16,
        }
    }
}

/// Pass/fail thresholds used by `compare` and `verify`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub ks_iid: f64,
    pub ks_dependent: f64,
    /// Width of Monte Carlo bands in standard errors.
    pub sigma: f64,
    pub probe_slope: f64,
    pub tube_factor: f64,
    pub seminorm_abs: f64,
    pub isometry_rel: f64,
    pub equivalence_rel: f64,
    pub eigen_rel: f64,
    pub rank_one_abs: f64,
    pub psi_slack: f64,
    pub eigen_tolerance: f64,
    /// Replications used by the Monte Carlo entries of `verify`.
    pub verify_reps: usize,
    /// Thresholds tried by the tube-decay tolerance sweep, loosest first.
    pub sweep: Vec<f64>,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            ks_iid: 0.03,
            ks_dependent: 0.05,
            sigma: 3.0,
            probe_slope: 0.05,
            tube_factor: 0.75,
            seminorm_abs: 1e-10,
            isometry_rel: 1e-10,
            equivalence_rel: 1e-10,
            eigen_rel: 0.01,
            rank_one_abs: 1e-3,
            psi_slack: 1e-12,
            eigen_tolerance: 1e-8,
            verify_reps: 20_000,
            sweep: vec![0.75, 0.7, 0.65, 0.6, 0.55, 0.5, 0.45, 0.4],
        }
    }
}

/// Seed salts separating the random streams of each stage.
pub(crate) mod salt {
    pub const GENERATOR: u64 = 1;
    pub const MSI: u64 = 2;
    pub const EIGEN: u64 = 3;
    pub const VERIFY: u64 = 4;
}

/// A kernel ready for both samplers.
#[derive(Clone, Debug)]
pub struct ResolvedKernel {
    pub name: String,
    pub analytic: Option<AnalyticKernel>,
    pub grid: GridKernel,
}

impl ResolvedKernel {
    pub fn dim(&self) -> usize {
        self.grid.dim()
    }
}

impl ExperimentConfig {
    /// Parses TOML text; relative paths are resolved against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(1, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            Error::Parse {
                line,
                msg: e.message().to_string(),
            }
        })?;
        for p in [&mut cfg.generator.file, &mut cfg.kernel.grid_file].into_iter().flatten() {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        if cfg.run.out.is_relative() {
            cfg.run.out = base_dir.join(&cfg.run.out);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    /// Checks counts and names; the generator itself is checked by
    /// [`Self::generator`].
    pub fn validate(&self) -> Result<()> {
        let r = &self.run;
        for (name, v) in [
            ("n", r.n),
            ("reps", r.reps),
            ("n_cells", r.n_cells),
            ("k_terms", r.k_terms),
            ("eigen_cells", r.eigen_cells),
            ("norm_cells", r.norm_cells),
            ("thresholds.verify_reps", self.thresholds.verify_reps),
        ] {
            if v == 0 {
                return Err(Error::input(format!("`{name}` must be positive")));
            }
        }
        if r.n_cells < 2 {
            return Err(Error::input("`n_cells` must be at least 2"));
        }
        if !(r.tail_tol > 0.0) {
            return Err(Error::input("`tail_tol` must be positive"));
        }
        if !KERNEL_PRESETS.contains(&self.kernel.preset.as_str()) {
            return Err(Error::input(format!(
                "unknown kernel preset `{}`; expected one of {KERNEL_PRESETS:?}",
                self.kernel.preset
            )));
        }
        if self.kernel.preset == "grid" && self.kernel.grid_file.is_none() {
            return Err(Error::input("the `grid` preset needs `grid_file`"));
        }
        if self.generator.file.is_some() && self.generator.transition.is_some() {
            return Err(Error::input("give either `generator.file` or `generator.transition`, not both"));
        }
        Ok(())
    }

    /// The configured generator, seeded from the run seed.
    pub fn generator(&self) -> Result<MarkovUniformGenerator> {
        let seed = derive_seed(self.run.seed, salt::GENERATOR);
        let g = &self.generator;
        if let Some(file) = &g.file {
            let text = std::fs::read_to_string(file)?;
            return Ok(MarkovUniformGenerator::from_spec_str(&text)?.with_seed(seed));
        }
        if let Some(rows) = &g.transition {
            return MarkovUniformGenerator::new(rows.clone(), seed);
        }
        MarkovUniformGenerator::iid(g.states, seed)
    }

    /// Human-readable generator description used in output metadata.
    pub fn generator_label(&self) -> Result<String> {
        let g = self.generator()?;
        Ok(if g.is_iid() {
            format!("iid({})", g.states())
        } else {
            format!("markov{:?}", g.rows())
        })
    }

    /// Builds the configured kernel and its grid version.
    pub fn kernel(&self) -> Result<ResolvedKernel> {
        let spec = &self.kernel;
        let n_cells = self.run.n_cells;
        let resolved = if spec.preset == "grid" {
            let path = spec.grid_file.as_ref().expect("checked by validate");
            let grid = GridKernel::from_text(&std::fs::read_to_string(path)?)?;
            let grid = if spec.project { grid.project_degenerate() } else { grid };
            ResolvedKernel {
                name: format!("grid:{}{}", path.display(), if spec.project { "+proj" } else { "" }),
                analytic: None,
                grid,
            }
        } else {
            let raw = match spec.preset.as_str() {
                "cvm" => AnalyticKernel::cramer_von_mises(),
                "rank1" => AnalyticKernel::rank_one(),
                "min" => AnalyticKernel::min_kernel(),
                "bridge" => AnalyticKernel::bridge_kernel(),
                "product" => AnalyticKernel::product(),
                "zero" => AnalyticKernel::zero(2),
                other => return Err(Error::input(format!("unknown kernel preset `{other}`"))),
            };
            let kernel = if spec.project { project_degenerate(&raw)? } else { raw };
            let grid = discretize(&kernel, n_cells)?;
            ResolvedKernel {
                name: kernel.name().to_string(),
                analytic: Some(kernel),
                grid,
            }
        };
        if let Some(d) = self.run.d {
            if d != resolved.dim() {
                return Err(Error::input(format!("run.d = {d} but the kernel has dimension {}", resolved.dim())));
            }
        }
        Ok(resolved)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let cfg = ExperimentConfig::from_toml_str("", Path::new("/tmp")).unwrap();
        assert_eq!(cfg.run.n, 1000);
        assert_eq!(cfg.run.out, PathBuf::from("/tmp/out"));
        cfg.validate().unwrap();
        assert!(cfg.generator().unwrap().is_iid());
        assert_eq!(cfg.kernel().unwrap().name, "cvm");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "[run]\nn = 10\nreps = \"many\"\n";
        let err = ExperimentConfig::from_toml_str(text, Path::new(".")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
        let err = ExperimentConfig::from_toml_str("[run]\nbogus = 1\n", Path::new(".")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn invalid_values_are_input_errors() {
        let cfg = ExperimentConfig::from_toml_str("[run]\nreps = 0\n", Path::new(".")).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Input(_))));
        let cfg = ExperimentConfig::from_toml_str("[kernel]\npreset = \"nope\"\n", Path::new(".")).unwrap();
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig::from_toml_str("[generator]\ntransition = [[1.0, 0.0], [0.0, 1.0]]\n", Path::new(".")).unwrap();
        cfg.validate().unwrap();
        assert!(cfg.generator().is_err());
        let cfg = ExperimentConfig::from_toml_str("[run]\nd = 3\n", Path::new(".")).unwrap();
        assert!(cfg.kernel().is_err());
    }

    #[test]
    fn markov_generator_and_projected_kernel() {
        let text = "[generator]\ntransition = [[0.7, 0.3], [0.3, 0.7]]\n[kernel]\npreset = \"product\"\nproject = true\n[run]\nn_cells = 8\n";
        let cfg = ExperimentConfig::from_toml_str(text, Path::new(".")).unwrap();
        assert!(!cfg.generator().unwrap().is_iid());
        let k = cfg.kernel().unwrap();
        assert_eq!(k.name, "proj(product)");
        let row: f64 = (0..8).map(|j| k.grid.get(&[0, j])).sum();
        assert!(row.abs() < 1e-6);
    }
}
