//! Covariance functions on `[0,1]²` and the covariance measures they induce.
//!
//! A centred process ξ on `[0,1]` generates the noise `μ((a,b]) = ξ(b) − ξ(a)`
//! (the first cell is closed at 0). The covariance measure of two cells is
//! the double difference of Φ over their rectangle; for Gaussian ξ the
//! covariance measure of a product noise is a sum over pairings of such
//! double differences.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::mixing::MarkovUniformGenerator;
use crate::par;

pub type Fn1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type Fn2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Largest number of noise factors whose pairings are enumerated.
pub const MAX_PAIRING_FACTORS: usize = 8;

/// Anything with a covariance function on `[0,1]²`. Implementations do not
/// validate their arguments.
pub trait Covariance: Sync {
    fn cov(&self, t: f64, s: f64) -> f64;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Regular,
    Factorizing,
    MixedType,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Regular => "regular",
            Variant::Factorizing => "factorizing",
            Variant::MixedType => "mixed-type",
        }
    }
}

/// Variant-specific structure of a covariance model.
#[derive(Clone)]
pub enum Structure {
    /// The double difference has a density `q` with respect to Lebesgue
    /// measure on the square.
    Regular { q: Fn2 },
    /// `Φ(t,s) = G(min(t,s)) H(max(t,s))`, with analytic derivatives.
    Factorizing {
        g: Fn1,
        h: Fn1,
        g_prime: Fn1,
        h_prime: Fn1,
    },
    /// Marginal density `p` on the diagonal plus the series density `b`.
    MixedType { p: Fn1, b: Fn2 },
}

#[derive(Clone)]
pub struct CovarianceModel {
    name: String,
    phi: Fn2,
    structure: Structure,
}

impl fmt::Debug for CovarianceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CovarianceModel")
            .field("name", &self.name)
            .field("variant", &self.variant())
            .finish()
    }
}

impl Covariance for CovarianceModel {
    fn cov(&self, t: f64, s: f64) -> f64 {
        (self.phi)(t, s)
    }
}

fn check_unit(x: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::input(format!("{what} = {x} is outside [0,1]")))
    }
}

impl CovarianceModel {
    /// Standard Wiener process: `G(t) = t`, `H ≡ 1`.
    pub fn wiener() -> Self {
        Self::factorizing_unchecked(
            "wiener",
            Arc::new(|t| t),
            Arc::new(|_| 1.0),
            Arc::new(|_| 1.0),
            Arc::new(|_| 0.0),
        )
    }

    /// Brownian bridge on `[0,1]`: `G(t) = t`, `H(t) = 1 − t`.
    pub fn brownian_bridge() -> Self {
        Self::factorizing_unchecked(
            "brownian-bridge",
            Arc::new(|t| t),
            Arc::new(|t| 1.0 - t),
            Arc::new(|_| 1.0),
            Arc::new(|_| -1.0),
        )
    }

    /// Stationary Ornstein–Uhlenbeck covariance `exp(−α|t − s|)`.
    pub fn stationary_ou(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::input(format!("OU rate must be positive, got {alpha}")));
        }
        Ok(Self::factorizing_unchecked(
            &format!("stationary-ou({alpha})"),
            Arc::new(move |t| (alpha * t).exp()),
            Arc::new(move |t| (-alpha * t).exp()),
            Arc::new(move |t| alpha * (alpha * t).exp()),
            Arc::new(move |t| -alpha * (-alpha * t).exp()),
        ))
    }

    /// Fractional Brownian motion with Hurst index `h ∈ (1/2, 1]`.
    pub fn fbm(h: f64) -> Result<Self> {
        if !(h > 0.5 && h <= 1.0) {
            return Err(Error::input(format!("FBM index must lie in (1/2, 1], got {h}")));
        }
        let two_h = 2.0 * h;
        let phi: Fn2 = if h == 1.0 {
            Arc::new(|t, s| t * s)
        } else {
            Arc::new(move |t, s| 0.5 * (t.powf(two_h) + s.powf(two_h) - (t - s).abs().powf(two_h)))
        };
        let q: Fn2 = if h == 1.0 {
            Arc::new(|_, _| 1.0)
        } else {
            let c = h * (two_h - 1.0);
            Arc::new(move |t, s| c * (t - s).abs().powf(two_h - 2.0))
        };
        Ok(Self {
            name: format!("fbm({h})"),
            phi,
            structure: Structure::Regular { q },
        })
    }

    /// The limit covariance of the empirical process of `generator`, with the
    /// dependence series truncated after `k_max` lags.
    pub fn mixed_from_generator(generator: &MarkovUniformGenerator, k_max: usize) -> Self {
        let lc = generator.limit_covariance_with_lags(k_max);
        let lc_b = lc.clone();
        let phi: Fn2 = Arc::new(move |t, s| lc.eval(t, s));
        let b: Fn2 = Arc::new(move |t, s| lc_b.b_density(t, s));
        Self {
            name: format!("mixed(K={}, k_max={k_max})", generator.states()),
            phi,
            structure: Structure::MixedType {
                p: Arc::new(|_| 1.0),
                b,
            },
        }
    }

    /// User-supplied regular model. `phi` must be symmetric.
    pub fn regular(name: &str, phi: Fn2, q: Fn2) -> Self {
        Self {
            name: name.to_string(),
            phi,
            structure: Structure::Regular { q },
        }
    }

    /// User-supplied factorizing model. Requires `G/H` positive and
    /// nondecreasing on `(0,1)`, checked on a grid of 1000 interior points.
    pub fn factorizing(name: &str, g: Fn1, h: Fn1, g_prime: Fn1, h_prime: Fn1) -> Result<Self> {
        let model = Self::factorizing_unchecked(name, g, h, g_prime, h_prime);
        model.check_ratio_monotone(1000)?;
        Ok(model)
    }

    /// User-supplied mixed-type model.
    pub fn mixed(name: &str, phi: Fn2, p: Fn1, b: Fn2) -> Self {
        Self {
            name: name.to_string(),
            phi,
            structure: Structure::MixedType { p, b },
        }
    }

    fn factorizing_unchecked(name: &str, g: Fn1, h: Fn1, g_prime: Fn1, h_prime: Fn1) -> Self {
        let (gc, hc) = (g.clone(), h.clone());
        let phi: Fn2 = Arc::new(move |t, s| gc(t.min(s)) * hc(t.max(s)));
        Self {
            name: name.to_string(),
            phi,
            structure: Structure::Factorizing {
                g,
                h,
                g_prime,
                h_prime,
            },
        }
    }

    fn check_ratio_monotone(&self, points: usize) -> Result<()> {
        let Structure::Factorizing { g, h, .. } = &self.structure else {
            return Ok(());
        };
        let mut prev = f64::NEG_INFINITY;
        for i in 1..points {
            let t = i as f64 / points as f64;
            let ratio = g(t) / h(t);
            if !(ratio > 0.0) || !ratio.is_finite() {
                return Err(Error::input(format!("G/H is not positive at t = {t}")));
            }
            if ratio < prev * (1.0 - 1e-12) {
                return Err(Error::input(format!("G/H decreases at t = {t}")));
            }
            prev = ratio;
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn variant(&self) -> Variant {
        match self.structure {
            Structure::Regular { .. } => Variant::Regular,
            Structure::Factorizing { .. } => Variant::Factorizing,
            Structure::MixedType { .. } => Variant::MixedType,
        }
    }

    pub fn structure(&self) -> &Structure {
        &self.structure
    }

    /// `Φ(t,s)` with domain checks.
    pub fn eval_cov(&self, t: f64, s: f64) -> Result<f64> {
        check_unit(t, "t")?;
        check_unit(s, "s")?;
        Ok((self.phi)(t, s))
    }

    /// Covariance measure `m(r)` of a two-axis rectangle.
    pub fn double_difference(&self, r: &Rectangle) -> Result<f64> {
        match r.axes() {
            [a, b] => Ok(double_difference(self, *a, *b)),
            axes => Err(Error::input(format!(
                "double difference needs a 2-axis rectangle, got {} axes",
                axes.len()
            ))),
        }
    }

    /// `Σ|ΔΦ|` over the uniform `n_cells × n_cells` partition.
    ///
    /// The total variation is the supremum over all partitions; this is a
    /// lower estimate that is nondecreasing under refinement. Boundedness is
    /// judged by how the estimate stabilises (see [`variation_refinement`]).
    pub fn variation_estimate(&self, n_cells: usize) -> Result<f64> {
        if n_cells < 2 {
            return Err(Error::input("variation estimate needs at least 2 cells"));
        }
        Ok(CellMeasure::new(self, n_cells).abs_sum())
    }

    /// Infinitesimal densities of the positive (diagonal) and off-diagonal
    /// parts of the covariance measure.
    pub fn hahn_jordan_densities(&self) -> Result<HahnJordanDensities> {
        match &self.structure {
            Structure::Regular { .. } => Err(Error::UnsupportedVariant(Variant::Regular.name())),
            Structure::Factorizing {
                g,
                h,
                g_prime,
                h_prime,
            } => {
                let (g, h, gp, hp) = (g.clone(), h.clone(), g_prime.clone(), h_prime.clone());
                let (gp2, hp2) = (gp.clone(), hp.clone());
                Ok(HahnJordanDensities {
                    g1: Arc::new(move |t| h(t) * gp(t) - g(t) * hp(t)),
                    g2: Arc::new(move |t, s| gp2(t.min(s)) * hp2(t.max(s))),
                })
            }
            Structure::MixedType { p, b } => Ok(HahnJordanDensities {
                g1: p.clone(),
                g2: b.clone(),
            }),
        }
    }

    /// Covariance measure of the `2k`-fold product noise on the box
    /// `rects[0] × … × rects[2k−1]`, by the Gaussian pairing formula.
    pub fn product_measure_rectangle(&self, rects: &[Interval]) -> Result<f64> {
        check_pairing_size(rects.len())?;
        Ok(sum_over_pairings(rects.len(), |i, j| double_difference(self, rects[i], rects[j])))
    }

    /// Total `|m|` of the tube where the first `multiplicity` coordinates of
    /// the product noise fall in a common `δ`-cell, summed cell by cell.
    ///
    /// The product has `multiplicity` factors rounded up to an even count;
    /// a spare factor ranges over all cells. The mass vanishes as `δ → 0`
    /// when diagonals of multiplicity above two carry no mass.
    pub fn diagonal_tube_mass(&self, multiplicity: usize, delta: f64) -> Result<f64> {
        if self.variant() == Variant::Regular {
            return Err(Error::UnsupportedVariant(Variant::Regular.name()));
        }
        if multiplicity < 3 {
            return Err(Error::input(format!(
                "tube multiplicity must be at least 3, got {multiplicity}"
            )));
        }
        let factors = multiplicity + multiplicity % 2;
        check_pairing_size(factors)?;
        let n_cells = cells_for_width(delta)?;
        let cells = CellMeasure::new(self, n_cells);
        let free = factors - multiplicity;
        let mass = par::chunked_sum(n_cells, |i| {
            let measure = |idx: &[usize]| {
                sum_over_pairings(factors, |a, b| cells.get(idx[a], idx[b])).abs()
            };
            let mut idx = vec![i; factors];
            if free == 0 {
                measure(&idx)
            } else {
                (0..n_cells)
                    .map(|j| {
                        idx[factors - 1] = j;
                        measure(&idx)
                    })
                    .sum()
            }
        });
        Ok(mass)
    }

    /// Midpoint-rule integral of the regular density `q` over `a × b`
    /// with `nodes` points per axis.
    pub fn integrate_density(&self, a: Interval, b: Interval, nodes: usize) -> Result<f64> {
        let Structure::Regular { q } = &self.structure else {
            return Err(Error::UnsupportedVariant(self.variant().name()));
        };
        let (ha, hb) = (a.len() / nodes as f64, b.len() / nodes as f64);
        let mut acc = 0.0;
        for i in 0..nodes {
            let t = a.lo + (i as f64 + 0.5) * ha;
            for j in 0..nodes {
                let s = b.lo + (j as f64 + 0.5) * hb;
                acc += q(t, s);
            }
        }
        Ok(acc * ha * hb)
    }
}

/// Refinement table `(n_cells, estimate)` for [`CovarianceModel::variation_estimate`].
pub fn variation_refinement(model: &CovarianceModel, cells: &[usize]) -> Result<Vec<(usize, f64)>> {
    cells
        .iter()
        .map(|&n| model.variation_estimate(n).map(|v| (n, v)))
        .collect()
}

/// Densities `g1` (diagonal) and `g2` (off-diagonal) of a covariance measure.
#[derive(Clone)]
pub struct HahnJordanDensities {
    pub g1: Fn1,
    pub g2: Fn2,
}

/// A half-open subinterval `(lo, hi]` of `[0,1]`; the cell starting at 0 is
/// closed there.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::input(format!("({lo}, {hi}] is not a nonempty subinterval of [0,1]")));
        }
        Ok(Self { lo, hi })
    }

    /// Cell `i` of the uniform grid with `n_cells` cells.
    pub fn cell(i: usize, n_cells: usize) -> Self {
        let n = n_cells as f64;
        Self {
            lo: i as f64 / n,
            hi: (i + 1) as f64 / n,
        }
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    /// Membership under the semiring convention.
    pub fn contains(&self, x: f64) -> bool {
        (x > self.lo || (self.lo == 0.0 && x == 0.0)) && x <= self.hi
    }

    pub fn is_disjoint(&self, other: &Interval) -> bool {
        self.hi <= other.lo || other.hi <= self.lo
    }
}

/// A product of half-open intervals.
#[derive(Clone, Debug, PartialEq)]
pub struct Rectangle {
    axes: Vec<Interval>,
}

impl Rectangle {
    pub fn new(axes: Vec<Interval>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::input("rectangle needs at least one axis"));
        }
        Ok(Self { axes })
    }

    pub fn square(a: Interval, b: Interval) -> Self {
        Self { axes: vec![a, b] }
    }

    pub fn axes(&self) -> &[Interval] {
        &self.axes
    }
}

/// `Φ(a⁺,b⁺) + Φ(a⁻,b⁻) − Φ(a⁺,b⁻) − Φ(a⁻,b⁺)` for cells `a`, `b`.
pub fn double_difference<C: Covariance + ?Sized>(c: &C, a: Interval, b: Interval) -> f64 {
    c.cov(a.hi, b.hi) + c.cov(a.lo, b.lo) - c.cov(a.hi, b.lo) - c.cov(a.lo, b.hi)
}

/// Number of uniform cells of width `delta`; `delta` must divide 1.
pub fn cells_for_width(delta: f64) -> Result<usize> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::input(format!("cell width {delta} must lie in (0, 1]")));
    }
    let n = (1.0 / delta).round();
    if (n * delta - 1.0).abs() > 1e-9 {
        return Err(Error::input(format!("cell width {delta} does not divide 1")));
    }
    Ok(n as usize)
}

fn check_pairing_size(factors: usize) -> Result<()> {
    if factors == 0 || factors % 2 == 1 {
        return Err(Error::input(format!(
            "pairing formula needs an even positive number of factors, got {factors}"
        )));
    }
    if factors > MAX_PAIRING_FACTORS {
        return Err(Error::size(format!(
            "{factors} factors exceed the pairing cap of {MAX_PAIRING_FACTORS}"
        )));
    }
    Ok(())
}

/// `Σ_π Π_{(i,j)∈π} pair(i, j)` over all perfect matchings π of `0..n`.
///
/// `n` must be even; the `(n − 1)!!` matchings are enumerated explicitly.
pub fn sum_over_pairings<F: Fn(usize, usize) -> f64>(n: usize, pair: F) -> f64 {
    fn rec<F: Fn(usize, usize) -> f64>(rest: &mut Vec<usize>, pair: &F) -> f64 {
        if rest.is_empty() {
            return 1.0;
        }
        let first = rest.remove(0);
        let mut total = 0.0;
        for k in 0..rest.len() {
            let partner = rest.remove(k);
            let w = pair(first, partner);
            if w != 0.0 {
                total += w * rec(rest, pair);
            }
            rest.insert(k, partner);
        }
        rest.insert(0, first);
        total
    }
    debug_assert!(n.is_multiple_of(2));
    let mut rest: Vec<usize> = (0..n).collect();
    rec(&mut rest, &pair)
}

/// All perfect matchings of `0..n` (`n` even, at most [`MAX_PAIRING_FACTORS`]).
pub fn pairings(n: usize) -> Result<Vec<Vec<(usize, usize)>>> {
    fn rec(rest: &[usize], current: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        let Some((&first, tail)) = rest.split_first() else {
            out.push(current.clone());
            return;
        };
        for k in 0..tail.len() {
            let remaining: Vec<usize> = tail.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, &x)| x).collect();
            current.push((first, tail[k]));
            rec(&remaining, current, out);
            current.pop();
        }
    }
    check_pairing_size(n)?;
    let mut out = Vec::new();
    rec(&(0..n).collect::<Vec<_>>(), &mut Vec::new(), &mut out);
    Ok(out)
}

/// The matrix `m(A_i × A_j)` of double differences over a uniform grid.
#[derive(Clone, Debug)]
pub struct CellMeasure {
    n_cells: usize,
    values: Vec<f64>,
}

impl CellMeasure {
    pub fn new<C: Covariance + ?Sized>(c: &C, n_cells: usize) -> Self {
        let n = n_cells;
        let node = |i: usize| i as f64 / n as f64;
        // Φ on the (n+1)² node lattice, then differences.
        let rows = par::map_indexed(n + 1, |i| (0..=n).map(|j| c.cov(node(i), node(j))).collect::<Vec<_>>());
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                values[i * n + j] = rows[i + 1][j + 1] + rows[i][j] - rows[i + 1][j] - rows[i][j + 1];
            }
        }
        Self { n_cells, values }
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cells + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn abs_sum(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let n = self.n_cells;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_cells, self.n_cells, &self.values)
    }

    /// Smallest eigenvalue of the symmetrised matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        let m = self.to_matrix();
        let sym = (&m + m.transpose()) * 0.5;
        SymmetricEigen::new(sym).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }
}
