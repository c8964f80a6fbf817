//! d-variate kernels on `[0,1]^d`.
//!
//! [`GridKernel`] is a step function constant on the cells of a uniform
//! product grid; these are the integrands whose stochastic integrals are
//! finite sums. [`AnalyticKernel`] wraps a closed-form function and is
//! approximated by grid kernels through [`discretize`].

use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;

use crate::covariance::{pairings, CellMeasure, CovarianceModel, Fn1, HahnJordanDensities, Structure};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::stream_rng;

pub type KernelFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Largest dimension handled by analytic quadrature and projection.
pub const MAX_ANALYTIC_DIM: usize = 4;
/// Largest number of summands `n_cells^(2d)` in [`seminorm_sq`].
pub const SEMINORM_BUDGET: usize = 1 << 28;

/// Index of the grid cell containing `x`: cells are `(i/n, (i+1)/n]`, and
/// the first one also contains 0.
#[inline]
pub fn cell_index(x: f64, n_cells: usize) -> usize {
    if x <= 0.0 {
        return 0;
    }
    let i = (x * n_cells as f64).ceil() as usize;
    i.clamp(1, n_cells) - 1
}

#[inline]
fn midpoint(i: usize, n: usize) -> f64 {
    (i as f64 + 0.5) / n as f64
}

fn checked_pow(base: usize, exp: usize) -> Option<usize> {
    base.checked_pow(u32::try_from(exp).ok()?)
}

/// Decomposes a flat row-major index into `d` digits base `n`.
fn unflatten(mut flat: usize, n: usize, out: &mut [usize]) {
    for slot in out.iter_mut().rev() {
        *slot = flat % n;
        flat /= n;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridKernel {
    d: usize,
    n_cells: usize,
    coeffs: Vec<f64>,
}

impl GridKernel {
    pub fn new(d: usize, n_cells: usize, coeffs: Vec<f64>) -> Result<Self> {
        if d == 0 || n_cells == 0 {
            return Err(Error::input("grid kernel needs d ≥ 1 and at least one cell"));
        }
        let len = checked_pow(n_cells, d).ok_or_else(|| Error::size("grid kernel is too large"))?;
        if coeffs.len() != len {
            return Err(Error::input(format!("expected {len} coefficients, got {}", coeffs.len())));
        }
        if let Some(pos) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::numeric(format!("coefficient {pos} is not finite")));
        }
        Ok(Self { d, n_cells, coeffs })
    }

    pub fn zeros(d: usize, n_cells: usize) -> Result<Self> {
        let len = checked_pow(n_cells, d).ok_or_else(|| Error::size("grid kernel is too large"))?;
        Self::new(d, n_cells, vec![0.0; len])
    }

    /// Builds coefficients from a function of the cell multi-index.
    pub fn from_fn(d: usize, n_cells: usize, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let len = checked_pow(n_cells, d).ok_or_else(|| Error::size("grid kernel is too large"))?;
        let mut idx = vec![0; d];
        let coeffs = (0..len)
            .map(|flat| {
                unflatten(flat, n_cells, &mut idx);
                f(&idx)
            })
            .collect();
        Self::new(d, n_cells, coeffs)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.n_cells + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.coeffs[self.flat_index(idx)]
    }

    /// Value of the step function at a point of `[0,1]^d`.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let flat = x.iter().fold(0, |acc, &xi| acc * self.n_cells + cell_index(xi, self.n_cells));
        self.coeffs[flat]
    }

    fn check_same_grid(&self, other: &GridKernel) -> Result<()> {
        if self.d != other.d || self.n_cells != other.n_cells {
            return Err(Error::input(format!(
                "grid mismatch: ({}, {}) vs ({}, {})",
                self.d, self.n_cells, other.d, other.n_cells
            )));
        }
        Ok(())
    }

    /// Coefficient-wise `a·self + b·other` on a common grid.
    pub fn combine(&self, a: f64, other: &GridKernel, b: f64) -> Result<GridKernel> {
        self.check_same_grid(other)?;
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(x, y)| a * x + b * y).collect();
        GridKernel::new(self.d, self.n_cells, coeffs)
    }

    /// `Σ_J f_J Π_i v[j_i]` by contracting one axis at a time.
    pub fn contract(&self, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.n_cells);
        let n = self.n_cells;
        if self.d == 1 {
            return self.coeffs.iter().zip(v).map(|(c, x)| c * x).sum();
        }
        let mut buf: Vec<f64> = self.coeffs.chunks_exact(n).map(|row| row.iter().zip(v).map(|(c, x)| c * x).sum()).collect();
        while buf.len() > 1 {
            buf = buf.chunks_exact(n).map(|row| row.iter().zip(v).map(|(c, x)| c * x).sum()).collect();
        }
        buf[0]
    }

    /// Removes the cell average along every axis in turn, so each one-axis
    /// conditional mean of the step function vanishes.
    pub fn project_degenerate(&self) -> GridKernel {
        let n = self.n_cells;
        let mut coeffs = self.coeffs.clone();
        for axis in 0..self.d {
            let stride = n.pow((self.d - 1 - axis) as u32);
            let block = stride * n;
            for start in (0..coeffs.len()).step_by(block) {
                for offset in 0..stride {
                    let base = start + offset;
                    let mean = (0..n).map(|k| coeffs[base + k * stride]).sum::<f64>() / n as f64;
                    for k in 0..n {
                        coeffs[base + k * stride] -= mean;
                    }
                }
            }
        }
        GridKernel {
            d: self.d,
            n_cells: n,
            coeffs,
        }
    }

    /// True if the kernel vanishes on every cell with two equal indices.
    pub fn vanishes_on_diagonals(&self) -> bool {
        let mut idx = vec![0; self.d];
        (0..self.coeffs.len()).all(|flat| {
            unflatten(flat, self.n_cells, &mut idx);
            let repeated = (0..self.d).any(|a| (a + 1..self.d).any(|b| idx[a] == idx[b]));
            !repeated || self.coeffs[flat] == 0.0
        })
    }

    /// Average of the kernel over all permutations of its arguments.
    pub fn symmetrize(&self) -> GridKernel {
        let perms = permutations(self.d);
        let mut idx = vec![0; self.d];
        let mut permuted = vec![0; self.d];
        let coeffs = (0..self.coeffs.len())
            .map(|flat| {
                unflatten(flat, self.n_cells, &mut idx);
                let total: f64 = perms
                    .iter()
                    .map(|p| {
                        for (slot, &src) in permuted.iter_mut().zip(p) {
                            *slot = idx[src];
                        }
                        self.get(&permuted)
                    })
                    .sum();
                total / perms.len() as f64
            })
            .collect();
        GridKernel {
            d: self.d,
            n_cells: self.n_cells,
            coeffs,
        }
    }

    /// Text format: `d n_cells`, then one coefficient per line, row-major.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.d, self.n_cells);
        for c in &self.coeffs {
            let _ = writeln!(out, "{c:?}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let header_err = || Error::Parse {
            line: 1,
            msg: format!("expected `d n_cells`, found `{header}`"),
        };
        let [d, n] = fields[..] else { return Err(header_err()) };
        let d: usize = d.parse().map_err(|_| header_err())?;
        let n: usize = n.parse().map_err(|_| header_err())?;
        let coeffs = lines
            .map(|(i, l)| {
                l.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line: i + 1,
                    msg: format!("bad coefficient `{}`", l.trim()),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        Self::new(d, n, coeffs)
    }
}

fn permutations(d: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; d], &mut out);
    out
}

/// A closed-form kernel `f: [0,1]^d → ℝ`.
#[derive(Clone)]
pub struct AnalyticKernel {
    name: String,
    d: usize,
    f: KernelFn,
    symmetric: bool,
}

impl std::fmt::Debug for AnalyticKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnalyticKernel")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("symmetric", &self.symmetric)
            .finish()
    }
}

impl AnalyticKernel {
    /// Wraps `f`. With `symmetric` set, invariance under argument swaps is
    /// spot-checked on 64 pseudo-random points.
    pub fn new(name: &str, d: usize, f: KernelFn, symmetric: bool) -> Result<Self> {
        if d == 0 {
            return Err(Error::input("kernel dimension must be at least 1"));
        }
        let kernel = Self {
            name: name.to_string(),
            d,
            f,
            symmetric,
        };
        if symmetric {
            kernel.check_symmetry(64)?;
        }
        Ok(kernel)
    }

    fn check_symmetry(&self, points: usize) -> Result<()> {
        let mut rng = stream_rng(0x5eed, self.d as u64);
        let mut x = vec![0.0; self.d];
        for _ in 0..points {
            x.iter_mut().for_each(|v| *v = rng.random());
            let base = self.eval(&x);
            for a in 0..self.d.saturating_sub(1) {
                x.swap(a, a + 1);
                let swapped = self.eval(&x);
                x.swap(a, a + 1);
                if (swapped - base).abs() > 1e-9 * (1.0 + base.abs()) {
                    return Err(Error::input(format!("kernel `{}` is not symmetric at {x:?}", self.name)));
                }
            }
        }
        Ok(())
    }

    /// The Cramér–von Mises kernel `1/3 − max(s,t) + (s² + t²)/2`, the
    /// degenerate projection of `min(s,t)`; `∫ S_n(t)² dt` equals its
    /// V-statistic.
    pub fn cramer_von_mises() -> Self {
        Self::preset("cvm", 2, Arc::new(|x: &[f64]| 1.0 / 3.0 - x[0].max(x[1]) + 0.5 * (x[0] * x[0] + x[1] * x[1])))
    }

    /// Rank-one degenerate kernel `(s − ½)(t − ½)`.
    pub fn rank_one() -> Self {
        Self::preset("rank1", 2, Arc::new(|x: &[f64]| (x[0] - 0.5) * (x[1] - 0.5)))
    }

    /// `min(s,t)`, not degenerate.
    pub fn min_kernel() -> Self {
        Self::preset("min", 2, Arc::new(|x: &[f64]| x[0].min(x[1])))
    }

    /// Brownian-bridge covariance `min(s,t) − st`, not degenerate.
    pub fn bridge_kernel() -> Self {
        Self::preset("bridge", 2, Arc::new(|x: &[f64]| x[0].min(x[1]) - x[0] * x[1]))
    }

    /// `s·t`, not degenerate.
    pub fn product() -> Self {
        Self::preset("product", 2, Arc::new(|x: &[f64]| x[0] * x[1]))
    }

    pub fn constant(d: usize, c: f64) -> Self {
        Self::preset(&format!("const({c})"), d, Arc::new(move |_: &[f64]| c))
    }

    pub fn zero(d: usize) -> Self {
        let mut k = Self::constant(d, 0.0);
        k.name = "zero".into();
        k
    }

    fn preset(name: &str, d: usize, f: KernelFn) -> Self {
        Self {
            name: name.to_string(),
            d,
            f,
            symmetric: true,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

/// Borrowed view of either kernel representation.
#[derive(Clone, Copy, Debug)]
pub enum KernelRef<'a> {
    Analytic(&'a AnalyticKernel),
    Grid(&'a GridKernel),
}

impl<'a> From<&'a AnalyticKernel> for KernelRef<'a> {
    fn from(k: &'a AnalyticKernel) -> Self {
        KernelRef::Analytic(k)
    }
}

impl<'a> From<&'a GridKernel> for KernelRef<'a> {
    fn from(k: &'a GridKernel) -> Self {
        KernelRef::Grid(k)
    }
}

impl KernelRef<'_> {
    pub fn dim(&self) -> usize {
        match self {
            KernelRef::Analytic(k) => k.dim(),
            KernelRef::Grid(k) => k.dim(),
        }
    }
}

/// A set partition of the coordinates `{0, …, d−1}`; blocks of size two or
/// more identify coordinates. The all-singletons partition is the main
/// subspace of pairwise different coordinates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiagonalPartition {
    blocks: Vec<Vec<usize>>,
    block_of: Vec<usize>,
}

impl DiagonalPartition {
    fn from_growth_string(rgs: &[usize]) -> Self {
        let r = rgs.iter().max().map_or(0, |m| m + 1);
        let mut blocks = vec![Vec::new(); r];
        for (i, &b) in rgs.iter().enumerate() {
            blocks[b].push(i);
        }
        Self {
            blocks,
            block_of: rgs.to_vec(),
        }
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    /// Dimension `r` of the subspace.
    pub fn dimension(&self) -> usize {
        self.blocks.len()
    }

    /// Block index of each coordinate.
    pub fn block_of(&self) -> &[usize] {
        &self.block_of
    }

    pub fn is_main(&self) -> bool {
        self.blocks.iter().all(|b| b.len() == 1)
    }
}

/// All set partitions of `{0, …, d−1}` in lexicographic order of their
/// restricted growth strings (Bell(d) of them).
pub fn enumerate_diagonal_partitions(d: usize) -> Result<Vec<DiagonalPartition>> {
    if !(1..=6).contains(&d) {
        return Err(Error::size(format!("diagonal partitions enumerated for 1 ≤ d ≤ 6, got {d}")));
    }
    fn rec(rgs: &mut Vec<usize>, d: usize, out: &mut Vec<DiagonalPartition>) {
        if rgs.len() == d {
            out.push(DiagonalPartition::from_growth_string(rgs));
            return;
        }
        let next = rgs.iter().max().map_or(0, |m| m + 1);
        for b in 0..=next {
            rgs.push(b);
            rec(rgs, d, out);
            rgs.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(d), d, &mut out);
    Ok(out)
}

/// `Σ_partitions ∫ f²` over each diagonal (and the main) subspace, with the
/// identified coordinates sharing one integration variable.
///
/// Grid kernels are summed exactly cell by cell; analytic kernels use the
/// midpoint rule with `quad_cells` nodes per axis.
pub fn combined_norm_sq<'a>(kernel: impl Into<KernelRef<'a>>, quad_cells: usize) -> Result<f64> {
    let kernel = kernel.into();
    let d = kernel.dim();
    let partitions = enumerate_diagonal_partitions(d)?;
    let mut total = 0.0;
    for part in &partitions {
        total += subspace_integral_sq(kernel, part, quad_cells)?;
    }
    if !total.is_finite() {
        return Err(Error::numeric("combined norm is not finite"));
    }
    Ok(total)
}

/// `∫ f²` over the subspace of one partition.
pub fn subspace_integral_sq(kernel: KernelRef<'_>, part: &DiagonalPartition, quad_cells: usize) -> Result<f64> {
    let r = part.dimension();
    let block_of = part.block_of();
    let (n, value): (usize, Box<dyn Fn(&[usize]) -> f64 + Sync + Send>) = match kernel {
        KernelRef::Grid(g) => {
            let n = g.n_cells();
            (n, Box::new(move |u: &[usize]| {
                let flat = block_of.iter().fold(0, |acc, &b| acc * n + u[b]);
                g.coeffs()[flat]
            }))
        }
        KernelRef::Analytic(k) => {
            if k.dim() > MAX_ANALYTIC_DIM {
                return Err(Error::size(format!("analytic quadrature supports d ≤ {MAX_ANALYTIC_DIM}")));
            }
            if quad_cells == 0 {
                return Err(Error::input("quadrature needs at least one node"));
            }
            let q = quad_cells;
            (q, Box::new(move |u: &[usize]| {
                let x: Vec<f64> = block_of.iter().map(|&b| midpoint(u[b], q)).collect();
                k.eval(&x)
            }))
        }
    };
    let inner = checked_pow(n, r - 1).ok_or_else(|| Error::size("quadrature grid too large"))?;
    if inner.saturating_mul(n) > 1 << 32 {
        return Err(Error::size("quadrature grid too large"));
    }
    let sum = par::chunked_sum(n, |first| {
        let mut u = vec![0; r];
        u[0] = first;
        let mut acc = 0.0;
        for rest in 0..inner {
            unflatten(rest, n, &mut u[1..]);
            let v = value(&u);
            acc += v * v;
        }
        acc
    });
    Ok(sum / (n as f64).powi(r as i32))
}

/// `‖f‖²` of the integral construction: `Σ_{J,K} f_J f_K m(A_J × A_K)` with
/// the product-noise measure given by the pairing formula.
pub fn seminorm_sq(kernel: &GridKernel, model: &CovarianceModel) -> Result<f64> {
    seminorm_sq_cells(kernel, &CellMeasure::new(model, kernel.n_cells()))
}

/// [`seminorm_sq`] against a precomputed cell measure.
pub fn seminorm_sq_cells(kernel: &GridKernel, cells: &CellMeasure) -> Result<f64> {
    if cells.n_cells() != kernel.n_cells() {
        return Err(Error::input("cell measure and kernel use different grids"));
    }
    let d = kernel.dim();
    let matchings = pairings(2 * d)?;
    let n = kernel.n_cells();
    let len = kernel.coeffs().len();
    if len.checked_mul(len).is_none_or(|t| t > SEMINORM_BUDGET) {
        return Err(Error::size(format!("{n}^{} summands exceed the seminorm budget", 2 * d)));
    }
    let coeffs = kernel.coeffs();
    Ok(par::chunked_sum(len, |fj| {
        let cj = coeffs[fj];
        if cj == 0.0 {
            return 0.0;
        }
        let mut idx = vec![0; 2 * d];
        unflatten(fj, n, &mut idx[..d]);
        let mut acc = 0.0;
        for (fk, &ck) in coeffs.iter().enumerate() {
            if ck == 0.0 {
                continue;
            }
            unflatten(fk, n, &mut idx[d..]);
            let m: f64 = matchings
                .iter()
                .map(|pi| pi.iter().map(|&(a, b)| cells.get(idx[a], idx[b])).product::<f64>())
                .sum();
            acc += ck * m;
        }
        cj * acc
    }))
}

/// Classical Wiener–Itô second moment `d! ‖sym f‖²_{L₂}` of a grid kernel.
pub fn wiener_ito_norm_sq(kernel: &GridKernel) -> f64 {
    let d = kernel.dim();
    let sym = kernel.symmetrize();
    let factorial: f64 = (1..=d).map(|k| k as f64).product();
    let cell = (kernel.n_cells() as f64).powi(-(d as i32));
    factorial * sym.coeffs().iter().map(|c| c * c).sum::<f64>() * cell
}

/// Constant `C` with `‖f‖² ≤ C ‖f‖₀²` for every grid kernel of dimension `d`
/// against the given cell measure: `(2d−1)!! (α + β)^d`, where
/// `|m(A_i × A_j)| ≤ α δ 1{i=j} + β δ²`.
pub fn norm_domination_constant(cells: &CellMeasure, d: usize) -> f64 {
    let n = cells.n_cells();
    let delta = 1.0 / n as f64;
    let mut alpha: f64 = 0.0;
    let mut beta: f64 = 0.0;
    for i in 0..n {
        alpha = alpha.max(cells.get(i, i).abs() / delta);
        for j in 0..n {
            if i != j {
                beta = beta.max(cells.get(i, j).abs() / (delta * delta));
            }
        }
    }
    let double_factorial: f64 = (1..=d).map(|k| (2 * k - 1) as f64).product();
    double_factorial * (alpha + beta).powi(d as i32)
}

/// Default quadrature nodes per axis used by [`project_degenerate`].
pub fn default_projection_nodes(d: usize) -> usize {
    match d {
        1 | 2 => 1024,
        3 => 96,
        _ => 24,
    }
}

/// Degenerate projection `Π_k (I − E_k) raw`, where `E_k` integrates
/// argument `k` against the uniform law.
pub fn project_degenerate(raw: &AnalyticKernel) -> Result<AnalyticKernel> {
    project_degenerate_with(raw, default_projection_nodes(raw.dim()))
}

/// [`project_degenerate`] with `nodes` midpoint nodes per integrated axis.
pub fn project_degenerate_with(raw: &AnalyticKernel, nodes: usize) -> Result<AnalyticKernel> {
    let d = raw.dim();
    if d > MAX_ANALYTIC_DIM {
        return Err(Error::size(format!("projection supports d ≤ {MAX_ANALYTIC_DIM}, got {d}")));
    }
    if nodes == 0 {
        return Err(Error::input("projection needs at least one node"));
    }
    let full = (1usize << d) - 1;
    let base = raw.clone();
    // E over all arguments is a constant; compute it once.
    let grand_mean = integrate_subset(&base, full, &vec![0.0; d], nodes);
    let f: KernelFn = Arc::new(move |x: &[f64]| {
        let mut total = 0.0;
        for mask in 0..=full {
            let sign = if mask.count_ones() % 2 == 0 { 1.0 } else { -1.0 };
            let term = if mask == 0 {
                base.eval(x)
            } else if mask == full {
                grand_mean
            } else {
                integrate_subset(&base, mask, x, nodes)
            };
            total += sign * term;
        }
        total
    });
    Ok(AnalyticKernel {
        name: format!("proj({})", raw.name()),
        d,
        f,
        symmetric: raw.is_symmetric(),
    })
}

/// Midpoint integral of `k` over the arguments in `mask`, others fixed at `x`.
fn integrate_subset(k: &AnalyticKernel, mask: usize, x: &[f64], nodes: usize) -> f64 {
    let axes: Vec<usize> = (0..k.dim()).filter(|a| mask & (1 << a) != 0).collect();
    let total = nodes.pow(axes.len() as u32);
    let mut point = x.to_vec();
    let mut digits = vec![0; axes.len()];
    let mut acc = 0.0;
    for flat in 0..total {
        unflatten(flat, nodes, &mut digits);
        for (&a, &i) in axes.iter().zip(&digits) {
            point[a] = midpoint(i, nodes);
        }
        acc += k.eval(&point);
    }
    acc / total as f64
}

/// `max |∫ f(t_1, …, x, …, t_d) dx|` over all argument slots and the
/// `grid_points^(d−1)` midpoint grid of the remaining arguments.
pub fn degeneracy_defect(kernel: &AnalyticKernel, grid_points: usize, nodes: usize) -> f64 {
    let d = kernel.dim();
    let others = grid_points.pow(d as u32 - 1);
    let mut worst: f64 = 0.0;
    let mut digits = vec![0; d - 1];
    for slot in 0..d {
        for flat in 0..others {
            unflatten(flat, grid_points, &mut digits);
            let mut x = vec![0.0; d];
            let mut it = digits.iter();
            for (a, xa) in x.iter_mut().enumerate() {
                if a != slot {
                    *xa = midpoint(*it.next().unwrap(), grid_points);
                }
            }
            worst = worst.max(integrate_subset(kernel, 1 << slot, &x, nodes).abs());
        }
    }
    worst
}

/// Grid kernel with coefficients equal to `kernel` at the cell midpoints.
pub fn discretize(kernel: &AnalyticKernel, n_cells: usize) -> Result<GridKernel> {
    if n_cells < 2 {
        return Err(Error::input("discretisation needs at least 2 cells"));
    }
    let d = kernel.dim();
    let inner = checked_pow(n_cells, d - 1).ok_or_else(|| Error::size("grid kernel is too large"))?;
    let rows = par::map_indexed(n_cells, |first| {
        let mut idx = vec![0; d];
        let mut x = vec![0.0; d];
        idx[0] = first;
        (0..inner)
            .map(|rest| {
                unflatten(rest, n_cells, &mut idx[1..]);
                for (xi, &i) in x.iter_mut().zip(&idx) {
                    *xi = midpoint(i, n_cells);
                }
                kernel.eval(&x)
            })
            .collect::<Vec<f64>>()
    });
    GridKernel::new(d, n_cells, rows.concat())
}

/// Refines a grid kernel by an integer factor without changing the step
/// function it represents.
pub fn refine(kernel: &GridKernel, factor: usize) -> Result<GridKernel> {
    if factor == 0 {
        return Err(Error::input("refinement factor must be positive"));
    }
    let n = kernel.n_cells();
    GridKernel::from_fn(kernel.dim(), n * factor, |idx| {
        let coarse: Vec<usize> = idx.iter().map(|i| i / factor).collect();
        kernel.get(&coarse)
    })
}

/// `∫∫ |f(t) f(s) q(t,s)| dt ds` for a regular covariance model, by the
/// midpoint rule with `nodes` points per axis (diagonal cells included).
pub fn regular_star_integral(model: &CovarianceModel, f: &Fn1, nodes: usize) -> Result<f64> {
    let Structure::Regular { q } = model.structure() else {
        return Err(Error::UnsupportedVariant(model.variant().name()));
    };
    let h = 1.0 / nodes as f64;
    let fv: Vec<f64> = (0..nodes).map(|i| f(midpoint(i, nodes))).collect();
    let sum = par::chunked_sum(nodes, |i| {
        let t = midpoint(i, nodes);
        (0..nodes)
            .filter(|&j| j != i)
            .map(|j| (fv[i] * fv[j] * q(t, midpoint(j, nodes))).abs())
            .sum::<f64>()
    });
    let total = sum * h * h;
    if !total.is_finite() {
        return Err(Error::numeric("star integral diverged"));
    }
    Ok(total)
}

/// Integrals of the MSI admissibility condition for `n = 0, …, d` paired
/// coordinates, for the argument permutation `perm` of `φ_f(x) =
/// f(x_1..x_d) f(x_{d+1}..x_{2d})`. Uses `nodes` midpoint nodes per axis.
pub fn msi_condition_integrals(
    kernel: &AnalyticKernel,
    densities: &HahnJordanDensities,
    perm: &[usize],
    nodes: usize,
) -> Result<Vec<f64>> {
    let d = kernel.dim();
    if d > 3 {
        return Err(Error::size("admissibility integrals are evaluated for d ≤ 3"));
    }
    let two_d = 2 * d;
    if perm.len() != two_d || {
        let mut s = perm.to_vec();
        s.sort_unstable();
        s != (0..two_d).collect::<Vec<_>>()
    } {
        return Err(Error::input("permutation must rearrange all 2d arguments"));
    }
    let mut out = Vec::with_capacity(d + 1);
    for paired in 0..=d {
        let free = two_d - 2 * paired;
        let dim = paired + free;
        let matchings = if free > 0 { pairings(free)? } else { vec![vec![]] };
        let total = checked_pow(nodes, dim).ok_or_else(|| Error::size("quadrature grid too large"))?;
        let value = par::chunked_sum(total, |flat| {
            let mut digits = vec![0; dim];
            unflatten(flat, nodes, &mut digits);
            let u: Vec<f64> = digits.iter().map(|&i| midpoint(i, nodes)).collect();
            // argument vector (s1, s1, …, sn, sn, t1, …) before permutation
            let mut args = Vec::with_capacity(two_d);
            for &s in &u[..paired] {
                args.push(s);
                args.push(s);
            }
            args.extend_from_slice(&u[paired..]);
            let x: Vec<f64> = perm.iter().map(|&p| args[p]).collect();
            let phi = (kernel.eval(&x[..d]) * kernel.eval(&x[d..])).abs();
            let g1: f64 = u[..paired].iter().map(|&s| (densities.g1)(s)).product();
            let t = &u[paired..];
            let g2: f64 = matchings
                .iter()
                .map(|pi| pi.iter().map(|&(a, b)| (densities.g2)(t[a], t[b]).abs()).product::<f64>())
                .sum();
            phi * g1 * g2
        });
        let integral = value / total as f64;
        if !integral.is_finite() {
            return Err(Error::numeric(format!("admissibility integral {paired} is not finite")));
        }
        out.push(integral);
    }
    Ok(out)
}

/// The permutations of the `2d` arguments checked for [`msi_condition_integrals`]:
/// all of them for `d ≤ 2`, and identity, reversal and interleaving for `d = 3`.
pub fn checked_argument_permutations(d: usize) -> Vec<Vec<usize>> {
    let n = 2 * d;
    if d <= 2 {
        return permutations(n);
    }
    let identity: Vec<usize> = (0..n).collect();
    let reversed: Vec<usize> = (0..n).rev().collect();
    let interleaved: Vec<usize> = (0..d).flat_map(|i| [i, i + d]).collect();
    vec![identity, reversed, interleaved]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixing::MarkovUniformGenerator;
    use proptest::{prop_assert, proptest};

    #[test]
    fn partition_counts() {
        let counts: Vec<usize> = (1..=6).map(|d| enumerate_diagonal_partitions(d).unwrap().len()).collect();
        assert_eq!(counts, vec![1, 2, 5, 15, 52, 203]);
        let two = enumerate_diagonal_partitions(2).unwrap();
        assert_eq!(two[0].blocks(), &[vec![0, 1]]);
        assert_eq!(two[1].blocks(), &[vec![0], vec![1]]);
        assert!(two[1].is_main());
        assert!(enumerate_diagonal_partitions(0).is_err());
        assert!(matches!(enumerate_diagonal_partitions(7), Err(Error::Size(_))));
    }

    #[test]
    fn partitions_match_brute_force_bell_numbers() {
        // oracle: count set partitions via the Bell triangle
        let mut row = vec![1u64];
        let mut bell = vec![1u64];
        for _ in 0..6 {
            let mut next = vec![*row.last().unwrap()];
            for &x in &row {
                next.push(next.last().unwrap() + x);
            }
            bell.push(next[0]);
            row = next;
        }
        for d in 1..=6 {
            let parts = enumerate_diagonal_partitions(d).unwrap();
            assert_eq!(parts.len() as u64, bell[d]);
            for p in &parts {
                let mut seen: Vec<usize> = p.blocks().concat();
                seen.sort_unstable();
                assert_eq!(seen, (0..d).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn combined_norm_examples() {
        let f = AnalyticKernel::rank_one();
        let v = combined_norm_sq(&f, 256).unwrap();
        assert!((v - (1.0 / 144.0 + 1.0 / 80.0)).abs() < 1e-5, "{v}");
        assert_eq!(combined_norm_sq(&AnalyticKernel::zero(2), 16).unwrap(), 0.0);
        let cvm = AnalyticKernel::cramer_von_mises();
        let a = combined_norm_sq(&cvm, 128).unwrap();
        let b = combined_norm_sq(&cvm, 256).unwrap();
        assert!(((a - b) / b).abs() < 0.01);
    }

    #[test]
    fn combined_norm_of_grid_matches_cell_sum() {
        let g = GridKernel::from_fn(2, 3, |i| (i[0] * 3 + i[1]) as f64).unwrap();
        // main: Σ c² / 9, diagonal: (0² + 4² + 8²)/3
        let main: f64 = (0..9).map(|c| (c * c) as f64).sum::<f64>() / 9.0;
        let diag = (0.0 + 16.0 + 64.0) / 3.0;
        assert!((combined_norm_sq(&g, 0).unwrap() - (main + diag)).abs() < 1e-12);
    }

    #[test]
    fn seminorm_examples() {
        let one = GridKernel::from_fn(1, 64, |_| 1.0).unwrap();
        assert_eq!(seminorm_sq(&one, &CovarianceModel::wiener()).unwrap(), 1.0);
        assert!(seminorm_sq(&one, &CovarianceModel::brownian_bridge()).unwrap().abs() <= 1e-10);
        let half = GridKernel::from_fn(1, 64, |i| if i[0] < 32 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(seminorm_sq(&half, &CovarianceModel::wiener()).unwrap(), 0.5);
        let big = GridKernel::zeros(5, 4).unwrap();
        assert!(matches!(seminorm_sq(&big, &CovarianceModel::wiener()), Err(Error::Size(_))));
    }

    #[test]
    fn wiener_isometry_for_off_diagonal_kernels() {
        let mut rng = stream_rng(3, 0);
        for d in 1..=3 {
            let n = [16, 10, 5][d - 1];
            let g = GridKernel::from_fn(d, n, |idx| {
                let repeated = (0..d).any(|a| (a + 1..d).any(|b| idx[a] == idx[b]));
                if repeated { 0.0 } else { rng.random::<f64>() - 0.5 }
            })
            .unwrap();
            assert!(g.vanishes_on_diagonals());
            let s = seminorm_sq(&g, &CovarianceModel::wiener()).unwrap();
            let w = wiener_ito_norm_sq(&g);
            assert!(((s - w) / w).abs() < 1e-10, "d={d}: {s} vs {w}");
        }
    }

    #[test]
    fn norm_dominates_seminorm() {
        let gen = MarkovUniformGenerator::two_state(0.7, 1).unwrap();
        let mixed = CovarianceModel::mixed_from_generator(&gen, 40);
        let mut rng = stream_rng(11, 0);
        for model in [mixed, CovarianceModel::brownian_bridge(), CovarianceModel::wiener()] {
            for d in 1..=2 {
                let n = if d == 1 { 32 } else { 12 };
                let cells = CellMeasure::new(&model, n);
                let c = norm_domination_constant(&cells, d);
                for _ in 0..5 {
                    let g = GridKernel::from_fn(d, n, |_| rng.random::<f64>() * 2.0 - 1.0).unwrap();
                    let s = seminorm_sq_cells(&g, &cells).unwrap();
                    let norm = combined_norm_sq(&g, 0).unwrap();
                    assert!(s <= c * norm + 1e-12, "{}: {s} > {c}·{norm}", model.name());
                }
                // the sign pattern of the chain's states is the worst case for d = 1
                let sign = GridKernel::from_fn(d, n, |i| i.iter().map(|&j| if j < n / 2 { 1.0 } else { -1.0 }).product()).unwrap();
                let s = seminorm_sq_cells(&sign, &cells).unwrap();
                assert!(s <= c * combined_norm_sq(&sign, 0).unwrap() + 1e-12);
            }
        }
    }

    #[test]
    fn projection_examples() {
        let p = project_degenerate(&AnalyticKernel::product()).unwrap();
        for (s, t) in [(0.1, 0.9), (0.33, 0.5), (0.77, 0.2)] {
            assert!((p.eval(&[s, t]) - (s - 0.5) * (t - 0.5)).abs() < 1e-6);
        }
        let r = AnalyticKernel::rank_one();
        let pr = project_degenerate(&r).unwrap();
        for (s, t) in [(0.1, 0.9), (0.6, 0.6)] {
            assert!((pr.eval(&[s, t]) - r.eval(&[s, t])).abs() < 1e-6);
        }
        let pb = project_degenerate(&AnalyticKernel::bridge_kernel()).unwrap();
        for (s, t) in [(0.1f64, 0.9f64), (0.45, 0.3), (0.8, 0.8)] {
            let expected = s.min(t) - s * t - s * (1.0 - s) / 2.0 - t * (1.0 - t) / 2.0 + 1.0 / 12.0;
            assert!((pb.eval(&[s, t]) - expected).abs() < 1e-6);
        }
        let big = AnalyticKernel::constant(5, 1.0);
        assert!(matches!(project_degenerate(&big), Err(Error::Size(_))));
    }

    #[test]
    fn cvm_preset_is_projection_of_min() {
        let p = project_degenerate(&AnalyticKernel::min_kernel()).unwrap();
        let cvm = AnalyticKernel::cramer_von_mises();
        for i in 0..9 {
            for j in 0..9 {
                let x = [0.05 + 0.11 * i as f64, 0.03 + 0.115 * j as f64];
                assert!((p.eval(&x) - cvm.eval(&x)).abs() < 1e-6);
            }
        }
        assert!(degeneracy_defect(&cvm, 16, 1024) <= 1e-6);
        assert!(degeneracy_defect(&p, 8, 1024) <= 1e-6);
    }

    #[test]
    fn projection_in_three_dimensions_is_degenerate() {
        let raw = AnalyticKernel::new("xyz", 3, Arc::new(|x: &[f64]| x[0] * x[1] + x[2] * x[2] * x[0]), false).unwrap();
        let p = project_degenerate(&raw).unwrap();
        assert!(degeneracy_defect(&p, 3, 96) < 1e-5);
    }

    #[test]
    fn grid_projection_centres_every_axis() {
        let mut rng = stream_rng(2, 0);
        let g = GridKernel::from_fn(3, 5, |_| rng.random::<f64>()).unwrap().project_degenerate();
        for fixed in 0..25 {
            for axis in 0..3 {
                let mean: f64 = (0..5)
                    .map(|k| {
                        let mut idx = [fixed / 5, fixed % 5, 0];
                        idx.copy_within(axis..2, axis + 1);
                        idx[axis] = k;
                        g.get(&idx)
                    })
                    .sum();
                assert!(mean.abs() < 1e-12);
            }
        }
        let r = discretize(&AnalyticKernel::rank_one(), 8).unwrap();
        let pr = r.project_degenerate();
        assert!(r.coeffs().iter().zip(pr.coeffs()).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn discretize_examples() {
        let c = discretize(&AnalyticKernel::constant(2, 2.5), 4).unwrap();
        assert!(c.coeffs().iter().all(|&x| x == 2.5));
        let r = discretize(&AnalyticKernel::rank_one(), 2).unwrap();
        assert_eq!(r.coeffs(), &[1.0 / 16.0, -1.0 / 16.0, -1.0 / 16.0, 1.0 / 16.0]);
        assert!(discretize(&AnalyticKernel::rank_one(), 1).is_err());
    }

    #[test]
    fn discretisations_are_cauchy_in_combined_norm() {
        let cvm = AnalyticKernel::cramer_von_mises();
        let dist = |a: usize, b: usize| {
            let ga = refine(&discretize(&cvm, a).unwrap(), b / a).unwrap();
            let gb = discretize(&cvm, b).unwrap();
            combined_norm_sq(&ga.combine(1.0, &gb, -1.0).unwrap(), 0).unwrap().sqrt()
        };
        let coarse = dist(16, 32);
        let fine = dist(32, 64);
        assert!(fine < coarse, "{fine} !< {coarse}");
    }

    #[test]
    fn symmetry_spot_check() {
        let asym = AnalyticKernel::new("asym", 2, Arc::new(|x: &[f64]| x[0] - 2.0 * x[1]), true);
        assert!(asym.is_err());
        assert!(AnalyticKernel::new("asym", 2, Arc::new(|x: &[f64]| x[0] - 2.0 * x[1]), false).is_ok());
    }

    #[test]
    fn grid_text_round_trip() {
        let g = discretize(&AnalyticKernel::cramer_von_mises(), 8).unwrap();
        let back = GridKernel::from_text(&g.to_text()).unwrap();
        assert_eq!(back, g);
        let err = GridKernel::from_text("2 2\n1\n2\nx\n4\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 4, .. }));
        assert!(GridKernel::from_text("2 2\n1\n2\n3\n").is_err());
    }

    #[test]
    fn cell_index_convention() {
        assert_eq!(cell_index(0.0, 4), 0);
        assert_eq!(cell_index(0.25, 4), 0);
        assert_eq!(cell_index(0.2500001, 4), 1);
        assert_eq!(cell_index(1.0, 4), 3);
    }

    #[test]
    fn contraction_matches_brute_force() {
        let g = GridKernel::from_fn(3, 4, |i| (i[0] as f64) - 2.0 * i[1] as f64 + 0.5 * (i[2] * i[0]) as f64).unwrap();
        let v = [0.3, -1.0, 2.0, 0.7];
        let mut brute = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    brute += g.get(&[a, b, c]) * v[a] * v[b] * v[c];
                }
            }
        }
        assert!((g.contract(&v) - brute).abs() < 1e-12);
    }

    #[test]
    fn fbm_embedding_spot_check() {
        // ∫∫ (ts)^{-1/2} q(t,s) dt ds with q = 3/8 |t−s|^{-1/2} equals 3π/2.
        let fbm = CovarianceModel::fbm(0.75).unwrap();
        let f: Fn1 = Arc::new(|t: f64| t.powf(-0.5));
        let values: Vec<f64> = [250, 500, 1000, 2000]
            .iter()
            .map(|&n| regular_star_integral(&fbm, &f, n).unwrap())
            .collect();
        let target = 1.5 * std::f64::consts::PI;
        for w in values.windows(2) {
            assert!(w[1] > w[0] && w[1] < target);
        }
        let steps: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(steps[2] < steps[1] && steps[1] < steps[0]);
        assert!((target - values[3]) / target < 0.1);
    }

    #[test]
    fn msi_condition_is_finite_for_presets() {
        let bb = CovarianceModel::brownian_bridge().hahn_jordan_densities().unwrap();
        let cvm = AnalyticKernel::cramer_von_mises();
        for perm in checked_argument_permutations(2) {
            let vals = msi_condition_integrals(&cvm, &bb, &perm, 12).unwrap();
            assert_eq!(vals.len(), 3);
            assert!(vals.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
        assert_eq!(checked_argument_permutations(2).len(), 24);
        let k3 = AnalyticKernel::constant(3, 1.0);
        let w = CovarianceModel::wiener().hahn_jordan_densities().unwrap();
        for perm in checked_argument_permutations(3) {
            let vals = msi_condition_integrals(&k3, &w, &perm, 4).unwrap();
            // Wiener: g2 ≡ 0, so only the fully paired term survives
            assert_eq!(vals[3], 1.0);
            assert!(vals[..3].iter().all(|&v| v == 0.0));
        }
    }

    proptest! {
        #[test]
        fn seminorm_triangle_inequality(
            a in proptest::collection::vec(-1.0f64..1.0, 64),
            b in proptest::collection::vec(-1.0f64..1.0, 64),
        ) {
            let gen = MarkovUniformGenerator::two_state(0.7, 1).unwrap();
            let models = [
                CovarianceModel::brownian_bridge(),
                CovarianceModel::stationary_ou(1.0).unwrap(),
                CovarianceModel::mixed_from_generator(&gen, 30),
            ];
            for (d, n) in [(1usize, 64usize), (2, 8)] {
                let f = GridKernel::new(d, n, a[..n.pow(d as u32)].to_vec()).unwrap();
                let g = GridKernel::new(d, n, b[..n.pow(d as u32)].to_vec()).unwrap();
                let sum = f.combine(1.0, &g, 1.0).unwrap();
                for m in &models {
                    let cells = CellMeasure::new(m, n);
                    let norm = |k: &GridKernel| seminorm_sq_cells(k, &cells).unwrap().max(0.0).sqrt();
                    prop_assert!(seminorm_sq_cells(&f, &cells).unwrap() >= -1e-8);
                    prop_assert!(norm(&sum) <= norm(&f) + norm(&g) + 1e-9);
                }
            }
        }
    }
}
