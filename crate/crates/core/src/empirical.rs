//! Empirical processes and von Mises / Hoeffding statistics of a sample.
//!
//! For a degenerate kernel `f` the V-statistic
//! `V_n = n^{-d/2} Σ f(X_{i_1}, …, X_{i_d})` equals `∫ f dS_n ⋯ dS_n`, where
//! `S_n(t) = √n (F*_n(t) − t)`. For a grid kernel that integral is the
//! finite sum `Σ_J c_J Π ΔS_n(A_{j_i})`, which costs `O(n + N^d)` instead
//! of `O(n^d)`.

use std::io::{BufRead, Write};

use crate::covariance::Interval;
use crate::error::{Error, Result};
use crate::kernels::{cell_index, AnalyticKernel, GridKernel, KernelRef};
use crate::mixing::MarkovUniformGenerator;
use crate::par;

/// Largest number of kernel evaluations the direct methods may perform.
pub const NAIVE_BUDGET: u128 = 100_000_000;

/// A sample in `[0,1]`, kept both as drawn and sorted.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalPath {
    original: Vec<f64>,
    sorted: Vec<f64>,
}

impl EmpiricalPath {
    pub fn new(xs: Vec<f64>) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::input("empty sample"));
        }
        if let Some(x) = xs.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::input(format!("sample value {x} is outside [0,1]")));
        }
        let mut sorted = xs.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { original: xs, sorted })
    }

    pub fn n(&self) -> usize {
        self.original.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.original
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    /// `#{i : x_i ≤ t}`.
    fn count_le(&self, t: f64) -> usize {
        self.sorted.partition_point(|&x| x <= t)
    }

    /// Increments of `S_n` over the `n_cells` uniform cells.
    pub fn cell_increments(&self, n_cells: usize) -> Vec<f64> {
        let mut counts = vec![0usize; n_cells];
        for &x in &self.original {
            counts[cell_index(x, n_cells)] += 1;
        }
        let n = self.n() as f64;
        let expected = n / n_cells as f64;
        let scale = n.sqrt().recip();
        counts.iter().map(|&c| (c as f64 - expected) * scale).collect()
    }
}

/// `S_n(t) = √n (#{x_i ≤ t}/n − t)`.
pub fn empirical_process(path: &EmpiricalPath, t: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::input(format!("t = {t} is outside [0,1]")));
    }
    if t == 1.0 {
        return Ok(0.0);
    }
    let n = path.n() as f64;
    Ok(n.sqrt() * (path.count_le(t) as f64 / n - t))
}

/// `S_n` increment over a cell, with the cell starting at 0 closed there.
pub fn increment(path: &EmpiricalPath, cell: Interval) -> f64 {
    let below = if cell.lo == 0.0 { 0 } else { path.count_le(cell.lo) };
    let inside = path.count_le(cell.hi) - below;
    let n = path.n() as f64;
    n.sqrt() * (inside as f64 / n - cell.len())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VMethod {
    /// Direct `n^d`-term sum.
    Naive,
    /// Grid-cell representation through `S_n` increments.
    Grid,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VStatResult {
    pub value: f64,
    pub n: usize,
    pub d: usize,
    pub method: VMethod,
}

fn check_budget(n: usize, d: usize) -> Result<()> {
    let evals = (n as u128).checked_pow(d as u32).unwrap_or(u128::MAX);
    if evals > NAIVE_BUDGET {
        return Err(Error::size(format!("{n}^{d} kernel evaluations exceed the budget of {NAIVE_BUDGET}")));
    }
    Ok(())
}

/// Normalised V-statistic of `kernel` over `path`.
///
/// The grid method needs a grid kernel; discretise analytic kernels first
/// (see [`crate::kernels::discretize`]). Both methods agree for kernels
/// that are degenerate with respect to the uniform law.
pub fn v_statistic<'a>(path: &EmpiricalPath, kernel: impl Into<KernelRef<'a>>, d: usize, method: VMethod) -> Result<VStatResult> {
    let kernel = kernel.into();
    if kernel.dim() != d {
        return Err(Error::input(format!("kernel has dimension {}, not {d}", kernel.dim())));
    }
    let value = match (method, kernel) {
        (VMethod::Grid, KernelRef::Grid(g)) => g.contract(&path.cell_increments(g.n_cells())),
        (VMethod::Grid, KernelRef::Analytic(_)) => {
            return Err(Error::input("the grid method needs a grid kernel"));
        }
        (VMethod::Naive, k) => naive_v(path, k)?,
    };
    Ok(VStatResult {
        value,
        n: path.n(),
        d,
        method,
    })
}

fn naive_v(path: &EmpiricalPath, kernel: KernelRef<'_>) -> Result<f64> {
    let n = path.n();
    let d = kernel.dim();
    check_budget(n, d)?;
    let xs = path.values();
    let total = n.pow(d as u32);
    let inner = total / n;
    let sum = match kernel {
        KernelRef::Grid(g) => {
            let cells: Vec<usize> = xs.iter().map(|&x| cell_index(x, g.n_cells())).collect();
            par::chunked_sum(n, |first| {
                let mut acc = 0.0;
                let mut idx = vec![0; d];
                for rest in 0..inner {
                    idx[0] = cells[first];
                    let mut r = rest;
                    for slot in idx[1..].iter_mut().rev() {
                        *slot = cells[r % n];
                        r /= n;
                    }
                    acc += g.get(&idx);
                }
                acc
            })
        }
        KernelRef::Analytic(k) => par::chunked_sum(n, |first| {
            let mut acc = 0.0;
            let mut x = vec![0.0; d];
            for rest in 0..inner {
                x[0] = xs[first];
                let mut r = rest;
                for slot in x[1..].iter_mut().rev() {
                    *slot = xs[r % n];
                    r /= n;
                }
                acc += k.eval(&x);
            }
            acc
        }),
    };
    Ok(sum / (n as f64).powf(d as f64 / 2.0))
}

/// `∫_0^1 S_n(t)² dt` in closed form from the order statistics:
/// `1/(12n) + Σ_i (x_(i) − (2i−1)/(2n))²`.
pub fn cramer_von_mises_statistic(path: &EmpiricalPath) -> f64 {
    let n = path.n() as f64;
    let tail: f64 = path
        .sorted()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = x - (2 * i + 1) as f64 / (2.0 * n);
            c * c
        })
        .sum();
    1.0 / (12.0 * n) + tail
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    (0..k as u128).fold(1u128, |acc, i| acc * (n as u128 - i) / (i + 1))
}

/// `U_n = C(n,d)^{-1/2} Σ_{i_1<⋯<i_d} f(X_{i_1}, …, X_{i_d})`.
pub fn u_statistic(path: &EmpiricalPath, kernel: &AnalyticKernel, d: usize) -> Result<f64> {
    if kernel.dim() != d {
        return Err(Error::input(format!("kernel has dimension {}, not {d}", kernel.dim())));
    }
    let n = path.n();
    if n < d {
        return Err(Error::input(format!("U-statistic of order {d} needs at least {d} observations")));
    }
    let terms = binomial(n, d);
    if terms > NAIVE_BUDGET {
        return Err(Error::size(format!("{terms} kernel evaluations exceed the budget of {NAIVE_BUDGET}")));
    }
    let xs = path.values();
    fn rec(xs: &[f64], k: &AnalyticKernel, start: usize, point: &mut Vec<f64>, d: usize) -> f64 {
        if point.len() == d {
            return k.eval(point);
        }
        let mut acc = 0.0;
        for i in start..=xs.len() - (d - point.len()) {
            point.push(xs[i]);
            acc += rec(xs, k, i + 1, point, d);
            point.pop();
        }
        acc
    }
    // split on the first index so the outer loop can run in parallel
    let sum = par::chunked_sum(n - d + 1, |first| {
        let mut point = vec![xs[first]];
        rec(xs, kernel, first + 1, &mut point, d)
    });
    Ok(sum / (terms as f64).sqrt())
}

/// Left side and bound of the moment inequality for centred indicators of
/// a single uniform observation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lemma2Check {
    pub lhs: f64,
    pub bound: f64,
}

impl Lemma2Check {
    pub fn holds(&self) -> bool {
        self.lhs <= self.bound
    }
}

/// Exact `E |Π_j (1{X ∈ A_j} − P(A_j))^{l_j}|` for one uniform `X` and
/// disjoint sets, together with the bound `(q+1) Π P(A_j)`.
pub fn lemma2_lhs_exact(sets: &[Interval], exponents: &[u32]) -> Result<Lemma2Check> {
    if sets.is_empty() || sets.len() != exponents.len() {
        return Err(Error::input("need one positive exponent per set"));
    }
    if exponents.contains(&0) {
        return Err(Error::input("exponents must be positive"));
    }
    for (i, a) in sets.iter().enumerate() {
        if let Some(b) = sets[i + 1..].iter().find(|b| !a.is_disjoint(b)) {
            return Err(Error::input(format!("sets ({}, {}] and ({}, {}] overlap", a.lo, a.hi, b.lo, b.hi)));
        }
    }
    let p: Vec<f64> = sets.iter().map(Interval::len).collect();
    let all_out: f64 = p.iter().zip(exponents).map(|(&pi, &l)| pi.powi(l as i32)).product();
    let mut lhs = (1.0 - p.iter().sum::<f64>()) * all_out;
    for j in 0..sets.len() {
        let mut term = p[j] * (1.0 - p[j]).powi(exponents[j] as i32);
        for i in (0..sets.len()).filter(|&i| i != j) {
            term *= p[i].powi(exponents[i] as i32);
        }
        lhs += term;
    }
    let bound = (sets.len() + 1) as f64 * p.iter().product::<f64>();
    Ok(Lemma2Check { lhs, bound })
}

/// Monte Carlo estimate of `|E Π S_n(A_j)^{l_j}| / Π P(A_j)`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct MomentProbe {
    pub ratio: f64,
    pub std_err: f64,
    pub reps: usize,
    /// Set when every set has measure zero; the ratio is then reported as 0.
    pub zero_measure: bool,
}

/// Minimum replication count accepted by [`moment_bound_probe`].
pub const MIN_PROBE_REPS: usize = 1000;

/// Estimates the normalised mixed moment of `S_n` over disjoint sets from
/// `reps` independent paths of length `n`; replication `r` uses stream `r`
/// of the generator's seed.
pub fn moment_bound_probe(
    generator: &MarkovUniformGenerator,
    sets: &[Interval],
    exponents: &[u32],
    n: usize,
    reps: usize,
) -> Result<MomentProbe> {
    if sets.len() != exponents.len() || sets.is_empty() {
        return Err(Error::input("need one exponent per set"));
    }
    if exponents.iter().sum::<u32>() % 2 == 1 {
        return Err(Error::input("exponents must have an even sum"));
    }
    if reps < MIN_PROBE_REPS {
        return Err(Error::input(format!("the probe needs at least {MIN_PROBE_REPS} replications")));
    }
    if n == 0 {
        return Err(Error::input("paths must be nonempty"));
    }
    let norm: f64 = sets.iter().map(Interval::len).product();
    if sets.iter().all(|s| s.len() == 0.0) {
        return Ok(MomentProbe {
            ratio: 0.0,
            std_err: 0.0,
            reps,
            zero_measure: true,
        });
    }
    let sqrt_n = (n as f64).sqrt();
    let values = par::map_indexed(reps, |r| {
        let xs = generator.sample_path_stream(n, r as u64);
        let mut counts = vec![0usize; sets.len()];
        for x in xs {
            if let Some(j) = sets.iter().position(|s| s.contains(x)) {
                counts[j] += 1;
            }
        }
        counts
            .iter()
            .zip(sets)
            .zip(exponents)
            .map(|((&c, s), &l)| ((c as f64 / n as f64 - s.len()) * sqrt_n).powi(l as i32))
            .product::<f64>()
    });
    let (mean, se) = mean_and_std_err(&values);
    Ok(MomentProbe {
        ratio: mean.abs() / norm,
        std_err: se / norm,
        reps,
        zero_measure: false,
    })
}

/// Sample mean and its standard error, summed in index order.
pub fn mean_and_std_err(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Replications of the grid-method V-statistic: replication `r` draws its
/// path from stream `r` of the generator.
pub fn simulate_v_statistics(generator: &MarkovUniformGenerator, kernel: &GridKernel, n: usize, reps: usize) -> Result<Vec<f64>> {
    if n == 0 || reps == 0 {
        return Err(Error::input("sample size and replication count must be positive"));
    }
    let values = par::map_indexed(reps, |r| {
        let xs = generator.sample_path_stream(n, r as u64);
        let path = EmpiricalPath::new(xs).expect("generator output lies in [0,1]");
        kernel.contract(&path.cell_increments(kernel.n_cells()))
    });
    if let Some(r) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::numeric(format!("replication {r} produced a non-finite value")));
    }
    Ok(values)
}

/// Writes samples as CSV with header `rep,value`.
pub fn write_samples_csv<W: Write>(mut out: W, values: &[f64]) -> Result<()> {
    if let Some(r) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::numeric(format!("replication {r} is not finite")));
    }
    writeln!(out, "rep,value")?;
    for (r, v) in values.iter().enumerate() {
        writeln!(out, "{r},{v:?}")?;
    }
    Ok(())
}

/// Reads a `rep,value` CSV written by [`write_samples_csv`].
pub fn read_samples_csv<R: BufRead>(input: R) -> Result<Vec<f64>> {
    let mut values = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != "rep,value" {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("expected header `rep,value`, found `{line}`"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let value = line
            .split_once(',')
            .and_then(|(_, v)| v.trim().parse::<f64>().ok())
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("bad sample row `{line}`"),
            })?;
        values.push(value);
    }
    Ok(values)
}
