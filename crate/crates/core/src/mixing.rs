//! Uniformised finite Markov chains as ψ-mixing stationary sequences.
//!
//! A chain `Z` on `K` states with a doubly stochastic, strictly positive
//! transition matrix `P` has the uniform stationary law. Spreading each
//! state over its own interval, `X_n = (Z_n + U_n)/K` with independent
//! uniform `U_n`, gives `[0,1]`-uniform marginals while every joint law
//! stays in closed form:
//!
//! * the pair `(X_1, X_{k+1})` has density `K (P^k)_{ab}` on block `(a, b)`;
//! * `max_{a,b} |K (P^m)_{ab} − 1|` bounds the relative deviation of joint
//!   from product probabilities of single-coordinate events at lag `m`,
//!   and is used as the working ψ coefficient.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;

use crate::covariance::Covariance;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

const STOCHASTIC_TOL: f64 = 1e-12;
const MAX_SERIES_TERMS: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct MarkovUniformGenerator {
    states: usize,
    /// Row-major `K × K` transition matrix.
    p: Vec<f64>,
    seed: u64,
}

/// Checks that `rows` is a `K × K` doubly stochastic matrix with entries in
/// `(0,1)` and `K ≥ 2`.
pub fn validate_transition(rows: &[Vec<f64>]) -> Result<()> {
    let k = rows.len();
    if k < 2 {
        return Err(Error::input(format!("need at least 2 states, got {k}")));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != k {
            return Err(Error::input(format!("row {i} has {} entries, expected {k}", row.len())));
        }
        for (j, &x) in row.iter().enumerate() {
            if !(x > 0.0 && x < 1.0) {
                return Err(Error::input(format!("entry P[{i}][{j}] = {x} is not in (0,1)")));
            }
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::input(format!("row {i} sums to {sum}")));
        }
    }
    for j in 0..k {
        let sum: f64 = rows.iter().map(|r| r[j]).sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::input(format!("column {j} sums to {sum}")));
        }
    }
    Ok(())
}

fn mat_mul(a: &[f64], b: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * k];
    for i in 0..k {
        for l in 0..k {
            let ail = a[i * k + l];
            for j in 0..k {
                out[i * k + j] += ail * b[l * k + j];
            }
        }
    }
    out
}

fn inf_norm(a: &[f64], k: usize) -> f64 {
    (0..k)
        .map(|i| a[i * k..(i + 1) * k].iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Fraction of state `a`'s interval `[a/K, (a+1)/K)` lying below `t`.
#[inline]
fn block_weight(k: usize, a: usize, t: f64) -> f64 {
    (k as f64 * t - a as f64).clamp(0.0, 1.0)
}

#[inline]
fn block_of(k: usize, t: f64) -> usize {
    ((k as f64 * t).floor() as usize).min(k - 1)
}

impl MarkovUniformGenerator {
    pub fn new(rows: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        validate_transition(&rows)?;
        let states = rows.len();
        Ok(Self {
            states,
            p: rows.into_iter().flatten().collect(),
            seed,
        })
    }

    /// Independent observations: every entry equal to `1/K`.
    pub fn iid(states: usize, seed: u64) -> Result<Self> {
        let x = 1.0 / states as f64;
        Self::new(vec![vec![x; states]; states], seed)
    }

    /// Two states that stay put with probability `stay`.
    pub fn two_state(stay: f64, seed: u64) -> Result<Self> {
        Self::new(vec![vec![stay, 1.0 - stay], vec![1.0 - stay, stay]], seed)
    }

    /// Parses the plain-text generator format: `K`, then `K` rows of `P`,
    /// then the seed. Blank lines and `#` comments are skipped.
    pub fn from_spec_str(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let parse_err = |line: usize, msg: String| Error::Parse { line, msg };
        let (line, first) = lines.next().ok_or_else(|| parse_err(1, "empty generator file".into()))?;
        let k: usize = first
            .parse()
            .map_err(|_| parse_err(line, format!("expected state count, found `{first}`")))?;
        let mut rows = Vec::with_capacity(k);
        for r in 0..k {
            let (line, text) = lines
                .next()
                .ok_or_else(|| parse_err(line + r + 1, format!("missing row {r} of the transition matrix")))?;
            let row = text
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>().map_err(|_| parse_err(line, format!("bad number `{s}`"))))
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != k {
                return Err(parse_err(line, format!("row has {} entries, expected {k}", row.len())));
            }
            rows.push(row);
        }
        let (line, seed_text) = lines.next().ok_or_else(|| parse_err(k + 2, "missing seed line".into()))?;
        let seed = seed_text
            .parse()
            .map_err(|_| parse_err(line, format!("bad seed `{seed_text}`")))?;
        if let Some((line, extra)) = lines.next() {
            return Err(parse_err(line, format!("unexpected trailing content `{extra}`")));
        }
        Self::new(rows, seed)
    }

    pub fn to_spec_string(&self) -> String {
        let mut out = format!("{}\n", self.states);
        for row in self.rows() {
            let cells: Vec<String> = row.iter().map(|x| format!("{x}")).collect();
            let _ = writeln!(out, "{}", cells.join(" "));
        }
        let _ = writeln!(out, "{}", self.seed);
        out
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.p.chunks(self.states).map(|r| r.to_vec()).collect()
    }

    pub fn is_iid(&self) -> bool {
        let x = 1.0 / self.states as f64;
        self.p.iter().all(|&v| (v - x).abs() <= STOCHASTIC_TOL)
    }

    /// `P^m` in row-major order.
    pub fn transition_power(&self, m: usize) -> Vec<f64> {
        let k = self.states;
        let mut acc: Vec<f64> = (0..k * k).map(|i| if i / k == i % k { 1.0 } else { 0.0 }).collect();
        for _ in 0..m {
            acc = mat_mul(&acc, &self.p, k);
        }
        acc
    }

    /// The sample `X_1..X_n` of replication stream 0.
    pub fn sample_path(&self, n: usize) -> Vec<f64> {
        self.sample_path_stream(n, 0)
    }

    /// The sample `X_1..X_n` drawn from stream `stream` of this generator's seed.
    pub fn sample_path_stream(&self, n: usize, stream: u64) -> Vec<f64> {
        let k = self.states;
        let mut rng = stream_rng(self.seed, stream);
        let mut z = rng.random_range(0..k);
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            if i > 0 {
                let u: f64 = rng.random();
                let row = &self.p[z * k..(z + 1) * k];
                let mut acc = 0.0;
                let mut next = k - 1;
                for (j, &pj) in row.iter().enumerate() {
                    acc += pj;
                    if u < acc {
                        next = j;
                        break;
                    }
                }
                z = next;
            }
            let u: f64 = rng.random();
            out.push((z as f64 + u) / k as f64);
        }
        out
    }

    /// `max_{a,b} |K (P^m)_{ab} − 1|`, the working ψ coefficient at lag `m`.
    pub fn psi_bound(&self, m: usize) -> f64 {
        psi_of_power(&self.transition_power(m), self.states)
    }

    /// Geometric envelope `psi_bound(m) ≤ constant · rate^m`.
    pub fn psi_profile(&self) -> Result<PsiProfile> {
        let k = self.states;
        let inv = 1.0 / k as f64;
        let q: Vec<f64> = self.p.iter().map(|x| x - inv).collect();
        let rho = inf_norm(&q, k);
        if rho == 0.0 {
            return Ok(PsiProfile {
                geometric_rate: 0.0,
                constant: 0.0,
            });
        }
        // First power s with ‖Q^s‖_∞ < 1; then |Q^{qs+r}| ≤ ‖Q^r‖ ρ_s^q.
        let mut qs = q.clone();
        let mut norms = vec![rho];
        for s in 1..=64usize {
            let ns = norms[s - 1];
            if ns < 1.0 {
                let rate = ns.powf(1.0 / s as f64);
                let constant = norms[..s]
                    .iter()
                    .enumerate()
                    .map(|(r, &nr)| k as f64 * nr / rate.powi(r as i32 + 1))
                    .fold(0.0, f64::max);
                return Ok(PsiProfile {
                    geometric_rate: rate,
                    constant,
                });
            }
            qs = mat_mul(&qs, &q, k);
            norms.push(inf_norm(&qs, k));
        }
        Err(Error::Convergence("ψ coefficients show no geometric decay within 64 lags".into()))
    }

    /// `F_k(t,s) = P(X_1 ≤ t, X_{k+1} ≤ s)`.
    pub fn joint_cdf(&self, k: usize, t: f64, s: f64) -> Result<f64> {
        if k == 0 {
            return Err(Error::input("lag must be at least 1"));
        }
        check_unit(t)?;
        check_unit(s)?;
        Ok(joint_cdf_from_power(&self.transition_power(k), self.states, t, s))
    }

    /// `b(t,s) = Σ_{k ≤ k_max} (p_k(t,s) + p_k(s,t) − 2)` with its tail bound.
    pub fn b_density(&self, t: f64, s: f64, k_max: usize) -> BDensity {
        let k = self.states;
        let (a, b) = (block_of(k, t), block_of(k, s));
        let mut power = self.p.clone();
        let mut value = 0.0;
        for lag in 1..=k_max {
            if lag > 1 {
                power = mat_mul(&power, &self.p, k);
            }
            value += k as f64 * (power[a * k + b] + power[b * k + a]) - 2.0;
        }
        let tail_bound = self
            .psi_profile()
            .map(|pr| 2.0 * pr.tail_sum(k_max))
            .unwrap_or(f64::INFINITY);
        BDensity { value, tail_bound }
    }

    /// `Ψ(d) = Σ_{k≥1} psi_bound(k) · k^{2d−2}`, truncated once the geometric
    /// tail falls below `1e−12` of the partial sum.
    pub fn psi_series(&self, d: usize) -> Result<f64> {
        if d == 0 {
            return Err(Error::input("Ψ(d) needs d ≥ 1"));
        }
        let profile = self.psi_profile()?;
        if profile.constant == 0.0 {
            return Ok(0.0);
        }
        let k = self.states;
        let p_exp = (2 * d - 2) as i32;
        let r = profile.geometric_rate;
        let mut power = self.p.clone();
        let mut sum = 0.0;
        for lag in 1..=MAX_SERIES_TERMS {
            if lag > 1 {
                power = mat_mul(&power, &self.p, k);
            }
            sum += psi_of_power(&power, k) * (lag as f64).powi(p_exp);
            let ratio = r * ((lag as f64 + 2.0) / (lag as f64 + 1.0)).powi(p_exp);
            if ratio < 1.0 {
                let next = profile.constant * r.powi(lag as i32 + 1) * (lag as f64 + 1.0).powi(p_exp);
                let tail = next / (1.0 - ratio);
                if tail <= 1e-12 * sum || tail == 0.0 {
                    return Ok(sum);
                }
            }
        }
        Err(Error::Convergence(format!("Ψ({d}) did not converge in {MAX_SERIES_TERMS} terms")))
    }

    /// Limit covariance of the empirical process, truncated at the smallest
    /// lag count whose neglected tail `2 Σ_{k>K} ψ(k)` is at most `tail_tol`.
    pub fn limit_covariance(&self, tail_tol: f64) -> Result<LimitCovariance> {
        if !(tail_tol > 0.0) {
            return Err(Error::input(format!("tail tolerance must be positive, got {tail_tol}")));
        }
        let profile = self.psi_profile()?;
        let mut k_max = 0;
        while 2.0 * profile.tail_sum(k_max) > tail_tol {
            k_max += 1;
            if k_max > MAX_SERIES_TERMS {
                return Err(Error::Convergence("limit covariance tail is not summable".into()));
            }
        }
        let mut lc = self.limit_covariance_with_lags(k_max);
        lc.tail_bound = 2.0 * profile.tail_sum(k_max);
        Ok(lc)
    }

    /// Limit covariance with exactly `k_max` dependence lags.
    pub fn limit_covariance_with_lags(&self, k_max: usize) -> LimitCovariance {
        let k = self.states;
        let mut power = self.p.clone();
        let mut lag_sum = vec![0.0; k * k];
        for lag in 1..=k_max {
            if lag > 1 {
                power = mat_mul(&power, &self.p, k);
            }
            for (acc, x) in lag_sum.iter_mut().zip(&power) {
                *acc += x;
            }
        }
        let tail_bound = self
            .psi_profile()
            .map(|pr| 2.0 * pr.tail_sum(k_max))
            .unwrap_or(f64::INFINITY);
        LimitCovariance {
            states: k,
            k_max,
            lag_sum: Arc::new(lag_sum),
            tail_bound,
        }
    }
}

fn check_unit(x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::input(format!("argument {x} is outside [0,1]")))
    }
}

fn psi_of_power(power: &[f64], k: usize) -> f64 {
    power
        .iter()
        .map(|x| (k as f64 * x - 1.0).abs())
        .fold(0.0, f64::max)
}

fn joint_cdf_from_power(power: &[f64], k: usize, t: f64, s: f64) -> f64 {
    let mut acc = 0.0;
    for a in 0..k {
        let wa = block_weight(k, a, t);
        if wa == 0.0 {
            continue;
        }
        for b in 0..k {
            acc += power[a * k + b] * wa * block_weight(k, b, s);
        }
    }
    acc / k as f64
}

/// Geometric envelope of the ψ coefficients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PsiProfile {
    pub geometric_rate: f64,
    pub constant: f64,
}

impl PsiProfile {
    /// Upper bound on `psi_bound(m)`.
    pub fn envelope(&self, m: usize) -> f64 {
        self.constant * self.geometric_rate.powi(m as i32)
    }

    /// Upper bound on `Σ_{k > k0} psi_bound(k)`.
    pub fn tail_sum(&self, k0: usize) -> f64 {
        if self.constant == 0.0 {
            return 0.0;
        }
        let r = self.geometric_rate;
        self.constant * r.powi(k0 as i32 + 1) / (1.0 - r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BDensity {
    pub value: f64,
    pub tail_bound: f64,
}

/// Covariance of the Gaussian limit of the empirical process:
/// `C(t,s) = min(t,s) − ts + Σ_{k≤K} (F_k(t,s) + F_k(s,t) − 2ts)`.
#[derive(Clone, Debug)]
pub struct LimitCovariance {
    states: usize,
    k_max: usize,
    /// `Σ_{k≤K} P^k`, row-major.
    lag_sum: Arc<Vec<f64>>,
    tail_bound: f64,
}

impl LimitCovariance {
    /// Number of dependence lags retained.
    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// Bound on the neglected part of the series, uniformly in `(t,s)`.
    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    /// `C(t,s)`; arguments are clamped to `[0,1]`.
    pub fn eval(&self, t: f64, s: f64) -> f64 {
        let (t, s) = (t.clamp(0.0, 1.0), s.clamp(0.0, 1.0));
        let base = t.min(s) - t * s;
        if self.k_max == 0 {
            return base;
        }
        let k = self.states;
        let cross = joint_cdf_from_power(&self.lag_sum, k, t, s) + joint_cdf_from_power(&self.lag_sum, k, s, t);
        base + cross - 2.0 * self.k_max as f64 * t * s
    }

    /// Truncated series density `b(t,s)` built from the same lags.
    pub fn b_density(&self, t: f64, s: f64) -> f64 {
        let k = self.states;
        let (a, b) = (block_of(k, t), block_of(k, s));
        k as f64 * (self.lag_sum[a * k + b] + self.lag_sum[b * k + a]) - 2.0 * self.k_max as f64
    }
}

impl Covariance for LimitCovariance {
    fn cov(&self, t: f64, s: f64) -> f64 {
        self.eval(t, s)
    }
}

/// `|P(AB)/(P(A)P(B)) − 1|` for events with the given probabilities.
///
/// With `A = B` at lag zero this is `1/P(A) − 1`, unbounded as `P(A) → 0`,
/// which is why no bound in this crate involves ψ at lag zero.
pub fn event_ratio(p_ab: f64, p_a: f64, p_b: f64) -> f64 {
    (p_ab / (p_a * p_b) - 1.0).abs()
}
