//! Sub-gaussian and sub-exponential semi-norms, norm calculus and the
//! Bernstein tail bound for sums of independent sub-exponential variables.
//!
//! Norm conventions:
//!
//! * sub-gaussian: `tau(X) = inf { t > 0 : E exp(l (X - EX)) <= exp(l^2 t^2 / 2) for all l }`
//! * sub-exponential: `||X|| = sup_{k >= 1} (E|X|^k / k!)^(1/k)`
//!
//! Closed forms are used wherever a family admits one. Anything computed over
//! a finite grid (of `l` or of `k`) is a bound from below and is labelled as
//! such, so callers never mistake it for the upper bound a tail inequality
//! needs.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::rng::{Stream, TrialStreams};
use crate::scalar::Scalar;

pub type Sampler<T> = Arc<dyn Fn(&mut Stream) -> T + Send + Sync>;
pub type ScalarFn<T> = Arc<dyn Fn(T) -> T + Send + Sync>;
pub type MomentFn<T> = Arc<dyn Fn(u32) -> T + Send + Sync>;

/// 99% two-sided normal quantile used to widen empirical MGF checks.
const Z_99: f64 = 2.575_829_303_548_901;

/// Fewest samples accepted for an empirical MGF check.
pub const MIN_EMPIRICAL_SAMPLES: usize = 1_000_000;

/// Default number of moments scanned by [`subexponential_norm`].
pub const DEFAULT_K_MAX: u32 = 50;

/// A distribution known only through a sampler and optional analytic hooks.
#[derive(Clone)]
pub struct CustomDistribution<T> {
    pub name: String,
    pub mean: T,
    pub second_moment: T,
    pub subgauss_tau: Option<T>,
    pub sampler: Sampler<T>,
    /// `l -> ln E exp(l (X - EX))`, `+inf` where the MGF diverges.
    pub log_mgf_centered: Option<ScalarFn<T>>,
    /// `k -> ln E|X|^k`.
    pub log_abs_moment: Option<MomentFn<T>>,
}

#[derive(Clone)]
pub enum Family<T> {
    Gaussian { mean: T, sd: T },
    UniformBounded { lo: T, hi: T },
    Rademacher,
    /// Exponential with the given rate, optionally shifted to mean zero.
    Exponential { rate: T, centered: bool },
    Constant { value: T },
    Custom(CustomDistribution<T>),
}

/// A samplable scalar distribution with its declared moments and
/// sub-gaussian bound.
#[derive(Clone)]
pub struct DistributionSpec<T> {
    family: Family<T>,
}

impl<T: Scalar> fmt::Debug for DistributionSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DistributionSpec")
            .field("family", &self.label())
            .field("mean", &self.mean())
            .field("second_moment", &self.second_moment())
            .field("subgauss_tau", &self.subgauss_tau())
            .finish()
    }
}

impl<T: Scalar> DistributionSpec<T> {
    pub fn gaussian(mean: T, sd: T) -> Result<Self> {
        if !(sd >= T::zero()) || !mean.is_finite() || !sd.is_finite() {
            return invalid(format!("gaussian needs finite mean and sd >= 0, got ({mean}, {sd})"));
        }
        Ok(Self { family: Family::Gaussian { mean, sd } })
    }

    pub fn standard_gaussian() -> Self {
        Self { family: Family::Gaussian { mean: T::zero(), sd: T::one() } }
    }

    pub fn uniform(lo: T, hi: T) -> Result<Self> {
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return invalid(format!("uniform needs finite lo <= hi, got [{lo}, {hi}]"));
        }
        Ok(Self { family: Family::UniformBounded { lo, hi } })
    }

    pub fn rademacher() -> Self {
        Self { family: Family::Rademacher }
    }

    pub fn exponential(rate: T) -> Result<Self> {
        Self::exponential_with(rate, false)
    }

    /// `Exp(rate) - 1/rate`.
    pub fn centered_exponential(rate: T) -> Result<Self> {
        Self::exponential_with(rate, true)
    }

    fn exponential_with(rate: T, centered: bool) -> Result<Self> {
        if !(rate > T::zero()) || !rate.is_finite() {
            return invalid(format!("exponential rate must be positive, got {rate}"));
        }
        Ok(Self { family: Family::Exponential { rate, centered } })
    }

    pub fn constant(value: T) -> Self {
        Self { family: Family::Constant { value } }
    }

    pub fn custom(custom: CustomDistribution<T>) -> Result<Self> {
        if custom.second_moment < custom.mean * custom.mean {
            return invalid(format!(
                "{}: second moment {} below squared mean",
                custom.name, custom.second_moment
            ));
        }
        if let Some(tau) = custom.subgauss_tau {
            if !(tau >= T::zero()) {
                return invalid(format!("{}: declared tau must be >= 0", custom.name));
            }
        }
        Ok(Self { family: Family::Custom(custom) })
    }

    pub fn family(&self) -> &Family<T> {
        &self.family
    }

    pub fn label(&self) -> String {
        match &self.family {
            Family::Gaussian { mean, sd } => format!("gaussian({mean},{sd})"),
            Family::UniformBounded { lo, hi } => format!("uniform[{lo},{hi}]"),
            Family::Rademacher => "rademacher".to_string(),
            Family::Exponential { rate, centered: false } => format!("exponential({rate})"),
            Family::Exponential { rate, centered: true } => format!("centered-exponential({rate})"),
            Family::Constant { value } => format!("constant({value})"),
            Family::Custom(c) => c.name.clone(),
        }
    }

    pub fn mean(&self) -> T {
        match &self.family {
            Family::Gaussian { mean, .. } => *mean,
            Family::UniformBounded { lo, hi } => (*lo + *hi) / T::lit(2.0),
            Family::Rademacher => T::zero(),
            Family::Exponential { rate, centered } => {
                if *centered {
                    T::zero()
                } else {
                    rate.recip()
                }
            }
            Family::Constant { value } => *value,
            Family::Custom(c) => c.mean,
        }
    }

    pub fn second_moment(&self) -> T {
        match &self.family {
            Family::Gaussian { mean, sd } => *mean * *mean + *sd * *sd,
            Family::UniformBounded { lo, hi } => (*lo * *lo + *lo * *hi + *hi * *hi) / T::lit(3.0),
            Family::Rademacher => T::one(),
            Family::Exponential { rate, centered } => {
                let scale = if *centered { T::one() } else { T::lit(2.0) };
                scale / (*rate * *rate)
            }
            Family::Constant { value } => *value * *value,
            Family::Custom(c) => c.second_moment,
        }
    }

    pub fn variance(&self) -> T {
        let m = self.mean();
        (self.second_moment() - m * m).max(T::zero())
    }

    /// Declared sub-gaussian bound; `None` when unknown or infinite.
    pub fn subgauss_tau(&self) -> Option<T> {
        match &self.family {
            Family::Gaussian { sd, .. } => Some(*sd),
            Family::UniformBounded { lo, hi } => Some((*hi - *lo) / T::lit(2.0)),
            Family::Rademacher => Some(T::one()),
            Family::Exponential { .. } => None,
            Family::Constant { .. } => Some(T::zero()),
            Family::Custom(c) => c.subgauss_tau,
        }
    }

    /// `ln E exp(l (X - EX))` in closed form, `None` when the family has none.
    /// Returns `+inf` where the MGF diverges.
    pub fn log_mgf_centered(&self, lambda: T) -> Option<T> {
        let two = T::lit(2.0);
        match &self.family {
            Family::Gaussian { sd, .. } => Some(lambda * lambda * *sd * *sd / two),
            Family::UniformBounded { lo, hi } => {
                let x = (lambda * (*hi - *lo) / two).abs();
                Some(log_sinhc(x))
            }
            Family::Rademacher => Some(log_cosh(lambda)),
            Family::Exponential { rate, .. } => {
                let r = lambda / *rate;
                if r >= T::one() {
                    Some(T::infinity())
                } else {
                    Some(-r - (-r).ln_1p())
                }
            }
            Family::Constant { .. } => Some(T::zero()),
            Family::Custom(c) => c.log_mgf_centered.as_ref().map(|f| f(lambda)),
        }
    }

    /// Centered MGF `E exp(l (X - EX))` when available in closed form.
    pub fn mgf_centered(&self, lambda: T) -> Option<T> {
        self.log_mgf_centered(lambda).map(T::exp)
    }

    /// `ln E|X|^k`, closed form or quadrature, `None` when unavailable.
    pub fn log_abs_moment(&self, k: u32) -> Option<T> {
        let kf = T::lit(k as f64);
        match &self.family {
            Family::Gaussian { mean, sd } => {
                if *sd == T::zero() {
                    return Some(kf * mean.abs().ln());
                }
                if *mean == T::zero() {
                    Some(kf * sd.ln() + log_abs_std_normal_moment::<T>(k))
                } else {
                    Some(log_abs_moment_gaussian_quadrature(*mean, *sd, k))
                }
            }
            Family::UniformBounded { lo, hi } => Some(log_abs_moment_uniform(*lo, *hi, k)),
            Family::Rademacher => Some(T::zero()),
            Family::Exponential { rate, centered } => {
                let log_fact = ln_factorial::<T>(k);
                if !*centered {
                    return Some(log_fact - kf * rate.ln());
                }
                // E|E1 - 1|^k = k!/e + e^-1 * sum_j 1/(j! (k+j+1))
                let mut tail = T::zero();
                let mut inv_fact = T::one();
                for j in 0..60u32 {
                    if j > 0 {
                        inv_fact /= T::lit(j as f64);
                    }
                    tail += inv_fact / T::lit((k + j + 1) as f64);
                }
                let ln_sum = log_fact + (tail * (-log_fact).exp()).ln_1p();
                Some(ln_sum - T::one() - kf * rate.ln())
            }
            Family::Constant { value } => Some(kf * value.abs().ln()),
            Family::Custom(c) => c.log_abs_moment.as_ref().map(|f| f(k)),
        }
    }

    /// One draw; deterministic given the stream state.
    pub fn sample(&self, rng: &mut Stream) -> T {
        match &self.family {
            Family::Gaussian { mean, sd } => {
                let z: f64 = rng.sample(StandardNormal);
                *mean + *sd * T::lit(z)
            }
            Family::UniformBounded { lo, hi } => {
                let u: f64 = rng.random();
                *lo + (*hi - *lo) * T::lit(u)
            }
            Family::Rademacher => {
                if rng.random::<bool>() {
                    T::one()
                } else {
                    -T::one()
                }
            }
            Family::Exponential { rate, centered } => {
                let e: f64 = rng.sample(Exp1);
                let x = T::lit(e) / *rate;
                if *centered {
                    x - rate.recip()
                } else {
                    x
                }
            }
            Family::Constant { value } => *value,
            Family::Custom(c) => (c.sampler)(rng),
        }
    }
}

/// Built-in families with a declared sub-gaussian bound, used for self-checks.
pub fn builtin_distributions<T: Scalar>() -> Vec<DistributionSpec<T>> {
    let l = T::lit;
    vec![
        DistributionSpec::standard_gaussian(),
        DistributionSpec::gaussian(l(3.0), l(2.0)).unwrap(),
        DistributionSpec::uniform(l(-1.0), l(1.0)).unwrap(),
        DistributionSpec::uniform(l(0.0), l(3.0)).unwrap(),
        DistributionSpec::rademacher(),
        DistributionSpec::constant(l(5.0)),
    ]
}

fn log_cosh<T: Scalar>(x: T) -> T {
    let a = x.abs();
    a + (T::lit(-2.0) * a).exp().ln_1p() - T::LN_2()
}

/// `ln(sinh(x)/x)` for `x >= 0`.
fn log_sinhc<T: Scalar>(x: T) -> T {
    if x < T::lit(1e-3) {
        let x2 = x * x;
        x2 / T::lit(6.0) - x2 * x2 / T::lit(180.0)
    } else {
        x + (-(T::lit(-2.0) * x).exp()).ln_1p() - T::LN_2() - x.ln()
    }
}

pub(crate) fn ln_factorial<T: Scalar>(k: u32) -> T {
    (2..=k).map(|i| T::lit(i as f64).ln()).sum()
}

/// `ln E|Z|^k` for standard normal `Z`: `(k-1)!!` for even `k`,
/// `sqrt(2/pi) (k-1)!!` for odd `k`.
fn log_abs_std_normal_moment<T: Scalar>(k: u32) -> T {
    let mut acc = T::zero();
    let mut j = k as i64 - 1;
    while j > 1 {
        acc += T::lit(j as f64).ln();
        j -= 2;
    }
    if k % 2 == 1 {
        acc += T::lit(0.5) * (T::lit(2.0) / T::PI()).ln();
    }
    acc
}

fn log_abs_moment_uniform<T: Scalar>(lo: T, hi: T, k: u32) -> T {
    let kf = T::lit(k as f64);
    if lo == hi {
        return kf * lo.abs().ln();
    }
    let k1 = kf + T::one();
    let width_ln = (hi - lo).ln();
    if lo < T::zero() && hi > T::zero() {
        let a = k1 * (-lo).ln();
        let b = k1 * hi.ln();
        let m = a.max(b);
        let lse = m + ((a - m).exp() + (b - m).exp()).ln();
        lse - k1.ln() - width_ln
    } else {
        let (small, big) = if lo >= T::zero() { (lo, hi) } else { (-hi, -lo) };
        let ratio = if big > T::zero() { (small / big).powf(k1) } else { T::zero() };
        k1 * big.ln() + (-ratio).ln_1p() - k1.ln() - width_ln
    }
}

/// Composite Simpson in log-space over `mean +- (sqrt(k) + 12) sd`.
fn log_abs_moment_gaussian_quadrature<T: Scalar>(mean: T, sd: T, k: u32) -> T {
    let kf = T::lit(k as f64);
    let half = (kf.sqrt() + T::lit(12.0)) * sd + mean.abs();
    let (a, b) = (mean - half, mean + half);
    let n = 8000usize;
    let h = (b - a) / T::from_usize_lossy(n);
    let log_f = |x: T| {
        let z = (x - mean) / sd;
        let lx = if x == T::zero() { T::neg_infinity() } else { kf * x.abs().ln() };
        lx - z * z / T::lit(2.0)
    };
    let logs: Vec<T> = (0..=n).map(|i| log_f(a + h * T::from_usize_lossy(i))).collect();
    let peak = logs.iter().copied().fold(T::neg_infinity(), T::max);
    let mut acc = T::zero();
    for (i, lv) in logs.iter().enumerate() {
        let w = if i == 0 || i == n {
            T::one()
        } else if i % 2 == 1 {
            T::lit(4.0)
        } else {
            T::lit(2.0)
        };
        acc += w * (*lv - peak).exp();
    }
    let integral_ln = peak + (acc * h / T::lit(3.0)).ln();
    integral_ln - sd.ln() - T::lit(0.5) * (T::lit(2.0) * T::PI()).ln()
}

/// Which side of the true value a reported norm sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundDirection {
    Exact,
    /// Closed-form inequality; the true norm is no larger.
    UpperBound,
    /// Supremum over a finite grid; the true norm is no smaller.
    LowerBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormEstimate<T> {
    pub value: T,
    pub direction: BoundDirection,
}

/// Symmetric log-spaced grid over `[-10/tau, 10/tau]`, 201 magnitudes per side,
/// zero excluded. `tau <= 0` is treated as 1.
pub fn standard_lambda_grid<T: Scalar>(tau: T) -> Vec<T> {
    let scale = if tau > T::zero() { tau } else { T::one() };
    let top = T::lit(10.0) / scale;
    let n = 201;
    let (lo_exp, hi_exp) = (-4.0f64, 0.0f64);
    let mags: Vec<T> = (0..n)
        .map(|i| {
            let e = lo_exp + (hi_exp - lo_exp) * i as f64 / (n - 1) as f64;
            top * T::lit(10f64.powf(e))
        })
        .collect();
    let mut grid: Vec<T> = mags.iter().rev().map(|m| -*m).collect();
    grid.extend(mags);
    grid
}

pub fn subgaussian_norm<T: Scalar>(dist: &DistributionSpec<T>) -> Result<NormEstimate<T>> {
    let exact = |value| Ok(NormEstimate { value, direction: BoundDirection::Exact });
    match dist.family() {
        Family::Gaussian { sd, .. } => exact(*sd),
        Family::Constant { .. } => exact(T::zero()),
        Family::Rademacher => exact(T::one()),
        // Hoeffding's lemma.
        Family::UniformBounded { lo, hi } => Ok(NormEstimate {
            value: (*hi - *lo) / T::lit(2.0),
            direction: BoundDirection::UpperBound,
        }),
        Family::Exponential { rate, .. } => Err(Error::UnsupportedDistribution(format!(
            "exponential({rate}) is not sub-gaussian: its MGF diverges at lambda = {rate}"
        ))),
        Family::Custom(c) => {
            if c.log_mgf_centered.is_none() {
                return Err(Error::UnsupportedDistribution(format!(
                    "{}: no closed-form family and no MGF evaluator",
                    c.name
                )));
            }
            let scale = c.subgauss_tau.unwrap_or_else(|| dist.variance().sqrt());
            let mut best = T::zero();
            for lambda in standard_lambda_grid(scale) {
                let lm = dist.log_mgf_centered(lambda).expect("checked above");
                if !lm.is_finite() {
                    return Err(Error::UnsupportedDistribution(format!(
                        "{}: MGF diverges at lambda = {lambda}",
                        c.name
                    )));
                }
                let t = (T::lit(2.0) * lm.max(T::zero())).sqrt() / lambda.abs();
                best = best.max(t);
            }
            Ok(NormEstimate { value: best, direction: BoundDirection::LowerBound })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubExpNorm<T> {
    pub value: T,
    /// Always a bound from below: the supremum is taken over `k <= k_max`.
    pub direction: BoundDirection,
    pub k_max: u32,
    pub k_at_max: u32,
}

pub fn subexponential_norm<T: Scalar>(dist: &DistributionSpec<T>, k_max: u32) -> Result<SubExpNorm<T>> {
    if k_max < 1 {
        return invalid("k_max must be at least 1");
    }
    let mut best = T::zero();
    let mut k_at_max = 1;
    for k in 1..=k_max {
        let lm = dist.log_abs_moment(k).ok_or_else(|| {
            Error::UnsupportedDistribution(format!("{}: absolute moments unavailable", dist.label()))
        })?;
        let term = ((lm - ln_factorial::<T>(k)) / T::lit(k as f64)).exp();
        if term > best {
            best = term;
            k_at_max = k;
        }
    }
    Ok(SubExpNorm { value: best, direction: BoundDirection::LowerBound, k_max, k_at_max })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MgfCheck<T> {
    pub pass: bool,
    pub worst_lambda: T,
    /// `max_l E exp(l (X-EX)) / exp(l^2 tau^2 / 2)`.
    pub worst_ratio: T,
}

/// Closed-form check of `E exp(l (X - EX)) <= exp(l^2 tau^2 / 2)` on a grid.
pub fn mgf_domination_check<T: Scalar>(dist: &DistributionSpec<T>, tau: T, grid: &[T]) -> Result<MgfCheck<T>> {
    if grid.is_empty() {
        return invalid("lambda grid is empty");
    }
    if !(tau >= T::zero()) {
        return invalid(format!("tau must be >= 0, got {tau}"));
    }
    let mut worst = T::neg_infinity();
    let mut worst_lambda = grid[0];
    let mut pass = true;
    for &lambda in grid {
        let lm = dist.log_mgf_centered(lambda).ok_or_else(|| {
            Error::UnsupportedDistribution(format!(
                "{}: no closed-form MGF; use the empirical check",
                dist.label()
            ))
        })?;
        let gauss = lambda * lambda * tau * tau / T::lit(2.0);
        let log_ratio = lm - gauss;
        let tol = T::lit(1e-12) * T::one().max(gauss);
        if !(log_ratio <= tol) {
            pass = false;
        }
        if log_ratio > worst || log_ratio.is_nan() {
            worst = log_ratio;
            worst_lambda = lambda;
        }
    }
    Ok(MgfCheck { pass, worst_lambda, worst_ratio: worst.exp() })
}

/// Empirical MGF check; each grid point passes when the sample mean minus a
/// 99% CLT half-width stays below the gaussian MGF.
pub fn mgf_domination_check_empirical<T: Scalar>(
    dist: &DistributionSpec<T>,
    tau: T,
    grid: &[T],
    samples: usize,
    master_seed: u64,
) -> Result<MgfCheck<T>> {
    if grid.is_empty() {
        return invalid("lambda grid is empty");
    }
    if samples < MIN_EMPIRICAL_SAMPLES {
        return invalid(format!("empirical MGF check needs >= {MIN_EMPIRICAL_SAMPLES} samples"));
    }
    let mean = dist.mean();
    let xs = draw_samples(dist, samples, master_seed);
    let n = T::from_usize_lossy(samples);
    let z = T::lit(Z_99);
    let mut pass = true;
    let mut worst = T::neg_infinity();
    let mut worst_lambda = grid[0];
    for &lambda in grid {
        let (mut s1, mut s2) = (T::zero(), T::zero());
        for &x in &xs {
            let e = (lambda * (x - mean)).exp();
            s1 += e;
            s2 += e * e;
        }
        let m = s1 / n;
        let var = (s2 / n - m * m).max(T::zero());
        let half_width = z * (var / n).sqrt();
        let gauss = (lambda * lambda * tau * tau / T::lit(2.0)).exp();
        if m - half_width > gauss {
            pass = false;
        }
        let ratio = (m / gauss).ln();
        if ratio > worst {
            worst = ratio;
            worst_lambda = lambda;
        }
    }
    Ok(MgfCheck { pass, worst_lambda, worst_ratio: worst.exp() })
}

const SAMPLE_CHUNK: usize = 4096;

/// `n` independent draws in a fixed order, generated chunk-parallel.
pub(crate) fn draw_samples<T: Scalar>(dist: &DistributionSpec<T>, n: usize, master_seed: u64) -> Vec<T> {
    let chunks = n.div_ceil(SAMPLE_CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = TrialStreams::new(master_seed, c as u64).samples();
            let len = SAMPLE_CHUNK.min(n - c * SAMPLE_CHUNK);
            (0..len).map(|_| dist.sample(&mut rng)).collect::<Vec<_>>()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailBound<T> {
    pub t: T,
    pub l: T,
    pub m: usize,
    pub raw_value: T,
    pub clamped_value: T,
    /// Optimal split constant `L t / (L t + 2 M L^2)`.
    pub c_star: T,
}

/// `P(|X_1 + ... + X_M| >= t) <= 2 exp(-t^2 / (2 (L t + 2 M L^2)))` for
/// independent centered summands with sub-exponential norms at most `L`.
pub fn bernstein_tail<T: Scalar>(t: T, l: T, m: usize) -> Result<TailBound<T>> {
    if !(t >= T::zero()) {
        return invalid(format!("deviation t must be >= 0, got {t}"));
    }
    if !(l >= T::zero()) {
        return invalid(format!("norm bound L must be >= 0, got {l}"));
    }
    if m == 0 {
        return invalid("summand count M must be positive");
    }
    let two = T::lit(2.0);
    let mf = T::from_usize_lossy(m);
    let (raw, c_star) = if t == T::zero() {
        (two, T::zero())
    } else if l == T::zero() {
        // every summand is a.s. zero
        (T::zero(), T::one())
    } else {
        let spread = two * mf * l * l;
        let raw = two * (-(t * t) / (two * (l * t + spread))).exp();
        (raw, l * t / (l * t + spread))
    };
    Ok(TailBound { t, l, m, raw_value: raw, clamped_value: raw.min(T::one()), c_star })
}

/// The same tail bound for non-uniform norms, evaluated through the
/// piecewise form `V(c, t)` at the optimal split `c'`.
pub fn bernstein_tail_from_norms<T: Scalar>(t: T, norms: &[T]) -> Result<T> {
    if norms.is_empty() {
        return invalid("norm list is empty");
    }
    if !(t >= T::zero()) || norms.iter().any(|n| !(*n >= T::zero())) {
        return invalid("deviation and norms must be >= 0");
    }
    let two = T::lit(2.0);
    let l = norms.iter().copied().fold(T::zero(), T::max);
    let sum_sq: T = norms.iter().map(|n| *n * *n).sum();
    if t == T::zero() {
        return Ok(two);
    }
    if l == T::zero() {
        return Ok(T::zero());
    }
    let c = l * t / (l * t + two * sum_sq);
    let threshold = two * c * sum_sq / (l * (T::one() - c));
    let v = if t <= threshold {
        (-(t * t) * (T::one() - c) / (T::lit(4.0) * sum_sq)).exp()
    } else {
        (-(c * t) / (two * l)).exp()
    };
    Ok(two * v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormOp {
    /// Sum of independent centered sub-gaussians: `sqrt(sum tau_i^2)`.
    Rotation,
    /// Product of two centered sub-gaussians: `2 tau_X tau_Y` (sub-exponential).
    Product,
    /// Centering a nonnegative sub-exponential keeps its norm bound.
    Centering,
    /// Multiplying by an independent `|X| <= 1` keeps the sub-gaussian bound.
    BoundedFactor,
}

pub fn norm_calculus<T: Scalar>(op: NormOp, inputs: &[T]) -> Result<T> {
    if inputs.is_empty() {
        return invalid("norm calculus needs at least one input");
    }
    if inputs.iter().any(|x| !(*x >= T::zero())) {
        return invalid("norms must be nonnegative");
    }
    let arity = |n: usize| {
        if inputs.len() == n {
            Ok(())
        } else {
            invalid(format!("{op:?} takes {n} norm(s), got {}", inputs.len()))
        }
    };
    match op {
        NormOp::Rotation => Ok(inputs.iter().map(|x| *x * *x).sum::<T>().sqrt()),
        NormOp::Product => {
            arity(2)?;
            Ok(T::lit(2.0) * inputs[0] * inputs[1])
        }
        NormOp::Centering | NormOp::BoundedFactor => {
            arity(1)?;
            Ok(inputs[0])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn subgaussian_norm_closed_forms() {
        let g = DistributionSpec::gaussian(3.0, 2.0).unwrap();
        assert_eq!(subgaussian_norm(&g).unwrap().value, 2.0);
        assert_eq!(subgaussian_norm(&DistributionSpec::constant(5.0)).unwrap().value, 0.0);
        assert_eq!(subgaussian_norm(&DistributionSpec::<f64>::rademacher()).unwrap().value, 1.0);
        let u = subgaussian_norm(&DistributionSpec::uniform(-1.0, 3.0).unwrap()).unwrap();
        assert_eq!(u.value, 2.0);
        assert_eq!(u.direction, BoundDirection::UpperBound);
    }

    #[test]
    fn exponential_is_not_subgaussian() {
        let e = DistributionSpec::exponential(1.0).unwrap();
        assert!(matches!(subgaussian_norm(&e), Err(Error::UnsupportedDistribution(_))));
    }

    #[test]
    fn custom_without_mgf_is_unsupported() {
        let c = DistributionSpec::custom(CustomDistribution {
            name: "opaque".into(),
            mean: 0.0,
            second_moment: 1.0,
            subgauss_tau: None,
            sampler: Arc::new(|_: &mut Stream| 0.0),
            log_mgf_centered: None,
            log_abs_moment: None,
        })
        .unwrap();
        assert!(matches!(subgaussian_norm(&c), Err(Error::UnsupportedDistribution(_))));
        assert!(matches!(subexponential_norm(&c, 5), Err(Error::UnsupportedDistribution(_))));
    }

    #[test]
    fn custom_rademacher_grid_norm_is_a_lower_bound_near_one() {
        // ln cosh supplied as a black box; the grid sup must not exceed 1.
        let c = DistributionSpec::custom(CustomDistribution {
            name: "rademacher-by-mgf".into(),
            mean: 0.0,
            second_moment: 1.0,
            subgauss_tau: None,
            sampler: Arc::new(|_: &mut Stream| 1.0),
            log_mgf_centered: Some(Arc::new(|l: f64| l.cosh().ln())),
            log_abs_moment: None,
        })
        .unwrap();
        let est = subgaussian_norm(&c).unwrap();
        assert_eq!(est.direction, BoundDirection::LowerBound);
        assert!(est.value <= 1.0 + 1e-9);
        assert!(est.value > 0.999);
    }

    #[test]
    fn rademacher_grid_sup_oracle() {
        // independent oracle: sqrt(2 ln cosh l)/|l| on [-10, 10]
        let sup = (-1000..=1000)
            .filter(|i| *i != 0)
            .map(|i| {
                let l = i as f64 / 100.0;
                (2.0 * l.cosh().ln()).sqrt() / l.abs()
            })
            .fold(0.0, f64::max);
        assert!(sup <= 1.0 + 1e-9);
    }

    #[test]
    fn subexponential_norm_examples() {
        let e = DistributionSpec::exponential(1.0).unwrap();
        assert_relative_eq!(subexponential_norm(&e, 50).unwrap().value, 1.0, epsilon = 1e-12);
        let c = DistributionSpec::constant(3.0);
        let n = subexponential_norm(&c, 20).unwrap();
        assert_relative_eq!(n.value, 3.0, epsilon = 1e-12);
        assert_eq!(n.k_at_max, 1);
        assert!(matches!(subexponential_norm(&c, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn square_of_gaussian_subexponential_norm() {
        // E (Z^2)^k = (2k-1)!!
        let chi = DistributionSpec::custom(CustomDistribution {
            name: "gaussian-square".into(),
            mean: 1.0,
            second_moment: 3.0,
            subgauss_tau: None,
            sampler: Arc::new(|r: &mut Stream| {
                let z: f64 = r.sample(StandardNormal);
                z * z
            }),
            log_mgf_centered: None,
            log_abs_moment: Some(Arc::new(|k: u32| (1..=k).map(|j| ((2 * j - 1) as f64).ln()).sum())),
        })
        .unwrap();
        let n = subexponential_norm(&chi, 60).unwrap();
        assert!(n.value > 1.9 && n.value <= 2.0, "{}", n.value);
        // mpmath: max_k<=60 ((2k-1)!!/k!)^(1/k) = 1.91449428153187...
        assert_relative_eq!(n.value, 1.914_494_281_531_870_6, epsilon = 1e-10);
        // product rule bound 2 tau^2 with tau = 1
        assert!(n.value <= norm_calculus(NormOp::Product, &[1.0, 1.0]).unwrap());
    }

    #[test]
    fn centered_exponential_moments_respect_centering() {
        let c = DistributionSpec::<f64>::centered_exponential(1.0).unwrap();
        let n = subexponential_norm(&c, 50).unwrap();
        assert!(n.value <= 1.0 + 1e-12);
        // E|E1 - 1| = 2/e
        assert_relative_eq!(c.log_abs_moment(1).unwrap().exp(), 2.0 / std::f64::consts::E, epsilon = 1e-12);
        // E(E1 - 1)^2 = 1
        assert_relative_eq!(c.log_abs_moment(2).unwrap().exp(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_abs_moments_closed_form_and_quadrature_agree() {
        let k = 7;
        let g0 = DistributionSpec::gaussian(0.0, 1.5).unwrap();
        let closed = g0.log_abs_moment(k).unwrap();
        let quad = log_abs_moment_gaussian_quadrature(0.0, 1.5, k);
        assert_relative_eq!(closed, quad, epsilon = 1e-9);
        // non-central: E X^2 = mu^2 + sd^2
        let g = DistributionSpec::<f64>::gaussian(3.0, 2.0).unwrap();
        assert_relative_eq!(g.log_abs_moment(2).unwrap().exp(), 13.0, epsilon = 1e-9);
    }

    #[test]
    fn uniform_abs_moments() {
        let u = DistributionSpec::<f64>::uniform(-1.0, 2.0).unwrap();
        // E|X| = (1/2 + 2) / 3
        assert_relative_eq!(u.log_abs_moment(1).unwrap().exp(), 2.5 / 3.0, epsilon = 1e-12);
        let v = DistributionSpec::<f64>::uniform(1.0, 3.0).unwrap();
        // E X^2 = (27 - 1) / (3 * 2)
        assert_relative_eq!(v.log_abs_moment(2).unwrap().exp(), 26.0 / 6.0, epsilon = 1e-12);
        assert_relative_eq!(v.second_moment(), 26.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn mgf_check_examples() {
        let sigma = 1.7;
        let g = DistributionSpec::gaussian(0.0, sigma).unwrap();
        let grid = standard_lambda_grid(sigma);
        assert!(mgf_domination_check(&g, sigma, &grid).unwrap().pass);
        for l in [-3.0, -0.1, 0.2, 4.0] {
            assert!(!mgf_domination_check(&g, sigma / 2.0, &[l]).unwrap().pass);
        }
        let r = DistributionSpec::<f64>::rademacher();
        let step: Vec<f64> = (-50..=50).map(|i| i as f64 / 10.0).collect();
        assert!(mgf_domination_check(&r, 1.0, &step).unwrap().pass);
        assert!(matches!(mgf_domination_check(&r, 1.0, &[]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn builtins_pass_at_declared_tau() {
        for d in builtin_distributions::<f64>() {
            let tau = d.subgauss_tau().unwrap();
            let check = mgf_domination_check(&d, tau, &standard_lambda_grid(tau)).unwrap();
            assert!(check.pass, "{} failed: {check:?}", d.label());
        }
    }

    #[test]
    fn standard_grid_shape() {
        let g = standard_lambda_grid(2.0f64);
        assert_eq!(g.len(), 402);
        assert!(g.iter().all(|x| *x != 0.0));
        assert_relative_eq!(g[0], -5.0);
        assert_relative_eq!(*g.last().unwrap(), 5.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn bernstein_examples() {
        let b = bernstein_tail(0.0, 1.0, 10).unwrap();
        assert_eq!((b.raw_value, b.clamped_value), (2.0, 1.0));
        let b = bernstein_tail(2.0, 1.0, 1).unwrap();
        assert_relative_eq!(b.raw_value, 1.213_061_319_425_266_8, epsilon = 1e-15);
        assert_eq!(b.clamped_value, 1.0);
        let b = bernstein_tail(50.0, 1.0, 100).unwrap();
        assert_relative_eq!(b.raw_value, 0.013_475_893_998_170_934, epsilon = 1e-15);
        assert_relative_eq!(b.c_star, 50.0 / 250.0);
        assert_eq!(bernstein_tail(3.0, 0.0, 5).unwrap().raw_value, 0.0);
        assert!(bernstein_tail(1.0, 1.0, 0).is_err());
        assert!(bernstein_tail(-1.0, 1.0, 3).is_err());
    }

    #[test]
    fn norm_calculus_examples() {
        assert_eq!(norm_calculus(NormOp::Rotation, &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(norm_calculus(NormOp::Product, &[1.0, 1.0]).unwrap(), 2.0);
        assert_eq!(norm_calculus(NormOp::Centering, &[7.0]).unwrap(), 7.0);
        assert_eq!(norm_calculus(NormOp::BoundedFactor, &[0.5]).unwrap(), 0.5);
        assert!(norm_calculus(NormOp::Product, &[1.0]).is_err());
        assert!(norm_calculus(NormOp::Centering, &[1.0, 2.0]).is_err());
        assert!(norm_calculus::<f64>(NormOp::Rotation, &[]).is_err());
    }

    #[test]
    fn works_in_f32() {
        let b = bernstein_tail(50.0f32, 1.0, 100).unwrap();
        assert!((b.raw_value - 0.013_475_894).abs() < 1e-6);
        assert_eq!(subgaussian_norm(&DistributionSpec::gaussian(0.0f32, 2.0).unwrap()).unwrap().value, 2.0);
    }

    #[test]
    fn sampler_is_deterministic() {
        let d = DistributionSpec::<f64>::standard_gaussian();
        let mut a = TrialStreams::new(3, 4).samples();
        let mut b = TrialStreams::new(3, 4).samples();
        let xs: Vec<f64> = (0..16).map(|_| d.sample(&mut a)).collect();
        let ys: Vec<f64> = (0..16).map(|_| d.sample(&mut b)).collect();
        assert_eq!(xs, ys);
    }

    proptest! {
        #[test]
        fn bernstein_monotone(t in 0.01f64..100.0, dt in 0.01f64..10.0, l in 0.01f64..10.0, dl in 0.01f64..5.0, m in 1usize..500) {
            let base = bernstein_tail(t, l, m).unwrap().raw_value;
            prop_assert!(bernstein_tail(t + dt, l, m).unwrap().raw_value < base || base == 0.0);
            prop_assert!(bernstein_tail(t, l + dl, m).unwrap().raw_value > base || base == 2.0);
        }

        #[test]
        fn piecewise_route_matches_closed_form(t in 0.0f64..200.0, l in 0.01f64..5.0, m in 1usize..300) {
            let closed = bernstein_tail(t, l, m).unwrap().raw_value;
            let pieced = bernstein_tail_from_norms(t, &vec![l; m]).unwrap();
            // compare exponents: the piecewise form carries 1 - c, which loses
            // digits when c is close to 1
            if closed == 0.0 || pieced == 0.0 {
                prop_assert!(closed < 1e-290 && pieced < 1e-290, "{closed} vs {pieced}");
            } else {
                let (lc, lp) = ((closed / 2.0).ln(), (pieced / 2.0).ln());
                prop_assert!((lc - lp).abs() <= 1e-12 * lc.abs().max(1.0), "{closed} vs {pieced}");
            }
        }

        #[test]
        fn rotation_of_repeated_norm(tau in 0.0f64..10.0, m in 1usize..200) {
            let r = norm_calculus(NormOp::Rotation, &vec![tau; m]).unwrap();
            prop_assert!((r - tau * (m as f64).sqrt()).abs() <= 1e-12 * (1.0 + r));
        }

        #[test]
        fn subexp_norm_monotone_in_k_max(k in 1u32..60, sd in 0.1f64..3.0) {
            let d = DistributionSpec::gaussian(0.0, sd).unwrap();
            let a = subexponential_norm(&d, k).unwrap().value;
            let b = subexponential_norm(&d, k + 1).unwrap().value;
            prop_assert!(b >= a);
        }
    }
}
