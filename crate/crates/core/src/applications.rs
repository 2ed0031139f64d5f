//! Calculators built on the scheme: distributed prediction with additive
//! kernel models, and the parameterisation of max-consensus over the channel.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bounds::{comm_cost, error_bound, BoundParams};
use crate::channel::ChannelConfig;
use crate::error::{invalid, Error, Result};
use crate::fmon::{make_builtin, spreads, BuiltinKind, FmonSpec, InnerFunction, InnerKind, Interval, Majorant, OuterKind};
use crate::montecarlo::clopper_upper;
use crate::rng::TrialStreams;
use crate::scalar::Scalar;
use crate::scheme::{Estimator, Scratch};

use rayon::prelude::*;

pub const DEFAULT_GRID: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel<T> {
    /// `exp(-(a - b)^2 / (2 w^2))`
    Gaussian { width: T },
    /// `a b`
    Linear,
    /// `(a b + 1)^d`
    Polynomial { degree: u32 },
}

impl<T: Scalar> Kernel<T> {
    pub fn eval(&self, a: T, b: T) -> T {
        match *self {
            Kernel::Gaussian { width } => {
                let d = a - b;
                (-(d * d) / (T::lit(2.0) * width * width)).exp()
            }
            Kernel::Linear => a * b,
            Kernel::Polynomial { degree } => (a * b + T::one()).powi(degree as i32),
        }
    }

    /// Bound on `|d/da k(a, b)|` for `|a| <= a_max`.
    fn lipschitz(&self, b: T, a_max: T) -> T {
        match *self {
            Kernel::Gaussian { width } => (T::lit(-0.5)).exp() / width,
            Kernel::Linear => b.abs(),
            Kernel::Polynomial { degree } => {
                if degree == 0 {
                    return T::zero();
                }
                let d = T::from_usize_lossy(degree as usize);
                d * b.abs() * (a_max * b.abs() + T::one()).powi(degree as i32 - 1)
            }
        }
    }
}

impl<T: Scalar> fmt::Display for Kernel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Gaussian { width } => write!(f, "gaussian:{width}"),
            Kernel::Linear => write!(f, "linear"),
            Kernel::Polynomial { degree } => write!(f, "polynomial:{degree}"),
        }
    }
}

impl<T: Scalar> FromStr for Kernel<T> {
    type Err = Error;

    /// `gaussian:width`, `linear`, `polynomial:degree`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown kernel {s:?}; expected gaussian:w, linear or polynomial:d"));
        match s.split(':').collect::<Vec<_>>().as_slice() {
            ["linear"] => Ok(Kernel::Linear),
            ["gaussian", w] => {
                let w: f64 = w.parse().map_err(|_| bad())?;
                if !(w > 0.0 && w.is_finite()) {
                    return invalid(format!("gaussian kernel width must be positive, got {w}"));
                }
                Ok(Kernel::Gaussian { width: T::lit(w) })
            }
            ["polynomial", d] => Ok(Kernel::Polynomial { degree: d.parse().map_err(|_| bad())? }),
            _ => Err(bad()),
        }
    }
}

/// `f(x) = sum_k sum_n alpha_n kernel_k(x_k, x^n_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdditiveKernelModel<T> {
    pub kernels: Vec<Kernel<T>>,
    /// `N` support points, each with `K` coordinates.
    pub supports: Vec<Vec<T>>,
    pub coefficients: Vec<T>,
    pub domains: Vec<Interval<T>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    kernels: Vec<String>,
    supports: Vec<Vec<f64>>,
    coefficients: Vec<f64>,
    domains: Vec<[f64; 2]>,
}

impl<T: Scalar> AdditiveKernelModel<T> {
    pub fn new(
        kernels: Vec<Kernel<T>>,
        supports: Vec<Vec<T>>,
        coefficients: Vec<T>,
        domains: Vec<Interval<T>>,
    ) -> Result<Self> {
        let model = Self { kernels, supports, coefficients, domains };
        model.validate()?;
        Ok(model)
    }

    pub fn k(&self) -> usize {
        self.kernels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k == 0 {
            return invalid("model needs at least one component");
        }
        if self.coefficients.is_empty() {
            return invalid("model needs at least one support point");
        }
        if self.supports.len() != self.coefficients.len() {
            return invalid(format!(
                "{} support points but {} coefficients",
                self.supports.len(),
                self.coefficients.len()
            ));
        }
        if self.domains.len() != k {
            return invalid(format!("{k} kernels but {} domains", self.domains.len()));
        }
        if let Some(n) = self.supports.iter().position(|x| x.len() != k) {
            return invalid(format!("support point {n} has {} coordinates, expected {k}", self.supports[n].len()));
        }
        if self.domains.iter().any(|d| !d.is_bounded()) {
            return invalid("component domains must be compact");
        }
        if self.coefficients.iter().chain(self.supports.iter().flatten()).any(|v| !v.is_finite()) {
            return invalid("coefficients and support points must be finite");
        }
        Ok(())
    }

    /// Parses the JSON model format
    /// `{kernels: [..], supports: [[..]], coefficients: [..], domains: [[lo, hi], ..]}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("model file: {e}")))?;
        let kernels = raw.kernels.iter().map(|s| s.parse()).collect::<Result<Vec<_>>>()?;
        let domains = raw
            .domains
            .iter()
            .map(|[lo, hi]| Interval::new(T::lit(*lo), T::lit(*hi)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            kernels,
            raw.supports.iter().map(|x| x.iter().map(|v| T::lit(*v)).collect()).collect(),
            raw.coefficients.iter().map(|v| T::lit(*v)).collect(),
            domains,
        )
    }

    pub fn to_json(&self) -> String {
        let raw = ModelFile {
            kernels: self.kernels.iter().map(|k| k.to_string()).collect(),
            supports: self.supports.iter().map(|x| x.iter().map(|v| v.to_f64_lossy()).collect()).collect(),
            coefficients: self.coefficients.iter().map(|v| v.to_f64_lossy()).collect(),
            domains: self.domains.iter().map(|d| [d.lo.to_f64_lossy(), d.hi.to_f64_lossy()]).collect(),
        };
        serde_json::to_string_pretty(&raw).expect("model serialises")
    }

    /// `f_k(x_k) = sum_n alpha_n kernel_k(x_k, x^n_k)`, no domain check.
    pub fn component(&self, k: usize, x: T) -> T {
        let kernel = self.kernels[k];
        self.coefficients.iter().zip(&self.supports).map(|(a, s)| *a * kernel.eval(x, s[k])).sum()
    }
}

pub fn additive_predict<T: Scalar>(model: &AdditiveKernelModel<T>, x: &[T]) -> Result<T> {
    if x.len() != model.k() {
        return Err(Error::Shape(format!("expected {} coordinates, got {}", model.k(), x.len())));
    }
    let mut total = T::zero();
    for (k, (&v, dom)) in x.iter().zip(&model.domains).enumerate() {
        if !dom.contains(v) {
            return Err(Error::Domain {
                index: k,
                value: v.to_f64_lossy(),
                lo: dom.lo.to_f64_lossy(),
                hi: dom.hi.to_f64_lossy(),
            });
        }
        total += model.component(k, v);
    }
    Ok(total)
}

/// Declared range of one component: grid extrema padded by the largest change
/// possible within half a grid cell. Linear kernels are exact at the domain
/// ends; gaussian ranges are also intersected with `[sum of negative alphas,
/// sum of positive alphas]`.
fn component_range<T: Scalar>(model: &AdditiveKernelModel<T>, k: usize, grid: usize) -> (T, T, T, T) {
    let dom = model.domains[k];
    let kernel = model.kernels[k];
    let f = |x: T| model.component(k, x);
    if let Kernel::Linear = kernel {
        let (a, b) = (f(dom.lo), f(dom.hi));
        return if a <= b { (a, b, dom.lo, dom.hi) } else { (b, a, dom.hi, dom.lo) };
    }
    let n = grid.max(2);
    let step = dom.width() / T::from_usize_lossy(n - 1);
    let (mut lo, mut hi) = (T::infinity(), T::neg_infinity());
    let (mut arg_lo, mut arg_hi) = (dom.lo, dom.lo);
    for i in 0..n {
        let x = if i == n - 1 { dom.hi } else { dom.lo + step * T::from_usize_lossy(i) };
        let v = f(x);
        if v < lo {
            lo = v;
            arg_lo = x;
        }
        if v > hi {
            hi = v;
            arg_hi = x;
        }
    }
    let a_max = dom.lo.abs().max(dom.hi.abs());
    let lip: T = model
        .coefficients
        .iter()
        .zip(&model.supports)
        .map(|(a, s)| a.abs() * kernel.lipschitz(s[k], a_max))
        .sum();
    let pad = lip * step / T::lit(2.0);
    let (mut lo, mut hi) = (lo - pad, hi + pad);
    if let Kernel::Gaussian { .. } = kernel {
        let neg: T = model.coefficients.iter().filter(|a| **a < T::zero()).copied().sum();
        let pos: T = model.coefficients.iter().filter(|a| **a > T::zero()).copied().sum();
        lo = lo.max(neg);
        hi = hi.min(pos);
    }
    (lo, hi, arg_lo, arg_hi)
}

/// The model as a nomographic function with identity outer function and
/// identity majorant.
pub fn model_to_fmon<T: Scalar>(model: &AdditiveKernelModel<T>, grid: usize) -> Result<FmonSpec<T>> {
    model.validate()?;
    if model.coefficients.iter().all(|a| *a == T::zero()) {
        return Err(Error::DegenerateFunction("all model coefficients are zero".into()));
    }
    let shared = Arc::new(model.clone());
    let mut inners = Vec::with_capacity(model.k());
    for k in 0..model.k() {
        let (lo, hi, arg_lo, arg_hi) = component_range(model, k, grid);
        let m = Arc::clone(&shared);
        let kind = InnerKind::Custom(Arc::new(move |x| m.component(k, x)));
        inners.push(InnerFunction::new(kind, model.domains[k], lo, hi)?.with_extreme_points(arg_lo, arg_hi));
    }
    let lo: T = inners.iter().map(|f| f.phi_min).sum();
    let hi: T = inners.iter().map(|f| f.phi_max).sum();
    let spec = FmonSpec::new(
        inners,
        OuterKind::Identity,
        Interval::new(lo, hi)?,
        Majorant::Linear(T::one()),
        "additive_kernel_model",
    )?;
    spreads(&spec, T::one())?;
    Ok(spec)
}

pub type LossFn<T> = Arc<dyn Fn(&[T], T, T) -> T + Send + Sync>;

/// A loss `L(x, y, t)` that is `B`-Lipschitz in the prediction `t`.
#[derive(Clone)]
pub struct LipschitzLoss<T> {
    pub name: String,
    pub eval: LossFn<T>,
    pub lipschitz_b: T,
}

impl<T: Scalar> fmt::Debug for LipschitzLoss<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LipschitzLoss").field("name", &self.name).field("lipschitz_b", &self.lipschitz_b).finish()
    }
}

impl<T: Scalar> LipschitzLoss<T> {
    pub fn new(name: impl Into<String>, lipschitz_b: T, eval: LossFn<T>) -> Result<Self> {
        if !(lipschitz_b > T::zero()) {
            return invalid(format!("Lipschitz constant must be positive, got {lipschitz_b}"));
        }
        Ok(Self { name: name.into(), eval, lipschitz_b })
    }

    /// `max(0, 1 - y t)` for labels `y` in `{-1, 1}`.
    pub fn hinge() -> Self {
        Self {
            name: "hinge".into(),
            eval: Arc::new(|_, y, t| (T::one() - y * t).max(T::zero())),
            lipschitz_b: T::one(),
        }
    }

    /// `scale * |y - t|`.
    pub fn absolute(scale: T) -> Result<Self> {
        Self::new("absolute", scale, Arc::new(move |_, y, t| scale * (y - t).abs()))
    }

    pub fn eval(&self, x: &[T], y: T, t: T) -> T {
        (self.eval)(x, y, t)
    }
}

impl<T: Scalar> FromStr for LipschitzLoss<T> {
    type Err = Error;

    /// `hinge` or `absolute[:scale]`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split(':').collect::<Vec<_>>().as_slice() {
            ["hinge"] => Ok(Self::hinge()),
            ["absolute"] => Self::absolute(T::one()),
            ["absolute", b] => Self::absolute(T::lit(
                b.parse().map_err(|_| Error::InvalidArgument(format!("bad loss scale {b:?}")))?,
            )),
            _ => invalid(format!("unknown loss {s:?}; expected hinge or absolute[:B]")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossDeviationReport<T> {
    pub m_required: u64,
    /// `B * eps`.
    pub loss_threshold: T,
    /// `delta`: bound on `P(|L(x, y, estimate) - L(x, y, f(x))| >= B eps)`.
    pub probability_bound: T,
    pub lipschitz_b: T,
    pub eps: T,
}

/// `M_required` for `P(|estimate - f(x)| >= eps) <= delta`, which by the
/// Lipschitz property also bounds loss deviations of at least `B eps`.
/// `grid` is the range-search grid of [`model_to_fmon`].
pub fn loss_deviation_probability<T: Scalar>(
    model: &AdditiveKernelModel<T>,
    loss: &LipschitzLoss<T>,
    params: &BoundParams<T>,
    eps: T,
    delta: T,
    grid: usize,
) -> Result<LossDeviationReport<T>> {
    let spec = model_to_fmon(model, grid)?;
    let cost = comm_cost(&spec, params, eps, delta)?;
    Ok(LossDeviationReport {
        m_required: cost.m_required,
        loss_threshold: loss.lipschitz_b * eps,
        probability_bound: delta,
        lipschitz_b: loss.lipschitz_b,
        eps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossDeviationRun {
    /// Trials with `|L(x, y, estimate) - L(x, y, f(x))| >= B eps`.
    pub loss_exceed_count: u64,
    /// Trials with `|estimate - f(x)| >= eps`.
    pub estimate_exceed_count: u64,
    pub trials: u64,
    pub point_estimate: f64,
    pub upper_confidence: f64,
}

/// Runs the scheme on the model at input `x` with label `y` and counts loss
/// deviations of at least `B eps`.
#[allow(clippy::too_many_arguments)]
pub fn loss_deviation_monte_carlo<T: Scalar>(
    spec: &FmonSpec<T>,
    loss: &LipschitzLoss<T>,
    config: &ChannelConfig<T>,
    x: &[T],
    y: T,
    eps: T,
    trials: u64,
    master_seed: u64,
) -> Result<LossDeviationRun> {
    if trials == 0 {
        return invalid("trials must be at least 1");
    }
    let est = Estimator::new(spec, config, x)?;
    let target = crate::fmon::evaluate(spec, x)?;
    let base = loss.eval(x, y, target);
    let threshold = loss.lipschitz_b * eps;
    let outcomes = (0..trials)
        .into_par_iter()
        .map_init(Scratch::default, |scratch, i| {
            let d = est.run(&TrialStreams::new(master_seed, i), scratch)?;
            let dl = (loss.eval(x, y, d.estimate) - base).abs();
            Ok((dl >= threshold, (d.estimate - target).abs() >= eps))
        })
        .collect::<Result<Vec<_>>>()?;
    let loss_exceed_count = outcomes.iter().filter(|o| o.0).count() as u64;
    let estimate_exceed_count = outcomes.iter().filter(|o| o.1).count() as u64;
    Ok(LossDeviationRun {
        loss_exceed_count,
        estimate_exceed_count,
        trials,
        point_estimate: loss_exceed_count as f64 / trials as f64,
        upper_confidence: clopper_upper(loss_exceed_count, trials, 0.95)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MaxConsensusParams {
    /// Consensus slack; must be even.
    pub m: u64,
    /// Maximum description length.
    pub d: u64,
    /// Channel uses per access.
    pub channel_uses: u64,
}

impl MaxConsensusParams {
    pub fn new(m: u64, d: u64, channel_uses: u64) -> Result<Self> {
        if m == 0 || m % 2 != 0 {
            return invalid(format!("m must be a positive even integer, got {m}"));
        }
        if channel_uses == 0 {
            return invalid("M must be at least 1");
        }
        Ok(Self { m, d, channel_uses })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MaxConsensusReport<T> {
    /// `m / 4`.
    pub eps: T,
    pub gamma_raw: T,
    pub gamma: T,
    pub success_probability_bound: T,
    pub mac_channel_uses: u64,
    pub multicast_count: u64,
}

/// Error probability of one sum estimate with `eps = m / 4` and the
/// resulting success bound `(1 - gamma)^(3 (d + 1))` over all accesses.
pub fn maxconsensus_report<T: Scalar>(
    params: &MaxConsensusParams,
    k: usize,
    power: T,
    sigma_f: T,
    sigma_n: T,
) -> Result<MaxConsensusReport<T>> {
    let m = usize::try_from(params.channel_uses).map_err(|_| Error::InvalidArgument("M too large".into()))?;
    let bp = BoundParams { k, m, power, sigma_f, sigma_n };
    let spec = make_builtin::<T>(BuiltinKind::Sum, k)?;
    let eps = T::from_usize_lossy(params.m as usize) / T::lit(4.0);
    let bound = error_bound(&spec, &bp, eps)?;
    let rounds = 3 * (params.d + 1);
    let gamma = bound.total_clamped;
    let success = (T::from_usize_lossy(rounds as usize) * (-gamma).ln_1p()).exp();
    Ok(MaxConsensusReport {
        eps,
        gamma_raw: bound.total_raw,
        gamma,
        success_probability_bound: success,
        mac_channel_uses: 3 * params.channel_uses * (params.d + 1),
        multicast_count: params.channel_uses * (params.d + 1),
    })
}
