//! Reproducible Monte Carlo harness for the error probability
//! `P(|estimate - f(s)| >= eps)` and for the Bernstein tail bound.
//!
//! Trial `i` of a plan draws everything from `TrialStreams::new(master_seed, i)`,
//! so results do not depend on execution order or thread count. Per-trial
//! outcomes are collected in trial order and reduced serially.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::beta::beta_reg;

use crate::bounds::{error_bound, BoundReport};
use crate::channel::ChannelConfig;
use crate::concentration::{bernstein_tail, DistributionSpec};
use crate::error::{invalid, Error, Result};
use crate::fmon::{evaluate, FmonSpec};
use crate::rng::{derive_seed, TrialStreams};
use crate::scalar::Scalar;
use crate::scheme::{Estimator, Scratch};

/// How the input point `s` of a plan is chosen.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputStrategy<T> {
    /// Every component at its minimiser (all transmitters silent).
    AllMin,
    /// Every component at its maximiser (full power everywhere).
    AllMax,
    /// Uniform over each component domain, drawn once per plan from the input lane.
    Random,
    Point(Vec<T>),
}

impl<T: Scalar> InputStrategy<T> {
    pub fn label(&self) -> &'static str {
        match self {
            InputStrategy::AllMin => "all-min",
            InputStrategy::AllMax => "all-max",
            InputStrategy::Random => "random",
            InputStrategy::Point(_) => "point",
        }
    }

    pub fn resolve(&self, spec: &FmonSpec<T>, master_seed: u64) -> Result<Vec<T>> {
        match self {
            InputStrategy::AllMin => Ok(spec.inners.iter().map(|f| f.min_point()).collect()),
            InputStrategy::AllMax => Ok(spec.inners.iter().map(|f| f.max_point()).collect()),
            InputStrategy::Random => {
                let mut rng = TrialStreams::new(master_seed, 0).input();
                spec.inners
                    .iter()
                    .map(|f| {
                        if !f.domain.is_bounded() {
                            return invalid("random inputs need bounded component domains");
                        }
                        let u = T::lit(rng.random::<f64>());
                        Ok(f.domain.clamp(f.domain.lo + u * f.domain.width()))
                    })
                    .collect()
            }
            InputStrategy::Point(s) => {
                if s.len() != spec.k() {
                    return Err(Error::Shape(format!("input point has {} entries, K = {}", s.len(), spec.k())));
                }
                Ok(s.clone())
            }
        }
    }
}

impl<T: Scalar> FromStr for InputStrategy<T> {
    type Err = Error;

    /// `all-min`, `all-max`, `random`, or a comma-separated point.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all-min" => Ok(InputStrategy::AllMin),
            "all-max" => Ok(InputStrategy::AllMax),
            "random" => Ok(InputStrategy::Random),
            other => other
                .split(',')
                .map(|v| v.trim().parse::<f64>().map(T::lit))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(InputStrategy::Point)
                .map_err(|_| {
                    Error::InvalidArgument(format!(
                        "unknown input strategy {other:?}; expected all-min, all-max, random or a comma-separated point"
                    ))
                }),
        }
    }
}

impl<T: Scalar> fmt::Display for InputStrategy<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputStrategy::Point(s) => {
                let parts: Vec<String> = s.iter().map(|v| v.to_string()).collect();
                f.write_str(&parts.join(","))
            }
            other => f.write_str(other.label()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Serial,
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialMode {
    /// Run the full scheme in every trial.
    Pipeline,
    /// Replace each trial by a Bernoulli(`p`) exceedance; checks the counting
    /// and confidence machinery against a known probability.
    Injected { p: f64 },
}

#[derive(Debug, Clone)]
pub struct TrialPlan<T: Scalar> {
    pub spec: FmonSpec<T>,
    pub config: ChannelConfig<T>,
    pub input: InputStrategy<T>,
    pub eps: T,
    pub trials: u64,
    pub master_seed: u64,
    pub confidence_level: f64,
    pub execution: Execution,
    pub mode: TrialMode,
}

impl<T: Scalar> TrialPlan<T> {
    pub fn new(spec: FmonSpec<T>, config: ChannelConfig<T>, input: InputStrategy<T>, eps: T, trials: u64) -> Self {
        Self {
            spec,
            config,
            input,
            eps,
            trials,
            master_seed: 0,
            confidence_level: 0.95,
            execution: Execution::Parallel,
            mode: TrialMode::Pipeline,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return invalid("trials must be at least 1");
        }
        if !(self.eps > T::zero()) {
            return invalid(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.confidence_level > 0.0 && self.confidence_level < 1.0) {
            return invalid(format!("confidence level must lie in (0, 1), got {}", self.confidence_level));
        }
        if let TrialMode::Injected { p } = self.mode {
            if !(0.0..=1.0).contains(&p) {
                return invalid(format!("injected probability must lie in [0, 1], got {p}"));
            }
        }
        if self.spec.k() != self.config.k {
            return Err(Error::Shape(format!(
                "function has K = {}, channel has K = {}",
                self.spec.k(),
                self.config.k
            )));
        }
        self.config.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalTail {
    pub exceed_count: u64,
    pub trials: u64,
    pub point_estimate: f64,
    /// One-sided Clopper-Pearson upper limit at the plan's confidence level.
    pub upper_confidence: f64,
    pub theory_bound_raw: f64,
    pub theory_bound_clamped: f64,
    pub input: Vec<f64>,
    pub target: f64,
    /// Sample mean of the corrected linear statistic.
    pub h_mean: f64,
    pub h_std_error: f64,
    pub mean_abs_error: f64,
    /// Trials whose statistic had to be clamped into the outer domain.
    pub clamped_count: u64,
}

#[derive(Debug, Clone, Copy)]
struct Outcome {
    exceed: bool,
    h: f64,
    abs_err: f64,
    clamped: bool,
}

fn run_trials<S, F>(trials: u64, execution: Execution, f: F) -> Result<Vec<Outcome>>
where
    S: Default + Send,
    F: Fn(u64, &mut S) -> Result<Outcome> + Sync,
{
    match execution {
        Execution::Serial => {
            let mut scratch = S::default();
            (0..trials).map(|i| f(i, &mut scratch)).collect()
        }
        Execution::Parallel => (0..trials).into_par_iter().map_init(S::default, |s, i| f(i, s)).collect(),
    }
}

fn trial_outcomes<T: Scalar>(plan: &TrialPlan<T>, s: &[T], target: T) -> Result<Vec<Outcome>> {
    let seed = plan.master_seed;
    match plan.mode {
        TrialMode::Injected { p } => run_trials(plan.trials, plan.execution, |i, _: &mut ()| {
            let exceed = TrialStreams::new(seed, i).injection().random::<f64>() < p;
            Ok(Outcome { exceed, h: 0.0, abs_err: 0.0, clamped: false })
        }),
        TrialMode::Pipeline => {
            let est = Estimator::new(&plan.spec, &plan.config, s)?;
            run_trials(plan.trials, plan.execution, |i, scratch: &mut Scratch<T>| {
                let d = est.run(&TrialStreams::new(seed, i), scratch)?;
                let err = (d.estimate - target).abs();
                Ok(Outcome {
                    exceed: err >= plan.eps,
                    h: d.h_corrected.to_f64_lossy(),
                    abs_err: err.to_f64_lossy(),
                    clamped: d.clamped,
                })
            })
        }
    }
}

pub fn estimate_tail<T: Scalar>(plan: &TrialPlan<T>) -> Result<EmpiricalTail> {
    plan.validate()?;
    let s = plan.input.resolve(&plan.spec, plan.master_seed)?;
    let target = evaluate(&plan.spec, &s)?;
    let bound = error_bound(&plan.spec, &plan.config.bound_params(), plan.eps)?;
    let outcomes = trial_outcomes(plan, &s, target)?;

    let n = plan.trials as f64;
    let exceed_count = outcomes.iter().filter(|o| o.exceed).count() as u64;
    let clamped_count = outcomes.iter().filter(|o| o.clamped).count() as u64;
    let h_mean = outcomes.iter().map(|o| o.h).sum::<f64>() / n;
    let ss: f64 = outcomes.iter().map(|o| (o.h - h_mean).powi(2)).sum();
    let h_std_error = if plan.trials > 1 { (ss / (n - 1.0) / n).sqrt() } else { f64::NAN };
    let mean_abs_error = outcomes.iter().map(|o| o.abs_err).sum::<f64>() / n;
    Ok(EmpiricalTail {
        exceed_count,
        trials: plan.trials,
        point_estimate: exceed_count as f64 / n,
        upper_confidence: clopper_upper(exceed_count, plan.trials, plan.confidence_level)?,
        theory_bound_raw: bound.total_raw.to_f64_lossy(),
        theory_bound_clamped: bound.total_clamped.to_f64_lossy(),
        input: s.iter().map(|v| v.to_f64_lossy()).collect(),
        target: target.to_f64_lossy(),
        h_mean,
        h_std_error,
        mean_abs_error,
        clamped_count,
    })
}

fn check_binomial(count: u64, n: u64, level: f64) -> Result<()> {
    if n == 0 || count > n {
        return invalid(format!("need 0 <= count <= n and n >= 1, got count {count}, n {n}"));
    }
    if !(level > 0.0 && level < 1.0) {
        return invalid(format!("confidence level must lie in (0, 1), got {level}"));
    }
    Ok(())
}

/// Solves `beta_reg(a, b, x) = target` for `x` by bisection; the regularised
/// incomplete beta is increasing in `x`.
fn beta_quantile(a: f64, b: f64, target: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if beta_reg(a, b, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Exact one-sided upper confidence limit for a binomial proportion.
pub fn clopper_upper(count: u64, n: u64, level: f64) -> Result<f64> {
    check_binomial(count, n, level)?;
    if count == n {
        return Ok(1.0);
    }
    Ok(beta_quantile(count as f64 + 1.0, (n - count) as f64, level))
}

/// Exact one-sided lower confidence limit for a binomial proportion.
pub fn clopper_lower(count: u64, n: u64, level: f64) -> Result<f64> {
    check_binomial(count, n, level)?;
    if count == 0 {
        return Ok(0.0);
    }
    Ok(beta_quantile(count as f64, (n - count) as f64 + 1.0, 1.0 - level))
}

/// Parameter grid of a sweep; empty axes keep the base plan's value.
#[derive(Debug, Clone, Default)]
pub struct SweepGrid<T> {
    pub m: Vec<usize>,
    pub k: Vec<usize>,
    pub eps: Vec<T>,
    pub inputs: Vec<InputStrategy<T>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow<T> {
    pub k: usize,
    pub m: usize,
    pub eps: T,
    pub s_strategy: String,
    pub seed: u64,
    pub bound: BoundReport<T>,
    pub tail: EmpiricalTail,
}

/// Builds the function for a given `K` when the grid varies `K`.
pub type SpecFactory<'a, T> = &'a dyn Fn(usize) -> Result<FmonSpec<T>>;

/// Runs every grid cell (order: K, M, eps, input; last axis fastest). Row `i`
/// uses seed `derive_seed(base.master_seed, i)`.
pub fn sweep<T: Scalar>(
    base: &TrialPlan<T>,
    grid: &SweepGrid<T>,
    factory: Option<SpecFactory<'_, T>>,
) -> Result<Vec<SweepRow<T>>> {
    let or_base = |v: &Vec<_>, b| if v.is_empty() { vec![b] } else { v.clone() };
    let ks = or_base(&grid.k, base.config.k);
    let ms = or_base(&grid.m, base.config.m);
    let epss = if grid.eps.is_empty() { vec![base.eps] } else { grid.eps.clone() };
    let inputs = if grid.inputs.is_empty() { vec![base.input.clone()] } else { grid.inputs.clone() };
    if grid.m.is_empty() && grid.k.is_empty() && grid.eps.is_empty() && grid.inputs.is_empty() {
        return invalid("sweep grid is empty");
    }
    let mut rows = Vec::new();
    for &k in &ks {
        let spec = if k == base.spec.k() {
            base.spec.clone()
        } else {
            match factory {
                Some(f) => f(k)?,
                None => return invalid("sweeping K needs a function factory"),
            }
        };
        for &m in &ms {
            let config = base.config.with_k(k)?.with_m(m)?;
            for &eps in &epss {
                for input in &inputs {
                    let seed = derive_seed(base.master_seed, rows.len() as u64);
                    let plan = TrialPlan {
                        spec: spec.clone(),
                        config: config.clone(),
                        input: input.clone(),
                        eps,
                        master_seed: seed,
                        ..base.clone()
                    };
                    let bound = error_bound(&spec, &config.bound_params(), eps)?;
                    let tail = estimate_tail(&plan)?;
                    rows.push(SweepRow { k, m, eps, s_strategy: input.to_string(), seed, bound, tail });
                }
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BernsteinRow {
    pub t: f64,
    pub exceed_count: u64,
    pub samples: u64,
    pub empirical: f64,
    /// One-sided 99% Clopper-Pearson lower limit of the tail probability.
    pub lower_confidence: f64,
    pub bound: f64,
    pub pass: bool,
}

const SUM_CHUNK: usize = 4096;

/// `|X_1 + ... + X_M|` for `samples` independent rows, generated chunk-parallel
/// on the sample lane.
fn abs_sums<T: Scalar>(dist: &DistributionSpec<T>, m: usize, samples: usize, seed: u64) -> Vec<f64> {
    let mean = dist.mean();
    let chunks = samples.div_ceil(SUM_CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = TrialStreams::new(seed, c as u64).samples();
            let len = SUM_CHUNK.min(samples - c * SUM_CHUNK);
            (0..len)
                .map(|_| {
                    let mut acc = T::zero();
                    for _ in 0..m {
                        acc += dist.sample(&mut rng) - mean;
                    }
                    acc.abs().to_f64_lossy()
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Compares the empirical tail of `|sum of M centred draws|` with the
/// Bernstein bound for summands of sub-exponential norm at most `l`. A row
/// passes when the 99% lower confidence limit does not exceed the bound.
pub fn bernstein_selfcheck<T: Scalar>(
    dist: &DistributionSpec<T>,
    l: T,
    m: usize,
    t_grid: &[T],
    samples: usize,
    seed: u64,
) -> Result<Vec<BernsteinRow>> {
    if samples == 0 {
        return invalid("need at least one sample");
    }
    let sums = abs_sums(dist, m, samples, seed);
    t_grid
        .iter()
        .map(|&t| {
            let bound = bernstein_tail(t, l, m)?.clamped_value.to_f64_lossy();
            let tf = t.to_f64_lossy();
            let exceed_count = sums.iter().filter(|&&x| x >= tf).count() as u64;
            let n = samples as u64;
            let lower = clopper_lower(exceed_count, n, 0.99)?;
            Ok(BernsteinRow {
                t: tf,
                exceed_count,
                samples: n,
                empirical: exceed_count as f64 / samples as f64,
                lower_confidence: lower,
                bound,
                pass: lower <= bound,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fmon::{make_builtin, BuiltinKind};
    use approx::assert_relative_eq;

    fn sum_plan(k: usize, m: usize, trials: u64) -> TrialPlan<f64> {
        TrialPlan::new(
            make_builtin(BuiltinKind::Sum, k).unwrap(),
            ChannelConfig::gaussian(k, m, 1.0, 1.0).unwrap(),
            InputStrategy::AllMax,
            0.5,
            trials,
        )
    }

    #[test]
    fn clopper_reference_values() {
        assert_relative_eq!(clopper_upper(0, 100, 0.95).unwrap(), 0.029_513_049_607_039_934, max_relative = 1e-10);
        assert_relative_eq!(clopper_upper(0, 100, 0.95).unwrap(), 1.0 - 0.05f64.powf(0.01), max_relative = 1e-10);
        assert_relative_eq!(clopper_upper(5, 100, 0.95).unwrap(), 0.102_253_377_643_274_51, max_relative = 1e-10);
        assert_eq!(clopper_upper(100, 100, 0.95).unwrap(), 1.0);
        assert_eq!(clopper_lower(0, 100, 0.95).unwrap(), 0.0);
    }

    #[test]
    fn clopper_bracket_point_estimate() {
        for (c, n) in [(1, 10), (3, 7), (50, 100), (999, 1000)] {
            let p = c as f64 / n as f64;
            assert!(clopper_upper(c, n, 0.9).unwrap() >= p);
            assert!(clopper_lower(c, n, 0.9).unwrap() <= p);
        }
    }

    #[test]
    fn clopper_rejects_bad_input() {
        assert!(clopper_upper(5, 4, 0.95).is_err());
        assert!(clopper_upper(0, 0, 0.95).is_err());
        assert!(clopper_upper(1, 4, 1.0).is_err());
    }

    #[test]
    fn zero_trials_rejected() {
        assert!(matches!(estimate_tail(&sum_plan(2, 10, 0)), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn serial_and_parallel_agree() {
        let mut plan = sum_plan(3, 50, 400);
        plan.eps = 0.8;
        plan.master_seed = 5;
        let par = estimate_tail(&plan).unwrap();
        plan.execution = Execution::Serial;
        let ser = estimate_tail(&plan).unwrap();
        assert_eq!(par, ser);
        assert!(par.exceed_count > 0 && par.exceed_count < 400);
        assert!(par.upper_confidence >= par.point_estimate);
    }

    #[test]
    fn injected_mode_hits_probability() {
        let mut plan = sum_plan(1, 1, 20_000);
        plan.mode = TrialMode::Injected { p: 0.1 };
        let r = estimate_tail(&plan).unwrap();
        assert!((r.point_estimate - 0.1).abs() < 4.0 * (0.09f64 / 20_000.0).sqrt());
    }

    #[test]
    fn random_strategy_is_seeded() {
        let spec = make_builtin::<f64>(BuiltinKind::Pnorm { p: 2.0 }, 4).unwrap();
        let a = InputStrategy::Random.resolve(&spec, 1).unwrap();
        assert_eq!(a, InputStrategy::Random.resolve(&spec, 1).unwrap());
        assert_ne!(a, InputStrategy::Random.resolve(&spec, 2).unwrap());
        assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn strategy_parsing() {
        assert_eq!("all-min".parse::<InputStrategy<f64>>().unwrap(), InputStrategy::AllMin);
        assert_eq!("0.5, 1".parse::<InputStrategy<f64>>().unwrap(), InputStrategy::Point(vec![0.5, 1.0]));
        assert!("nope".parse::<InputStrategy<f64>>().is_err());
        assert_eq!(InputStrategy::Point(vec![0.5, 1.0]).to_string(), "0.5,1");
    }

    #[test]
    fn sweep_over_inputs_keeps_bounds() {
        let base = sum_plan(2, 20, 50);
        let grid = SweepGrid {
            inputs: vec![InputStrategy::AllMin, InputStrategy::AllMax, InputStrategy::Random],
            ..Default::default()
        };
        let rows = sweep(&base, &grid, None).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.windows(2).all(|w| w[0].seed != w[1].seed && w[0].bound == w[1].bound));
    }

    #[test]
    fn sweep_over_m_bound_decreases() {
        let base = sum_plan(2, 20, 20);
        let grid = SweepGrid { m: vec![100, 1000, 10_000], ..Default::default() };
        let rows = sweep(&base, &grid, None).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.windows(2).all(|w| w[1].bound.total_raw < w[0].bound.total_raw));
        assert!(sweep(&base, &SweepGrid::default(), None).is_err());
    }

    #[test]
    fn bernstein_zero_deviation_row() {
        let d = DistributionSpec::<f64>::rademacher();
        let rows = bernstein_selfcheck(&d, 1.0, 10, &[0.0, 30.0], 1000, 3).unwrap();
        assert_eq!(rows[0].bound, 1.0);
        assert!(rows.iter().all(|r| r.pass));
    }
}
