//! Nomographic functions `f(s) = F(sum_k f_k(s_k))` whose outer part is
//! dominated by a strictly increasing increment majorant `Phi`:
//! `|F(x) - F(y)| <= Phi(|x - y|)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::Serialize;

use crate::concentration::ScalarFn;
use crate::error::{invalid, Error, Result};
use crate::rng::stream;
use crate::scalar::Scalar;

/// Samples used when auditing declared extrema and the majorant.
pub const AUDIT_SAMPLES: usize = 10_000;
const EXTREMUM_GRID: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Scalar> Interval<T> {
    pub fn new(lo: T, hi: T) -> Result<Self> {
        if !(lo <= hi) {
            return invalid(format!("empty interval [{lo}, {hi}]"));
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, x: T) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn clamp(&self, x: T) -> T {
        x.max(self.lo).min(self.hi)
    }

    pub fn width(&self) -> T {
        self.hi - self.lo
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }
}

#[derive(Clone)]
pub enum InnerKind<T> {
    Identity,
    /// `s -> |s|^p`
    AbsPow(T),
    Custom(ScalarFn<T>),
}

impl<T: Scalar> InnerKind<T> {
    pub fn eval(&self, s: T) -> T {
        match self {
            InnerKind::Identity => s,
            InnerKind::AbsPow(p) => s.abs().powf(*p),
            InnerKind::Custom(f) => f(s),
        }
    }
}

/// One inner function `f_k` with its domain and declared range `[phi_min, phi_max]`.
#[derive(Clone)]
pub struct InnerFunction<T> {
    pub kind: InnerKind<T>,
    pub domain: Interval<T>,
    pub phi_min: T,
    pub phi_max: T,
    /// Points where the extrema are attained, when known.
    pub argmin: Option<T>,
    pub argmax: Option<T>,
}

impl<T: Scalar> fmt::Debug for InnerFunction<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InnerFunction")
            .field("domain", &self.domain)
            .field("phi_min", &self.phi_min)
            .field("phi_max", &self.phi_max)
            .finish_non_exhaustive()
    }
}

impl<T: Scalar> InnerFunction<T> {
    pub fn new(kind: InnerKind<T>, domain: Interval<T>, phi_min: T, phi_max: T) -> Result<Self> {
        if !domain.is_bounded() {
            return invalid("inner function domains must be bounded");
        }
        if !(phi_min.is_finite() && phi_max.is_finite() && phi_min <= phi_max) {
            return invalid(format!("inner range [{phi_min}, {phi_max}] must be finite and ordered"));
        }
        Ok(Self { kind, domain, phi_min, phi_max, argmin: None, argmax: None })
    }

    pub fn with_extreme_points(mut self, argmin: T, argmax: T) -> Self {
        self.argmin = Some(argmin);
        self.argmax = Some(argmax);
        self
    }

    pub fn eval(&self, s: T) -> T {
        self.kind.eval(s)
    }

    pub fn spread(&self) -> T {
        self.phi_max - self.phi_min
    }

    fn grid_extreme(&self, maximize: bool) -> T {
        let n = EXTREMUM_GRID;
        let mut best_s = self.domain.lo;
        let mut best = self.eval(best_s);
        for i in 1..n {
            let s = self.domain.lo + self.domain.width() * T::from_usize_lossy(i) / T::from_usize_lossy(n - 1);
            let v = self.eval(s);
            if (maximize && v > best) || (!maximize && v < best) {
                best = v;
                best_s = s;
            }
        }
        best_s
    }

    /// A domain point minimising `f_k` (stored, else grid search).
    pub fn min_point(&self) -> T {
        self.argmin.unwrap_or_else(|| self.grid_extreme(false))
    }

    pub fn max_point(&self) -> T {
        self.argmax.unwrap_or_else(|| self.grid_extreme(true))
    }
}

#[derive(Clone)]
pub enum OuterKind<T> {
    Identity,
    /// `x -> c x`
    Scale(T),
    /// `x -> x^(1/p)`
    Root(T),
    Custom(ScalarFn<T>),
}

impl<T: Scalar> OuterKind<T> {
    pub fn eval(&self, x: T) -> T {
        match self {
            OuterKind::Identity => x,
            OuterKind::Scale(c) => *c * x,
            OuterKind::Root(p) => x.max(T::zero()).powf(p.recip()),
            OuterKind::Custom(f) => f(x),
        }
    }
}

/// Increment majorant `Phi: [0, inf) -> [0, inf)`.
#[derive(Clone)]
pub enum Majorant<T> {
    /// `x -> b x`
    Linear(T),
    /// `x -> x^(1/p)`
    Root(T),
    Custom { phi: ScalarFn<T>, inverse: Option<ScalarFn<T>> },
}

impl<T: Scalar> Majorant<T> {
    pub fn eval(&self, x: T) -> T {
        match self {
            Majorant::Linear(b) => *b * x,
            Majorant::Root(p) => x.powf(p.recip()),
            Majorant::Custom { phi, .. } => phi(x),
        }
    }

    pub fn inverse(&self, y: T) -> Result<T> {
        match self {
            Majorant::Linear(b) => Ok(y / *b),
            Majorant::Root(p) => Ok(y.powf(*p)),
            Majorant::Custom { inverse: Some(inv), .. } => Ok(inv(y)),
            Majorant::Custom { inverse: None, .. } => {
                Err(Error::InvalidSpec("majorant has no inverse".into()))
            }
        }
    }
}

/// A member of the function class: inner functions, outer function `F` on
/// domain `D`, and an increment majorant.
#[derive(Clone)]
pub struct FmonSpec<T> {
    pub inners: Vec<InnerFunction<T>>,
    pub outer: OuterKind<T>,
    pub outer_domain: Interval<T>,
    pub majorant: Majorant<T>,
    pub label: String,
}

impl<T: Scalar> fmt::Debug for FmonSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FmonSpec")
            .field("label", &self.label)
            .field("k", &self.inners.len())
            .field("outer_domain", &self.outer_domain)
            .finish_non_exhaustive()
    }
}

impl<T: Scalar> FmonSpec<T> {
    pub fn new(
        inners: Vec<InnerFunction<T>>,
        outer: OuterKind<T>,
        outer_domain: Interval<T>,
        majorant: Majorant<T>,
        label: impl Into<String>,
    ) -> Result<Self> {
        if inners.is_empty() {
            return invalid("a function needs at least one inner component");
        }
        let spec = Self { inners, outer, outer_domain, majorant, label: label.into() };
        let reach = spec.inner_sum_range();
        if !(spec.outer_domain.lo <= reach.lo && reach.hi <= spec.outer_domain.hi) {
            return Err(Error::InvalidSpec(format!(
                "outer domain [{}, {}] does not contain the inner sum range [{}, {}]",
                spec.outer_domain.lo, spec.outer_domain.hi, reach.lo, reach.hi
            )));
        }
        if spec.majorant.eval(T::zero()) != T::zero() {
            return Err(Error::InvalidSpec("majorant must satisfy Phi(0) = 0".into()));
        }
        let top = reach.width().max(T::one());
        let mut prev = T::zero();
        for i in 1..=1000 {
            let x = top * T::from_usize_lossy(i) / T::lit(1000.0);
            let y = spec.majorant.eval(x);
            if !(y > prev) {
                return Err(Error::InvalidSpec(format!("majorant not strictly increasing near {x}")));
            }
            prev = y;
        }
        Ok(spec)
    }

    pub fn k(&self) -> usize {
        self.inners.len()
    }

    /// `sum_k [phi_min_k, phi_max_k]`.
    pub fn inner_sum_range(&self) -> Interval<T> {
        Interval {
            lo: self.inners.iter().map(|f| f.phi_min).sum(),
            hi: self.inners.iter().map(|f| f.phi_max).sum(),
        }
    }

    pub fn phi_min_sum(&self) -> T {
        self.inners.iter().map(|f| f.phi_min).sum()
    }

    pub fn inner_sum(&self, s: &[T]) -> Result<T> {
        if s.len() != self.k() {
            return Err(Error::Shape(format!("expected {} inputs, got {}", self.k(), s.len())));
        }
        let mut acc = T::zero();
        for (index, (f, &x)) in self.inners.iter().zip(s).enumerate() {
            if !f.domain.contains(x) {
                return Err(Error::Domain {
                    index,
                    value: x.to_f64_lossy(),
                    lo: f.domain.lo.to_f64_lossy(),
                    hi: f.domain.hi.to_f64_lossy(),
                });
            }
            acc += f.eval(x);
        }
        Ok(acc)
    }

    /// Fuzz-audits the declared extrema (domain samples must stay inside
    /// `[phi_min, phi_max]`) and the majorant inequality on sampled pairs.
    pub fn audit(&self, samples: usize, seed: u64) -> Result<()> {
        let mut rng = stream(seed, 0xA0D1, 0);
        let tol = T::lit(1e-12);
        for (index, f) in self.inners.iter().enumerate() {
            for _ in 0..samples {
                let u: f64 = rng.random();
                let s = f.domain.lo + f.domain.width() * T::lit(u);
                let v = f.eval(s);
                if v < f.phi_min - tol || v > f.phi_max + tol {
                    return Err(Error::InvalidSpec(format!(
                        "component {index}: f({s}) = {v} outside declared range [{}, {}]",
                        f.phi_min, f.phi_max
                    )));
                }
            }
        }
        let reach = self.inner_sum_range();
        for _ in 0..samples {
            let (u, v): (f64, f64) = (rng.random(), rng.random());
            let x = reach.lo + reach.width() * T::lit(u);
            let y = reach.lo + reach.width() * T::lit(v);
            let lhs = (self.outer.eval(x) - self.outer.eval(y)).abs();
            let rhs = self.majorant.eval((x - y).abs());
            if lhs > rhs + tol {
                return Err(Error::InvalidSpec(format!(
                    "majorant violated at ({x}, {y}): |F(x)-F(y)| = {lhs} > Phi = {rhs}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpreadSummary<T> {
    /// Sum of component ranges.
    pub total_spread: T,
    /// Largest component range.
    pub max_spread: T,
    /// `P * total / max`.
    pub relative_spread: T,
}

pub fn spreads<T: Scalar>(spec: &FmonSpec<T>, power: T) -> Result<SpreadSummary<T>> {
    if !(power > T::zero()) {
        return invalid(format!("power must be positive, got {power}"));
    }
    let total: T = spec.inners.iter().map(InnerFunction::spread).sum();
    let max = spec.inners.iter().map(InnerFunction::spread).fold(T::zero(), T::max);
    if max == T::zero() {
        return Err(Error::DegenerateFunction(format!(
            "{}: every inner function is constant",
            spec.label
        )));
    }
    Ok(SpreadSummary { total_spread: total, max_spread: max, relative_spread: power * total / max })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhiInverse<T> {
    pub value: T,
    /// `eps` lies beyond every reachable increment; `value` is capped at the
    /// diameter of the inner sum range.
    pub saturated: bool,
}

pub fn phi_inverse<T: Scalar>(spec: &FmonSpec<T>, eps: T) -> Result<PhiInverse<T>> {
    if !(eps > T::zero()) {
        return invalid(format!("eps must be positive, got {eps}"));
    }
    let reach = spec.inner_sum_range().width();
    let raw = spec.majorant.inverse(eps)?;
    if raw.is_nan() || raw < T::zero() {
        return Err(Error::InvalidSpec(format!("majorant inverse returned {raw} at {eps}")));
    }
    if raw >= reach && reach > T::zero() {
        return Ok(PhiInverse { value: reach, saturated: true });
    }
    Ok(PhiInverse { value: raw, saturated: false })
}

pub fn evaluate<T: Scalar>(spec: &FmonSpec<T>, s: &[T]) -> Result<T> {
    Ok(spec.outer.eval(spec.inner_sum(s)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BuiltinKind {
    Sum,
    Average,
    Pnorm { p: f64 },
    /// `B * (s_1 + ... + s_K)` with inputs in `[lo, hi]`.
    LipschitzLinear { b: f64, lo: f64, hi: f64 },
}

impl fmt::Display for BuiltinKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BuiltinKind::Sum => write!(f, "sum"),
            BuiltinKind::Average => write!(f, "average"),
            BuiltinKind::Pnorm { p } => write!(f, "pnorm:{p}"),
            BuiltinKind::LipschitzLinear { b, lo, hi } => {
                if *lo == 0.0 && *hi == 1.0 {
                    write!(f, "lipschitz_linear:{b}")
                } else {
                    write!(f, "lipschitz_linear:{b}:{lo}:{hi}")
                }
            }
        }
    }
}

impl FromStr for BuiltinKind {
    type Err = Error;

    /// `sum`, `average`, `pnorm:p`, `lipschitz_linear:B[:lo:hi]`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |x: &str| {
            x.parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad number {x:?} in function name {s:?}")))
        };
        match parts.as_slice() {
            ["sum"] => Ok(BuiltinKind::Sum),
            ["average"] => Ok(BuiltinKind::Average),
            ["pnorm", p] => Ok(BuiltinKind::Pnorm { p: num(p)? }),
            ["lipschitz_linear", b] => Ok(BuiltinKind::LipschitzLinear { b: num(b)?, lo: 0.0, hi: 1.0 }),
            ["lipschitz_linear", b, lo, hi] => {
                Ok(BuiltinKind::LipschitzLinear { b: num(b)?, lo: num(lo)?, hi: num(hi)? })
            }
            _ => invalid(format!(
                "unknown function {s:?}; expected sum, average, pnorm:p or lipschitz_linear:B"
            )),
        }
    }
}

pub fn make_builtin<T: Scalar>(kind: BuiltinKind, k: usize) -> Result<FmonSpec<T>> {
    if k == 0 {
        return invalid("K must be at least 1");
    }
    let kf = T::from_usize_lossy(k);
    let unit = Interval { lo: T::zero(), hi: T::one() };
    let identity_inners = |dom: Interval<T>| -> Result<Vec<InnerFunction<T>>> {
        let f = InnerFunction::new(InnerKind::Identity, dom, dom.lo, dom.hi)?.with_extreme_points(dom.lo, dom.hi);
        Ok(vec![f; k])
    };
    match kind {
        BuiltinKind::Sum => FmonSpec::new(
            identity_inners(unit)?,
            OuterKind::Identity,
            Interval { lo: T::zero(), hi: kf },
            Majorant::Linear(T::one()),
            kind.to_string(),
        ),
        BuiltinKind::Average => FmonSpec::new(
            identity_inners(unit)?,
            OuterKind::Scale(kf.recip()),
            Interval { lo: T::zero(), hi: kf },
            Majorant::Linear(kf.recip()),
            kind.to_string(),
        ),
        BuiltinKind::Pnorm { p } => {
            if !(p >= 1.0) {
                return invalid(format!("pnorm needs p >= 1, got {p}"));
            }
            let pt = T::lit(p);
            let dom = Interval { lo: -T::one(), hi: T::one() };
            let f = InnerFunction::new(InnerKind::AbsPow(pt), dom, T::zero(), T::one())?
                .with_extreme_points(T::zero(), T::one());
            FmonSpec::new(
                vec![f; k],
                OuterKind::Root(pt),
                Interval { lo: T::zero(), hi: kf },
                Majorant::Root(pt),
                kind.to_string(),
            )
        }
        BuiltinKind::LipschitzLinear { b, lo, hi } => {
            if !(b > 0.0) {
                return invalid(format!("Lipschitz constant must be positive, got {b}"));
            }
            let dom = Interval::new(T::lit(lo), T::lit(hi))?;
            let bt = T::lit(b);
            FmonSpec::new(
                identity_inners(dom)?,
                OuterKind::Scale(bt),
                Interval { lo: dom.lo * kf, hi: dom.hi * kf },
                Majorant::Linear(bt),
                kind.to_string(),
            )
        }
    }
}
