//! Closed-form error bounds, communication cost, and the closed forms for the
//! sum, average and 2-norm functions.
//!
//! With `eta = Phi^{-1}(eps) / 2`,
//!
//! ```text
//! Gamma1 = 2 exp(-M eta^2 / (2 Delta sigma_F^2 eta + 8 Delta^2 K sigma_F^4))
//! Gamma2 = 2 exp(-M eta^2 / (2 L eta + 4 L^2))
//! L      = 3 sigma_F^2 Dbar + 4 sigma_N sigma_F sqrt(Delta Dbar / P) + 2 sigma_N^2 Delta / P
//! ```
//!
//! where `Delta` is the largest component range and `Dbar` the sum of ranges.
//! `exp` of very negative arguments underflows to zero, as intended.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::fmon::{phi_inverse, spreads, FmonSpec};
use crate::scalar::Scalar;

/// The numbers the closed forms depend on besides the function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundParams<T> {
    pub k: usize,
    pub m: usize,
    pub power: T,
    pub sigma_f: T,
    pub sigma_n: T,
}

impl<T: Scalar> BoundParams<T> {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return invalid("K must be at least 1");
        }
        if self.m == 0 {
            return invalid("M must be at least 1");
        }
        if !(self.power > T::zero()) {
            return invalid(format!("P must be positive, got {}", self.power));
        }
        if !(self.sigma_f > T::zero()) || !(self.sigma_n >= T::zero()) {
            return invalid(format!("need sigma_F > 0 and sigma_N >= 0, got {} and {}", self.sigma_f, self.sigma_n));
        }
        Ok(())
    }

    pub fn with_m(mut self, m: usize) -> Self {
        self.m = m;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport<T> {
    pub eta: T,
    pub l_const: T,
    pub gamma1: T,
    pub gamma2: T,
    pub total_raw: T,
    pub total_clamped: T,
    /// `Phi^{-1}(eps)` was capped at the inner-sum diameter.
    pub saturation_flag: bool,
}

impl<T: Scalar> BoundReport<T> {
    fn assemble(eta: T, l_const: T, e1: T, e2: T, saturation_flag: bool) -> Self {
        let two = T::lit(2.0);
        let gamma1 = two * (-e1).exp();
        let gamma2 = two * (-e2).exp();
        let total_raw = gamma1 + gamma2;
        Self {
            eta,
            l_const,
            gamma1,
            gamma2,
            total_raw,
            total_clamped: total_raw.min(T::one()),
            saturation_flag,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostReport<T> {
    pub gamma1_cost: T,
    pub gamma2_cost: T,
    /// Unrounded right-hand side of the cost bound.
    pub m_real: T,
    pub m_required: u64,
}

/// The constant `L` of the second error term.
pub fn l_constant<T: Scalar>(delta: T, delta_bar: T, params: &BoundParams<T>) -> T {
    let (sf, sn, p) = (params.sigma_f, params.sigma_n, params.power);
    T::lit(3.0) * sf * sf * delta_bar
        + T::lit(4.0) * sn * sf * (delta * delta_bar).sqrt() / p.sqrt()
        + T::lit(2.0) * sn * sn * delta / p
}

fn check_k<T: Scalar>(spec: &FmonSpec<T>, params: &BoundParams<T>) -> Result<()> {
    params.validate()?;
    if spec.k() != params.k {
        return Err(Error::Shape(format!("function has K = {}, parameters have K = {}", spec.k(), params.k)));
    }
    Ok(())
}

pub fn error_bound<T: Scalar>(spec: &FmonSpec<T>, params: &BoundParams<T>, eps: T) -> Result<BoundReport<T>> {
    check_k(spec, params)?;
    let sp = spreads(spec, params.power)?;
    let phi = phi_inverse(spec, eps)?;
    let (delta, delta_bar) = (sp.max_spread, sp.total_spread);
    let two = T::lit(2.0);
    let eta = phi.value / two;
    let sf2 = params.sigma_f * params.sigma_f;
    let m = T::from_usize_lossy(params.m);
    let k = T::from_usize_lossy(params.k);
    let l = l_constant(delta, delta_bar, params);
    let e1 = m * eta * eta / (two * delta * sf2 * eta + T::lit(8.0) * delta * delta * k * sf2 * sf2);
    let e2 = m * eta * eta / (two * l * eta + T::lit(4.0) * l * l);
    Ok(BoundReport::assemble(eta, l, e1, e2, phi.saturated))
}

/// Smallest `M` guaranteeing `P(|estimate - f| >= eps) <= delta` by the
/// bound above. `delta` does not enter `gamma1_cost`/`gamma2_cost`.
pub fn comm_cost<T: Scalar>(spec: &FmonSpec<T>, params: &BoundParams<T>, eps: T, delta: T) -> Result<CostReport<T>> {
    if !(delta > T::zero() && delta < T::one()) {
        return invalid(format!("delta must lie in (0, 1), got {delta}"));
    }
    check_k(spec, params)?;
    let sp = spreads(spec, params.power)?;
    let phi = phi_inverse(spec, eps)?.value;
    let (dm, db) = (sp.max_spread, sp.total_spread);
    let sf2 = params.sigma_f * params.sigma_f;
    let k = T::from_usize_lossy(params.k);
    let l = l_constant(dm, db, params);
    let gamma1_cost = T::lit(4.0) * dm * sf2 * phi + T::lit(32.0) * dm * dm * k * sf2 * sf2;
    let gamma2_cost = T::lit(4.0) * l * phi + T::lit(16.0) * l * l;
    let m_real = (T::lit(4.0).ln() - delta.ln()) / (phi * phi) * gamma1_cost.max(gamma2_cost);
    Ok(CostReport { gamma1_cost, gamma2_cost, m_real, m_required: ceil_channel_uses(m_real)? })
}

fn ceil_channel_uses<T: Scalar>(m_real: T) -> Result<u64> {
    let v = m_real.to_f64_lossy().ceil();
    if !v.is_finite() || v >= u64::MAX as f64 {
        return invalid(format!("required channel uses {m_real} not representable"));
    }
    Ok((v as u64).max(1))
}

/// Functions with a closed-form specialization of the bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleKind {
    Sum,
    Average,
    Pnorm2,
}

impl fmt::Display for ExampleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExampleKind::Sum => "sum",
            ExampleKind::Average => "average",
            ExampleKind::Pnorm2 => "pnorm2",
        })
    }
}

impl FromStr for ExampleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(ExampleKind::Sum),
            "average" => Ok(ExampleKind::Average),
            "pnorm2" | "pnorm:2" => Ok(ExampleKind::Pnorm2),
            other => Err(Error::UnsupportedDistribution(format!(
                "no closed form for {other:?}; expected sum, average or pnorm2"
            ))),
        }
    }
}

/// Closed forms written out per function, independent of [`error_bound`].
///
/// For the average the reported `L` is the per-function constant
/// `3 sigma_F^2 + 4 sigma_N sigma_F / sqrt(P K) + 2 sigma_N^2 / (P K)`, which
/// is `1/K` times the generic one; the probabilities agree.
pub fn specialized_bound<T: Scalar>(kind: ExampleKind, params: &BoundParams<T>, eps: T) -> Result<BoundReport<T>> {
    params.validate()?;
    if !(eps > T::zero()) {
        return invalid(format!("eps must be positive, got {eps}"));
    }
    let k = T::from_usize_lossy(params.k);
    let m = T::from_usize_lossy(params.m);
    let (sf, sn, p) = (params.sigma_f, params.sigma_n, params.power);
    let sf2 = sf * sf;
    let (c3, c4, c16, c32) = (T::lit(3.0), T::lit(4.0), T::lit(16.0), T::lit(32.0));
    let sum_l = c3 * sf2 * k + c4 * sn * sf * k.sqrt() / p.sqrt() + T::lit(2.0) * sn * sn / p;
    let half = T::lit(0.5);
    // Inputs of all three live in unit-width boxes, so Phi^{-1}(eps) saturates
    // at the inner-sum diameter K exactly as in the generic path.
    match kind {
        ExampleKind::Sum => {
            let (e, sat) = cap(eps, k);
            let e1 = m * e * e / (c4 * sf2 * e + c32 * k * sf2 * sf2);
            let e2 = m * e * e / (c4 * sum_l * e + c16 * sum_l * sum_l);
            Ok(BoundReport::assemble(e * half, sum_l, e1, e2, sat))
        }
        ExampleKind::Average => {
            let (e, sat) = cap(eps, T::one());
            let l = c3 * sf2 + c4 * sn * sf / (p * k).sqrt() + T::lit(2.0) * sn * sn / (p * k);
            let e1 = m * k * e * e / (c4 * sf2 * e + c32 * sf2 * sf2);
            let e2 = m * e * e / (c4 * l * e + c16 * l * l);
            Ok(BoundReport::assemble(k * e * half, l, e1, e2, sat))
        }
        ExampleKind::Pnorm2 => {
            let (e2v, sat) = cap(eps * eps, k);
            let e1 = m * e2v * e2v / (c4 * sf2 * e2v + c32 * k * sf2 * sf2);
            let e2 = m * e2v * e2v / (c4 * sum_l * e2v + c16 * sum_l * sum_l);
            Ok(BoundReport::assemble(e2v * half, sum_l, e1, e2, sat))
        }
    }
}

/// Caps the majorant inverse (expressed in `eps` units of the example) so
/// that the implied inner-sum increment does not exceed `K`.
fn cap<T: Scalar>(v: T, limit: T) -> (T, bool) {
    if v >= limit {
        (limit, true)
    } else {
        (v, false)
    }
}
