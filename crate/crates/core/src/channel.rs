//! Fast-fading multiple-access channel
//! `Y(m) = sum_k H_k(m) x_k(m) + N(m)`, `m = 1..M`.
//!
//! Real and imaginary parts of every fading coefficient are independent draws
//! from the fading component distribution (zero mean, unit variance);
//! likewise for the noise. Complex values are plain `(re, im)` pairs.

use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::bounds::BoundParams;
use crate::concentration::{DistributionSpec, Family};
use crate::error::{Error, Result};
use crate::rng::{Stream, TrialStreams};
use crate::scalar::Scalar;

/// Moment tolerance when validating declared component distributions.
const MOMENT_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct ChannelConfig<T: Scalar> {
    /// Number of transmitters.
    pub k: usize,
    /// Channel uses.
    pub m: usize,
    /// Peak power per symbol.
    pub power: T,
    pub fading: DistributionSpec<T>,
    pub noise: DistributionSpec<T>,
    /// Upper bound on the sub-gaussian norm of each fading component.
    pub sigma_f: T,
    /// Upper bound on the sub-gaussian norm of each noise component.
    pub sigma_n: T,
}

impl<T: Scalar> ChannelConfig<T> {
    /// Builds and validates a config. `sigma_f`/`sigma_n` default to the
    /// declared sub-gaussian bounds of the component distributions.
    pub fn new(
        k: usize,
        m: usize,
        power: T,
        fading: DistributionSpec<T>,
        noise: DistributionSpec<T>,
        sigma_f: Option<T>,
        sigma_n: Option<T>,
    ) -> Result<Self> {
        let declared = |d: &DistributionSpec<T>, what: &str| {
            d.subgauss_tau().ok_or_else(|| {
                Error::InvalidConfig(format!("{what} distribution {} has no declared sub-gaussian bound", d.label()))
            })
        };
        let tau_f = declared(&fading, "fading")?;
        let tau_n = declared(&noise, "noise")?;
        let config = Self {
            k,
            m,
            power,
            sigma_f: sigma_f.unwrap_or(tau_f),
            sigma_n: sigma_n.unwrap_or(tau_n),
            fading,
            noise,
        };
        config.validate()?;
        Ok(config)
    }

    /// Gaussian fading (`sigma_F = 1`) with circular gaussian noise of
    /// per-component standard deviation `noise_sd` (`sigma_N = noise_sd`).
    pub fn gaussian(k: usize, m: usize, power: T, noise_sd: T) -> Result<Self> {
        Self::new(
            k,
            m,
            power,
            DistributionSpec::standard_gaussian(),
            DistributionSpec::gaussian(T::zero(), noise_sd)?,
            None,
            None,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.k == 0 {
            return bad("K must be at least 1".into());
        }
        if self.m == 0 {
            return bad("M must be at least 1".into());
        }
        if !(self.power > T::zero()) || !self.power.is_finite() {
            return bad(format!("P must be positive, got {}", self.power));
        }
        let tol = T::lit(MOMENT_TOL);
        if self.fading.mean().abs() > tol {
            return bad(format!("fading components need mean 0, got {}", self.fading.mean()));
        }
        if (self.fading.second_moment() - T::one()).abs() > tol {
            return bad(format!("fading components need variance 1, got {}", self.fading.second_moment()));
        }
        if self.noise.mean().abs() > tol {
            return bad(format!("noise components need mean 0, got {}", self.noise.mean()));
        }
        let tau_f = self.fading.subgauss_tau().unwrap_or(T::infinity());
        let tau_n = self.noise.subgauss_tau().unwrap_or(T::infinity());
        if !(self.sigma_f >= tau_f) {
            return bad(format!("sigma_F = {} below the fading bound {tau_f}", self.sigma_f));
        }
        if !(self.sigma_n >= tau_n) {
            return bad(format!("sigma_N = {} below the noise bound {tau_n}", self.sigma_n));
        }
        Ok(())
    }

    pub fn with_m(&self, m: usize) -> Result<Self> {
        let mut c = self.clone();
        c.m = m;
        c.validate()?;
        Ok(c)
    }

    pub fn with_k(&self, k: usize) -> Result<Self> {
        let mut c = self.clone();
        c.k = k;
        c.validate()?;
        Ok(c)
    }

    pub fn bound_params(&self) -> BoundParams<T> {
        BoundParams {
            k: self.k,
            m: self.m,
            power: self.power,
            sigma_f: self.sigma_f,
            sigma_n: self.sigma_n,
        }
    }

    /// `E(N^r)^2 + E(N^i)^2`.
    pub fn noise_energy_mean(&self) -> T {
        T::lit(2.0) * self.noise.second_moment()
    }
}

/// `K x M` complex array stored transmitter-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexMatrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex<T>>,
}

impl<T: Scalar> ComplexMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![Complex::new(T::zero(), T::zero()); rows * cols] }
    }

    pub fn get(&self, k: usize, m: usize) -> Complex<T> {
        self.data[k * self.cols + m]
    }

    pub fn set(&mut self, k: usize, m: usize, v: Complex<T>) {
        self.data[k * self.cols + m] = v;
    }

    pub fn row(&self, k: usize) -> &[Complex<T>] {
        &self.data[k * self.cols..(k + 1) * self.cols]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [Complex<T>] {
        &mut self.data[k * self.cols..(k + 1) * self.cols]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FadingRealization<T> {
    pub h: ComplexMatrix<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseRealization<T> {
    pub n: Vec<Complex<T>>,
}

/// Draws `H_k(m)` for `m = 1..M` as consecutive `(re, im)` pairs from the
/// transmitter's fading lane.
pub(crate) fn fill_fading_row<T: Scalar>(
    fading: &DistributionSpec<T>,
    streams: &TrialStreams,
    k: usize,
    out: &mut [Complex<T>],
) {
    fill_pairs(fading, &mut streams.fading(k), out);
}

pub(crate) fn fill_noise<T: Scalar>(noise: &DistributionSpec<T>, streams: &TrialStreams, out: &mut [Complex<T>]) {
    fill_pairs(noise, &mut streams.noise(), out);
}

/// Consecutive `(re, im)` draws; the same values as calling
/// [`DistributionSpec::sample`] twice per entry, with the family dispatch
/// hoisted out of the loop for the gaussian case.
fn fill_pairs<T: Scalar>(dist: &DistributionSpec<T>, rng: &mut Stream, out: &mut [Complex<T>]) {
    if let Family::Gaussian { mean, sd } = *dist.family() {
        for v in out.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *v = Complex::new(mean + sd * T::lit(re), mean + sd * T::lit(im));
        }
    } else {
        for v in out.iter_mut() {
            let re = dist.sample(rng);
            let im = dist.sample(rng);
            *v = Complex::new(re, im);
        }
    }
}

pub fn sample_realization<T: Scalar>(
    config: &ChannelConfig<T>,
    streams: &TrialStreams,
) -> (FadingRealization<T>, NoiseRealization<T>) {
    let mut h = ComplexMatrix::zeros(config.k, config.m);
    for k in 0..config.k {
        fill_fading_row(&config.fading, streams, k, h.row_mut(k));
    }
    let mut n = vec![Complex::new(T::zero(), T::zero()); config.m];
    fill_noise(&config.noise, streams, &mut n);
    (FadingRealization { h }, NoiseRealization { n })
}

/// Checks `|x_k(m)|^2 <= P (1 + 1e-12)` for every symbol.
pub fn check_peak_power<T: Scalar>(x: &ComplexMatrix<T>, power: T) -> Result<()> {
    let limit = power * (T::one() + T::lit(1e-12));
    for k in 0..x.rows {
        for (m, v) in x.row(k).iter().enumerate() {
            let p = v.norm_sqr();
            if !(p <= limit) {
                return Err(Error::PeakPower {
                    k,
                    m,
                    power: p.to_f64_lossy(),
                    limit: power.to_f64_lossy(),
                });
            }
        }
    }
    Ok(())
}

/// `Y(m) = sum_k H_k(m) x_k(m) + N(m)`, summed in transmitter order.
pub fn apply_channel<T: Scalar>(
    x: &ComplexMatrix<T>,
    fading: &FadingRealization<T>,
    noise: &NoiseRealization<T>,
    power: T,
) -> Result<Vec<Complex<T>>> {
    let h = &fading.h;
    if x.rows != h.rows || x.cols != h.cols || noise.n.len() != x.cols {
        return Err(Error::Shape(format!(
            "symbols {}x{}, fading {}x{}, noise {}",
            x.rows,
            x.cols,
            h.rows,
            h.cols,
            noise.n.len()
        )));
    }
    check_peak_power(x, power)?;
    let mut y = vec![Complex::new(T::zero(), T::zero()); x.cols];
    for k in 0..x.rows {
        for ((acc, hk), xk) in y.iter_mut().zip(h.row(k)).zip(x.row(k)) {
            *acc += *hk * *xk;
        }
    }
    for (acc, n) in y.iter_mut().zip(&noise.n) {
        *acc += *n;
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    fn single(h: Vec<Complex<f64>>, k: usize, m: usize) -> FadingRealization<f64> {
        FadingRealization { h: ComplexMatrix { rows: k, cols: m, data: h } }
    }

    #[test]
    fn superposition_examples() {
        let x = ComplexMatrix { rows: 1, cols: 1, data: vec![c(2.0, 0.0)] };
        let y = apply_channel(&x, &single(vec![c(1.0, 0.0)], 1, 1), &NoiseRealization { n: vec![c(0.0, 0.0)] }, 4.0)
            .unwrap();
        assert_eq!(y, vec![c(2.0, 0.0)]);

        let x = ComplexMatrix { rows: 2, cols: 1, data: vec![c(1.0, 0.0), c(2.0, 0.0)] };
        let y = apply_channel(
            &x,
            &single(vec![c(1.0, 0.0), c(1.0, 0.0)], 2, 1),
            &NoiseRealization { n: vec![c(0.5, 0.0)] },
            4.0,
        )
        .unwrap();
        assert_eq!(y, vec![c(3.5, 0.0)]);
    }

    #[test]
    fn peak_power_violation_names_position() {
        let x = ComplexMatrix { rows: 2, cols: 2, data: vec![c(0.5, 0.0), c(0.5, 0.0), c(0.5, 0.0), c(1.1, 0.0)] };
        let h = single(vec![c(1.0, 0.0); 4], 2, 2);
        let n = NoiseRealization { n: vec![c(0.0, 0.0); 2] };
        match apply_channel(&x, &h, &n, 1.0) {
            Err(Error::PeakPower { k, m, .. }) => assert_eq!((k, m), (1, 1)),
            other => panic!("expected peak power error, got {other:?}"),
        }
    }

    #[test]
    fn power_check_threshold() {
        let at = |p: f64| ComplexMatrix { rows: 1, cols: 1, data: vec![c(p.sqrt(), 0.0)] };
        assert!(check_peak_power(&at(1.0), 1.0).is_ok());
        assert!(check_peak_power(&at(1.0 + 5e-13), 1.0).is_ok());
        assert!(check_peak_power(&at(1.0 + 1e-11), 1.0).is_err());
    }

    #[test]
    fn realization_is_deterministic() {
        let cfg = ChannelConfig::gaussian(3, 17, 1.0, 0.7).unwrap();
        let s = TrialStreams::new(42, 5);
        assert_eq!(sample_realization(&cfg, &s), sample_realization(&cfg, &s));
        let other = sample_realization(&cfg, &TrialStreams::new(42, 6));
        assert_ne!(sample_realization(&cfg, &s), other);
    }

    #[test]
    fn config_validation() {
        let g = DistributionSpec::standard_gaussian();
        let too_wide = DistributionSpec::gaussian(0.0, 2.0).unwrap();
        assert!(ChannelConfig::new(2, 5, 1.0, too_wide, g.clone(), None, None).is_err());
        assert!(ChannelConfig::new(2, 5, 1.0, g.clone(), g.clone(), Some(0.5), None).is_err());
        assert!(ChannelConfig::new(0, 5, 1.0, g.clone(), g.clone(), None, None).is_err());
        assert!(ChannelConfig::new(2, 5, -1.0, g.clone(), g.clone(), None, None).is_err());
        let shifted = DistributionSpec::gaussian(1.0, 1.0).unwrap();
        assert!(ChannelConfig::new(2, 5, 1.0, g.clone(), shifted, None, None).is_err());
        let rad = ChannelConfig::new(2, 5, 1.0, DistributionSpec::rademacher(), g, None, None).unwrap();
        assert_eq!(rad.sigma_f, 1.0);
        let uni = DistributionSpec::uniform(-0.5, 0.5).unwrap();
        let cfg = ChannelConfig::new(2, 5, 1.0, DistributionSpec::standard_gaussian(), uni, None, None).unwrap();
        assert_eq!(cfg.sigma_n, 0.5);
        assert!((cfg.noise_energy_mean() - 2.0 * 0.25 / 3.0f64).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn channel_is_linear_in_symbols(seed in 0u64..1000, scale in -3.0f64..3.0) {
            let cfg = ChannelConfig::gaussian(3, 6, 100.0, 1.0).unwrap();
            let (h, n) = sample_realization(&cfg, &TrialStreams::new(seed, 0));
            let mut x = ComplexMatrix::zeros(3, 6);
            for (i, v) in x.data.iter_mut().enumerate() {
                *v = c(((i * 7 + seed as usize) % 5) as f64 / 5.0, 0.0);
            }
            let mut xs = x.clone();
            for v in xs.data.iter_mut() {
                *v *= scale;
            }
            let y = apply_channel(&x, &h, &n, 100.0).unwrap();
            let ys = apply_channel(&xs, &h, &n, 100.0).unwrap();
            for ((a, b), nn) in y.iter().zip(&ys).zip(&n.n) {
                let expect = (*a - *nn) * scale;
                prop_assert!((*b - *nn - expect).norm() <= 1e-12 * (1.0 + expect.norm()));
            }
        }
    }
}
