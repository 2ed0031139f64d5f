//! Pre-processing, channel and post-processing of the energy-based estimator.
//!
//! Transmitter `k` sends `X_k(m) = sqrt(g_k(f_k(s_k))) U_k(m)` with
//! `g_k(t) = (P / Delta) (t - phi_min_k)` and i.i.d. signs `U_k(m)`. The
//! receiver forms the energy `sum_m |Y(m)|^2`, maps it back linearly,
//! subtracts the known noise-energy mean and applies the outer function.
//!
//! The linear map divides by `2 M P / Delta`: real and imaginary fading parts
//! each have unit variance, so `E ||H_k||^2 = 2 M`.

use num_complex::Complex;
use serde::Serialize;

use crate::channel::{
    apply_channel, fill_fading_row, fill_noise, sample_realization, ChannelConfig, ComplexMatrix, FadingRealization,
    NoiseRealization,
};
use crate::error::{Error, Result};
use crate::fmon::{evaluate, spreads, FmonSpec};
use crate::rng::{SignBits, TrialStreams};
use crate::scalar::Scalar;

/// Slack allowed between a computed `f_k(s_k)` and its declared range.
const RANGE_TOL: f64 = 1e-12;

/// `K x M` random signs, independent of fading and noise. Transmitter `k`
/// reads its signs bit by bit from its own dither lane.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Dither {
    pub k: usize,
    pub m: usize,
    pub signs: Vec<i8>,
}

impl Dither {
    pub fn sample(k: usize, m: usize, streams: &TrialStreams) -> Self {
        let mut signs = Vec::with_capacity(k * m);
        for t in 0..k {
            let mut bits = SignBits::new(streams.dither(t));
            signs.extend((0..m).map(|_| if bits.next_positive() { 1i8 } else { -1 }));
        }
        Self { k, m, signs }
    }

    pub fn get(&self, k: usize, m: usize) -> i8 {
        self.signs[k * self.m + m]
    }
}

/// Per-transmitter powers `g_k(f_k(s_k))`.
pub fn transmit_powers<T: Scalar>(spec: &FmonSpec<T>, config: &ChannelConfig<T>, s: &[T]) -> Result<Vec<T>> {
    if spec.k() != config.k {
        return Err(Error::Shape(format!("function has K = {}, channel has K = {}", spec.k(), config.k)));
    }
    if s.len() != spec.k() {
        return Err(Error::Shape(format!("expected {} inputs, got {}", spec.k(), s.len())));
    }
    let delta = spreads(spec, config.power)?.max_spread;
    let tol = T::lit(RANGE_TOL);
    let mut out = Vec::with_capacity(s.len());
    for (index, (f, &x)) in spec.inners.iter().zip(s).enumerate() {
        if !f.domain.contains(x) {
            return Err(Error::Domain {
                index,
                value: x.to_f64_lossy(),
                lo: f.domain.lo.to_f64_lossy(),
                hi: f.domain.hi.to_f64_lossy(),
            });
        }
        let v = f.eval(x);
        let scale = T::one().max(v.abs());
        if v < f.phi_min - tol * scale || v > f.phi_max + tol * scale {
            return Err(Error::InvalidSpec(format!(
                "component {index}: f({x}) = {v} outside declared range [{}, {}]",
                f.phi_min, f.phi_max
            )));
        }
        let t = v.max(f.phi_min).min(f.phi_max);
        out.push(config.power / delta * (t - f.phi_min));
    }
    Ok(out)
}

pub fn preprocess<T: Scalar>(
    spec: &FmonSpec<T>,
    config: &ChannelConfig<T>,
    s: &[T],
    dither: &Dither,
) -> Result<ComplexMatrix<T>> {
    if dither.k != config.k || dither.m != config.m {
        return Err(Error::Shape(format!(
            "dither is {}x{}, channel is {}x{}",
            dither.k, dither.m, config.k, config.m
        )));
    }
    let powers = transmit_powers(spec, config, s)?;
    let mut x = ComplexMatrix::zeros(config.k, config.m);
    for (k, g) in powers.iter().enumerate() {
        let amp = g.sqrt();
        for (m, v) in x.row_mut(k).iter_mut().enumerate() {
            let u = if dither.get(k, m) > 0 { T::one() } else { -T::one() };
            *v = Complex::new(amp * u, T::zero());
        }
    }
    Ok(x)
}

pub fn receive_energy<T: Scalar>(y: &[Complex<T>]) -> T {
    y.iter().map(Complex::norm_sqr).sum()
}

/// Receiver-side quantities derived from the energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Decoded<T> {
    /// `Delta / (2 M P) * energy + sum_k phi_min_k`.
    pub h_linear: T,
    /// `h_linear` minus the noise-energy correction.
    pub h_corrected: T,
    /// `alpha = Delta / (2 P)`.
    pub alpha: T,
    /// `alpha * (E(N^r)^2 + E(N^i)^2)`.
    pub noise_mean_correction: T,
    /// `h_corrected` fell outside the outer domain and was clamped before `F`.
    pub clamped: bool,
    pub estimate: T,
}

pub fn decode<T: Scalar>(spec: &FmonSpec<T>, config: &ChannelConfig<T>, energy: T) -> Result<Decoded<T>> {
    if spec.k() != config.k {
        return Err(Error::Shape(format!("function has K = {}, channel has K = {}", spec.k(), config.k)));
    }
    let delta = spreads(spec, config.power)?.max_spread;
    let two = T::lit(2.0);
    let m = T::from_usize_lossy(config.m);
    let h_linear = delta / (two * m * config.power) * energy + spec.phi_min_sum();
    let alpha = delta / (two * config.power);
    let correction = alpha * config.noise_energy_mean();
    let h_corrected = h_linear - correction;
    let inside = spec.outer_domain.contains(h_corrected);
    let estimate = spec.outer.eval(spec.outer_domain.clamp(h_corrected));
    Ok(Decoded {
        h_linear,
        h_corrected,
        alpha,
        noise_mean_correction: correction,
        clamped: !inside,
        estimate,
    })
}

/// Per-use effective noise: cross terms between distinct transmitters, the
/// noise/signal term and `|N(m)|^2`, each computed directly.
pub fn effective_noise<T: Scalar>(
    spec: &FmonSpec<T>,
    config: &ChannelConfig<T>,
    s: &[T],
    dither: &Dither,
    fading: &FadingRealization<T>,
    noise: &NoiseRealization<T>,
) -> Result<Vec<T>> {
    let powers = transmit_powers(spec, config, s)?;
    let amps: Vec<T> = powers.iter().map(|g| g.sqrt()).collect();
    let h = &fading.h;
    if h.rows != config.k || h.cols != config.m || noise.n.len() != config.m {
        return Err(Error::Shape("realization does not match the channel config".into()));
    }
    let sign = |k: usize, m: usize| if dither.get(k, m) > 0 { T::one() } else { -T::one() };
    let mut out = Vec::with_capacity(config.m);
    for m in 0..config.m {
        let mut cross = Complex::new(T::zero(), T::zero());
        for k in 0..config.k {
            for l in 0..config.k {
                if k != l {
                    let w = amps[k] * amps[l] * sign(k, m) * sign(l, m);
                    cross += h.get(k, m) * h.get(l, m).conj() * w;
                }
            }
        }
        let mut signal = Complex::new(T::zero(), T::zero());
        for k in 0..config.k {
            signal += h.get(k, m) * (amps[k] * sign(k, m));
        }
        let n = noise.n[m];
        let mixed = T::lit(2.0) * (n.conj() * signal).re;
        out.push(cross.re + mixed + n.norm_sqr());
    }
    Ok(out)
}

/// Full record of one run of the scheme.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateTrace<T> {
    pub s: Vec<T>,
    pub dither: Dither,
    pub fading: FadingRealization<T>,
    pub noise: NoiseRealization<T>,
    pub x: ComplexMatrix<T>,
    pub y: Vec<Complex<T>>,
    pub energy: T,
    pub h_linear: T,
    pub h_corrected: T,
    pub alpha: T,
    pub noise_mean_correction: T,
    pub clamped: bool,
    pub estimate: T,
    /// `sum_k f_k(s_k)`.
    pub inner_target: T,
    /// `f(s)`.
    pub target: T,
}

pub fn estimate_once<T: Scalar>(
    spec: &FmonSpec<T>,
    config: &ChannelConfig<T>,
    s: &[T],
    streams: &TrialStreams,
) -> Result<EstimateTrace<T>> {
    let dither = Dither::sample(config.k, config.m, streams);
    let (fading, noise) = sample_realization(config, streams);
    let x = preprocess(spec, config, s, &dither)?;
    let y = apply_channel(&x, &fading, &noise, config.power)?;
    let energy = receive_energy(&y);
    let d = decode(spec, config, energy)?;
    Ok(EstimateTrace {
        s: s.to_vec(),
        dither,
        fading,
        noise,
        x,
        y,
        energy,
        h_linear: d.h_linear,
        h_corrected: d.h_corrected,
        alpha: d.alpha,
        noise_mean_correction: d.noise_mean_correction,
        clamped: d.clamped,
        estimate: d.estimate,
        inner_target: spec.inner_sum(s)?,
        target: evaluate(spec, s)?,
    })
}

/// Reusable per-thread buffers for [`Estimator::run`].
#[derive(Debug, Default)]
pub(crate) struct Scratch<T> {
    y: Vec<Complex<T>>,
    h: Vec<Complex<T>>,
    n: Vec<Complex<T>>,
}

/// Streaming form of [`estimate_once`] for Monte Carlo: the same draws in the
/// same order and the same arithmetic, without materialising a trace.
/// Transmitters with zero power are skipped, which leaves the energy unchanged
/// because each transmitter draws from its own lanes.
pub(crate) struct Estimator<'a, T: Scalar> {
    spec: &'a FmonSpec<T>,
    config: &'a ChannelConfig<T>,
    amplitudes: Vec<T>,
}

impl<'a, T: Scalar> Estimator<'a, T> {
    pub(crate) fn new(spec: &'a FmonSpec<T>, config: &'a ChannelConfig<T>, s: &[T]) -> Result<Self> {
        let amplitudes = transmit_powers(spec, config, s)?.into_iter().map(T::sqrt).collect();
        Ok(Self { spec, config, amplitudes })
    }

    pub(crate) fn run(&self, streams: &TrialStreams, scratch: &mut Scratch<T>) -> Result<Decoded<T>> {
        let m = self.config.m;
        let zero = Complex::new(T::zero(), T::zero());
        scratch.y.clear();
        scratch.y.resize(m, zero);
        scratch.h.resize(m, zero);
        scratch.n.resize(m, zero);
        for (k, &amp) in self.amplitudes.iter().enumerate() {
            if amp == T::zero() {
                continue;
            }
            fill_fading_row(&self.config.fading, streams, k, &mut scratch.h);
            let mut dither = SignBits::new(streams.dither(k));
            let (pos, neg) = (Complex::new(amp, T::zero()), Complex::new(-amp, T::zero()));
            for (acc, h) in scratch.y.iter_mut().zip(&scratch.h) {
                *acc += *h * if dither.next_positive() { pos } else { neg };
            }
        }
        fill_noise(&self.config.noise, streams, &mut scratch.n);
        for (acc, n) in scratch.y.iter_mut().zip(&scratch.n) {
            *acc += *n;
        }
        decode(self.spec, self.config, receive_energy(&scratch.y))
    }
}
