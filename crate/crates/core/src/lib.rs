//! Distributed approximation of nomographic functions over a fast-fading
//! multiple-access channel.
//!
//! Transmitters encode inner function values `f_k(s_k)` as transmit power with
//! random sign dithering, the channel superimposes them under sub-gaussian
//! fading and noise, and the receiver recovers `F(sum_k f_k(s_k))` from the
//! received energy. Alongside the scheme itself the crate carries the
//! concentration machinery behind its error guarantees, closed-form error and
//! communication-cost bounds, a reproducible Monte Carlo harness, and two
//! application calculators (additive kernel models and max-consensus).
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below fix the scalar to `f64`, which is what the CLI uses.

pub mod applications;
pub mod bounds;
pub mod channel;
pub mod concentration;
pub mod error;
pub mod fmon;
pub mod montecarlo;
pub mod rng;
pub mod scalar;
pub mod scheme;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type DistributionSpec64 = concentration::DistributionSpec<f64>;
pub type TailBound64 = concentration::TailBound<f64>;
pub type FmonSpec64 = fmon::FmonSpec<f64>;
pub type SpreadSummary64 = fmon::SpreadSummary<f64>;
pub type ChannelConfig64 = channel::ChannelConfig<f64>;
pub type EstimateTrace64 = scheme::EstimateTrace<f64>;
pub type BoundParams64 = bounds::BoundParams<f64>;
pub type BoundReport64 = bounds::BoundReport<f64>;
pub type CostReport64 = bounds::CostReport<f64>;
pub type TrialPlan64 = montecarlo::TrialPlan<f64>;
pub type AdditiveKernelModel64 = applications::AdditiveKernelModel<f64>;
