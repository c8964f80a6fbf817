//! Stochastic integrals with respect to nonorthogonal Gaussian noises on `[0,1]`
//! and the limit behaviour of canonical von Mises statistics built on
//! ψ-mixing stationary sequences.
//!
//! The crate is organised bottom-up:
//!
//! * [`covariance`]: covariance functions, their double differences
//!   (the covariance measure on rectangles) and the pairing formula for
//!   product noises.
//! * [`kernels`]: step and analytic kernels, diagonal subspaces, the
//!   seminorm of the integral construction and the combined norm.
//! * [`mixing`]: uniformised finite Markov chains as ψ-mixing generators
//!   with closed-form joint laws.
//! * [`empirical`]: empirical processes, V- and U-statistics and moment
//!   probes.
//! * [`limitlaw`]: samplers for the limit variable: a discretised multiple
//!   stochastic integral and the eigenvalue series.
//! * [`experiment`]: configuration, end-to-end runs and the invariant
//!   battery used by the `vmstat` binary.
//!
//! Monte Carlo loops run on rayon when the `parallel` feature is enabled
//! (the default). Every reduction is performed over fixed chunks in a fixed
//! order, so results are bit-identical with and without the feature and for
//! any worker count.

pub mod covariance;
pub mod empirical;
pub mod error;
pub mod experiment;
pub mod kernels;
pub mod limitlaw;
pub mod mixing;
pub mod par;
pub mod rng;

pub use error::{Error, Result};
