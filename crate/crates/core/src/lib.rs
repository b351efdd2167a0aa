//! Weighted estimating-equation estimation for finite populations observed
//! through a probability survey, a big-data source, or both.
//!
//! The crate is organised around the sample estimating equation
//! `Psi_s(theta) = (1/N) * sum_i w_i * psi(Y_i; theta)`: [`estfun`] defines the
//! per-statistic `psi` functions, [`weights`] builds Horvitz-Thompson and
//! data-integrated weight vectors, [`solve`] produces point estimates,
//! [`variance`] estimates design and joint variances, [`design`] implements the
//! sampling mechanisms and allocation rules, [`superpop`] builds synthetic
//! income superpopulations from binned frequency data, and [`mc`] drives
//! seeded, reproducible Monte Carlo studies comparing big-data-only,
//! survey-only and integrated estimators.

pub mod design;
pub mod error;
pub mod estfun;
pub mod interp;
pub mod mc;
pub mod numeric;
pub mod report;
pub mod rng;
pub mod solve;
pub mod superpop;
pub mod variance;
pub mod weights;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
