//! Bayesian latent-factor model for age-specific counts across many
//! subpopulations.
//!
//! Counts follow a Poisson-lognormal model whose log-means are a
//! subpopulation intercept plus a small number of smooth age factors
//! (B-splines under a second-order random-walk prior) weighted by
//! covariate-driven hierarchical loadings with horseshoe shrinkage.
//! [`sampler::run_mcmc`] draws from the posterior; [`inference`] turns the
//! draws into predictive curves, covariate effects and scenarios;
//! [`baselines`], [`synthetic`] and [`evaluation`] supply the competing
//! estimators, simulated data and scoring protocols.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix it to `f64`.

pub mod baselines;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod linalg;
pub mod sampler;
pub mod scalar;
pub mod spline;
pub mod synthetic;

pub use config::{Hyper, Identification, Knots, McmcConfig, ModelConfig, ZUpdate};
pub use error::{Error, Result};
pub use scalar::Real;

pub type Panel = data::AgeCountPanel<f64>;
pub type Covariates = data::CovariateMatrix<f64>;
pub type Basis = spline::SplineBasis<f64>;
pub type State = sampler::ModelState<f64>;
pub type Draws = sampler::PosteriorDraws<f64>;
pub type Data = sampler::ModelData<f64>;
pub type Truth = synthetic::SyntheticTruth<f64>;
