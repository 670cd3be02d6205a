//! Differentially private online reinforcement learning with finite
//! function classes.
//!
//! Episodic tabular MDPs with exact evaluation, finite hypothesis classes
//! (explicit tables or gated rule families), the Bellman-error and
//! outcome Bellman-residual scores, the exponential mechanism with an
//! advanced-composition accountant, batched learners, and the regret
//! analysis used to compare them.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix `f64`, which the experiment driver uses throughout.

pub mod algorithms;
pub mod analysis;
pub mod error;
pub mod experiment;
pub mod hypothesis;
pub mod losses;
pub mod mdp;
pub mod poc;
pub mod privacy;
pub mod rng;
pub mod scalar;
pub mod validate;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Mdp = mdp::TabularMdp<f64>;
pub type Hypothesis = hypothesis::QHypothesis<f64>;
pub type Class = hypothesis::HypothesisClass<f64>;
pub type Trajectory = mdp::Trajectory<f64>;
pub type Dataset = losses::Dataset<f64>;
pub type Budget = privacy::PrivacyBudget<f64>;
pub type Trace = algorithms::RunTrace<f64>;
pub type Series = analysis::RegretSeries<f64>;
pub type Instance = poc::PocInstance<f64>;
