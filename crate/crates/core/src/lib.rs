//! Bayesian dropout with optimizable dropout rates.
//!
//! Masked models are trained by maximizing a variational lower bound on the
//! marginal likelihood over binary feature masks. The mask distribution is a
//! product of Bernoullis whose keep probabilities are learned with a
//! score-function gradient plus an exact prior/entropy term.
//!
//! - [`mask`]: Bernoulli mask distributions (shared, per-feature, grouped).
//! - [`models`]: masked logistic regression and three-layer net, prediction rules.
//! - [`training`]: SGD loops and exact enumeration oracles for the bound.
//! - [`data`]: the synthetic feature-selection benchmark.
//! - [`evaluation`]: accuracy, grid search and the four-algorithm experiment.
//! - [`exec`]: sequential / rayon execution used by the data-parallel loops.

pub mod data;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod mask;
pub mod math;
pub mod models;
mod record;
pub mod training;

pub use error::{Error, Result};
pub use exec::Exec;
pub use mask::{MaskDistribution, MaskLaw, MaskMode, MaskVector, PriorMask};
pub use models::{LogisticRegression, MaskedModel, Predictor, ThreeLayerNet};
