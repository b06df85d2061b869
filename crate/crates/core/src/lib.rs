//! Collaborative filtering with noisy sensors.
//!
//! A rating to predict is treated as a hidden variable observed through
//! many noisy sensors: other users who rated the item, and other items the
//! user rated. Each sensor is a Gaussian linear model fitted on co-ratings;
//! the best ones are fused with naive Bayes.
//!
//! Modules, bottom-up: [`ratings`] (data, splits, priors), [`sensor`]
//! (per-pair fits), [`predictor`] (fusion), [`baselines`] (correlation and
//! personality diagnosis), [`eval`] (protocols, MAE, significance) and
//! [`cli`].

pub mod baselines;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod predictor;
pub mod ratings;
pub mod seed;
pub mod sensor;

pub use error::{Error, Result};
pub use predictor::{NoisySensorPredictor, PredictorConfig, Variant};
pub use ratings::{RatingScale, RatingsMatrix};
