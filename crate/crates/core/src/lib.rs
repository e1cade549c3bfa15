//! Causal effect estimation for text interventions.
//!
//! A corpus of texts is split into an observed arm and an intervened arm
//! (texts rewritten by an LLM, or sampled by a rating rule). Outcome models
//! trained on observed texts predict both arms; domain-adversarial training
//! keeps those predictions stable under the shift the rewrite introduces.
//! Effects are then estimated by plug-in averaging or inverse propensity
//! weighting, and scored against ground truth when it is known.
//!
//! Numeric code is generic over the scalar type; the aliases below fix it
//! to `f64`, which is what the pipeline and CLI use.

pub mod corpus;
pub mod dann;
pub mod effects;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod intervention;
pub mod llm;
pub mod matrix;
pub mod nn;
pub mod predictor;
pub mod propensity;
pub mod rng;
pub mod scalar;
pub mod synthesis;
pub mod topics;
pub mod train;

pub use corpus::{Corpus, Covariates, Treatment, Unit};
pub use error::{Error, Result};
pub use experiment::{run_pipeline, ExperimentConfig};

pub type Predictor = predictor::TrainedPredictor<f64>;
pub type Propensity = propensity::PropensityModel<f64>;
pub type Dann = dann::DannModel<f64>;
pub type SimParams = synthesis::SimulationParams<f64>;
pub type Net = nn::Network<f64>;
