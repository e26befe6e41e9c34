//! Bias elimination for tabular data: estimate the distribution of an
//! unobserved explanatory variable `E` from a biased observed score `Z`
//! through a known bias channel `P[Z|E,S]`, then decode each row.

pub mod channel;
pub mod datagen;
pub mod decoder;
pub mod estimator;
pub mod metrics;
pub mod pipeline;
pub mod types;

pub use channel::{estimate_channel, empirical_phi, ChannelEstimate};
pub use decoder::{preprocess, Preprocessed};
pub use estimator::{babe_estimate, EmConfig, EmResult};
pub use types::{
    Channel, DecisionMethod, DecisionThreshold, Domain, GroupLabel, GroupedDistribution, ProbVector, SampleTable,
};
