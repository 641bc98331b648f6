//! Personality-grounded survey response simulation.
//!
//! A subject's demographics are scored for stress, a four-process cognitive
//! stack is predicted, each process reasons about the question and a final
//! stage weighs the four answers. Around that sit respondent clustering,
//! comparison baselines and distribution-level metrics. The numeric core is
//! generic over [`scalar::Scalar`] (`f32` or `f64`); the aliases below fix
//! the precision used by the rest of the crate.

pub mod baselines;
pub mod cohorts;
pub mod dynamics;
pub mod experiment;
pub mod gateway;
pub mod metrics;
pub mod pipeline;
pub mod scalar;
pub mod survey;
pub mod templates;

pub use scalar::Scalar;

pub type ClusterModel = cohorts::ClusterModel<f64>;
pub type ClusterModelF32 = cohorts::ClusterModel<f32>;
pub type EvalReport = metrics::EvalReport<f64>;
pub type EvalReportF32 = metrics::EvalReport<f32>;
pub type EvalRow = metrics::EvalRow<f64>;
pub type KMeansFit = cohorts::KMeansFit<f64>;
