//! Measuring tiny task pass rates with PassUntil sampling, fitting task
//! scaling laws to them, and classifying how a scaling curve grows.
//!
//! The numerical code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`.

pub mod emergence;
pub mod error;
pub mod estimator;
pub mod optim;
pub mod oracles;
pub mod pipeline;
pub mod report;
pub mod scaling;
pub mod scalar;
pub mod store;

pub use error::{Error, Result, TrialError};
pub use scalar::Scalar;

pub type ScalingPoint = scaling::ScalingPoint<f64>;
pub type TaskScalingFit = scaling::TaskScalingFit<f64>;
pub type InstanceFit = scaling::InstanceFit<f64>;
pub type LossScalingFit = scaling::LossScalingFit<f64>;
pub type LossPuRelation = scaling::LossPuRelation<f64>;
pub type SyntheticLaw = oracles::SyntheticLaw<f64>;
pub type GrowthCurve = emergence::GrowthCurve<f64>;
pub type GrowthClassification = emergence::GrowthClassification<f64>;
pub type ClassifyConfig = emergence::ClassifyConfig<f64>;
pub type TwoCircuitFit = emergence::TwoCircuitFit<f64>;
