//! Growth-curve analysis on `F(N) = log(-log PU(N))` against `log N`.
//! A linear `F` is a scaling law, convex `F` is sub-scaling growth and
//! concave `F` is super-scaling growth (accelerated emergence).

mod classify;
mod curve;
mod softmin;
mod theorems;

pub use classify::{
    classify_growth, ClassifyConfig, GrowthClassification, GrowthVerdict, ResampleMethod, Tolerance,
};
pub use curve::{
    build_growth_curve, build_growth_curve_from_instances, second_difference_se, second_differences, GrowthCurve,
    GrowthPoint,
};
pub use softmin::{
    fit_soft_min, fit_two_circuit, soft_min_value, soft_min_weights, SoftMinFit, SoftMinForm, SoftMinOptions,
    TwoCircuitFit,
};
pub use theorems::{
    multi_circuit_f, multi_step_f, theorem2_oracle, theorem3_oracle, MultiCircuitCheck, MultiStepCheck,
    CURVATURE_TOLERANCE,
};
