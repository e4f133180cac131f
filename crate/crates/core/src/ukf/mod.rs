//! Unscented Kalman filtering of kinematic states.

pub mod filter;
pub mod transform;

pub use filter::{
    four_pass_filter, observe, run_pass, ukf_step, Direction, FilterOutput, NoiseModel, PassOutput, StateLayout,
    StepDiagnostics, UkfConfig, UpdateRule, MIN_FRAMES,
};
pub use transform::{
    linearize_about_mean, propagate, unscented_transform, GaussianBelief, Propagated, SigmaParams, Weights,
};
