//! Cleaning and kinematic filtering of noisy skeletal joint-position streams.
//!
//! The pipeline: [`outlier::clean_stream`] removes tracking-loss jumps with a
//! Gaussian + uniform mixture, [`ukf::four_pass_filter`] estimates constant
//! segment lengths and smooth segment rotations, [`metrics`] summarizes a
//! session, and [`eval`] compares a stream against a reference capture.
//! [`synth`] generates ground-truth motion for verification.

// `!(x > 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod frame;
pub mod io;
pub mod kinematics;
pub mod metrics;
pub mod outlier;
pub mod quat;
pub mod skeleton;
pub mod synth;
pub mod ukf;

pub use error::{Error, Result};
pub use frame::{Confidence, Frame, FrameStream};
pub use kinematics::{
    extract_joint_angles, forward_kinematics, init_state_from_frame, JointAngle, JointAngles, KinematicState,
};
pub use outlier::{MixtureParams, OutlierReport};
pub use quat::UnitQuaternion;
pub use skeleton::{Dof, JointId, Segment, SkeletonTopology, NUM_JOINTS};

pub use ukf::{four_pass_filter, FilterOutput, GaussianBelief, UkfConfig};
