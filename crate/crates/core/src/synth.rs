//! Synthetic ground-truth motion and sensor corruption.

use crate::error::{Error, Result};
use crate::frame::{Confidence, Frame, FrameStream};
use crate::kinematics::{forward_kinematics, init_state_from_frame, KinematicState};
use crate::quat::UnitQuaternion;
use crate::skeleton::{JointId, SkeletonTopology, NUM_JOINTS};
use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use std::f64::consts::PI;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq)]
pub struct Oscillation {
    /// Segment, named by its child joint.
    pub joint: JointId,
    /// Rotation axis in the segment's own (rest) frame.
    pub axis: Vector3<f64>,
    /// Radians.
    pub amplitude: f64,
    /// Hz.
    pub frequency: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RootTrajectory {
    Constant,
    /// m/s.
    Linear(Vector3<f64>),
    Sinusoid {
        amplitude: Vector3<f64>,
        frequency: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionSpec {
    pub base: KinematicState,
    pub oscillations: Vec<Oscillation>,
    pub root: RootTrajectory,
    /// Seconds.
    pub duration: f64,
    /// Hz.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionSpec {
    /// Meters per coordinate.
    pub gaussian_sd: f64,
    pub outlier_rate: f64,
    /// Half-width of the uniform teleport cube, meters.
    pub outlier_support: f64,
    pub lost_rate: f64,
    pub seed: u64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        CorruptionSpec {
            gaussian_sd: 0.025,
            outlier_rate: 0.05,
            outlier_support: 0.5,
            lost_rate: 0.0,
            seed: 0,
        }
    }
}

impl CorruptionSpec {
    pub fn none() -> Self {
        CorruptionSpec {
            gaussian_sd: 0.0,
            outlier_rate: 0.0,
            outlier_support: 0.0,
            lost_rate: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_sd.is_finite() && self.gaussian_sd >= 0.0) {
            return Err(Error::Invalid(format!(
                "gaussian_sd must be >= 0, got {}",
                self.gaussian_sd
            )));
        }
        for (name, r) in [("outlier_rate", self.outlier_rate), ("lost_rate", self.lost_rate)] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Invalid(format!("{name} must be in [0, 1), got {r}")));
            }
        }
        if !(self.outlier_support.is_finite() && self.outlier_support >= 0.0) {
            return Err(Error::Invalid(format!(
                "outlier_support must be >= 0, got {}",
                self.outlier_support
            )));
        }
        Ok(())
    }
}

impl MotionSpec {
    pub fn validate(&self, topo: &SkeletonTopology) -> Result<()> {
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return Err(Error::Invalid(format!("rate must be positive, got {}", self.rate)));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::Invalid(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        if self.base.num_segments() != topo.num_segments() {
            return Err(Error::IncompleteState("base state does not match topology".into()));
        }
        for o in &self.oscillations {
            if !(0.0..=PI).contains(&o.amplitude) {
                return Err(Error::Invalid(format!(
                    "amplitude must be in [0, π], got {}",
                    o.amplitude
                )));
            }
            if !(o.frequency.is_finite() && o.frequency >= 0.0) {
                return Err(Error::Invalid(format!("frequency must be >= 0, got {}", o.frequency)));
            }
            if o.axis.norm() < 1e-12 || !o.axis.iter().all(|c| c.is_finite()) {
                return Err(Error::Invalid(format!(
                    "oscillation axis for {} is degenerate",
                    o.joint
                )));
            }
            if topo.segment_index(o.joint).is_none() {
                return Err(Error::Invalid("ROOT has no segment to oscillate".into()));
            }
        }
        Ok(())
    }

    pub fn num_frames(&self) -> usize {
        (self.duration * self.rate).round() as usize
    }

    pub fn state_at(&self, t: f64, topo: &SkeletonTopology) -> Result<KinematicState> {
        let mut s = self.base.clone();
        for o in &self.oscillations {
            let k = topo.segment_index(o.joint).expect("validated");
            let angle = o.amplitude * (2.0 * PI * o.frequency * t + o.phase).sin();
            if angle != 0.0 {
                let r = UnitQuaternion::from_axis_angle(&o.axis, angle)?;
                s.quats[k] = s.quats[k].compose(&r)?;
            }
        }
        s.root_pos += match &self.root {
            RootTrajectory::Constant => Vector3::zeros(),
            RootTrajectory::Linear(v) => v * t,
            RootTrajectory::Sinusoid { amplitude, frequency } => amplitude * (2.0 * PI * frequency * t).sin(),
        };
        Ok(s)
    }
}

/// Joint positions of a standing adult, meters, z up, subject facing -y.
pub fn standing_pose() -> [Vector3<f64>; NUM_JOINTS] {
    use JointId::*;
    let mut p = [Vector3::zeros(); NUM_JOINTS];
    let mut set = |j: JointId, x: f64, y: f64, z: f64| p[j.index()] = Vector3::new(x, y, z);
    set(Root, 0.0, 0.0, 1.0);
    set(Spine, 0.0, 0.01, 1.25);
    set(Neck, 0.0, 0.0, 1.5);
    set(Head, 0.0, -0.02, 1.66);
    for s in [1.0, -1.0] {
        let (sho, elb, wri, han, hip, kne, ank, foot) = if s > 0.0 {
            (ShoL, ElbL, WriL, HanL, HipL, KneL, AnkL, FooL)
        } else {
            (ShoR, ElbR, WriR, HanR, HipR, KneR, AnkR, FooR)
        };
        set(sho, 0.18 * s, 0.0, 1.45);
        set(elb, 0.21 * s, -0.03, 1.17);
        set(wri, 0.23 * s, -0.08, 0.93);
        set(han, 0.24 * s, -0.10, 0.85);
        set(hip, 0.10 * s, 0.0, 0.95);
        set(kne, 0.11 * s, -0.02, 0.53);
        set(ank, 0.11 * s, 0.0, 0.12);
        set(foot, 0.12 * s, -0.13, 0.05);
    }
    p
}

/// Base state of [`standing_pose`].
pub fn standing_state(topo: &SkeletonTopology) -> Result<KinematicState> {
    init_state_from_frame(&Frame::new(0.0, standing_pose()), topo)
}

/// Parameters of the arm-raise scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmRaise {
    /// Hz.
    pub frequency: f64,
    /// Shoulder swing amplitude, radians.
    pub shoulder_amplitude: f64,
    /// Elbow flexion amplitude, radians.
    pub elbow_amplitude: f64,
    pub duration: f64,
    pub rate: f64,
}

impl Default for ArmRaise {
    fn default() -> Self {
        ArmRaise {
            frequency: 0.25,
            shoulder_amplitude: 0.6,
            elbow_amplitude: 0.5,
            duration: 15.0,
            rate: 20.0,
        }
    }
}

/// Both arms swinging at the shoulder and flexing at the elbow, in
/// antiphase left to right: 300 frames at 20 Hz, 0.25 Hz motion.
pub fn arm_raise_spec(topo: &SkeletonTopology) -> Result<MotionSpec> {
    arm_raise_spec_with(topo, &ArmRaise::default())
}

pub fn arm_raise_spec_with(topo: &SkeletonTopology, p: &ArmRaise) -> Result<MotionSpec> {
    use JointId::*;
    let osc = |joint, amplitude, phase| Oscillation {
        joint,
        axis: Vector3::x(),
        amplitude,
        frequency: p.frequency,
        phase,
    };
    let spec = MotionSpec {
        base: standing_state(topo)?,
        oscillations: vec![
            osc(ElbL, p.shoulder_amplitude, 0.0),
            osc(WriL, p.elbow_amplitude, 0.6),
            osc(ElbR, p.shoulder_amplitude, PI),
            osc(WriR, p.elbow_amplitude, PI + 0.6),
        ],
        root: RootTrajectory::Constant,
        duration: p.duration,
        rate: p.rate,
    };
    spec.validate(topo)?;
    Ok(spec)
}

/// Samples the motion at `rate` and returns the stream with per-frame truth.
pub fn generate_motion(spec: &MotionSpec, topo: Arc<SkeletonTopology>) -> Result<(FrameStream, Vec<KinematicState>)> {
    spec.validate(&topo)?;
    let n = spec.num_frames();
    let mut frames = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / spec.rate;
        let s = spec.state_at(t, &topo)?;
        frames.push(Frame::new(t, forward_kinematics(&s, &topo)?));
        truth.push(s);
    }
    Ok((FrameStream::new(topo, frames, spec.rate)?, truth))
}

/// Ground-truth corruption labels, `[frame][joint]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorruptionLabels {
    pub outlier: Vec<[bool; NUM_JOINTS]>,
    pub lost: Vec<[bool; NUM_JOINTS]>,
}

impl CorruptionLabels {
    pub fn count_outliers(&self) -> usize {
        self.outlier.iter().flatten().filter(|b| **b).count()
    }

    pub fn count_lost(&self) -> usize {
        self.lost.iter().flatten().filter(|b| **b).count()
    }
}

/// Adds Gaussian noise, uniform teleport outliers and tracking loss.
/// A joint-frame can be an outlier or lost, not both; loss is drawn first.
pub fn corrupt_stream(stream: &FrameStream, spec: &CorruptionSpec) -> Result<(FrameStream, CorruptionLabels)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.gaussian_sd).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut labels = CorruptionLabels::default();
    let mut frames = Vec::with_capacity(stream.len());
    for f in stream.frames() {
        let mut out = f.clone();
        let mut outl = [false; NUM_JOINTS];
        let mut lost = [false; NUM_JOINTS];
        for j in JointId::ALL {
            let i = j.index();
            // draw every variate regardless of branch so streams stay aligned across specs
            let n = Vector3::from_fn(|_, _| noise.sample(&mut rng));
            let u_lost: f64 = rng.random();
            let u_out: f64 = rng.random();
            let jump = Vector3::from_fn(|_, _| rng.random_range(-1.0..=1.0) * spec.outlier_support);
            if f.conf[i] == Confidence::Lost {
                continue;
            }
            if u_lost < spec.lost_rate {
                out.mark_lost(j);
                lost[i] = true;
            } else if u_out < spec.outlier_rate {
                out.pos[i] = f.pos[i] + jump;
                outl[i] = true;
            } else if spec.gaussian_sd > 0.0 {
                out.pos[i] = f.pos[i] + n;
            }
        }
        labels.outlier.push(outl);
        labels.lost.push(lost);
        frames.push(out);
    }
    Ok((
        FrameStream::new(stream.topology_arc(), frames, stream.nominal_rate)?,
        labels,
    ))
}

/// Uniformly random rotation (normalized Gaussian 4-vector).
pub fn random_quat<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion {
    loop {
        let v: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        if let Ok(q) = UnitQuaternion::new(v[0], v[1], v[2], v[3]) {
            return q;
        }
    }
}

/// Random state: root in a 2 m cube, lengths in [0.05, 0.5] m, uniform rotations.
pub fn random_state<R: Rng + ?Sized>(topo: &SkeletonTopology, rng: &mut R) -> KinematicState {
    let n = topo.num_segments();
    KinematicState {
        root_pos: Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
        lengths: (0..n).map(|_| rng.random_range(0.05..0.5)).collect(),
        quats: (0..n).map(|_| random_quat(rng)).collect(),
    }
}
