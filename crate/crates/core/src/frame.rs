use crate::error::{Error, Result};
use crate::skeleton::{JointId, SkeletonTopology, NUM_JOINTS};
use nalgebra::Vector3;
use std::sync::Arc;

/// Sensor tracking state of one joint in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Confidence {
    Lost = 0,
    Inferred = 1,
    #[default]
    Tracked = 2,
}

impl Confidence {
    pub fn from_code(c: u8) -> Option<Confidence> {
        match c {
            0 => Some(Confidence::Lost),
            1 => Some(Confidence::Inferred),
            2 => Some(Confidence::Tracked),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// Seconds.
    pub t: f64,
    /// Meters, indexed by [`JointId::index`]. NaN for lost joints.
    pub pos: [Vector3<f64>; NUM_JOINTS],
    pub conf: [Confidence; NUM_JOINTS],
}

impl Frame {
    pub fn new(t: f64, pos: [Vector3<f64>; NUM_JOINTS]) -> Self {
        Frame {
            t,
            pos,
            conf: [Confidence::Tracked; NUM_JOINTS],
        }
    }

    pub fn position(&self, j: JointId) -> Vector3<f64> {
        self.pos[j.index()]
    }

    pub fn confidence(&self, j: JointId) -> Confidence {
        self.conf[j.index()]
    }

    pub fn is_observed(&self, j: JointId) -> bool {
        self.conf[j.index()] != Confidence::Lost && self.pos[j.index()].iter().all(|c| c.is_finite())
    }

    pub fn mark_lost(&mut self, j: JointId) {
        self.pos[j.index()] = Vector3::repeat(f64::NAN);
        self.conf[j.index()] = Confidence::Lost;
    }

    /// Lost joints carry NaN, observed joints finite values.
    pub fn validate(&self) -> Result<()> {
        if !self.t.is_finite() {
            return Err(Error::Invalid(format!("non-finite timestamp {}", self.t)));
        }
        for j in JointId::ALL {
            let finite = self.pos[j.index()].iter().all(|c| c.is_finite());
            match self.conf[j.index()] {
                Confidence::Lost if finite => {
                    return Err(Error::Invalid(format!("lost joint {j} at t={} has a position", self.t)))
                }
                Confidence::Tracked | Confidence::Inferred if !finite => {
                    return Err(Error::Invalid(format!(
                        "joint {j} at t={} is non-finite but not marked lost",
                        self.t
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameStream {
    topology: Arc<SkeletonTopology>,
    frames: Vec<Frame>,
    /// Hz.
    pub nominal_rate: f64,
}

impl FrameStream {
    pub fn new(topology: Arc<SkeletonTopology>, frames: Vec<Frame>, nominal_rate: f64) -> Result<Self> {
        if !(nominal_rate.is_finite() && nominal_rate > 0.0) {
            return Err(Error::Invalid(format!(
                "nominal rate must be positive, got {nominal_rate}"
            )));
        }
        for (i, f) in frames.iter().enumerate() {
            f.validate()?;
            if i > 0 && f.t <= frames[i - 1].t {
                return Err(Error::Invalid(format!(
                    "timestamps not strictly increasing at frame {i} ({} after {})",
                    f.t,
                    frames[i - 1].t
                )));
            }
        }
        Ok(FrameStream {
            topology,
            frames,
            nominal_rate,
        })
    }

    /// Rate estimated from the median frame spacing; falls back to `default` for short streams.
    pub fn estimate_rate(frames: &[Frame], default: f64) -> f64 {
        if frames.len() < 2 {
            return default;
        }
        let mut dts: Vec<f64> = frames.windows(2).map(|w| w[1].t - w[0].t).collect();
        dts.sort_by(f64::total_cmp);
        let dt = dts[dts.len() / 2];
        if dt > 0.0 {
            1.0 / dt
        } else {
            default
        }
    }

    pub fn topology(&self) -> &SkeletonTopology {
        &self.topology
    }

    pub fn topology_arc(&self) -> Arc<SkeletonTopology> {
        Arc::clone(&self.topology)
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.t).collect()
    }

    pub fn duration(&self) -> f64 {
        match (self.frames.first(), self.frames.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    /// Series of one joint's positions.
    pub fn joint_track(&self, j: JointId) -> Vec<Vector3<f64>> {
        self.frames.iter().map(|f| f.position(j)).collect()
    }

    /// Applies `f` to every observed position, keeping lost joints lost.
    pub fn map_positions(&self, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> FrameStream {
        let frames = self
            .frames
            .iter()
            .map(|fr| {
                let mut out = fr.clone();
                for j in JointId::ALL {
                    if fr.conf[j.index()] != Confidence::Lost {
                        out.pos[j.index()] = f(&fr.pos[j.index()]);
                    }
                }
                out
            })
            .collect();
        FrameStream {
            topology: self.topology_arc(),
            frames,
            nominal_rate: self.nominal_rate,
        }
    }

    pub fn reversed(&self) -> Vec<Frame> {
        self.frames.iter().rev().cloned().collect()
    }
}
