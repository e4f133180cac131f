//! Forward kinematics over the skeleton tree.
//!
//! Each segment carries a length and a rotation relative to its parent
//! segment. The global rotation of a segment is `G_child = G_parent ∘ q_local`
//! (parent applied last, Hamilton product), with `G = I` above the root.
//! A child joint sits at `parent + G_child · (0, 0, length)`, so a segment
//! with identity local rotation continues along its parent's +z axis.

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::quat::UnitQuaternion;
use crate::skeleton::{JointId, SkeletonTopology, NUM_JOINTS};
use nalgebra::{DVector, Vector3};

pub const REST_DIRECTION: Vector3<f64> = Vector3::new(0.0, 0.0, 1.0);

/// Root position, per-segment lengths and per-segment local rotations, all in
/// topology segment order.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicState {
    pub root_pos: Vector3<f64>,
    pub lengths: Vec<f64>,
    pub quats: Vec<UnitQuaternion>,
}

/// Flattened state dimension: `3 + S + 4S`.
pub fn state_dim(num_segments: usize) -> usize {
    3 + 5 * num_segments
}

impl KinematicState {
    pub fn new(root_pos: Vector3<f64>, lengths: Vec<f64>, quats: Vec<UnitQuaternion>) -> Result<Self> {
        if lengths.len() != quats.len() {
            return Err(Error::IncompleteState(format!(
                "{} lengths but {} rotations",
                lengths.len(),
                quats.len()
            )));
        }
        if let Some(l) = lengths.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::Invalid(format!("segment length must be positive, got {l}")));
        }
        if root_pos.iter().any(|c| !c.is_finite()) || quats.iter().any(|q| !q.is_finite()) {
            return Err(Error::Invalid("non-finite state component".into()));
        }
        let quats = quats
            .into_iter()
            .map(|q| UnitQuaternion::new(q.w, q.x, q.y, q.z))
            .collect::<Result<_>>()?;
        Ok(KinematicState {
            root_pos,
            lengths,
            quats,
        })
    }

    /// Identity rotations with the given uniform length.
    pub fn straight(topo: &SkeletonTopology, root_pos: Vector3<f64>, length: f64) -> Self {
        let n = topo.num_segments();
        KinematicState {
            root_pos,
            lengths: vec![length; n],
            quats: vec![UnitQuaternion::IDENTITY; n],
        }
    }

    pub fn num_segments(&self) -> usize {
        self.lengths.len()
    }

    fn check(&self, topo: &SkeletonTopology) -> Result<()> {
        let n = topo.num_segments();
        if self.lengths.len() != n || self.quats.len() != n {
            return Err(Error::IncompleteState(format!(
                "topology has {n} segments, state has {} lengths and {} rotations",
                self.lengths.len(),
                self.quats.len()
            )));
        }
        Ok(())
    }

    /// `[root(3) | lengths(S) | quats(4S, w x y z)]`.
    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.num_segments();
        let mut v = DVector::zeros(state_dim(n));
        v.fixed_rows_mut::<3>(0).copy_from(&self.root_pos);
        for (i, l) in self.lengths.iter().enumerate() {
            v[3 + i] = *l;
        }
        for (i, q) in self.quats.iter().enumerate() {
            let o = 3 + n + 4 * i;
            v.rows_mut(o, 4).copy_from_slice(&q.as_array());
        }
        v
    }

    /// Inverse of [`KinematicState::to_vector`]; renormalizes and
    /// canonicalizes rotations (near-zero rotations become identity).
    pub fn from_vector(v: &DVector<f64>, num_segments: usize) -> Result<Self> {
        let dim = state_dim(num_segments);
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        let root_pos = Vector3::new(v[0], v[1], v[2]);
        let lengths = (0..num_segments).map(|i| v[3 + i]).collect();
        let quats = (0..num_segments)
            .map(|i| {
                let o = 3 + num_segments + 4 * i;
                UnitQuaternion::normalize_or_identity(v[o], v[o + 1], v[o + 2], v[o + 3])
                    .0
                    .canonical()
            })
            .collect();
        Ok(KinematicState {
            root_pos,
            lengths,
            quats,
        })
    }
}

pub type JointPositions = [Vector3<f64>; NUM_JOINTS];

/// Core FK recursion shared by the public entry point and the filter's
/// observation model. `quat(i)` must return a unit quaternion.
#[inline]
pub(crate) fn forward_kinematics_with(
    topo: &SkeletonTopology,
    root: Vector3<f64>,
    length: impl Fn(usize) -> f64,
    quat: impl Fn(usize) -> UnitQuaternion,
) -> JointPositions {
    let mut pos = [Vector3::zeros(); NUM_JOINTS];
    let mut global = [UnitQuaternion::IDENTITY; NUM_JOINTS];
    pos[JointId::Root.index()] = root;
    for (i, seg) in topo.segments().iter().enumerate() {
        let (c, p) = (seg.child.index(), seg.parent.index());
        let g = global[p].mul_raw(&quat(i));
        global[c] = g;
        pos[c] = pos[p] + g.rotate(&(REST_DIRECTION * length(i)));
    }
    pos
}

pub fn forward_kinematics(state: &KinematicState, topo: &SkeletonTopology) -> Result<JointPositions> {
    state.check(topo)?;
    Ok(forward_kinematics_with(
        topo,
        state.root_pos,
        |i| state.lengths[i],
        |i| state.quats[i],
    ))
}

/// Global rotation of every segment, indexed by child joint (ROOT = identity).
pub fn global_rotations(state: &KinematicState, topo: &SkeletonTopology) -> Result<[UnitQuaternion; NUM_JOINTS]> {
    state.check(topo)?;
    let mut global = [UnitQuaternion::IDENTITY; NUM_JOINTS];
    for (i, seg) in topo.segments().iter().enumerate() {
        global[seg.child.index()] = global[seg.parent.index()].mul_raw(&state.quats[i]);
    }
    Ok(global)
}

/// Builds a state reproducing the observed positions: measured segment
/// lengths, and per segment the shortest rotation from the parent frame's
/// rest direction to the observed direction, resolved root-outward.
pub fn init_state_from_frame(frame: &Frame, topo: &SkeletonTopology) -> Result<KinematicState> {
    for j in topo.joint_order() {
        if !frame.is_observed(j) {
            return Err(Error::LostJoint(j));
        }
    }
    let n = topo.num_segments();
    let mut lengths = Vec::with_capacity(n);
    let mut quats = Vec::with_capacity(n);
    let mut global = [UnitQuaternion::IDENTITY; NUM_JOINTS];
    for seg in topo.segments() {
        let d = frame.position(seg.child) - frame.position(seg.parent);
        let len = d.norm();
        if len <= 1e-9 {
            return Err(Error::DegenerateSegment(seg.child));
        }
        let gp = global[seg.parent.index()];
        let local_dir = gp.conjugate().rotate(&d);
        let q = UnitQuaternion::shortest_arc(&REST_DIRECTION, &local_dir)?;
        global[seg.child.index()] = gp.mul_raw(&q);
        lengths.push(len);
        quats.push(q);
    }
    Ok(KinematicState {
        root_pos: frame.position(JointId::Root),
        lengths,
        quats,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointAngle {
    /// Child joint of the segment the rotation belongs to.
    pub joint: JointId,
    /// Radians in `[0, π]`.
    pub angle: f64,
    pub rotation: UnitQuaternion,
}

pub type JointAngles = Vec<JointAngle>;

/// Rotation angle of each segment relative to its parent segment, in
/// topology order.
pub fn extract_joint_angles(state: &KinematicState, topo: &SkeletonTopology) -> JointAngles {
    topo.segments()
        .iter()
        .zip(&state.quats)
        .map(|(seg, q)| JointAngle {
            joint: seg.child,
            angle: q.angle().clamp(0.0, std::f64::consts::PI),
            rotation: *q,
        })
        .collect()
}

/// Joint angles of the canonical chain that reproduces a set of joint
/// positions. Comparing angles through this route removes the twist about
/// each segment axis, which positions cannot observe.
pub fn joint_angles_from_positions(frame: &Frame, topo: &SkeletonTopology) -> Result<JointAngles> {
    let state = init_state_from_frame(frame, topo)?;
    Ok(extract_joint_angles(&state, topo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_state;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;
    use JointId::*;

    fn frame_of(pos: JointPositions) -> Frame {
        Frame::new(0.0, pos)
    }

    #[test]
    fn straight_chain_along_z() {
        let topo = SkeletonTopology::default();
        let s = KinematicState::straight(&topo, Vector3::zeros(), 0.1);
        let p = forward_kinematics(&s, &topo).unwrap();
        assert!((p[Spine.index()] - Vector3::new(0.0, 0.0, 0.1)).norm() < 1e-15);
        assert!((p[Neck.index()] - Vector3::new(0.0, 0.0, 0.2)).norm() < 1e-15);
        assert!((p[Head.index()] - Vector3::new(0.0, 0.0, 0.3)).norm() < 1e-15);
        assert!((p[FooR.index()] - Vector3::new(0.0, 0.0, 0.4)).norm() < 1e-15);
    }

    /// Pins the composition order: a local rotation on the upper arm turns
    /// the forearm with it, and the forearm's own rotation is applied in
    /// the upper arm's frame.
    #[test]
    fn composition_order_golden() {
        let topo = SkeletonTopology::default();
        let mut s = KinematicState::straight(&topo, Vector3::zeros(), 1.0);
        let upper = topo.segment_index(ElbL).unwrap();
        let lower = topo.segment_index(WriL).unwrap();
        // upper arm: +90° about x takes +z to -y
        s.quats[upper] = UnitQuaternion::from_axis_angle(&Vector3::x(), PI / 2.0).unwrap();
        // fore arm: +90° about y, in the upper arm frame
        s.quats[lower] = UnitQuaternion::from_axis_angle(&Vector3::y(), PI / 2.0).unwrap();
        let p = forward_kinematics(&s, &topo).unwrap();
        let sho = p[ShoL.index()];
        assert!((p[ElbL.index()] - sho - Vector3::new(0.0, -1.0, 0.0)).norm() < 1e-12);
        // G = Rx(90) * Ry(90): z -> x under Ry, x stays x under Rx
        assert!((p[WriL.index()] - p[ElbL.index()] - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rotating_shoulder_moves_only_its_subtree() {
        let topo = SkeletonTopology::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_state(&topo, &mut rng);
        let before = forward_kinematics(&s, &topo).unwrap();
        let mut t = s.clone();
        let k = topo.segment_index(ShoL).unwrap();
        t.quats[k] = UnitQuaternion::from_axis_angle(&Vector3::new(1.0, 2.0, 0.5), 0.7)
            .unwrap()
            .compose(&t.quats[k])
            .unwrap();
        let after = forward_kinematics(&t, &topo).unwrap();
        let moved = topo.descendants(ShoL);
        for j in JointId::ALL {
            if moved.contains(&j) || j == ShoL {
                continue;
            }
            assert_eq!(before[j.index()], after[j.index()], "{j} moved");
        }
        for j in [ElbL, WriL, HanL] {
            assert!((before[j.index()] - after[j.index()]).norm() > 1e-6);
        }
    }

    #[test]
    fn incomplete_state_is_an_error() {
        let topo = SkeletonTopology::default();
        let mut s = KinematicState::straight(&topo, Vector3::zeros(), 0.1);
        s.lengths.pop();
        assert!(matches!(forward_kinematics(&s, &topo), Err(Error::IncompleteState(_))));
    }

    #[test]
    fn init_round_trips_positions() {
        let topo = SkeletonTopology::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let s = random_state(&topo, &mut rng);
            let p = forward_kinematics(&s, &topo).unwrap();
            let init = init_state_from_frame(&frame_of(p), &topo).unwrap();
            let q = forward_kinematics(&init, &topo).unwrap();
            for j in JointId::ALL {
                assert!((p[j.index()] - q[j.index()]).norm() < 1e-6);
            }
            for (a, b) in s.lengths.iter().zip(&init.lengths) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn init_on_straight_chain_is_identity() {
        let topo = SkeletonTopology::default();
        let s = KinematicState::straight(&topo, Vector3::new(0.3, -0.2, 1.0), 0.2);
        let p = forward_kinematics(&s, &topo).unwrap();
        let init = init_state_from_frame(&frame_of(p), &topo).unwrap();
        for q in init.quats {
            assert_eq!(q, UnitQuaternion::IDENTITY);
        }
    }

    #[test]
    fn init_errors() {
        let topo = SkeletonTopology::default();
        let s = KinematicState::straight(&topo, Vector3::zeros(), 0.2);
        let mut p = forward_kinematics(&s, &topo).unwrap();
        p[HanL.index()] = p[WriL.index()];
        assert_eq!(
            init_state_from_frame(&frame_of(p), &topo),
            Err(Error::DegenerateSegment(HanL))
        );

        let mut f = frame_of(forward_kinematics(&s, &topo).unwrap());
        f.mark_lost(KneR);
        assert_eq!(init_state_from_frame(&f, &topo), Err(Error::LostJoint(KneR)));
    }

    #[test]
    fn joint_angle_cases() {
        let topo = SkeletonTopology::default();
        let mut s = KinematicState::straight(&topo, Vector3::zeros(), 0.2);
        let k = topo.segment_index(WriL).unwrap();
        s.quats[k] = UnitQuaternion::from_axis_angle(&Vector3::x(), PI / 2.0).unwrap();
        let angles = extract_joint_angles(&s, &topo);
        assert_eq!(angles[0].angle, 0.0);
        assert!((angles[k].angle - PI / 2.0).abs() < 1e-12);
        assert_eq!(angles[k].joint, WriL);
    }

    #[test]
    fn joint_angle_matches_trace_oracle() {
        let topo = SkeletonTopology::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let s = random_state(&topo, &mut rng);
            for (a, q) in extract_joint_angles(&s, &topo).iter().zip(&s.quats) {
                let m = q.to_matrix().unwrap();
                let oracle = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
                // acos is ill-conditioned near 0 and π
                let tol = if oracle < 1e-3 || PI - oracle < 1e-3 {
                    1e-6
                } else {
                    1e-9
                };
                assert!((a.angle - oracle).abs() < tol, "{} vs {}", a.angle, oracle);
            }
        }
    }

    #[test]
    fn vector_layout_round_trip() {
        let topo = SkeletonTopology::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = random_state(&topo, &mut rng);
        let v = s.to_vector();
        assert_eq!(v.len(), 98);
        assert_eq!(v[3], s.lengths[0]);
        assert_eq!(v[3 + 19], s.quats[0].w);
        let back = KinematicState::from_vector(&v, 19).unwrap();
        for (a, b) in back.quats.iter().zip(&s.quats) {
            for (x, y) in a.as_array().iter().zip(b.as_array()) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn any_state() -> impl Strategy<Value = KinematicState> {
            any::<u64>().prop_map(|seed| {
                let topo = SkeletonTopology::default();
                random_state(&topo, &mut ChaCha8Rng::seed_from_u64(seed))
            })
        }

        proptest! {
            #[test]
            fn fk_preserves_lengths(s in any_state()) {
                let topo = SkeletonTopology::default();
                let p = forward_kinematics(&s, &topo).unwrap();
                for (i, seg) in topo.segments().iter().enumerate() {
                    let d = (p[seg.child.index()] - p[seg.parent.index()]).norm();
                    prop_assert!((d - s.lengths[i]).abs() < 1e-9);
                }
            }

            #[test]
            fn fk_translation_equivariant(s in any_state(), dx in -2.0..2.0f64, dy in -2.0..2.0f64, dz in -2.0..2.0f64) {
                let topo = SkeletonTopology::default();
                let delta = Vector3::new(dx, dy, dz);
                let p = forward_kinematics(&s, &topo).unwrap();
                let mut t = s.clone();
                t.root_pos += delta;
                let q = forward_kinematics(&t, &topo).unwrap();
                for j in 0..NUM_JOINTS {
                    prop_assert!((q[j] - p[j] - delta).norm() < 1e-12);
                }
            }

            #[test]
            fn fk_global_rotation_equivariant(s in any_state(), ax in -1.0..1.0f64, ay in -1.0..1.0f64, ang in 0.0..3.0f64) {
                let topo = SkeletonTopology::default();
                let r = UnitQuaternion::from_axis_angle(&Vector3::new(ax, ay, 0.5), ang).unwrap();
                let p = forward_kinematics(&s, &topo).unwrap();
                let mut t = s.clone();
                for j in topo.children(Root).to_vec() {
                    let k = topo.segment_index(j).unwrap();
                    t.quats[k] = r.compose(&t.quats[k]).unwrap();
                }
                let q = forward_kinematics(&t, &topo).unwrap();
                let root = s.root_pos;
                for j in 0..NUM_JOINTS {
                    let expect = r.rotate(&(p[j] - root));
                    prop_assert!((q[j] - root - expect).norm() < 1e-9);
                }
            }
        }
    }
}
