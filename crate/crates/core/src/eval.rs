//! Accuracy of one stream against a reference capture: temporal
//! resampling, rigid alignment, joint offsets and segment length errors.

use crate::error::{Error, Result};
use crate::frame::{Confidence, Frame, FrameStream};
use crate::kinematics::joint_angles_from_positions;
use crate::outlier::{classify_outliers, fit_mixture_em, EmConfig, MIN_SAMPLES};
use crate::skeleton::{segment_name, JointId, EVALUATION_SEGMENTS, NUM_JOINTS};
use nalgebra::{Matrix3, Matrix4, Vector3};
use std::fmt::Write as _;

/// Resamples `stream` at `targets` (strictly increasing) by per-joint linear
/// interpolation. Targets up to one nominal period outside the source span
/// take the nearest end frame; anything further is an error.
pub fn resample_stream(stream: &FrameStream, targets: &[f64]) -> Result<FrameStream> {
    let frames = stream.frames();
    if frames.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let period = 1.0 / stream.nominal_rate;
    let (t0, t1) = (frames[0].t, frames[frames.len() - 1].t);
    let outside: Vec<f64> = targets
        .iter()
        .copied()
        .filter(|t| !(*t >= t0 - period && *t <= t1 + period))
        .collect();
    if !outside.is_empty() {
        return Err(Error::OutOfRange(outside));
    }
    let out = targets
        .iter()
        .map(|&t| {
            let k = frames.partition_point(|f| f.t <= t);
            if k == 0 {
                return Frame { t, ..frames[0].clone() };
            }
            let a = &frames[k - 1];
            if a.t == t || k == frames.len() {
                return Frame { t, ..a.clone() };
            }
            let b = &frames[k];
            let s = (t - a.t) / (b.t - a.t);
            let mut f = Frame::new(t, a.pos);
            for j in JointId::ALL {
                let i = j.index();
                if !a.is_observed(j) || !b.is_observed(j) {
                    f.mark_lost(j);
                    continue;
                }
                f.pos[i] = a.pos[i] + (b.pos[i] - a.pos[i]) * s;
                f.conf[i] = if a.conf[i] == Confidence::Tracked && b.conf[i] == Confidence::Tracked {
                    Confidence::Tracked
                } else {
                    Confidence::Inferred
                };
            }
            f
        })
        .collect();
    FrameStream::new(stream.topology_arc(), out, stream.nominal_rate)
}

/// `p ↦ R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        rotation: Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0),
        translation: Vector3::new(0.0, 0.0, 0.0),
    };

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Rotation angle of `self.rotation`, radians. Uses the skew part as
    /// well as the trace, so small angles keep full precision.
    pub fn angle(&self) -> f64 {
        let r = &self.rotation;
        let skew = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
        (0.5 * skew.norm()).atan2(0.5 * (r.trace() - 1.0))
    }

    pub fn apply_to_stream(&self, stream: &FrameStream) -> FrameStream {
        stream.map_positions(|p| self.apply(p))
    }
}

/// Least-squares rotation and translation taking `source` onto `target`
/// (SVD of the cross covariance, with the reflection fixed).
pub fn align_points(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<RigidTransform> {
    if source.len() != target.len() {
        return Err(Error::DimensionMismatch {
            expected: source.len(),
            got: target.len(),
        });
    }
    if source.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "need at least 3 correspondences, got {}",
            source.len()
        )));
    }
    let n = source.len() as f64;
    let cs = source.iter().sum::<Vector3<f64>>() / n;
    let ct = target.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    let mut spread = 0.0f64;
    for (s, t) in source.iter().zip(target) {
        let ds = s - cs;
        h += ds * (t - ct).transpose();
        spread = spread.max(ds.norm());
    }
    // singular values come sorted in descending order
    let svd = h.svd(true, true);
    let sv = svd.singular_values;
    if spread == 0.0 || !(sv[1] > 1e-10 * sv[0]) {
        return Err(Error::DegenerateGeometry(
            "correspondences are collinear or coincident".into(),
        ));
    }
    if source == target {
        // exact answer; the SVD would only add rounding
        return Ok(RigidTransform::IDENTITY);
    }
    let (u, v) = (svd.u.unwrap(), svd.v_t.unwrap().transpose());
    let d = (v * u.transpose()).determinant().signum();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rotation = v * fix * u.transpose();
    Ok(RigidTransform {
        rotation,
        translation: ct - rotation * cs,
    })
}

/// Transform taking `source` onto `reference`, fitted on `joints` over the
/// first `frames` frames (matched by index) where both streams observe the
/// joint.
pub fn align_rigid(
    source: &FrameStream,
    reference: &FrameStream,
    joints: &[JointId],
    frames: usize,
) -> Result<RigidTransform> {
    let mut src = Vec::new();
    let mut dst = Vec::new();
    for (a, b) in source.frames().iter().zip(reference.frames()).take(frames) {
        for &j in joints {
            if a.is_observed(j) && b.is_observed(j) {
                src.push(a.position(j));
                dst.push(b.position(j));
            }
        }
    }
    align_points(&src, &dst)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Alignment {
    /// Fit on the configured joints and frames.
    Auto,
    Disabled,
    Fixed(RigidTransform),
}

pub const TORSO_JOINTS: [JointId; 7] = [
    JointId::Root,
    JointId::Spine,
    JointId::Neck,
    JointId::ShoL,
    JointId::ShoR,
    JointId::HipL,
    JointId::HipR,
];

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub alignment: Alignment,
    pub align_joints: Vec<JointId>,
    pub align_frames: usize,
    /// Also report joint offsets with mixture-flagged samples removed.
    pub exclude_outliers: bool,
    pub outlier_threshold: f64,
    pub em: EmConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            alignment: Alignment::Auto,
            align_joints: TORSO_JOINTS.to_vec(),
            align_frames: 50,
            exclude_outliers: false,
            outlier_threshold: 0.5,
            em: EmConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alignment == Alignment::Auto && (self.align_joints.is_empty() || self.align_frames == 0) {
            return Err(Error::Invalid(
                "alignment needs at least one joint and one frame".into(),
            ));
        }
        if !(self.outlier_threshold > 0.0 && self.outlier_threshold < 1.0) {
            return Err(Error::Invalid(format!(
                "outlier threshold must be in (0, 1), got {}",
                self.outlier_threshold
            )));
        }
        if self.em.max_iter == 0 || !(self.em.tol > 0.0) || !(self.em.init_rho > 0.0 && self.em.init_rho < 1.0) {
            return Err(Error::Invalid(
                "EM needs max_iter >= 1, tol > 0 and init_rho in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Mean and sample SD in millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct Stats {
    pub name: String,
    pub mean_mm: f64,
    pub sd_mm: f64,
    pub n: usize,
}

impl Stats {
    /// `values` in meters. The SD uses `n - 1` and is 0 for a single sample.
    pub fn from_meters(name: impl Into<String>, values: &[f64]) -> Stats {
        let n = values.len();
        let mean = if n > 0 {
            values.iter().sum::<f64>() / n as f64
        } else {
            0.0
        };
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Stats {
            name: name.into(),
            mean_mm: mean * 1000.0,
            sd_mm: sd * 1000.0,
            n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub joints: Vec<Stats>,
    pub segments: Vec<Stats>,
    /// Joint offsets after dropping mixture-flagged samples.
    pub joints_without_outliers: Option<Vec<Stats>>,
    /// Applied to the test stream before comparison.
    pub transform: RigidTransform,
    /// Test frames that overlap the reference span.
    pub frames: usize,
    pub notices: Vec<String>,
}

impl AccuracyReport {
    pub fn joint(&self, j: JointId) -> Option<&Stats> {
        self.joints.iter().find(|s| s.name == j.name())
    }

    /// `# joints` and `# segments` sections, plus `# joints_without_outliers`
    /// when present. Notices become trailing comment lines.
    pub fn to_csv(&self) -> String {
        fn section(out: &mut String, title: &str, key: &str, rows: &[Stats]) {
            let _ = writeln!(out, "# {title}\n{key},mean_mm,sd_mm,n");
            for s in rows {
                let _ = writeln!(out, "{},{},{},{}", s.name, s.mean_mm, s.sd_mm, s.n);
            }
        }
        let mut out = String::new();
        section(&mut out, "joints", "joint", &self.joints);
        out.push('\n');
        section(&mut out, "segments", "segment", &self.segments);
        if let Some(rows) = &self.joints_without_outliers {
            out.push('\n');
            section(&mut out, "joints_without_outliers", "joint", rows);
        }
        for n in &self.notices {
            let _ = writeln!(out, "# note: {n}");
        }
        out
    }
}

pub fn evaluate_accuracy(test: &FrameStream, reference: &FrameStream, config: &EvalConfig) -> Result<AccuracyReport> {
    config.validate()?;
    if test.topology() != reference.topology() {
        return Err(Error::Invalid("test and reference use different topologies".into()));
    }
    let (Some(r0), Some(r1)) = (reference.frames().first(), reference.frames().last()) else {
        return Err(Error::NoOverlap);
    };
    let period = 1.0 / reference.nominal_rate;
    let (lo, hi) = (r0.t - period, r1.t + period);
    let overlap: Vec<Frame> = test
        .frames()
        .iter()
        .filter(|f| f.t >= lo && f.t <= hi)
        .cloned()
        .collect();
    if overlap.is_empty() {
        return Err(Error::NoOverlap);
    }
    let times: Vec<f64> = overlap.iter().map(|f| f.t).collect();
    let test = FrameStream::new(test.topology_arc(), overlap, test.nominal_rate)?;
    let reference = resample_stream(reference, &times)?;

    let transform = match &config.alignment {
        Alignment::Disabled => RigidTransform::IDENTITY,
        Alignment::Fixed(t) => *t,
        Alignment::Auto => align_rigid(&test, &reference, &config.align_joints, config.align_frames)?,
    };
    let test = if transform == RigidTransform::IDENTITY {
        test
    } else {
        transform.apply_to_stream(&test)
    };

    let topo = test.topology();
    let mut notices = Vec::new();
    let mut offsets: Vec<(JointId, Vec<f64>)> = Vec::with_capacity(NUM_JOINTS);
    for j in topo.joint_order() {
        let d: Vec<f64> = test
            .frames()
            .iter()
            .zip(reference.frames())
            .filter(|(a, b)| a.is_observed(j) && b.is_observed(j))
            .map(|(a, b)| (a.position(j) - b.position(j)).norm())
            .collect();
        if d.is_empty() {
            notices.push(format!("{j} omitted: no frame observed in both streams"));
        } else {
            offsets.push((j, d));
        }
    }
    let joints = offsets.iter().map(|(j, d)| Stats::from_meters(j.name(), d)).collect();

    let segments = EVALUATION_SEGMENTS
        .iter()
        .filter_map(|&(c, p)| {
            let diffs: Vec<f64> = test
                .frames()
                .iter()
                .zip(reference.frames())
                .filter(|(a, b)| a.is_observed(c) && a.is_observed(p) && b.is_observed(c) && b.is_observed(p))
                .map(|(a, b)| (a.position(c) - a.position(p)).norm() - (b.position(c) - b.position(p)).norm())
                .collect();
            let name = segment_name(c, p);
            if diffs.is_empty() {
                notices.push(format!("{name} omitted: no frame observed in both streams"));
                None
            } else {
                Some(Stats::from_meters(name, &diffs))
            }
        })
        .collect();

    let joints_without_outliers = config.exclude_outliers.then(|| {
        offsets
            .iter()
            .map(|(j, d)| {
                if d.len() < MIN_SAMPLES {
                    notices.push(format!("{j}: too few samples for outlier fitting, all kept"));
                    return Stats::from_meters(j.name(), d);
                }
                match fit_mixture_em(d, &config.em) {
                    Ok(params) => {
                        let rep = classify_outliers(d, &params, config.outlier_threshold);
                        let kept: Vec<f64> = d
                            .iter()
                            .zip(&rep.flags)
                            .filter(|(_, f)| !**f)
                            .map(|(v, _)| *v)
                            .collect();
                        Stats::from_meters(j.name(), &kept)
                    }
                    Err(e) => {
                        notices.push(format!("{j}: outlier fit failed ({e}), all kept"));
                        Stats::from_meters(j.name(), d)
                    }
                }
            })
            .collect()
    });

    Ok(AccuracyReport {
        joints,
        segments,
        joints_without_outliers,
        transform,
        frames: times.len(),
        notices,
    })
}

/// RMSE, in radians, of the per-segment rotation angles of `test` against
/// `truth`, both derived from joint positions (so the unobservable twist
/// about each segment drops out). Frames are paired by index; frames where
/// either stream lost a joint are skipped.
pub fn joint_angle_rmse(test: &FrameStream, truth: &FrameStream) -> Result<f64> {
    if test.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: test.len(),
        });
    }
    let topo = truth.topology();
    let (mut se, mut n) = (0.0, 0usize);
    for (a, b) in test.frames().iter().zip(truth.frames()) {
        let (Ok(x), Ok(y)) = (
            joint_angles_from_positions(a, topo),
            joint_angles_from_positions(b, topo),
        ) else {
            continue;
        };
        for (p, q) in x.iter().zip(&y) {
            se += (p.angle - q.angle).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    Ok((se / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::SkeletonTopology;
    use crate::synth::{arm_raise_spec, generate_motion};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn topo() -> Arc<SkeletonTopology> {
        Arc::new(SkeletonTopology::default())
    }

    fn stream_of(rate: f64, n: usize, f: impl Fn(f64, usize) -> Vector3<f64>) -> FrameStream {
        let frames = (0..n)
            .map(|i| {
                let t = i as f64 / rate;
                Frame::new(t, std::array::from_fn(|j| f(t, j)))
            })
            .collect();
        FrameStream::new(topo(), frames, rate).unwrap()
    }

    fn with_noise(s: &FrameStream, sd: f64, seed: u64) -> FrameStream {
        let noise = Normal::new(0.0, sd).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut frames = s.frames().to_vec();
        for f in frames.iter_mut() {
            for p in f.pos.iter_mut() {
                *p += Vector3::from_fn(|_, _| noise.sample(&mut rng));
            }
        }
        FrameStream::new(s.topology_arc(), frames, s.nominal_rate).unwrap()
    }

    fn rot_z(deg: f64) -> Matrix3<f64> {
        let (s, c) = deg.to_radians().sin_cos();
        Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
    }

    fn arm_stream() -> FrameStream {
        let spec = arm_raise_spec(&topo()).unwrap();
        generate_motion(&spec, topo()).unwrap().0
    }

    #[test]
    fn resample_at_source_times_is_identity() {
        let s = arm_stream();
        let r = resample_stream(&s, &s.timestamps()).unwrap();
        assert_eq!(r, s);
    }

    #[test]
    fn linear_motion_is_exact() {
        let v = |j: usize| Vector3::new(0.1 + j as f64 * 0.01, -0.2, 0.05);
        let s = stream_of(120.0, 600, |t, j| Vector3::new(j as f64, 1.0, 2.0) * 0.1 + v(j) * t);
        let targets: Vec<f64> = (0..100).map(|i| i as f64 / 20.0 + 0.013).collect();
        let r = resample_stream(&s, &targets).unwrap();
        for f in r.frames() {
            for j in 0..NUM_JOINTS {
                let expect = Vector3::new(j as f64, 1.0, 2.0) * 0.1 + v(j) * f.t;
                assert!((f.pos[j] - expect).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn sinusoid_error_within_interpolation_bound() {
        let (a, w) = (0.3, 2.0 * PI * 1.5);
        let s = stream_of(120.0, 600, |t, _| Vector3::new(a * (w * t).sin(), 0.0, 0.0));
        let targets: Vec<f64> = (0..99).map(|i| i as f64 / 20.0 + 0.004).collect();
        let r = resample_stream(&s, &targets).unwrap();
        let h: f64 = 1.0 / 120.0;
        let bound = h * h / 8.0 * a * w * w;
        let mut worst = 0.0f64;
        for f in r.frames() {
            worst = worst.max((f.pos[0].x - a * (w * f.t).sin()).abs());
        }
        assert!(worst <= bound * (1.0 + 1e-9), "{worst} > {bound}");
        assert!(worst > 0.0);
    }

    #[test]
    fn lost_brackets_propagate() {
        let mut s = stream_of(10.0, 5, |t, _| Vector3::new(t, 0.0, 0.0)).into_frames();
        s[2].mark_lost(JointId::Head);
        let s = FrameStream::new(topo(), s, 10.0).unwrap();
        let r = resample_stream(&s, &[0.15, 0.25, 0.35]).unwrap();
        assert!(!r.frames()[0].is_observed(JointId::Head));
        assert!(!r.frames()[1].is_observed(JointId::Head));
        assert!(r.frames()[2].is_observed(JointId::Head));
        assert!(r.frames()[0].is_observed(JointId::Neck));
    }

    #[test]
    fn out_of_range_targets() {
        let s = stream_of(10.0, 5, |t, _| Vector3::new(t, 0.0, 0.0));
        let r = resample_stream(&s, &[-0.05, 0.45]).unwrap();
        assert_eq!(r.frames()[0].pos[0].x, 0.0);
        assert_eq!(r.frames()[1].pos[0].x, 0.4);
        let err = resample_stream(&s, &[-0.2, 0.1, 0.7]).unwrap_err();
        assert_eq!(err, Error::OutOfRange(vec![-0.2, 0.7]));
    }

    #[test]
    fn identity_alignment() {
        let s = arm_stream();
        let t = align_rigid(&s, &s, &TORSO_JOINTS, 50).unwrap();
        assert!((t.rotation - Matrix3::identity()).amax() < 1e-9);
        assert!(t.translation.amax() < 1e-9);
    }

    #[test]
    fn recovers_rotation_and_shift() {
        let reference = arm_stream();
        let truth = RigidTransform {
            rotation: rot_z(30.0),
            translation: Vector3::new(1.0, 2.0, 3.0),
        };
        let source = truth.apply_to_stream(&reference);
        // source -> reference is the inverse
        let t = align_rigid(&source, &reference, &TORSO_JOINTS, 50).unwrap();
        assert!((t.rotation - truth.rotation.transpose()).amax() < 1e-9);
        let back = align_rigid(&reference, &source, &TORSO_JOINTS, 50).unwrap();
        assert!((back.rotation - truth.rotation).amax() < 1e-9);
        assert!((back.translation - truth.translation).amax() < 1e-9);
    }

    #[test]
    fn noisy_alignment_over_seeds() {
        let noise = Normal::new(0.0, 0.01).unwrap();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth = RigidTransform {
                rotation: rot_z(rng.random_range(-90.0..90.0)),
                translation: Vector3::new(rng.random_range(-2.0..2.0), 0.5, 1.0),
            };
            let refs: Vec<Vector3<f64>> = (0..1000)
                .map(|_| {
                    Vector3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(0.0..2.0),
                    )
                })
                .collect();
            let src: Vec<Vector3<f64>> = refs
                .iter()
                .map(|p| truth.apply(p) + Vector3::from_fn(|_, _| noise.sample(&mut rng)))
                .collect();
            let t = align_points(&refs, &src).unwrap();
            let relative = RigidTransform {
                rotation: t.rotation * truth.rotation.transpose(),
                translation: Vector3::zeros(),
            };
            assert!((t.translation - truth.translation).norm() < 0.005, "seed {seed}");
            assert!(relative.angle() < 0.5f64.to_radians(), "seed {seed}");
        }
    }

    #[test]
    fn reflection_is_not_returned() {
        let p = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
        ];
        let mirrored: Vec<_> = p.iter().map(|v| Vector3::new(-v.x, v.y, v.z)).collect();
        let t = align_points(&p, &mirrored).unwrap();
        assert!((t.rotation.determinant() - 1.0).abs() < 1e-12);
        assert!((t.rotation * t.rotation.transpose() - Matrix3::identity()).amax() < 1e-12);
    }

    #[test]
    fn degenerate_correspondences() {
        let line: Vec<_> = (0..10).map(|i| Vector3::new(i as f64, 2.0 * i as f64, 0.0)).collect();
        assert!(matches!(align_points(&line, &line), Err(Error::DegenerateGeometry(_))));
        let two = [Vector3::zeros(), Vector3::x()];
        assert!(matches!(align_points(&two, &two), Err(Error::DegenerateGeometry(_))));
        let same = vec![Vector3::new(1.0, 1.0, 1.0); 5];
        assert!(matches!(align_points(&same, &same), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn self_evaluation_is_zero() {
        let s = arm_stream();
        let rep = evaluate_accuracy(&s, &s, &EvalConfig::default()).unwrap();
        assert_eq!(rep.joints.len(), NUM_JOINTS);
        assert_eq!(rep.segments.len(), 14);
        assert_eq!(rep.transform, RigidTransform::IDENTITY);
        for st in rep.joints.iter().chain(&rep.segments) {
            assert_eq!((st.mean_mm, st.sd_mm), (0.0, 0.0), "{st:?}");
            assert_eq!(st.n, s.len());
        }
        let exact = evaluate_accuracy(
            &s,
            &s,
            &EvalConfig {
                alignment: Alignment::Disabled,
                ..EvalConfig::default()
            },
        )
        .unwrap();
        for st in exact.joints.iter().chain(&exact.segments) {
            assert_eq!((st.mean_mm, st.sd_mm), (0.0, 0.0));
        }
    }

    #[test]
    fn constant_shift_without_alignment() {
        let s = arm_stream();
        let shifted = s.map_positions(|p| p + Vector3::new(0.1, 0.0, 0.0));
        let cfg = EvalConfig {
            alignment: Alignment::Disabled,
            ..EvalConfig::default()
        };
        let rep = evaluate_accuracy(&shifted, &s, &cfg).unwrap();
        for st in &rep.joints {
            assert!((st.mean_mm - 100.0).abs() < 1e-9 && st.sd_mm < 1e-9, "{st:?}");
        }
        for st in &rep.segments {
            assert!(st.mean_mm.abs() < 1e-9);
        }
        // alignment removes the shift
        let rep = evaluate_accuracy(&shifted, &s, &EvalConfig::default()).unwrap();
        assert!(rep.joints.iter().all(|st| st.mean_mm < 1e-6));
        assert!((rep.transform.translation + Vector3::new(0.1, 0.0, 0.0)).amax() < 1e-9);
    }

    #[test]
    fn noise_matches_monte_carlo_distance() {
        let sd = 0.02;
        let s = stream_of(30.0, 2000, |t, j| Vector3::new(j as f64 * 0.1, t.sin(), 1.0));
        let noise = Normal::new(0.0, sd).unwrap();
        let noisy = with_noise(&s, sd, 7);
        let cfg = EvalConfig {
            alignment: Alignment::Disabled,
            ..EvalConfig::default()
        };
        let rep = evaluate_accuracy(&noisy, &s, &cfg).unwrap();
        // independent draw of the distance distribution
        let mut mc_rng = ChaCha8Rng::seed_from_u64(99);
        let d: Vec<f64> = (0..200_000)
            .map(|_| Vector3::<f64>::from_fn(|_, _| noise.sample(&mut mc_rng)).norm())
            .collect();
        let mc = Stats::from_meters("mc", &d);
        for st in &rep.joints {
            assert!((st.mean_mm / mc.mean_mm - 1.0).abs() < 0.05, "{st:?} vs {mc:?}");
            assert!((st.sd_mm / mc.sd_mm - 1.0).abs() < 0.05, "{st:?} vs {mc:?}");
        }
    }

    #[test]
    fn rigid_motion_of_both_streams_keeps_statistics() {
        let s = arm_stream();
        let noisy = with_noise(&s, 0.01, 3);
        let g = RigidTransform {
            rotation: rot_z(40.0),
            translation: Vector3::new(-1.0, 0.3, 2.0),
        };
        let a = evaluate_accuracy(&noisy, &s, &EvalConfig::default()).unwrap();
        let b = evaluate_accuracy(
            &g.apply_to_stream(&noisy),
            &g.apply_to_stream(&s),
            &EvalConfig::default(),
        )
        .unwrap();
        for (x, y) in a.joints.iter().zip(&b.joints).chain(a.segments.iter().zip(&b.segments)) {
            assert!((x.mean_mm - y.mean_mm).abs() < 1e-6 && (x.sd_mm - y.sd_mm).abs() < 1e-6);
        }
        // lengths do not care about a transform of one stream only
        let c = evaluate_accuracy(
            &g.apply_to_stream(&noisy),
            &s,
            &EvalConfig {
                alignment: Alignment::Disabled,
                ..EvalConfig::default()
            },
        )
        .unwrap();
        for (x, y) in a.segments.iter().zip(&c.segments) {
            assert!((x.mean_mm - y.mean_mm).abs() < 1e-6 && (x.sd_mm - y.sd_mm).abs() < 1e-6);
        }
    }

    #[test]
    fn reference_at_higher_rate() {
        let f = |t: f64, j: usize| Vector3::new(j as f64 * 0.05, 0.2 * t, 1.0);
        let reference = stream_of(120.0, 1200, f);
        let test = stream_of(20.0, 200, f);
        let rep = evaluate_accuracy(
            &test,
            &reference,
            &EvalConfig {
                alignment: Alignment::Disabled,
                ..EvalConfig::default()
            },
        )
        .unwrap();
        assert_eq!(rep.frames, 200);
        assert!(rep.joints.iter().all(|s| s.mean_mm < 1e-9));
    }

    #[test]
    fn no_overlap_and_lost_joints() {
        let a = stream_of(10.0, 20, |_, _| Vector3::x());
        let late: Vec<Frame> = (0..20)
            .map(|i| Frame::new(10.0 + i as f64 * 0.1, [Vector3::x(); NUM_JOINTS]))
            .collect();
        let b = FrameStream::new(topo(), late, 10.0).unwrap();
        assert_eq!(
            evaluate_accuracy(&a, &b, &EvalConfig::default()).unwrap_err(),
            Error::NoOverlap
        );

        let s = arm_stream();
        let mut frames = s.frames().to_vec();
        frames.iter_mut().for_each(|f| f.mark_lost(JointId::HanL));
        let lost = FrameStream::new(topo(), frames, s.nominal_rate).unwrap();
        let rep = evaluate_accuracy(&lost, &s, &EvalConfig::default()).unwrap();
        assert_eq!(rep.joints.len(), NUM_JOINTS - 1);
        assert!(rep.joint(JointId::HanL).is_none());
        assert_eq!(rep.segments.len(), 13);
        assert_eq!(rep.notices.len(), 2);
    }

    #[test]
    fn outlier_excluded_offsets() {
        let s = stream_of(30.0, 600, |t, j| Vector3::new(j as f64 * 0.1, t.sin(), 1.0));
        let mut frames = with_noise(&s, 0.01, 11).into_frames();
        for f in frames.iter_mut().step_by(10) {
            f.pos[JointId::WriL.index()] += Vector3::new(0.5, 0.0, 0.0);
        }
        let noisy = FrameStream::new(topo(), frames, 30.0).unwrap();
        let cfg = EvalConfig {
            alignment: Alignment::Disabled,
            exclude_outliers: true,
            ..EvalConfig::default()
        };
        let rep = evaluate_accuracy(&noisy, &s, &cfg).unwrap();
        let clean = rep.joints_without_outliers.as_ref().unwrap();
        let wl = clean.iter().find(|st| st.name == "WRI_L").unwrap();
        assert!(rep.joint(JointId::WriL).unwrap().mean_mm > 50.0);
        assert!(wl.mean_mm < 25.0, "{wl:?}");
        assert!(wl.n < 600 && wl.n >= 500);
        assert!(rep
            .to_csv()
            .contains("# joints_without_outliers\njoint,mean_mm,sd_mm,n\n"));
    }

    #[test]
    fn angle_rmse_of_a_bent_elbow() {
        let s = arm_stream();
        assert_eq!(joint_angle_rmse(&s, &s).unwrap(), 0.0);
        // fold the left forearm by a further 0.1 rad about the elbow, in
        // the plane it already swings in
        let t = topo();
        let spec = arm_raise_spec(&t).unwrap();
        let mut bent = spec.clone();
        let k = t.segment_index(JointId::WriL).unwrap();
        let extra = crate::quat::UnitQuaternion::from_axis_angle(&Vector3::x(), 0.1).unwrap();
        bent.base.quats[k] = bent.base.quats[k].compose(&extra).unwrap();
        let (b, _) = generate_motion(&bent, t.clone()).unwrap();
        let rmse = joint_angle_rmse(&b, &s).unwrap();
        // one segment of 19 off by about 0.1 rad (not exactly: the angle
        // is a magnitude and the base pose is not along x)
        let expect = 0.1 / (t.num_segments() as f64).sqrt();
        assert!(rmse > 0.3 * expect && rmse < 1.5 * expect, "{rmse} vs {expect}");
        assert!(joint_angle_rmse(&b, &resample_stream(&s, &s.timestamps()[1..]).unwrap()).is_err());
    }

    #[test]
    fn report_csv_layout() {
        let s = arm_stream();
        let csv = evaluate_accuracy(&s, &s, &EvalConfig::default()).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# joints");
        assert_eq!(lines[1], "joint,mean_mm,sd_mm,n");
        assert!(lines[2].starts_with("ROOT,"));
        assert!(csv.contains("\n\n# segments\nsegment,mean_mm,sd_mm,n\nARM_UP_L,"));
    }
}
