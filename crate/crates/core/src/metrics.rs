//! Session measures: repetitions, most moving joints, reachable range and
//! moving time.

use crate::error::{Error, Result};
use crate::frame::FrameStream;
use crate::kinematics::{global_rotations, KinematicState};
use crate::skeleton::{JointId, NUM_JOINTS};
use nalgebra::{Matrix3, Vector3};
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsConfig {
    /// Minimum peak prominence of an angle signal, radians.
    pub prominence_min: f64,
    /// Minimum peak prominence of a position signal, meters.
    pub position_prominence: f64,
    /// Minimum time between counted peaks, seconds.
    pub min_period: f64,
    /// Mean joint speed above which a frame interval counts as moving, m/s.
    pub speed_min: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            prominence_min: 10f64.to_radians(),
            position_prominence: 0.05,
            min_period: 0.5,
            speed_min: 0.05,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("prominence_min", self.prominence_min),
            ("position_prominence", self.position_prominence),
            ("min_period", self.min_period),
            ("speed_min", self.speed_min),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Shortest signal, in seconds, on which repetitions are counted.
pub const MIN_SIGNAL_SECONDS: f64 = 2.0;

/// Indices of local maxima. A flat top counts once, at its middle sample
/// (rounded down); the first and last samples are never peaks.
pub fn local_maxima(x: &[f64]) -> Vec<usize> {
    let mut peaks = Vec::new();
    let n = x.len();
    let mut i = 1;
    while i + 1 < n {
        if x[i] > x[i - 1] {
            let mut j = i;
            while j + 1 < n && x[j + 1] == x[i] {
                j += 1;
            }
            if j + 1 < n && x[j + 1] < x[i] {
                peaks.push((i + j) / 2);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    peaks
}

/// Height of a peak above the higher of its two bases. Each base is the
/// minimum between the peak and the nearest strictly higher sample on that
/// side, or the signal end.
pub fn prominence(x: &[f64], peak: usize) -> f64 {
    let h = x[peak];
    let mut left = h;
    for &v in x[..peak].iter().rev() {
        if v > h {
            break;
        }
        left = left.min(v);
    }
    let mut right = h;
    for &v in &x[peak + 1..] {
        if v > h {
            break;
        }
        right = right.min(v);
    }
    h - left.max(right)
}

/// Peaks with at least `min_prominence`, thinned so that no two kept peaks
/// are closer than `min_separation` seconds; taller peaks win.
pub fn find_peaks(times: &[f64], x: &[f64], min_prominence: f64, min_separation: f64) -> Vec<usize> {
    let mut cand: Vec<usize> = local_maxima(x)
        .into_iter()
        .filter(|&p| prominence(x, p) >= min_prominence)
        .collect();
    cand.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for p in cand {
        if kept.iter().all(|&k| (times[k] - times[p]).abs() >= min_separation) {
            kept.push(p);
        }
    }
    kept.sort_unstable();
    kept
}

/// Number of peaks of the mean-subtracted signal. Signals shorter than
/// [`MIN_SIGNAL_SECONDS`] count zero.
pub fn count_repetitions(times: &[f64], signal: &[f64], min_prominence: f64, min_separation: f64) -> usize {
    assert_eq!(times.len(), signal.len(), "one timestamp per sample");
    if signal.len() < 3 || times[times.len() - 1] - times[0] < MIN_SIGNAL_SECONDS {
        return 0;
    }
    let mean = signal.iter().sum::<f64>() / signal.len() as f64;
    let x: Vec<f64> = signal.iter().map(|v| v - mean).collect();
    find_peaks(times, &x, min_prominence, min_separation).len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepetitionSignal {
    /// Local rotation angle of the segment ending at `joint`.
    Angle,
    /// Projection on the principal axis of `joint`'s trajectory.
    Position,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Repetitions {
    pub count: usize,
    pub joint: JointId,
    pub signal: RepetitionSignal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReachableRange {
    pub joint: JointId,
    /// Per-axis `max - min`; depends on the coordinate frame.
    pub extents: Vector3<f64>,
    /// Largest distance from the first observed position.
    pub max_radial: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionMetrics {
    pub repetitions: Repetitions,
    /// Joints by descending path length, meters.
    pub most_moving: Vec<(JointId, f64)>,
    pub reachable_range: Vec<ReachableRange>,
    /// Seconds.
    pub moving_time: f64,
    pub duration: f64,
}

impl SessionMetrics {
    pub fn moving_fraction(&self) -> f64 {
        if self.duration > 0.0 {
            self.moving_time / self.duration
        } else {
            0.0
        }
    }

    pub fn path_length(&self, j: JointId) -> f64 {
        self.most_moving.iter().find(|(k, _)| *k == j).map_or(0.0, |(_, l)| *l)
    }

    pub fn range(&self, j: JointId) -> Option<&ReachableRange> {
        self.reachable_range.iter().find(|r| r.joint == j)
    }

    /// Sections `# repetitions`, `# most_moving`, `# reachable_range` and
    /// `# moving_time`, each followed by its own header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let r = &self.repetitions;
        let sig = match r.signal {
            RepetitionSignal::Angle => "angle",
            RepetitionSignal::Position => "position",
        };
        let _ = writeln!(
            out,
            "# repetitions\ncount,joint,signal\n{},{},{}",
            r.count, r.joint, sig
        );
        out.push_str("\n# most_moving\nrank,joint,path_length_m\n");
        for (i, (j, l)) in self.most_moving.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", i + 1, j, l);
        }
        out.push_str("\n# reachable_range\njoint,extent_x_m,extent_y_m,extent_z_m,max_radial_m\n");
        for rr in &self.reachable_range {
            let e = rr.extents;
            let _ = writeln!(out, "{},{},{},{},{}", rr.joint, e.x, e.y, e.z, rr.max_radial);
        }
        let _ = write!(
            out,
            "\n# moving_time\nmoving_time_s,duration_s,fraction\n{},{},{}\n",
            self.moving_time,
            self.duration,
            self.moving_fraction()
        );
        out
    }
}

fn observed_track(stream: &FrameStream, j: JointId) -> Vec<(f64, Vector3<f64>)> {
    stream
        .frames()
        .iter()
        .filter(|f| f.is_observed(j))
        .map(|f| (f.t, f.position(j)))
        .collect()
}

/// Projection of the mean-centred track on its principal axis, signed so
/// that the sample of largest magnitude is positive.
pub fn principal_projection(track: &[Vector3<f64>]) -> Vec<f64> {
    if track.is_empty() {
        return Vec::new();
    }
    let mean = track.iter().sum::<Vector3<f64>>() / track.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in track {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let k = eig.eigenvalues.imax();
    let axis = eig.eigenvectors.column(k).into_owned();
    let mut proj: Vec<f64> = track.iter().map(|p| (p - mean).dot(&axis)).collect();
    let extreme = proj
        .iter()
        .copied()
        .fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
    if extreme < 0.0 {
        proj.iter_mut().for_each(|v| *v = -*v);
    }
    proj
}

pub fn compute_session_metrics(
    stream: &FrameStream,
    states: Option<&[KinematicState]>,
    config: &MetricsConfig,
) -> Result<SessionMetrics> {
    config.validate()?;
    if stream.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    if let Some(s) = states {
        if s.len() != stream.len() {
            return Err(Error::DimensionMismatch {
                expected: stream.len(),
                got: s.len(),
            });
        }
    }
    let topo = stream.topology();
    let frames = stream.frames();

    let mut path = [0.0; NUM_JOINTS];
    for w in frames.windows(2) {
        for j in JointId::ALL {
            if w[0].is_observed(j) && w[1].is_observed(j) {
                path[j.index()] += (w[1].position(j) - w[0].position(j)).norm();
            }
        }
    }
    let mut most_moving: Vec<(JointId, f64)> = topo.joint_order().map(|j| (j, path[j.index()])).collect();
    most_moving.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.index().cmp(&b.0.index())));

    let mut reachable_range = Vec::new();
    for j in topo.joint_order() {
        let track = observed_track(stream, j);
        let Some(&(_, first)) = track.first() else {
            continue;
        };
        let mut lo = first;
        let mut hi = first;
        let mut radial = 0.0f64;
        for (_, p) in &track {
            lo = lo.inf(p);
            hi = hi.sup(p);
            radial = radial.max((p - first).norm());
        }
        reachable_range.push(ReachableRange {
            joint: j,
            extents: hi - lo,
            max_radial: radial,
        });
    }

    let mut moving_time = 0.0;
    for w in frames.windows(2) {
        let dt = w[1].t - w[0].t;
        let (mut sum, mut n) = (0.0, 0usize);
        for j in JointId::ALL {
            if w[0].is_observed(j) && w[1].is_observed(j) {
                sum += (w[1].position(j) - w[0].position(j)).norm() / dt;
                n += 1;
            }
        }
        if n > 0 && sum / n as f64 > config.speed_min {
            moving_time += dt;
        }
    }

    let top = most_moving[0].0;
    let angle = match states {
        Some(states) => angle_repetitions(stream, states, top, config)?,
        None => None,
    };
    let repetitions = match angle {
        Some(r) => r,
        None => {
            let track = observed_track(stream, top);
            let times: Vec<f64> = track.iter().map(|(t, _)| *t).collect();
            let pos: Vec<Vector3<f64>> = track.iter().map(|(_, p)| *p).collect();
            Repetitions {
                count: count_repetitions(
                    &times,
                    &principal_projection(&pos),
                    config.position_prominence,
                    config.min_period,
                ),
                joint: top,
                signal: RepetitionSignal::Position,
            }
        }
    };

    Ok(SessionMetrics {
        repetitions,
        most_moving,
        reachable_range,
        moving_time,
        duration: stream.duration(),
    })
}

/// Signed angle of each direction from the mean direction, measured in
/// the plane spanned by the mean and the principal axis of the swing.
pub fn swing_angle(dirs: &[Vector3<f64>]) -> Vec<f64> {
    if dirs.is_empty() {
        return Vec::new();
    }
    let mean = dirs.iter().sum::<Vector3<f64>>();
    let Some(m) = mean.try_normalize(1e-12) else {
        return vec![0.0; dirs.len()];
    };
    let mut cov = Matrix3::zeros();
    for d in dirs {
        let t = d - m * d.dot(&m);
        cov += t * t.transpose();
    }
    let eig = cov.symmetric_eigen();
    let u = eig.eigenvectors.column(eig.eigenvalues.imax()).into_owned();
    let u = match (u - m * u.dot(&m)).try_normalize(1e-12) {
        Some(u) => u,
        None => return vec![0.0; dirs.len()],
    };
    let mut a: Vec<f64> = dirs.iter().map(|d| d.dot(&u).atan2(d.dot(&m))).collect();
    let extreme = a
        .iter()
        .copied()
        .fold(0.0f64, |x, v| if v.abs() > x.abs() { v } else { x });
    if extreme < 0.0 {
        a.iter_mut().for_each(|v| *v = -*v);
    }
    a
}

/// Repetitions on the swing of one segment on the path from `joint` to
/// ROOT; `None` when `joint` is ROOT. The segment chosen is the one whose
/// swing sweeps the longest arc (angular range times length): the joint
/// that moves most is often a short rigid extension, whose direction is
/// mostly noise, carried by a longer segment doing the actual motion.
///
/// The local quaternions are not used directly. Twist about a segment's
/// own axis leaves every position unchanged, so the filter never pins it
/// down and it leaks into any signal built from a raw rotation. A
/// segment's world direction is fully determined and rigid-invariant.
fn angle_repetitions(
    stream: &FrameStream,
    states: &[KinematicState],
    joint: JointId,
    config: &MetricsConfig,
) -> Result<Option<Repetitions>> {
    let topo = stream.topology();
    let globals = states
        .iter()
        .map(|s| global_rotations(s, topo))
        .collect::<Result<Vec<_>>>()?;
    let mut best: Option<(f64, JointId, Vec<f64>)> = None;
    let mut j = joint;
    while let Some(k) = topo.segment_index(j) {
        let dirs: Vec<Vector3<f64>> = globals.iter().map(|g| g[j.index()].rotate(&Vector3::z())).collect();
        let sig = swing_angle(&dirs);
        let (lo, hi) = sig
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
        let length = states.iter().map(|s| s.lengths[k]).sum::<f64>() / states.len().max(1) as f64;
        let arc = (hi - lo) * length;
        // strict comparison keeps the segment nearest `joint` on ties
        if best.as_ref().is_none_or(|b| arc > b.0) {
            best = Some((arc, j, sig));
        }
        j = topo.parent(j).unwrap_or(JointId::Root);
    }
    Ok(best.map(|(_, j, sig)| Repetitions {
        count: count_repetitions(&stream.timestamps(), &sig, config.prominence_min, config.min_period),
        joint: j,
        signal: RepetitionSignal::Angle,
    }))
}
