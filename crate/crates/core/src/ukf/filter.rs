//! Random-walk UKF over the kinematic state, observed through forward
//! kinematics, run as four passes: forward and backward with free segment
//! lengths, then forward and backward with lengths frozen.

use super::transform::{cholesky_with_jitter, linearize_about_mean, propagate, GaussianBelief, SigmaParams};
use crate::error::{Error, Result};
use crate::frame::{Frame, FrameStream};
use crate::kinematics::{
    forward_kinematics, forward_kinematics_with, init_state_from_frame, state_dim, KinematicState,
};
use crate::quat::UnitQuaternion;
use crate::skeleton::{JointId, SkeletonTopology};
use nalgebra::{DMatrix, DVector, Matrix4, Vector3, Vector4};
use std::fmt::Write as _;

pub const MIN_FRAMES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct UkfConfig {
    pub sigma: SigmaParams,
    /// Random-walk SD per frame, meters.
    pub process_sd_root: f64,
    /// Random-walk SD per frame while lengths are free, meters.
    pub process_sd_length: f64,
    /// Random-walk SD per frame per quaternion component.
    pub process_sd_quat: f64,
    /// Observation noise SD per joint coordinate, meters.
    pub measurement_sd: f64,
    pub init_sd_root: f64,
    pub init_sd_length: f64,
    pub init_sd_quat: f64,
    /// Whether each of the four passes estimates lengths (`false`) or
    /// holds them at the frozen values (`true`).
    pub freeze_lengths: [bool; 4],
    /// Keep the per-frame belief of the final pass in the output.
    pub keep_beliefs: bool,
    pub update: UpdateRule,
    /// Also observe ROOT. Off by default: the observation is the non-root
    /// joints, which leaves the root weakly determined when the torso is
    /// static.
    pub observe_root: bool,
}

/// How the measurement update forms its innovation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateRule {
    /// Textbook UKF: innovation against the sigma-point mean of the
    /// predicted observation.
    SigmaMean,
    /// Innovation against the observation of the linearization point,
    /// relinearized up to `max_iter` times (one iteration uses the
    /// predicted mean).
    Iterated { max_iter: usize },
}

impl Default for UkfConfig {
    fn default() -> Self {
        UkfConfig {
            sigma: SigmaParams::default(),
            process_sd_root: 0.02,
            process_sd_length: 0.005,
            process_sd_quat: 0.05,
            measurement_sd: 0.025,
            init_sd_root: 0.05,
            init_sd_length: 0.03,
            init_sd_quat: 0.1,
            freeze_lengths: [false, false, true, true],
            keep_beliefs: false,
            update: UpdateRule::Iterated { max_iter: 1 },
            observe_root: false,
        }
    }
}

impl UkfConfig {
    pub fn validate(&self) -> Result<()> {
        self.sigma.validate()?;
        let sds = [
            ("process_sd_root", self.process_sd_root),
            ("process_sd_length", self.process_sd_length),
            ("process_sd_quat", self.process_sd_quat),
            ("init_sd_root", self.init_sd_root),
            ("init_sd_length", self.init_sd_length),
            ("init_sd_quat", self.init_sd_quat),
        ];
        for (name, v) in sds {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.measurement_sd.is_finite() && self.measurement_sd > 0.0) {
            return Err(Error::Invalid(format!(
                "measurement_sd must be > 0, got {}",
                self.measurement_sd
            )));
        }
        if self.freeze_lengths[0] || self.freeze_lengths[1] {
            return Err(Error::Invalid(
                "lengths can only be frozen after the first two passes have estimated them".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Which state components the filter carries.
#[derive(Debug, Clone, PartialEq)]
pub enum StateLayout {
    /// `[root(3) | lengths(S) | quats(4S)]`.
    Full { segments: usize },
    /// `[root(3) | quats(4S)]`, lengths held constant.
    Frozen { lengths: Vec<f64> },
}

impl StateLayout {
    pub fn segments(&self) -> usize {
        match self {
            StateLayout::Full { segments } => *segments,
            StateLayout::Frozen { lengths } => lengths.len(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            StateLayout::Full { segments } => state_dim(*segments),
            StateLayout::Frozen { lengths } => 3 + 4 * lengths.len(),
        }
    }

    pub fn quat_offset(&self, i: usize) -> usize {
        match self {
            StateLayout::Full { segments } => 3 + segments + 4 * i,
            StateLayout::Frozen { .. } => 3 + 4 * i,
        }
    }

    fn length(&self, x: &DVector<f64>, i: usize) -> f64 {
        match self {
            StateLayout::Full { .. } => x[3 + i],
            StateLayout::Frozen { lengths } => lengths[i],
        }
    }

    fn quat(&self, x: &DVector<f64>, i: usize) -> UnitQuaternion {
        let o = self.quat_offset(i);
        UnitQuaternion::normalize_or_identity(x[o], x[o + 1], x[o + 2], x[o + 3]).0
    }

    pub fn to_state(&self, x: &DVector<f64>) -> KinematicState {
        let n = self.segments();
        KinematicState {
            root_pos: Vector3::new(x[0], x[1], x[2]),
            lengths: (0..n).map(|i| self.length(x, i)).collect(),
            quats: (0..n).map(|i| self.quat(x, i).canonical()).collect(),
        }
    }

    pub fn from_state(&self, s: &KinematicState) -> DVector<f64> {
        match self {
            StateLayout::Full { .. } => s.to_vector(),
            StateLayout::Frozen { .. } => {
                let mut v = DVector::zeros(self.dim());
                v.fixed_rows_mut::<3>(0).copy_from(&s.root_pos);
                for (i, q) in s.quats.iter().enumerate() {
                    v.rows_mut(self.quat_offset(i), 4).copy_from_slice(&q.as_array());
                }
                v
            }
        }
    }

    /// Diagonal of the process covariance Q.
    pub fn process_diag(&self, cfg: &UkfConfig) -> DVector<f64> {
        self.diag(cfg.process_sd_root, cfg.process_sd_length, cfg.process_sd_quat)
    }

    pub fn initial_diag(&self, cfg: &UkfConfig) -> DVector<f64> {
        self.diag(cfg.init_sd_root, cfg.init_sd_length, cfg.init_sd_quat)
    }

    fn diag(&self, root: f64, length: f64, quat: f64) -> DVector<f64> {
        let n = self.segments();
        let mut d = DVector::from_element(self.dim(), quat * quat);
        d.rows_mut(0, 3).fill(root * root);
        if let StateLayout::Full { .. } = self {
            d.rows_mut(3, n).fill(length * length);
        }
        d
    }
}

/// The process and observation covariances of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub process: DVector<f64>,
    /// Per observed coordinate.
    pub measurement: DVector<f64>,
}

impl NoiseModel {
    pub fn new(layout: &StateLayout, cfg: &UkfConfig, observed_joints: usize) -> Self {
        NoiseModel {
            process: layout.process_diag(cfg),
            measurement: DVector::from_element(3 * observed_joints, cfg.measurement_sd.powi(2)),
        }
    }
}

/// Predicted positions of `joints`, stacked `x, y, z` per joint.
pub fn observe(x: &DVector<f64>, layout: &StateLayout, topo: &SkeletonTopology, joints: &[JointId]) -> DVector<f64> {
    let pos = forward_kinematics_with(
        topo,
        Vector3::new(x[0], x[1], x[2]),
        |i| layout.length(x, i),
        |i| layout.quat(x, i),
    );
    let mut y = DVector::zeros(3 * joints.len());
    for (k, j) in joints.iter().enumerate() {
        y.fixed_rows_mut::<3>(3 * k).copy_from(&pos[j.index()]);
    }
    y
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub pass: usize,
    pub frame: usize,
    pub trace_cov: f64,
    pub n_observed_joints: usize,
    pub innovation_norm: f64,
    /// Quaternion blocks whose mean collapsed and was reset to identity.
    pub quat_resets: usize,
}

/// One predict/update cycle. The random-walk transition is the identity in
/// both directions, so `direction` only labels the step.
pub fn ukf_step(
    belief: &GaussianBelief,
    frame: &Frame,
    topo: &SkeletonTopology,
    layout: &StateLayout,
    config: &UkfConfig,
    _direction: Direction,
) -> Result<(GaussianBelief, StepDiagnostics)> {
    let n = layout.dim();
    if belief.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: belief.dim(),
        });
    }
    let observed: Vec<JointId> = topo
        .joint_order()
        .filter(|&j| (config.observe_root || j != JointId::Root) && frame.is_observed(j))
        .collect();
    let noise = NoiseModel::new(layout, config, observed.len());

    let mut predicted = belief.clone();
    for i in 0..n {
        predicted.cov[(i, i)] += noise.process[i];
    }

    let mut diag = StepDiagnostics {
        pass: 0,
        frame: 0,
        trace_cov: 0.0,
        n_observed_joints: observed.len(),
        innovation_norm: 0.0,
        quat_resets: 0,
    };
    if observed.is_empty() {
        diag.trace_cov = predicted.cov.trace();
        return Ok((predicted, diag));
    }

    let mut y = DVector::zeros(3 * observed.len());
    for (k, j) in observed.iter().enumerate() {
        y.fixed_rows_mut::<3>(3 * k).copy_from(&frame.position(*j));
    }
    let obs = |x: &DVector<f64>| observe(x, layout, topo, &observed);
    let (mean, gain, s, innovation) = match config.update {
        UpdateRule::SigmaMean => {
            let prop = propagate(&predicted, obs, &config.sigma)?;
            let (gain, s) = kalman_gain(prop.cov, &prop.cross, &noise)?;
            let innovation = &y - &prop.mean;
            (&predicted.mean + &gain * &innovation, gain, s, innovation)
        }
        UpdateRule::Iterated { max_iter } => {
            let prop = linearize_about_mean(&predicted, obs, &config.sigma)?;
            let innovation = &y - &prop.mean;
            let (mut gain, mut s) = kalman_gain(prop.cov, &prop.cross, &noise)?;
            let mut xi = &predicted.mean + &gain * &innovation;
            if max_iter > 1 {
                // Gauss-Newton on the sigma-point linearized observation:
                // x_{i+1} = m + K_i (y - h(x_i) - H_i (m - x_i)), H_i = Pxy_i^T P^-1.
                // An iterate is kept only if it lowers the MAP objective.
                let prior_chol = cholesky_with_jitter(&predicted.cov)?;
                let cost = |x: &DVector<f64>| {
                    let d = x - &predicted.mean;
                    let r = &y - obs(x);
                    d.dot(&prior_chol.solve(&d)) + r.component_div(&noise.measurement).dot(&r)
                };
                let mut best = cost(&xi);
                for _ in 1..max_iter {
                    let lin = GaussianBelief {
                        mean: xi.clone(),
                        cov: predicted.cov.clone(),
                    };
                    let prop = linearize_about_mean(&lin, obs, &config.sigma)?;
                    let r = &y - &prop.mean - prop.cross.transpose() * prior_chol.solve(&(&predicted.mean - &xi));
                    let (g, sk) = kalman_gain(prop.cov, &prop.cross, &noise)?;
                    let next = &predicted.mean + &g * &r;
                    let c = cost(&next);
                    if !(c < best) {
                        break;
                    }
                    let step = (&next - &xi).amax();
                    best = c;
                    xi = next;
                    gain = g;
                    s = sk;
                    if step < ITERATION_TOL {
                        break;
                    }
                }
            }
            (xi, gain, s, innovation)
        }
    };

    let mut post = GaussianBelief {
        mean,
        cov: &predicted.cov - &gain * &s * gain.transpose(),
    };
    post.symmetrize();
    diag.quat_resets = normalize_quaternions(&mut post, layout);
    post.symmetrize();
    diag.innovation_norm = innovation.norm();
    diag.trace_cov = post.cov.trace();
    if !diag.trace_cov.is_finite() || post.mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite posterior"));
    }
    Ok((post, diag))
}

const ITERATION_TOL: f64 = 1e-12;

/// `K = Pxy S^-1` with `S = Pyy + R`, solved as `S K^T = Pxy^T`.
fn kalman_gain(pyy: DMatrix<f64>, cross: &DMatrix<f64>, noise: &NoiseModel) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut s = pyy;
    for i in 0..s.nrows() {
        s[(i, i)] += noise.measurement[i];
    }
    let chol = cholesky_with_jitter(&s)?;
    let gain = chol.solve(&cross.transpose()).transpose();
    Ok((gain, s))
}

/// Renormalizes and canonicalizes every quaternion block of the mean and maps
/// the covariance through the same (linearized) normalization, which drops
/// the unobservable norm direction. Returns the number of blocks reset.
fn normalize_quaternions(b: &mut GaussianBelief, layout: &StateLayout) -> usize {
    let mut resets = 0;
    for i in 0..layout.segments() {
        let o = layout.quat_offset(i);
        let q: Vector4<f64> = b.mean.fixed_rows::<4>(o).into_owned();
        let norm = q.norm();
        let (unit, reset) = UnitQuaternion::normalize_or_identity(q[0], q[1], q[2], q[3]);
        if reset {
            resets += 1;
            b.mean
                .fixed_rows_mut::<4>(o)
                .copy_from_slice(&UnitQuaternion::IDENTITY.as_array());
            continue;
        }
        let canon = unit.canonical();
        let sign = if canon == unit { 1.0 } else { -1.0 };
        let u = Vector4::from(unit.as_array());
        let jac: Matrix4<f64> = (Matrix4::identity() - u * u.transpose()) * (sign / norm);
        b.mean.fixed_rows_mut::<4>(o).copy_from_slice(&canon.as_array());

        let rows = jac * b.cov.rows(o, 4);
        b.cov.rows_mut(o, 4).copy_from(&rows);
        let cols = b.cov.columns(o, 4) * jac.transpose();
        b.cov.columns_mut(o, 4).copy_from(&cols);
    }
    resets
}

/// Output of one filtering pass, indexed by original frame order.
#[derive(Debug, Clone)]
pub struct PassOutput {
    pub means: Vec<DVector<f64>>,
    pub beliefs: Option<Vec<GaussianBelief>>,
    pub diagnostics: Vec<StepDiagnostics>,
    /// Belief after the last processed frame.
    pub terminal: GaussianBelief,
}

/// Runs the filter over `frames` in `direction`. Results are stored by
/// frame position in `frames`, not by processing order.
pub fn run_pass(
    initial: GaussianBelief,
    frames: &[Frame],
    topo: &SkeletonTopology,
    layout: &StateLayout,
    config: &UkfConfig,
    direction: Direction,
    pass: usize,
) -> Result<PassOutput> {
    let n = frames.len();
    let order: Box<dyn Iterator<Item = usize>> = match direction {
        Direction::Forward => Box::new(0..n),
        Direction::Backward => Box::new((0..n).rev()),
    };
    let mut means = vec![DVector::zeros(0); n];
    let mut beliefs = config.keep_beliefs.then(|| vec![initial.clone(); n]);
    let mut diagnostics = Vec::with_capacity(n);
    let mut belief = initial;
    for i in order {
        let (next, mut d) =
            ukf_step(&belief, &frames[i], topo, layout, config, direction).map_err(|e| e.at(Some(pass), Some(i)))?;
        d.pass = pass;
        d.frame = i;
        diagnostics.push(d);
        means[i] = next.mean.clone();
        if let Some(b) = beliefs.as_mut() {
            b[i] = next.clone();
        }
        belief = next;
    }
    Ok(PassOutput {
        means,
        beliefs,
        diagnostics,
        terminal: belief,
    })
}

#[derive(Debug, Clone)]
pub struct FilterOutput {
    /// Final per-frame estimates with frozen lengths.
    pub states: Vec<KinematicState>,
    /// Per-frame beliefs of the last pass, when requested.
    pub beliefs: Option<Vec<GaussianBelief>>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub frozen_lengths: Vec<f64>,
    /// Per-frame states of passes 1 and 2, for inspection.
    pub length_passes: [Vec<KinematicState>; 2],
}

impl FilterOutput {
    /// Joint positions of the final states, timed like `source`.
    pub fn positions(&self, source: &FrameStream) -> Result<FrameStream> {
        if source.len() != self.states.len() {
            return Err(Error::DimensionMismatch {
                expected: self.states.len(),
                got: source.len(),
            });
        }
        let topo = source.topology();
        let frames = self
            .states
            .iter()
            .zip(source.frames())
            .map(|(s, f)| Ok(Frame::new(f.t, forward_kinematics(s, topo)?)))
            .collect::<Result<Vec<_>>>()?;
        FrameStream::new(source.topology_arc(), frames, source.nominal_rate)
    }

    /// `pass,frame,trace_cov,n_observed_joints,innovation_norm`
    pub fn diagnostics_csv(&self) -> String {
        let mut out = String::from("pass,frame,trace_cov,n_observed_joints,innovation_norm\n");
        for d in &self.diagnostics {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                d.pass, d.frame, d.trace_cov, d.n_observed_joints, d.innovation_norm
            );
        }
        out
    }
}

fn drop_lengths(b: &GaussianBelief, segments: usize, lengths: Vec<f64>) -> (GaussianBelief, StateLayout) {
    let keep: Vec<usize> = (0..3).chain(3 + segments..state_dim(segments)).collect();
    let mean = DVector::from_iterator(keep.len(), keep.iter().map(|&i| b.mean[i]));
    let cov = DMatrix::from_fn(keep.len(), keep.len(), |r, c| b.cov[(keep[r], keep[c])]);
    (GaussianBelief { mean, cov }, StateLayout::Frozen { lengths })
}

/// Estimates a per-frame kinematic trajectory with constant segment lengths.
///
/// Passes 1 (forward) and 2 (backward) track lengths as random walks; the
/// frozen length of each segment is the mean of its pass-2 estimates.
/// Passes 3 (forward) and 4 (backward) run on root + rotations only, with
/// the frozen lengths inside the observation model. Each pass starts from
/// the terminal belief of the previous one.
pub fn four_pass_filter(stream: &FrameStream, config: &UkfConfig) -> Result<FilterOutput> {
    config.validate()?;
    if stream.len() < MIN_FRAMES {
        return Err(Error::TooFewFrames {
            needed: MIN_FRAMES,
            got: stream.len(),
        });
    }
    let topo = stream.topology();
    let frames = stream.frames();
    let segments = topo.num_segments();
    let init = init_state_from_frame(&frames[0], topo)?;

    let full = StateLayout::Full { segments };
    let initial = GaussianBelief {
        mean: full.from_state(&init),
        cov: DMatrix::from_diagonal(&full.initial_diag(config)),
    };
    let directions = [
        Direction::Forward,
        Direction::Backward,
        Direction::Forward,
        Direction::Backward,
    ];

    let mut diagnostics = Vec::with_capacity(4 * frames.len());
    let mut belief = initial;
    let mut length_passes: [Vec<KinematicState>; 2] = Default::default();
    let mut layout = full.clone();
    let mut frozen: Option<Vec<f64>> = None;
    let mut last: Option<PassOutput> = None;

    for (k, &dir) in directions.iter().enumerate() {
        let pass = k + 1;
        if config.freeze_lengths[k] && frozen.is_none() {
            let prev = last.as_ref().expect("passes 1-2 never freeze");
            let mut lengths = vec![0.0; segments];
            for m in &prev.means {
                for (i, l) in lengths.iter_mut().enumerate() {
                    *l += m[3 + i];
                }
            }
            for l in &mut lengths {
                *l /= prev.means.len() as f64;
                if !(*l > 0.0) {
                    return Err(Error::Numerical {
                        pass: Some(pass),
                        frame: None,
                        detail: format!("non-positive frozen segment length {l}"),
                    });
                }
            }
            let (b, l) = drop_lengths(&belief, segments, lengths.clone());
            belief = b;
            layout = l;
            frozen = Some(lengths);
        }
        let out = run_pass(belief.clone(), frames, topo, &layout, config, dir, pass)?;
        diagnostics.extend_from_slice(&out.diagnostics);
        if k < 2 {
            length_passes[k] = out.means.iter().map(|m| layout.to_state(m)).collect();
        }
        belief = out.terminal.clone();
        last = Some(out);
    }

    let last = last.expect("four passes ran");
    let frozen_lengths = match frozen {
        Some(l) => l,
        // no freezing configured: report the mean of the final estimates
        None => {
            let mut l = vec![0.0; segments];
            for m in &last.means {
                for (i, v) in l.iter_mut().enumerate() {
                    *v += m[3 + i];
                }
            }
            l.iter().map(|v| v / last.means.len() as f64).collect()
        }
    };
    let states = last.means.iter().map(|m| layout.to_state(m)).collect();
    Ok(FilterOutput {
        states,
        beliefs: last.beliefs,
        diagnostics,
        frozen_lengths,
        length_passes,
    })
}
