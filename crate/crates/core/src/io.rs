//! File formats: frame CSV, kinematic-parameter CSV, ground-truth sidecar
//! and the `section.key = value` tool configuration.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so
//! reading a written file reproduces every finite value bit for bit.

use crate::error::{Error, Result};
use crate::eval::{Alignment, EvalConfig};
use crate::frame::{Confidence, Frame, FrameStream};
use crate::kinematics::{extract_joint_angles, KinematicState};
use crate::metrics::MetricsConfig;
use crate::outlier::OutlierConfig;
use crate::quat::UnitQuaternion;
use crate::skeleton::{JointId, SkeletonTopology, NUM_JOINTS};
use crate::synth::{arm_raise_spec_with, ArmRaise, CorruptionLabels, CorruptionSpec};
use crate::ukf::{UkfConfig, UpdateRule};
use nalgebra::Vector3;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

/// Rate assumed when a stream has fewer than two frames.
pub const DEFAULT_RATE: f64 = 30.0;

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

/// Data lines with their 1-based line numbers; blank lines are skipped.
fn rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| (n, l.split(',').map(str::trim).collect()))
}

fn number(line: usize, column: &str, s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| parse_err(line, format!("column {column}: cannot parse {s:?} as a number")))
}

/// Header cells mapped to their column index; duplicates are rejected.
fn header_index(line: usize, header: &[&str]) -> Result<HashMap<String, usize>> {
    let mut idx = HashMap::new();
    for (k, name) in header.iter().enumerate() {
        if idx.insert(name.to_string(), k).is_some() {
            return Err(parse_err(line, format!("duplicate column {name}")));
        }
    }
    Ok(idx)
}

/// `t,<J>_x,<J>_y,<J>_z,<J>_c` for every joint in topology order.
pub fn frame_header(topo: &SkeletonTopology) -> String {
    let mut h = String::from("t");
    for j in topo.joint_order() {
        let _ = write!(h, ",{j}_x,{j}_y,{j}_z,{j}_c");
    }
    h
}

pub fn write_frames(stream: &FrameStream) -> String {
    let topo = stream.topology();
    let mut out = frame_header(topo);
    out.push('\n');
    for f in stream.frames() {
        let _ = write!(out, "{}", f.t);
        for j in topo.joint_order() {
            let p = f.position(j);
            let _ = write!(out, ",{},{},{},{}", p.x, p.y, p.z, f.confidence(j).code());
        }
        out.push('\n');
    }
    out
}

/// Reads a frame CSV whose columns are exactly the topology's joints, in
/// any order. Confidence columns are optional per joint; without one a
/// joint is Tracked where finite and Lost where NaN.
pub fn read_frames(text: &str, topo: Arc<SkeletonTopology>) -> Result<FrameStream> {
    let mut it = rows(text);
    let (hline, header) = it.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let idx = header_index(hline, &header)?;
    let col = |name: &str| idx.get(name).copied();
    let t_col = col("t").ok_or_else(|| parse_err(hline, "missing column t"))?;
    let mut expected = 1;
    let mut layout = Vec::with_capacity(NUM_JOINTS);
    for j in topo.joint_order() {
        let xyz = ["x", "y", "z"].map(|a| col(&format!("{j}_{a}")));
        let [Some(x), Some(y), Some(z)] = xyz else {
            return Err(parse_err(hline, format!("missing position columns for {j}")));
        };
        let c = col(&format!("{j}_c"));
        expected += 3 + usize::from(c.is_some());
        layout.push((j, [x, y, z], c));
    }
    if header.len() != expected {
        let known: std::collections::HashSet<usize> = std::iter::once(t_col)
            .chain(layout.iter().flat_map(|(_, xyz, c)| xyz.iter().copied().chain(*c)))
            .collect();
        let extra: Vec<&str> = (0..header.len())
            .filter(|k| !known.contains(k))
            .map(|k| header[k])
            .collect();
        return Err(parse_err(hline, format!("unexpected columns: {}", extra.join(" "))));
    }

    let mut frames: Vec<Frame> = Vec::new();
    for (line, cells) in it {
        if cells.len() != header.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", header.len(), cells.len()),
            ));
        }
        let t = number(line, "t", cells[t_col])?;
        let mut f = Frame::new(t, [Vector3::zeros(); NUM_JOINTS]);
        for (j, xyz, c) in &layout {
            let i = j.index();
            for (a, &k) in xyz.iter().enumerate() {
                f.pos[i][a] = number(line, header[k], cells[k])?;
            }
            let finite = f.pos[i].iter().all(|v| v.is_finite());
            f.conf[i] = match c {
                Some(k) => cells[*k]
                    .parse::<u8>()
                    .ok()
                    .and_then(Confidence::from_code)
                    .ok_or_else(|| parse_err(line, format!("column {}: confidence must be 0, 1 or 2", header[*k])))?,
                None if finite => Confidence::Tracked,
                None => Confidence::Lost,
            };
        }
        f.validate().map_err(|e| parse_err(line, e.to_string()))?;
        if let Some(prev) = frames.last() {
            if !(f.t > prev.t) {
                return Err(parse_err(
                    line,
                    format!("timestamp {} does not increase past {}", f.t, prev.t),
                ));
            }
        }
        frames.push(f);
    }
    let rate = FrameStream::estimate_rate(&frames, DEFAULT_RATE);
    FrameStream::new(topo, frames, rate)
}

/// `t,root_x,root_y,root_z`, then `<SEG>_len` for every segment, then
/// `<SEG>_qw,<SEG>_qx,<SEG>_qy,<SEG>_qz`, then `<SEG>_angle` (radians).
pub fn params_header(topo: &SkeletonTopology) -> String {
    let segs = topo.segments();
    let mut h = String::from("t,root_x,root_y,root_z");
    for s in segs {
        let _ = write!(h, ",{}_len", s.name);
    }
    for s in segs {
        let n = &s.name;
        let _ = write!(h, ",{n}_qw,{n}_qx,{n}_qy,{n}_qz");
    }
    for s in segs {
        let _ = write!(h, ",{}_angle", s.name);
    }
    h
}

fn params_row(out: &mut String, t: f64, s: &KinematicState, topo: &SkeletonTopology) {
    let r = s.root_pos;
    let _ = write!(out, "{},{},{},{}", t, r.x, r.y, r.z);
    for l in &s.lengths {
        let _ = write!(out, ",{l}");
    }
    for q in &s.quats {
        let q = q.canonical();
        let _ = write!(out, ",{},{},{},{}", q.w, q.x, q.y, q.z);
    }
    for a in extract_joint_angles(s, topo) {
        let _ = write!(out, ",{}", a.angle);
    }
}

fn check_states(times: &[f64], states: &[KinematicState], topo: &SkeletonTopology) -> Result<()> {
    if times.len() != states.len() {
        return Err(Error::DimensionMismatch {
            expected: times.len(),
            got: states.len(),
        });
    }
    if let Some(s) = states.iter().find(|s| s.num_segments() != topo.num_segments()) {
        return Err(Error::DimensionMismatch {
            expected: topo.num_segments(),
            got: s.num_segments(),
        });
    }
    Ok(())
}

pub fn write_params(times: &[f64], states: &[KinematicState], topo: &SkeletonTopology) -> Result<String> {
    check_states(times, states, topo)?;
    let mut out = params_header(topo);
    out.push('\n');
    for (t, s) in times.iter().zip(states) {
        params_row(&mut out, *t, s, topo);
        out.push('\n');
    }
    Ok(out)
}

/// Parameter columns followed by `<J>_outlier,<J>_lost` (0 or 1) per joint.
pub fn write_sidecar(
    times: &[f64],
    states: &[KinematicState],
    labels: &CorruptionLabels,
    topo: &SkeletonTopology,
) -> Result<String> {
    check_states(times, states, topo)?;
    if labels.outlier.len() != times.len() || labels.lost.len() != times.len() {
        return Err(Error::DimensionMismatch {
            expected: times.len(),
            got: labels.outlier.len().min(labels.lost.len()),
        });
    }
    let mut out = params_header(topo);
    for j in topo.joint_order() {
        let _ = write!(out, ",{j}_outlier,{j}_lost");
    }
    out.push('\n');
    for (k, (t, s)) in times.iter().zip(states).enumerate() {
        params_row(&mut out, *t, s, topo);
        for j in topo.joint_order() {
            let i = j.index();
            let _ = write!(
                out,
                ",{},{}",
                u8::from(labels.outlier[k][i]),
                u8::from(labels.lost[k][i])
            );
        }
        out.push('\n');
    }
    Ok(out)
}

/// Timestamps and states from a parameter CSV or sidecar. Angle and label
/// columns are accepted but not read; quaternions are renormalized.
pub fn read_params(text: &str, topo: &SkeletonTopology) -> Result<(Vec<f64>, Vec<KinematicState>)> {
    let mut it = rows(text);
    let (hline, header) = it.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let idx = header_index(hline, &header)?;
    let col = |name: String| {
        idx.get(&name)
            .copied()
            .ok_or_else(|| parse_err(hline, format!("missing column {name}")))
    };
    let t_col = col("t".into())?;
    let root = [col("root_x".into())?, col("root_y".into())?, col("root_z".into())?];
    let segs = topo.segments();
    let len_cols: Vec<usize> = segs
        .iter()
        .map(|s| col(format!("{}_len", s.name)))
        .collect::<Result<_>>()?;
    let quat_cols: Vec<[usize; 4]> = segs
        .iter()
        .map(|s| {
            Ok([
                col(format!("{}_qw", s.name))?,
                col(format!("{}_qx", s.name))?,
                col(format!("{}_qy", s.name))?,
                col(format!("{}_qz", s.name))?,
            ])
        })
        .collect::<Result<_>>()?;
    let mut known: std::collections::HashSet<usize> = std::iter::once(t_col)
        .chain(root)
        .chain(len_cols.iter().copied())
        .chain(quat_cols.iter().flatten().copied())
        .collect();
    for s in segs {
        known.extend(idx.get(&format!("{}_angle", s.name)));
    }
    for j in JointId::ALL {
        known.extend(idx.get(&format!("{j}_outlier")));
        known.extend(idx.get(&format!("{j}_lost")));
    }
    if known.len() != header.len() {
        let extra: Vec<&str> = (0..header.len())
            .filter(|k| !known.contains(k))
            .map(|k| header[k])
            .collect();
        return Err(parse_err(hline, format!("unexpected columns: {}", extra.join(" "))));
    }

    let mut times = Vec::new();
    let mut states = Vec::new();
    for (line, cells) in it {
        if cells.len() != header.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", header.len(), cells.len()),
            ));
        }
        let get = |k: usize| number(line, header[k], cells[k]);
        let t = get(t_col)?;
        if let Some(&prev) = times.last() {
            if !(t > prev) {
                return Err(parse_err(line, format!("timestamp {t} does not increase past {prev}")));
            }
        }
        let root_pos = Vector3::new(get(root[0])?, get(root[1])?, get(root[2])?);
        let lengths = len_cols.iter().map(|&k| get(k)).collect::<Result<Vec<_>>>()?;
        let quats = quat_cols
            .iter()
            .map(|c| {
                UnitQuaternion::new(get(c[0])?, get(c[1])?, get(c[2])?, get(c[3])?)
                    .map_err(|e| parse_err(line, e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let state = KinematicState::new(root_pos, lengths, quats).map_err(|e| parse_err(line, e.to_string()))?;
        times.push(t);
        states.push(state);
    }
    Ok((times, states))
}

/// Arm-raise scenario plus corruption for the `synth` command.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SynthConfig {
    pub motion: ArmRaise,
    pub corruption: CorruptionSpec,
}

/// Every tunable of the pipeline. Keys are `section.key`; see
/// [`ToolConfig::to_text`] for the full list with defaults.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ToolConfig {
    pub ukf: UkfConfig,
    pub outlier: OutlierConfig,
    pub metrics: MetricsConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got {s:?}")),
    }
}

fn parse_num<T: std::str::FromStr>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|_| format!("cannot parse {s:?}"))
}

fn join<T: ToString>(v: impl IntoIterator<Item = T>) -> String {
    v.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ToolConfig {
    pub fn parse(text: &str) -> Result<ToolConfig> {
        let mut cfg = ToolConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| parse_err(line, format!("expected `section.key = value`, got {content:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            cfg.set(key, value)
                .map_err(|m| parse_err(line, format!("{key}: {m}")))?;
        }
        Ok(cfg)
    }

    /// Assigns one key and validates the section it belongs to.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let (section, name) = key.split_once('.').ok_or("key must be `section.key`")?;
        match section {
            "ukf" => {
                let u = &mut self.ukf;
                match name {
                    "alpha" => u.sigma.alpha = parse_num(v)?,
                    "beta" => u.sigma.beta = parse_num(v)?,
                    "kappa" => u.sigma.kappa = parse_num(v)?,
                    "process_sd_root" => u.process_sd_root = parse_num(v)?,
                    "process_sd_length" => u.process_sd_length = parse_num(v)?,
                    "process_sd_quat" => u.process_sd_quat = parse_num(v)?,
                    "measurement_sd" => u.measurement_sd = parse_num(v)?,
                    "init_sd_root" => u.init_sd_root = parse_num(v)?,
                    "init_sd_length" => u.init_sd_length = parse_num(v)?,
                    "init_sd_quat" => u.init_sd_quat = parse_num(v)?,
                    "freeze_lengths" => {
                        let flags = v
                            .split(',')
                            .map(|s| parse_bool(s.trim()))
                            .collect::<std::result::Result<Vec<_>, _>>()?;
                        u.freeze_lengths = flags
                            .try_into()
                            .map_err(|_| "expected four comma-separated booleans".to_string())?;
                    }
                    "update" => {
                        u.update = match v {
                            "sigma_mean" => UpdateRule::SigmaMean,
                            "iterated" => match u.update {
                                UpdateRule::Iterated { max_iter } => UpdateRule::Iterated { max_iter },
                                UpdateRule::SigmaMean => UpdateRule::Iterated { max_iter: 1 },
                            },
                            _ => return Err(format!("expected sigma_mean or iterated, got {v:?}")),
                        }
                    }
                    "max_iter" => match u.update {
                        UpdateRule::Iterated { .. } => {
                            u.update = UpdateRule::Iterated {
                                max_iter: parse_num(v)?,
                            }
                        }
                        UpdateRule::SigmaMean => return Err("only applies to the iterated update".into()),
                    },
                    "observe_root" => u.observe_root = parse_bool(v)?,
                    _ => return Err("unknown key".into()),
                }
                self.ukf.validate().map_err(|e| e.to_string())
            }
            "outlier" => {
                let o = &mut self.outlier;
                match name {
                    "window" => o.window = parse_num(v)?,
                    "threshold" => o.threshold = parse_num(v)?,
                    "max_flag_fraction" => o.max_flag_fraction = parse_num(v)?,
                    "em_max_iter" => o.em.max_iter = parse_num(v)?,
                    "em_tol" => o.em.tol = parse_num(v)?,
                    "em_init_rho" => o.em.init_rho = parse_num(v)?,
                    _ => return Err("unknown key".into()),
                }
                self.outlier.validate().map_err(|e| e.to_string())
            }
            "metrics" => {
                let m = &mut self.metrics;
                match name {
                    "prominence_min" => m.prominence_min = parse_num(v)?,
                    "position_prominence" => m.position_prominence = parse_num(v)?,
                    "min_period" => m.min_period = parse_num(v)?,
                    "speed_min" => m.speed_min = parse_num(v)?,
                    _ => return Err("unknown key".into()),
                }
                self.metrics.validate().map_err(|e| e.to_string())
            }
            "eval" => {
                let e = &mut self.eval;
                match name {
                    "align" => {
                        e.alignment = if parse_bool(v)? {
                            Alignment::Auto
                        } else {
                            Alignment::Disabled
                        }
                    }
                    "align_joints" => e.align_joints = parse_joint_list(v)?,
                    "align_frames" => e.align_frames = parse_num(v)?,
                    "exclude_outliers" => e.exclude_outliers = parse_bool(v)?,
                    "outlier_threshold" => e.outlier_threshold = parse_num(v)?,
                    "em_max_iter" => e.em.max_iter = parse_num(v)?,
                    "em_tol" => e.em.tol = parse_num(v)?,
                    "em_init_rho" => e.em.init_rho = parse_num(v)?,
                    _ => return Err("unknown key".into()),
                }
                self.eval.validate().map_err(|e| e.to_string())
            }
            "synth" => {
                let (m, c) = (&mut self.synth.motion, &mut self.synth.corruption);
                match name {
                    "frequency" => m.frequency = parse_num(v)?,
                    "shoulder_amplitude" => m.shoulder_amplitude = parse_num(v)?,
                    "elbow_amplitude" => m.elbow_amplitude = parse_num(v)?,
                    "duration" => m.duration = parse_num(v)?,
                    "rate" => m.rate = parse_num(v)?,
                    "noise_sd" => c.gaussian_sd = parse_num(v)?,
                    "outlier_rate" => c.outlier_rate = parse_num(v)?,
                    "outlier_support" => c.outlier_support = parse_num(v)?,
                    "lost_rate" => c.lost_rate = parse_num(v)?,
                    "seed" => c.seed = parse_num(v)?,
                    _ => return Err("unknown key".into()),
                }
                self.synth.corruption.validate().map_err(|e| e.to_string())?;
                arm_raise_spec_with(&SkeletonTopology::default(), &self.synth.motion)
                    .map(|_| ())
                    .map_err(|e| e.to_string())
            }
            _ => Err("unknown section".into()),
        }
    }

    /// Every key with its current value; `parse(to_text())` reproduces `self`
    /// except for a fixed alignment transform, which has no key.
    pub fn to_text(&self) -> String {
        let u = &self.ukf;
        let o = &self.outlier;
        let m = &self.metrics;
        let e = &self.eval;
        let (sm, sc) = (&self.synth.motion, &self.synth.corruption);
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("ukf.alpha", u.sigma.alpha.to_string());
        kv("ukf.beta", u.sigma.beta.to_string());
        kv("ukf.kappa", u.sigma.kappa.to_string());
        kv("ukf.process_sd_root", u.process_sd_root.to_string());
        kv("ukf.process_sd_length", u.process_sd_length.to_string());
        kv("ukf.process_sd_quat", u.process_sd_quat.to_string());
        kv("ukf.measurement_sd", u.measurement_sd.to_string());
        kv("ukf.init_sd_root", u.init_sd_root.to_string());
        kv("ukf.init_sd_length", u.init_sd_length.to_string());
        kv("ukf.init_sd_quat", u.init_sd_quat.to_string());
        kv("ukf.freeze_lengths", join(u.freeze_lengths));
        match u.update {
            UpdateRule::SigmaMean => kv("ukf.update", "sigma_mean".into()),
            UpdateRule::Iterated { max_iter } => {
                kv("ukf.update", "iterated".into());
                kv("ukf.max_iter", max_iter.to_string());
            }
        }
        kv("ukf.observe_root", u.observe_root.to_string());
        kv("outlier.window", o.window.to_string());
        kv("outlier.threshold", o.threshold.to_string());
        kv("outlier.max_flag_fraction", o.max_flag_fraction.to_string());
        kv("outlier.em_max_iter", o.em.max_iter.to_string());
        kv("outlier.em_tol", o.em.tol.to_string());
        kv("outlier.em_init_rho", o.em.init_rho.to_string());
        kv("metrics.prominence_min", m.prominence_min.to_string());
        kv("metrics.position_prominence", m.position_prominence.to_string());
        kv("metrics.min_period", m.min_period.to_string());
        kv("metrics.speed_min", m.speed_min.to_string());
        kv("eval.align", (e.alignment != Alignment::Disabled).to_string());
        kv("eval.align_joints", join(&e.align_joints));
        kv("eval.align_frames", e.align_frames.to_string());
        kv("eval.exclude_outliers", e.exclude_outliers.to_string());
        kv("eval.outlier_threshold", e.outlier_threshold.to_string());
        kv("eval.em_max_iter", e.em.max_iter.to_string());
        kv("eval.em_tol", e.em.tol.to_string());
        kv("eval.em_init_rho", e.em.init_rho.to_string());
        kv("synth.frequency", sm.frequency.to_string());
        kv("synth.shoulder_amplitude", sm.shoulder_amplitude.to_string());
        kv("synth.elbow_amplitude", sm.elbow_amplitude.to_string());
        kv("synth.duration", sm.duration.to_string());
        kv("synth.rate", sm.rate.to_string());
        kv("synth.noise_sd", sc.gaussian_sd.to_string());
        kv("synth.outlier_rate", sc.outlier_rate.to_string());
        kv("synth.outlier_support", sc.outlier_support.to_string());
        kv("synth.lost_rate", sc.lost_rate.to_string());
        kv("synth.seed", sc.seed.to_string());
        out
    }
}

/// Comma-separated joint names, e.g. `ROOT,SPINE,NECK`.
pub fn parse_joint_list(v: &str) -> std::result::Result<Vec<JointId>, String> {
    let joints = v
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<JointId>()
                .map_err(|_| format!("unknown joint {:?}", s.trim()))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if joints.is_empty() {
        return Err("empty joint list".into());
    }
    Ok(joints)
}
