//! End-to-end scenarios on the synthetic arm-raise motion.

use kinetrack_core::eval::joint_angle_rmse;
use kinetrack_core::outlier::{clean_stream, OutlierConfig};
use kinetrack_core::synth::{arm_raise_spec, corrupt_stream, generate_motion, CorruptionSpec, MotionSpec};
use kinetrack_core::ukf::UpdateRule;
use kinetrack_core::*;
use std::f64::consts::PI;
use std::sync::Arc;

fn scenario() -> (Arc<SkeletonTopology>, MotionSpec, FrameStream, Vec<KinematicState>) {
    let topo = Arc::new(SkeletonTopology::default());
    let spec = arm_raise_spec(&topo).unwrap();
    let (stream, truth) = generate_motion(&spec, topo.clone()).unwrap();
    (topo, spec, stream, truth)
}

fn noise_only(sd: f64, seed: u64) -> CorruptionSpec {
    CorruptionSpec {
        gaussian_sd: sd,
        outlier_rate: 0.0,
        outlier_support: 0.0,
        lost_rate: 0.0,
        seed,
    }
}

/// Configuration for exact data: small measurement noise and a nearly
/// fixed root.
fn noiseless_config() -> UkfConfig {
    UkfConfig {
        update: UpdateRule::Iterated { max_iter: 3 },
        process_sd_root: 1e-3,
        measurement_sd: 1e-3,
        ..UkfConfig::default()
    }
}

/// Frequency bin with the largest DFT magnitude, DC excluded.
fn dominant_bin(x: &[f64]) -> usize {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    (1..n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in x.iter().enumerate() {
                let a = -2.0 * PI * (k * i) as f64 / n as f64;
                re += (v - mean) * a.cos();
                im += (v - mean) * a.sin();
            }
            (k, re * re + im * im)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
        .0
}

#[test]
fn noiseless_motion_is_recovered() {
    let (_, spec, stream, truth) = scenario();
    let out = four_pass_filter(&stream, &noiseless_config()).unwrap();
    for (a, b) in out.frozen_lengths.iter().zip(&spec.base.lengths) {
        assert!((a - b).abs() < 1e-4, "{a} vs {b}");
    }
    for (s, t) in out.states.iter().zip(&truth) {
        assert!((s.root_pos - t.root_pos).norm() < 1e-4);
    }
}

#[test]
fn noisy_motion_is_smoothed() {
    let (topo, spec, clean, _) = scenario();
    for seed in 0..5 {
        let (noisy, _) = corrupt_stream(&clean, &noise_only(0.025, seed)).unwrap();
        let out = four_pass_filter(&noisy, &UkfConfig::default()).unwrap();
        let smooth = out.positions(&noisy).unwrap();
        let raw = joint_angle_rmse(&noisy, &clean).unwrap();
        let filtered = joint_angle_rmse(&smooth, &clean).unwrap();
        assert!(filtered < raw, "seed {seed}: {filtered} >= {raw}");

        // Segments hanging off ROOT share its poorly determined position and
        // the shortest ones are dominated by noise; the rest hold 5%.
        for (k, seg) in topo.segments().iter().enumerate() {
            let truth = spec.base.lengths[k];
            if seg.parent == JointId::Root || truth < 0.1 {
                continue;
            }
            let rel = (out.frozen_lengths[k] - truth).abs() / truth;
            assert!(rel < 0.05, "seed {seed} {}: {rel}", seg.name);
        }

        // the left shoulder swing keeps its period
        let k = topo.segment_index(JointId::ElbL).unwrap();
        let angles = |s: &FrameStream| -> Vec<f64> {
            s.frames()
                .iter()
                .map(|f| kinematics::joint_angles_from_positions(f, &topo).unwrap()[k].angle)
                .collect()
        };
        let truth_bin = dominant_bin(&angles(&clean));
        assert_eq!(truth_bin, dominant_bin(&angles(&smooth)), "seed {seed}");
        // 15 s at 0.25 Hz
        assert!(truth_bin.abs_diff(4) <= 1, "{truth_bin}");
    }
}

#[test]
fn frozen_lengths_are_bit_identical() {
    let (_, _, clean, _) = scenario();
    let (noisy, _) = corrupt_stream(&clean, &CorruptionSpec::default()).unwrap();
    let (cleaned, _) = clean_stream(&noisy, &OutlierConfig::default()).unwrap();
    let out = four_pass_filter(&cleaned, &UkfConfig::default()).unwrap();
    let first: Vec<u64> = out.states[0].lengths.iter().map(|l| l.to_bits()).collect();
    for s in &out.states {
        let bits: Vec<u64> = s.lengths.iter().map(|l| l.to_bits()).collect();
        assert_eq!(bits, first);
    }
    let frozen: Vec<u64> = out.frozen_lengths.iter().map(|l| l.to_bits()).collect();
    assert_eq!(frozen, first);
}

#[test]
fn runs_are_deterministic() {
    let (_, _, clean, _) = scenario();
    let spec = CorruptionSpec {
        lost_rate: 0.02,
        seed: 9,
        ..CorruptionSpec::default()
    };
    let (a, la) = corrupt_stream(&clean, &spec).unwrap();
    let (b, lb) = corrupt_stream(&clean, &spec).unwrap();
    assert_eq!(la, lb);
    let (ca, _) = clean_stream(&a, &OutlierConfig::default()).unwrap();
    let (cb, _) = clean_stream(&b, &OutlierConfig::default()).unwrap();
    let oa = four_pass_filter(&ca, &UkfConfig::default()).unwrap();
    let ob = four_pass_filter(&cb, &UkfConfig::default()).unwrap();
    assert_eq!(
        io::write_params(&ca.timestamps(), &oa.states, ca.topology()).unwrap(),
        io::write_params(&cb.timestamps(), &ob.states, cb.topology()).unwrap()
    );
}

#[test]
fn cleaning_removes_most_of_the_outlier_damage() {
    let (_, _, clean, _) = scenario();
    for seed in 0..3 {
        let (noisy, _) = corrupt_stream(
            &clean,
            &CorruptionSpec {
                outlier_rate: 0.1,
                seed,
                ..CorruptionSpec::default()
            },
        )
        .unwrap();
        let (cleaned, _) = clean_stream(&noisy, &OutlierConfig::default()).unwrap();
        let e_raw = joint_angle_rmse(&noisy, &clean).unwrap();
        let e_clean = joint_angle_rmse(&cleaned, &clean).unwrap();
        assert!(e_clean < e_raw, "seed {seed}: {e_clean} >= {e_raw}");
        // the cleaned stream is usable by the filter and smoothing helps again
        let out = four_pass_filter(&cleaned, &UkfConfig::default()).unwrap();
        let e_filtered = joint_angle_rmse(&out.positions(&cleaned).unwrap(), &clean).unwrap();
        assert!(e_filtered < e_clean, "seed {seed}: {e_filtered} >= {e_clean}");
    }
}

#[test]
fn clean_streams_are_rarely_flagged() {
    let (_, _, clean, _) = scenario();
    let (mut flagged, mut total) = (0, 0);
    for seed in 0..20 {
        let (noisy, _) = corrupt_stream(&clean, &noise_only(0.025, seed)).unwrap();
        let (out, reports) = clean_stream(&noisy, &OutlierConfig::default()).unwrap();
        for r in &reports {
            flagged += r.n_flagged;
            total += r.n_total;
            for (t, &f) in r.flags.iter().enumerate() {
                if !f {
                    assert_eq!(out.frames()[t].position(r.joint), noisy.frames()[t].position(r.joint));
                }
            }
        }
    }
    let rate = flagged as f64 / total as f64;
    assert!(rate < 0.02, "{rate}");
}

#[test]
fn metrics_on_the_filtered_scenario() {
    let (_, spec, clean, _) = scenario();
    let (noisy, _) = corrupt_stream(&clean, &noise_only(0.025, 1)).unwrap();
    let out = four_pass_filter(&noisy, &UkfConfig::default()).unwrap();
    let smooth = out.positions(&noisy).unwrap();
    let m = metrics::compute_session_metrics(&smooth, Some(&out.states), &metrics::MetricsConfig::default()).unwrap();
    let periods = spec.duration * 0.25;
    assert!(
        (m.repetitions.count as f64 - periods).abs() <= 1.0,
        "{:?}",
        m.repetitions
    );
    assert!(matches!(
        m.most_moving[0].0,
        JointId::HanL | JointId::HanR | JointId::WriL | JointId::WriR
    ));
}
