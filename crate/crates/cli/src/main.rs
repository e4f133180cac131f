//! `kinetrack`: batch commands over frame CSV files.
//!
//! Exit status is 0 on success, 2 when the filter fails numerically, and 1
//! for every other error (bad input, bad configuration, I/O).

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use kinetrack_core::eval::{evaluate_accuracy, Alignment};
use kinetrack_core::io::{self, ToolConfig};
use kinetrack_core::metrics::compute_session_metrics;
use kinetrack_core::outlier::{clean_stream, report_csv};
use kinetrack_core::synth::{arm_raise_spec_with, corrupt_stream, generate_motion};
use kinetrack_core::ukf::MIN_FRAMES;
use kinetrack_core::{forward_kinematics, four_pass_filter, Frame, FrameStream, SkeletonTopology};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

#[derive(Parser)]
#[command(
    name = "kinetrack",
    version,
    about = "Clean, filter and evaluate skeletal joint-position streams"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// `section.key = value` configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `synth.seed`
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Skeleton topology file (default: the built-in 20-joint skeleton)
    #[arg(long, global = true)]
    topology: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the arm-raise scenario with configured corruption
    Synth {
        #[arg(long)]
        output: PathBuf,
        /// Ground-truth parameters and corruption labels
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Replace tracking-loss outliers by interpolation
    Outliers {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Per-joint mixture fit
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Clean, then run the four-pass kinematic filter
    Filter {
        #[arg(long)]
        input: PathBuf,
        /// Smoothed joint positions
        #[arg(long)]
        output: PathBuf,
        /// Root, lengths, quaternions and joint angles per frame
        #[arg(long)]
        params: Option<PathBuf>,
        /// Per-step filter diagnostics
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        no_clean: bool,
    },
    /// Joint positions from a parameter CSV
    Fk {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Session measures of a frame stream
    Metrics {
        #[arg(long)]
        input: PathBuf,
        /// Parameter CSV of the same frames; enables angle-based repetitions
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Offsets of a stream against a reference capture
    Evaluate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        no_align: bool,
        /// Comma-separated joint names used to fit the alignment
        #[arg(long)]
        align_joints: Option<String>,
        #[arg(long)]
        exclude_outliers: bool,
    },
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn read_stream(path: &Path, topo: &Arc<SkeletonTopology>) -> Result<FrameStream> {
    io::read_frames(&read(path)?, topo.clone()).with_context(|| path.display().to_string())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.common.config {
        Some(p) => ToolConfig::parse(&read(p)?).with_context(|| p.display().to_string())?,
        None => ToolConfig::default(),
    };
    if let Some(seed) = cli.common.seed {
        cfg.synth.corruption.seed = seed;
    }
    let topo = Arc::new(match &cli.common.topology {
        Some(p) => SkeletonTopology::parse(&read(p)?).with_context(|| p.display().to_string())?,
        None => SkeletonTopology::default(),
    });

    match cli.command {
        Command::Synth { output, report } => {
            let spec = arm_raise_spec_with(&topo, &cfg.synth.motion)?;
            let (clean, truth) = generate_motion(&spec, topo.clone())?;
            let (noisy, labels) = corrupt_stream(&clean, &cfg.synth.corruption)?;
            write(&output, &io::write_frames(&noisy))?;
            if let Some(p) = report {
                write(&p, &io::write_sidecar(&clean.timestamps(), &truth, &labels, &topo)?)?;
            }
        }
        Command::Outliers { input, output, report } => {
            let stream = read_stream(&input, &topo)?;
            let (cleaned, reports) = clean_stream(&stream, &cfg.outlier)?;
            for r in &reports {
                if let Some(w) = &r.warning {
                    eprintln!("warning: {}: {w}", r.joint);
                }
            }
            write(&output, &io::write_frames(&cleaned))?;
            if let Some(p) = report {
                write(&p, &report_csv(&reports))?;
            }
        }
        Command::Filter {
            input,
            output,
            params,
            report,
            no_clean,
        } => {
            let stream = read_stream(&input, &topo)?;
            // the filter's own precondition is the one a user can act on;
            // check it before cleaning reports its longer window requirement
            if stream.len() < MIN_FRAMES {
                bail!("filter needs at least {MIN_FRAMES} frames, input has {}", stream.len());
            }
            let stream = if no_clean {
                stream
            } else {
                let (cleaned, reports) = clean_stream(&stream, &cfg.outlier)?;
                for r in &reports {
                    if let Some(w) = &r.warning {
                        eprintln!("warning: {}: {w}", r.joint);
                    }
                }
                cleaned
            };
            let out = four_pass_filter(&stream, &cfg.ukf)?;
            write(&output, &io::write_frames(&out.positions(&stream)?))?;
            if let Some(p) = params {
                write(&p, &io::write_params(&stream.timestamps(), &out.states, &topo)?)?;
            }
            if let Some(p) = report {
                write(&p, &out.diagnostics_csv())?;
            }
        }
        Command::Fk { input, output } => {
            let (times, states) =
                io::read_params(&read(&input)?, &topo).with_context(|| input.display().to_string())?;
            let frames = times
                .iter()
                .zip(&states)
                .map(|(t, s)| Ok(Frame::new(*t, forward_kinematics(s, &topo)?)))
                .collect::<kinetrack_core::Result<Vec<_>>>()?;
            let rate = FrameStream::estimate_rate(&frames, io::DEFAULT_RATE);
            write(
                &output,
                &io::write_frames(&FrameStream::new(topo.clone(), frames, rate)?),
            )?;
        }
        Command::Metrics { input, params, output } => {
            let stream = read_stream(&input, &topo)?;
            let states = match &params {
                Some(p) => Some(
                    io::read_params(&read(p)?, &topo)
                        .with_context(|| p.display().to_string())?
                        .1,
                ),
                None => None,
            };
            let m = compute_session_metrics(&stream, states.as_deref(), &cfg.metrics)?;
            write(&output, &m.to_csv())?;
        }
        Command::Evaluate {
            input,
            reference,
            output,
            no_align,
            align_joints,
            exclude_outliers,
        } => {
            let mut ec = cfg.eval.clone();
            if no_align {
                ec.alignment = Alignment::Disabled;
            }
            if let Some(list) = align_joints {
                ec.align_joints = io::parse_joint_list(&list).map_err(|m| anyhow::anyhow!("--align-joints: {m}"))?;
            }
            ec.exclude_outliers |= exclude_outliers;
            let test = read_stream(&input, &topo)?;
            let reference_stream = read_stream(&reference, &topo)?;
            let report = evaluate_accuracy(&test, &reference_stream, &ec)?;
            for n in &report.notices {
                eprintln!("note: {n}");
            }
            write(&output, &report.to_csv())?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().any(|e| {
        e.downcast_ref::<kinetrack_core::Error>()
            .is_some_and(|e| e.is_numerical())
    });
    if numerical {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
