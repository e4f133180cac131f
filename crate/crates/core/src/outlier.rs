//! Gaussian + uniform mixture for separating random sensor error from
//! tracking-loss outliers, and stream cleaning built on it.
//!
//! The mixture density is `ρ·N(μ, σ) + (1 − ρ)·U(x1, x2)`. Fitting holds the
//! uniform support at the sample range and runs EM on `(ρ, μ, σ)`.

use crate::error::{Error, Result};
use crate::frame::{Confidence, FrameStream};
use crate::skeleton::JointId;
use nalgebra::Vector3;
use std::f64::consts::PI;
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureParams {
    pub rho: f64,
    pub mu: f64,
    pub sigma: f64,
    pub x1: f64,
    pub x2: f64,
}

impl MixtureParams {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.rho)
            && self.sigma > 0.0
            && self.x2 > self.x1
            && [self.mu, self.sigma, self.x1, self.x2].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("invalid mixture parameters {self:?}")))
        }
    }

    pub fn gaussian_pdf(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.sigma;
        (-0.5 * z * z).exp() / (self.sigma * (2.0 * PI).sqrt())
    }

    pub fn uniform_pdf(&self, x: f64) -> f64 {
        if x >= self.x1 && x <= self.x2 {
            1.0 / (self.x2 - self.x1)
        } else {
            0.0
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.rho * self.gaussian_pdf(x) + (1.0 - self.rho) * self.uniform_pdf(x)
    }

    /// Posterior probability that `x` came from the uniform component.
    /// Samples outside the support count as outliers.
    pub fn uniform_responsibility(&self, x: f64) -> f64 {
        if x < self.x1 || x > self.x2 {
            return 1.0;
        }
        let u = (1.0 - self.rho) * self.uniform_pdf(x);
        if u == 0.0 {
            return 0.0;
        }
        let g = self.rho * self.gaussian_pdf(x);
        u / (g + u)
    }

    pub fn log_likelihood(&self, samples: &[f64]) -> f64 {
        samples.iter().map(|&x| self.pdf(x).ln()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Stop once the log-likelihood changes by less than this.
    pub tol: f64,
    pub init_rho: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iter: 200,
            tol: 1e-8,
            init_rho: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureFit {
    pub params: MixtureParams,
    /// Log-likelihood of every parameter iterate, starting from the initial guess.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
}

pub const MIN_SAMPLES: usize = 10;

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn fit_mixture_em(samples: &[f64], config: &EmConfig) -> Result<MixtureParams> {
    fit_mixture_em_traced(samples, config).map(|f| f.params)
}

pub fn fit_mixture_em_traced(samples: &[f64], config: &EmConfig) -> Result<MixtureFit> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::InsufficientData {
            needed: MIN_SAMPLES,
            got: samples.len(),
        });
    }
    if let Some(x) = samples.iter().find(|x| !x.is_finite()) {
        return Err(Error::Invalid(format!("non-finite sample {x}")));
    }
    let (x1, x2) = samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    });
    if x2 <= x1 {
        return Err(Error::DegenerateData("all samples are identical".into()));
    }
    let n = samples.len() as f64;
    let sigma_floor = 1e-9 * (x2 - x1);

    let mut sorted = samples.to_vec();
    let mu0 = median(&mut sorted);
    let mut dev: Vec<f64> = samples.iter().map(|x| (x - mu0).abs()).collect();
    let mut sigma0 = 1.4826 * median(&mut dev);
    if sigma0 <= sigma_floor {
        let mean = samples.iter().sum::<f64>() / n;
        sigma0 = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    }
    let mut p = MixtureParams {
        rho: config.init_rho,
        mu: mu0,
        sigma: sigma0.max(sigma_floor),
        x1,
        x2,
    };

    let mut trace = Vec::with_capacity(config.max_iter + 1);
    let mut resp = vec![0.0; samples.len()];
    let mut iterations = 0;
    for _ in 0..config.max_iter {
        // E-step; also yields the log-likelihood of the current iterate.
        let u = (1.0 - p.rho) / (x2 - x1);
        let mut ll = 0.0;
        for (r, &x) in resp.iter_mut().zip(samples) {
            let g = p.rho * p.gaussian_pdf(x);
            let total = g + u;
            *r = if total > 0.0 { g / total } else { 0.0 };
            ll += total.ln();
        }
        let done = trace.last().is_some_and(|prev: &f64| (ll - prev).abs() < config.tol);
        trace.push(ll);
        if done {
            break;
        }
        iterations += 1;

        // M-step
        let wsum: f64 = resp.iter().sum();
        p.rho = wsum / n;
        if wsum > 0.0 {
            let mu = resp.iter().zip(samples).map(|(r, x)| r * x).sum::<f64>() / wsum;
            let var = resp.iter().zip(samples).map(|(r, x)| r * (x - mu).powi(2)).sum::<f64>() / wsum;
            p.mu = mu;
            p.sigma = var.sqrt().max(sigma_floor);
        }
    }
    Ok(MixtureFit {
        params: p,
        log_likelihood: trace,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierReport {
    /// Posterior responsibility of the uniform component, per sample.
    pub responsibilities: Vec<f64>,
    pub flags: Vec<bool>,
    pub params: MixtureParams,
    pub log_likelihood: Vec<f64>,
}

impl OutlierReport {
    pub fn n_flagged(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }
}

pub fn classify_outliers(samples: &[f64], params: &MixtureParams, threshold: f64) -> OutlierReport {
    let responsibilities: Vec<f64> = samples.iter().map(|&x| params.uniform_responsibility(x)).collect();
    let flags = responsibilities.iter().map(|&r| r > threshold).collect();
    OutlierReport {
        responsibilities,
        flags,
        params: *params,
        log_likelihood: Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierConfig {
    /// Rolling-median window in frames (odd).
    pub window: usize,
    pub threshold: f64,
    /// Joints with a larger flagged fraction are passed through untouched.
    pub max_flag_fraction: f64,
    pub em: EmConfig,
}

impl Default for OutlierConfig {
    fn default() -> Self {
        OutlierConfig {
            window: 11,
            threshold: 0.5,
            max_flag_fraction: 0.5,
            em: EmConfig::default(),
        }
    }
}

impl OutlierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::Invalid(format!(
                "window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Invalid(format!(
                "threshold must be in (0, 1), got {}",
                self.threshold
            )));
        }
        if !(self.max_flag_fraction > 0.0 && self.max_flag_fraction <= 1.0) {
            return Err(Error::Invalid(format!(
                "max_flag_fraction must be in (0, 1], got {}",
                self.max_flag_fraction
            )));
        }
        if self.em.max_iter == 0 || !(self.em.tol > 0.0) {
            return Err(Error::Invalid("EM needs max_iter >= 1 and tol > 0".into()));
        }
        if !(self.em.init_rho > 0.0 && self.em.init_rho < 1.0) {
            return Err(Error::Invalid(format!(
                "init_rho must be in (0, 1), got {}",
                self.em.init_rho
            )));
        }
        Ok(())
    }
}

/// Cleaning outcome for one joint.
#[derive(Debug, Clone, PartialEq)]
pub struct JointCleaning {
    pub joint: JointId,
    /// Per frame; lost frames are never flagged, nor are deviations below
    /// the fitted Gaussian mean (the mixture's own classification is kept
    /// in `report`).
    pub flags: Vec<bool>,
    /// Mixture fit over the observed frames, on deviation^(2/3). `None` when the deviation
    /// signal is degenerate or too short to fit.
    pub report: Option<OutlierReport>,
    pub n_flagged: usize,
    /// Observed (non-lost) frames.
    pub n_total: usize,
    /// Frames whose position was rewritten.
    pub n_replaced: usize,
    pub warning: Option<String>,
}

/// Distance of each observed sample from the per-coordinate median of its
/// observed neighbours. `None` for unobserved frames.
///
/// The window is centred and shrinks symmetrically near the stream ends
/// (half-width at least one), so steady motion does not bias edge samples.
/// The first and last samples use the three nearest frames.
pub fn deviation_signal(track: &[Option<Vector3<f64>>], window: usize) -> Vec<Option<f64>> {
    let n = track.len();
    let mut buf: [Vec<f64>; 3] = Default::default();
    (0..n)
        .map(|i| {
            let p = track[i]?;
            let hw = (window / 2).min(i).min(n - 1 - i).max(1);
            let (mut lo, mut hi) = (i.saturating_sub(hw), (i + hw).min(n - 1));
            // the end samples still get three, so one bad neighbour cannot
            // drag the median halfway to itself
            if i == 0 {
                hi = 2.min(n - 1);
            } else if i == n - 1 {
                lo = n.saturating_sub(3);
            }
            for b in &mut buf {
                b.clear();
            }
            for q in track[lo..=hi].iter().flatten() {
                for c in 0..3 {
                    buf[c].push(q[c]);
                }
            }
            let med = Vector3::new(median(&mut buf[0]), median(&mut buf[1]), median(&mut buf[2]));
            Some((p - med).norm())
        })
        .collect()
}

pub fn clean_stream(stream: &FrameStream, config: &OutlierConfig) -> Result<(FrameStream, Vec<JointCleaning>)> {
    config.validate()?;
    let needed = 2 * config.window;
    if stream.len() < needed {
        return Err(Error::TooFewFrames {
            needed,
            got: stream.len(),
        });
    }
    let times = stream.timestamps();
    let mut frames = stream.frames().to_vec();
    let mut reports = Vec::with_capacity(JointId::ALL.len());

    for joint in stream.topology().joint_order() {
        let track: Vec<Option<Vector3<f64>>> = stream
            .frames()
            .iter()
            .map(|f| f.is_observed(joint).then(|| f.position(joint)))
            .collect();
        let dev = deviation_signal(&track, config.window);
        let observed: Vec<usize> = (0..track.len()).filter(|&i| dev[i].is_some()).collect();
        // Noise makes the squared deviation roughly σ²χ²₃; its cube root is
        // close to Gaussian, which the mixture's core assumes. Fitting the
        // raw distance leaves a long right tail for the uniform to absorb.
        let samples: Vec<f64> = observed.iter().map(|&i| dev[i].unwrap().powf(2.0 / 3.0)).collect();
        let n_total = samples.len();

        let mut flags = vec![false; track.len()];
        let mut warning = None;
        let report = match fit_mixture_em_traced(&samples, &config.em) {
            Ok(fit) => {
                let mut rep = classify_outliers(&samples, &fit.params, config.threshold);
                rep.log_likelihood = fit.log_likelihood;
                // Tracking loss shows up as a large deviation. A sample closer
                // to its median than the Gaussian mean can still land on the
                // uniform side when the core is narrow; it is not replaced.
                for (k, &i) in observed.iter().enumerate() {
                    flags[i] = rep.flags[k] && samples[k] > fit.params.mu;
                }
                Some(rep)
            }
            Err(Error::DegenerateData(_)) => None,
            Err(Error::InsufficientData { got, .. }) => {
                if got < track.len() {
                    warning = Some(format!("only {got} observed frames; not fitted"));
                }
                None
            }
            Err(e) => return Err(e),
        };
        let n_flagged = flags.iter().filter(|f| **f).count();

        let mut n_replaced = 0;
        if n_total > 0 && n_flagged as f64 > config.max_flag_fraction * n_total as f64 {
            warning = Some(format!(
                "{n_flagged} of {n_total} frames flagged; systemic tracking failure, joint left unmodified"
            ));
        } else {
            let valid: Vec<usize> = (0..track.len()).filter(|&i| track[i].is_some() && !flags[i]).collect();
            if valid.is_empty() {
                if warning.is_none() {
                    warning = Some("no valid frames to interpolate from".into());
                }
            } else {
                let mut next = 0; // index into `valid` of the first valid frame >= i
                for i in 0..track.len() {
                    while next < valid.len() && valid[next] < i {
                        next += 1;
                    }
                    if track[i].is_some() && !flags[i] {
                        continue;
                    }
                    let p = match (next.checked_sub(1).map(|k| valid[k]), valid.get(next).copied()) {
                        (Some(a), Some(b)) => {
                            let (pa, pb) = (track[a].unwrap(), track[b].unwrap());
                            let s = (times[i] - times[a]) / (times[b] - times[a]);
                            pa + (pb - pa) * s
                        }
                        (Some(a), None) => track[a].unwrap(),
                        (None, Some(b)) => track[b].unwrap(),
                        (None, None) => unreachable!(),
                    };
                    frames[i].pos[joint.index()] = p;
                    frames[i].conf[joint.index()] = Confidence::Inferred;
                    n_replaced += 1;
                }
            }
        }
        reports.push(JointCleaning {
            joint,
            flags,
            report,
            n_flagged,
            n_total,
            n_replaced,
            warning,
        });
    }
    Ok((
        FrameStream::new(stream.topology_arc(), frames, stream.nominal_rate)?,
        reports,
    ))
}

/// `joint,rho,mu,sigma,x1,x2,n_flagged,n_total,warning`
pub fn report_csv(reports: &[JointCleaning]) -> String {
    let mut out = String::from("joint,rho,mu,sigma,x1,x2,n_flagged,n_total,warning\n");
    for r in reports {
        let p = r.report.as_ref().map(|r| r.params);
        let f = |v: Option<f64>| v.map_or_else(|| "NaN".to_string(), |v| v.to_string());
        let warning = r.warning.as_deref().unwrap_or("").replace([',', '\n'], ";");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.joint,
            f(p.map(|p| p.rho)),
            f(p.map(|p| p.mu)),
            f(p.map(|p| p.sigma)),
            f(p.map(|p| p.x1)),
            f(p.map(|p| p.x2)),
            r.n_flagged,
            r.n_total,
            warning
        );
    }
    out
}
