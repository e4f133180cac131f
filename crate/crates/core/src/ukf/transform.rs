//! Scaled unscented transform with 2n+1 symmetric sigma points.

use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Sigma-point spread parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for SigmaParams {
    fn default() -> Self {
        SigmaParams {
            alpha: 1e-3,
            beta: 2.0,
            kappa: 0.0,
        }
    }
}

impl SigmaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Invalid(format!("alpha must be in (0, 1], got {}", self.alpha)));
        }
        if !self.beta.is_finite() || !self.kappa.is_finite() {
            return Err(Error::Invalid("beta and kappa must be finite".into()));
        }
        Ok(())
    }

    pub fn lambda(&self, n: usize) -> f64 {
        let n = n as f64;
        self.alpha * self.alpha * (n + self.kappa) - n
    }

    pub fn weights(&self, n: usize) -> Weights {
        let scale = self.alpha * self.alpha * (n as f64 + self.kappa);
        let lambda = scale - n as f64;
        let wi = 1.0 / (2.0 * scale);
        let mut mean = vec![wi; 2 * n + 1];
        let mut cov = mean.clone();
        mean[0] = lambda / scale;
        cov[0] = lambda / scale + (1.0 - self.alpha * self.alpha + self.beta);
        Weights { mean, cov, scale }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
    /// `n + λ`; sigma offsets are columns of `sqrt(scale · P)`.
    pub scale: f64,
}

/// Mean and covariance of a Gaussian state estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: cov.nrows(),
            });
        }
        Ok(GaussianBelief { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn symmetrize(&mut self) {
        let t = self.cov.transpose();
        self.cov += t;
        self.cov *= 0.5;
    }
}

pub(crate) const JITTER_START: f64 = 1e-12;
pub(crate) const JITTER_MAX: f64 = 1e-6;

/// Cholesky factor, retrying with diagonal jitter `1e-12 .. 1e-6` (×10 steps).
pub fn cholesky_with_jitter(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let n = m.nrows();
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-9) {
        let shifted = m + DMatrix::identity(n, n) * jitter;
        if let Some(c) = Cholesky::new(shifted) {
            return Ok(c);
        }
        jitter *= 10.0;
    }
    Err(Error::numerical(format!(
        "covariance not positive definite after {JITTER_MAX:e} jitter"
    )))
}

/// Result of pushing a belief through a function.
#[derive(Debug, Clone)]
pub struct Propagated {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Cross covariance between input and output.
    pub cross: DMatrix<f64>,
}

/// Sigma-point offsets `±sqrt(scale)·L` as columns (the zeroth point has none).
pub fn sigma_offsets(belief: &GaussianBelief, params: &SigmaParams) -> Result<(DMatrix<f64>, Weights)> {
    let n = belief.dim();
    let w = params.weights(n);
    let chol = cholesky_with_jitter(&belief.cov)?;
    let l = chol.l() * w.scale.sqrt();
    let mut offsets = DMatrix::zeros(n, 2 * n + 1);
    for i in 0..n {
        offsets.column_mut(1 + i).copy_from(&l.column(i));
        offsets.column_mut(1 + n + i).copy_from(&(-l.column(i)));
    }
    Ok((offsets, w))
}

pub fn propagate(
    belief: &GaussianBelief,
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
    params: &SigmaParams,
) -> Result<Propagated> {
    let (offsets, w) = sigma_offsets(belief, params)?;
    let npts = offsets.ncols();
    let outputs: Vec<DVector<f64>> = (0..npts).map(|i| f(&(&belief.mean + offsets.column(i)))).collect();
    let m = outputs[0].len();
    if outputs.iter().any(|y| y.len() != m) {
        return Err(Error::numerical("function output dimension varies across sigma points"));
    }

    // Accumulate relative to the central image; weights sum to one, so this
    // is the weighted mean without cancelling large opposite-sign terms.
    let y0 = &outputs[0];
    let mut mean = DVector::zeros(m);
    for (i, y) in outputs.iter().enumerate().skip(1) {
        mean.axpy(w.mean[i], &(y - y0), 1.0);
    }
    mean += y0;

    let mut dy = DMatrix::zeros(m, npts);
    for (i, y) in outputs.iter().enumerate() {
        dy.column_mut(i).copy_from(&(y - &mean));
    }
    let mut dy_w = dy.clone();
    for (i, wc) in w.cov.iter().enumerate() {
        dy_w.column_mut(i).scale_mut(*wc);
    }
    let cov = &dy_w * dy.transpose();
    let cross = &offsets * dy_w.transpose();
    if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite unscented transform output"));
    }
    let mut cov = cov;
    let t = cov.transpose();
    cov += t;
    cov *= 0.5;
    Ok(Propagated { mean, cov, cross })
}

/// Sigma-point linearization about the central image `f(mean)`.
///
/// Spread terms are taken around `f(mean)` with the 2n non-central points
/// only, whose weights are all positive, so `cov` stays positive
/// semidefinite for any `alpha`. Exact for affine `f`; for nonlinear `f`
/// it drops the second-order mean shift of the full transform.
pub fn linearize_about_mean(
    belief: &GaussianBelief,
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
    params: &SigmaParams,
) -> Result<Propagated> {
    let (offsets, w) = sigma_offsets(belief, params)?;
    let n = belief.dim();
    let y0 = f(&belief.mean);
    let m = y0.len();
    let mut dy = DMatrix::zeros(m, 2 * n);
    for i in 0..2 * n {
        let y = f(&(&belief.mean + offsets.column(1 + i)));
        if y.len() != m {
            return Err(Error::numerical("function output dimension varies across sigma points"));
        }
        dy.column_mut(i).copy_from(&(y - &y0));
    }
    let wi = w.mean[1];
    let mut cov = &dy * dy.transpose() * wi;
    let cross = offsets.columns(1, 2 * n) * dy.transpose() * wi;
    if y0.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
        return Err(Error::numerical("non-finite sigma-point linearization"));
    }
    let t = cov.transpose();
    cov += t;
    cov *= 0.5;
    Ok(Propagated { mean: y0, cov, cross })
}

pub fn unscented_transform(
    belief: &GaussianBelief,
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
    params: &SigmaParams,
) -> Result<GaussianBelief> {
    let p = propagate(belief, f, params)?;
    Ok(GaussianBelief {
        mean: p.mean,
        cov: p.cov,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_belief(rng: &mut ChaCha8Rng, n: usize) -> GaussianBelief {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let cov = &a * a.transpose() + DMatrix::identity(n, n) * 0.1;
        let mean = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        GaussianBelief { mean, cov }
    }

    #[test]
    fn weights_sum_to_one() {
        for &alpha in &[1e-3, 0.01, 0.1, 0.5, 1.0] {
            for &kappa in &[0.0, 1.0, 3.0] {
                for n in [1, 5, 79, 98] {
                    let w = SigmaParams {
                        alpha,
                        beta: 2.0,
                        kappa,
                    }
                    .weights(n);
                    // compensated sum: the weights are O(1e6) with opposite signs
                    let (mut s, mut c) = (0.0f64, 0.0f64);
                    for &x in &w.mean {
                        let t = s + x;
                        c += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
                        s = t;
                    }
                    let s = s + c;
                    assert!((s - 1.0).abs() < 1e-9, "alpha {alpha} kappa {kappa} n {n}: {s}");
                }
            }
        }
    }

    #[test]
    fn identity_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = random_belief(&mut rng, 6);
        let out = unscented_transform(&b, |x| x.clone(), &SigmaParams::default()).unwrap();
        assert!((&out.mean - &b.mean).amax() < 1e-9);
        assert!((&out.cov - &b.cov).amax() < 1e-9);
    }

    #[test]
    fn affine_maps_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 5;
        let b = random_belief(&mut rng, n);
        let a = DMatrix::from_fn(3, n, |_, _| rng.random_range(-1.0..1.0));
        let c = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let out = unscented_transform(&b, |x| &a * x + &c, &SigmaParams::default()).unwrap();
        assert!((&out.mean - (&a * &b.mean + &c)).amax() < 1e-9);
        assert!((&out.cov - &a * &b.cov * a.transpose()).amax() < 1e-9);
    }

    #[test]
    fn central_linearization_is_exact_for_affine_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 7;
        let b = random_belief(&mut rng, n);
        let a = DMatrix::from_fn(4, n, |_, _| rng.random_range(-1.0..1.0));
        let c = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        let out = linearize_about_mean(&b, |x| &a * x + &c, &SigmaParams::default()).unwrap();
        assert!((&out.mean - (&a * &b.mean + &c)).amax() < 1e-9);
        assert!((&out.cov - &a * &b.cov * a.transpose()).amax() < 1e-9);
        assert!((&out.cross - &b.cov * a.transpose()).amax() < 1e-9);
    }

    #[test]
    fn central_linearization_stays_semidefinite() {
        let b = GaussianBelief {
            mean: DVector::from_element(2, 0.3),
            cov: DMatrix::identity(2, 2) * 0.5,
        };
        let out = linearize_about_mean(
            &b,
            |x| DVector::from_vec(vec![x[0] * x[1], x[0].sin(), x[1].powi(3)]),
            &SigmaParams::default(),
        )
        .unwrap();
        let eig = out.cov.symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&e| e > -1e-12));
    }

    #[test]
    fn square_of_standard_normal() {
        // chi-square with one degree of freedom: mean 1, variance 2
        let b = GaussianBelief {
            mean: DVector::from_element(1, 0.0),
            cov: DMatrix::from_element(1, 1, 1.0),
        };
        for params in [
            SigmaParams::default(),
            SigmaParams {
                alpha: 0.5,
                beta: 2.0,
                kappa: 0.0,
            },
        ] {
            let out = unscented_transform(&b, |x| x.map(|v| v * v), &params).unwrap();
            assert!((out.mean[0] - 1.0).abs() < 1e-6, "{}", out.mean[0]);
            assert!((out.cov[(0, 0)] - 2.0).abs() < 1e-6, "{}", out.cov[(0, 0)]);
        }
    }

    #[test]
    fn semidefinite_covariance_gets_jitter() {
        let mut cov = DMatrix::zeros(3, 3);
        cov[(0, 0)] = 1.0;
        cov[(1, 1)] = 1.0;
        let b = GaussianBelief {
            mean: DVector::zeros(3),
            cov,
        };
        assert!(unscented_transform(&b, |x| x.clone(), &SigmaParams::default()).is_ok());
    }

    #[test]
    fn indefinite_covariance_fails() {
        let mut cov = DMatrix::identity(2, 2);
        cov[(1, 1)] = -1.0;
        let b = GaussianBelief {
            mean: DVector::zeros(2),
            cov,
        };
        let err = unscented_transform(&b, |x| x.clone(), &SigmaParams::default()).unwrap_err();
        assert!(err.is_numerical());
    }
}
