//! Bayesian linear regression in feature space, one output dimension at a
//! time.
//!
//! Prior: `theta ~ N(0, alpha^-1 I)`, `sigma^2 ~ InvGamma(a0, b0)`. The weight
//! posterior is kept Gaussian; the noise variance is updated by fixed-point
//! alternation using the expected residual under the current weight
//! posterior.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::symmetrize;
use crate::rff::FeatureVector;

/// Gaussian posterior over the weights of one output dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaPosterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl ThetaPosterior {
    pub fn prior(num_features: usize, alpha: f64) -> Self {
        Self {
            mean: DVector::zeros(num_features),
            covariance: DMatrix::from_diagonal_element(num_features, num_features, 1.0 / alpha),
        }
    }

    pub fn num_features(&self) -> usize {
        self.mean.len()
    }

    /// `phi^T Cov phi`, clamped at zero against roundoff.
    pub fn quadratic_form(&self, phi: &FeatureVector) -> f64 {
        (phi.transpose() * &self.covariance * phi)[(0, 0)].max(0.0)
    }
}

/// Inverse-gamma posterior over the noise variance of one output dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoisePosterior {
    pub shape: f64,
    pub rate: f64,
}

impl NoisePosterior {
    /// Posterior mean `b_N / (a_N - 1)`.
    pub fn mean_variance(&self) -> f64 {
        self.rate / (self.shape - 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlrPrior {
    /// Weight-prior precision.
    pub alpha: f64,
    pub a0: f64,
    pub b0: f64,
}

impl Default for BlrPrior {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            a0: 2.0,
            b0: 1.0,
        }
    }
}

impl BlrPrior {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "alpha must be > 0, got {}",
                self.alpha
            )));
        }
        if !(self.a0 > 1.0 && self.a0.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise a0 must be > 1, got {}",
                self.a0
            )));
        }
        if !(self.b0 > 0.0 && self.b0.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise b0 must be > 0, got {}",
                self.b0
            )));
        }
        Ok(())
    }

    pub fn noise_prior(&self) -> NoisePosterior {
        NoisePosterior {
            shape: self.a0,
            rate: self.b0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iters: usize,
    pub tol: f64,
    /// Hold the noise variance fixed: a single weight update at this value.
    pub pinned_noise: Option<f64>,
    /// Starting noise variance; defaults to the prior mean.
    pub initial_noise: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iters: 20,
            tol: 1e-6,
            pinned_noise: None,
            initial_noise: None,
        }
    }
}

/// Fits the weight and noise posteriors for targets `y` on features `Phi`
/// (`N x J`).
///
/// With `pinned_noise`, the returned noise posterior is the single update
/// computed against the pinned-noise weight posterior.
pub fn fit(
    features: &DMatrix<f64>,
    targets: &DVector<f64>,
    prior: &BlrPrior,
    options: &FitOptions,
) -> Result<(ThetaPosterior, NoisePosterior)> {
    prior.validate()?;
    let n = features.nrows();
    let num_features = features.ncols();
    if targets.len() != n {
        return Err(Error::DimensionMismatch {
            context: "blr::fit targets",
            expected: n,
            found: targets.len(),
        });
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("blr targets"));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("blr features"));
    }
    if n == 0 {
        return Ok((
            ThetaPosterior::prior(num_features, prior.alpha),
            prior.noise_prior(),
        ));
    }
    if let Some(s2) = options.pinned_noise {
        if !(s2 > 0.0 && s2.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "pinned noise must be > 0, got {s2}"
            )));
        }
    }

    let gram = symmetrize(&(features.transpose() * features));
    let proj = features.transpose() * targets;
    let yy = targets.norm_squared();
    let eig = SymmetricEigen::try_new(gram, 1e-14, 10_000)
        .ok_or(Error::FactorizationFailure { trace_scale: 0.0 })?;
    let lambda: Vec<f64> = eig.eigenvalues.iter().map(|l| l.max(0.0)).collect();
    let u = eig.eigenvectors.transpose() * &proj;

    let shape = prior.a0 + 0.5 * n as f64;
    let mut sigma2 = options
        .pinned_noise
        .or(options.initial_noise)
        .unwrap_or_else(|| prior.noise_prior().mean_variance());

    let iters = if options.pinned_noise.is_some() {
        1
    } else {
        options.max_iters.max(1)
    };
    for _ in 0..iters {
        let (resid, trace) = spectral_residual(&lambda, &u, yy, sigma2, prior.alpha);
        let rate = prior.b0 + 0.5 * resid + 0.5 * trace;
        let next = rate / (shape - 1.0);
        if options.pinned_noise.is_some() {
            break;
        }
        let converged = ((next - sigma2) / sigma2).abs() < options.tol;
        if converged {
            break;
        }
        sigma2 = next;
    }

    // Weight posterior at the final noise level.
    let shrink: Vec<f64> = lambda
        .iter()
        .map(|l| 1.0 / (l / sigma2 + prior.alpha))
        .collect();
    let v = &eig.eigenvectors;
    let coef = DVector::from_iterator(
        num_features,
        shrink.iter().zip(u.iter()).map(|(d, ui)| d * ui / sigma2),
    );
    let mean = v * coef;
    let scaled = v * DMatrix::from_diagonal(&DVector::from_vec(shrink.clone()));
    let covariance = symmetrize(&(scaled * v.transpose()));

    // Direct residual for the reported noise posterior.
    let resid = (targets - features * &mean).norm_squared();
    let trace: f64 = lambda.iter().zip(&shrink).map(|(l, d)| l * d).sum();
    let noise = NoisePosterior {
        shape,
        rate: prior.b0 + 0.5 * resid + 0.5 * trace,
    };
    Ok((ThetaPosterior { mean, covariance }, noise))
}

/// Residual sum of squares at the posterior mean and `tr(Phi Cov Phi^T)`,
/// both in the eigenbasis of `Phi^T Phi`.
fn spectral_residual(
    lambda: &[f64],
    u: &DVector<f64>,
    yy: f64,
    sigma2: f64,
    alpha: f64,
) -> (f64, f64) {
    let mut cross = 0.0;
    let mut quad = 0.0;
    let mut trace = 0.0;
    for (l, ui) in lambda.iter().zip(u.iter()) {
        let d = 1.0 / (l / sigma2 + alpha);
        let c = d * ui / sigma2;
        cross += ui * c;
        quad += l * c * c;
        trace += l * d;
    }
    ((yy - 2.0 * cross + quad).max(0.0), trace)
}

/// Predictive mean `phi^T E[theta]` and variance `phi^T Cov phi + E[sigma^2]`.
pub fn posterior_predictive(
    theta: &ThetaPosterior,
    noise: &NoisePosterior,
    phi: &FeatureVector,
) -> Result<(f64, f64)> {
    if phi.len() != theta.num_features() {
        return Err(Error::DimensionMismatch {
            context: "posterior_predictive",
            expected: theta.num_features(),
            found: phi.len(),
        });
    }
    let mean = phi.dot(&theta.mean);
    let variance = theta.quadratic_form(phi) + noise.mean_variance();
    Ok((mean, variance))
}
