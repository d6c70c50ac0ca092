//! Latent-variable inference.
//!
//! Training alternates per-output regression fits with gradient ascent on
//! each latent point, then places a Laplace approximation at every MAP
//! latent and draws `M` latent configurations `X^(m)`, refitting the
//! regressions against each. At test time the latent of a partially observed
//! vector is found by multistart ascent on the observed-dimension log
//! density, and `L` latents are drawn from its Laplace approximation for
//! every `m`.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blr::{self, BlrPrior, FitOptions, NoisePosterior, ThetaPosterior};
use crate::error::{Error, Result};
use crate::numkit::{cholesky_pd, sample_gaussian, symmetrize, CholFactor, RngStream};
use crate::rff::{median_pairwise_distance, RffBasis};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const MAX_HALVINGS: usize = 10;
const GRAD_TOL: f64 = 1e-9;
/// Finite-difference step for Laplace Hessians.
pub const HESSIAN_STEP: f64 = 1e-4;
/// Consecutive decreasing outer rounds tolerated before giving up.
pub const DIVERGENCE_ROUNDS: usize = 5;
/// Slack for round-to-round objective comparisons.
const OBJECTIVE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_x: usize,
    pub d_y: usize,
    /// `J`, the number of random features.
    pub num_features: usize,
    pub lengthscale: f64,
    /// Replace `lengthscale` by the median pairwise distance of the
    /// initial latents.
    pub median_lengthscale: bool,
    pub prior: BlrPrior,
    pub outer_iters: usize,
    pub latent_step: f64,
    pub latent_iters: usize,
    pub restarts: usize,
    /// `M`, latent configurations drawn from the training posterior.
    pub posterior_samples: usize,
    /// `L`, test latents drawn per configuration.
    pub test_samples: usize,
    /// Multiplies every Laplace covariance before sampling. 1 in normal use.
    pub latent_cov_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_x: 2,
            d_y: 4,
            num_features: 100,
            lengthscale: 1.0,
            median_lengthscale: false,
            prior: BlrPrior::default(),
            outer_iters: 30,
            latent_step: 0.05,
            latent_iters: 25,
            restarts: 5,
            posterior_samples: 100,
            test_samples: 100,
            latent_cov_scale: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("d_x", self.d_x),
            ("d_y", self.d_y),
            ("outer_iters", self.outer_iters),
            ("latent_iters", self.latent_iters),
            ("restarts", self.restarts),
            ("M", self.posterior_samples),
            ("L", self.test_samples),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be positive")));
        }
        if self.d_x >= self.d_y {
            return Err(Error::InvalidConfig(format!(
                "latent dimension {} must be below output dimension {}",
                self.d_x, self.d_y
            )));
        }
        if self.num_features < 2 || !self.num_features.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "feature count must be even and >= 2, got {}",
                self.num_features
            )));
        }
        if self.latent_step.is_nan() || self.latent_step <= 0.0 {
            return Err(Error::InvalidConfig("latent_step must be > 0".into()));
        }
        if self.lengthscale.is_nan() || self.lengthscale <= 0.0 {
            return Err(Error::InvalidConfig("lengthscale must be > 0".into()));
        }
        if self.latent_cov_scale.is_nan() || self.latent_cov_scale < 0.0 {
            return Err(Error::InvalidConfig("latent_cov_scale must be >= 0".into()));
        }
        self.prior.validate()
    }

    /// Iteration cap for a single test-time ascent.
    fn test_ascent_iters(&self) -> usize {
        self.latent_iters * self.outer_iters
    }
}

/// Posterior of one output dimension's regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFit {
    pub theta: ThetaPosterior,
    pub noise: NoisePosterior,
}

/// Regression posteriors for all output dimensions against one latent
/// configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalFit {
    pub dims: Vec<OutputFit>,
}

impl ConditionalFit {
    pub fn output_dim(&self) -> usize {
        self.dims.len()
    }

    pub fn noise_variances(&self) -> Vec<f64> {
        self.dims.iter().map(|f| f.noise.mean_variance()).collect()
    }
}

/// Fits every output column of `y` against features of `latents`.
pub fn fit_conditional(
    basis: &RffBasis,
    latents: &DMatrix<f64>,
    y: &DMatrix<f64>,
    prior: &BlrPrior,
    warm_start: Option<&ConditionalFit>,
) -> Result<ConditionalFit> {
    let phi = basis.feature_matrix(latents)?;
    let dims = (0..y.ncols())
        .into_par_iter()
        .map(|d| {
            let options = FitOptions {
                initial_noise: warm_start.map(|w| w.dims[d].noise.mean_variance()),
                ..FitOptions::default()
            };
            let (theta, noise) = blr::fit(&phi, &y.column(d).into_owned(), prior, &options)?;
            Ok(OutputFit { theta, noise })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConditionalFit { dims })
}

/// Log density of one latent point given a subset of its outputs:
/// `sum_d log N(y_d | phi(x)^T E[theta_d], E[sigma_d^2]) + log N(x | 0, I)`.
#[derive(Debug, Clone)]
pub struct LatentObjective<'a> {
    basis: &'a RffBasis,
    terms: Vec<(f64, &'a DVector<f64>, f64)>,
}

impl<'a> LatentObjective<'a> {
    pub fn new(
        basis: &'a RffBasis,
        fit: &'a ConditionalFit,
        obs_dims: &[usize],
        y_obs: &[f64],
    ) -> Result<Self> {
        if obs_dims.is_empty() {
            return Err(Error::EmptyObservation);
        }
        check_observation(fit.output_dim(), obs_dims, y_obs)?;
        let terms = obs_dims
            .iter()
            .zip(y_obs)
            .map(|(&d, &y)| {
                let f = &fit.dims[d];
                (y, &f.theta.mean, f.noise.mean_variance())
            })
            .collect();
        Ok(Self { basis, terms })
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let phi = self.basis.features_unchecked(x);
        self.value_at(x, &phi)
    }

    fn value_at(&self, x: &DVector<f64>, phi: &DVector<f64>) -> f64 {
        let lik: f64 = self
            .terms
            .iter()
            .map(|(y, mean, var)| {
                let r = y - phi.dot(mean);
                -0.5 * (LN_2PI + var.ln()) - 0.5 * r * r / var
            })
            .sum();
        lik - 0.5 * (x.len() as f64 * LN_2PI + x.norm_squared())
    }

    pub fn value_and_gradient(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let mut value = 0.0;
        let (phi, pull) = self.basis.features_and_pullback(x, |phi| {
            let mut c = DVector::zeros(phi.len());
            for (y, mean, var) in &self.terms {
                let r = y - phi.dot(mean);
                value += -0.5 * (LN_2PI + var.ln()) - 0.5 * r * r / var;
                c.axpy(r / var, mean, 1.0);
            }
            c
        });
        debug_assert_eq!(phi.len(), self.basis.num_features());
        value -= 0.5 * (x.len() as f64 * LN_2PI + x.norm_squared());
        (value, pull - x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.value_and_gradient(x).1
    }

    /// Hessian by central differences of the analytic gradient, symmetrized.
    pub fn hessian(&self, x: &DVector<f64>, step: f64) -> DMatrix<f64> {
        let d = x.len();
        let mut h = DMatrix::zeros(d, d);
        for k in 0..d {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += step;
            xm[k] -= step;
            let col = (self.gradient(&xp) - self.gradient(&xm)) / (2.0 * step);
            h.column_mut(k).copy_from(&col);
        }
        symmetrize(&h)
    }
}

fn check_observation(d_y: usize, obs_dims: &[usize], y_obs: &[f64]) -> Result<()> {
    if obs_dims.len() != y_obs.len() {
        return Err(Error::DimensionMismatch {
            context: "observed values",
            expected: obs_dims.len(),
            found: y_obs.len(),
        });
    }
    for (i, &d) in obs_dims.iter().enumerate() {
        if d >= d_y {
            return Err(Error::IndexOutOfRange { index: d, len: d_y });
        }
        if obs_dims[..i].contains(&d) {
            return Err(Error::InvalidConfig(format!(
                "observed dimension {d} listed twice"
            )));
        }
    }
    if y_obs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("observed values"));
    }
    Ok(())
}

/// Log density of a test latent given its observed outputs.
pub fn test_log_density(
    x: &DVector<f64>,
    y_obs: &[f64],
    obs_dims: &[usize],
    fit: &ConditionalFit,
    basis: &RffBasis,
) -> Result<f64> {
    let obj = LatentObjective::new(basis, fit, obs_dims, y_obs)?;
    if x.len() != basis.latent_dim() {
        return Err(Error::DimensionMismatch {
            context: "test_log_density",
            expected: basis.latent_dim(),
            found: x.len(),
        });
    }
    Ok(obj.value(x))
}

/// Gradient ascent with backtracking: the step halves on a decrease (up to
/// ten times) and stays halved. The objective never decreases.
pub(crate) fn ascend(
    obj: &LatentObjective<'_>,
    start: DVector<f64>,
    step: f64,
    iters: usize,
) -> (DVector<f64>, f64) {
    let mut x = start;
    let (mut f, mut g) = obj.value_and_gradient(&x);
    let mut step = step;
    for _ in 0..iters {
        if g.norm() < GRAD_TOL {
            break;
        }
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let cand = &x + &g * step;
            let (fc, gc) = obj.value_and_gradient(&cand);
            if fc.is_finite() && fc >= f {
                x = cand;
                f = fc;
                g = gc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (x, f)
}

/// Covariance `(-H)^-1` of a Laplace approximation. An indefinite `-H`
/// that no jitter level repairs has its eigenvalues floored at the
/// unit prior precision.
pub fn laplace_covariance(hessian: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let precision = -symmetrize(hessian);
    match cholesky_pd(&precision) {
        Ok(factor) => factor.inverse(),
        Err(Error::FactorizationFailure { .. }) => {
            let eig = SymmetricEigen::new(precision);
            let inv = eig.eigenvalues.map(|l| 1.0 / l.max(1.0));
            let cov =
                &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose();
            Ok(symmetrize(&cov))
        }
        Err(e) => Err(e),
    }
}

fn covariance_factor(cov: &DMatrix<f64>, scale: f64) -> Result<CholFactor> {
    if scale == 0.0 {
        return Ok(CholFactor::zeros(cov.nrows()));
    }
    Ok(cholesky_pd(cov)?.scaled(scale))
}

/// Training output: the MAP latents, their Laplace covariances, `M` latent
/// samples and a conditional fit per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub basis: RffBasis,
    pub map_latents: DMatrix<f64>,
    pub laplace_covs: Vec<DMatrix<f64>>,
    pub latent_samples: Vec<DMatrix<f64>>,
    pub fits: Vec<ConditionalFit>,
    /// Fit against the MAP latents.
    pub map_fit: ConditionalFit,
    /// Joint log density after each outer round.
    pub objective_trace: Vec<f64>,
}

impl TrainedModel {
    pub fn num_samples(&self) -> usize {
        self.fits.len()
    }

    pub fn output_dim(&self) -> usize {
        self.map_fit.output_dim()
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(file, self)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(file)?)
    }
}

/// PCA scores of centered `y` on the leading `d_x` components, each scaled
/// to unit variance. Component signs make the largest loading positive.
pub fn pca_init(y: &DMatrix<f64>, d_x: usize) -> DMatrix<f64> {
    let n = y.nrows();
    let mean = y.row_mean();
    let centered = DMatrix::from_fn(n, y.ncols(), |i, j| y[(i, j)] - mean[j]);
    let cov = symmetrize(&(centered.transpose() * &centered / n as f64));
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });

    let mut scores = DMatrix::zeros(n, d_x);
    for (k, &idx) in order.iter().take(d_x).enumerate() {
        let mut v = eig.eigenvectors.column(idx).into_owned();
        let lead = v
            .iter()
            .copied()
            .fold(0.0f64, |acc, c| if c.abs() > acc.abs() { c } else { acc });
        if lead < 0.0 {
            v = -v;
        }
        let col = &centered * v;
        let sd = (col.norm_squared() / n as f64).sqrt();
        let col = if sd > 1e-12 { col / sd } else { col * 0.0 };
        scores.column_mut(k).copy_from(&col);
    }
    scores
}

fn log_normal_prior(theta: &DVector<f64>, alpha: f64) -> f64 {
    let j = theta.len() as f64;
    0.5 * j * (alpha.ln() - LN_2PI) - 0.5 * alpha * theta.norm_squared()
}

fn log_inv_gamma(s2: f64, a: f64, b: f64) -> f64 {
    a * b.ln() - ln_gamma(a) - (a + 1.0) * s2.ln() - b / s2
}

/// Lanczos approximation (g = 7, n = 9).
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Joint log density at the current point estimate: per-point likelihood and
/// latent prior, plus the weight and noise priors at the fitted values.
pub fn joint_log_density(
    basis: &RffBasis,
    latents: &DMatrix<f64>,
    y: &DMatrix<f64>,
    fit: &ConditionalFit,
    prior: &BlrPrior,
) -> Result<f64> {
    let all: Vec<usize> = (0..y.ncols()).collect();
    let mut total = 0.0;
    for n in 0..latents.nrows() {
        let obs: Vec<f64> = y.row(n).iter().copied().collect();
        let obj = LatentObjective::new(basis, fit, &all, &obs)?;
        total += obj.value(&latents.row(n).transpose());
    }
    for f in &fit.dims {
        total += log_normal_prior(&f.theta.mean, prior.alpha);
        total += log_inv_gamma(f.noise.mean_variance(), prior.a0, prior.b0);
    }
    Ok(total)
}

fn update_latents(
    basis: &RffBasis,
    latents: &DMatrix<f64>,
    y: &DMatrix<f64>,
    fit: &ConditionalFit,
    config: &ModelConfig,
) -> Result<DMatrix<f64>> {
    let all: Vec<usize> = (0..y.ncols()).collect();
    let rows = (0..latents.nrows())
        .into_par_iter()
        .map(|n| {
            let obs: Vec<f64> = y.row(n).iter().copied().collect();
            let obj = LatentObjective::new(basis, fit, &all, &obs)?;
            let (x, _) = ascend(
                &obj,
                latents.row(n).transpose(),
                config.latent_step,
                config.latent_iters,
            );
            Ok(x)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = latents.clone();
    for (n, x) in rows.into_iter().enumerate() {
        out.row_mut(n).copy_from(&x.transpose());
    }
    Ok(out)
}

/// Trains the latent-variable model on `y` (`N x d_y`) with a fixed basis.
pub fn train(
    y: &DMatrix<f64>,
    basis: RffBasis,
    config: &ModelConfig,
    rng: &RngStream,
) -> Result<TrainedModel> {
    config.validate()?;
    if y.nrows() < 2 {
        return Err(Error::InvalidConfig(format!(
            "need at least 2 training rows, got {}",
            y.nrows()
        )));
    }
    if y.ncols() != config.d_y {
        return Err(Error::DimensionMismatch {
            context: "train outputs",
            expected: config.d_y,
            found: y.ncols(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training data"));
    }
    if basis.latent_dim() != config.d_x {
        return Err(Error::DimensionMismatch {
            context: "basis latent dimension",
            expected: config.d_x,
            found: basis.latent_dim(),
        });
    }

    let mut latents = pca_init(y, config.d_x);
    let basis = match (
        config.median_lengthscale,
        median_pairwise_distance(&latents),
    ) {
        (true, Some(l)) => basis.with_lengthscale(l)?,
        _ => basis,
    };

    let mut fit: Option<ConditionalFit> = None;
    let mut trace: Vec<f64> = Vec::with_capacity(config.outer_iters);
    let mut decreases = 0;
    for _ in 0..config.outer_iters {
        let current = fit_conditional(&basis, &latents, y, &config.prior, fit.as_ref())?;
        latents = update_latents(&basis, &latents, y, &current, config)?;
        let objective = joint_log_density(&basis, &latents, y, &current, &config.prior)?;
        if !objective.is_finite() {
            return Err(Error::NonFinite("training objective"));
        }
        if let Some(&prev) = trace.last() {
            if objective < prev - OBJECTIVE_SLACK * prev.abs().max(1.0) {
                decreases += 1;
                if decreases >= DIVERGENCE_ROUNDS {
                    return Err(Error::DivergedOptimization { rounds: decreases });
                }
            } else {
                decreases = 0;
            }
        }
        trace.push(objective);
        fit = Some(current);
    }
    let map_fit = fit_conditional(&basis, &latents, y, &config.prior, fit.as_ref())?;

    let all: Vec<usize> = (0..config.d_y).collect();
    let laplace_covs = (0..latents.nrows())
        .into_par_iter()
        .map(|n| {
            let obs: Vec<f64> = y.row(n).iter().copied().collect();
            let obj = LatentObjective::new(&basis, &map_fit, &all, &obs)?;
            laplace_covariance(&obj.hessian(&latents.row(n).transpose(), HESSIAN_STEP))
        })
        .collect::<Result<Vec<_>>>()?;
    let factors = laplace_covs
        .iter()
        .map(|c| covariance_factor(c, config.latent_cov_scale))
        .collect::<Result<Vec<_>>>()?;

    let samples = (0..config.posterior_samples)
        .into_par_iter()
        .map(|m| {
            let mut stream = rng.derive("posterior_sample", m as u64);
            let mut xm = latents.clone();
            for (n, factor) in factors.iter().enumerate() {
                let draw = sample_gaussian(&latents.row(n).transpose(), factor, &mut stream)?;
                xm.row_mut(n).copy_from(&draw.transpose());
            }
            let fit_m = fit_conditional(&basis, &xm, y, &config.prior, Some(&map_fit))?;
            Ok((xm, fit_m))
        })
        .collect::<Result<Vec<_>>>()?;
    let (latent_samples, fits) = samples.into_iter().unzip();

    Ok(TrainedModel {
        basis,
        map_latents: latents,
        laplace_covs,
        latent_samples,
        fits,
        map_fit,
        objective_trace: trace,
    })
}

/// Mode and Laplace covariance of the test latent given observed outputs.
/// With no observed dimensions this is the prior `(0, I)`.
pub fn infer_test_latent(
    y_obs: &[f64],
    obs_dims: &[usize],
    fit: &ConditionalFit,
    basis: &RffBasis,
    config: &ModelConfig,
    rng: &mut RngStream,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d_x = basis.latent_dim();
    if config.restarts == 0 {
        return Err(Error::InvalidConfig("restarts must be positive".into()));
    }
    if obs_dims.is_empty() {
        check_observation(fit.output_dim(), obs_dims, y_obs)?;
        return Ok((DVector::zeros(d_x), DMatrix::identity(d_x, d_x)));
    }
    let obj = LatentObjective::new(basis, fit, obs_dims, y_obs)?;

    let mut best: Option<(DVector<f64>, f64)> = None;
    for r in 0..config.restarts {
        let start = if r == 0 {
            DVector::zeros(d_x)
        } else {
            rng.standard_normal_vector(d_x)
        };
        let (x, f) = ascend(&obj, start, config.latent_step, config.test_ascent_iters());
        if !f.is_finite() {
            return Err(Error::NonFinite("test log density"));
        }
        if best.as_ref().is_none_or(|(_, fb)| f > *fb) {
            best = Some((x, f));
        }
    }
    let (mode, _) = best.expect("at least one restart");
    let cov = laplace_covariance(&obj.hessian(&mode, HESSIAN_STEP))?;
    Ok((mode, cov))
}

/// Test latents for one `m`: the mode, its Laplace covariance and `L` draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestLatentGroup {
    pub mode: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub samples: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestLatentDraws {
    pub obs_dims: Vec<usize>,
    /// One group per training configuration `m`.
    pub groups: Vec<TestLatentGroup>,
}

impl TestLatentDraws {
    pub fn total_samples(&self) -> usize {
        self.groups.iter().map(|g| g.samples.len()).sum()
    }
}

/// For every `m`, infers the test latent against `fits[m]` and draws `L`
/// samples from its Laplace approximation.
pub fn sample_test_latents(
    model: &TrainedModel,
    y_obs: &[f64],
    obs_dims: &[usize],
    config: &ModelConfig,
    rng: &RngStream,
) -> Result<TestLatentDraws> {
    if model.fits.is_empty() {
        return Err(Error::InsufficientSamples(0));
    }
    let groups = (0..model.fits.len())
        .into_par_iter()
        .map(|m| {
            let stream = rng.derive("m", m as u64);
            let (mode, covariance) = infer_test_latent(
                y_obs,
                obs_dims,
                &model.fits[m],
                &model.basis,
                config,
                &mut stream.derive("restarts", 0),
            )?;
            let factor = covariance_factor(&covariance, config.latent_cov_scale)?;
            let mut draws = stream.derive("draws", 0);
            let samples = (0..config.test_samples)
                .map(|_| sample_gaussian(&mode, &factor, &mut draws))
                .collect::<Result<Vec<_>>>()?;
            Ok(TestLatentGroup {
                mode,
                covariance,
                samples,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TestLatentDraws {
        obs_dims: obs_dims.to_vec(),
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rff::sample_basis;

    fn simple_fit(
        num_features: usize,
        d_y: usize,
        rng: &mut RngStream,
        noise: f64,
    ) -> ConditionalFit {
        let dims = (0..d_y)
            .map(|_| OutputFit {
                theta: ThetaPosterior {
                    mean: rng.standard_normal_vector(num_features),
                    covariance: DMatrix::identity(num_features, num_features) * 0.01,
                },
                noise: NoisePosterior {
                    shape: 3.0,
                    rate: 2.0 * noise,
                },
            })
            .collect();
        ConditionalFit { dims }
    }

    fn zero_fit(num_features: usize, d_y: usize) -> ConditionalFit {
        ConditionalFit {
            dims: (0..d_y)
                .map(|_| OutputFit {
                    theta: ThetaPosterior::prior(num_features, 1.0),
                    noise: NoisePosterior {
                        shape: 2.0,
                        rate: 1.0,
                    },
                })
                .collect(),
        }
    }

    #[test]
    fn log_density_at_origin() {
        let basis = sample_basis(2, 10, 1.0, &mut RngStream::new(1)).unwrap();
        let fit = zero_fit(10, 4);
        let v = test_log_density(&DVector::zeros(2), &[0.0; 3], &[0, 1, 3], &fit, &basis).unwrap();
        let want = -(3.0 + 2.0) / 2.0 * (2.0 * PI).ln();
        assert!((v - want).abs() < 1e-12);
    }

    #[test]
    fn log_density_errors() {
        let basis = sample_basis(2, 10, 1.0, &mut RngStream::new(1)).unwrap();
        let fit = zero_fit(10, 4);
        let x = DVector::zeros(2);
        assert!(matches!(
            test_log_density(&x, &[], &[], &fit, &basis),
            Err(Error::EmptyObservation)
        ));
        assert!(matches!(
            test_log_density(&x, &[0.0], &[4], &fit, &basis),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(test_log_density(&x, &[0.0, 1.0], &[1], &fit, &basis).is_err());
        assert!(test_log_density(&DVector::zeros(3), &[0.0], &[1], &fit, &basis).is_err());
    }

    #[test]
    fn log_density_separates_over_dims() {
        let mut rng = RngStream::new(2);
        let basis = sample_basis(2, 10, 1.0, &mut rng.derive("b", 0)).unwrap();
        let fit = simple_fit(10, 4, &mut rng, 0.5);
        let x = DVector::from_vec(vec![0.3, -0.4]);
        let y = [0.2, -1.0, 0.7];
        let dims = [0, 2, 3];
        let base = test_log_density(&x, &y, &dims, &fit, &basis).unwrap();
        let shifted = test_log_density(&x, &[0.2, -1.0 + 0.9, 0.7], &dims, &fit, &basis).unwrap();
        let mu = basis.features(&x).unwrap().dot(&fit.dims[2].theta.mean);
        let s2 = fit.dims[2].noise.mean_variance();
        let lp = |v: f64| -0.5 * (2.0 * PI * s2).ln() - 0.5 * (v - mu).powi(2) / s2;
        assert!(((shifted - base) - (lp(-0.1) - lp(-1.0))).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = RngStream::new(3);
        let h = 1e-5;
        for trial in 0..50u64 {
            let basis = sample_basis(2, 20, 1.0, &mut rng.derive("basis", trial)).unwrap();
            let fit = simple_fit(20, 4, &mut rng, 0.3);
            let y: Vec<f64> = (0..3).map(|_| rng.standard_normal()).collect();
            let obj = LatentObjective::new(&basis, &fit, &[0, 1, 2], &y).unwrap();
            let x = rng.standard_normal_vector(2);
            let g = obj.gradient(&x);
            let mut fd = DVector::zeros(2);
            for k in 0..2 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                fd[k] = (obj.value(&xp) - obj.value(&xm)) / (2.0 * h);
            }
            let rel = (&g - &fd).norm() / g.norm().max(1e-8);
            assert!(rel <= 1e-5, "trial {trial}: rel {rel}");
        }
    }

    #[test]
    fn ascent_never_decreases() {
        let mut rng = RngStream::new(4);
        let basis = sample_basis(2, 30, 1.0, &mut rng.derive("b", 0)).unwrap();
        let fit = simple_fit(30, 4, &mut rng, 0.1);
        let obj =
            LatentObjective::new(&basis, &fit, &[0, 1, 2, 3], &[1.0, -0.5, 0.3, 2.0]).unwrap();
        let start = DVector::from_vec(vec![1.0, 1.0]);
        let f0 = obj.value(&start);
        let mut last = f0;
        for iters in [1, 2, 5, 20, 100] {
            let (_, f) = ascend(&obj, start.clone(), 5.0, iters);
            assert!(f >= f0);
            assert!(f >= last - 1e-12);
            last = f;
        }
    }

    #[test]
    fn prior_fallback_for_empty_observation() {
        let basis = sample_basis(2, 10, 1.0, &mut RngStream::new(5)).unwrap();
        let fit = zero_fit(10, 4);
        let (mode, cov) = infer_test_latent(
            &[],
            &[],
            &fit,
            &basis,
            &ModelConfig::default(),
            &mut RngStream::new(6),
        )
        .unwrap();
        assert_eq!(mode, DVector::zeros(2));
        assert_eq!(cov, DMatrix::identity(2, 2));
    }

    #[test]
    fn optimizer_reaches_grid_maximum() {
        let mut rng = RngStream::new(7);
        let basis = sample_basis(2, 20, 1.0, &mut rng.derive("b", 0)).unwrap();
        let fit = simple_fit(20, 4, &mut rng, 0.2);
        let y = [0.8, -0.3, 0.5];
        let dims = [0, 1, 3];
        let config = ModelConfig::default();
        let (mode, cov) =
            infer_test_latent(&y, &dims, &fit, &basis, &config, &mut rng.derive("r", 0)).unwrap();
        let best = test_log_density(&mode, &y, &dims, &fit, &basis).unwrap();

        let mut grid_max = f64::NEG_INFINITY;
        for i in 0..200 {
            for j in 0..200 {
                let x = DVector::from_vec(vec![
                    -4.0 + 8.0 * i as f64 / 199.0,
                    -4.0 + 8.0 * j as f64 / 199.0,
                ]);
                grid_max = grid_max.max(test_log_density(&x, &y, &dims, &fit, &basis).unwrap());
            }
        }
        assert!(best >= grid_max - 1e-3, "{best} < {grid_max}");
        assert!(cholesky_pd(&cov).is_ok());
        assert!(crate::numkit::relative_asymmetry(&cov) < 1e-12);
    }

    #[test]
    fn informative_observations_contract_covariance() {
        // Linear-like fit: a single small frequency makes phi^T theta nearly
        // linear in x around the origin.
        let freqs = DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, 0.1]);
        let basis = RffBasis::from_frequencies(freqs, 10.0).unwrap();
        let mut theta = DVector::zeros(4);
        theta[1] = 10.0;
        let mut theta2 = DVector::zeros(4);
        theta2[3] = 10.0;
        let tight = |t: DVector<f64>| OutputFit {
            theta: ThetaPosterior {
                mean: t,
                covariance: DMatrix::zeros(4, 4),
            },
            noise: NoisePosterior {
                shape: 2.0,
                rate: 1e-4,
            },
        };
        let fit = ConditionalFit {
            dims: vec![tight(theta), tight(theta2), tight(DVector::zeros(4))],
        };
        let config = ModelConfig {
            d_y: 3,
            ..ModelConfig::default()
        };
        let (_, cov) = infer_test_latent(
            &[0.3, -0.2],
            &[0, 1],
            &fit,
            &basis,
            &config,
            &mut RngStream::new(8),
        )
        .unwrap();
        assert!(cov.trace() < 2.0 * 1e-2, "trace {}", cov.trace());
        for i in 0..2 {
            assert!(cov[(i, i)] <= 1.0);
        }
    }

    #[test]
    fn laplace_covariance_of_quadratic() {
        let h = DMatrix::from_row_slice(2, 2, &[-2.0, 0.5, 0.5, -1.0]);
        let cov = laplace_covariance(&h).unwrap();
        let want = (-h).try_inverse().unwrap();
        assert!((cov - want).amax() < 1e-12);
        // indefinite: floored eigenvalues
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -4.0]);
        let cov = laplace_covariance(&bad).unwrap();
        assert!((cov[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((cov[(1, 1)] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn pca_init_unit_variance() {
        let mut rng = RngStream::new(9);
        let y = DMatrix::from_fn(50, 4, |_, j| rng.standard_normal() * (j + 1) as f64);
        let x = pca_init(&y, 2);
        for k in 0..2 {
            let col = x.column(k);
            assert!(col.mean().abs() < 1e-12);
            assert!((col.norm_squared() / 50.0 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-13);
        assert!(ln_gamma(2.0).abs() < 1e-13);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(0.5) - PI.sqrt().ln()).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::default().validate().is_ok());
        let bad = [
            ModelConfig {
                d_x: 4,
                ..ModelConfig::default()
            },
            ModelConfig {
                num_features: 7,
                ..ModelConfig::default()
            },
            ModelConfig {
                restarts: 0,
                ..ModelConfig::default()
            },
            ModelConfig {
                latent_step: 0.0,
                ..ModelConfig::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }
}
