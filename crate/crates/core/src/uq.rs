//! Monte Carlo decomposition of predictive variance.
//!
//! For a missing output `d`, with test latents `x^(m,l)` drawn per training
//! configuration `m`:
//!
//! * parameter term: mean over all `(m, l)` of `phi^T Cov[theta_d | X^(m)] phi`;
//! * latent term: population variance over all `(m, l)` of
//!   `g = phi^T E[theta_d | X^(m)]`;
//! * aleatoric: mean over `m` of `E[sigma_d^2 | X^(m)]`.
//!
//! The parameter term equals, per `m`, `mu^T C mu + tr(S C)` with `mu` and
//! `S` the empirical mean and covariance of the features. The latent term
//! pools all samples, so the spread between configurations is included.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{TestLatentDraws, TrainedModel};
use crate::rff::FeatureVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpistemicTerms {
    pub total: f64,
    pub param: f64,
    pub latent: f64,
}

/// Variance decomposition for one missing output dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimUncertainty {
    pub dim: usize,
    pub predictive_mean: f64,
    pub epistemic_param: f64,
    pub epistemic_latent: f64,
    pub epistemic_total: f64,
    pub aleatoric: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub entries: Vec<DimUncertainty>,
}

impl UncertaintyReport {
    pub fn get(&self, dim: usize) -> Option<&DimUncertainty> {
        self.entries.iter().find(|e| e.dim == dim)
    }
}

fn check_dim(model: &TrainedModel, d: usize) -> Result<()> {
    let len = model.output_dim();
    if d >= len {
        return Err(Error::IndexOutOfRange { index: d, len });
    }
    for fit in &model.fits {
        if fit.output_dim() != len {
            return Err(Error::DimensionMismatch {
                context: "conditional fit outputs",
                expected: len,
                found: fit.output_dim(),
            });
        }
    }
    Ok(())
}

fn check_draws(model: &TrainedModel, draws: &TestLatentDraws) -> Result<()> {
    if draws.groups.len() != model.num_samples() {
        return Err(Error::DimensionMismatch {
            context: "test draw groups vs training samples",
            expected: model.num_samples(),
            found: draws.groups.len(),
        });
    }
    let total = draws.total_samples();
    if total < 2 {
        return Err(Error::InsufficientSamples(total));
    }
    Ok(())
}

/// Features of every test draw, grouped by `m`.
fn draw_features(model: &TrainedModel, draws: &TestLatentDraws) -> Result<Vec<Vec<FeatureVector>>> {
    draws
        .groups
        .iter()
        .map(|g| g.samples.iter().map(|x| model.basis.features(x)).collect())
        .collect()
}

struct DimMoments {
    mean: f64,
    param: f64,
    latent: f64,
}

fn moments(model: &TrainedModel, phis: &[Vec<FeatureVector>], d: usize) -> DimMoments {
    let mut g = Vec::with_capacity(phis.iter().map(Vec::len).sum());
    let mut param = 0.0;
    for (fit, group) in model.fits.iter().zip(phis) {
        let theta = &fit.dims[d].theta;
        for phi in group {
            g.push(phi.dot(&theta.mean));
            param += theta.quadratic_form(phi);
        }
    }
    // Two-pass variance about the first value; identical samples give 0.
    let count = g.len() as f64;
    let pivot = g[0];
    let shift = g.iter().map(|v| v - pivot).sum::<f64>() / count;
    let latent = g.iter().map(|v| (v - pivot - shift).powi(2)).sum::<f64>() / count;
    DimMoments {
        mean: pivot + shift,
        param: param / count,
        latent,
    }
}

pub fn epistemic(
    model: &TrainedModel,
    draws: &TestLatentDraws,
    d: usize,
) -> Result<EpistemicTerms> {
    check_dim(model, d)?;
    check_draws(model, draws)?;
    let phis = draw_features(model, draws)?;
    let m = moments(model, &phis, d);
    Ok(EpistemicTerms {
        total: m.param + m.latent,
        param: m.param,
        latent: m.latent,
    })
}

pub fn aleatoric(model: &TrainedModel, d: usize) -> Result<f64> {
    check_dim(model, d)?;
    if model.fits.is_empty() {
        return Err(Error::InsufficientSamples(0));
    }
    let sum: f64 = model
        .fits
        .iter()
        .map(|f| f.dims[d].noise.mean_variance())
        .sum();
    Ok(sum / model.fits.len() as f64)
}

/// Per-dimension report for every dimension in `missing_dims`.
pub fn report(
    model: &TrainedModel,
    draws: &TestLatentDraws,
    missing_dims: &[usize],
) -> Result<UncertaintyReport> {
    if missing_dims.is_empty() {
        return Err(Error::EmptyInput("missing dimensions"));
    }
    for &d in missing_dims {
        check_dim(model, d)?;
        if draws.obs_dims.contains(&d) {
            return Err(Error::OverlappingDims(d));
        }
    }
    check_draws(model, draws)?;
    let phis = draw_features(model, draws)?;
    let entries = missing_dims
        .iter()
        .map(|&d| {
            let m = moments(model, &phis, d);
            let aleatoric = aleatoric(model, d)?;
            let epistemic_total = m.param + m.latent;
            Ok(DimUncertainty {
                dim: d,
                predictive_mean: m.mean,
                epistemic_param: m.param,
                epistemic_latent: m.latent,
                epistemic_total,
                aleatoric,
                total: epistemic_total + aleatoric,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(UncertaintyReport { entries })
}
