//! Random Fourier features for the RBF kernel.
//!
//! Frequencies are drawn from the kernel's spectral density,
//! `omega ~ N(0, lengthscale^-2 I)`, and the feature map is laid out as
//! interleaved pairs `[cos(w1.x), sin(w1.x), cos(w2.x), sin(w2.x), ...]`
//! scaled by `sqrt(2/J)`, so that `phi(x).phi(x')` estimates
//! `exp(-|x - x'|^2 / (2 lengthscale^2))` and `|phi(x)|^2 == 1`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::RngStream;

/// A feature vector of length `J`.
pub type FeatureVector = DVector<f64>;

/// Sampled spectral frequencies defining the feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "BasisRecord", try_from = "BasisRecord")]
pub struct RffBasis {
    /// `(J/2) x d_x`, one frequency per row.
    frequencies: DMatrix<f64>,
    num_features: usize,
    lengthscale: f64,
}

/// Serialized form: frequencies are row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisRecord {
    #[serde(rename = "J")]
    pub num_features: usize,
    pub lengthscale: f64,
    pub d_x: usize,
    pub frequencies: Vec<f64>,
}

impl From<RffBasis> for BasisRecord {
    fn from(b: RffBasis) -> Self {
        let d_x = b.latent_dim();
        let mut frequencies = Vec::with_capacity(b.frequencies.len());
        for row in b.frequencies.row_iter() {
            frequencies.extend(row.iter().copied());
        }
        Self {
            num_features: b.num_features,
            lengthscale: b.lengthscale,
            d_x,
            frequencies,
        }
    }
}

impl TryFrom<BasisRecord> for RffBasis {
    type Error = Error;

    fn try_from(r: BasisRecord) -> Result<Self> {
        validate(r.num_features, r.lengthscale)?;
        let rows = r.num_features / 2;
        if r.frequencies.len() != rows * r.d_x {
            return Err(Error::DimensionMismatch {
                context: "basis record frequencies",
                expected: rows * r.d_x,
                found: r.frequencies.len(),
            });
        }
        RffBasis::from_frequencies(
            DMatrix::from_row_slice(rows, r.d_x, &r.frequencies),
            r.lengthscale,
        )
    }
}

fn validate(num_features: usize, lengthscale: f64) -> Result<()> {
    if num_features < 2 || !num_features.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!(
            "feature count must be even and >= 2, got {num_features}"
        )));
    }
    if !(lengthscale > 0.0 && lengthscale.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "lengthscale must be positive, got {lengthscale}"
        )));
    }
    Ok(())
}

impl RffBasis {
    /// Builds a basis from explicit frequencies (one per row). `J` is twice
    /// the number of rows.
    pub fn from_frequencies(frequencies: DMatrix<f64>, lengthscale: f64) -> Result<Self> {
        let num_features = 2 * frequencies.nrows();
        validate(num_features, lengthscale)?;
        if frequencies.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("basis frequencies"));
        }
        Ok(Self {
            frequencies,
            num_features,
            lengthscale,
        })
    }

    pub fn frequencies(&self) -> &DMatrix<f64> {
        &self.frequencies
    }

    /// `J`.
    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    pub fn latent_dim(&self) -> usize {
        self.frequencies.ncols()
    }

    fn scale(&self) -> f64 {
        (2.0 / self.num_features as f64).sqrt()
    }

    /// Same underlying standard-normal draws, rescaled to a new lengthscale.
    pub fn with_lengthscale(&self, lengthscale: f64) -> Result<Self> {
        validate(self.num_features, lengthscale)?;
        Ok(Self {
            frequencies: &self.frequencies * (self.lengthscale / lengthscale),
            num_features: self.num_features,
            lengthscale,
        })
    }

    fn check_dim(&self, x: &DVector<f64>, context: &'static str) -> Result<()> {
        if x.len() != self.latent_dim() {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.latent_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    fn projection(&self, row: usize, x: &DVector<f64>) -> f64 {
        self.frequencies
            .row(row)
            .iter()
            .zip(x.iter())
            .map(|(w, v)| w * v)
            .sum()
    }

    pub fn features(&self, x: &DVector<f64>) -> Result<FeatureVector> {
        self.check_dim(x, "features")?;
        Ok(self.features_unchecked(x))
    }

    pub(crate) fn features_unchecked(&self, x: &DVector<f64>) -> FeatureVector {
        let s = self.scale();
        let mut out = DVector::zeros(self.num_features);
        for j in 0..self.frequencies.nrows() {
            let (sin, cos) = self.projection(j, x).sin_cos();
            out[2 * j] = s * cos;
            out[2 * j + 1] = s * sin;
        }
        out
    }

    /// Feature matrix, one row per latent row of `latents` (`N x d_x`).
    pub fn feature_matrix(&self, latents: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if latents.ncols() != self.latent_dim() {
            return Err(Error::DimensionMismatch {
                context: "feature_matrix",
                expected: self.latent_dim(),
                found: latents.ncols(),
            });
        }
        let mut out = DMatrix::zeros(latents.nrows(), self.num_features);
        for n in 0..latents.nrows() {
            let phi = self.features_unchecked(&latents.row(n).transpose());
            out.row_mut(n).copy_from(&phi.transpose());
        }
        Ok(out)
    }

    /// `J x d_x` Jacobian of [`features`](Self::features).
    pub fn features_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(x, "features_jacobian")?;
        let s = self.scale();
        let mut jac = DMatrix::zeros(self.num_features, self.latent_dim());
        for j in 0..self.frequencies.nrows() {
            let (sin, cos) = self.projection(j, x).sin_cos();
            let omega = self.frequencies.row(j);
            jac.row_mut(2 * j).copy_from(&(omega * (-s * sin)));
            jac.row_mut(2 * j + 1).copy_from(&(omega * (s * cos)));
        }
        Ok(jac)
    }

    /// `features(x)` together with `jacobian(x)^T c`, without materializing
    /// the Jacobian.
    pub(crate) fn features_and_pullback(
        &self,
        x: &DVector<f64>,
        c: impl FnOnce(&FeatureVector) -> FeatureVector,
    ) -> (FeatureVector, DVector<f64>) {
        let s = self.scale();
        let half = self.frequencies.nrows();
        let mut phi = DVector::zeros(self.num_features);
        let mut trig = Vec::with_capacity(half);
        for j in 0..half {
            let (sin, cos) = self.projection(j, x).sin_cos();
            phi[2 * j] = s * cos;
            phi[2 * j + 1] = s * sin;
            trig.push((sin, cos));
        }
        let weights = c(&phi);
        let mut grad = DVector::zeros(self.latent_dim());
        for (j, (sin, cos)) in trig.into_iter().enumerate() {
            let coeff = s * (cos * weights[2 * j + 1] - sin * weights[2 * j]);
            if coeff != 0.0 {
                for (g, w) in grad.iter_mut().zip(self.frequencies.row(j).iter()) {
                    *g += coeff * w;
                }
            }
        }
        (phi, grad)
    }

    /// `phi(x).phi(x')`.
    pub fn kernel_estimate(&self, x: &DVector<f64>, x_prime: &DVector<f64>) -> Result<f64> {
        let a = self.features(x)?;
        let b = self.features(x_prime)?;
        Ok(a.dot(&b))
    }

    /// Closed-form RBF kernel this basis approximates.
    pub fn exact_kernel(&self, x: &DVector<f64>, x_prime: &DVector<f64>) -> f64 {
        let d2 = (x - x_prime).norm_squared();
        (-d2 / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }
}

/// Draws `J/2` frequencies `omega ~ N(0, lengthscale^-2 I_{d_x})`.
pub fn sample_basis(
    d_x: usize,
    num_features: usize,
    lengthscale: f64,
    rng: &mut RngStream,
) -> Result<RffBasis> {
    validate(num_features, lengthscale)?;
    if d_x == 0 {
        return Err(Error::InvalidConfig(
            "latent dimension must be positive".into(),
        ));
    }
    let rows = num_features / 2;
    let mut frequencies = DMatrix::zeros(rows, d_x);
    for j in 0..rows {
        for k in 0..d_x {
            frequencies[(j, k)] = rng.standard_normal() / lengthscale;
        }
    }
    RffBasis::from_frequencies(frequencies, lengthscale)
}

/// Median pairwise Euclidean distance between rows of `latents`; the
/// optional lengthscale heuristic.
pub fn median_pairwise_distance(latents: &DMatrix<f64>) -> Option<f64> {
    let n = latents.nrows();
    if n < 2 {
        return None;
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push((latents.row(i) - latents.row(j)).norm());
        }
    }
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 0 {
        0.5 * (dists[mid - 1] + dists[mid])
    } else {
        dists[mid]
    };
    (median > 0.0).then_some(median)
}
