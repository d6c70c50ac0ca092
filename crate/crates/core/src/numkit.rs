//! Numerical foundation: seeded random streams, jittered Cholesky factors
//! and multivariate Gaussian sampling.
//!
//! Randomness is organised as a tree of [`RngStream`]s. A stream is keyed by
//! a root seed and a derivation path of `(label, index)` pairs; the ChaCha
//! seed is a SHA-256 digest of that key, so a child never depends on how much
//! of its parent has been consumed. Parallel code derives one child per task
//! instead of sharing a stream.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Jitter multipliers (relative to `trace(A) / dim(A)`) tried in order.
pub const JITTER_SCHEDULE: [f64; 5] = [0.0, 1e-10, 1e-8, 1e-6, 1e-4];

const SYMMETRY_TOL: f64 = 1e-12;

/// A deterministic, single-consumer random stream.
#[derive(Debug)]
pub struct RngStream {
    root_seed: u64,
    path: Vec<(String, u64)>,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(root_seed: u64) -> Self {
        Self::from_key(root_seed, Vec::new())
    }

    fn from_key(root_seed: u64, path: Vec<(String, u64)>) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"gplvm-uq/rng/v1");
        hasher.update(root_seed.to_le_bytes());
        for (label, index) in &path {
            hasher.update((label.len() as u64).to_le_bytes());
            hasher.update(label.as_bytes());
            hasher.update(index.to_le_bytes());
        }
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest[..32]);
        Self {
            root_seed,
            path,
            inner: ChaCha8Rng::from_seed(seed),
        }
    }

    /// Child stream at `path ++ [(label, index)]`. Independent of how much of
    /// `self` has already been consumed.
    pub fn derive(&self, label: &str, index: u64) -> Self {
        let mut path = self.path.clone();
        path.push((label.to_owned(), index));
        Self::from_key(self.root_seed, path)
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn path(&self) -> &[(String, u64)] {
        &self.path
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn standard_normal_vector(&mut self, len: usize) -> DVector<f64> {
        DVector::from_iterator(len, (0..len).map(|_| self.standard_normal()))
    }
}

/// Free-function form of [`RngStream::derive`].
pub fn derive_stream(parent: &RngStream, label: &str, index: u64) -> RngStream {
    parent.derive(label, index)
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Lower Cholesky factor of `A + jitter_used * I`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholFactor {
    lower: DMatrix<f64>,
    jitter_used: f64,
}

impl CholFactor {
    /// Wraps an existing lower-triangular factor. Entries above the diagonal
    /// are zeroed.
    pub fn from_lower(mut lower: DMatrix<f64>) -> Result<Self> {
        if !lower.is_square() {
            return Err(Error::DimensionMismatch {
                context: "CholFactor::from_lower",
                expected: lower.nrows(),
                found: lower.ncols(),
            });
        }
        lower.fill_upper_triangle(0.0, 1);
        Ok(Self {
            lower,
            jitter_used: 0.0,
        })
    }

    /// Factor of the zero covariance: sampling with it returns the mean.
    pub fn zeros(dim: usize) -> Self {
        Self {
            lower: DMatrix::zeros(dim, dim),
            jitter_used: 0.0,
        }
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// `lower * lower^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.lower * self.lower.transpose()
    }

    /// Factor of `scale * (lower * lower^T)`; `scale` must be nonnegative.
    pub fn scaled(&self, scale: f64) -> Self {
        Self {
            lower: &self.lower * scale.max(0.0).sqrt(),
            jitter_used: self.jitter_used * scale.max(0.0),
        }
    }

    /// Inverse of the factored matrix. Fails on a singular factor.
    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let mut inv = DMatrix::identity(n, n);
        if !self.lower.solve_lower_triangular_mut(&mut inv) {
            return Err(Error::FactorizationFailure { trace_scale: 0.0 });
        }
        // inv now holds L^{-1}; A^{-1} = L^{-T} L^{-1}.
        let out = inv.transpose() * &inv;
        Ok(symmetrize(&out))
    }
}

/// Relative asymmetry `max|A - A^T| / max|A|` (0 for the zero matrix).
pub fn relative_asymmetry(a: &DMatrix<f64>) -> f64 {
    let scale = a.amax();
    if scale == 0.0 {
        return 0.0;
    }
    (a - a.transpose()).amax() / scale
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Cholesky factorization with trace-scaled jitter escalation.
///
/// Tries `A + c * t * I` for `c` in [`JITTER_SCHEDULE`], `t = trace(A)/dim`.
/// The exact zero matrix factors to the zero factor with no jitter.
pub fn cholesky_pd(a: &DMatrix<f64>) -> Result<CholFactor> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            context: "cholesky_pd",
            expected: a.nrows(),
            found: a.ncols(),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("cholesky_pd input"));
    }
    let n = a.nrows();
    if n == 0 || a.iter().all(|&v| v == 0.0) {
        return Ok(CholFactor::zeros(n));
    }
    let asym = relative_asymmetry(a);
    if asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }

    let trace_scale = a.trace() / n as f64;
    let t = if trace_scale > 0.0 { trace_scale } else { 1.0 };
    for &c in JITTER_SCHEDULE.iter() {
        let jitter = c * t;
        let mut trial = a.clone();
        for i in 0..n {
            trial[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(trial) {
            let lower = chol.unpack();
            if lower.diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
                return Ok(CholFactor {
                    lower,
                    jitter_used: jitter,
                });
            }
        }
    }
    Err(Error::FactorizationFailure { trace_scale })
}

/// Draws `mean + L z` with `z` standard normal.
pub fn sample_gaussian(
    mean: &DVector<f64>,
    factor: &CholFactor,
    rng: &mut RngStream,
) -> Result<DVector<f64>> {
    if mean.len() != factor.dim() {
        return Err(Error::DimensionMismatch {
            context: "sample_gaussian",
            expected: factor.dim(),
            found: mean.len(),
        });
    }
    let z = rng.standard_normal_vector(mean.len());
    Ok(mean + factor.lower() * z)
}
