//! Four-function synthetic data: a 2-D Gaussian latent mapped through a
//! linear, a squared, a periodic and a step function, each with additive
//! Gaussian noise.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::RngStream;

pub const LATENT_DIM: usize = 2;
pub const OUTPUT_DIM: usize = 4;

pub type Weights = [[f64; LATENT_DIM]; OUTPUT_DIM];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    /// `N x 2`.
    pub latents_true: DMatrix<f64>,
    pub weights: Weights,
    /// `N x 4`.
    pub observations: DMatrix<f64>,
    pub noise_variance: f64,
    pub latent_std: f64,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.observations.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn rows(&self, start: usize, count: usize) -> Self {
        Self {
            latents_true: self.latents_true.rows(start, count).into_owned(),
            weights: self.weights,
            observations: self.observations.rows(start, count).into_owned(),
            noise_variance: self.noise_variance,
            latent_std: self.latent_std,
        }
    }

    /// CSV with header `row,x1_true,x2_true,y1,y2,y3,y4` (or `row,y1,...`
    /// without the true latents).
    pub fn write_csv<W: Write>(&self, out: W, with_truth: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["row".to_string()];
        if with_truth {
            header.extend(["x1_true".into(), "x2_true".into()]);
        }
        header.extend((1..=OUTPUT_DIM).map(|d| format!("y{d}")));
        w.write_record(&header).map_err(csv_err)?;
        for n in 0..self.len() {
            let mut rec = vec![n.to_string()];
            if with_truth {
                rec.extend(self.latents_true.row(n).iter().map(|v| format!("{v:.17e}")));
            }
            rec.extend(self.observations.row(n).iter().map(|v| format!("{v:.17e}")));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Train/test partition; the first `n_train` rows train.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: SyntheticDataset,
    pub test: SyntheticDataset,
}

/// Noise-free outputs of the four generating functions at `x`. The step
/// function maps `w4.x == 0` to -1.
pub fn noise_free_outputs(x: [f64; LATENT_DIM], weights: &Weights) -> [f64; OUTPUT_DIM] {
    let proj = |w: &[f64; LATENT_DIM]| w[0] * x[0] + w[1] * x[1];
    [
        proj(&weights[0]),
        proj(&weights[1]).powi(2),
        proj(&weights[2]).sin(),
        if proj(&weights[3]) > 0.0 { 1.0 } else { -1.0 },
    ]
}

fn check_scale(name: &str, v: f64, allow_zero: bool) -> Result<()> {
    let ok = v.is_finite() && (v > 0.0 || (allow_zero && v == 0.0));
    if !ok {
        return Err(Error::InvalidConfig(format!(
            "{name} must be positive, got {v}"
        )));
    }
    Ok(())
}

/// Draws weights `w_d ~ N(0, sigma_w^2 I)` once, then the dataset.
pub fn generate(
    n: usize,
    sigma_x: f64,
    sigma_w: f64,
    sigma_eps: f64,
    rng: &RngStream,
) -> Result<SyntheticDataset> {
    check_scale("sigma_w", sigma_w, false)?;
    let mut wr = rng.derive("weights", 0);
    let mut weights = [[0.0; LATENT_DIM]; OUTPUT_DIM];
    for w in weights.iter_mut() {
        for v in w.iter_mut() {
            *v = sigma_w * wr.standard_normal();
        }
    }
    generate_with_weights(n, sigma_x, weights, sigma_eps, rng)
}

/// As [`generate`], with fixed weights.
pub fn generate_with_weights(
    n: usize,
    sigma_x: f64,
    weights: Weights,
    sigma_eps: f64,
    rng: &RngStream,
) -> Result<SyntheticDataset> {
    if n == 0 {
        return Err(Error::InvalidConfig("dataset size must be positive".into()));
    }
    check_scale("sigma_x", sigma_x, false)?;
    check_scale("sigma_eps", sigma_eps, true)?;
    let mut xr = rng.derive("latents", 0);
    let mut er = rng.derive("noise", 0);
    let mut latents_true = DMatrix::zeros(n, LATENT_DIM);
    let mut observations = DMatrix::zeros(n, OUTPUT_DIM);
    for i in 0..n {
        let x = [
            sigma_x * xr.standard_normal(),
            sigma_x * xr.standard_normal(),
        ];
        let f = noise_free_outputs(x, &weights);
        latents_true[(i, 0)] = x[0];
        latents_true[(i, 1)] = x[1];
        for (d, fd) in f.iter().enumerate() {
            let eps = er.standard_normal();
            observations[(i, d)] = fd + sigma_eps * eps;
        }
    }
    Ok(SyntheticDataset {
        latents_true,
        weights,
        observations,
        noise_variance: sigma_eps * sigma_eps,
        latent_std: sigma_x,
    })
}

pub fn split(data: &SyntheticDataset, n_train: usize) -> Result<Split> {
    if n_train == 0 || n_train >= data.len() {
        return Err(Error::InvalidConfig(format!(
            "n_train must be in [1, {}), got {n_train}",
            data.len()
        )));
    }
    Ok(Split {
        train: data.rows(0, n_train),
        test: data.rows(n_train, data.len() - n_train),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn noise_free_periodic_point() {
        let mut w = [[0.0; 2]; 4];
        w[2] = [FRAC_PI_2, 0.0];
        let y = noise_free_outputs([1.0, 0.0], &w);
        assert!((y[2] - 1.0).abs() < 1e-15);
        // boundary of the step goes to -1
        assert_eq!(y[3], -1.0);
    }

    #[test]
    fn noise_free_step_range() {
        let data = generate(500, 1.0, 1.0, 0.0, &RngStream::new(1)).unwrap();
        assert!(data
            .observations
            .column(3)
            .iter()
            .all(|&v| v == 1.0 || v == -1.0));
        for i in 0..data.len() {
            let x = [data.latents_true[(i, 0)], data.latents_true[(i, 1)]];
            let f = noise_free_outputs(x, &data.weights);
            for d in 0..4 {
                assert_eq!(data.observations[(i, d)], f[d]);
            }
        }
    }

    #[test]
    fn linear_output_variance() {
        let w1 = [0.8, -1.3];
        let weights = [w1, [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let data = generate_with_weights(100_000, 1.0, weights, 1.0, &RngStream::new(2)).unwrap();
        let col = data.observations.column(0);
        let m = col.mean();
        let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / col.len() as f64;
        let want = w1[0] * w1[0] + w1[1] * w1[1] + 1.0;
        assert!((var - want).abs() <= 0.05 * want, "{var} vs {want}");
    }

    #[test]
    fn column_means_within_standard_errors() {
        let data = generate(20_000, 1.0, 1.0, 1.0, &RngStream::new(3)).unwrap();
        let n = data.len() as f64;
        for d in [0, 3] {
            let col = data.observations.column(d);
            let m = col.mean();
            let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            assert!(m.abs() < 3.0 * sd / n.sqrt(), "dim {d}: mean {m}");
        }
    }

    #[test]
    fn reproducible() {
        let a = generate(50, 1.0, 1.0, 1.0, &RngStream::new(4)).unwrap();
        let b = generate(50, 1.0, 1.0, 1.0, &RngStream::new(4)).unwrap();
        assert_eq!(a, b);
        let c = generate(50, 1.0, 1.0, 1.0, &RngStream::new(5)).unwrap();
        assert_ne!(a.observations, c.observations);
    }

    #[test]
    fn invalid_params() {
        let r = RngStream::new(6);
        assert!(generate(0, 1.0, 1.0, 1.0, &r).is_err());
        assert!(generate(10, 0.0, 1.0, 1.0, &r).is_err());
        assert!(generate(10, 1.0, -1.0, 1.0, &r).is_err());
        assert!(generate(10, 1.0, 1.0, -0.1, &r).is_err());
    }

    #[test]
    fn split_sizes_and_partition() {
        let data = generate(1000, 1.0, 1.0, 1.0, &RngStream::new(7)).unwrap();
        let s = split(&data, 800).unwrap();
        assert_eq!(s.train.len(), 800);
        assert_eq!(s.test.len(), 200);
        let s = split(&data, 999).unwrap();
        assert_eq!(s.test.len(), 1);
        for i in 0..999 {
            assert_eq!(s.train.observations.row(i), data.observations.row(i));
        }
        assert_eq!(s.test.observations.row(0), data.observations.row(999));
        assert!(split(&data, 0).is_err());
        assert!(split(&data, 1000).is_err());
    }

    #[test]
    fn csv_headers() {
        let data = generate(3, 1.0, 1.0, 1.0, &RngStream::new(8)).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf, true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("row,x1_true,x2_true,y1,y2,y3,y4\n"));
        assert_eq!(text.lines().count(), 4);
        let mut buf = Vec::new();
        data.write_csv(&mut buf, false).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("row,y1,y2,y3,y4\n"));
    }
}
