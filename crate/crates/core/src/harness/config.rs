use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::ModelConfig;
use crate::synthgen::{LATENT_DIM, OUTPUT_DIM};

/// Protocol settings plus the model hyperparameters shared by every run.
/// `model.num_features` is ignored; each run takes its count from
/// `j_values`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n: usize,
    pub n_train: usize,
    pub trials: usize,
    pub j_values: Vec<usize>,
    pub sigma_x: f64,
    pub sigma_w: f64,
    pub sigma_eps: f64,
    pub seed: u64,
    pub model: ModelConfig,
}

const KEYS: [&str; 19] = [
    "n",
    "n_train",
    "trials",
    "j_values",
    "m",
    "l",
    "d_x",
    "lengthscale",
    "alpha",
    "noise_a0",
    "noise_b0",
    "outer_iters",
    "latent_step",
    "latent_iters",
    "restarts",
    "sigma_x",
    "sigma_w",
    "sigma_eps",
    "seed",
];

impl Default for ExperimentConfig {
    /// Full-scale protocol: 1000 points, 50 trials, six feature counts. The
    /// feature map needs an even count, so 26 stands in for 25.
    fn default() -> Self {
        Self {
            n: 1000,
            n_train: 800,
            trials: 50,
            j_values: vec![10, 26, 50, 100, 200, 500],
            sigma_x: 1.0,
            sigma_w: 1.0,
            sigma_eps: 1.0,
            seed: 0,
            model: ModelConfig {
                d_x: LATENT_DIM,
                d_y: OUTPUT_DIM,
                ..ModelConfig::default()
            },
        }
    }
}

impl ExperimentConfig {
    /// Reduced run that finishes in minutes.
    pub fn desk() -> Self {
        let mut c = Self {
            n: 200,
            n_train: 160,
            trials: 10,
            j_values: vec![10, 50, 100],
            ..Self::default()
        };
        c.model.posterior_samples = 20;
        c.model.test_samples = 20;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be >= 1".into()));
        }
        if self.n_train == 0 || self.n_train >= self.n {
            return Err(Error::InvalidConfig(format!(
                "n_train must be in [1, n), got n_train={} n={}",
                self.n_train, self.n
            )));
        }
        if self.j_values.is_empty() {
            return Err(Error::InvalidConfig("j_values must be nonempty".into()));
        }
        let mut seen = self.j_values.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.j_values.len() {
            return Err(Error::InvalidConfig("j_values contains duplicates".into()));
        }
        for &j in &self.j_values {
            ModelConfig {
                num_features: j,
                d_y: OUTPUT_DIM,
                ..self.model.clone()
            }
            .validate()?;
        }
        for (name, v) in [("sigma_x", self.sigma_x), ("sigma_w", self.sigma_w)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.sigma_eps.is_finite() && self.sigma_eps >= 0.0) {
            return Err(Error::InvalidConfig("sigma_eps must be nonnegative".into()));
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are skipped.
    pub fn apply_overrides(mut self, text: &str) -> Result<Self> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            self.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::Parse(msg) => Error::Parse(format!("line {}: {msg}", lineno + 1)),
                other => other,
            })?;
        }
        Ok(self)
    }

    pub fn from_path(path: &Path, base: Self) -> Result<Self> {
        base.apply_overrides(&std::fs::read_to_string(path)?)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        match key {
            "n" => self.n = num(key, value)?,
            "n_train" => self.n_train = num(key, value)?,
            "trials" => self.trials = num(key, value)?,
            "j_values" => {
                self.j_values = value
                    .split(',')
                    .map(|v| num(key, v.trim()))
                    .collect::<Result<_>>()?
            }
            "m" => m.posterior_samples = num(key, value)?,
            "l" => m.test_samples = num(key, value)?,
            "d_x" => m.d_x = num(key, value)?,
            "lengthscale" => m.lengthscale = num(key, value)?,
            "alpha" => m.prior.alpha = num(key, value)?,
            "noise_a0" => m.prior.a0 = num(key, value)?,
            "noise_b0" => m.prior.b0 = num(key, value)?,
            "outer_iters" => m.outer_iters = num(key, value)?,
            "latent_step" => m.latent_step = num(key, value)?,
            "latent_iters" => m.latent_iters = num(key, value)?,
            "restarts" => m.restarts = num(key, value)?,
            "sigma_x" => self.sigma_x = num(key, value)?,
            "sigma_w" => self.sigma_w = num(key, value)?,
            "sigma_eps" => self.sigma_eps = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            other => return Err(Error::Parse(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Config-file text that parses back to the same settings.
    pub fn to_config_string(&self) -> String {
        let m = &self.model;
        let js: Vec<String> = self.j_values.iter().map(|j| j.to_string()).collect();
        let values = [
            self.n.to_string(),
            self.n_train.to_string(),
            self.trials.to_string(),
            js.join(","),
            m.posterior_samples.to_string(),
            m.test_samples.to_string(),
            m.d_x.to_string(),
            m.lengthscale.to_string(),
            m.prior.alpha.to_string(),
            m.prior.a0.to_string(),
            m.prior.b0.to_string(),
            m.outer_iters.to_string(),
            m.latent_step.to_string(),
            m.latent_iters.to_string(),
            m.restarts.to_string(),
            self.sigma_x.to_string(),
            self.sigma_w.to_string(),
            self.sigma_eps.to_string(),
            self.seed.to_string(),
        ];
        let mut out = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Parse(format!("{key}: cannot parse '{value}': {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ExperimentConfig::default().validate().unwrap();
        ExperimentConfig::desk().validate().unwrap();
    }

    #[test]
    fn parses_all_keys() {
        let text = "n = 50\nn_train=40\n# comment\ntrials = 3\nj_values = 10, 20\nm = 4\nl = 5\n\
                    d_x = 2\nlengthscale = 0.5\nalpha = 2\nnoise_a0 = 3\nnoise_b0 = 0.5\n\
                    outer_iters = 7\nlatent_step = 0.1\nlatent_iters = 8\nrestarts = 2\n\
                    sigma_x = 1.5\nsigma_w = 0.5\nsigma_eps = 0.25\nseed = 99\n";
        let c = ExperimentConfig::default().apply_overrides(text).unwrap();
        assert_eq!((c.n, c.n_train, c.trials), (50, 40, 3));
        assert_eq!(c.j_values, vec![10, 20]);
        assert_eq!((c.model.posterior_samples, c.model.test_samples), (4, 5));
        assert_eq!(c.model.lengthscale, 0.5);
        assert_eq!(
            (c.model.prior.alpha, c.model.prior.a0, c.model.prior.b0),
            (2.0, 3.0, 0.5)
        );
        assert_eq!(
            (c.model.outer_iters, c.model.latent_iters, c.model.restarts),
            (7, 8, 2)
        );
        assert_eq!(
            (c.sigma_x, c.sigma_w, c.sigma_eps, c.seed),
            (1.5, 0.5, 0.25, 99)
        );
        let again = ExperimentConfig::desk()
            .apply_overrides(&c.to_config_string())
            .unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = ExperimentConfig::default()
            .apply_overrides("median = 1\n")
            .unwrap_err();
        assert!(err.to_string().contains("unknown key"));
        assert!(ExperimentConfig::default()
            .apply_overrides("n 5\n")
            .is_err());
        assert!(ExperimentConfig::default()
            .apply_overrides("n = x\n")
            .is_err());
    }

    #[test]
    fn invalid_configs() {
        let mut c = ExperimentConfig::desk();
        c.j_values = vec![10, 15];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::desk();
        c.j_values.clear();
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::desk();
        c.n_train = c.n;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::desk();
        c.trials = 0;
        assert!(c.validate().is_err());
    }
}
