//! Experiment orchestration: the leave-one-output-out protocol over trials
//! and feature counts, result tables, boxplot summaries and SVG figures.

mod config;
mod plot;
mod summary;

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::{sample_test_latents, train, ModelConfig};
use crate::numkit::RngStream;
use crate::rff::sample_basis;
use crate::synthgen::{self, OUTPUT_DIM};
use crate::uq::{report, UncertaintyReport};

pub use config::ExperimentConfig;
pub use plot::render_boxplots;
pub use summary::{
    quantile, read_summary_csv, summarize, summarize_rows, write_summary_csv, BoxStats,
    BoxplotSummary,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UncertaintyKind {
    Aleatoric,
    Epistemic,
}

impl UncertaintyKind {
    pub const ALL: [UncertaintyKind; 2] = [UncertaintyKind::Aleatoric, UncertaintyKind::Epistemic];

    pub fn as_str(self) -> &'static str {
        match self {
            UncertaintyKind::Aleatoric => "aleatoric",
            UncertaintyKind::Epistemic => "epistemic",
        }
    }
}

impl std::str::FromStr for UncertaintyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aleatoric" => Ok(UncertaintyKind::Aleatoric),
            "epistemic" => Ok(UncertaintyKind::Epistemic),
            other => Err(Error::Parse(format!("unknown uncertainty type '{other}'"))),
        }
    }
}

/// Test-set averages for one output dimension (taken over the test rows
/// where that dimension was the missing one).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimAverages {
    pub avg_aleatoric: f64,
    pub avg_epistemic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    #[serde(rename = "J")]
    pub num_features: usize,
    pub dims: Vec<DimAverages>,
}

/// One line of the results table; `dim` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub trial: usize,
    pub j: usize,
    pub dim: usize,
    pub kind: UncertaintyKind,
    pub value: f64,
}

impl TrialResult {
    pub fn value(&self, dim: usize, kind: UncertaintyKind) -> f64 {
        let d = &self.dims[dim];
        match kind {
            UncertaintyKind::Aleatoric => d.avg_aleatoric,
            UncertaintyKind::Epistemic => d.avg_epistemic,
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = ResultRow> + '_ {
        (0..self.dims.len()).flat_map(move |d| {
            UncertaintyKind::ALL.into_iter().map(move |kind| ResultRow {
                trial: self.trial,
                j: self.num_features,
                dim: d + 1,
                kind,
                value: self.value(d, kind),
            })
        })
    }
}

/// Everything produced for one `(trial, J)`: the averages and the
/// per-test-row reports they were computed from.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub result: TrialResult,
    /// `(test_row, report)` with one entry per row and missing dimension.
    pub reports: Vec<(usize, UncertaintyReport)>,
}

fn model_config(config: &ExperimentConfig, num_features: usize) -> ModelConfig {
    ModelConfig {
        d_y: OUTPUT_DIM,
        num_features,
        ..config.model.clone()
    }
}

/// Runs one trial at one feature count.
pub fn run_trial(
    config: &ExperimentConfig,
    trial: usize,
    num_features: usize,
) -> Result<TrialOutcome> {
    let root = RngStream::new(config.seed);
    let trial_rng = root.derive("trial", trial as u64);
    let data = synthgen::generate(
        config.n,
        config.sigma_x,
        config.sigma_w,
        config.sigma_eps,
        &trial_rng.derive("data", 0),
    )?;
    let split = synthgen::split(&data, config.n_train)?;

    let run_rng = trial_rng.derive("J", num_features as u64);
    let mcfg = model_config(config, num_features);
    let basis = sample_basis(
        mcfg.d_x,
        num_features,
        mcfg.lengthscale,
        &mut run_rng.derive("basis", 0),
    )?;
    let model = train(
        &split.train.observations,
        basis,
        &mcfg,
        &run_rng.derive("train", 0),
    )?;

    let test = &split.test.observations;
    let tasks: Vec<(usize, usize)> = (0..test.nrows())
        .flat_map(|r| (0..OUTPUT_DIM).map(move |d| (r, d)))
        .collect();
    let reports = tasks
        .par_iter()
        .map(|&(r, d)| {
            let obs_dims: Vec<usize> = (0..OUTPUT_DIM).filter(|&k| k != d).collect();
            let y_obs: Vec<f64> = obs_dims.iter().map(|&k| test[(r, k)]).collect();
            let stream = run_rng.derive("test", r as u64).derive("missing", d as u64);
            let draws = sample_test_latents(&model, &y_obs, &obs_dims, &mcfg, &stream)?;
            Ok((r, report(&model, &draws, &[d])?))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut sums = vec![(0.0, 0.0, 0usize); OUTPUT_DIM];
    for (_, rep) in &reports {
        for e in &rep.entries {
            let s = &mut sums[e.dim];
            s.0 += e.aleatoric;
            s.1 += e.epistemic_total;
            s.2 += 1;
        }
    }
    let dims = sums
        .into_iter()
        .map(|(a, e, n)| DimAverages {
            avg_aleatoric: a / n as f64,
            avg_epistemic: e / n as f64,
        })
        .collect();
    Ok(TrialOutcome {
        result: TrialResult {
            trial,
            num_features,
            dims,
        },
        reports,
    })
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

/// Runs every `(trial, J)` and keeps the per-row reports. Output order is
/// `(trial, J)` in configuration order, independent of `workers`.
pub fn run_experiment_detailed(
    config: &ExperimentConfig,
    workers: usize,
) -> Result<Vec<TrialOutcome>> {
    config.validate()?;
    let tasks: Vec<(usize, usize)> = (0..config.trials)
        .flat_map(|t| config.j_values.iter().map(move |&j| (t, j)))
        .collect();
    thread_pool(workers)?.install(|| {
        tasks
            .par_iter()
            .map(|&(t, j)| {
                run_trial(config, t, j).map_err(|e| Error::TrialFailed {
                    trial: t,
                    num_features: j,
                    source: Box::new(e),
                })
            })
            .collect()
    })
}

pub fn run_experiment(config: &ExperimentConfig, workers: usize) -> Result<Vec<TrialResult>> {
    Ok(run_experiment_detailed(config, workers)?
        .into_iter()
        .map(|o| o.result)
        .collect())
}

pub const RESULTS_HEADER: &str = "trial,j,dim,type,value";

/// Nine significant digits, scientific notation.
pub fn format_value(v: f64) -> String {
    format!("{v:.8e}")
}

fn sorted_rows(results: &[TrialResult]) -> Vec<ResultRow> {
    let mut rows: Vec<ResultRow> = results.iter().flat_map(TrialResult::rows).collect();
    rows.sort_by_key(|r| (r.trial, r.j, r.dim, r.kind));
    rows
}

/// Results table sorted by `(trial, j, dim, type)`.
pub fn write_results_csv<W: Write>(results: &[TrialResult], mut out: W) -> Result<()> {
    writeln!(out, "{RESULTS_HEADER}")?;
    for r in sorted_rows(results) {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.trial,
            r.j,
            r.dim,
            r.kind.as_str(),
            format_value(r.value)
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_results_json<W: Write>(results: &[TrialResult], out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, &sorted_rows(results))?;
    Ok(())
}

pub fn read_results_csv<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>().join(",") != RESULTS_HEADER {
        return Err(Error::Parse(format!(
            "unexpected results header: {:?}",
            header
        )));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let field = |i: usize| {
            rec.get(i)
                .ok_or_else(|| Error::Parse("short results row".into()))
        };
        let int = |i: usize| -> Result<usize> {
            field(i)?.parse().map_err(|e| Error::Parse(format!("{e}")))
        };
        rows.push(ResultRow {
            trial: int(0)?,
            j: int(1)?,
            dim: int(2)?,
            kind: field(3)?.parse()?,
            value: field(4)?
                .parse()
                .map_err(|e| Error::Parse(format!("{e}")))?,
        });
    }
    Ok(rows)
}

pub fn read_results_json<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    Ok(serde_json::from_reader(input)?)
}

/// Median across trials of one `(J, dim, kind)` cell; `dim` is 0-based.
pub fn median_over_trials(
    results: &[TrialResult],
    num_features: usize,
    dim: usize,
    kind: UncertaintyKind,
) -> Option<f64> {
    let mut vals: Vec<f64> = results
        .iter()
        .filter(|r| r.num_features == num_features)
        .map(|r| r.value(dim, kind))
        .collect();
    if vals.is_empty() {
        return None;
    }
    vals.sort_by(f64::total_cmp);
    Some(quantile(&vals, 0.5))
}
