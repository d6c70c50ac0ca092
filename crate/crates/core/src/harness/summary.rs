use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{format_value, ResultRow, TrialResult, UncertaintyKind};
use crate::error::{Error, Result};

pub const SUMMARY_HEADER: &str = "j,dim,type,min,q1,median,q3,max,n_outliers";

/// Quantile of sorted data at position `q * (n - 1)`, linearly
/// interpolated. `sorted` must be nonempty and ascending.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    /// Lower whisker: smallest non-outlier value.
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    /// Upper whisker: largest non-outlier value.
    pub max: f64,
    pub n_outliers: usize,
    /// Outlying values in ascending order. Empty when read back from a
    /// summary CSV, which only stores the count.
    pub outliers: Vec<f64>,
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("boxplot values"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("boxplot values"));
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q1 = quantile(&v, 0.25);
        let median = quantile(&v, 0.5);
        let q3 = quantile(&v, 0.75);
        let iqr = q3 - q1;
        let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let (inside, outliers): (Vec<f64>, Vec<f64>) = v.iter().partition(|&&x| x >= lo && x <= hi);
        // the box itself always sits inside the whiskers
        let min = inside.first().copied().unwrap_or(q1).min(q1);
        let max = inside.last().copied().unwrap_or(q3).max(q3);
        Ok(Self {
            min,
            q1,
            median,
            q3,
            max,
            n_outliers: outliers.len(),
            outliers,
        })
    }
}

/// Statistics of one `(J, dim, type)` group across trials; `dim` is 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotSummary {
    pub j: usize,
    pub dim: usize,
    pub kind: UncertaintyKind,
    pub stats: BoxStats,
}

pub fn summarize(results: &[TrialResult]) -> Result<Vec<BoxplotSummary>> {
    let rows: Vec<ResultRow> = results.iter().flat_map(TrialResult::rows).collect();
    summarize_rows(&rows)
}

/// Groups rows by `(J, dim, type)`; output sorted by that key.
pub fn summarize_rows(rows: &[ResultRow]) -> Result<Vec<BoxplotSummary>> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("results"));
    }
    let mut groups: BTreeMap<(usize, usize, UncertaintyKind), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.j, r.dim, r.kind))
            .or_default()
            .push(r.value);
    }
    groups
        .into_iter()
        .map(|((j, dim, kind), values)| {
            Ok(BoxplotSummary {
                j,
                dim,
                kind,
                stats: BoxStats::from_values(&values)?,
            })
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(summaries: &[BoxplotSummary], mut out: W) -> Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    for s in summaries {
        let b = &s.stats;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            s.j,
            s.dim,
            s.kind.as_str(),
            format_value(b.min),
            format_value(b.q1),
            format_value(b.median),
            format_value(b.q3),
            format_value(b.max),
            b.n_outliers
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_summary_csv<R: Read>(input: R) -> Result<Vec<BoxplotSummary>> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .clone();
    if header.iter().collect::<Vec<_>>().join(",") != SUMMARY_HEADER {
        return Err(Error::Parse(format!(
            "unexpected summary header: {header:?}"
        )));
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        if rec.len() != 9 {
            return Err(Error::Parse(format!(
                "summary row has {} fields",
                rec.len()
            )));
        }
        let f =
            |i: usize| -> Result<f64> { rec[i].parse().map_err(|e| Error::Parse(format!("{e}"))) };
        let u = |i: usize| -> Result<usize> {
            rec[i].parse().map_err(|e| Error::Parse(format!("{e}")))
        };
        out.push(BoxplotSummary {
            j: u(0)?,
            dim: u(1)?,
            kind: rec[2].parse()?,
            stats: BoxStats {
                min: f(3)?,
                q1: f(4)?,
                median: f(5)?,
                q3: f(6)?,
                max: f(7)?,
                n_outliers: u(8)?,
                outliers: Vec::new(),
            },
        });
    }
    Ok(out)
}
