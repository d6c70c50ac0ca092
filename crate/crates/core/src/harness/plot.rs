use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{BoxplotSummary, UncertaintyKind};
use crate::error::{Error, Result};

const PANEL_W: f64 = 240.0;
const PANEL_H: f64 = 260.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;
const GAP: f64 = 30.0;

/// Writes `<dir>/<type>.svg` for each uncertainty type present: one panel
/// per output dimension, one box per feature count. Returns the paths in
/// type order.
pub fn render_boxplots(summaries: &[BoxplotSummary], dir: &Path) -> Result<Vec<PathBuf>> {
    if summaries.is_empty() {
        return Err(Error::EmptyInput("boxplot summaries"));
    }
    let mut written = Vec::new();
    for kind in UncertaintyKind::ALL {
        let group: Vec<&BoxplotSummary> = summaries.iter().filter(|s| s.kind == kind).collect();
        if group.is_empty() {
            continue;
        }
        let svg = render_kind(kind, &group);
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}.svg", kind.as_str()));
        std::fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

fn render_kind(kind: UncertaintyKind, group: &[&BoxplotSummary]) -> String {
    let dims: Vec<usize> = group
        .iter()
        .map(|s| s.dim)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let js: Vec<usize> = group
        .iter()
        .map(|s| s.j)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let width = MARGIN_L + dims.len() as f64 * (PANEL_W + GAP);
    let height = MARGIN_T + PANEL_H + MARGIN_B;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="11">"#,
        fmt(width),
        fmt(height)
    );
    let _ = writeln!(
        s,
        r#"<rect class="background" x="0" y="0" width="{}" height="{}" fill="white"/>"#,
        fmt(width),
        fmt(height)
    );

    for (p, &dim) in dims.iter().enumerate() {
        let x0 = MARGIN_L + p as f64 * (PANEL_W + GAP);
        let items: Vec<&&BoxplotSummary> = group.iter().filter(|b| b.dim == dim).collect();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for b in &items {
            let st = &b.stats;
            lo = lo.min(st.min);
            hi = hi.max(st.max);
            for &o in &st.outliers {
                lo = lo.min(o);
                hi = hi.max(o);
            }
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.05 * (hi - lo);
        let (lo, hi) = (lo - pad, hi + pad);
        let y = |v: f64| MARGIN_T + PANEL_H * (hi - v) / (hi - lo);

        let _ = writeln!(
            s,
            r#"<rect class="panel" x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            fmt(x0),
            fmt(MARGIN_T),
            fmt(PANEL_W),
            fmt(PANEL_H)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{} y{}</text>"#,
            fmt(x0 + PANEL_W / 2.0),
            fmt(MARGIN_T - 12.0),
            kind.as_str(),
            dim
        );
        for tick in 0..=4 {
            let v = lo + (hi - lo) * tick as f64 / 4.0;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#,
                fmt(x0 - 4.0),
                fmt(y(v) + 4.0),
                v
            );
        }

        let slot = PANEL_W / js.len() as f64;
        let bw = slot * 0.5;
        for (k, &j) in js.iter().enumerate() {
            let cx = x0 + slot * (k as f64 + 0.5);
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
                fmt(cx),
                fmt(MARGIN_T + PANEL_H + 16.0),
                j
            );
            let Some(b) = items.iter().find(|b| b.j == j) else {
                continue;
            };
            let st = &b.stats;
            let _ = writeln!(
                s,
                r#"<line class="whisker" x1="{c}" y1="{}" x2="{c}" y2="{}" stroke="black"/>"#,
                fmt(y(st.max)),
                fmt(y(st.q3)),
                c = fmt(cx)
            );
            let _ = writeln!(
                s,
                r#"<line class="whisker" x1="{c}" y1="{}" x2="{c}" y2="{}" stroke="black"/>"#,
                fmt(y(st.q1)),
                fmt(y(st.min)),
                c = fmt(cx)
            );
            let _ = writeln!(
                s,
                r#"<rect class="box" x="{}" y="{}" width="{}" height="{}" fill="lightsteelblue" stroke="black"/>"#,
                fmt(cx - bw / 2.0),
                fmt(y(st.q3)),
                fmt(bw),
                fmt((y(st.q1) - y(st.q3)).max(0.5))
            );
            let _ = writeln!(
                s,
                r#"<line class="median" x1="{}" y1="{m}" x2="{}" y2="{m}" stroke="black" stroke-width="2"/>"#,
                fmt(cx - bw / 2.0),
                fmt(cx + bw / 2.0),
                m = fmt(y(st.median))
            );
            for &o in &st.outliers {
                let _ = writeln!(
                    s,
                    r#"<circle class="outlier" cx="{}" cy="{}" r="3" fill="none" stroke="black"/>"#,
                    fmt(cx),
                    fmt(y(o))
                );
            }
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">number of random features</text>"#,
        fmt(width / 2.0),
        fmt(height - 10.0)
    );
    s.push_str("</svg>\n");
    s
}
