//! Cross-household analysis of fitted coefficients: per-variable summaries
//! with 95% significance tallies, pairwise-complete Pearson correlation
//! matrices with t-test marks, and scatter data.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::batch::FitRecord;
use crate::choice_set::BRAND_PREFIX;
use crate::error::{Error, Result};
use crate::logit::{FitFlag, Significance};
use crate::scalar::Scalar;

/// Cross-household statistics of one coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub variable: String,
    pub mean: f64,
    pub se_of_mean: f64,
    pub sd: f64,
    pub pct_sig_pos: f64,
    pub pct_sig_neg: f64,
    /// Households contributing a finite, non-divergent value.
    pub n_households: usize,
    pub n_divergent: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoefficientSummary {
    pub rows: Vec<SummaryRow>,
}

fn is_brand(variable: &str) -> bool {
    variable.starts_with(BRAND_PREFIX)
}

/// Brand dummies only count for households measured against the market
/// reference.
fn contributes(record: &FitRecord, variable: &str) -> bool {
    record.skipped.is_none() && !(is_brand(variable) && record.flags.contains(&FitFlag::LocalBase))
}

/// Mean and sample standard deviation (n - 1 denominator).
pub fn mean_sd<T: Scalar>(values: &[T]) -> (T, T) {
    let n = T::of(values.len() as f64);
    let mean = values.iter().copied().sum::<T>() / n;
    let ss: T = values.iter().map(|&v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - T::one())).sqrt())
}

pub fn summarize_coefficients(records: &[FitRecord], variables: &[String]) -> CoefficientSummary {
    let mut rows = Vec::new();
    for variable in variables {
        let mut values = Vec::new();
        let (mut pos, mut neg, mut divergent) = (0usize, 0usize, 0usize);
        for r in records.iter().filter(|r| contributes(r, variable)) {
            let Some(c) = r.coefficient(variable) else { continue };
            if c.divergent {
                divergent += 1;
                continue;
            }
            values.push(c.coefficient);
            match c.significance {
                Significance::Positive => pos += 1,
                Significance::Negative => neg += 1,
                Significance::None => {}
            }
        }
        if values.is_empty() && divergent == 0 {
            log::warn!("variable {variable} appears in no fit; omitted from summary");
            continue;
        }
        let n = values.len();
        let (mean, sd) = if n == 0 { (f64::NAN, f64::NAN) } else { mean_sd(&values) };
        let pct = |k: usize| if n == 0 { f64::NAN } else { 100.0 * k as f64 / n as f64 };
        rows.push(SummaryRow {
            variable: variable.clone(),
            mean,
            se_of_mean: sd / (n as f64).sqrt(),
            sd,
            pct_sig_pos: pct(pos),
            pct_sig_neg: pct(neg),
            n_households: n,
            n_divergent: divergent,
        });
    }
    CoefficientSummary { rows }
}

fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        "NA".into()
    }
}

pub const SUMMARY_HEADER: [&str; 6] = ["variable", "mean", "se_of_mean", "sd", "pct_sig_pos", "pct_sig_neg"];

/// Writes the five summary statistics per variable.
pub fn write_summary<W: Write>(sink: W, summary: &CoefficientSummary) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(SUMMARY_HEADER)?;
    for r in &summary.rows {
        w.write_record([
            r.variable.clone(),
            fmt_num(r.mean),
            fmt_num(r.se_of_mean),
            fmt_num(r.sd),
            fmt_num(r.pct_sig_pos),
            fmt_num(r.pct_sig_neg),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<summary>", e))?;
    Ok(())
}

/// Household counts behind each summary row.
pub fn write_summary_counts<W: Write>(sink: W, summary: &CoefficientSummary) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["variable", "n_households", "n_divergent"])?;
    for r in &summary.rows {
        w.write_record([r.variable.clone(), r.n_households.to_string(), r.n_divergent.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<summary counts>", e))?;
    Ok(())
}

/// Per-household values of one variable.
pub type Series = BTreeMap<String, f64>;

/// Non-divergent coefficients per variable, keyed by household.
pub fn coefficient_series(records: &[FitRecord], variables: &[String]) -> Vec<(String, Series)> {
    variables
        .iter()
        .map(|v| {
            let series = records
                .iter()
                .filter(|r| contributes(r, v))
                .filter_map(|r| {
                    r.coefficient(v)
                        .filter(|c| !c.divergent && c.coefficient.is_finite())
                        .map(|c| (r.household_id.clone(), c.coefficient))
                })
                .collect();
            (v.clone(), series)
        })
        .collect()
}

/// Pearson correlation; `None` when fewer than two points or either
/// series is constant.
pub fn pearson<T: Scalar>(x: &[T], y: &[T]) -> Option<T> {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < 2 {
        return None;
    }
    let nf = T::of(n as f64);
    let mx = x.iter().copied().sum::<T>() / nf;
    let my = y.iter().copied().sum::<T>() / nf;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if sxx <= T::zero() || syy <= T::zero() {
        return None;
    }
    let r = sxy / (sxx.sqrt() * syy.sqrt());
    Some(r.max(-T::one()).min(T::one()))
}

/// Two-sided t-test of zero correlation at the 95% level.
pub fn correlation_significant(r: f64, n: usize) -> bool {
    if n < 3 || !r.is_finite() {
        return false;
    }
    let df = (n - 2) as f64;
    if r.abs() >= 1.0 {
        return true;
    }
    let t = r.abs() * (df / (1.0 - r * r)).sqrt();
    let critical = StudentsT::new(0.0, 1.0, df)
        .expect("df > 0")
        .inverse_cdf(0.975);
    t > critical
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    /// `None` where fewer than three households overlap or a series is
    /// constant on the overlap.
    pub r: Vec<Vec<Option<f64>>>,
    pub significant: Vec<Vec<bool>>,
    /// Pairwise-complete household counts.
    pub n: Vec<Vec<usize>>,
}

impl CorrelationMatrix {
    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.labels.iter().position(|l| l == a)?;
        let j = self.labels.iter().position(|l| l == b)?;
        self.r[i][j]
    }
}

/// Pairwise-complete Pearson correlations between labelled series.
pub fn correlate(vectors: &[(String, Series)]) -> CorrelationMatrix {
    let k = vectors.len();
    let mut r = vec![vec![None; k]; k];
    let mut significant = vec![vec![false; k]; k];
    let mut n = vec![vec![0usize; k]; k];
    for i in 0..k {
        r[i][i] = Some(1.0);
        n[i][i] = vectors[i].1.len();
        significant[i][i] = n[i][i] >= 3;
        for j in 0..i {
            let (a, b) = (&vectors[i].1, &vectors[j].1);
            let (x, y): (Vec<f64>, Vec<f64>) =
                a.iter().filter_map(|(id, &va)| b.get(id).map(|&vb| (va, vb))).unzip();
            let count = x.len();
            let rij = if count >= 3 { pearson(&x, &y) } else { None };
            let sig = rij.is_some_and(|v| correlation_significant(v, count));
            for (p, q) in [(i, j), (j, i)] {
                r[p][q] = rij;
                significant[p][q] = sig;
                n[p][q] = count;
            }
        }
    }
    CorrelationMatrix { labels: vectors.iter().map(|v| v.0.clone()).collect(), r, significant, n }
}

/// Full square matrix; significant cells carry a `^a` suffix and
/// unavailable cells read `NA`.
pub fn write_correlations<W: Write>(sink: W, m: &CorrelationMatrix) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["variable".to_owned()];
    header.extend(m.labels.iter().cloned());
    w.write_record(&header)?;
    for i in 0..m.dim() {
        let mut rec = vec![m.labels[i].clone()];
        for j in 0..m.dim() {
            rec.push(match m.r[i][j] {
                Some(v) if m.significant[i][j] => format!("{v:.4}^a"),
                Some(v) => format!("{v:.4}"),
                None => "NA".into(),
            });
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<correlations>", e))?;
    Ok(())
}

/// Reads a wide table whose first column is the household id; every other
/// column becomes a series. Blank or `NA` cells are missing.
pub fn read_series_table<R: Read>(source: R) -> Result<Vec<(String, Series)>> {
    let mut reader = csv::Reader::from_reader(source);
    let headers = reader.headers()?.clone();
    if headers.len() < 2 {
        return Err(Error::Invalid("table needs an id column and at least one value column".into()));
    }
    let mut out: Vec<(String, Series)> = headers.iter().skip(1).map(|h| (h.trim().to_owned(), Series::new())).collect();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let id = row.get(0).unwrap_or("").trim().to_owned();
        for (k, (name, series)) in out.iter_mut().enumerate() {
            let cell = row.get(k + 1).unwrap_or("").trim();
            if cell.is_empty() || cell == "NA" {
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::Row { line, reason: format!("bad value `{cell}` in column {name}") })?;
            series.insert(id.clone(), v);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterPoint {
    pub household_id: String,
    pub x: f64,
    pub y: f64,
}

/// One point per household holding non-divergent values of both variables.
pub fn scatter_data(records: &[FitRecord], var_x: &str, var_y: &str) -> Result<Vec<ScatterPoint>> {
    let series = coefficient_series(records, &[var_x.to_owned(), var_y.to_owned()]);
    let (xs, ys) = (&series[0].1, &series[1].1);
    let points: Vec<ScatterPoint> = xs
        .iter()
        .filter_map(|(id, &x)| ys.get(id).map(|&y| ScatterPoint { household_id: id.clone(), x, y }))
        .collect();
    if points.is_empty() {
        return Err(Error::Invalid(format!("no household has both `{var_x}` and `{var_y}`")));
    }
    Ok(points)
}

pub fn write_points<W: Write>(sink: W, var_x: &str, var_y: &str, points: &[ScatterPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["household_id", var_x, var_y])?;
    for p in points {
        w.write_record([p.household_id.clone(), p.x.to_string(), p.y.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<points>", e))?;
    Ok(())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    if span <= 0.0 {
        (lo - 1.0, hi + 1.0)
    } else {
        (lo - 0.05 * span, hi + 0.05 * span)
    }
}

/// Static SVG scatterplot with ticked, labelled axes.
pub fn render_scatter_svg(points: &[ScatterPoint], x_label: &str, y_label: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const LEFT: f64 = 70.0;
    const RIGHT: f64 = 20.0;
    const TOP: f64 = 30.0;
    const BOTTOM: f64 = 60.0;
    let (x0, x1) = padded_range(points.iter().map(|p| p.x));
    let (y0, y1) = padded_range(points.iter().map(|p| p.y));
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * (W - LEFT - RIGHT);
    let sy = |y: f64| H - BOTTOM - (y - y0) / (y1 - y0) * (H - TOP - BOTTOM);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let (bx, by) = (H - BOTTOM, LEFT);
    let _ = writeln!(svg, r#"<line x1="{LEFT}" y1="{bx}" x2="{}" y2="{bx}" stroke="black"/>"#, W - RIGHT);
    let _ = writeln!(svg, r#"<line x1="{by}" y1="{TOP}" x2="{by}" y2="{bx}" stroke="black"/>"#);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(svg, r#"<line x1="{px:.2}" y1="{bx}" x2="{px:.2}" y2="{}" stroke="black"/>"#, bx + 5.0);
        let _ = writeln!(svg, r#"<text x="{px:.2}" y="{}" text-anchor="middle">{xv:.2}</text>"#, bx + 20.0);
        let _ = writeln!(svg, r#"<line x1="{}" y1="{py:.2}" x2="{by}" y2="{py:.2}" stroke="black"/>"#, by - 5.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{:.2}" text-anchor="end">{yv:.2}</text>"#, by - 8.0, py + 4.0);
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + (W - LEFT - RIGHT) / 2.0,
        H - 15.0,
        escape(x_label)
    );
    let cy = TOP + (H - TOP - BOTTOM) / 2.0;
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{cy:.2}" text-anchor="middle" transform="rotate(-90 18 {cy:.2})">{}</text>"#,
        escape(y_label)
    );
    for p in points {
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="steelblue" fill-opacity="0.6"/>"#,
            sx(p.x),
            sy(p.y)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
