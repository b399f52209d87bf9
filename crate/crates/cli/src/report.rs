//! Evaluation tables, per-step curves and minimal SVG line charts.

use std::fs::OpenOptions;
use std::path::Path;

use masc_core::eval::{CurvePoint, EvalResult, MeanStd};
use masc_core::metrics::{paired_t_test, MetricSet};

use crate::error::{io_err, Result};

/// One evaluated (method, restoration flag) combination.
pub struct EvalRow {
    pub policy: String,
    pub with_mar: bool,
    pub result: EvalResult,
}

impl EvalRow {
    pub fn label(&self) -> String {
        format!("{}{}", self.policy, if self.with_mar { "+mar" } else { "" })
    }
}

type MetricFn = fn(&MetricSet) -> f64;

const METRICS: [(&str, MetricFn); 5] =
    [("ssim", |m| m.ssim), ("psnr", |m| m.psnr), ("mse", |m| m.mse), ("nmse", |m| m.nmse), ("mae", |m| m.mae)];

type CurveFn = fn(&CurvePoint) -> f64;

pub const CURVE_METRICS: [(&str, CurveFn); 3] = [("ssim", |p| p.ssim), ("mse", |p| p.mse), ("quality", |p| p.quality)];

pub fn table_header() -> Vec<String> {
    let mut h = vec!["policy".to_string(), "mar".into(), "samples".into()];
    for (name, _) in METRICS {
        h.push(format!("{name}_mean"));
        h.push(format!("{name}_std"));
    }
    h.extend(["reference".into(), "p_ssim".into(), "p_mse".into()]);
    h
}

fn p_value(a: &EvalRow, b: &EvalRow, f: MetricFn) -> String {
    let xa: Vec<f64> = a.result.final_metrics.iter().map(f).collect();
    let xb: Vec<f64> = b.result.final_metrics.iter().map(f).collect();
    match paired_t_test(&xa, &xb) {
        Ok(t) if t.p.is_finite() => format!("{:.6e}", t.p),
        _ => String::new(),
    }
}

/// Table rows; p-values compare each row to `reference` evaluated with the same restoration flag.
pub fn table_rows(rows: &[EvalRow], reference: &str) -> Vec<Vec<String>> {
    rows.iter()
        .map(|row| {
            let mut out = vec![row.policy.clone(), if row.with_mar { "yes" } else { "no" }.into(), row.result.final_metrics.len().to_string()];
            for (_, f) in METRICS {
                let MeanStd { mean, std } = row.result.metric(f);
                out.push(format!("{mean:.6}"));
                out.push(format!("{std:.6}"));
            }
            let reference_row = rows.iter().find(|r| r.policy == reference && r.with_mar == row.with_mar);
            match reference_row {
                Some(r) if r.policy != row.policy => {
                    out.push(r.label());
                    out.push(p_value(row, r, |m| m.ssim));
                    out.push(p_value(row, r, |m| m.mse));
                }
                _ => out.extend([String::new(), String::new(), String::new()]),
            }
            out
        })
        .collect()
}

/// Appends rows to a table CSV, writing the header when the file is new or empty.
pub fn append_table(path: &Path, rows: &[EvalRow], reference: &str) -> Result<()> {
    let fresh = std::fs::metadata(path).map_or(true, |m| m.len() == 0);
    let file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(table_header())?;
    }
    for r in table_rows(rows, reference) {
        w.write_record(&r)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Per-step mean and standard deviation of every curve metric.
pub fn write_curves(path: &Path, rows: &[EvalRow], initial_lines: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["policy".to_string(), "mar".into(), "lines".into()];
    for (name, _) in CURVE_METRICS {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_std"));
    }
    w.write_record(&header)?;
    for row in rows {
        let summaries: Vec<Vec<MeanStd>> = CURVE_METRICS.iter().map(|(_, f)| row.result.curve_summary(f)).collect();
        for t in 0..summaries[0].len() {
            let mut rec = vec![row.policy.clone(), if row.with_mar { "yes" } else { "no" }.into(), (initial_lines + t).to_string()];
            for s in &summaries {
                rec.push(format!("{:.6}", s[t].mean));
                rec.push(format!("{:.6}", s[t].std));
            }
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Line chart of mean curves: x = acquired lines, one polyline per series.
pub fn svg_chart(title: &str, series: &[(String, Vec<f64>)], first_x: usize) -> String {
    let (width, height, margin) = (640.0, 400.0, 50.0);
    let values = series.iter().flat_map(|(_, v)| v.iter().copied()).filter(|v| v.is_finite());
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (lo.min(0.0), lo.max(0.0) + 1.0) };
    let n = series.iter().map(|(_, v)| v.len()).max().unwrap_or(1).max(2);
    let px = |i: usize| margin + (width - 2.0 * margin) * i as f64 / (n - 1) as f64;
    let py = |v: f64| height - margin - (height - 2.0 * margin) * (v - lo) / (hi - lo);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    s += &format!("<text x=\"{}\" y=\"20\" text-anchor=\"middle\">{title}</text>\n", width / 2.0);
    s += &format!(
        "<polyline points=\"{margin},{margin} {margin},{b} {r},{b}\" fill=\"none\" stroke=\"black\"/>\n",
        b = height - margin,
        r = width - margin
    );
    s += &format!("<text x=\"{margin}\" y=\"{}\" text-anchor=\"end\">{lo:.4}</text>\n", height - margin);
    s += &format!("<text x=\"{margin}\" y=\"{}\" text-anchor=\"end\">{hi:.4}</text>\n", margin);
    s += &format!("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{first_x}</text>\n", px(0), height - margin + 16.0);
    s += &format!("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", px(n - 1), height - margin + 16.0, first_x + n - 1);
    s += &format!("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">acquired lines</text>\n", width / 2.0, height - 12.0);
    for (k, (name, v)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let points: Vec<String> = v.iter().enumerate().map(|(i, &y)| format!("{:.2},{:.2}", px(i), py(y))).collect();
        s += &format!("<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n", points.join(" "));
        s += &format!("<text x=\"{}\" y=\"{}\" fill=\"{color}\">{name}</text>\n", width - margin + 4.0 - 120.0, margin + 14.0 * k as f64);
    }
    s + "</svg>\n"
}

/// One chart per curve metric, named `curves_<metric>.svg`.
pub fn write_charts(dir: &Path, rows: &[EvalRow], initial_lines: usize) -> Result<()> {
    for (name, f) in CURVE_METRICS {
        let series: Vec<(String, Vec<f64>)> =
            rows.iter().map(|r| (r.label(), r.result.curve_summary(f).iter().map(|m| m.mean).collect())).collect();
        let path = dir.join(format!("curves_{name}.svg"));
        std::fs::write(&path, svg_chart(name, &series, initial_lines)).map_err(io_err(&path))?;
    }
    Ok(())
}
