//! CSV, JSON and SVG output for study results.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::single_mode::{reference_table, SingleModeReport};
use crate::BenchError;

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, BenchError> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{name}.json"));
    fs::write(&path, serde_json::to_string_pretty(value)?)?;
    Ok(path)
}

pub fn write_text(dir: &Path, file: &str, text: &str) -> Result<PathBuf, BenchError> {
    fs::create_dir_all(dir)?;
    let path = dir.join(file);
    fs::write(&path, text)?;
    Ok(path)
}

/// One row per variant and noise level, with the reference value alongside.
pub fn table_csv(report: &SingleModeReport) -> String {
    let refs = reference_table();
    let mut out = String::from("variant,noise_pct,success_pct,reference_pct\n");
    for row in &report.table {
        let r = refs.iter().find(|(v, _)| *v == row.variant).map(|(_, r)| r);
        for (n, s) in &row.success {
            let reference = match (r, [0.0, 5.0, 30.0].iter().position(|x| x == n)) {
                (Some(r), Some(i)) => format!("{}", r[i]),
                _ => String::new(),
            };
            let _ = writeln!(out, "{},{},{:.2},{}", row.variant.label(), n, s, reference);
        }
    }
    out
}

pub fn curve_csv(report: &SingleModeReport) -> String {
    let mut out = String::from("variant,noise_pct,cuts,mean,median,q25,q75\n");
    for c in &report.curves {
        for p in &c.points {
            let _ = writeln!(
                out,
                "{},{},{},{:.2},{:.2},{:.2},{:.2}",
                c.variant.label(),
                c.noise,
                p.cuts,
                p.mean,
                p.median,
                p.q25,
                p.q75
            );
        }
    }
    out
}

const COLORS: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];

/// Median success against cut budget with an interquartile band per series.
pub fn curve_svg(report: &SingleModeReport) -> String {
    let (w, h, m) = (640.0, 400.0, 50.0);
    let max_cuts = report.curves.iter().flat_map(|c| c.points.iter().map(|p| p.cuts)).max().unwrap_or(1).max(1) as f64;
    let lo = report
        .curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.q25))
        .fold(100.0, f64::min)
        .min(90.0)
        .floor();
    let sx = |c: f64| m + (w - 2.0 * m) * c / max_cuts;
    let sy = |s: f64| h - m - (h - 2.0 * m) * (s - lo) / (100.0 - lo).max(1e-9);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let _ = writeln!(svg, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<path d=\"M{m} {m} V{} H{}\" stroke=\"black\" fill=\"none\"/>",
        h - m,
        w - m
    );
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">cuts</text>", w / 2.0, h - 10.0);
    let _ = writeln!(svg, "<text x=\"12\" y=\"{}\" transform=\"rotate(-90 12 {})\" text-anchor=\"middle\">success (%)</text>", h / 2.0, h / 2.0);
    for (k, label) in [(lo, format!("{lo}")), (100.0, "100".to_string())] {
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{label}</text>", m - 4.0, sy(k) + 4.0);
    }
    for c in 0..=max_cuts as usize {
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{c}</text>", sx(c as f64), h - m + 16.0);
    }
    for (i, series) in report.curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let upper: Vec<String> = series.points.iter().map(|p| format!("{:.1},{:.1}", sx(p.cuts as f64), sy(p.q75))).collect();
        let lower: Vec<String> = series.points.iter().rev().map(|p| format!("{:.1},{:.1}", sx(p.cuts as f64), sy(p.q25))).collect();
        let _ = writeln!(
            svg,
            "<polygon points=\"{} {}\" fill=\"{color}\" fill-opacity=\"0.15\" stroke=\"none\"/>",
            upper.join(" "),
            lower.join(" ")
        );
        let line: Vec<String> = series.points.iter().map(|p| format!("{:.1},{:.1}", sx(p.cuts as f64), sy(p.median))).collect();
        let _ = writeln!(svg, "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>", line.join(" "));
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{} {}%</text>",
            w - m - 110.0,
            m + 14.0 * (i as f64 + 1.0),
            series.variant.label(),
            series.noise
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes the table and curve as CSV, the full report as JSON and the curve
/// as SVG.
pub fn write_single_mode(dir: &Path, report: &SingleModeReport) -> Result<Vec<PathBuf>, BenchError> {
    Ok(vec![
        write_json(dir, "single_mode", report)?,
        write_text(dir, "single_mode_table.csv", &table_csv(report))?,
        write_text(dir, "cuts_curve.csv", &curve_csv(report))?,
        write_text(dir, "cuts_curve.svg", &curve_svg(report))?,
    ])
}
