//! Output files. Every file carries the manifest hash.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::space::{Field, Space};
use crate::stepper::RunLog;

pub const CSV_HEADER: &str = "step,t,l2_error,energy,mass,newton_iters";

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#7f7f7f",
];

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn finish(path: &Path, res: std::io::Result<()>, w: BufWriter<File>) -> Result<()> {
    res.and_then(|_| w.into_inner().map_err(|e| e.into_error()).map(|_| ()))
        .map_err(|e| Error::io(path, e))
}

pub fn write_log_csv<W: Write>(mut w: W, log: &RunLog, hash: &str) -> std::io::Result<()> {
    writeln!(w, "# manifest_hash={hash}")?;
    writeln!(w, "{CSV_HEADER}")?;
    for r in &log.rows {
        writeln!(w, "{},{},{},{},{},{}", r.step, r.t, r.l2_error, r.energy, r.mass, r.newton_iters)?;
    }
    Ok(())
}

pub fn save_log_csv(path: &Path, log: &RunLog, hash: &str) -> Result<()> {
    let mut w = create(path)?;
    let res = write_log_csv(&mut w, log, hash);
    finish(path, res, w)
}

/// Vertical axis of a line plot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Linear,
    Log10,
}

/// One polyline per series; non-finite points (and non-positive ones on a
/// log axis) are skipped.
pub fn write_svg_plot<W: Write>(
    mut w: W,
    title: &str,
    y_label: &str,
    axis: Axis,
    series: &[(&str, Vec<(f64, f64)>)],
    hash: &str,
) -> std::io::Result<()> {
    let (width, height) = (720.0, 440.0);
    let (left, right, top, bottom) = (70.0, 170.0, 40.0, 50.0);
    let map_y = |y: f64| match axis {
        Axis::Linear => Some(y).filter(|v| v.is_finite()),
        Axis::Log10 => Some(y).filter(|v| v.is_finite() && *v > 0.0).map(f64::log10),
    };
    let pts: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|(_, s)| s.iter().filter(|p| p.0.is_finite()).filter_map(|&(x, y)| map_y(y).map(|y| (x, y))).collect())
        .collect();
    let all = pts.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if axis == Axis::Log10 {
        y0 = y0.floor();
        y1 = y1.ceil();
    }
    if x1 - x0 <= 0.0 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 <= 0.0 {
        y1 = y0 + 1.0;
    }
    let pw = width - left - right;
    let ph = height - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + (y1 - y) / (y1 - y0) * ph;

    writeln!(w, r#"<?xml version="1.0" encoding="UTF-8"?>"#)?;
    writeln!(w, "<!-- manifest_hash={hash} -->")?;
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    )?;
    writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
    writeln!(w, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, left + pw / 2.0, escape(title))?;
    writeln!(w, r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##)?;
    let ticks: Vec<f64> = match axis {
        Axis::Log10 => {
            let span = (y1 - y0) as usize;
            let stride = span.div_ceil(8).max(1);
            (0..=span).step_by(stride).map(|k| y0 + k as f64).collect()
        }
        Axis::Linear => (0..=5).map(|k| y0 + (y1 - y0) * k as f64 / 5.0).collect(),
    };
    for y in ticks {
        let label = match axis {
            Axis::Log10 => format!("1e{}", y as i64),
            Axis::Linear => format!("{y:.4}"),
        };
        writeln!(w, r##"<line x1="{left}" x2="{0}" y1="{1}" y2="{1}" stroke="#ddd"/>"##, left + pw, sy(y))?;
        writeln!(w, r#"<text x="{}" y="{}" text-anchor="end">{label}</text>"#, left - 6.0, sy(y) + 4.0)?;
    }
    for k in 0..=5 {
        let x = x0 + (x1 - x0) * k as f64 / 5.0;
        writeln!(w, r#"<text x="{}" y="{}" text-anchor="middle">{x:.3}</text>"#, sx(x), top + ph + 18.0)?;
    }
    writeln!(w, r#"<text x="{}" y="{}" text-anchor="middle">t</text>"#, left + pw / 2.0, height - 10.0)?;
    writeln!(
        w,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        top + ph / 2.0,
        escape(y_label)
    )?;
    for (i, ((name, _), p)) in series.iter().zip(&pts).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = p.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        writeln!(
            w,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"><title>{}</title></polyline>"#,
            coords.join(" "),
            escape(name)
        )?;
        let ly = top + 14.0 + 18.0 * i as f64;
        writeln!(w, r#"<line x1="{0}" x2="{1}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, left + pw + 10.0, left + pw + 30.0)?;
        writeln!(w, r#"<text x="{}" y="{}">{}</text>"#, left + pw + 36.0, ly + 4.0, escape(name))?;
    }
    writeln!(w, "</svg>")
}

pub fn save_svg_plot(
    path: &Path,
    title: &str,
    y_label: &str,
    axis: Axis,
    series: &[(&str, Vec<(f64, f64)>)],
    hash: &str,
) -> Result<()> {
    let mut w = create(path)?;
    let res = write_svg_plot(&mut w, title, y_label, axis, series, hash);
    finish(path, res, w)
}

pub fn save_vtk(path: &Path, space: &Space, title: &str, hash: &str, fields: &[(&str, &Field)]) -> Result<()> {
    let mut w = create(path)?;
    let res = space.write_vtk(&mut w, &format!("{title} manifest_hash={hash}"), fields);
    finish(path, res, w)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
