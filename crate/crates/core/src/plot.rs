//! Static SVG charts built from report CSVs.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const W: f64 = 800.0;
const H: f64 = 500.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 6] = ["#222222", "#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e"];

fn header(w: f64, h: f64, title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        w / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let head = r.headers()?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
    Ok((head, rows))
}

fn column(head: &[String], name: &str) -> Result<usize> {
    head.iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Data(format!("missing column {name}")))
}

fn parse(s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Data(format!("not a number: {s:?}")))
}

/// One named series of optional values.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub values: Vec<Option<f64>>,
}

/// Ground truth and model estimates per axis, as read from a trace CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceData {
    pub frames: Vec<f64>,
    pub yaw: Vec<Series>,
    pub pitch: Vec<Series>,
}

pub fn read_trace(path: &Path) -> Result<TraceData> {
    let (head, rows) = read_csv(path)?;
    let fcol = column(&head, "frame")?;
    let frames = rows.iter().map(|r| parse(&r[fcol])).collect::<Result<_>>()?;
    let mut yaw = Vec::new();
    let mut pitch = Vec::new();
    for (c, name) in head.iter().enumerate() {
        let (axis, series) = if let Some(n) = name.strip_suffix("_yaw") {
            (&mut yaw, n)
        } else if let Some(n) = name.strip_suffix("_pitch") {
            (&mut pitch, n)
        } else {
            continue;
        };
        let values = rows
            .iter()
            .map(|r| if r[c].is_empty() { Ok(None) } else { parse(&r[c]).map(Some) })
            .collect::<Result<_>>()?;
        axis.push(Series {
            name: series.to_string(),
            values,
        });
    }
    if yaw.is_empty() {
        return Err(Error::Data(format!("{}: no *_yaw columns", path.display())));
    }
    Ok(TraceData { frames, yaw, pitch })
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    if hi - lo < 1e-9 {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

/// Line chart per axis: one polyline per series (ground truth first).
pub fn trace_svg(data: &TraceData) -> String {
    let mut svg = header(W, H, "Gaze trace");
    let panel_h = (H - 2.0 * MARGIN) / 2.0 - 10.0;
    let (x0, x1) = range(data.frames.iter().copied());
    for (p, (label, series)) in [("yaw (deg)", &data.yaw), ("pitch (deg)", &data.pitch)].iter().enumerate() {
        let top = MARGIN + p as f64 * (panel_h + 20.0);
        let (y0, y1) = range(series.iter().flat_map(|s| s.values.iter().flatten().copied()));
        let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
        let sy = |y: f64| top + panel_h - (y - y0) / (y1 - y0) * panel_h;
        let _ = writeln!(
            svg,
            "<rect x=\"{MARGIN}\" y=\"{top}\" width=\"{}\" height=\"{panel_h}\" fill=\"none\" stroke=\"#999\"/>",
            W - 2.0 * MARGIN
        );
        let _ = writeln!(
            svg,
            "<text x=\"15\" y=\"{}\" transform=\"rotate(-90 15 {})\" text-anchor=\"middle\">{label}</text>",
            top + panel_h / 2.0,
            top + panel_h / 2.0
        );
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{y1:.1}</text>", MARGIN - 4.0, top + 10.0);
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{y0:.1}</text>", MARGIN - 4.0, top + panel_h);
        for (k, s) in series.iter().enumerate() {
            let pts: Vec<String> = data
                .frames
                .iter()
                .zip(&s.values)
                .filter_map(|(&x, v)| v.map(|v| format!("{:.2},{:.2}", sx(x), sy(v))))
                .collect();
            let _ = writeln!(
                svg,
                "<polyline class=\"series\" data-series=\"{}\" data-axis=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"{}\" points=\"{}\"/>",
                escape(&s.name),
                if p == 0 { "yaw" } else { "pitch" },
                PALETTE[k % PALETTE.len()],
                if k == 0 { 2.0 } else { 1.2 },
                pts.join(" ")
            );
        }
    }
    for (k, s) in data.yaw.iter().enumerate() {
        let x = MARGIN + k as f64 * 140.0;
        let _ = writeln!(
            svg,
            "<rect x=\"{x}\" y=\"{}\" width=\"12\" height=\"4\" fill=\"{}\"/><text x=\"{}\" y=\"{}\">{}</text>",
            H - 22.0,
            PALETTE[k % PALETTE.len()],
            x + 16.0,
            H - 17.0,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImprovementRow {
    pub class: String,
    pub axis: String,
    pub improvement_deg: f64,
    pub sem: Option<f64>,
    pub ks_p: Option<f64>,
    pub n: usize,
}

pub fn read_improvement(path: &Path) -> Result<Vec<ImprovementRow>> {
    let (head, rows) = read_csv(path)?;
    let [c, a, i, s, k, n] = ["class", "axis", "improvement_deg", "sem", "ks_p", "n"].map(|h| column(&head, h));
    let (c, a, i, s, k, n) = (c?, a?, i?, s?, k?, n?);
    let opt = |v: &str| if v.is_empty() { Ok(None) } else { parse(v).map(Some) };
    rows.iter()
        .map(|r| {
            Ok(ImprovementRow {
                class: r[c].clone(),
                axis: r[a].clone(),
                improvement_deg: parse(&r[i])?,
                sem: opt(&r[s])?,
                ks_p: opt(&r[k])?,
                n: r[n].parse().map_err(|_| Error::Data(format!("bad count {:?}", r[n])))?,
            })
        })
        .collect()
}

fn stars(p: Option<f64>) -> &'static str {
    match p {
        Some(p) if p < 0.001 => "***",
        Some(p) if p < 0.01 => "**",
        Some(p) if p < 0.05 => "*",
        Some(_) => "n.s.",
        None => "",
    }
}

/// Grouped bars per movement class (yaw and pitch) with SEM whiskers and
/// KS significance markers.
pub fn improvement_svg(rows: &[ImprovementRow]) -> String {
    let mut svg = header(W, H, "Improvement of temporal over static model (deg)");
    let mut classes: Vec<&str> = Vec::new();
    for r in rows {
        if !classes.contains(&r.class.as_str()) {
            classes.push(&r.class);
        }
    }
    let (lo, hi) = range(
        rows.iter()
            .flat_map(|r| {
                let s = r.sem.unwrap_or(0.0);
                [r.improvement_deg - s, r.improvement_deg + s, 0.0]
            })
            .chain([0.0]),
    );
    let plot_h = H - 2.0 * MARGIN - 20.0;
    let sy = |v: f64| MARGIN + (hi - v) / (hi - lo) * plot_h;
    let group_w = (W - 2.0 * MARGIN) / classes.len().max(1) as f64;
    let bar_w = group_w * 0.35;
    let _ = writeln!(
        svg,
        "<line x1=\"{MARGIN}\" x2=\"{}\" y1=\"{y}\" y2=\"{y}\" stroke=\"#444\"/>",
        W - MARGIN,
        y = sy(0.0)
    );
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{hi:.2}</text>", MARGIN - 4.0, sy(hi) + 4.0);
    let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{lo:.2}</text>", MARGIN - 4.0, sy(lo));
    for (g, class) in classes.iter().enumerate() {
        let gx = MARGIN + g as f64 * group_w;
        for (b, axis) in ["yaw", "pitch"].iter().enumerate() {
            let Some(r) = rows.iter().find(|r| r.class == *class && r.axis == *axis) else {
                continue;
            };
            let x = gx + group_w * 0.12 + b as f64 * bar_w;
            let (top, bottom) = (sy(r.improvement_deg.max(0.0)), sy(r.improvement_deg.min(0.0)));
            let _ = writeln!(
                svg,
                "<rect class=\"bar\" data-class=\"{class}\" data-axis=\"{axis}\" x=\"{x:.2}\" y=\"{top:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>",
                bar_w * 0.9,
                (bottom - top).max(0.5),
                if b == 0 { "#1f77b4" } else { "#ff7f0e" }
            );
            let cx = x + bar_w * 0.45;
            if let Some(s) = r.sem {
                let (a, z) = (sy(r.improvement_deg + s), sy(r.improvement_deg - s));
                let _ = writeln!(
                    svg,
                    "<line class=\"sem\" x1=\"{cx:.2}\" x2=\"{cx:.2}\" y1=\"{a:.2}\" y2=\"{z:.2}\" stroke=\"black\"/>"
                );
            }
            let mark = stars(r.ks_p);
            if !mark.is_empty() {
                let y = sy(r.improvement_deg.max(0.0) + r.sem.unwrap_or(0.0)) - 4.0;
                let _ = writeln!(
                    svg,
                    "<text class=\"significance\" x=\"{cx:.2}\" y=\"{y:.2}\" text-anchor=\"middle\">{mark}</text>"
                );
            }
        }
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            gx + group_w / 2.0,
            H - MARGIN + 5.0,
            escape(class)
        );
    }
    let _ = writeln!(
        svg,
        "<rect x=\"{MARGIN}\" y=\"{y}\" width=\"12\" height=\"8\" fill=\"#1f77b4\"/><text x=\"{}\" y=\"{}\">yaw</text>\
         <rect x=\"{}\" y=\"{y}\" width=\"12\" height=\"8\" fill=\"#ff7f0e\"/><text x=\"{}\" y=\"{}\">pitch</text>",
        MARGIN + 16.0,
        H - 17.0,
        MARGIN + 70.0,
        MARGIN + 86.0,
        H - 17.0,
        y = H - 25.0
    );
    svg.push_str("</svg>\n");
    svg
}

pub fn read_gt_samples(path: &Path) -> Result<Vec<(f64, f64)>> {
    let (head, rows) = read_csv(path)?;
    let (y, p) = (column(&head, "yaw_deg")?, column(&head, "pitch_deg")?);
    rows.iter().map(|r| Ok((parse(&r[y])?, parse(&r[p])?))).collect()
}

/// 2D histogram of `bins x bins` cells over `±limit` degrees; samples
/// outside the range land in the edge cells. Row index is pitch (top =
/// highest), column is yaw.
pub fn histogram2d(samples: &[(f64, f64)], bins: usize, limit: f64) -> Vec<Vec<usize>> {
    let mut counts = vec![vec![0usize; bins]; bins];
    let cell = |v: f64| (((v + limit) / (2.0 * limit) * bins as f64).floor().max(0.0) as usize).min(bins - 1);
    for &(yaw, pitch) in samples {
        counts[bins - 1 - cell(pitch)][cell(yaw)] += 1;
    }
    counts
}

pub const DISTRIBUTION_BINS: usize = 30;
pub const DISTRIBUTION_LIMIT_DEG: f64 = 45.0;

/// Ground-truth gaze distribution as a shaded 2D histogram.
pub fn distribution_svg(samples: &[(f64, f64)]) -> String {
    let (bins, limit) = (DISTRIBUTION_BINS, DISTRIBUTION_LIMIT_DEG);
    let counts = histogram2d(samples, bins, limit);
    let max = counts.iter().flatten().copied().max().unwrap_or(0).max(1);
    let size = H - 2.0 * MARGIN;
    let cell = size / bins as f64;
    let x0 = (W - size) / 2.0;
    let mut svg = header(W, H, "Ground-truth gaze distribution");
    for (r, row) in counts.iter().enumerate() {
        for (c, &n) in row.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let shade = 255 - (n as f64 / max as f64 * 220.0).round() as u8;
            let _ = writeln!(
                svg,
                "<rect class=\"bin\" data-count=\"{n}\" x=\"{:.2}\" y=\"{:.2}\" width=\"{cell:.2}\" height=\"{cell:.2}\" fill=\"rgb({shade},{shade},255)\"/>",
                x0 + c as f64 * cell,
                MARGIN + r as f64 * cell
            );
        }
    }
    let _ = writeln!(
        svg,
        "<rect x=\"{x0}\" y=\"{MARGIN}\" width=\"{size}\" height=\"{size}\" fill=\"none\" stroke=\"#999\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">yaw (deg, -{limit}..{limit})</text>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"end\">pitch</text>",
        W / 2.0,
        H - MARGIN + 20.0,
        x0 - 6.0,
        MARGIN + size / 2.0
    );
    svg.push_str("</svg>\n");
    svg
}
