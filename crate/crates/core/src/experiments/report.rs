use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::Method;
use super::run::{ExperimentRecord, CSV_HEADER};
use crate::error::{Error, Result};

fn csv_error(e: &csv::Error) -> Error {
    match e.position() {
        Some(pos) => Error::Parse(format!("csv line {}: {e}", pos.line())),
        None => Error::Parse(format!("csv: {e}")),
    }
}

/// Parses the sweep CSV. Errors carry the 1-based line number.
pub fn parse_csv(text: &str) -> Result<Vec<ExperimentRecord>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| csv_error(&e))?;
    let expected: Vec<&str> = CSV_HEADER.split(',').collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse(format!(
            "csv line 1: unexpected header '{}'",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(|e| csv_error(&e)))
        .collect()
}

/// Type-7 (linear interpolation) quantile of ascending `sorted`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Statistics of one (η, σ, method) group over its finite PSNR values.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub eta: f64,
    pub sigma: f64,
    pub method: Method,
    /// Finite values only.
    pub n: usize,
    /// Records with `psnr = ±∞` or NaN.
    pub n_nonfinite: usize,
    pub n_unconverged: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Groups ordered by η ascending, σ descending, then method.
pub fn summarize(records: &[ExperimentRecord]) -> Vec<GroupSummary> {
    let mut groups: BTreeMap<(u64, std::cmp::Reverse<u64>, Method), Vec<&ExperimentRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.eta.to_bits(), std::cmp::Reverse(r.sigma.to_bits()), r.method))
            .or_default()
            .push(r);
    }
    groups
        .into_values()
        .map(|rs| {
            let mut vals: Vec<f64> = rs.iter().map(|r| r.psnr).filter(|v| v.is_finite()).collect();
            vals.sort_by(f64::total_cmp);
            let n = vals.len();
            let mean = if n == 0 { f64::NAN } else { vals.iter().sum::<f64>() / n as f64 };
            let std = if n < 2 {
                0.0
            } else {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            };
            let q = |p| if n == 0 { f64::NAN } else { quantile(&vals, p) };
            GroupSummary {
                eta: rs[0].eta,
                sigma: rs[0].sigma,
                method: rs[0].method,
                n,
                n_nonfinite: rs.len() - n,
                n_unconverged: rs.iter().filter(|r| !r.converged).count(),
                mean,
                std,
                min: q(0.0),
                q1: q(0.25),
                median: q(0.5),
                q3: q(0.75),
                max: q(1.0),
            }
        })
        .collect()
}

/// Markdown table of mean ± std PSNR per (η, σ, method).
pub fn summary_table(groups: &[GroupSummary]) -> String {
    let mut out = String::from("| eta | sigma | method | n | PSNR mean ± std (dB) | median | non-finite | unconverged |\n");
    out.push_str("|---|---|---|---|---|---|---|---|\n");
    for g in groups {
        let _ = writeln!(
            out,
            "| {} | {:e} | {} | {} | {:.2} ± {:.2} | {:.2} | {} | {} |",
            g.eta, g.sigma, g.method, g.n, g.mean, g.std, g.median, g.n_nonfinite, g.n_unconverged
        );
    }
    out
}

fn color(method: Method) -> &'static str {
    match method {
        Method::L2 => "#4c72b0",
        Method::Latent => "#dd8452",
        Method::Laplace => "#55a868",
        Method::Guide => "#c44e52",
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 130.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

struct Frame {
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
}

impl Frame {
    fn new(x_lo: f64, x_hi: f64, ys: impl Iterator<Item = f64>) -> Self {
        let (mut y_lo, mut y_hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if !y_lo.is_finite() {
            (y_lo, y_hi) = (0.0, 1.0);
        }
        let pad = ((y_hi - y_lo) * 0.05).max(0.5);
        let (x_lo, x_hi) = if x_hi > x_lo { (x_lo, x_hi) } else { (x_lo - 0.5, x_lo + 0.5) };
        Self {
            x_lo,
            x_hi,
            y_lo: y_lo - pad,
            y_hi: y_hi + pad,
        }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x_lo) / (self.x_hi - self.x_lo) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y_lo) / (self.y_hi - self.y_lo) * (HEIGHT - TOP - BOTTOM)
    }

    fn axes(&self, out: &mut String, title: &str, x_label: &str) {
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{title}</text>"#, WIDTH / 2.0);
        let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
        let _ = writeln!(out, r#"<path d="M{x0},{y0} L{x0},{y1} L{x1},{y1}" stroke="black" fill="none"/>"#);
        for k in 0..=5 {
            let v = self.y_lo + (self.y_hi - self.y_lo) * k as f64 / 5.0;
            let y = self.py(v);
            let _ = writeln!(
                out,
                r##"<line x1="{x0}" y1="{y:.1}" x2="{x1}" y2="{y:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{v:.1}</text>"##,
                x0 - 6.0,
                y + 4.0
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#,
            (x0 + x1) / 2.0,
            HEIGHT - 12.0
        );
        let _ = writeln!(
            out,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">PSNR (dB)</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0
        );
    }
}

fn legend(out: &mut String, methods: &[Method]) {
    for (i, m) in methods.iter().enumerate() {
        let y = TOP + 10.0 + 20.0 * i as f64;
        let x = WIDTH - RIGHT + 15.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{}" width="14" height="10" fill="{}"/><text x="{}" y="{y}">{m}</text>"#,
            y - 9.0,
            color(*m),
            x + 20.0
        );
    }
}

fn present_methods(groups: &[&GroupSummary]) -> Vec<Method> {
    let mut ms: Vec<Method> = groups.iter().map(|g| g.method).collect();
    ms.sort();
    ms.dedup();
    ms
}

/// Mean PSNR against `−log₁₀ σ`, one line per method present at this η.
pub fn line_chart_svg(groups: &[GroupSummary], eta: f64) -> String {
    let here: Vec<&GroupSummary> = groups.iter().filter(|g| g.eta == eta).collect();
    let methods = present_methods(&here);
    let xs: Vec<f64> = here.iter().map(|g| -g.sigma.log10()).collect();
    let x_lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let x_hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let frame = Frame::new(x_lo, x_hi, here.iter().map(|g| g.mean).filter(|v| v.is_finite()));
    let mut out = String::new();
    frame.axes(&mut out, &format!("mean PSNR, eta = {eta}"), "-log10(sigma)");
    let mut ticks: Vec<f64> = xs.clone();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for t in ticks {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{t}</text>"#,
            frame.px(t),
            HEIGHT - BOTTOM + 16.0
        );
    }
    for m in &methods {
        let mut pts: Vec<(f64, f64)> = here
            .iter()
            .filter(|g| g.method == *m && g.mean.is_finite())
            .map(|g| (-g.sigma.log10(), g.mean))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.1},{:.1}", frame.px(*x), frame.py(*y))).collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" stroke="{}" stroke-width="2" fill="none"/>"#,
            path.join(" "),
            color(*m)
        );
        for (x, y) in pts {
            let _ = writeln!(out, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{}"/>"#, frame.px(x), frame.py(y), color(*m));
        }
    }
    legend(&mut out, &methods);
    out.push_str("</svg>\n");
    out
}

/// Box plots (type-7 quartiles, whiskers at min/max) per σ and method.
pub fn box_plot_svg(groups: &[GroupSummary], eta: f64) -> String {
    let here: Vec<&GroupSummary> = groups.iter().filter(|g| g.eta == eta && g.n > 0).collect();
    let methods = present_methods(&here);
    let mut sigmas: Vec<f64> = here.iter().map(|g| g.sigma).collect();
    sigmas.sort_by(|a, b| b.total_cmp(a));
    sigmas.dedup();
    let slots = sigmas.len().max(1) as f64;
    let frame = Frame::new(0.0, slots, here.iter().flat_map(|g| [g.min, g.max]));
    let mut out = String::new();
    frame.axes(&mut out, &format!("PSNR distribution, eta = {eta}"), "sigma");
    let slot_px = (WIDTH - LEFT - RIGHT) / slots;
    let box_w = slot_px * 0.8 / methods.len().max(1) as f64;
    for (i, sigma) in sigmas.iter().enumerate() {
        let centre = frame.px(i as f64 + 0.5);
        let _ = writeln!(
            out,
            r#"<text x="{centre:.1}" y="{}" text-anchor="middle">{sigma:e}</text>"#,
            HEIGHT - BOTTOM + 16.0
        );
        for (j, m) in methods.iter().enumerate() {
            let Some(g) = here.iter().find(|g| g.sigma == *sigma && g.method == *m) else {
                continue;
            };
            let x = centre - slot_px * 0.4 + box_w * j as f64;
            let mid = x + box_w / 2.0;
            let c = color(*m);
            let _ = writeln!(
                out,
                r#"<line x1="{mid:.1}" y1="{:.1}" x2="{mid:.1}" y2="{:.1}" stroke="{c}"/>"#,
                frame.py(g.min),
                frame.py(g.max)
            );
            let _ = writeln!(
                out,
                r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{c}" fill-opacity="0.5" stroke="{c}"/>"#,
                x + 1.0,
                frame.py(g.q3),
                (box_w - 2.0).max(1.0),
                (frame.py(g.q1) - frame.py(g.q3)).max(0.5)
            );
            let _ = writeln!(
                out,
                r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black" stroke-width="2"/>"#,
                x + 1.0,
                frame.py(g.median),
                x + box_w - 1.0,
                frame.py(g.median)
            );
        }
    }
    legend(&mut out, &methods);
    out.push_str("</svg>\n");
    out
}

#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub summary: PathBuf,
    pub charts: Vec<PathBuf>,
}

fn eta_tag(eta: f64) -> String {
    format!("{eta}").replace('.', "p")
}

/// Reads a sweep CSV and writes `summary.md` plus one line chart and one
/// box-plot SVG per η into `out_dir`.
pub fn write_report(csv_path: impl AsRef<Path>, out_dir: impl AsRef<Path>) -> Result<ReportFiles> {
    let records = parse_csv(&std::fs::read_to_string(csv_path)?)?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let groups = summarize(&records);
    let summary = out_dir.join("summary.md");
    std::fs::write(&summary, summary_table(&groups))?;
    let mut etas: Vec<f64> = groups.iter().map(|g| g.eta).collect();
    etas.sort_by(f64::total_cmp);
    etas.dedup();
    let mut charts = Vec::new();
    for eta in etas {
        let line = out_dir.join(format!("psnr_eta{}.svg", eta_tag(eta)));
        std::fs::write(&line, line_chart_svg(&groups, eta))?;
        let boxes = out_dir.join(format!("box_eta{}.svg", eta_tag(eta)));
        std::fs::write(&boxes, box_plot_svg(&groups, eta))?;
        charts.extend([line, boxes]);
    }
    Ok(ReportFiles { summary, charts })
}
