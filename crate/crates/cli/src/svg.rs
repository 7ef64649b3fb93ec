//! Minimal self-contained SVG line charts.

use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            label: label.into(),
            points,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Step curves in `[0, 1]` against a linear ratio axis.
    Profile,
    /// Speedup against batch size, with the `y = m` guide.
    Speedup,
    /// Samples to ε against `α₀`, log-log.
    TimeVsStep,
    /// Gap against iteration, log-log.
    Trace,
}

impl PlotKind {
    fn log_axes(self) -> (bool, bool) {
        match self {
            PlotKind::Profile | PlotKind::Speedup => (false, false),
            PlotKind::TimeVsStep | PlotKind::Trace => (true, true),
        }
    }

    fn labels(self) -> (&'static str, &'static str) {
        match self {
            PlotKind::Profile => ("performance ratio r", "fraction of experiments"),
            PlotKind::Speedup => ("minibatch size m", "speedup"),
            PlotKind::TimeVsStep => ("initial stepsize", "samples to epsilon"),
            PlotKind::Trace => ("iteration k", "optimality gap"),
        }
    }
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        if log {
            (lo, hi) = (lo.floor(), hi.ceil());
        }
        Self { lo, hi, log }
    }

    fn frac(&self, v: f64) -> Option<f64> {
        if !v.is_finite() || (self.log && v <= 0.0) {
            return None;
        }
        let v = if self.log { v.log10() } else { v };
        Some((v - self.lo) / (self.hi - self.lo))
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let step = ((self.hi - self.lo) / 8.0).ceil().max(1.0);
            let mut t = self.lo;
            let mut out = Vec::new();
            while t <= self.hi + 1e-9 {
                out.push(((t - self.lo) / (self.hi - self.lo), format!("1e{}", t as i64)));
                t += step;
            }
            out
        } else {
            (0..=5)
                .map(|i| {
                    let v = self.lo + (self.hi - self.lo) * i as f64 / 5.0;
                    (i as f64 / 5.0, format!("{}", (v * 100.0).round() / 100.0))
                })
                .collect()
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the chart as an SVG document.
pub fn render_svg(series: &[Series], kind: PlotKind, title: &str) -> String {
    let (xlog, ylog) = kind.log_axes();
    let all = || series.iter().flat_map(|s| s.points.iter());
    let x = Axis::fit(all().map(|p| p.0), xlog);
    let y = match kind {
        PlotKind::Profile => Axis {
            lo: 0.0,
            hi: 1.0,
            log: false,
        },
        PlotKind::Speedup => Axis::fit(all().map(|p| p.1).chain(all().map(|p| p.0)).chain([0.0]), false),
        _ => Axis::fit(all().map(|p| p.1), ylog),
    };
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let px = |v: f64| x.frac(v).map(|f| LEFT + f * pw);
    let py = |v: f64| y.frac(v).map(|f| TOP + (1.0 - f) * ph);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, escape(title));
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for (f, label) in x.ticks() {
        let gx = LEFT + f * pw;
        let _ = writeln!(s, r##"<line x1="{gx:.1}" y1="{TOP}" x2="{gx:.1}" y2="{:.1}" stroke="#ddd"/>"##, TOP + ph);
        let _ = writeln!(s, r#"<text x="{gx:.1}" y="{:.1}" text-anchor="middle">{label}</text>"#, TOP + ph + 16.0);
    }
    for (f, label) in y.ticks() {
        let gy = TOP + (1.0 - f) * ph;
        let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{gy:.1}" x2="{:.1}" y2="{gy:.1}" stroke="#ddd"/>"##, LEFT + pw);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{label}</text>"#, LEFT - 6.0, gy + 4.0);
    }
    let (xl, yl) = kind.labels();
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xl}</text>"#, LEFT + pw / 2.0, H - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{yl}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );

    if kind == PlotKind::Speedup {
        let (a, b) = (x.lo.max(y.lo), x.hi.min(y.hi));
        if let (Some(x1), Some(y1), Some(x2), Some(y2)) = (px(a), py(a), px(b), py(b)) {
            let _ = writeln!(
                s,
                r##"<line class="reference" x1="{x1:.1}" y1="{y1:.1}" x2="{x2:.1}" y2="{y2:.1}" stroke="#888" stroke-dasharray="6 4"/>"##
            );
        }
    }

    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut pts: Vec<(f64, f64)> = Vec::new();
        let mut prev_y: Option<f64> = None;
        for &(vx, vy) in &ser.points {
            let (Some(sx), Some(sy)) = (px(vx), py(vy)) else { continue };
            if kind == PlotKind::Profile {
                // Horizontal run at the previous level, then the jump.
                let base = prev_y.unwrap_or(TOP + ph);
                pts.push((sx, base));
                prev_y = Some(sy);
            }
            pts.push((sx, sy));
        }
        if kind == PlotKind::Profile {
            if let Some(last) = prev_y {
                pts.push((LEFT + pw, last));
            }
        }
        let coords: Vec<String> = pts.iter().map(|(a, b)| format!("{a:.1},{b:.1}")).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.8" points="{}"/>"#,
            coords.join(" ")
        );
        let ly = TOP + 14.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&ser.label));
    }
    s.push_str("</svg>\n");
    s
}

pub fn emit_svg(series: &[Series], path: &Path, kind: PlotKind, title: &str) -> anyhow::Result<()> {
    if series.iter().all(|s| s.points.is_empty()) {
        anyhow::bail!("nothing to plot for {}", path.display());
    }
    std::fs::write(path, render_svg(series, kind, title))?;
    Ok(())
}
