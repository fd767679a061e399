//! Self-contained SVG line plots of sweep results: a metric against the
//! search interval for each arrival rate, with interquartile shading, and
//! the optimal values against the arrival rate.

use crate::allocation::{LaneOpening, PolicyKind};
use crate::experiment::{AggregateCell, Optimum, Summary};
use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Mtt,
    Mql,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Mtt => "mtt",
            Metric::Mql => "mql",
        }
    }

    fn axis_label(&self) -> &'static str {
        match self {
            Metric::Mtt => "mean task time [s]",
            Metric::Mql => "max queue length",
        }
    }

    fn of(&self, c: &AggregateCell) -> Option<Summary> {
        match self {
            Metric::Mtt => c.mtt(),
            Metric::Mql => c.mql(),
        }
    }
}

fn color(p: PolicyKind) -> &'static str {
    match p {
        PolicyKind::Rs => "#000000",
        PolicyKind::Is => "#d62728",
        PolicyKind::Fs => "#1f4fd6",
    }
}

/// RS dashes, IS circles, FS down-pointing triangles.
fn marker(p: PolicyKind, x: f64, y: f64) -> String {
    let c = color(p);
    match p {
        PolicyKind::Rs => format!(
            r#"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{c}" stroke-width="2.5"/>"#,
            x - 6.0,
            x + 6.0
        ),
        PolicyKind::Is => {
            format!(r#"<circle cx="{x:.1}" cy="{y:.1}" r="4.5" fill="none" stroke="{c}" stroke-width="1.5"/>"#)
        }
        PolicyKind::Fs => format!(
            r#"<polygon points="{:.1},{:.1} {:.1},{:.1} {x:.1},{:.1}" fill="none" stroke="{c}" stroke-width="1.5"/>"#,
            x - 5.0,
            y - 4.0,
            x + 5.0,
            y - 4.0,
            y + 5.0
        ),
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Round tick spacing giving about five ticks over `span`.
fn tick_step(span: f64) -> f64 {
    let raw = (span / 5.0).max(1e-12);
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag)
}

fn format_tick(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round())
    } else {
        format!("{v:.2}").trim_end_matches('0').to_string()
    }
}

struct Series {
    policy: PolicyKind,
    /// (x, mean, q25, q75)
    points: Vec<(f64, f64, f64, f64)>,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(series: &[Series]) -> Frame {
        let pts = series.iter().flat_map(|s| s.points.iter());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &(x, m, lo, hi) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(m.min(lo));
            y1 = y1.max(m.max(hi));
        }
        if x1 - x0 < 1e-9 {
            x0 -= 1.0;
            x1 += 1.0;
        }
        let pad = ((y1 - y0) * 0.08).max(0.5);
        Frame { x0, x1, y0: (y0 - pad).max(0.0), y1: y1 + pad }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn render(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let f = Frame::fit(series);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#, (LEFT + W - RIGHT) / 2.0, escape(title));

    // Axes and ticks.
    let (bx0, bx1, by0, by1) = (f.px(f.x0), f.px(f.x1), f.py(f.y0), f.py(f.y1));
    let _ = writeln!(s, r##"<rect x="{bx0:.1}" y="{by1:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#444"/>"##, bx1 - bx0, by0 - by1);
    let xs = tick_step(f.x1 - f.x0);
    let mut t = (f.x0 / xs).ceil() * xs;
    while t <= f.x1 + 1e-9 {
        let x = f.px(t);
        let _ = writeln!(s, r##"<line x1="{x:.1}" y1="{by0:.1}" x2="{x:.1}" y2="{:.1}" stroke="#444"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"##, by0 + 5.0, by0 + 19.0, format_tick(t));
        t += xs;
    }
    let ys = tick_step(f.y1 - f.y0);
    let mut t = (f.y0 / ys).ceil() * ys;
    while t <= f.y1 + 1e-9 {
        let y = f.py(t);
        let _ = writeln!(s, r##"<line x1="{:.1}" y1="{y:.1}" x2="{bx0:.1}" y2="{y:.1}" stroke="#444"/><line x1="{bx0:.1}" y1="{y:.1}" x2="{bx1:.1}" y2="{y:.1}" stroke="#eee"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"##, bx0 - 5.0, bx0 - 8.0, y + 4.0, format_tick(t));
        t += ys;
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, (bx0 + bx1) / 2.0, H - 12.0, escape(x_label));
    let _ = writeln!(s, r#"<text transform="translate(18 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#, (by0 + by1) / 2.0, escape(y_label));

    for se in series {
        let c = color(se.policy);
        // Interquartile band.
        let mut band: Vec<String> = se.points.iter().map(|p| format!("{:.1},{:.1}", f.px(p.0), f.py(p.3))).collect();
        band.extend(se.points.iter().rev().map(|p| format!("{:.1},{:.1}", f.px(p.0), f.py(p.2))));
        let _ = writeln!(s, r#"<polygon points="{}" fill="{c}" fill-opacity="0.15" stroke="none"/>"#, band.join(" "));
        let line: Vec<String> = se.points.iter().map(|p| format!("{:.1},{:.1}", f.px(p.0), f.py(p.1))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#, line.join(" "));
        for p in &se.points {
            let _ = writeln!(s, "{}", marker(se.policy, f.px(p.0), f.py(p.1)));
        }
    }
    // Legend.
    for (n, se) in series.iter().enumerate() {
        let y = TOP + 15.0 + n as f64 * 20.0;
        let x = W - RIGHT + 20.0;
        let _ = writeln!(s, "{}", marker(se.policy, x, y));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, x + 14.0, y + 4.0, se.policy.as_str().to_uppercase());
    }
    s.push_str("</svg>\n");
    s
}

/// Metric against delta_p at one arrival rate and lane mode, one series
/// per policy. `None` when no cell has a value for the metric.
pub fn metric_plot(cells: &[AggregateCell], metric: Metric, mean_interarrival: f64, lanes: LaneOpening) -> Option<String> {
    let mut series = Vec::new();
    for policy in PolicyKind::ALL {
        let mut points: Vec<(f64, f64, f64, f64)> = cells
            .iter()
            .filter(|c| c.policy == policy && c.lanes == lanes && c.mean_interarrival == mean_interarrival)
            .filter_map(|c| metric.of(c).map(|m| (c.delta_p as f64, m.mean, m.q25, m.q75)))
            .collect();
        if points.is_empty() {
            continue;
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        series.push(Series { policy, points });
    }
    if series.is_empty() {
        return None;
    }
    let title = format!("{}, 1/\u{3bb} = {} s, {}", metric.name().to_uppercase(), mean_interarrival, lanes.label());
    Some(render(&title, "search interval \u{394}p", metric.axis_label(), &series))
}

/// Optimal value against 1/lambda for one lane mode, one series per
/// policy. The band collapses to the line.
pub fn optimum_plot(optima: &[Optimum], metric: Metric, lanes: LaneOpening) -> Option<String> {
    let mut series = Vec::new();
    for policy in PolicyKind::ALL {
        let mut points: Vec<(f64, f64, f64, f64)> = optima
            .iter()
            .filter(|o| o.policy == policy && o.lanes == lanes)
            .filter_map(|o| {
                let v = match metric {
                    Metric::Mtt => o.mtt,
                    Metric::Mql => o.mql,
                }?;
                Some((o.mean_interarrival, v, v, v))
            })
            .collect();
        if points.is_empty() {
            continue;
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        series.push(Series { policy, points });
    }
    if series.is_empty() {
        return None;
    }
    let title = format!("optimal {}, {}", metric.name().to_uppercase(), lanes.label());
    Some(render(&title, "mean inter-arrival time 1/\u{3bb} [s]", metric.axis_label(), &series))
}

/// A rendered plot with its file name.
pub struct PlotFile {
    pub name: String,
    pub svg: String,
}

/// Every plot the table supports, plus a warning for each one skipped
/// because its metric has no values.
pub fn all_plots(cells: &[AggregateCell], optima: &[Optimum]) -> (Vec<PlotFile>, Vec<String>) {
    let mut files = Vec::new();
    let mut warnings = Vec::new();
    let mut rates: Vec<f64> = cells.iter().map(|c| c.mean_interarrival).collect();
    rates.sort_by(f64::total_cmp);
    rates.dedup();
    let mut lanes: Vec<LaneOpening> = cells.iter().map(|c| c.lanes).collect();
    lanes.sort();
    lanes.dedup();
    for metric in [Metric::Mtt, Metric::Mql] {
        for &l in &lanes {
            for &r in &rates {
                let name = format!("{}-{}-ia{}.svg", metric.name(), l.label(), r);
                match metric_plot(cells, metric, r, l) {
                    Some(svg) => files.push(PlotFile { name, svg }),
                    None => warnings.push(format!("{name}: no {} values, plot skipped", metric.name())),
                }
            }
            let name = format!("optimal-{}-{}.svg", metric.name(), l.label());
            match optimum_plot(optima, metric, l) {
                Some(svg) => files.push(PlotFile { name, svg }),
                None => warnings.push(format!("{name}: no {} values, plot skipped", metric.name())),
            }
        }
    }
    (files, warnings)
}
