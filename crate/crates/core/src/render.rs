//! SVG snapshots of the lot replayed from a trace.

use crate::engine::{stream_rng, Mode, RunConfig, Stream, TRACE_SCHEMA, TRACE_VERSION};
use crate::error::IoError;
use crate::geometry::{BodyDims, Pose};
use crate::lot::{seed_initial_occupancy, LotLayout, SpotStatus};
use crate::VehicleId;
use serde::Deserialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;

const SCALE: f64 = 12.0;
const MARGIN: f64 = 10.0;

#[derive(Deserialize)]
struct Header {
    schema: String,
    version: u32,
    dt: f64,
    config: RunConfig,
}

#[derive(Deserialize)]
struct Record {
    k: u64,
    #[serde(default)]
    id: Option<VehicleId>,
    #[serde(default)]
    mode: Option<Mode>,
    #[serde(default)]
    x: Option<f64>,
    #[serde(default)]
    y: Option<f64>,
    #[serde(default)]
    heading: Option<f64>,
    #[serde(default)]
    proceed: Option<bool>,
    #[serde(default)]
    event: Option<String>,
    #[serde(default)]
    vehicles: Vec<VehicleId>,
}

#[derive(Clone, Copy)]
struct Shown {
    pose: Pose,
    mode: Mode,
    proceed: bool,
}

/// One rendered step.
pub struct TraceFrame {
    pub k: u64,
    pub svg: String,
}

fn mode_color(m: Mode, proceed: bool) -> &'static str {
    match (m, proceed) {
        (Mode::Parked, _) => "#7f7f7f",
        (_, false) => "#d62728",
        (Mode::Maneuvering, true) => "#ff9f1c",
        _ => "#2ca02c",
    }
}

fn frame(layout: &LotLayout, body: &BodyDims, occupied: &[(f64, f64, f64, f64)], k: u64, dt: f64, shown: &BTreeMap<VehicleId, Shown>) -> String {
    let w = layout.length_m * SCALE + 2.0 * MARGIN;
    let h = layout.width_m * SCALE + 2.0 * MARGIN + 20.0;
    // World y points up; SVG y points down.
    let tx = |x: f64| MARGIN + x * SCALE;
    let ty = |y: f64| MARGIN + (layout.width_m - y) * SCALE;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif" font-size="10">"#);
    let _ = writeln!(s, r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#f4f4f4" stroke="#333"/>"##, tx(0.0), ty(layout.width_m), layout.length_m * SCALE, layout.width_m * SCALE);
    for lane in &layout.lanes {
        let r = lane.rect(layout.length_m);
        let _ = writeln!(s, r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#e2e6ea"/>"##, tx(r.x0), ty(r.y1), r.width() * SCALE, r.height() * SCALE);
    }
    for spot in layout.all_spots() {
        let r = layout.spot_world_rect(spot).expect("spot in range");
        let _ = writeln!(s, r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#999"/>"##, tx(r.x0), ty(r.y1), r.width() * SCALE, r.height() * SCALE);
    }
    for &(x0, y0, x1, y1) in occupied {
        let _ = writeln!(s, r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#c7c7c7" stroke="#999"/>"##, tx(x0) + 2.0, ty(y1) + 2.0, (x1 - x0) * SCALE - 4.0, (y1 - y0) * SCALE - 4.0);
    }
    for (id, v) in shown {
        let pts: Vec<String> = body.corners(&v.pose).iter().map(|&(x, y)| format!("{:.1},{:.1}", tx(x), ty(y))).collect();
        let _ = writeln!(s, r##"<polygon points="{}" fill="{}" fill-opacity="0.8" stroke="#222"/>"##, pts.join(" "), mode_color(v.mode, v.proceed));
        let (cx, cy) = body.center(&v.pose);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" fill="white">{id}</text>"#, tx(cx), ty(cy) + 3.5);
    }
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="{:.1}">k = {k}   t = {:.1} s</text>"#, h - 6.0, k as f64 * dt);
    s.push_str("</svg>\n");
    s
}

/// Replay `trace` and render every `every`-th step, plus the final one.
pub fn render_trace<R: BufRead>(trace: R, layout: &LotLayout, body: &BodyDims, every: u64) -> Result<Vec<TraceFrame>, IoError> {
    let every = every.max(1);
    let mut lines = trace.lines();
    let bad = |m: String| IoError::Format(m);
    let first = lines.next().ok_or_else(|| bad("empty trace".into()))?.map_err(|e| IoError::io("<trace>", e))?;
    let header: Header = serde_json::from_str(&first).map_err(|source| IoError::Json { path: "<trace header>".into(), source })?;
    if header.schema != TRACE_SCHEMA || header.version != TRACE_VERSION {
        return Err(bad(format!("unsupported trace {} v{}", header.schema, header.version)));
    }
    // The starting occupancy is a function of the seed.
    let table = seed_initial_occupancy(layout, header.config.n_free_spots, &mut stream_rng(header.config.seed, Stream::Occupancy))
        .map_err(|e| bad(e.to_string()))?;
    let occupied: Vec<(f64, f64, f64, f64)> = table
        .states()
        .iter()
        .filter(|s| s.status == SpotStatus::Occupied)
        .map(|s| {
            let r = layout.spot_world_rect(s.index).expect("spot in range");
            (r.x0, r.y0, r.x1, r.y1)
        })
        .collect();

    let mut shown: BTreeMap<VehicleId, Shown> = BTreeMap::new();
    let mut frames = Vec::new();
    let mut current: Option<u64> = None;
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| IoError::io("<trace>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|source| IoError::Json { path: format!("<trace line {}>", n + 2), source })?;
        if let Some(k) = current {
            if rec.k != k && k % every == 0 {
                frames.push(TraceFrame { k, svg: frame(layout, body, &occupied, k, header.dt, &shown) });
            }
        }
        current = Some(rec.k);
        if let Some("parked") = rec.event.as_deref() {
            for id in &rec.vehicles {
                if let Some(v) = shown.get_mut(id) {
                    v.mode = Mode::Parked;
                }
            }
        }
        if let (Some(id), Some(mode), Some(x), Some(y), Some(heading)) = (rec.id, rec.mode, rec.x, rec.y, rec.heading) {
            shown.insert(id, Shown { pose: Pose::new(x, y, heading), mode, proceed: rec.proceed.unwrap_or(true) });
        }
    }
    if let Some(k) = current {
        if frames.last().map(|f| f.k) != Some(k) {
            frames.push(TraceFrame { k, svg: frame(layout, body, &occupied, k, header.dt, &shown) });
        }
    }
    Ok(frames)
}
