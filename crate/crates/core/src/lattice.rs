//! Fallback maneuver search on a motion-primitive lattice.
//!
//! Used for spots the closed-form template family cannot reach, typically
//! the column against the far wall where a single turn swings the nose out
//! of the lot. The search runs backward from the parked pose using fixed
//! arcs and straights in both gears, so multi-point turns come out
//! naturally, and stops at a heading-0 pose near the lane centerline that an
//! S-curve can join.

use crate::geometry::{convex_overlap, BodyDims, Pose, Rect};
use crate::path::Segment;
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::f64::consts::PI;

/// Heading resolution of the lattice.
const HEADING_STEPS: i64 = 24;
const POS_RES: f64 = 0.2;
/// Extra cost per gear change, meters.
const GEAR_CHANGE_COST: f64 = 3.0;
const MAX_EXPANSIONS: usize = 400_000;

/// Static free space for one search: lot bounds and rectangles the body
/// must not overlap.
#[derive(Debug, Clone)]
pub struct FreeSpace {
    pub lot: Rect,
    pub obstacles: Vec<Rect>,
    pub body: BodyDims,
}

impl FreeSpace {
    pub fn pose_ok(&self, pose: &Pose) -> bool {
        let corners = self.body.corners(pose);
        if !corners.iter().all(|&c| self.lot.contains_point(c, 1e-9)) {
            return false;
        }
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for &(x, y) in &corners {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        let bb = Rect::new(x0, y0, x1, y1);
        self.obstacles
            .iter()
            .all(|o| !o.overlaps(&bb) || !convex_overlap(&corners, &o.corners()))
    }

    /// Every pose along a segment, sampled at `ds`, is collision free.
    pub fn segment_ok(&self, start: &Pose, seg: &Segment, ds: f64) -> bool {
        let n = (seg.length / ds).ceil().max(1.0) as usize;
        (1..=n).all(|m| self.pose_ok(&seg.pose_at(start, (m as f64 * ds).min(seg.length))))
    }
}

/// What the search must connect to.
#[derive(Debug, Clone, Copy)]
pub struct LaneJoin {
    pub lane_y: f64,
    /// Smallest admissible x of the template start.
    pub min_x: f64,
    pub min_radius: f64,
    /// Fixed start on the centerline; the plan then begins with a straight
    /// from here, in either gear, to the join.
    pub origin: Option<f64>,
}

impl LaneJoin {
    pub fn new(lane_y: f64, min_x: f64, min_radius: f64) -> Self {
        Self { lane_y, min_x, min_radius, origin: None }
    }
}

#[derive(Clone, Copy)]
struct Node {
    cost: f64,
    id: usize,
}

impl PartialEq for Node {
    fn eq(&self, o: &Self) -> bool {
        self.cost == o.cost && self.id == o.id
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Node {
    fn cmp(&self, o: &Self) -> Ordering {
        o.cost.total_cmp(&self.cost).then(o.id.cmp(&self.id))
    }
}

struct Entry {
    pose: Pose,
    gear: f64,
    parent: Option<(usize, Segment)>,
}

fn heading_index(h: f64) -> i64 {
    ((h / (2.0 * PI / HEADING_STEPS as f64)).round() as i64).rem_euclid(HEADING_STEPS)
}

/// S-curve from the lane centerline (heading 0) to `goal` (heading 0),
/// preceded by a straight when the join has a fixed origin. Returns the
/// start pose and the segments.
fn join_segments(goal: &Pose, join: &LaneJoin, space: &FreeSpace, ds: f64) -> Option<(Pose, Vec<Segment>)> {
    let dy = goal.y - join.lane_y;
    let mut options: Vec<(Pose, Vec<Segment>)> = Vec::new();
    if dy.abs() < 1e-9 {
        options.push((Pose::new(goal.x, join.lane_y, 0.0), Vec::new()));
    } else {
        // Steepest swing first: it gives the shortest join.
        for deg in [60.0_f64, 45.0, 30.0, 20.0, 15.0, 10.0] {
            let a = deg.to_radians();
            let r = dy.abs() / (2.0 * (1.0 - a.cos()));
            if r < join.min_radius {
                continue;
            }
            let gears: &[f64] = if join.origin.is_some() { &[1.0, -1.0] } else { &[1.0] };
            for &gear in gears {
                // The curvature sign is geometric, so the same arcs shift
                // the reference point toward the goal in either gear.
                let k = dy.signum() / r;
                let segs = vec![
                    Segment { gear, curvature: k, length: a * r },
                    Segment { gear, curvature: -k, length: a * r },
                ];
                let start = Pose::new(goal.x - gear * 2.0 * r * a.sin(), join.lane_y, 0.0);
                options.push((start, segs));
            }
        }
    }
    for (start, segs) in options {
        if start.x < join.min_x - 1e-9 || !space.pose_ok(&start) {
            continue;
        }
        let mut p = start;
        let mut ok = true;
        for seg in &segs {
            if !space.segment_ok(&p, seg, ds) {
                ok = false;
                break;
            }
            p = seg.pose_at(&p, seg.length);
        }
        if !ok || p.dist(goal) > 1e-6 {
            continue;
        }
        let Some(ox) = join.origin else {
            return Some((start, segs));
        };
        let origin = Pose::new(ox, join.lane_y, 0.0);
        let gap = start.x - ox;
        if gap.abs() < 1e-9 {
            return Some((origin, segs));
        }
        let straight = Segment { gear: gap.signum(), curvature: 0.0, length: gap.abs() };
        if space.segment_ok(&origin, &straight, ds) {
            let mut all = vec![straight];
            all.extend(segs);
            return Some((origin, all));
        }
    }
    None
}

/// Search for a path from the lane centerline to `parked`. The result is
/// the start pose and the forward-time segments ending exactly at
/// `parked`; `final_gear` is the gear of the last segment.
pub fn plan(
    parked: Pose,
    final_gear: f64,
    space: &FreeSpace,
    join: &LaneJoin,
    ds: f64,
) -> Option<(Pose, Vec<Segment>)> {
    let r = join.min_radius;
    let step = r * 2.0 * PI / HEADING_STEPS as f64;
    // Backward primitives: applying (gear, k) from a pose retraces a
    // forward motion with gear -gear.
    let mut prims = Vec::new();
    for gear in [1.0, -1.0] {
        for k in [1.0 / r, 0.0, -1.0 / r] {
            prims.push(Segment { gear, curvature: k, length: step });
        }
    }
    let mut entries = vec![Entry { pose: parked, gear: -final_gear, parent: None }];
    let mut best: HashMap<(i64, i64, i64, i64), f64> = HashMap::new();
    let mut heap = BinaryHeap::new();
    heap.push(Node { cost: 0.0, id: 0 });
    let mut expansions = 0;
    while let Some(Node { cost, id }) = heap.pop() {
        expansions += 1;
        if expansions > MAX_EXPANSIONS {
            return None;
        }
        let pose = entries[id].pose;
        if heading_index(pose.heading) == 0 && entries[id].parent.is_some() {
            let goal = Pose::new(pose.x, pose.y, 0.0);
            if let Some((start, mut segs)) = join_segments(&goal, join, space, ds) {
                // Unwind the backward chain into forward time.
                let mut tail = Vec::new();
                let mut cur = id;
                while let Some((parent, seg)) = entries[cur].parent {
                    tail.push(Segment { gear: -seg.gear, ..seg });
                    cur = parent;
                }
                segs.extend(merge(tail));
                return Some((start, segs));
            }
        }
        for prim in &prims {
            if !space.segment_ok(&pose, prim, ds) {
                continue;
            }
            let next = prim.pose_at(&pose, prim.length);
            let next = Pose::new(next.x, next.y, snap_heading(next.heading));
            let switch = if prim.gear != entries[id].gear { GEAR_CHANGE_COST } else { 0.0 };
            let c = cost + prim.length + switch;
            let key = (
                (next.x / POS_RES).round() as i64,
                (next.y / POS_RES).round() as i64,
                heading_index(next.heading),
                prim.gear as i64,
            );
            if best.get(&key).is_some_and(|&b| b <= c) {
                continue;
            }
            best.insert(key, c);
            entries.push(Entry { pose: next, gear: prim.gear, parent: Some((id, *prim)) });
            heap.push(Node { cost: c, id: entries.len() - 1 });
        }
    }
    None
}

/// Remove accumulated rounding so headings stay on the lattice.
fn snap_heading(h: f64) -> f64 {
    let q = 2.0 * PI / HEADING_STEPS as f64;
    let s = (h / q).round() * q;
    if (h - s).abs() < 1e-9 { s } else { h }
}

/// Merge consecutive segments with identical gear and curvature.
fn merge(segs: Vec<Segment>) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::with_capacity(segs.len());
    for s in segs {
        match out.last_mut() {
            Some(l) if l.gear == s.gear && l.curvature == s.curvature => l.length += s.length,
            _ => out.push(s),
        }
    }
    out
}
