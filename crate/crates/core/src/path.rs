//! Centralized path generation: lane-centerline queuing paths and an
//! offline library of final-leg maneuver templates.
//!
//! Templates are arc-line compositions for the rear-axle reference point:
//! an optional S-curve that shifts the vehicle away from the target row, one
//! quarter-turn arc, and a straight run into the spot. Each template is
//! sampled at `maneuver_speed * dt` and carries the suffix sweeps (union of
//! footprints from step `m` to the end) used as the maneuver claim.

use crate::error::{IoError, PathError};
use crate::geometry::{BodyDims, Pose, Rect};
use crate::lattice::{self, FreeSpace, LaneJoin};
use crate::lot::{LaneId, LotLayout, SpotIndex};
use crate::occupancy::{rasterize_footprint, CellSet, GridSpec};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::path::Path;
use std::sync::Arc;

/// Vehicle geometry and motion parameters shared by every vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub body: BodyDims,
    /// Minimum turning radius of the reference point, meters.
    pub min_turning_radius: f64,
    /// Queuing speed, m/s.
    pub v_ref: f64,
    /// Constant speed along maneuver templates, m/s.
    pub maneuver_speed: f64,
    /// Sampling time, s.
    pub dt: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            body: BodyDims {
                length: 4.7,
                width: 2.0,
                center_offset: 1.35,
            },
            min_turning_radius: 3.0,
            v_ref: 4.0,
            maneuver_speed: 1.0,
            dt: 0.1,
        }
    }
}

impl VehicleParams {
    /// Distance from the reference point back to the rear bumper.
    pub fn rear_overhang(&self) -> f64 {
        self.body.length / 2.0 - self.body.center_offset
    }

    pub fn maneuver_step(&self) -> f64 {
        self.maneuver_speed * self.dt
    }

    pub fn queuing_step(&self) -> f64 {
        self.v_ref * self.dt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Reverse,
}

impl Direction {
    pub fn gear(&self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Reverse => -1.0,
        }
    }

    pub fn other(&self) -> Direction {
        match self {
            Direction::Forward => Direction::Reverse,
            Direction::Reverse => Direction::Forward,
        }
    }
}

/// One motion primitive for the reference point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    /// +1 forward, -1 reverse.
    pub gear: f64,
    /// Signed curvature, positive turns left when driving forward.
    pub curvature: f64,
    pub length: f64,
}

impl Segment {
    pub fn pose_at(&self, start: &Pose, l: f64) -> Pose {
        let dtheta = self.gear * self.curvature * l;
        let h1 = start.heading + dtheta;
        if self.curvature.abs() < 1e-12 {
            Pose::new(
                start.x + self.gear * l * start.heading.cos(),
                start.y + self.gear * l * start.heading.sin(),
                h1,
            )
        } else {
            let k = self.curvature;
            Pose::new(
                start.x + (h1.sin() - start.heading.sin()) / k,
                start.y - (h1.cos() - start.heading.cos()) / k,
                h1,
            )
        }
    }
}

/// Pose at arc length `l` along a chain of segments.
pub fn pose_along(start: &Pose, segments: &[Segment], mut l: f64) -> Pose {
    let mut p = *start;
    for seg in segments {
        if l <= seg.length {
            return seg.pose_at(&p, l);
        }
        p = seg.pose_at(&p, seg.length);
        l -= seg.length;
    }
    p
}

pub fn chain_length(segments: &[Segment]) -> f64 {
    segments.iter().map(|s| s.length).sum()
}

/// Sample a segment chain every `ds` meters; the final pose is exact.
pub fn sample_chain(start: &Pose, segments: &[Segment], ds: f64) -> Vec<Pose> {
    let total = chain_length(segments);
    let n = ((total / ds) - 1e-9).ceil().max(0.0) as usize;
    (0..=n)
        .map(|m| pose_along(start, segments, (m as f64 * ds).min(total)))
        .collect()
}

/// Shape parameters of one template family member.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemplateShape {
    pub direction: Direction,
    /// Radius of the quarter turn.
    pub turn_radius: f64,
    /// Heading swing of each S-curve arc; positive shifts away from the
    /// target row, negative toward it, zero disables the lateral shift.
    pub shift_angle: f64,
    pub shift_radius: f64,
    /// Multi-point turn: heading swings of successive arcs in alternating
    /// gears (the first in the final gear), all rotating toward the row. The
    /// final arc completes the quarter turn. A zero ends the list, so all
    /// zeros means a single arc.
    pub swings: [f64; 4],
}

impl TemplateShape {
    /// Segments up to (not including) the final straight, for a row on side
    /// `side` (+1 above the lane, -1 below).
    fn turning_segments(&self, side: f64) -> Vec<Segment> {
        let g = self.direction.gear();
        let mut segs = Vec::with_capacity(4);
        if self.shift_angle != 0.0 {
            let k = -side * self.shift_angle.signum() / self.shift_radius;
            let len = self.shift_angle.abs() * self.shift_radius;
            segs.push(Segment {
                gear: g,
                curvature: k,
                length: len,
            });
            segs.push(Segment {
                gear: g,
                curvature: -k,
                length: len,
            });
        }
        let r = self.turn_radius;
        let mut gear = g;
        let mut turned = 0.0;
        for &w in self.swings.iter().take_while(|&&w| w > 0.0) {
            segs.push(Segment {
                gear,
                curvature: gear * g * side / r,
                length: w * r,
            });
            turned += w;
            gear = -gear;
        }
        segs.push(Segment {
            gear: g,
            curvature: side / r,
            length: (FRAC_PI_2 - turned) * r,
        });
        segs
    }

    /// Final heading: nose into the row when driving forward, nose toward
    /// the lane when reversing in.
    pub fn final_heading(&self, side: f64) -> f64 {
        self.direction.gear() * side * FRAC_PI_2
    }
}

/// Identifies a template variant for a (lane, row, direction) combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TemplateKey {
    pub lane: LaneId,
    pub row: usize,
    pub direction: Direction,
    /// Index into the shape family; shapes differ in approach offset.
    pub variant: usize,
}

impl std::fmt::Display for TemplateKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "lane {} row {} {:?} variant {}",
            self.lane, self.row, self.direction, self.variant
        )
    }
}

/// A template placed at a concrete spot: sampled poses plus suffix sweeps.
#[derive(Debug, Clone)]
pub struct ManeuverInstance {
    pub key: TemplateKey,
    pub spot: SpotIndex,
    pub poses: Vec<Pose>,
    /// `suffix[m]` is the union of footprints over `poses[m..]`.
    pub suffix: Vec<CellSet>,
    /// Footprint of each sampled pose.
    pub footprints: Vec<CellSet>,
    /// Arc length between consecutive samples (the last gap may be shorter).
    pub ds: f64,
    pub length: f64,
}

impl ManeuverInstance {
    pub fn from_poses(
        key: TemplateKey,
        spot: SpotIndex,
        poses: Vec<Pose>,
        ds: f64,
        length: f64,
        grid: &GridSpec,
        body: &BodyDims,
    ) -> Self {
        let footprints = poses
            .iter()
            .map(|p| rasterize_footprint(grid, p, body))
            .collect();
        Self::from_footprints(key, spot, poses, footprints, ds, length, grid)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_footprints(
        key: TemplateKey,
        spot: SpotIndex,
        poses: Vec<Pose>,
        footprints: Vec<CellSet>,
        ds: f64,
        length: f64,
        grid: &GridSpec,
    ) -> Self {
        let mut suffix = vec![CellSet::empty(grid); poses.len()];
        let mut acc = CellSet::empty(grid);
        for m in (0..poses.len()).rev() {
            acc.union_with(&footprints[m]);
            suffix[m] = acc.clone();
        }
        Self {
            key,
            spot,
            poses,
            suffix,
            footprints,
            ds,
            length,
        }
    }

    pub fn start(&self) -> Pose {
        self.poses[0]
    }

    pub fn end(&self) -> Pose {
        *self.poses.last().expect("template has poses")
    }

    /// Number of motion steps to complete the maneuver.
    pub fn steps(&self) -> usize {
        self.poses.len() - 1
    }

    /// Sample index reached at progress `s`.
    pub fn index_at(&self, s: f64) -> usize {
        if s >= self.length {
            return self.steps();
        }
        (((s / self.ds) + 1e-6).floor() as usize).min(self.steps())
    }

    pub fn pose_at(&self, s: f64) -> Pose {
        self.poses[self.index_at(s)]
    }

    pub fn sweep(&self) -> &CellSet {
        &self.suffix[0]
    }
}

/// Queuing path: the lane centerline from the entrance to the maneuver start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueuingPath {
    pub lane: LaneId,
    pub start_x: f64,
    pub end_x: f64,
    pub y: f64,
}

impl QueuingPath {
    pub fn length(&self) -> f64 {
        self.end_x - self.start_x
    }

    pub fn pose_at(&self, s: f64) -> Pose {
        Pose::new(self.start_x + s.clamp(0.0, self.length()), self.y, 0.0)
    }
}

/// Complete path: queuing along the lane, then the final-leg maneuver.
#[derive(Debug, Clone)]
pub struct VehiclePath {
    pub queuing: QueuingPath,
    pub maneuver: Arc<ManeuverInstance>,
}

impl VehiclePath {
    pub fn new(queuing: QueuingPath, maneuver: Arc<ManeuverInstance>) -> Self {
        Self { queuing, maneuver }
    }

    /// Total progress domain: queuing length plus maneuver length.
    pub fn length(&self) -> f64 {
        self.queuing.length() + self.maneuver.length
    }

    /// Whether progress `s` lies on the maneuver leg.
    pub fn in_maneuver(&self, s: f64) -> bool {
        s >= self.queuing.length() - 1e-9
    }

    /// Progress measured along the maneuver leg.
    pub fn maneuver_progress(&self, s: f64) -> f64 {
        (s - self.queuing.length()).max(0.0)
    }

    pub fn pose_at(&self, s: f64) -> Pose {
        if self.in_maneuver(s) {
            self.maneuver.pose_at(self.maneuver_progress(s))
        } else {
            self.queuing.pose_at(s)
        }
    }
}

/// Reference x at which a vehicle sits with its rear bumper on the gate.
pub fn queue_start_x(layout: &LotLayout, params: &VehicleParams) -> f64 {
    layout.entrance.x + params.rear_overhang()
}

pub fn build_queuing_path(
    layout: &LotLayout,
    params: &VehicleParams,
    lane: LaneId,
    maneuver: &ManeuverInstance,
) -> Result<QueuingPath, PathError> {
    let l = layout.lane(lane);
    if l.local_y(maneuver.spot.row).is_none() || maneuver.key.lane != lane {
        return Err(PathError::Unreachable {
            lane,
            spot: maneuver.spot.to_string(),
        });
    }
    let start_x = queue_start_x(layout, params);
    let end_x = maneuver.start().x;
    debug_assert!(end_x >= start_x - 1e-9);
    Ok(QueuingPath {
        lane,
        start_x,
        end_x: end_x.max(start_x),
        y: l.center_y,
    })
}

/// s' = s + v dt, saturated at the path end.
pub fn advance_on_path(s: f64, v: f64, dt: f64, path_length: f64) -> f64 {
    (s + v * dt).min(path_length).max(s.min(path_length))
}

/// The shape family searched for every (lane, row, direction), simplest
/// shapes first.
pub fn shape_family(params: &VehicleParams, direction: Direction) -> Vec<TemplateShape> {
    let r0 = params.min_turning_radius;
    // Lateral S-shifts parametrized by offset and heading swing; shifts
    // needing a radius below the minimum are skipped.
    let mut shifts = vec![(0.0, r0)];
    for k in [1.0, 3.0] {
        for deg in [15.0_f64, 30.0, 45.0] {
            shifts.push((deg.to_radians(), k * r0));
            shifts.push((-deg.to_radians(), k * r0));
        }
    }
    for offset in [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5] {
        for deg in [10.0_f64, 15.0, 20.0, 30.0, 45.0] {
            let a = deg.to_radians();
            let radius = offset / (2.0 * (1.0 - a.cos()));
            if radius >= r0 {
                shifts.push((a, radius));
                shifts.push((-a, radius));
            }
        }
    }
    let mut swings = vec![[0.0; 4]];
    for a1 in [15.0_f64, 30.0, 45.0, 60.0] {
        for a2 in [15.0_f64, 30.0, 45.0, 60.0] {
            if a1 + a2 < 90.0 {
                swings.push([a1.to_radians(), a2.to_radians(), 0.0, 0.0]);
            }
        }
    }
    for a1 in [15.0_f64, 30.0] {
        for a2 in [15.0_f64, 30.0] {
            for a3 in [15.0_f64, 30.0] {
                for a4 in [15.0_f64, 30.0] {
                    if a1 + a2 + a3 + a4 < 90.0 {
                        swings.push([a1, a2, a3, a4].map(f64::to_radians));
                    }
                }
            }
        }
    }
    let mut out = Vec::new();
    for &sw in &swings {
        for dr in [0.0, 0.5] {
            for &(shift_angle, shift_radius) in &shifts {
                out.push(TemplateShape {
                    direction,
                    turn_radius: r0 + dr,
                    shift_angle,
                    shift_radius,
                    swings: sw,
                });
            }
        }
    }
    out
}

/// Offline library of placed maneuver templates.
#[derive(Debug, Clone)]
pub struct ManeuverLibrary {
    pub params: VehicleParams,
    pub shapes: BTreeMap<Direction, Vec<TemplateShape>>,
    /// Valid instances per (lane, spot, direction), shortest first.
    entries: BTreeMap<(LaneId, SpotIndex, Direction), Vec<Arc<ManeuverInstance>>>,
}

/// Cells of every spot, one set per spot slot.
fn spot_cells(layout: &LotLayout) -> Vec<(SpotIndex, CellSet)> {
    layout
        .all_spots()
        .map(|s| {
            let r = layout.spot_world_rect(s).expect("valid spot");
            (s, layout.grid().cells_within(&r))
        })
        .collect()
}

/// Checks shared by generation and regeneration: body inside the lot at
/// every pose and no cell of a non-target spot touched.
pub fn poses_are_admissible(
    layout: &LotLayout,
    body: &BodyDims,
    poses: &[Pose],
    forbidden: &CellSet,
) -> bool {
    let lot = layout.rect();
    let in_lot = poses
        .iter()
        .all(|p| body.corners(p).iter().all(|&c| lot.contains_point(c, 1e-9)));
    in_lot
        && poses
            .iter()
            .all(|p| !rasterize_footprint(layout.grid(), p, body).intersects(forbidden))
}

impl ManeuverLibrary {
    /// Instances kept per (lane, spot, direction).
    pub const MAX_VARIANTS: usize = 3;

    pub fn generate(layout: &LotLayout, params: &VehicleParams) -> Result<Self, PathError> {
        let grid = *layout.grid();
        let body = params.body;
        let lot = layout.rect();
        let min_x = queue_start_x(layout, params);
        let cells = spot_cells(layout);
        let mut all_spot_cells = CellSet::empty(&grid);
        for (_, c) in &cells {
            all_spot_cells.union_with(c);
        }
        // Spots tile the x axis with a whole number of cells, so a shape is
        // rasterized once at a reference column on a padded grid and shifted.
        let pitch_cells = (layout.spot_pitch_m / grid.cell).round() as isize;
        let pad = grid.cols;
        let ext = GridSpec::new(grid.cols + 2 * pad, grid.rows, grid.cell);
        let x_ref = layout.n_x / 2;
        let mut shapes = BTreeMap::new();
        let mut entries = BTreeMap::new();
        for direction in [Direction::Forward, Direction::Reverse] {
            let family = shape_family(params, direction);
            for lane in &layout.lanes {
                for &row in &lane.rows {
                    let side = layout.row_side(lane.id, row);
                    let forbidden: Vec<CellSet> = (0..layout.n_x)
                        .map(|x| {
                            let mut f = all_spot_cells.clone();
                            f.remove_all(&cells[layout.spot_slot(SpotIndex { x, row })].1);
                            f
                        })
                        .collect();
                    let ref_target = layout
                        .spot_world_rect(SpotIndex { x: x_ref, row })
                        .expect("valid spot");
                    let mut ranked: Vec<Vec<(f64, usize)>> = vec![Vec::new(); layout.n_x];
                    for (variant, shape) in family.iter().enumerate() {
                        let Some((poses, length)) =
                            place_shape(params, shape, side, lane.center_y, &ref_target)
                        else {
                            continue;
                        };
                        let y_ok = poses.iter().all(|p| {
                            body.corners(p)
                                .iter()
                                .all(|c| c.1 >= lot.y0 - 1e-9 && c.1 <= lot.y1 + 1e-9)
                        });
                        if !y_ok {
                            continue;
                        }
                        let off = pad as f64 * grid.cell;
                        let mut sweep = CellSet::empty(&ext);
                        for p in &poses {
                            sweep.union_with(&rasterize_footprint(
                                &ext,
                                &p.translated(off, 0.0),
                                &body,
                            ));
                        }
                        let (lo, hi) = poses.iter().fold((f64::MAX, f64::MIN), |acc, p| {
                            body.corners(p)
                                .iter()
                                .fold(acc, |(lo, hi), c| (lo.min(c.0), hi.max(c.0)))
                        });
                        for (x, ranks) in ranked.iter_mut().enumerate() {
                            let di = (x_ref as isize - x as isize) * pitch_cells;
                            let dx = di as f64 * grid.cell;
                            if poses[0].x + dx < min_x - 1e-9
                                || lo + dx < lot.x0 - 1e-9
                                || hi + dx > lot.x1 + 1e-9
                            {
                                continue;
                            }
                            let s = sweep.transfer(&ext, &grid, di - pad as isize, 0);
                            if !s.intersects(&forbidden[x]) {
                                ranks.push((length, variant));
                            }
                        }
                    }
                    let mut found_any = false;
                    for (x, mut ranks) in ranked.into_iter().enumerate() {
                        ranks.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                        let spot = SpotIndex { x, row };
                        let target = layout.spot_world_rect(spot).expect("valid spot");
                        let mut list = Vec::new();
                        for (_, variant) in ranks {
                            if list.len() == Self::MAX_VARIANTS {
                                break;
                            }
                            let shape = &family[variant];
                            let Some((poses, length)) =
                                place_shape(params, shape, side, lane.center_y, &target)
                            else {
                                continue;
                            };
                            // Re-verify on the real grid after translation.
                            if poses[0].x < min_x - 1e-9
                                || !poses_are_admissible(layout, &body, &poses, &forbidden[x])
                            {
                                continue;
                            }
                            let key = TemplateKey {
                                lane: lane.id,
                                row,
                                direction,
                                variant,
                            };
                            list.push(Arc::new(ManeuverInstance::from_poses(
                                key,
                                spot,
                                poses,
                                params.maneuver_step(),
                                length,
                                &grid,
                                &body,
                            )));
                        }
                        if list.is_empty() {
                            list.extend(
                                plan_with_lattice(
                                    layout,
                                    params,
                                    lane.center_y,
                                    spot,
                                    direction,
                                    side,
                                    PlanContext::default(),
                                )
                                .map(|(poses, length)| {
                                    let key = TemplateKey {
                                        lane: lane.id,
                                        row,
                                        direction,
                                        variant: family.len(),
                                    };
                                    Arc::new(ManeuverInstance::from_poses(
                                        key,
                                        spot,
                                        poses,
                                        params.maneuver_step(),
                                        length,
                                        &grid,
                                        &body,
                                    ))
                                }),
                            );
                        }
                        if !list.is_empty() {
                            found_any = true;
                            entries.insert((lane.id, spot, direction), list);
                        }
                    }
                    if !found_any {
                        return Err(PathError::Infeasible(format!(
                            "lane {} row {} {:?}",
                            lane.id, row, direction
                        )));
                    }
                }
            }
            shapes.insert(direction, family);
        }
        for lane in &layout.lanes {
            for &row in &lane.rows {
                for x in 0..layout.n_x {
                    let spot = SpotIndex { x, row };
                    let any = [Direction::Forward, Direction::Reverse]
                        .iter()
                        .any(|d| entries.contains_key(&(lane.id, spot, *d)));
                    if !any {
                        return Err(PathError::Infeasible(format!(
                            "spot {spot} from lane {}",
                            lane.id
                        )));
                    }
                }
            }
        }
        Ok(Self {
            params: *params,
            shapes,
            entries,
        })
    }

    /// Valid instances for a spot approached from a lane, shortest first.
    pub fn variants(
        &self,
        lane: LaneId,
        spot: SpotIndex,
        direction: Direction,
    ) -> &[Arc<ManeuverInstance>] {
        self.entries
            .get(&(lane, spot, direction))
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    /// Preferred instance for a requested direction, falling back to the
    /// other direction when the requested one does not fit at this spot.
    pub fn instance(
        &self,
        lane: LaneId,
        spot: SpotIndex,
        direction: Direction,
    ) -> Result<Arc<ManeuverInstance>, PathError> {
        self.variants(lane, spot, direction)
            .first()
            .or_else(|| self.variants(lane, spot, direction.other()).first())
            .cloned()
            .ok_or_else(|| PathError::Unreachable {
                lane,
                spot: spot.to_string(),
            })
    }

    /// Alternative maneuver for a vehicle stopped at step `m` of `current`
    /// whose remaining sweep avoids `blocked`. The vehicle first retreats
    /// along `current` to its latest pose on the lane centerline. From
    /// there it either moves along the centerline to the start of another
    /// library variant for the same spot, or follows a fresh lattice plan
    /// that treats `blocked` as obstacles. Returns the current instance
    /// unchanged when its remaining sweep is clear.
    pub fn regenerate(
        &self,
        layout: &LotLayout,
        current: &Arc<ManeuverInstance>,
        m: usize,
        blocked: &CellSet,
    ) -> Option<Arc<ManeuverInstance>> {
        let grid = layout.grid();
        let m = m.min(current.steps());
        if !current.suffix[m].intersects(blocked) {
            return Some(current.clone());
        }
        let lane = layout.lane(current.key.lane);
        let on_centerline = |p: &Pose| (p.y - lane.center_y).abs() < 1e-6 && p.heading.sin().abs() < 1e-9 && p.heading.cos() > 0.0;
        let j = (0..=m).rev().find(|&i| on_centerline(&current.poses[i]))?;
        let retreat: Vec<Pose> = current.poses[j..=m].iter().rev().copied().collect();
        let retreat_fp: Vec<CellSet> = current.footprints[j..=m].iter().rev().cloned().collect();
        if retreat_fp.iter().any(|f| f.intersects(blocked)) {
            return None;
        }
        let from = current.poses[j];
        let ds = current.ds;
        // One sample per step: joins shorter than `ds` still take a full
        // step, so the length counts samples.
        let assemble = |key: TemplateKey, mut tail: Vec<Pose>, mut tail_fp: Vec<CellSet>, last_gap: f64| {
            let mut poses = retreat.clone();
            poses.append(&mut tail);
            let mut fps = retreat_fp.clone();
            fps.append(&mut tail_fp);
            let length = (poses.len() as f64 - 2.0) * ds + last_gap;
            ManeuverInstance::from_footprints(key, current.spot, poses, fps, ds, length, grid)
        };
        let mut best: Option<ManeuverInstance> = None;
        for direction in [Direction::Forward, Direction::Reverse] {
            for cand in self.variants(lane.id, current.spot, direction) {
                if cand.key == current.key || cand.sweep().intersects(blocked) {
                    continue;
                }
                let to = cand.start();
                let gap = to.x - from.x;
                let n = (gap.abs() / ds).ceil() as usize;
                let transit: Vec<Pose> = (1..n)
                    .map(|k| from.translated(gap.signum() * k as f64 * ds, 0.0))
                    .collect();
                let transit_fp: Vec<CellSet> = transit
                    .iter()
                    .map(|p| rasterize_footprint(grid, p, &self.params.body))
                    .collect();
                if transit_fp.iter().any(|f| f.intersects(blocked)) {
                    continue;
                }
                let samples = retreat.len() + transit.len() + cand.poses.len();
                if best.as_ref().is_some_and(|b| b.poses.len() <= samples) {
                    continue;
                }
                let mut tail = transit;
                tail.extend(cand.poses.iter().copied());
                let mut tail_fp = transit_fp;
                tail_fp.extend(cand.footprints.iter().cloned());
                let last_gap = cand.length - (cand.steps() as f64 - 1.0) * ds;
                best = Some(assemble(cand.key, tail, tail_fp, last_gap));
            }
        }
        if best.is_none() {
            let side = layout.row_side(lane.id, current.spot.row);
            let ctx = PlanContext { origin: Some(from.x), blocked: Some(blocked) };
            let n_shapes = self.shapes.values().map(Vec::len).max().unwrap_or(0);
            for direction in [current.key.direction, current.key.direction.other()] {
                let planned = plan_with_lattice(layout, &self.params, lane.center_y, current.spot, direction, side, ctx);
                if let Some((poses, length)) = planned {
                    let key = TemplateKey { direction, variant: n_shapes + 1, ..current.key };
                    let last_gap = length - (poses.len() as f64 - 2.0) * ds;
                    let tail: Vec<Pose> = poses[1..].to_vec();
                    let tail_fp = tail.iter().map(|p| rasterize_footprint(grid, p, &self.params.body)).collect();
                    best = Some(assemble(key, tail, tail_fp, last_gap));
                    break;
                }
            }
        }
        best.map(Arc::new)
    }

    /// Write the library as versioned JSON; footprints are rebuilt on load.
    pub fn save(&self, layout: &LotLayout, path: &Path) -> Result<(), IoError> {
        let file = CacheFile {
            version: CACHE_VERSION,
            layout: layout_signature(layout),
            params: self.params,
            entries: self
                .iter()
                .map(|i| CachedInstance {
                    key: i.key,
                    spot: i.spot,
                    length: i.length,
                    poses: i.poses.clone(),
                })
                .collect(),
        };
        let f = std::fs::File::create(path).map_err(|e| IoError::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(f), &file).map_err(|source| {
            IoError::Json {
                path: path.display().to_string(),
                source,
            }
        })
    }

    /// Load a cached library. Returns `Ok(None)` when the file was written
    /// for another version, layout or parameter set.
    pub fn load(
        layout: &LotLayout,
        params: &VehicleParams,
        path: &Path,
    ) -> Result<Option<Self>, IoError> {
        let f = std::fs::File::open(path).map_err(|e| IoError::io(path, e))?;
        let file: CacheFile =
            serde_json::from_reader(std::io::BufReader::new(f)).map_err(|source| {
                IoError::Json {
                    path: path.display().to_string(),
                    source,
                }
            })?;
        if file.version != CACHE_VERSION
            || file.layout != layout_signature(layout)
            || file.params != *params
        {
            return Ok(None);
        }
        let grid = layout.grid();
        let mut entries: BTreeMap<_, Vec<Arc<ManeuverInstance>>> = BTreeMap::new();
        for c in file.entries {
            let inst = ManeuverInstance::from_poses(
                c.key,
                c.spot,
                c.poses,
                params.maneuver_step(),
                c.length,
                grid,
                &params.body,
            );
            entries
                .entry((c.key.lane, c.spot, c.key.direction))
                .or_default()
                .push(Arc::new(inst));
        }
        let shapes = [Direction::Forward, Direction::Reverse]
            .into_iter()
            .map(|d| (d, shape_family(params, d)))
            .collect();
        Ok(Some(Self {
            params: *params,
            shapes,
            entries,
        }))
    }

    /// Use the cache at `path` when it matches, otherwise generate and
    /// refresh it. Cache write failures are returned after generation.
    pub fn load_or_generate(
        layout: &LotLayout,
        params: &VehicleParams,
        path: &Path,
    ) -> Result<Self, PathError> {
        if let Ok(Some(lib)) = Self::load(layout, params, path) {
            return Ok(lib);
        }
        let lib = Self::generate(layout, params)?;
        // A stale or unwritable cache only costs regeneration next time.
        let _ = lib.save(layout, path);
        Ok(lib)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<ManeuverInstance>> {
        self.entries.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(|v| v.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub const CACHE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CacheFile {
    version: u32,
    layout: String,
    params: VehicleParams,
    entries: Vec<CachedInstance>,
}

#[derive(Serialize, Deserialize)]
struct CachedInstance {
    key: TemplateKey,
    spot: SpotIndex,
    length: f64,
    poses: Vec<Pose>,
}

fn layout_signature(layout: &LotLayout) -> String {
    format!(
        "{} {} {} {} {} {:?} {} {:?} {:?}",
        layout.length_m,
        layout.width_m,
        layout.grid_size_m,
        layout.spot_pitch_m,
        layout.spot_depth_m,
        layout.entrance,
        layout.n_x,
        layout.row_y_min,
        layout.lanes
    )
}

/// Dump the poses of one instance as CSV (`step,x,y,heading`).
pub fn write_pose_csv<W: std::io::Write>(inst: &ManeuverInstance, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "x", "y", "heading"])?;
    for (m, p) in inst.poses.iter().enumerate() {
        w.write_record(&[
            m.to_string(),
            format!("{:.6}", p.x),
            format!("{:.6}", p.y),
            format!("{:.6}", p.heading),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Horizontal runs of cells, merged so that each run is one rectangle.
fn cell_runs(grid: &GridSpec, cells: &CellSet) -> Vec<Rect> {
    let mut out: Vec<Rect> = Vec::new();
    let mut last: Option<(usize, usize)> = None;
    for (i, j) in cells.cells(grid) {
        let r = grid.cell_rect(i, j);
        match (last, out.last_mut()) {
            (Some((li, lj)), Some(prev)) if lj == j && li + 1 == i => prev.x1 = r.x1,
            _ => out.push(r),
        }
        last = Some((i, j));
    }
    out
}

/// Where a lattice plan starts and what else it must avoid.
#[derive(Clone, Copy, Default)]
struct PlanContext<'a> {
    /// Fixed start x on the lane centerline.
    origin: Option<f64>,
    /// Cells the body may not touch besides other spots.
    blocked: Option<&'a CellSet>,
}

/// Lattice search for a spot the shape family cannot reach. The result is
/// re-checked against the same admissibility rules as placed shapes.
fn plan_with_lattice(
    layout: &LotLayout,
    params: &VehicleParams,
    lane_y: f64,
    spot: SpotIndex,
    direction: Direction,
    side: f64,
    ctx: PlanContext<'_>,
) -> Option<(Vec<Pose>, f64)> {
    let grid = layout.grid();
    let target = layout.spot_world_rect(spot).ok()?;
    let mut space = FreeSpace {
        lot: layout.rect(),
        obstacles: layout
            .all_spots()
            .filter(|&s| s != spot)
            .map(|s| layout.spot_world_rect(s).expect("valid spot"))
            .collect(),
        body: params.body,
    };
    let mut forbidden = CellSet::empty(grid);
    for o in &space.obstacles {
        forbidden.union_with(&grid.cells_within(o));
    }
    if let Some(blocked) = ctx.blocked {
        space.obstacles.extend(cell_runs(grid, blocked));
        forbidden.union_with(blocked);
    }
    let join = LaneJoin {
        origin: ctx.origin,
        ..LaneJoin::new(lane_y, queue_start_x(layout, params), params.min_turning_radius)
    };
    let h = direction.gear() * side * FRAC_PI_2;
    let (tx, ty) = target.center();
    let b = params.body.center_offset;
    let parked = Pose::new(tx - b * h.cos(), ty - b * h.sin(), h);
    let ds = params.maneuver_step();
    let (start, segs) = lattice::plan(parked, direction.gear(), &space, &join, ds)?;
    let poses = sample_chain(&start, &segs, ds);
    let end = *poses.last()?;
    if end.dist(&parked) > 1e-6 {
        return None;
    }
    poses_are_admissible(layout, &params.body, &poses, &forbidden)
        .then(|| (poses, chain_length(&segs)))
}

/// Place a shape so that its final pose is centered in `target`; returns
/// the sampled poses and the path length.
pub fn place_shape(
    params: &VehicleParams,
    shape: &TemplateShape,
    side: f64,
    lane_y: f64,
    target: &Rect,
) -> Option<(Vec<Pose>, f64)> {
    let mut segs = shape.turning_segments(side);
    let origin = Pose::new(0.0, lane_y, 0.0);
    let after = pose_along(&origin, &segs, chain_length(&segs));
    let h_final = shape.final_heading(side);
    let (tx, ty) = target.center();
    let b = params.body.center_offset;
    let ref_final_y = ty - b * h_final.sin();
    // The straight run moves along `side`.
    let straight = side * (ref_final_y - after.y);
    if straight < -1e-9 {
        return None;
    }
    segs.push(Segment {
        gear: shape.direction.gear(),
        curvature: 0.0,
        length: straight.max(0.0),
    });
    let ref_final_x = tx - b * h_final.cos();
    let start = Pose::new(ref_final_x - after.x, lane_y, 0.0);
    let poses = sample_chain(&start, &segs, params.maneuver_step());
    let end = *poses.last().unwrap();
    // Guard against numerical drift in the closed-form placement.
    if (end.x - ref_final_x).abs() > 1e-6 || (end.y - ref_final_y).abs() > 1e-6 {
        return None;
    }
    Some((poses, chain_length(&segs)))
}

/// Default lot and its library, generated once per test binary.
#[cfg(test)]
pub(crate) fn test_library() -> &'static (LotLayout, ManeuverLibrary) {
    static LIB: std::sync::OnceLock<(LotLayout, ManeuverLibrary)> = std::sync::OnceLock::new();
    LIB.get_or_init(|| {
        let layout = LotLayout::default_lot();
        let lib = ManeuverLibrary::generate(&layout, &VehicleParams::default())
            .expect("default lot is feasible");
        (layout, lib)
    })
}
