//! Shared occupancy grid over the lot.
//!
//! Cell `(i, j)` covers the world square `[i*d, (i+1)*d) x [j*d, (j+1)*d)`.
//! A body occupies a cell iff the two share strictly positive area. Cell sets
//! are dense bitsets over the whole grid, so intersection tests are a handful
//! of word-wise ANDs.

use crate::geometry::{body_aabb, BodyDims, Pose, Rect, AREA_EPS};
use crate::VehicleId;
use std::fmt::Write as _;

/// Grid dimensions: `cols x rows` cells of edge `cell` meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub cols: usize,
    pub rows: usize,
    pub cell: f64,
}

impl GridSpec {
    pub fn new(cols: usize, rows: usize, cell: f64) -> Self {
        Self { cols, rows, cell }
    }

    pub fn len(&self) -> usize {
        self.cols * self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.cols + i
    }

    pub fn cell_rect(&self, i: usize, j: usize) -> Rect {
        let d = self.cell;
        Rect::new(
            i as f64 * d,
            j as f64 * d,
            (i + 1) as f64 * d,
            (j + 1) as f64 * d,
        )
    }

    /// Cells whose squares lie inside `r` (boundaries are treated as
    /// inclusive up to a small tolerance).
    pub fn cells_within(&self, r: &Rect) -> CellSet {
        let mut set = CellSet::empty(self);
        let d = self.cell;
        let i0 = ((r.x0 / d) - 1e-9).ceil().max(0.0) as usize;
        let j0 = ((r.y0 / d) - 1e-9).ceil().max(0.0) as usize;
        let i1 = (((r.x1 / d) + 1e-9).floor().max(0.0) as usize).min(self.cols);
        let j1 = (((r.y1 / d) + 1e-9).floor().max(0.0) as usize).min(self.rows);
        for j in j0..j1 {
            for i in i0..i1 {
                set.insert(self, i, j);
            }
        }
        set
    }
}

/// Set of grid cells, stored as a dense bitset sized to its grid.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct CellSet {
    words: Vec<u64>,
}

impl std::fmt::Debug for CellSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CellSet").field("len", &self.len()).finish()
    }
}

impl CellSet {
    pub fn empty(grid: &GridSpec) -> Self {
        Self {
            words: vec![0; grid.len().div_ceil(64)],
        }
    }

    pub fn from_cells(grid: &GridSpec, cells: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut s = Self::empty(grid);
        for (i, j) in cells {
            s.insert(grid, i, j);
        }
        s
    }

    pub fn insert(&mut self, grid: &GridSpec, i: usize, j: usize) {
        debug_assert!(i < grid.cols && j < grid.rows);
        let k = grid.index(i, j);
        self.words[k / 64] |= 1 << (k % 64);
    }

    pub fn contains(&self, grid: &GridSpec, i: usize, j: usize) -> bool {
        if i >= grid.cols || j >= grid.rows {
            return false;
        }
        let k = grid.index(i, j);
        self.words[k / 64] & (1 << (k % 64)) != 0
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn union_with(&mut self, other: &CellSet) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= *b;
        }
    }

    pub fn union(&self, other: &CellSet) -> CellSet {
        let mut out = self.clone();
        out.union_with(other);
        out
    }

    pub fn remove_all(&mut self, other: &CellSet) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= !*b;
        }
    }

    pub fn intersects(&self, other: &CellSet) -> bool {
        self.words
            .iter()
            .zip(&other.words)
            .any(|(a, b)| a & b != 0)
    }

    pub fn intersection_len(&self, other: &CellSet) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    pub fn is_subset(&self, other: &CellSet) -> bool {
        self.words
            .iter()
            .zip(&other.words)
            .all(|(a, b)| a & !b == 0)
    }

    /// Cells as `(i, j)` pairs in row-major order.
    pub fn cells<'a>(&'a self, grid: &'a GridSpec) -> impl Iterator<Item = (usize, usize)> + 'a {
        self.words.iter().enumerate().flat_map(move |(w, &bits)| {
            (0..64).filter_map(move |b| {
                if bits & (1 << b) == 0 {
                    return None;
                }
                let k = w * 64 + b;
                Some((k % grid.cols, k / grid.cols))
            })
        })
    }

    /// Shift every cell by `(di, dj)`; cells falling off the grid are dropped.
    pub fn shifted(&self, grid: &GridSpec, di: isize, dj: isize) -> CellSet {
        self.transfer(grid, grid, di, dj)
    }

    /// Shift every cell by `(di, dj)` from grid `from` into grid `to`.
    pub fn transfer(&self, from: &GridSpec, to: &GridSpec, di: isize, dj: isize) -> CellSet {
        let mut out = CellSet::empty(to);
        for (i, j) in self.cells(from) {
            let (ni, nj) = (i as isize + di, j as isize + dj);
            if ni >= 0 && nj >= 0 && (ni as usize) < to.cols && (nj as usize) < to.rows {
                out.insert(to, ni as usize, nj as usize);
            }
        }
        out
    }
}

/// Cells sharing positive area with the oriented body rectangle. Parts of
/// the body outside the grid are clipped away.
pub fn rasterize_footprint(grid: &GridSpec, pose: &Pose, body: &BodyDims) -> CellSet {
    let mut set = CellSet::empty(grid);
    add_footprint(grid, pose, body, &mut set);
    set
}

fn add_footprint(grid: &GridSpec, pose: &Pose, body: &BodyDims, set: &mut CellSet) {
    if body.is_degenerate() {
        return;
    }
    let corners = body.corners(pose);
    let bb = body_aabb(pose, body);
    let d = grid.cell;
    let i0 = (bb.x0 / d).floor().max(0.0) as usize;
    let j0 = (bb.y0 / d).floor().max(0.0) as usize;
    let i1 = ((bb.x1 / d).ceil().max(0.0) as usize).min(grid.cols);
    let j1 = ((bb.y1 / d).ceil().max(0.0) as usize).min(grid.rows);
    let axis_aligned = (pose.heading.sin() * pose.heading.cos()).abs() < 1e-12;
    // Separating axes: the cell edges (x, y) are covered by the bounding box
    // test, the body edges by projections onto its own axes.
    let axes = [
        (pose.heading.cos(), pose.heading.sin()),
        (-pose.heading.sin(), pose.heading.cos()),
    ];
    let body_span = axes.map(|(ax, ay)| {
        corners.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
            let v = c.0 * ax + c.1 * ay;
            (lo.min(v), hi.max(v))
        })
    });
    let half = 0.5 * d;
    for j in j0..j1 {
        for i in i0..i1 {
            let cell = grid.cell_rect(i, j);
            let hit = cell.overlaps(&bb)
                && (axis_aligned
                    || axes.iter().zip(&body_span).all(|(&(ax, ay), &(lo, hi))| {
                        let (cx, cy) = cell.center();
                        let c = cx * ax + cy * ay;
                        let r = half * (ax.abs() + ay.abs());
                        hi > c - r + AREA_EPS && c + r > lo + AREA_EPS
                    }));
            if hit {
                set.insert(grid, i, j);
            }
        }
    }
}

/// Union of footprints over a pose sequence.
pub fn rasterize_swept(grid: &GridSpec, poses: &[Pose], body: &BodyDims) -> CellSet {
    let mut set = CellSet::empty(grid);
    for p in poses {
        add_footprint(grid, p, body, &mut set);
    }
    set
}

pub fn claims_intersect(a: &CellSet, b: &CellSet) -> bool {
    a.intersects(b)
}

/// Kind of a tagged claim on the shared grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClaimKind {
    /// Current body footprint.
    Body,
    /// Remaining sweep of an ongoing maneuver.
    Maneuver,
}

/// Per-step tagged claims shared by all vehicles of one run.
#[derive(Debug, Clone)]
pub struct GridClaims {
    grid: GridSpec,
    bodies: Vec<(VehicleId, CellSet)>,
    maneuvers: Vec<(VehicleId, CellSet)>,
    epoch: u64,
}

impl GridClaims {
    pub fn new(grid: GridSpec) -> Self {
        Self {
            grid,
            bodies: Vec::new(),
            maneuvers: Vec::new(),
            epoch: 0,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Clear all claims and start a new epoch.
    pub fn reset(&mut self) {
        self.bodies.clear();
        self.maneuvers.clear();
        self.epoch += 1;
    }

    pub fn claim(&mut self, kind: ClaimKind, owner: VehicleId, cells: CellSet) {
        match kind {
            ClaimKind::Body => self.bodies.push((owner, cells)),
            ClaimKind::Maneuver => self.maneuvers.push((owner, cells)),
        }
    }

    pub fn bodies(&self) -> &[(VehicleId, CellSet)] {
        &self.bodies
    }

    pub fn maneuvers(&self) -> &[(VehicleId, CellSet)] {
        &self.maneuvers
    }

    pub fn body_of(&self, id: VehicleId) -> Option<&CellSet> {
        self.bodies.iter().find(|(v, _)| *v == id).map(|(_, c)| c)
    }

    pub fn maneuver_of(&self, id: VehicleId) -> Option<&CellSet> {
        self.maneuvers.iter().find(|(v, _)| *v == id).map(|(_, c)| c)
    }

    /// Text raster, top row first: `B` body, `M` maneuver-only, `.` free.
    pub fn render(&self) -> String {
        let g = &self.grid;
        let mut body = CellSet::empty(g);
        for (_, c) in &self.bodies {
            body.union_with(c);
        }
        let mut man = CellSet::empty(g);
        for (_, c) in &self.maneuvers {
            man.union_with(c);
        }
        let mut out = String::with_capacity(g.len() + g.rows);
        for j in (0..g.rows).rev() {
            for i in 0..g.cols {
                let ch = if body.contains(g, i, j) {
                    'B'
                } else if man.contains(g, i, j) {
                    'M'
                } else {
                    '.'
                };
                out.push(ch);
            }
            let _ = writeln!(out);
        }
        out
    }
}
