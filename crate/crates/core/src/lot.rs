//! Static lot geometry: lanes, spot rows, gates and the initial spot table.
//!
//! World frame: meters, origin at the lower-left corner of the lot, X along
//! the lanes. Spot column index `x = 0` is the column farthest from the
//! gate, i.e. the rightmost one in world coordinates.

use crate::error::ConfigError;
use crate::geometry::{Pose, Rect};
use crate::occupancy::GridSpec;
use crate::VehicleId;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub type LaneId = usize;

/// The bundled default lot: 66 m x 16 m, two adjacent 3 m lanes between two
/// rows of 22 spots (5 m deep, 3 m wide).
pub const DEFAULT_LOT_TOML: &str = include_str!("../../../config/lot.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowConfig {
    /// Lower world Y of the row; the row spans `spot_depth_m` upwards.
    pub y_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneConfig {
    pub center_y: f64,
    pub width: f64,
    /// Physical rows served by this lane, indexed by the lane-local Y.
    /// `rows[0]` is the preferred row (the one next to the lane).
    pub rows: [usize; 2],
}

/// On-disk lot description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LotConfig {
    pub length_m: f64,
    pub width_m: f64,
    pub grid_size_m: f64,
    /// Spot extent along the lane.
    pub spot_pitch_m: f64,
    /// Spot extent across the lane.
    pub spot_depth_m: f64,
    pub entrance: Pose,
    pub exit: Pose,
    pub rows: Vec<RowConfig>,
    pub lanes: Vec<LaneConfig>,
}

impl LotConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            what: "lot configuration".into(),
            source,
        })
    }

    pub fn default_lot() -> Self {
        Self::from_toml(DEFAULT_LOT_TOML).expect("bundled lot configuration parses")
    }
}

/// Physical spot: column along the lane and physical row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpotIndex {
    pub x: usize,
    pub row: usize,
}

impl std::fmt::Display for SpotIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, row {})", self.x, self.row)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpotStatus {
    Free,
    Assigned(VehicleId),
    Occupied,
}

#[derive(Debug, Clone)]
pub struct Lane {
    pub id: LaneId,
    pub center_y: f64,
    pub width: f64,
    pub rows: [usize; 2],
}

impl Lane {
    pub fn rect(&self, length: f64) -> Rect {
        Rect::new(
            0.0,
            self.center_y - self.width / 2.0,
            length,
            self.center_y + self.width / 2.0,
        )
    }

    /// Lane-local Y of a physical row, if the lane serves it.
    pub fn local_y(&self, row: usize) -> Option<usize> {
        self.rows.iter().position(|&r| r == row)
    }
}

/// Validated, immutable lot geometry.
#[derive(Debug, Clone)]
pub struct LotLayout {
    pub length_m: f64,
    pub width_m: f64,
    pub grid_size_m: f64,
    pub spot_pitch_m: f64,
    pub spot_depth_m: f64,
    pub entrance: Pose,
    pub exit: Pose,
    pub n_x: usize,
    pub row_y_min: Vec<f64>,
    pub lanes: Vec<Lane>,
    grid: GridSpec,
}

fn is_multiple(value: f64, unit: f64) -> bool {
    let q = value / unit;
    (q - q.round()).abs() < 1e-9
}

impl LotLayout {
    pub fn build(config: &LotConfig) -> Result<Self, ConfigError> {
        let err = |m: String| ConfigError::Layout(m);
        for (name, v) in [
            ("length_m", config.length_m),
            ("width_m", config.width_m),
            ("grid_size_m", config.grid_size_m),
            ("spot_pitch_m", config.spot_pitch_m),
            ("spot_depth_m", config.spot_depth_m),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(err(format!("{name} must be positive, got {v}")));
            }
        }
        if !is_multiple(config.length_m, config.spot_pitch_m) {
            return Err(err(format!(
                "spot pitch {} does not tile lot length {}",
                config.spot_pitch_m, config.length_m
            )));
        }
        if !is_multiple(config.length_m, config.grid_size_m)
            || !is_multiple(config.width_m, config.grid_size_m)
        {
            return Err(err("lot dimensions must be multiples of the grid size".into()));
        }
        let n_x = (config.length_m / config.spot_pitch_m).round() as usize;
        if config.rows.is_empty() || config.lanes.is_empty() {
            return Err(err("at least one row and one lane are required".into()));
        }
        let lot = Rect::new(0.0, 0.0, config.length_m, config.width_m);
        let row_rects: Vec<Rect> = config
            .rows
            .iter()
            .map(|r| Rect::new(0.0, r.y_min, config.length_m, r.y_min + config.spot_depth_m))
            .collect();
        for (k, r) in row_rects.iter().enumerate() {
            if !lot.contains_rect(r, 1e-9) {
                return Err(err(format!("row {k} leaves the lot")));
            }
            for (m, o) in row_rects.iter().enumerate().skip(k + 1) {
                if r.overlaps(o) {
                    return Err(err(format!("rows {k} and {m} overlap")));
                }
            }
        }
        let lanes: Vec<Lane> = config
            .lanes
            .iter()
            .enumerate()
            .map(|(id, l)| Lane {
                id,
                center_y: l.center_y,
                width: l.width,
                rows: l.rows,
            })
            .collect();
        for lane in &lanes {
            let lr = lane.rect(config.length_m);
            if lane.width <= 0.0 || !lot.contains_rect(&lr, 1e-9) {
                return Err(err(format!("lane {} leaves the lot", lane.id)));
            }
            if lane.rows[0] == lane.rows[1] {
                return Err(err(format!("lane {} must serve two distinct rows", lane.id)));
            }
            for &r in &lane.rows {
                if r >= row_rects.len() {
                    return Err(err(format!("lane {} references unknown row {r}", lane.id)));
                }
            }
            for (k, r) in row_rects.iter().enumerate() {
                if r.overlaps(&lr) {
                    return Err(err(format!("lane {} overlaps row {k}", lane.id)));
                }
            }
            // The preferred row must border the lane.
            let pr = &row_rects[lane.rows[0]];
            let touches =
                (pr.y1 - lr.y0).abs() < 1e-9 || (pr.y0 - lr.y1).abs() < 1e-9;
            if !touches {
                return Err(err(format!(
                    "preferred row {} does not border lane {}",
                    lane.rows[0], lane.id
                )));
            }
        }
        let grid = GridSpec::new(
            (config.length_m / config.grid_size_m).round() as usize,
            (config.width_m / config.grid_size_m).round() as usize,
            config.grid_size_m,
        );
        Ok(Self {
            length_m: config.length_m,
            width_m: config.width_m,
            grid_size_m: config.grid_size_m,
            spot_pitch_m: config.spot_pitch_m,
            spot_depth_m: config.spot_depth_m,
            entrance: config.entrance,
            exit: config.exit,
            n_x,
            row_y_min: config.rows.iter().map(|r| r.y_min).collect(),
            lanes,
            grid,
        })
    }

    pub fn default_lot() -> Self {
        Self::build(&LotConfig::default_lot()).expect("bundled lot is valid")
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn rect(&self) -> Rect {
        Rect::new(0.0, 0.0, self.length_m, self.width_m)
    }

    pub fn n_rows(&self) -> usize {
        self.row_y_min.len()
    }

    pub fn total_spots(&self) -> usize {
        self.n_x * self.n_rows()
    }

    pub fn lane(&self, id: LaneId) -> &Lane {
        &self.lanes[id]
    }

    pub fn row_rect(&self, row: usize) -> Rect {
        let y0 = self.row_y_min[row];
        Rect::new(0.0, y0, self.length_m, y0 + self.spot_depth_m)
    }

    /// +1 when the row lies above the lane, -1 when below.
    pub fn row_side(&self, lane: LaneId, row: usize) -> f64 {
        let (_, cy) = self.row_rect(row).center();
        if cy > self.lanes[lane].center_y {
            1.0
        } else {
            -1.0
        }
    }

    pub fn spot_world_rect(&self, idx: SpotIndex) -> Result<Rect, ConfigError> {
        if idx.x >= self.n_x || idx.row >= self.n_rows() {
            return Err(ConfigError::SpotIndex(idx.to_string()));
        }
        let col = self.n_x - 1 - idx.x;
        let x0 = col as f64 * self.spot_pitch_m;
        let y0 = self.row_y_min[idx.row];
        Ok(Rect::new(
            x0,
            y0,
            x0 + self.spot_pitch_m,
            y0 + self.spot_depth_m,
        ))
    }

    /// Inverse of [`Self::spot_world_rect`]: the spot containing a point.
    pub fn spot_at(&self, px: f64, py: f64) -> Option<SpotIndex> {
        if px < 0.0 || px >= self.length_m {
            return None;
        }
        let row = self
            .row_y_min
            .iter()
            .position(|&y0| py >= y0 && py < y0 + self.spot_depth_m)?;
        let col = (px / self.spot_pitch_m).floor() as usize;
        Some(SpotIndex {
            x: self.n_x - 1 - col,
            row,
        })
    }

    pub fn all_spots(&self) -> impl Iterator<Item = SpotIndex> + '_ {
        (0..self.n_rows()).flat_map(move |row| (0..self.n_x).map(move |x| SpotIndex { x, row }))
    }

    pub fn spot_slot(&self, idx: SpotIndex) -> usize {
        idx.row * self.n_x + idx.x
    }

    /// Physical spot addressed by a lane-local `(x, y)`.
    pub fn lane_spot(&self, lane: LaneId, x: usize, y: usize) -> SpotIndex {
        SpotIndex {
            x,
            row: self.lanes[lane].rows[y],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpotState {
    pub index: SpotIndex,
    pub status: SpotStatus,
}

/// Status of every spot, indexed by [`LotLayout::spot_slot`].
#[derive(Debug, Clone)]
pub struct SpotTable {
    n_x: usize,
    states: Vec<SpotState>,
}

impl SpotTable {
    pub fn all_free(layout: &LotLayout) -> Self {
        let states = layout
            .all_spots()
            .map(|index| SpotState {
                index,
                status: SpotStatus::Free,
            })
            .collect();
        Self {
            n_x: layout.n_x,
            states,
        }
    }

    pub fn get(&self, idx: SpotIndex) -> SpotStatus {
        self.states[idx.row * self.n_x + idx.x].status
    }

    pub fn is_free(&self, idx: SpotIndex) -> bool {
        self.get(idx) == SpotStatus::Free
    }

    pub fn set(&mut self, idx: SpotIndex, status: SpotStatus) {
        self.states[idx.row * self.n_x + idx.x].status = status;
    }

    pub fn states(&self) -> &[SpotState] {
        &self.states
    }

    pub fn count(&self, f: impl Fn(SpotStatus) -> bool) -> usize {
        self.states.iter().filter(|s| f(s.status)).count()
    }

    pub fn free_spots(&self) -> impl Iterator<Item = SpotIndex> + '_ {
        self.states
            .iter()
            .filter(|s| s.status == SpotStatus::Free)
            .map(|s| s.index)
    }
}

/// Pick exactly `n_free` free spots uniformly at random; the rest start
/// physically occupied.
pub fn seed_initial_occupancy<R: Rng + ?Sized>(
    layout: &LotLayout,
    n_free: usize,
    rng: &mut R,
) -> Result<SpotTable, ConfigError> {
    let total = layout.total_spots();
    if n_free > total {
        return Err(ConfigError::FreeSpots {
            requested: n_free,
            total,
        });
    }
    let mut table = SpotTable::all_free(layout);
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(rng);
    for &slot in &order[n_free..] {
        table.states[slot].status = SpotStatus::Occupied;
    }
    Ok(table)
}
