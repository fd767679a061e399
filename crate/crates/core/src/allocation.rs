//! Centralized lane opening and spot assignment.

use crate::lot::{LaneId, LotLayout, SpotIndex, SpotStatus, SpotTable};
use crate::VehicleId;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    /// Random search: uniform over reachable free spots.
    Rs,
    /// Interval-first search: start `delta_p` columns past the previous
    /// vehicle on the same lane.
    Is,
    /// Farthest-first search: always start at the far end.
    Fs,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [PolicyKind::Rs, PolicyKind::Is, PolicyKind::Fs];

    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::Rs => "rs",
            PolicyKind::Is => "is",
            PolicyKind::Fs => "fs",
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rs" => Ok(PolicyKind::Rs),
            "is" => Ok(PolicyKind::Is),
            "fs" => Ok(PolicyKind::Fs),
            other => Err(format!("unknown policy `{other}` (expected rs, is or fs)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AllocationPolicy {
    pub kind: PolicyKind,
    /// Search interval; ignored by RS.
    pub delta_p: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LaneOpening {
    #[serde(rename = "1")]
    OneLane,
    #[serde(rename = "2")]
    TwoLanes,
}

impl LaneOpening {
    pub fn count(&self) -> usize {
        match self {
            LaneOpening::OneLane => 1,
            LaneOpening::TwoLanes => 2,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            LaneOpening::OneLane => "1L",
            LaneOpening::TwoLanes => "2L",
        }
    }
}

impl FromStr for LaneOpening {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "1" | "1L" => Ok(LaneOpening::OneLane),
            "2" | "2L" => Ok(LaneOpening::TwoLanes),
            other => Err(format!("unknown lane mode `{other}` (expected 1 or 2)")),
        }
    }
}

/// Column/row search over a lane-local spot frame.
///
/// Starting at `(x0, y0)`, each iteration wraps `x` back into range when it
/// runs past `n_x`, probes `(x, y)`, then `(x, 1 - y)`, and otherwise jumps to
/// `(x + 1 + delta_p, y0)`. `occupied(x, y)` must report assigned spots as
/// occupied. Returns `None` once the wrapped column sequence revisits a
/// column, meaning no free spot is reachable.
pub fn spot_search(
    delta_p: usize,
    x0: usize,
    y0: usize,
    n_x: usize,
    occupied: impl Fn(usize, usize) -> bool,
) -> Option<(usize, usize)> {
    assert!(n_x >= 1, "spot search needs at least one column");
    assert!(y0 <= 1);
    let mut seen = vec![false; n_x];
    let mut x = x0;
    let mut y = y0;
    loop {
        if x >= n_x {
            x = if n_x.is_multiple_of(delta_p + 1) {
                (x + 1) % n_x
            } else {
                x % n_x
            };
        }
        if seen[x] {
            return None;
        }
        seen[x] = true;
        if !occupied(x, y) {
            return Some((x, y));
        }
        y = 1 - y;
        if !occupied(x, y) {
            return Some((x, y));
        }
        x += 1 + delta_p;
        y = y0;
    }
}

pub fn choose_lane<R: Rng + ?Sized>(opening: LaneOpening, rng: &mut R) -> LaneId {
    match opening {
        LaneOpening::OneLane => 0,
        LaneOpening::TwoLanes => rng.random_range(0..2),
    }
}

/// Assign a spot to `vehicle` arriving on `lane` and mark it assigned.
/// `prev_x` is the column of the previous assignment on the same lane.
pub fn assign_spot<R: Rng + ?Sized>(
    layout: &LotLayout,
    policy: AllocationPolicy,
    vehicle: VehicleId,
    prev_x: Option<usize>,
    lane: LaneId,
    spots: &mut SpotTable,
    rng: &mut R,
) -> Option<SpotIndex> {
    let l = layout.lane(lane);
    let chosen = match policy.kind {
        PolicyKind::Rs => {
            let reachable: Vec<SpotIndex> = spots
                .free_spots()
                .filter(|s| l.local_y(s.row).is_some())
                .collect();
            if reachable.is_empty() {
                None
            } else {
                Some(reachable[rng.random_range(0..reachable.len())])
            }
        }
        PolicyKind::Is | PolicyKind::Fs => {
            let x0 = match (policy.kind, prev_x) {
                (PolicyKind::Is, Some(px)) => px + 1 + policy.delta_p,
                _ => 0,
            };
            spot_search(policy.delta_p, x0, 0, layout.n_x, |x, y| {
                !spots.is_free(layout.lane_spot(lane, x, y))
            })
            .map(|(x, y)| layout.lane_spot(lane, x, y))
        }
    }?;
    spots.set(chosen, SpotStatus::Assigned(vehicle));
    Some(chosen)
}
