//! Per-run outputs: task times, queue series and counters.

use crate::lot::{LaneId, SpotIndex};
use crate::path::Direction;
use crate::VehicleId;
use serde::{Deserialize, Serialize};

/// Mean of `finish - arrival` over the given pairs; `None` when empty.
pub fn mean_task_time(times: &[(f64, f64)]) -> Option<f64> {
    if times.is_empty() {
        return None;
    }
    Some(times.iter().map(|(t0, tf)| tf - t0).sum::<f64>() / times.len() as f64)
}

/// Peak of the outside-queue series.
pub fn max_queue_length(series: &[u32]) -> u32 {
    series.iter().copied().max().unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub id: VehicleId,
    /// Arrival time on the step grid, seconds.
    pub arrival_time: f64,
    /// Time the vehicle came to rest in its spot, seconds.
    pub finish_time: Option<f64>,
    pub lane: LaneId,
    pub spot: Option<SpotIndex>,
    /// Direction of the template actually driven.
    pub direction: Option<Direction>,
    pub rejected: bool,
    /// Steps spent with v = 0 inside the lot.
    pub yield_steps: u64,
    pub regenerations: u32,
}

/// How often each constraint stopped a vehicle, counted per vehicle-step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintCounts {
    pub queuing_body: u64,
    pub queuing_maneuver: u64,
    pub queuing_planned: u64,
    pub maneuver_body: u64,
    pub maneuver_maneuver: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub vehicles: Vec<VehicleRecord>,
    /// Vehicles waiting outside the lot after each step.
    pub queue_series: Vec<u32>,
    /// Mean task time over parked vehicles, seconds.
    pub mtt: Option<f64>,
    /// Maximum queue length.
    pub mql: u32,
    pub stalled: bool,
    pub stall_reason: Option<String>,
    pub steps: u64,
    pub rejected: u32,
    /// Body overlaps found by the independent geometric scan.
    pub collisions: u64,
    pub deadlocks: u64,
    pub resolutions: u64,
    pub yields: ConstraintCounts,
}

impl RunMetrics {
    /// Recompute `mtt` and `mql` from the records and the series.
    pub fn finalize(&mut self) {
        let times: Vec<(f64, f64)> = self
            .vehicles
            .iter()
            .filter_map(|v| v.finish_time.map(|tf| (v.arrival_time, tf)))
            .collect();
        self.mtt = mean_task_time(&times);
        self.mql = max_queue_length(&self.queue_series);
        self.rejected = self.vehicles.iter().filter(|v| v.rejected).count() as u32;
    }

    pub fn parked(&self) -> usize {
        self.vehicles.iter().filter(|v| v.finish_time.is_some()).count()
    }
}
