//! Discrete-time simulation of an autonomous vehicle fleet parking in a
//! two-lane lot: centralized spot allocation and path generation, with
//! per-vehicle collision avoidance on a shared occupancy grid.

pub mod allocation;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod lattice;
pub mod lot;
pub mod metrics;
pub mod occupancy;
pub mod path;
pub mod plot;
pub mod render;
pub mod safety;

pub use allocation::{AllocationPolicy, LaneOpening, PolicyKind};
pub use engine::{run, run_with_trace, RunConfig, Simulation};
pub use error::{ConfigError, IoError, PathError};
pub use experiment::{run_sweep, AggregateCell, SweepSpec};
pub use lot::{LotConfig, LotLayout, SpotIndex};
pub use metrics::RunMetrics;
pub use path::{ManeuverLibrary, VehicleParams};

/// Arrival index of a vehicle; smaller ids arrived earlier.
pub type VehicleId = u32;
