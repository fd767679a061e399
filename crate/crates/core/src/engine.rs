//! The simulation loop: arrivals, the vehicle state machine, per-step
//! safety checks, deadlock handling, metrics and the trace stream.
//!
//! Each step rebuilds the grid claims from scratch. Every vehicle in the lot
//! claims its body; maneuvering vehicles then claim their remaining sweep in
//! arrival order if their own check passes. Queuing vehicles are checked
//! against the finished claims, and the head of the outside queue enters
//! when its lookahead from the gate is clear. Verdicts are applied
//! synchronously.

use crate::allocation::{assign_spot, choose_lane, AllocationPolicy, LaneOpening, PolicyKind};
use crate::error::ConfigError;
use crate::geometry::{bodies_overlap, Pose};
use crate::lot::{seed_initial_occupancy, LaneId, LotLayout, SpotIndex, SpotStatus, SpotTable};
use crate::metrics::{ConstraintCounts, RunMetrics, VehicleRecord};
use crate::occupancy::{rasterize_footprint, CellSet, ClaimKind, GridClaims};
use crate::path::{
    advance_on_path, build_queuing_path, Direction, ManeuverInstance, ManeuverLibrary, VehiclePath,
};
use crate::safety::{
    check_maneuvering, check_queuing_with_plans, detect_deadlock, forward_reachable_queuing,
    maneuver_reachable, mutual_maneuver_conflicts, resolve_deadlock, Constraint, DeadlockMonitor,
    MemberManeuver, SafetyVerdict, DEFAULT_DEADLOCK_BOUND,
};
use crate::VehicleId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::io::Write;
use std::sync::Arc;

pub const TRACE_SCHEMA: &str = "lotsim-trace";
pub const TRACE_VERSION: u32 = 1;

/// Independent random streams derived from one seed, so that changing the
/// policy does not perturb arrivals, occupancy or lane choices.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    Arrivals = 1,
    Occupancy = 2,
    Lanes = 3,
    Directions = 4,
    Allocation = 5,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

fn default_delta_k() -> u32 {
    15
}
fn default_bound() -> u32 {
    DEFAULT_DEADLOCK_BOUND
}
fn default_true() -> bool {
    true
}
fn default_max_steps() -> u64 {
    1_000_000
}
fn default_idle_bound() -> u64 {
    3_000
}

/// Parameters of one simulation run. Vehicle geometry, speeds and the
/// sampling time come from the maneuver library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Mean time between arrivals, seconds.
    pub mean_interarrival: f64,
    pub policy: PolicyKind,
    #[serde(default)]
    pub delta_p: usize,
    pub lanes: LaneOpening,
    pub n_vehicles: usize,
    pub n_free_spots: usize,
    /// Queuing lookahead in steps.
    #[serde(default = "default_delta_k")]
    pub delta_k: u32,
    #[serde(default = "default_true")]
    pub resolve_deadlocks: bool,
    /// Consecutive deadlocked steps tolerated before the run stalls.
    #[serde(default = "default_bound")]
    pub deadlock_bound: u32,
    /// Consecutive steps without any motion tolerated before the run stalls.
    #[serde(default = "default_idle_bound")]
    pub idle_bound: u64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    /// Queuing vehicles also keep clear of the planned maneuvers of earlier
    /// vehicles that are still queuing.
    #[serde(default = "default_true")]
    pub yield_to_planned: bool,
    /// Run the pairwise body overlap scan every step.
    #[serde(default)]
    pub check_collisions: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mean_interarrival: 2.0,
            policy: PolicyKind::Is,
            delta_p: 4,
            lanes: LaneOpening::OneLane,
            n_vehicles: 30,
            n_free_spots: 36,
            delta_k: default_delta_k(),
            resolve_deadlocks: true,
            deadlock_bound: DEFAULT_DEADLOCK_BOUND,
            idle_bound: default_idle_bound(),
            max_steps: default_max_steps(),
            yield_to_planned: true,
            check_collisions: false,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|source| ConfigError::Parse {
            what: "run configuration".into(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Run(m.into()));
        if !(self.mean_interarrival.is_finite() && self.mean_interarrival > 0.0) {
            return bad("mean_interarrival must be positive");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive");
        }
        Ok(())
    }

    pub fn allocation(&self) -> AllocationPolicy {
        AllocationPolicy {
            kind: self.policy,
            delta_p: self.delta_p,
        }
    }
}

/// Arrival steps: cumulative exponential gaps, rounded up to the step grid.
pub fn generate_arrivals<R: Rng + ?Sized>(n: usize, mean_interarrival: f64, dt: f64, rng: &mut R) -> Vec<u64> {
    let exp = Exp::new(1.0 / mean_interarrival).expect("positive rate");
    let mut t = 0.0;
    (0..n)
        .map(|_| {
            t += exp.sample(rng);
            (t / dt - 1e-9).ceil().max(0.0) as u64
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    OutsideQueue,
    Queuing,
    Maneuvering,
    Parked,
    Rejected,
}

#[derive(Debug, Clone)]
pub struct Vehicle {
    pub id: VehicleId,
    pub arrival_step: u64,
    pub mode: Mode,
    pub lane: LaneId,
    pub spot: Option<SpotIndex>,
    pub path: Option<VehiclePath>,
    /// Progress along the path, meters.
    pub s: f64,
    pub v: f64,
    pub finish_step: Option<u64>,
    pub yield_steps: u64,
    pub regenerations: u32,
}

impl Vehicle {
    pub fn in_lot(&self) -> bool {
        matches!(self.mode, Mode::Queuing | Mode::Maneuvering)
    }

    pub fn pose(&self) -> Option<Pose> {
        self.path.as_ref().map(|p| p.pose_at(self.s))
    }

    fn path(&self) -> &VehiclePath {
        self.path.as_ref().expect("vehicle in the lot has a path")
    }

    /// At the maneuver start or beyond.
    fn at_maneuver(&self) -> bool {
        self.path().in_maneuver(self.s)
    }

    fn maneuver_step(&self) -> usize {
        let p = self.path();
        p.maneuver.index_at(p.maneuver_progress(self.s))
    }

    fn footprint(&self, claims: &GridClaims, library: &ManeuverLibrary) -> CellSet {
        if self.at_maneuver() {
            self.path().maneuver.footprints[self.maneuver_step()].clone()
        } else {
            rasterize_footprint(claims.grid(), &self.pose().unwrap(), &library.params.body)
        }
    }
}

#[derive(Serialize)]
struct TraceHeader<'a> {
    schema: &'a str,
    version: u32,
    dt: f64,
    config: &'a RunConfig,
}

#[derive(Serialize)]
struct VehicleTrace {
    k: u64,
    id: VehicleId,
    mode: Mode,
    lane: LaneId,
    s: f64,
    v: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    x: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    y: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    heading: Option<f64>,
    proceed: bool,
    constraint: Constraint,
    #[serde(skip_serializing_if = "Option::is_none")]
    blocker: Option<VehicleId>,
}

#[derive(Serialize)]
struct EventTrace<'a> {
    k: u64,
    event: &'a str,
    vehicles: &'a [VehicleId],
}

/// One run's world state.
pub struct Simulation<'a> {
    layout: &'a LotLayout,
    library: &'a ManeuverLibrary,
    config: RunConfig,
    vehicles: Vec<Vehicle>,
    spots: SpotTable,
    claims: GridClaims,
    outside: VecDeque<usize>,
    arrivals: Vec<u64>,
    next_arrival: usize,
    prev_x: Vec<Option<usize>>,
    lane_rng: ChaCha8Rng,
    direction_rng: ChaCha8Rng,
    alloc_rng: ChaCha8Rng,
    monitor: DeadlockMonitor,
    idle_steps: u64,
    k: u64,
    metrics: RunMetrics,
    trace: Option<Box<dyn Write + 'a>>,
    trace_error: Option<std::io::Error>,
}

impl<'a> Simulation<'a> {
    pub fn new(
        layout: &'a LotLayout,
        library: &'a ManeuverLibrary,
        config: RunConfig,
    ) -> Result<Self, ConfigError> {
        config.validate()?;
        let dt = library.params.dt;
        let arrivals = generate_arrivals(
            config.n_vehicles,
            config.mean_interarrival,
            dt,
            &mut stream_rng(config.seed, Stream::Arrivals),
        );
        let spots = seed_initial_occupancy(
            layout,
            config.n_free_spots,
            &mut stream_rng(config.seed, Stream::Occupancy),
        )?;
        if config.lanes.count() > layout.lanes.len() {
            return Err(ConfigError::Run(format!(
                "{} lanes requested but the lot has {}",
                config.lanes.count(),
                layout.lanes.len()
            )));
        }
        Ok(Self {
            layout,
            library,
            vehicles: Vec::with_capacity(config.n_vehicles),
            spots,
            claims: GridClaims::new(*layout.grid()),
            outside: VecDeque::new(),
            arrivals,
            next_arrival: 0,
            prev_x: vec![None; layout.lanes.len()],
            lane_rng: stream_rng(config.seed, Stream::Lanes),
            direction_rng: stream_rng(config.seed, Stream::Directions),
            alloc_rng: stream_rng(config.seed, Stream::Allocation),
            monitor: DeadlockMonitor::new(config.deadlock_bound),
            idle_steps: 0,
            k: 0,
            metrics: RunMetrics {
                vehicles: Vec::new(),
                queue_series: Vec::new(),
                mtt: None,
                mql: 0,
                stalled: false,
                stall_reason: None,
                steps: 0,
                rejected: 0,
                collisions: 0,
                deadlocks: 0,
                resolutions: 0,
                yields: ConstraintCounts::default(),
            },
            config,
            trace: None,
            trace_error: None,
        })
    }

    /// Stream a JSON-lines trace into `out`, starting with a header record.
    pub fn with_trace(mut self, out: impl Write + 'a) -> Self {
        self.trace = Some(Box::new(out));
        let header = TraceHeader {
            schema: TRACE_SCHEMA,
            version: TRACE_VERSION,
            dt: self.library.params.dt,
            config: &self.config,
        };
        let line = serde_json::to_string(&header).expect("header serializes");
        self.emit(line);
        self
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn claims(&self) -> &GridClaims {
        &self.claims
    }

    pub fn step_index(&self) -> u64 {
        self.k
    }

    pub fn metrics(&self) -> &RunMetrics {
        &self.metrics
    }

    /// Put a vehicle directly into the lot on `maneuver` with progress `s`
    /// (measured from the entrance). Used to build fixed scenarios; the
    /// spot is marked assigned. Returns the new id.
    pub fn place_vehicle(&mut self, maneuver: Arc<ManeuverInstance>, s: f64) -> VehicleId {
        let lane = maneuver.key.lane;
        let q = build_queuing_path(self.layout, &self.library.params, lane, &maneuver)
            .expect("scenario maneuver matches its lane");
        let path = VehiclePath::new(q, maneuver);
        let id = self.vehicles.len() as VehicleId;
        let spot = path.maneuver.spot;
        self.spots.set(spot, SpotStatus::Assigned(id));
        let mode = if path.in_maneuver(s) && s > q.length() + 1e-9 {
            Mode::Maneuvering
        } else {
            Mode::Queuing
        };
        self.vehicles.push(Vehicle {
            id,
            arrival_step: self.k,
            mode,
            lane,
            spot: Some(spot),
            s: s.min(path.length()),
            path: Some(path),
            v: 0.0,
            finish_step: None,
            yield_steps: 0,
            regenerations: 0,
        });
        id
    }

    fn pending(&self) -> bool {
        self.next_arrival < self.arrivals.len()
    }

    /// Whether the run has nothing left to do.
    pub fn finished(&self) -> bool {
        self.metrics.stalled
            || (!self.pending()
                && self.outside.is_empty()
                && !self.vehicles.iter().any(Vehicle::in_lot))
    }

    fn emit(&mut self, line: String) {
        if let Some(out) = self.trace.as_mut() {
            if self.trace_error.is_none() {
                if let Err(e) = writeln!(out, "{line}") {
                    self.trace_error = Some(e);
                }
            }
        }
    }

    fn event(&mut self, event: &str, vehicles: &[VehicleId]) {
        if self.trace.is_some() {
            let line = serde_json::to_string(&EventTrace {
                k: self.k,
                event,
                vehicles,
            })
            .expect("event serializes");
            self.emit(line);
        }
    }

    fn stall(&mut self, reason: String, members: &[VehicleId]) {
        self.event("stall", members);
        self.metrics.stalled = true;
        self.metrics.stall_reason = Some(reason);
    }

    fn admit_arrivals(&mut self) {
        while self.pending() && self.arrivals[self.next_arrival] <= self.k {
            let id = self.vehicles.len() as VehicleId;
            // Every vehicle draws from every stream so that runs with
            // different policies see the same lanes and directions.
            let lane = choose_lane(self.config.lanes, &mut self.lane_rng);
            let direction = if self.direction_rng.random_bool(0.5) {
                Direction::Forward
            } else {
                Direction::Reverse
            };
            let spot = assign_spot(
                self.layout,
                self.config.allocation(),
                id,
                self.prev_x[lane],
                lane,
                &mut self.spots,
                &mut self.alloc_rng,
            );
            let mut vehicle = Vehicle {
                id,
                arrival_step: self.arrivals[self.next_arrival],
                mode: Mode::Rejected,
                lane,
                spot,
                path: None,
                s: 0.0,
                v: 0.0,
                finish_step: None,
                yield_steps: 0,
                regenerations: 0,
            };
            if let Some(spot) = spot {
                self.prev_x[lane] = Some(spot.x);
                let maneuver = self
                    .library
                    .instance(lane, spot, direction)
                    .expect("library covers every spot from every lane");
                let q = build_queuing_path(self.layout, &self.library.params, lane, &maneuver)
                    .expect("assigned spot is served by the lane");
                vehicle.path = Some(VehiclePath::new(q, maneuver));
                vehicle.mode = Mode::OutsideQueue;
                self.outside.push_back(self.vehicles.len());
            }
            self.vehicles.push(vehicle);
            self.next_arrival += 1;
        }
    }

    fn count_yield(&mut self, c: Constraint) {
        let y = &mut self.metrics.yields;
        match c {
            Constraint::QueuingBody => y.queuing_body += 1,
            Constraint::QueuingManeuver => y.queuing_maneuver += 1,
            Constraint::QueuingPlanned => y.queuing_planned += 1,
            Constraint::ManeuverBody => y.maneuver_body += 1,
            Constraint::ManeuverManeuver => y.maneuver_maneuver += 1,
            Constraint::None => {}
        }
    }

    /// Advance the world by one step.
    pub fn step(&mut self) {
        if self.finished() {
            return;
        }
        let params = self.library.params;
        let dt = params.dt;
        self.admit_arrivals();

        // Bodies of everything in the lot.
        self.claims.reset();
        let active: Vec<usize> = (0..self.vehicles.len())
            .filter(|&i| self.vehicles[i].in_lot())
            .collect();
        let bodies: Vec<CellSet> = active
            .iter()
            .map(|&i| self.vehicles[i].footprint(&self.claims, self.library))
            .collect();
        for (&i, b) in active.iter().zip(&bodies) {
            self.claims.claim(ClaimKind::Body, self.vehicles[i].id, b.clone());
        }

        let mut verdicts: Vec<(usize, SafetyVerdict)> = Vec::with_capacity(active.len() + 1);
        // Maneuver claims in arrival order; vehicles holding at the maneuver
        // start are admitted here.
        for &i in &active {
            let v = &self.vehicles[i];
            if !v.at_maneuver() {
                continue;
            }
            let reach = maneuver_reachable(v.id, &v.path().maneuver, v.maneuver_step());
            let verdict = check_maneuvering(&reach, &self.claims);
            if verdict.proceed {
                self.claims.claim(ClaimKind::Maneuver, v.id, reach.cells);
                self.vehicles[i].mode = Mode::Maneuvering;
            }
            verdicts.push((i, verdict));
        }
        let lookahead = self.config.delta_k as f64 * params.queuing_step();
        // Planned sweeps of vehicles still queuing.
        let planned: Vec<(VehicleId, &CellSet)> = if self.config.yield_to_planned {
            active
                .iter()
                .map(|&i| &self.vehicles[i])
                .filter(|v| v.mode == Mode::Queuing)
                .map(|v| (v.id, v.path().maneuver.sweep()))
                .collect()
        } else {
            Vec::new()
        };
        for &i in &active {
            let v = &self.vehicles[i];
            if v.at_maneuver() {
                continue;
            }
            let reach = forward_reachable_queuing(v.id, v.path(), v.s, lookahead, &params, self.claims.grid());
            verdicts.push((i, check_queuing_with_plans(&reach, &self.claims, &planned)));
        }
        // Head of the outside queue.
        let mut admitted = None;
        if let Some(&h) = self.outside.front() {
            let v = &self.vehicles[h];
            let reach = forward_reachable_queuing(v.id, v.path(), 0.0, lookahead, &params, self.claims.grid());
            let verdict = check_queuing_with_plans(&reach, &self.claims, &planned);
            if verdict.proceed {
                self.outside.pop_front();
                self.vehicles[h].mode = Mode::Queuing;
                admitted = Some(h);
            }
            verdicts.push((h, verdict));
        }
        verdicts.sort_by_key(|(i, _)| *i);

        // Apply verdicts.
        let mut moved = admitted.is_some();
        for (i, verdict) in &verdicts {
            let v = &mut self.vehicles[*i];
            if v.mode == Mode::OutsideQueue {
                continue;
            }
            if verdict.proceed {
                let path = v.path.as_ref().unwrap();
                let s0 = v.s;
                if v.mode == Mode::Maneuvering {
                    v.v = params.maneuver_speed;
                    v.s = advance_on_path(v.s, v.v, dt, path.length());
                } else {
                    v.v = params.v_ref;
                    v.s = advance_on_path(v.s, v.v, dt, path.queuing.length());
                }
                moved |= v.s > s0;
            } else {
                v.v = 0.0;
                v.yield_steps += 1;
            }
        }
        for (_, verdict) in &verdicts {
            self.count_yield(verdict.violated);
        }

        self.trace_step(&verdicts);
        self.handle_deadlocks(&active, &bodies, &verdicts);

        // Retire vehicles that reached their spot.
        let mut parked = Vec::new();
        for v in self.vehicles.iter_mut() {
            if v.mode == Mode::Maneuvering && v.s >= v.path().length() - 1e-9 {
                v.mode = Mode::Parked;
                v.v = 0.0;
                v.finish_step = Some(self.k + 1);
                self.spots.set(v.spot.unwrap(), SpotStatus::Occupied);
                parked.push(v.id);
            }
        }
        if !parked.is_empty() {
            self.event("parked", &parked);
        }

        if self.config.check_collisions {
            self.metrics.collisions += self.body_overlaps().len() as u64;
        }
        self.metrics.queue_series.push(self.outside.len() as u32);
        self.k += 1;

        if !self.metrics.stalled {
            let waiting = !self.outside.is_empty() || self.vehicles.iter().any(Vehicle::in_lot);
            self.idle_steps = if moved || !waiting { 0 } else { self.idle_steps + 1 };
            if self.idle_steps > self.config.idle_bound {
                self.stall(format!("no motion for {} steps", self.idle_steps), &[]);
            } else if self.k >= self.config.max_steps && !self.finished() {
                self.stall(format!("step cap {} reached", self.config.max_steps), &[]);
            }
        }
    }

    fn trace_step(&mut self, verdicts: &[(usize, SafetyVerdict)]) {
        if self.trace.is_none() {
            return;
        }
        let mut lines = Vec::with_capacity(verdicts.len());
        for (i, verdict) in verdicts {
            let v = &self.vehicles[*i];
            let pose = v.pose().filter(|_| v.mode != Mode::OutsideQueue);
            let rec = VehicleTrace {
                k: self.k,
                id: v.id,
                mode: v.mode,
                lane: v.lane,
                s: v.s,
                v: v.v,
                x: pose.map(|p| p.x),
                y: pose.map(|p| p.y),
                heading: pose.map(|p| p.heading),
                proceed: verdict.proceed,
                constraint: verdict.violated,
                blocker: verdict.blocking_vehicle,
            };
            lines.push(serde_json::to_string(&rec).expect("record serializes"));
        }
        for l in lines {
            self.emit(l);
        }
    }

    fn handle_deadlocks(&mut self, active: &[usize], bodies: &[CellSet], verdicts: &[(usize, SafetyVerdict)]) {
        let waits: Vec<(VehicleId, Vec<VehicleId>)> = verdicts
            .iter()
            .filter(|(i, v)| !v.proceed && self.vehicles[*i].in_lot())
            .map(|(i, v)| (self.vehicles[*i].id, v.blockers.iter().map(|b| b.0).collect()))
            .collect();
        let maneuvering: Vec<(VehicleId, &CellSet, &CellSet)> = active
            .iter()
            .zip(bodies)
            .filter(|(&i, _)| self.vehicles[i].mode == Mode::Maneuvering)
            .map(|(&i, b)| {
                let v = &self.vehicles[i];
                (v.id, &v.path().maneuver.suffix[v.maneuver_step()], b)
            })
            .collect();
        let mutual = mutual_maneuver_conflicts(&maneuvering);
        let groups = detect_deadlock(&waits, &mutual);
        if groups.is_empty() {
            self.monitor.observe(false);
            return;
        }
        self.metrics.deadlocks += groups.len() as u64;
        for g in &groups {
            self.event("deadlock", g);
        }
        if self.config.resolve_deadlocks {
            let index_of = |id: VehicleId| id as usize;
            for g in &groups {
                let resolved = {
                let members: Vec<MemberManeuver<'_>> = g
                    .iter()
                    .map(|&id| &self.vehicles[index_of(id)])
                    .filter(|v| v.in_lot() && v.at_maneuver())
                    .map(|v| {
                        let mut blocked = CellSet::empty(self.claims.grid());
                        for (&j, b) in active.iter().zip(bodies) {
                            if self.vehicles[j].id != v.id {
                                blocked.union_with(b);
                            }
                        }
                        MemberManeuver {
                            id: v.id,
                            maneuver: &v.path().maneuver,
                            step: v.maneuver_step(),
                            blocked,
                        }
                    })
                    .collect();
                resolve_deadlock(&members, self.library, self.layout)
                };
                if let Some((id, new)) = resolved {
                    let v = &mut self.vehicles[index_of(id)];
                    let path = v.path.as_mut().unwrap();
                    path.maneuver = new;
                    v.s = path.queuing.length();
                    v.regenerations += 1;
                    self.metrics.resolutions += 1;
                    self.event("regenerated", &[id]);
                }
            }
        }
        if self.monitor.observe(true) {
            let members = groups[0].clone();
            self.stall(
                format!("deadlock {:?} unresolved for {} steps", members, self.monitor.streak()),
                &members,
            );
        }
    }

    /// Pairs of vehicles whose continuous bodies overlap, computed from
    /// poses alone. Includes vehicles parked during this run.
    pub fn body_overlaps(&self) -> Vec<(VehicleId, VehicleId)> {
        let body = &self.library.params.body;
        let placed: Vec<(VehicleId, Pose)> = self
            .vehicles
            .iter()
            .filter(|v| v.in_lot() || v.mode == Mode::Parked)
            .map(|v| (v.id, v.pose().unwrap()))
            .collect();
        let mut out = Vec::new();
        for (a, (i, pi)) in placed.iter().enumerate() {
            for (j, pj) in &placed[a + 1..] {
                if bodies_overlap(pi, body, pj, body) {
                    out.push((*i, *j));
                }
            }
        }
        out
    }

    /// Step until done and return the metrics.
    pub fn run(mut self) -> Result<RunMetrics, std::io::Error> {
        while !self.finished() {
            self.step();
        }
        self.into_metrics()
    }

    pub fn into_metrics(mut self) -> Result<RunMetrics, std::io::Error> {
        let dt = self.library.params.dt;
        if let Some(mut out) = self.trace.take() {
            out.flush()?;
        }
        if let Some(e) = self.trace_error.take() {
            return Err(e);
        }
        self.metrics.steps = self.k;
        self.metrics.vehicles = self
            .vehicles
            .iter()
            .map(|v| VehicleRecord {
                id: v.id,
                arrival_time: v.arrival_step as f64 * dt,
                finish_time: v.finish_step.map(|k| k as f64 * dt),
                lane: v.lane,
                spot: v.spot,
                direction: v.path.as_ref().map(|p| p.maneuver.key.direction),
                rejected: v.mode == Mode::Rejected,
                yield_steps: v.yield_steps,
                regenerations: v.regenerations,
            })
            .collect();
        self.metrics.finalize();
        Ok(self.metrics)
    }
}

/// Run one configuration to completion.
pub fn run(layout: &LotLayout, library: &ManeuverLibrary, config: &RunConfig) -> Result<RunMetrics, ConfigError> {
    let sim = Simulation::new(layout, library, config.clone())?;
    Ok(sim.run().expect("no trace sink, no I/O"))
}

/// Run one configuration while streaming the trace into `out`.
pub fn run_with_trace(
    layout: &LotLayout,
    library: &ManeuverLibrary,
    config: &RunConfig,
    out: impl Write,
) -> Result<Result<RunMetrics, std::io::Error>, ConfigError> {
    let sim = Simulation::new(layout, library, config.clone())?.with_trace(out);
    Ok(sim.run())
}
