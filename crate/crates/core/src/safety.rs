//! Per-vehicle collision checks against the shared grid.
//!
//! A queuing vehicle looks ahead `delta_k` steps along its path (set D) and
//! must keep D clear of every other body and of the maneuver claims of
//! earlier arrivals. A maneuvering vehicle checks its remaining sweep (set
//! D_M) the same way. Mutual waits are detected on the yields-to graph and
//! resolved by regenerating a maneuver.

use crate::occupancy::{rasterize_footprint, CellSet, GridClaims, GridSpec};
use crate::geometry::BodyDims;
use crate::lot::LotLayout;
use crate::path::{ManeuverInstance, ManeuverLibrary, VehicleParams, VehiclePath};
use crate::VehicleId;
use petgraph::algo::tarjan_scc;
use petgraph::graphmap::DiGraphMap;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Default number of consecutive deadlocked steps before a run stalls.
pub const DEFAULT_DEADLOCK_BOUND: u32 = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReachKind {
    Queuing,
    Maneuver,
}

#[derive(Debug, Clone)]
pub struct ReachableSet {
    pub owner: VehicleId,
    pub kind: ReachKind,
    pub cells: CellSet,
}

/// Which constraint stopped a vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    None,
    /// Queuing lookahead hits another body.
    QueuingBody,
    /// Queuing lookahead hits the maneuver claim of an earlier arrival.
    QueuingManeuver,
    /// Queuing lookahead hits the planned maneuver of an earlier vehicle
    /// that is still queuing.
    QueuingPlanned,
    /// Remaining maneuver sweep hits another body.
    ManeuverBody,
    /// Remaining maneuver sweep hits the maneuver claim of an earlier arrival.
    ManeuverManeuver,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SafetyVerdict {
    pub proceed: bool,
    pub blocking_vehicle: Option<VehicleId>,
    pub violated: Constraint,
    /// Every conflict, in arrival order of the other vehicle.
    pub blockers: Vec<(VehicleId, Constraint)>,
}

impl SafetyVerdict {
    pub fn clear() -> Self {
        Self {
            proceed: true,
            blocking_vehicle: None,
            violated: Constraint::None,
            blockers: Vec::new(),
        }
    }

    fn from_blockers(mut blockers: Vec<(VehicleId, Constraint)>) -> Self {
        if blockers.is_empty() {
            return Self::clear();
        }
        blockers.sort_by_key(|&(v, c)| (v, c as u8));
        Self {
            proceed: false,
            blocking_vehicle: Some(blockers[0].0),
            violated: blockers[0].1,
            blockers,
        }
    }
}

/// Cells covered while driving from progress `s` to `s + lookahead` along
/// `path`, clamped at the path end. The straight queuing part is the body
/// stretched along the lane, which equals the union of its poses; once the
/// lookahead reaches the maneuver, the maneuver footprints are added.
pub fn forward_reachable_queuing(
    owner: VehicleId,
    path: &VehiclePath,
    s: f64,
    lookahead: f64,
    params: &VehicleParams,
    grid: &GridSpec,
) -> ReachableSet {
    let q_len = path.queuing.length();
    let s0 = s.min(q_len);
    let reach = (s + lookahead).min(path.length());
    let straight = (reach.min(q_len) - s0).max(0.0);
    let stretched = BodyDims {
        length: params.body.length + straight,
        width: params.body.width,
        center_offset: params.body.center_offset + straight / 2.0,
    };
    let mut cells = rasterize_footprint(grid, &path.queuing.pose_at(s0), &stretched);
    if reach > q_len + 1e-9 {
        let m = &path.maneuver;
        let last = m.index_at(reach - q_len);
        let first = m.index_at(s.max(q_len) - q_len);
        for fp in &m.footprints[first..=last] {
            cells.union_with(fp);
        }
    }
    ReachableSet {
        owner,
        kind: ReachKind::Queuing,
        cells,
    }
}

/// Remaining sweep of a maneuver at sample `m`.
pub fn maneuver_reachable(owner: VehicleId, maneuver: &ManeuverInstance, m: usize) -> ReachableSet {
    ReachableSet {
        owner,
        kind: ReachKind::Maneuver,
        cells: maneuver.suffix[m.min(maneuver.steps())].clone(),
    }
}

fn check(
    reach: &ReachableSet,
    claims: &GridClaims,
    on_body: Constraint,
    on_maneuver: Constraint,
) -> SafetyVerdict {
    let i = reach.owner;
    let mut blockers = Vec::new();
    for (j, body) in claims.bodies() {
        if *j != i && reach.cells.intersects(body) {
            blockers.push((*j, on_body));
        }
    }
    for (l, sweep) in claims.maneuvers() {
        if *l < i && reach.cells.intersects(sweep) {
            blockers.push((*l, on_maneuver));
        }
    }
    SafetyVerdict::from_blockers(blockers)
}

/// Queuing rule: D clear of all other bodies and of earlier maneuver claims.
pub fn check_queuing(reach: &ReachableSet, claims: &GridClaims) -> SafetyVerdict {
    check(reach, claims, Constraint::QueuingBody, Constraint::QueuingManeuver)
}

/// Queuing rule plus the planned sweeps of earlier vehicles still queuing.
/// A later vehicle that stops inside space an earlier one is about to
/// maneuver through can only end in a mutual wait.
pub fn check_queuing_with_plans(
    reach: &ReachableSet,
    claims: &GridClaims,
    planned: &[(VehicleId, &CellSet)],
) -> SafetyVerdict {
    let mut verdict = check_queuing(reach, claims);
    let extra: Vec<(VehicleId, Constraint)> = planned
        .iter()
        .filter(|(l, sweep)| *l < reach.owner && reach.cells.intersects(sweep))
        .map(|(l, _)| (*l, Constraint::QueuingPlanned))
        .collect();
    if !extra.is_empty() {
        let mut all = std::mem::take(&mut verdict.blockers);
        all.extend(extra);
        verdict = SafetyVerdict::from_blockers(all);
    }
    verdict
}

/// Maneuvering rule: D_M clear of all other bodies and of earlier maneuver
/// claims.
pub fn check_maneuvering(reach: &ReachableSet, claims: &GridClaims) -> SafetyVerdict {
    check(reach, claims, Constraint::ManeuverBody, Constraint::ManeuverManeuver)
}

/// Pairs whose remaining sweeps each cover the other's body.
pub fn mutual_maneuver_conflicts(
    maneuvering: &[(VehicleId, &CellSet, &CellSet)],
) -> Vec<(VehicleId, VehicleId)> {
    let mut out = Vec::new();
    for (a, &(i, dm_i, b_i)) in maneuvering.iter().enumerate() {
        for &(j, dm_j, b_j) in &maneuvering[a + 1..] {
            if dm_i.intersects(b_j) && dm_j.intersects(b_i) {
                out.push((i.min(j), i.max(j)));
            }
        }
    }
    out.sort_unstable();
    out
}

/// Groups of vehicles waiting on each other. `waits` lists, for every
/// yielding vehicle, the vehicles it yields to; `mutual` adds pairs found by
/// [`mutual_maneuver_conflicts`]. Each group is a strongly connected
/// component with at least two members, sorted by id; groups are sorted by
/// their earliest member.
pub fn detect_deadlock(
    waits: &[(VehicleId, Vec<VehicleId>)],
    mutual: &[(VehicleId, VehicleId)],
) -> Vec<Vec<VehicleId>> {
    let mut g: DiGraphMap<VehicleId, ()> = DiGraphMap::new();
    for (i, to) in waits {
        for &j in to {
            if j != *i {
                g.add_edge(*i, j, ());
            }
        }
    }
    for &(i, j) in mutual {
        g.add_edge(i, j, ());
        g.add_edge(j, i, ());
    }
    let mut groups: Vec<Vec<VehicleId>> = tarjan_scc(&g)
        .into_iter()
        .filter(|c| c.len() > 1)
        .map(|mut c| {
            c.sort_unstable();
            c
        })
        .collect();
    groups.sort();
    groups
}

/// Maneuver state of a deadlock member, as seen by the resolver.
pub struct MemberManeuver<'a> {
    pub id: VehicleId,
    pub maneuver: &'a Arc<ManeuverInstance>,
    /// Current sample index on `maneuver`.
    pub step: usize,
    /// Cells the replacement must avoid: the other bodies in the lot.
    pub blocked: CellSet,
}

/// Regenerate the maneuver of the earliest member that has an alternative.
/// Earlier arrivals are tried first; returns the vehicle and its new
/// maneuver, or `None` when no member can be rerouted.
pub fn resolve_deadlock(
    members: &[MemberManeuver<'_>],
    library: &ManeuverLibrary,
    layout: &LotLayout,
) -> Option<(VehicleId, Arc<ManeuverInstance>)> {
    let mut order: Vec<&MemberManeuver<'_>> = members.iter().collect();
    order.sort_by_key(|m| m.id);
    order.into_iter().find_map(|m| {
        library
            .regenerate(layout, m.maneuver, m.step, &m.blocked)
            .filter(|new| !Arc::ptr_eq(new, m.maneuver))
            .map(|new| (m.id, new))
    })
}

/// Counts consecutive steps with an unresolved deadlock.
#[derive(Debug, Clone)]
pub struct DeadlockMonitor {
    bound: u32,
    streak: u32,
}

impl DeadlockMonitor {
    pub fn new(bound: u32) -> Self {
        Self { bound, streak: 0 }
    }

    /// Record one step; returns true once the streak exceeds the bound.
    pub fn observe(&mut self, deadlocked: bool) -> bool {
        self.streak = if deadlocked { self.streak + 1 } else { 0 };
        self.streak > self.bound
    }

    pub fn streak(&self) -> u32 {
        self.streak
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;
    use crate::lot::SpotIndex;
    use crate::occupancy::{rasterize_swept, ClaimKind};
    use crate::path::{build_queuing_path, test_library, Direction};

    fn small() -> GridSpec {
        GridSpec::new(10, 4, 1.0)
    }

    fn cells(g: &GridSpec, c: &[(usize, usize)]) -> CellSet {
        CellSet::from_cells(g, c.iter().copied())
    }

    fn reach(owner: VehicleId, kind: ReachKind, cells: CellSet) -> ReachableSet {
        ReachableSet { owner, kind, cells }
    }

    fn path_for(layout: &LotLayout, lib: &ManeuverLibrary, x: usize) -> VehiclePath {
        let inst = lib
            .instance(0, SpotIndex { x, row: 0 }, Direction::Reverse)
            .unwrap();
        let q = build_queuing_path(layout, &lib.params, 0, &inst).unwrap();
        VehiclePath::new(q, inst)
    }

    #[test]
    fn lookahead_of_fifteen_steps_is_six_meters() {
        let (layout, lib) = test_library();
        let p = lib.params;
        assert!((15.0 * p.v_ref * p.dt - 6.0).abs() < 1e-12);
        let path = path_for(layout, lib, 0);
        let g = layout.grid();
        let d = forward_reachable_queuing(0, &path, 10.0, 6.0, &p, g).cells;
        let oracle: Vec<Pose> = (0..=600).map(|k| path.pose_at(10.0 + 0.01 * k as f64)).collect();
        assert_eq!(d, rasterize_swept(g, &oracle, &p.body));
    }

    #[test]
    fn zero_lookahead_is_the_body() {
        let (layout, lib) = test_library();
        let path = path_for(layout, lib, 3);
        let g = layout.grid();
        for s in [0.0, 7.3, path.queuing.length()] {
            let d = forward_reachable_queuing(0, &path, s, 0.0, &lib.params, g).cells;
            assert_eq!(d, rasterize_footprint(g, &path.pose_at(s), &lib.params.body));
        }
    }

    #[test]
    fn lookahead_is_clamped_at_the_path_end() {
        let (layout, lib) = test_library();
        let path = path_for(layout, lib, 20);
        let g = layout.grid();
        let s = path.queuing.length() - 1.0;
        let d = forward_reachable_queuing(0, &path, s, 1000.0, &lib.params, g).cells;
        let mut oracle: Vec<Pose> = (0..=100).map(|k| path.pose_at(s + 0.01 * k as f64)).collect();
        oracle.extend(path.maneuver.poses.iter().copied());
        assert_eq!(d, rasterize_swept(g, &oracle, &lib.params.body));
    }

    #[test]
    fn lookahead_into_the_maneuver_matches_sampling() {
        let (layout, lib) = test_library();
        let path = path_for(layout, lib, 8);
        let g = layout.grid();
        let s = path.queuing.length() - 2.0;
        let d = forward_reachable_queuing(0, &path, s, 6.0, &lib.params, g).cells;
        let oracle: Vec<Pose> = (0..=600).map(|k| path.pose_at(s + 0.01 * k as f64)).collect();
        assert_eq!(d, rasterize_swept(g, &oracle, &lib.params.body));
    }

    #[test]
    fn larger_lookahead_never_unblocks() {
        let (layout, lib) = test_library();
        let path = path_for(layout, lib, 5);
        let g = layout.grid();
        let mut claims = GridClaims::new(*g);
        let other = Pose::new(30.0, 6.5, 0.0);
        claims.claim(ClaimKind::Body, 1, rasterize_footprint(g, &other, &lib.params.body));
        let mut was_blocked = false;
        for k in 0..40 {
            let d = forward_reachable_queuing(0, &path, 15.0, 0.5 * k as f64, &lib.params, g);
            let blocked = !check_queuing(&d, &claims).proceed;
            assert!(!was_blocked || blocked);
            was_blocked = blocked;
        }
        assert!(was_blocked);
    }

    #[test]
    fn lone_vehicle_proceeds() {
        let g = small();
        let mut claims = GridClaims::new(g);
        claims.claim(ClaimKind::Body, 0, cells(&g, &[(0, 0), (1, 0)]));
        let d = reach(0, ReachKind::Queuing, cells(&g, &[(0, 0), (1, 0), (2, 0)]));
        assert_eq!(check_queuing(&d, &claims), SafetyVerdict::clear());
        let dm = reach(0, ReachKind::Maneuver, d.cells.clone());
        assert!(check_maneuvering(&dm, &claims).proceed);
    }

    #[test]
    fn stopped_vehicle_ahead_blocks_queuing() {
        let (layout, lib) = test_library();
        let g = layout.grid();
        let p = lib.params;
        let path = path_for(layout, lib, 0);
        let s = 10.0;
        let mut claims = GridClaims::new(*g);
        let own = path.pose_at(s);
        claims.claim(ClaimKind::Body, 0, rasterize_footprint(g, &own, &p.body));
        // Three meters of clear lane between the bumpers.
        let ahead = own.translated(p.body.length + 3.0, 0.0);
        claims.claim(ClaimKind::Body, 1, rasterize_footprint(g, &ahead, &p.body));
        let d = forward_reachable_queuing(1 + 1, &path, s, 6.0, &p, g);
        let v = check_queuing(&ReachableSet { owner: 0, ..d }, &claims);
        assert!(!v.proceed);
        assert_eq!(v.violated, Constraint::QueuingBody);
        assert_eq!(v.blocking_vehicle, Some(1));
    }

    #[test]
    fn earlier_maneuver_across_the_lane_blocks_queuing() {
        let (layout, lib) = test_library();
        let g = layout.grid();
        let p = lib.params;
        // Vehicle 0 maneuvers into column 10; vehicle 1 approaches from behind.
        let first = path_for(layout, lib, 10);
        let mut claims = GridClaims::new(*g);
        let m = first.maneuver.steps() / 3;
        claims.claim(ClaimKind::Body, 0, first.maneuver.footprints[m].clone());
        claims.claim(ClaimKind::Maneuver, 0, first.maneuver.suffix[m].clone());
        let second = path_for(layout, lib, 0);
        let s = (first.queuing.length() - 8.0).max(0.0);
        claims.claim(ClaimKind::Body, 1, rasterize_footprint(g, &second.pose_at(s), &p.body));
        let d = forward_reachable_queuing(1, &second, s, 6.0, &p, g);
        let v = check_queuing(&d, &claims);
        assert!(!v.proceed);
        assert!(v.blockers.contains(&(0, Constraint::QueuingManeuver)));
        // The later arrival's claims never stop the earlier one.
        let mut reversed = GridClaims::new(*g);
        reversed.claim(ClaimKind::Maneuver, 5, first.maneuver.suffix[m].clone());
        assert!(check_queuing(&reach(1, ReachKind::Queuing, d.cells.clone()), &reversed).proceed);
    }

    #[test]
    fn queuing_vehicle_inside_the_sweep_blocks_the_maneuver() {
        let g = small();
        let mut claims = GridClaims::new(g);
        claims.claim(ClaimKind::Body, 3, cells(&g, &[(4, 1), (5, 1)]));
        let dm = reach(7, ReachKind::Maneuver, cells(&g, &[(3, 1), (4, 1), (4, 2)]));
        let v = check_maneuvering(&dm, &claims);
        assert_eq!(v.violated, Constraint::ManeuverBody);
        assert_eq!(v.blocking_vehicle, Some(3));
    }

    #[test]
    fn overlapping_maneuvers_later_one_yields() {
        let g = small();
        let a = cells(&g, &[(2, 1), (3, 1), (3, 2)]);
        let b = cells(&g, &[(3, 2), (4, 2)]);
        let mut claims = GridClaims::new(g);
        // Claims are made in arrival order; vehicle 1 only claims if clear.
        let v1 = check_maneuvering(&reach(1, ReachKind::Maneuver, a.clone()), &claims);
        assert!(v1.proceed);
        claims.claim(ClaimKind::Maneuver, 1, a);
        let v2 = check_maneuvering(&reach(2, ReachKind::Maneuver, b), &claims);
        assert!(!v2.proceed);
        assert_eq!(v2.violated, Constraint::ManeuverManeuver);
        assert_eq!(v2.blocking_vehicle, Some(1));
    }

    #[test]
    fn blockers_are_reported_in_arrival_order() {
        let g = small();
        let mut claims = GridClaims::new(g);
        claims.claim(ClaimKind::Body, 4, cells(&g, &[(5, 0)]));
        claims.claim(ClaimKind::Body, 2, cells(&g, &[(6, 0)]));
        claims.claim(ClaimKind::Maneuver, 1, cells(&g, &[(7, 0)]));
        let d = reach(9, ReachKind::Queuing, cells(&g, &[(5, 0), (6, 0), (7, 0)]));
        let v = check_queuing(&d, &claims);
        assert_eq!(v.blocking_vehicle, Some(1));
        assert_eq!(v.violated, Constraint::QueuingManeuver);
        let ids: Vec<_> = v.blockers.iter().map(|b| b.0).collect();
        assert_eq!(ids, vec![1, 2, 4]);
    }

    #[test]
    fn plans_of_earlier_vehicles_only() {
        let g = small();
        let claims = GridClaims::new(g);
        let plan = cells(&g, &[(6, 1), (6, 2)]);
        let d = reach(4, ReachKind::Queuing, cells(&g, &[(5, 1), (6, 1)]));
        let v = check_queuing_with_plans(&d, &claims, &[(2, &plan)]);
        assert_eq!(v.violated, Constraint::QueuingPlanned);
        assert_eq!(v.blocking_vehicle, Some(2));
        assert!(check_queuing_with_plans(&d, &claims, &[(7, &plan)]).proceed);
    }

    #[test]
    fn no_waits_no_deadlock() {
        assert!(detect_deadlock(&[], &[]).is_empty());
    }

    #[test]
    fn chain_without_cycle_is_not_a_deadlock() {
        assert!(detect_deadlock(&[(3, vec![2]), (2, vec![1])], &[]).is_empty());
    }

    #[test]
    fn wait_cycle_is_one_group() {
        let waits = [(1, vec![2]), (2, vec![3]), (3, vec![1]), (4, vec![1])];
        assert_eq!(detect_deadlock(&waits, &[]), vec![vec![1, 2, 3]]);
    }

    #[test]
    fn mutual_conflicts_are_symmetric() {
        let g = small();
        let b1 = cells(&g, &[(1, 1)]);
        let b2 = cells(&g, &[(5, 1)]);
        let dm1 = cells(&g, &[(1, 1), (2, 1), (5, 1)]);
        let dm2 = cells(&g, &[(5, 1), (1, 1)]);
        let fwd = mutual_maneuver_conflicts(&[(1, &dm1, &b1), (2, &dm2, &b2)]);
        let back = mutual_maneuver_conflicts(&[(2, &dm2, &b2), (1, &dm1, &b1)]);
        assert_eq!(fwd, vec![(1, 2)]);
        assert_eq!(fwd, back);
        assert_eq!(detect_deadlock(&[], &fwd), vec![vec![1, 2]]);
        // One-sided conflict is not mutual.
        let dm2 = cells(&g, &[(5, 1)]);
        assert!(mutual_maneuver_conflicts(&[(1, &dm1, &b1), (2, &dm2, &b2)]).is_empty());
    }

    #[test]
    fn resolver_with_no_members_does_nothing() {
        let (layout, lib) = test_library();
        assert!(resolve_deadlock(&[], lib, layout).is_none());
    }

    /// Cells that variant `b` needs but a detour to `alt` does not.
    fn unique_cells(g: &GridSpec, body: &BodyDims, b: &ManeuverInstance, alt: &ManeuverInstance) -> CellSet {
        let mut blocked = b.sweep().clone();
        blocked.remove_all(alt.sweep());
        blocked.remove_all(&b.footprints[0]);
        let (lo, hi) = (b.start().x.min(alt.start().x), b.start().x.max(alt.start().x));
        let transit: Vec<Pose> = (0..=100)
            .map(|k| Pose::new(lo + (hi - lo) * k as f64 / 100.0, b.start().y, 0.0))
            .collect();
        blocked.remove_all(&rasterize_swept(g, &transit, body));
        blocked
    }

    #[test]
    fn resolver_skips_members_without_alternatives() {
        let (layout, lib) = test_library();
        let g = layout.grid();
        let a = path_for(layout, lib, 6).maneuver;
        let (b, blocked) = (0..layout.n_x)
            .flat_map(|x| [Direction::Reverse, Direction::Forward].map(|d| (x, d)))
            .find_map(|(x, d)| {
                let vs = lib.variants(0, SpotIndex { x, row: 0 }, d);
                let b = vs.first()?;
                vs.iter()
                    .skip(1)
                    .map(|alt| unique_cells(g, &lib.params.body, b, alt))
                    .find(|c| !c.is_empty())
                    .map(|c| (b.clone(), c))
            })
            .expect("some spot has two distinct variants");
        let members = [
            MemberManeuver { id: 0, maneuver: &a, step: a.steps() / 2, blocked: g.cells_within(&layout.rect()) },
            MemberManeuver { id: 1, maneuver: &b, step: 0, blocked: blocked.clone() },
        ];
        let (id, new) = resolve_deadlock(&members, lib, layout).expect("second member can reroute");
        assert_eq!(id, 1);
        assert!(!new.sweep().intersects(&blocked));
        assert!(new.end().dist(&b.end()) < 1e-9);
    }

    #[test]
    fn monitor_trips_after_the_bound() {
        let mut mon = DeadlockMonitor::new(3);
        assert!(!mon.observe(true));
        assert!(!mon.observe(true));
        assert!(!mon.observe(false));
        for _ in 0..3 {
            assert!(!mon.observe(true));
        }
        assert!(mon.observe(true));
        assert_eq!(mon.streak(), 4);
    }
}
