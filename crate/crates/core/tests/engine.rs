mod common;

use common::{fixture, place_pair, progress, scenario_config};
use lotsim_core::allocation::{LaneOpening, PolicyKind};
use lotsim_core::engine::{generate_arrivals, run, run_with_trace, stream_rng, Mode, RunConfig, Simulation, Stream};
use lotsim_core::lot::SpotIndex;
use lotsim_core::path::{build_queuing_path, Direction};

fn trace_of(config: &RunConfig) -> Vec<u8> {
    let (layout, lib) = fixture();
    let mut buf = Vec::new();
    run_with_trace(layout, lib, config, &mut buf).unwrap().unwrap();
    buf
}

#[test]
fn zero_vehicles_finish_at_once() {
    let (layout, lib) = fixture();
    let m = run(layout, lib, &RunConfig { n_vehicles: 0, ..RunConfig::default() }).unwrap();
    assert_eq!(m.steps, 0);
    assert_eq!(m.mtt, None);
    assert_eq!(m.mql, 0);
    assert!(!m.stalled);
}

#[test]
fn single_vehicle_matches_path_timing() {
    let (layout, lib) = fixture();
    for seed in 0..5 {
        let config = RunConfig { seed, n_vehicles: 1, ..RunConfig::default() };
        let m = run(layout, lib, &config).unwrap();
        let rec = &m.vehicles[0];
        let spot = rec.spot.unwrap();
        let inst = lib.instance(rec.lane, spot, rec.direction.unwrap()).unwrap();
        let q = build_queuing_path(layout, &lib.params, rec.lane, &inst).unwrap();
        let dt = lib.params.dt;
        let queuing_steps = (q.length() / (lib.params.v_ref * dt) - 1e-9).ceil();
        let maneuver_steps = (inst.length / (lib.params.maneuver_speed * dt) - 1e-9).ceil();
        let expected = (queuing_steps + maneuver_steps) * dt;
        let got = rec.finish_time.unwrap() - rec.arrival_time;
        assert!((got - expected).abs() < 1e-9, "seed {seed}: {got} vs {expected}");
        assert_eq!(rec.yield_steps, 0);
    }
}

#[test]
fn adjacent_spots_make_the_follower_yield() {
    let (layout, lib) = fixture();
    let mut seen = 0;
    for seed in 0..20 {
        let config = RunConfig {
            seed,
            n_vehicles: 2,
            mean_interarrival: 0.5,
            delta_p: 0,
            n_free_spots: layout.total_spots(),
            ..RunConfig::default()
        };
        let m = run(layout, lib, &config).unwrap();
        let (a, b) = (m.vehicles[0].spot.unwrap(), m.vehicles[1].spot.unwrap());
        if a.row != b.row || a.x.abs_diff(b.x) != 1 {
            continue;
        }
        seen += 1;
        assert_eq!(m.parked(), 2);
        let y = m.yields;
        assert!(
            y.queuing_maneuver + y.queuing_planned + y.maneuver_maneuver > 0,
            "seed {seed}: {y:?}"
        );
        assert_eq!(m.vehicles[0].yield_steps, 0);
        assert!(m.vehicles[1].yield_steps > 0);
    }
    assert!(seen > 0);
}

#[test]
fn traces_are_byte_identical() {
    let config = RunConfig { seed: 7, lanes: LaneOpening::TwoLanes, ..RunConfig::default() };
    let a = trace_of(&config);
    assert_eq!(a, trace_of(&config));
    let header: serde_json::Value = serde_json::from_slice(a.split(|&c| c == b'\n').next().unwrap()).unwrap();
    assert_eq!(header["schema"], "lotsim-trace");
    assert_eq!(header["version"], 1);
    let other = trace_of(&RunConfig { seed: 8, ..config });
    assert_ne!(a, other);
}

#[test]
fn vehicles_are_conserved_every_step() {
    let (layout, lib) = fixture();
    let config = RunConfig { seed: 3, n_vehicles: 40, ..RunConfig::default() };
    let mut sim = Simulation::new(layout, lib, config).unwrap();
    let arrivals = generate_arrivals(40, 2.0, lib.params.dt, &mut stream_rng(3, Stream::Arrivals));
    while !sim.finished() {
        sim.step();
        let k = sim.step_index();
        let arrived = arrivals.iter().filter(|&&a| a < k).count();
        let v = sim.vehicles();
        assert_eq!(v.len(), arrived);
        let count = |m: Mode| v.iter().filter(|x| x.mode == m).count();
        assert_eq!(
            count(Mode::Parked) + count(Mode::OutsideQueue) + count(Mode::Queuing)
                + count(Mode::Maneuvering) + count(Mode::Rejected),
            arrived
        );
    }
    let m = sim.into_metrics().unwrap();
    assert_eq!(m.rejected, 4, "36 free spots for 40 vehicles");
    assert_eq!(m.parked(), 36);
}

#[test]
fn arrival_gaps_have_the_configured_mean() {
    let dt = 0.1;
    let steps = generate_arrivals(10_000, 2.0, dt, &mut stream_rng(11, Stream::Arrivals));
    let mean_gap = *steps.last().unwrap() as f64 * dt / 10_000.0;
    assert!((mean_gap - 2.0).abs() < 0.1, "{mean_gap}");
    assert!(steps.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(steps, generate_arrivals(10_000, 2.0, dt, &mut stream_rng(11, Stream::Arrivals)));
}

#[test]
fn admission_order_follows_arrival_order() {
    let (layout, lib) = fixture();
    for policy in PolicyKind::ALL {
        let config = RunConfig { seed: 5, policy, mean_interarrival: 1.0, ..RunConfig::default() };
        let mut sim = Simulation::new(layout, lib, config).unwrap();
        let mut order = Vec::new();
        while !sim.finished() {
            sim.step();
            for v in sim.vehicles() {
                if !matches!(v.mode, Mode::OutsideQueue | Mode::Rejected) && !order.contains(&v.id) {
                    order.push(v.id);
                }
            }
        }
        assert!(order.windows(2).all(|w| w[0] < w[1]), "{policy}: {order:?}");
    }
}

#[test]
fn entrance_blockage_builds_a_queue() {
    let (layout, lib) = fixture();
    let base = RunConfig { n_vehicles: 6, mean_interarrival: 0.3, seed: 2, ..scenario_config() };
    let free = run(layout, lib, &base).unwrap();

    // A vehicle backing into the spot nearest the gate sweeps the entrance.
    let spot = SpotIndex { x: layout.n_x - 1, row: 1 };
    let blocker = lib.variants(0, spot, Direction::Reverse)[0].clone();
    let mut sim = Simulation::new(layout, lib, base).unwrap();
    let s = progress(&blocker, 1);
    sim.place_vehicle(blocker, s);
    let blocked = sim.run().unwrap();
    assert!(!blocked.stalled);
    assert_eq!(blocked.parked(), 7);
    assert!(blocked.mql > free.mql, "{} vs {}", blocked.mql, free.mql);
}

#[test]
fn mutual_deadlock_is_resolved() {
    let mut sim = place_pair(scenario_config());
    let mut first = None;
    let mut resolved_at = None;
    while !sim.finished() {
        sim.step();
        let m = sim.metrics();
        if first.is_none() && m.deadlocks > 0 {
            first = Some(sim.step_index());
        }
        if resolved_at.is_none() && m.resolutions > 0 {
            resolved_at = Some(sim.step_index());
        }
    }
    let m = sim.into_metrics().unwrap();
    let (first, resolved_at) = (first.expect("deadlock detected"), resolved_at.expect("resolved"));
    assert!(resolved_at - first <= 50);
    assert!(!m.stalled, "{:?}", m.stall_reason);
    assert_eq!(m.parked(), 2);
    assert_eq!(m.collisions, 0);
}

#[test]
fn unresolved_deadlock_stalls() {
    let sim = place_pair(RunConfig { resolve_deadlocks: false, ..scenario_config() });
    let m = sim.run().unwrap();
    assert!(m.stalled);
    assert!(m.stall_reason.as_deref().unwrap().contains("deadlock"));
    assert_eq!(m.parked(), 0);
    assert!(m.steps <= 52);
}
