#![allow(dead_code)]

use lotsim_core::engine::{RunConfig, Simulation};
use lotsim_core::geometry::bodies_overlap;
use lotsim_core::lot::LotLayout;
use lotsim_core::path::{build_queuing_path, ManeuverInstance, ManeuverLibrary, VehicleParams};
use std::sync::{Arc, OnceLock};

pub fn fixture() -> &'static (LotLayout, ManeuverLibrary) {
    static LIB: OnceLock<(LotLayout, ManeuverLibrary)> = OnceLock::new();
    LIB.get_or_init(|| {
        let layout = LotLayout::default_lot();
        let lib = ManeuverLibrary::generate(&layout, &VehicleParams::default()).expect("library");
        (layout, lib)
    })
}

/// An empty lot with no arrivals, for scenarios built by hand.
pub fn scenario_config() -> RunConfig {
    RunConfig {
        n_vehicles: 0,
        n_free_spots: fixture().0.total_spots(),
        check_collisions: true,
        ..RunConfig::default()
    }
}

/// Progress `s` of a vehicle that is `steps` maneuver samples past its
/// maneuver start.
pub fn progress(inst: &Arc<ManeuverInstance>, steps: usize) -> f64 {
    let (layout, lib) = fixture();
    let q = build_queuing_path(layout, &lib.params, inst.key.lane, inst).unwrap();
    q.length() + steps as f64 * inst.ds
}

/// First pair (in library order) of vehicles one sample into their
/// maneuvers whose bodies are apart but whose remaining sweeps each cover
/// the other's body.
pub fn mutual_pair() -> (Arc<ManeuverInstance>, Arc<ManeuverInstance>) {
    let (_, lib) = fixture();
    let body = lib.params.body;
    let all: Vec<&Arc<ManeuverInstance>> = lib.iter().collect();
    for (n, a) in all.iter().enumerate() {
        for b in &all[n + 1..] {
            if a.spot == b.spot {
                continue;
            }
            let (fa, fb) = (&a.footprints[1], &b.footprints[1]);
            if fa.intersects(fb) || bodies_overlap(&a.poses[1], &body, &b.poses[1], &body) {
                continue;
            }
            if a.suffix[1].intersects(fb) && b.suffix[1].intersects(fa) {
                return ((*a).clone(), (*b).clone());
            }
        }
    }
    panic!("library has no mutually conflicting pair");
}

pub fn place_pair(config: RunConfig) -> Simulation<'static> {
    let (layout, lib) = fixture();
    let (a, b) = mutual_pair();
    let mut sim = Simulation::new(layout, lib, config).unwrap();
    let (sa, sb) = (progress(&a, 1), progress(&b, 1));
    sim.place_vehicle(a, sa);
    sim.place_vehicle(b, sb);
    sim
}
