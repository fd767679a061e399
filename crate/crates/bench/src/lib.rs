//! Benchmark fixtures.

use lotsim_core::{LotLayout, ManeuverLibrary, VehicleParams};

pub fn fixture() -> (LotLayout, ManeuverLibrary) {
    let layout = LotLayout::default_lot();
    let library = ManeuverLibrary::generate(&layout, &VehicleParams::default()).expect("default lot has a library");
    (layout, library)
}
