//! Acceptance checks. Prints one PASS/FAIL line per criterion, then a
//! summary. Exits nonzero on a failure only when
//! `LOTSIM_ACCEPTANCE_STRICT=1`, so a red criterion does not stop the rest
//! of the workspace tests from running.

mod common;

use common::{fixture, place_pair, scenario_config};
use lotsim_core::allocation::{spot_search, LaneOpening, PolicyKind};
use lotsim_core::engine::{run, run_with_trace, RunConfig};
use lotsim_core::experiment::{self, run_sweep, AggregateCell, SweepOptions, SweepSpec};
use lotsim_core::geometry::wrap_angle;
use lotsim_core::metrics::{max_queue_length, mean_task_time};
use lotsim_core::occupancy::{rasterize_footprint, CellSet};
use lotsim_core::path::advance_on_path;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;
use std::time::Instant;

#[derive(Deserialize)]
struct AcceptanceConfig {
    seeds: Vec<u64>,
    collision_runs: usize,
}

fn settings() -> AcceptanceConfig {
    toml::from_str(include_str!("../../../config/acceptance.toml")).expect("acceptance.toml parses")
}

type Check = fn() -> Outcome;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Seed-averaged cells over the acceptance seed list.
fn sweep(policies: &[PolicyKind], lanes: &[LaneOpening], rates: &[f64], delta_p: &[usize]) -> Vec<AggregateCell> {
    let (layout, lib) = fixture();
    let spec = SweepSpec {
        mean_interarrival: rates.to_vec(),
        delta_p: delta_p.to_vec(),
        policies: policies.to_vec(),
        lanes: lanes.to_vec(),
        seeds_per_cell: 0,
        seeds: Some(settings().seeds),
        base: RunConfig::default(),
    };
    run_sweep(layout, lib, &spec, &SweepOptions::default()).expect("sweep runs").cells
}

fn cell(cells: &[AggregateCell], p: PolicyKind, l: LaneOpening, rate: f64, dp: usize) -> &AggregateCell {
    cells
        .iter()
        .find(|c| c.policy == p && c.lanes == l && c.mean_interarrival == rate && c.delta_p == dp)
        .expect("cell present")
}

fn mtt(c: &AggregateCell) -> f64 {
    c.mtt_mean.unwrap_or(f64::NAN)
}

fn mql(c: &AggregateCell) -> f64 {
    c.mql_mean.unwrap_or(f64::NAN)
}

fn stalls(cells: &[AggregateCell]) -> usize {
    cells.iter().map(|c| c.n_stalled).sum()
}

fn collision_free() -> Outcome {
    let (layout, lib) = fixture();
    let n = settings().collision_runs;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let configs: Vec<RunConfig> = (0..n)
        .map(|j| RunConfig {
            seed: 10_000 + j as u64,
            policy: PolicyKind::ALL[rng.random_range(0..3)],
            delta_p: rng.random_range(0..=21),
            lanes: if rng.random_bool(0.5) { LaneOpening::OneLane } else { LaneOpening::TwoLanes },
            mean_interarrival: [1.0, 2.0, 4.0, 7.0][rng.random_range(0..4)],
            n_vehicles: 30,
            check_collisions: true,
            ..RunConfig::default()
        })
        .collect();
    let results: Vec<(u64, bool)> = configs
        .par_iter()
        .map(|c| {
            let m = run(layout, lib, c).expect("valid config");
            (m.collisions, m.stalled)
        })
        .collect();
    let overlaps: u64 = results.iter().map(|r| r.0).sum();
    let stalled = results.iter().filter(|r| r.1).count();
    outcome(overlaps == 0, format!("{n} runs, {overlaps} overlapping vehicle-steps, {stalled} stalled"))
}

/// The probe sequence written out literally; first free probe wins.
fn probe_oracle(delta_p: usize, x0: usize, y0: usize, n_x: usize, occ: &[[bool; 2]]) -> Option<(usize, usize)> {
    let mut x = x0;
    for _ in 0..200 {
        if x >= n_x {
            x = if n_x.is_multiple_of(delta_p + 1) { (x + 1) % n_x } else { x % n_x };
        }
        for y in [y0, 1 - y0] {
            if !occ[x][y] {
                return Some((x, y));
            }
        }
        x += 1 + delta_p;
    }
    None
}

fn spot_search_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 20_000;
    let (mut agree, mut full) = (0, 0);
    for _ in 0..n {
        let n_x = rng.random_range(2..=10);
        let delta_p = rng.random_range(0..=8);
        let density: f64 = rng.random();
        let occ: Vec<[bool; 2]> = (0..n_x).map(|_| [rng.random_bool(density), rng.random_bool(density)]).collect();
        let x0 = rng.random_range(0..2 * n_x);
        let y0 = rng.random_range(0..=1);
        let expected = probe_oracle(delta_p, x0, y0, n_x, &occ);
        full += expected.is_none() as usize;
        agree += (spot_search(delta_p, x0, y0, n_x, |x, y| occ[x][y]) == expected) as usize;
    }
    outcome(agree == n, format!("{agree}/{n} instances agree ({full} with no reachable spot)"))
}

fn sweet_spot() -> Outcome {
    let cells = sweep(&[PolicyKind::Is], &[LaneOpening::OneLane], &[2.0], &[0, 4, 21]);
    let m = |dp| mtt(cell(&cells, PolicyKind::Is, LaneOpening::OneLane, 2.0, dp));
    let (a, b, c) = (m(0), m(4), m(21));
    outcome(
        b < a && b < c,
        format!("IS 1L 1/lambda=2: MTT dp0 {a:.1} s, dp4 {b:.1} s, dp21 {c:.1} s; {} stalled", stalls(&cells)),
    )
}

fn policy_ordering() -> Outcome {
    let cells = sweep(&[PolicyKind::Is, PolicyKind::Fs], &[LaneOpening::OneLane], &[1.0, 4.0], &[2, 4, 8]);
    let mut parts = Vec::new();
    let mut pass = true;
    for rate in [1.0, 4.0] {
        let avg = |p| [2, 4, 8].iter().map(|&dp| mtt(cell(&cells, p, LaneOpening::OneLane, rate, dp))).sum::<f64>() / 3.0;
        let (is, fs) = (avg(PolicyKind::Is), avg(PolicyKind::Fs));
        pass &= fs > is;
        parts.push(format!("1/lambda={rate}: FS {fs:.1} s vs IS {is:.1} s"));
    }
    outcome(pass, format!("{}; {} stalled", parts.join(", "), stalls(&cells)))
}

fn arrival_rate() -> Outcome {
    let cells = sweep(&[PolicyKind::Is], &[LaneOpening::OneLane], &[1.0, 7.0], &[4]);
    let c1 = cell(&cells, PolicyKind::Is, LaneOpening::OneLane, 1.0, 4);
    let c7 = cell(&cells, PolicyKind::Is, LaneOpening::OneLane, 7.0, 4);
    outcome(
        mtt(c1) > mtt(c7) && mql(c1) > mql(c7),
        format!(
            "IS 1L dp4: MTT {:.1} s vs {:.1} s, MQL {:.2} vs {:.2} (1/lambda=1 vs 7); {} stalled",
            mtt(c1),
            mtt(c7),
            mql(c1),
            mql(c7),
            stalls(&cells)
        ),
    )
}

fn fs_queue() -> Outcome {
    let cells = sweep(&[PolicyKind::Is, PolicyKind::Fs], &[LaneOpening::OneLane], &[1.0], &[4]);
    let fs = mql(cell(&cells, PolicyKind::Fs, LaneOpening::OneLane, 1.0, 4));
    let is = mql(cell(&cells, PolicyKind::Is, LaneOpening::OneLane, 1.0, 4));
    outcome(fs <= is, format!("1L 1/lambda=1 dp4: MQL FS {fs:.2} vs IS {is:.2}; {} stalled", stalls(&cells)))
}

fn two_lanes() -> Outcome {
    let cells = sweep(&[PolicyKind::Is], &[LaneOpening::OneLane, LaneOpening::TwoLanes], &[2.0], &[2, 4, 8]);
    let optima = experiment::optimal_values(&cells).expect("nonempty");
    let best = |l| optima.iter().find(|o| o.lanes == l).and_then(|o| o.mtt.zip(o.mtt_delta_p)).expect("optimum");
    let (one, two) = (best(LaneOpening::OneLane), best(LaneOpening::TwoLanes));
    outcome(
        two.0 >= one.0,
        format!(
            "IS 1/lambda=2: best MTT 2L {:.1} s (dp{}) vs 1L {:.1} s (dp{}); {} stalled",
            two.0,
            two.1,
            one.0,
            one.1,
            stalls(&cells)
        ),
    )
}

fn deadlock_resolution() -> Outcome {
    let mut sim = place_pair(scenario_config());
    let (mut first, mut resolved) = (None, None);
    while !sim.finished() {
        sim.step();
        let m = sim.metrics();
        if first.is_none() && m.deadlocks > 0 {
            first = Some(sim.step_index());
        }
        if resolved.is_none() && m.resolutions > 0 {
            resolved = Some(sim.step_index());
        }
    }
    let m = sim.into_metrics().expect("no trace");
    let within = matches!((first, resolved), (Some(a), Some(b)) if b - a <= 50);
    let off = place_pair(RunConfig { resolve_deadlocks: false, ..scenario_config() }).run().expect("no trace");
    outcome(
        within && m.parked() == 2 && !m.stalled && off.stalled,
        format!(
            "detected at step {:?}, resolved at {:?}, {} parked, {} overlaps; without resolution stalled={}",
            first,
            resolved,
            m.parked(),
            m.collisions,
            off.stalled
        ),
    )
}

fn determinism() -> Outcome {
    let (layout, lib) = fixture();
    let mut same_traces = true;
    for (seed, policy, lanes) in [(1, PolicyKind::Rs, LaneOpening::TwoLanes), (2, PolicyKind::Is, LaneOpening::OneLane)] {
        let c = RunConfig { seed, policy, lanes, ..RunConfig::default() };
        let trace = || {
            let mut buf = Vec::new();
            run_with_trace(layout, lib, &c, &mut buf).unwrap().unwrap();
            buf
        };
        same_traces &= trace() == trace();
    }
    let spec = SweepSpec {
        mean_interarrival: vec![2.0],
        delta_p: vec![0, 4],
        policies: vec![PolicyKind::Rs, PolicyKind::Fs],
        lanes: vec![LaneOpening::TwoLanes],
        seeds_per_cell: 4,
        seeds: None,
        base: RunConfig { n_vehicles: 12, ..RunConfig::default() },
    };
    let files = |jobs| {
        let cells = run_sweep(layout, lib, &spec, &SweepOptions { jobs: Some(jobs), ..Default::default() }).unwrap().cells;
        let mut csv = Vec::new();
        experiment::write_csv(&cells, &mut csv).unwrap();
        let optima = serde_json::to_vec(&experiment::optimal_values(&cells).unwrap()).unwrap();
        (csv, optima)
    };
    let same_sweep = files(1) == files(4);
    outcome(same_traces && same_sweep, format!("traces identical: {same_traces}; CSV and optima identical across 1 and 4 threads: {same_sweep}"))
}

fn arithmetic() -> Outcome {
    let s = advance_on_path(10.0, 4.0, 0.1, 100.0);
    let t = mean_task_time(&[(0.0, 30.0), (2.0, 40.0)]);
    let q = max_queue_length(&[0, 1, 3, 2, 0]);
    outcome(
        s == 10.4 && t == Some(34.0) && q == 3,
        format!("s' = {s}, MTT = {t:?}, MQL = {q}"),
    )
}

fn library_invariants() -> Outcome {
    let (layout, lib) = fixture();
    let g = layout.grid();
    let body = &lib.params.body;
    let spot_cells = |s| {
        let r = layout.spot_world_rect(s).unwrap();
        let cells = (r.x0.round() as usize..r.x1.round() as usize)
            .flat_map(|i| (r.y0.round() as usize..r.y1.round() as usize).map(move |j| (i, j)));
        CellSet::from_cells(g, cells)
    };
    let all_spots: Vec<_> = layout.all_spots().map(|s| (s, spot_cells(s))).collect();
    let (mut intrusion, mut final_pose, mut continuity, mut suffix) = (0, 0, 0, 0);
    for inst in lib.iter() {
        let fps: Vec<CellSet> = inst.poses.iter().map(|p| rasterize_footprint(g, p, body)).collect();
        if fps.iter().any(|fp| all_spots.iter().any(|(s, c)| *s != inst.spot && fp.intersects(c))) {
            intrusion += 1;
        }
        let target = layout.spot_world_rect(inst.spot).unwrap();
        if !body.corners(&inst.end()).iter().all(|&c| target.contains_point(c, 1e-6)) {
            final_pose += 1;
        }
        let max_turn = inst.ds / lib.params.min_turning_radius + 1e-6;
        if inst.poses.windows(2).any(|w| w[0].dist(&w[1]) > inst.ds + 1e-6 || wrap_angle(w[1].heading - w[0].heading).abs() > max_turn) {
            continuity += 1;
        }
        let mut acc = CellSet::empty(g);
        for m in (0..inst.poses.len()).rev() {
            acc.union_with(&fps[m]);
            if inst.suffix[m] != acc {
                suffix += 1;
                break;
            }
        }
    }
    outcome(
        intrusion + final_pose + continuity + suffix == 0,
        format!(
            "{} templates: {intrusion} intrude, {final_pose} end outside the spot, {continuity} discontinuous, {suffix} with a wrong suffix sweep",
            lib.len()
        ),
    )
}

fn main() {
    // Honor `cargo test -- --list` and friends without running anything.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [(&str, Check); 11] = [
        ("collision-free runs", collision_free),
        ("spot search equals probe oracle", spot_search_oracle),
        ("search interval sweet spot", sweet_spot),
        ("FS slower than IS", policy_ordering),
        ("load raises MTT and MQL", arrival_rate),
        ("FS queue no longer than IS at high load", fs_queue),
        ("two lanes no faster than one", two_lanes),
        ("mutual deadlock resolved", deadlock_resolution),
        ("deterministic traces and tables", determinism),
        ("position update and metric arithmetic", arithmetic),
        ("maneuver library invariants", library_invariants),
    ];
    let start = Instant::now();
    fixture();
    let mut failed = Vec::new();
    for (n, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = check();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {verdict}  {name}: {} [{:.1} s]", n + 1, o.detail, t.elapsed().as_secs_f64());
        if !o.pass {
            failed.push(n + 1);
        }
    }
    println!(
        "acceptance: {}/{} criteria pass in {:.0} s{}",
        criteria.len() - failed.len(),
        criteria.len(),
        start.elapsed().as_secs_f64(),
        if failed.is_empty() { String::new() } else { format!("; failing: {failed:?}") }
    );
    if !failed.is_empty() && std::env::var("LOTSIM_ACCEPTANCE_STRICT").as_deref() == Ok("1") {
        std::process::exit(1);
    }
}
