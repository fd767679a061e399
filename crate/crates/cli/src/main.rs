use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lotsim_core::engine::{RunConfig, Simulation};
use lotsim_core::experiment::{self, SweepOptions, SweepSpec};
use lotsim_core::plot::all_plots;
use lotsim_core::render::render_trace;
use lotsim_core::{ConfigError, LaneOpening, LotConfig, LotLayout, ManeuverLibrary, PolicyKind, VehicleParams};
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Exit status for bad configuration or arguments.
const EXIT_CONFIG: u8 = 2;
/// Exit status when a sweep has cells with too many stalled runs.
const EXIT_INVALID: u8 = 3;

#[derive(Parser)]
#[command(name = "lotsim", version, about = "Autonomous fleet parking simulator")]
struct Cli {
    /// Lot layout file; the built-in 66 m x 16 m lot by default.
    #[arg(long, global = true)]
    lot: Option<PathBuf>,
    /// Maneuver library cache, reused when it matches the lot.
    #[arg(long, global = true)]
    library_cache: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and print its metrics.
    Run(RunArgs),
    /// Run a parameter sweep and write results, optima and plots.
    Sweep(SweepArgs),
    /// Plot a results table.
    Plot(PlotArgs),
    /// Render SVG frames from a trace.
    TraceRender(TraceRenderArgs),
    /// Generate the maneuver library and summarize or export it.
    Library(LibraryArgs),
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    /// rs, is or fs.
    #[arg(long)]
    policy: Option<PolicyKind>,
    #[arg(long)]
    delta_p: Option<usize>,
    /// 1 or 2.
    #[arg(long)]
    lanes: Option<LaneOpening>,
    /// Mean time between arrivals, seconds.
    #[arg(long)]
    mean_interarrival: Option<f64>,
    #[arg(long)]
    vehicles: Option<usize>,
}

impl Overrides {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.policy {
            c.policy = v;
        }
        if let Some(v) = self.delta_p {
            c.delta_p = v;
        }
        if let Some(v) = self.lanes {
            c.lanes = v;
        }
        if let Some(v) = self.mean_interarrival {
            c.mean_interarrival = v;
        }
        if let Some(v) = self.vehicles {
            c.n_vehicles = v;
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
    /// Write metrics.json (and the trace) here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a trace to <out>/traces/.
    #[arg(long, requires = "out")]
    trace: bool,
    /// Count body overlaps with an independent scan every step.
    #[arg(long)]
    check_collisions: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep definition file.
    spec: PathBuf,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Worker threads; all cores by default.
    #[arg(long)]
    jobs: Option<usize>,
    /// Override the number of seeds per cell.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    vehicles: Option<usize>,
    /// Recompute cells even when saved results exist.
    #[arg(long)]
    fresh: bool,
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct PlotArgs {
    /// results.csv from a sweep.
    results: PathBuf,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct TraceRenderArgs {
    trace: PathBuf,
    #[arg(long, default_value = "frames")]
    out: PathBuf,
    /// Render every n-th step.
    #[arg(long, default_value_t = 50)]
    every: u64,
}

#[derive(Args)]
struct LibraryArgs {
    /// Save the library as JSON.
    #[arg(long)]
    save: Option<PathBuf>,
    /// Write one pose CSV per instance into this directory.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn load_layout(path: Option<&Path>) -> Result<LotLayout> {
    match path {
        None => Ok(LotLayout::default_lot()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(LotLayout::build(&LotConfig::from_toml(&text)?)?)
        }
    }
}

fn load_library(layout: &LotLayout, cache: Option<&Path>) -> Result<ManeuverLibrary> {
    let params = VehicleParams::default();
    Ok(match cache {
        Some(p) => ManeuverLibrary::load_or_generate(layout, &params, p)?,
        None => ManeuverLibrary::generate(layout, &params)?,
    })
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn cmd_run(cli: &Cli, args: &RunArgs) -> Result<u8> {
    let mut config = match &args.config {
        Some(p) => RunConfig::from_toml(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => RunConfig::default(),
    };
    args.overrides.apply(&mut config);
    config.check_collisions |= args.check_collisions;
    config.validate()?;
    let layout = load_layout(cli.lot.as_deref())?;
    let library = load_library(&layout, cli.library_cache.as_deref())?;
    let sim = Simulation::new(&layout, &library, config.clone())?;
    let metrics = match (&args.out, args.trace) {
        (Some(out), true) => {
            let dir = out.join("traces");
            create_dir(&dir)?;
            let path = dir.join(format!(
                "run-{}-{}-ia{}-dp{}-s{}.log",
                config.policy,
                config.lanes.label(),
                config.mean_interarrival,
                config.delta_p,
                config.seed
            ));
            let f = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            let m = sim.with_trace(BufWriter::new(f)).run().with_context(|| format!("writing {}", path.display()))?;
            eprintln!("trace: {}", path.display());
            m
        }
        _ => sim.run()?,
    };
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_json(&out.join("metrics.json"), &metrics)?;
    }
    let mtt = metrics.mtt.map_or("-".to_string(), |t| format!("{t:.2} s"));
    println!("parked   {}/{}", metrics.parked(), config.n_vehicles);
    println!("rejected {}", metrics.rejected);
    println!("mtt      {mtt}");
    println!("mql      {}", metrics.mql);
    println!("steps    {}", metrics.steps);
    println!("deadlocks {} (resolved {})", metrics.deadlocks, metrics.resolutions);
    if config.check_collisions {
        println!("overlaps {}", metrics.collisions);
    }
    if let Some(reason) = &metrics.stall_reason {
        println!("stalled: {reason}");
    }
    Ok(0)
}

fn emit_tables(cells: &[experiment::AggregateCell], out: &Path) -> Result<()> {
    let optima = experiment::optimal_values(cells)?;
    experiment::write_optima_file(&optima, &out.join("optima.json"))?;
    let plots = out.join("plots");
    create_dir(&plots)?;
    let (files, warnings) = all_plots(cells, &optima);
    for w in warnings {
        eprintln!("warning: {w}");
    }
    for f in files {
        let path = plots.join(&f.name);
        fs::write(&path, f.svg).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn cmd_sweep(cli: &Cli, args: &SweepArgs) -> Result<u8> {
    let text = fs::read_to_string(&args.spec).with_context(|| format!("reading {}", args.spec.display()))?;
    let mut spec = SweepSpec::from_toml(&text)?;
    if let Some(n) = args.seeds {
        spec.seeds = None;
        spec.seeds_per_cell = n;
    }
    if let Some(n) = args.vehicles {
        spec.base.n_vehicles = n;
    }
    spec.validate()?;
    let layout = load_layout(cli.lot.as_deref())?;
    let library = load_library(&layout, cli.library_cache.as_deref())?;
    create_dir(&args.out)?;
    let cell_dir = args.out.join("cells");
    if args.fresh && cell_dir.exists() {
        fs::remove_dir_all(&cell_dir).with_context(|| format!("clearing {}", cell_dir.display()))?;
    }
    let quiet = args.quiet;
    let progress = move |done: usize, total: usize| {
        if !quiet && (done.is_multiple_of(100) || done == total) {
            eprintln!("{done}/{total} runs");
        }
    };
    let options = SweepOptions { jobs: args.jobs, cell_dir: Some(cell_dir), progress: Some(&progress) };
    let result = experiment::run_sweep(&layout, &library, &spec, &options)?;
    if result.reused > 0 && !quiet {
        eprintln!("reused {} finished cells", result.reused);
    }
    experiment::write_csv_file(&result.cells, &args.out.join("results.csv"))?;
    emit_tables(&result.cells, &args.out)?;
    let invalid: Vec<String> = result.cells.iter().filter(|c| c.invalid).map(|c| c.key().stem()).collect();
    let overlaps: u64 = result.cells.iter().map(|c| c.collisions).sum();
    println!("{} cells, {} runs each -> {}", result.cells.len(), spec.seed_list().len(), args.out.display());
    if overlaps > 0 {
        println!("body overlaps: {overlaps}");
    }
    if !invalid.is_empty() {
        eprintln!("{} cells with more than 10% stalled runs: {}", invalid.len(), invalid.join(", "));
        return Ok(EXIT_INVALID);
    }
    Ok(0)
}

fn cmd_plot(args: &PlotArgs) -> Result<u8> {
    let cells = experiment::read_csv_file(&args.results)?;
    if cells.is_empty() {
        bail!("{} has no rows", args.results.display());
    }
    create_dir(&args.out)?;
    emit_tables(&cells, &args.out)?;
    println!("plots in {}", args.out.join("plots").display());
    Ok(0)
}

fn cmd_trace_render(cli: &Cli, args: &TraceRenderArgs) -> Result<u8> {
    let layout = load_layout(cli.lot.as_deref())?;
    let f = fs::File::open(&args.trace).with_context(|| format!("opening {}", args.trace.display()))?;
    let frames = render_trace(BufReader::new(f), &layout, &VehicleParams::default().body, args.every)?;
    create_dir(&args.out)?;
    for fr in &frames {
        let path = args.out.join(format!("frame-{:06}.svg", fr.k));
        fs::write(&path, &fr.svg).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{} frames in {}", frames.len(), args.out.display());
    Ok(0)
}

fn cmd_library(cli: &Cli, args: &LibraryArgs) -> Result<u8> {
    let layout = load_layout(cli.lot.as_deref())?;
    let library = load_library(&layout, cli.library_cache.as_deref())?;
    let lattice = library.iter().filter(|i| i.key.variant >= library.shapes[&i.key.direction].len()).count();
    println!("{} instances over {} spots ({} from the lattice planner)", library.len(), layout.total_spots(), lattice);
    let longest = library.iter().map(|i| i.length).fold(0.0, f64::max);
    println!("longest maneuver {longest:.1} m");
    if let Some(p) = &args.save {
        library.save(&layout, p)?;
        println!("saved {}", p.display());
    }
    if let Some(dir) = &args.csv {
        create_dir(dir)?;
        for inst in library.iter() {
            let k = inst.key;
            let path = dir.join(format!("lane{}-x{}-row{}-{:?}-v{}.csv", k.lane, inst.spot.x, inst.spot.row, k.direction, k.variant).to_lowercase());
            let f = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            lotsim_core::path::write_pose_csv(inst, BufWriter::new(f)).with_context(|| format!("writing {}", path.display()))?;
        }
        println!("pose tables in {}", dir.display());
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(&cli, a),
        Command::Sweep(a) => cmd_sweep(&cli, a),
        Command::Plot(a) => cmd_plot(a),
        Command::TraceRender(a) => cmd_trace_render(&cli, a),
        Command::Library(a) => cmd_library(&cli, a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<ConfigError>()) {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
