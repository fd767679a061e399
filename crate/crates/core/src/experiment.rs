//! Parameter sweeps over arrival rate, search interval, policy and lane
//! mode, with per-cell aggregation and optimal-value extraction.
//!
//! Every cell runs the same seed list, so cells differ only in the swept
//! parameters (common random numbers). Runs execute on a rayon pool; the
//! results are reduced in cell order, so output does not depend on thread
//! count or completion order. When a cell directory is given, each finished
//! cell is written there and reused by later invocations of the same sweep.

use crate::allocation::{LaneOpening, PolicyKind};
use crate::engine::{run, RunConfig};
use crate::error::{ConfigError, IoError};
use crate::lot::LotLayout;
use crate::metrics::RunMetrics;
use crate::path::ManeuverLibrary;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

/// Version written in the first column of every results row. Columns are
/// only ever appended; readers accept rows with the same version.
pub const CSV_SCHEMA_VERSION: u32 = 1;

/// A cell with more than this share of stalled runs is flagged invalid.
pub const MAX_STALL_SHARE: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub mean_interarrival: Vec<f64>,
    pub delta_p: Vec<usize>,
    pub policies: Vec<PolicyKind>,
    pub lanes: Vec<LaneOpening>,
    /// Number of seeds per cell: `base.seed, base.seed + 1, ...`.
    #[serde(default)]
    pub seeds_per_cell: usize,
    /// Explicit seed list; overrides `seeds_per_cell` when present.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub base: RunConfig,
}

impl SweepSpec {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let spec: SweepSpec = toml::from_str(text).map_err(|source| ConfigError::Parse {
            what: "sweep definition".into(),
            source,
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Sweep(m.into()));
        if self.mean_interarrival.is_empty()
            || self.delta_p.is_empty()
            || self.policies.is_empty()
            || self.lanes.is_empty()
        {
            return bad("every swept parameter needs at least one value");
        }
        if self.seed_list().is_empty() {
            return bad("no seeds: set seeds_per_cell or seeds");
        }
        for &m in &self.mean_interarrival {
            self.config_for(&CellKey {
                mean_interarrival: m,
                delta_p: 0,
                policy: PolicyKind::Is,
                lanes: LaneOpening::OneLane,
            })
            .validate()?;
        }
        Ok(())
    }

    pub fn seed_list(&self) -> Vec<u64> {
        match &self.seeds {
            Some(s) => s.clone(),
            None => (0..self.seeds_per_cell as u64).map(|j| self.base.seed + j).collect(),
        }
    }

    /// Cells in a fixed order: lanes, policy, 1/lambda, delta_p.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        for &lanes in &self.lanes {
            for &policy in &self.policies {
                for &mean_interarrival in &self.mean_interarrival {
                    for &delta_p in &self.delta_p {
                        out.push(CellKey { mean_interarrival, delta_p, policy, lanes });
                    }
                }
            }
        }
        out
    }

    pub fn config_for(&self, key: &CellKey) -> RunConfig {
        RunConfig {
            mean_interarrival: key.mean_interarrival,
            delta_p: key.delta_p,
            policy: key.policy,
            lanes: key.lanes,
            ..self.base.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub mean_interarrival: f64,
    pub delta_p: usize,
    pub policy: PolicyKind,
    pub lanes: LaneOpening,
}

impl CellKey {
    /// File-name stem, e.g. `is-1L-ia2-dp4`.
    pub fn stem(&self) -> String {
        format!(
            "{}-{}-ia{}-dp{}",
            self.policy,
            self.lanes.label(),
            self.mean_interarrival,
            self.delta_p
        )
    }
}

/// The parts of one run's metrics that the sweep keeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub seed: u64,
    pub mtt: Option<f64>,
    pub mql: u32,
    pub stalled: bool,
    pub steps: u64,
    pub parked: usize,
    pub rejected: u32,
    pub deadlocks: u64,
    pub resolutions: u64,
    pub collisions: u64,
}

impl RunOutcome {
    pub fn from_metrics(seed: u64, m: &RunMetrics) -> Self {
        Self {
            seed,
            mtt: m.mtt,
            mql: m.mql,
            stalled: m.stalled,
            steps: m.steps,
            parked: m.parked(),
            rejected: m.rejected,
            deadlocks: m.deadlocks,
            resolutions: m.resolutions,
            collisions: m.collisions,
        }
    }
}

/// Mean and quartiles of one metric over the runs of a cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

/// Quantile by linear interpolation between order statistics: position
/// `p * (n - 1)` in the sorted sample.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(Summary {
        mean: values.iter().sum::<f64>() / values.len() as f64,
        q25: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q75: quantile(&v, 0.75),
    })
}

/// One results row. Metric columns are empty when every run stalled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateCell {
    pub schema_version: u32,
    pub mean_interarrival: f64,
    pub delta_p: usize,
    pub policy: PolicyKind,
    pub lanes: LaneOpening,
    pub n_runs: usize,
    pub n_stalled: usize,
    /// More than `MAX_STALL_SHARE` of the runs stalled.
    pub invalid: bool,
    pub mtt_mean: Option<f64>,
    pub mtt_q25: Option<f64>,
    pub mtt_median: Option<f64>,
    pub mtt_q75: Option<f64>,
    pub mql_mean: Option<f64>,
    pub mql_q25: Option<f64>,
    pub mql_median: Option<f64>,
    pub mql_q75: Option<f64>,
    pub collisions: u64,
    pub deadlocks: u64,
    pub resolutions: u64,
}

impl AggregateCell {
    pub fn key(&self) -> CellKey {
        CellKey {
            mean_interarrival: self.mean_interarrival,
            delta_p: self.delta_p,
            policy: self.policy,
            lanes: self.lanes,
        }
    }

    pub fn mtt(&self) -> Option<Summary> {
        Some(Summary {
            mean: self.mtt_mean?,
            q25: self.mtt_q25?,
            median: self.mtt_median?,
            q75: self.mtt_q75?,
        })
    }

    pub fn mql(&self) -> Option<Summary> {
        Some(Summary {
            mean: self.mql_mean?,
            q25: self.mql_q25?,
            median: self.mql_median?,
            q75: self.mql_q75?,
        })
    }
}

/// Aggregate one cell. Stalled runs count toward `n_stalled` and are left
/// out of both metrics, since their task times and queues are truncated.
pub fn aggregate(key: CellKey, outcomes: &[RunOutcome]) -> AggregateCell {
    let ok: Vec<&RunOutcome> = outcomes.iter().filter(|o| !o.stalled).collect();
    let mtt: Vec<f64> = ok.iter().filter_map(|o| o.mtt).collect();
    let mql: Vec<f64> = ok.iter().map(|o| o.mql as f64).collect();
    let (t, q) = (summarize(&mtt), summarize(&mql));
    let n_stalled = outcomes.len() - ok.len();
    AggregateCell {
        schema_version: CSV_SCHEMA_VERSION,
        mean_interarrival: key.mean_interarrival,
        delta_p: key.delta_p,
        policy: key.policy,
        lanes: key.lanes,
        n_runs: outcomes.len(),
        n_stalled,
        invalid: n_stalled as f64 > MAX_STALL_SHARE * outcomes.len() as f64,
        mtt_mean: t.map(|s| s.mean),
        mtt_q25: t.map(|s| s.q25),
        mtt_median: t.map(|s| s.median),
        mtt_q75: t.map(|s| s.q75),
        mql_mean: q.map(|s| s.mean),
        mql_q25: q.map(|s| s.q25),
        mql_median: q.map(|s| s.median),
        mql_q75: q.map(|s| s.q75),
        collisions: outcomes.iter().map(|o| o.collisions).sum(),
        deadlocks: outcomes.iter().map(|o| o.deadlocks).sum(),
        resolutions: outcomes.iter().map(|o| o.resolutions).sum(),
    }
}

/// Contents of a persisted cell; reused only when everything but the
/// outcomes matches the current sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CellFile {
    key: CellKey,
    config: RunConfig,
    seeds: Vec<u64>,
    outcomes: Vec<RunOutcome>,
}

#[derive(Default)]
pub struct SweepOptions<'a> {
    /// Worker threads; `None` uses the global rayon pool.
    pub jobs: Option<usize>,
    /// Directory for per-cell results, enabling resumption.
    pub cell_dir: Option<PathBuf>,
    /// Called with `(finished runs, total runs)` as runs complete.
    pub progress: Option<&'a (dyn Fn(usize, usize) + Sync)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub cells: Vec<AggregateCell>,
    /// Raw outcomes per cell, in cell order.
    pub outcomes: Vec<Vec<RunOutcome>>,
    /// Cells loaded from `cell_dir` instead of being run.
    pub reused: usize,
}

fn load_cell(dir: &Path, key: &CellKey, config: &RunConfig, seeds: &[u64]) -> Option<Vec<RunOutcome>> {
    let text = fs::read_to_string(dir.join(format!("{}.json", key.stem()))).ok()?;
    let file: CellFile = serde_json::from_str(&text).ok()?;
    (file.key == *key && file.config == *config && file.seeds == seeds && file.outcomes.len() == seeds.len())
        .then_some(file.outcomes)
}

fn store_cell(dir: &Path, file: &CellFile) -> Result<(), IoError> {
    let path = dir.join(format!("{}.json", file.key.stem()));
    let tmp = path.with_extension("json.tmp");
    let text = serde_json::to_string(file).map_err(|source| IoError::Json {
        path: path.display().to_string(),
        source,
    })?;
    fs::write(&tmp, text).map_err(|e| IoError::io(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| IoError::io(&path, e))
}

pub fn run_sweep(
    layout: &LotLayout,
    library: &ManeuverLibrary,
    spec: &SweepSpec,
    options: &SweepOptions<'_>,
) -> Result<SweepResult, IoError> {
    spec.validate().map_err(|e| IoError::Format(e.to_string()))?;
    let keys = spec.cells();
    let seeds = spec.seed_list();
    if let Some(dir) = &options.cell_dir {
        fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    }
    let mut done: Vec<Option<Vec<RunOutcome>>> = keys
        .iter()
        .map(|k| {
            let dir = options.cell_dir.as_ref()?;
            load_cell(dir, k, &spec.config_for(k), &seeds)
        })
        .collect();
    let reused = done.iter().filter(|d| d.is_some()).count();
    let todo: Vec<usize> = (0..keys.len()).filter(|&c| done[c].is_none()).collect();
    let total = todo.len() * seeds.len();
    let finished = AtomicUsize::new(0);

    let work = || -> Result<Vec<(usize, Vec<RunOutcome>)>, IoError> {
        todo.par_iter()
            .map(|&c| {
                let config = spec.config_for(&keys[c]);
                let outcomes: Vec<RunOutcome> = seeds
                    .par_iter()
                    .map(|&seed| {
                        let cfg = RunConfig { seed, ..config.clone() };
                        let m = run(layout, library, &cfg).expect("validated configuration");
                        let n = finished.fetch_add(1, Ordering::Relaxed) + 1;
                        if let Some(p) = options.progress {
                            p(n, total);
                        }
                        RunOutcome::from_metrics(seed, &m)
                    })
                    .collect();
                if let Some(dir) = &options.cell_dir {
                    store_cell(
                        dir,
                        &CellFile { key: keys[c], config, seeds: seeds.clone(), outcomes: outcomes.clone() },
                    )?;
                }
                Ok((c, outcomes))
            })
            .collect()
    };
    let computed = match options.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| IoError::Format(e.to_string()))?
            .install(work)?,
        None => work()?,
    };
    for (c, o) in computed {
        done[c] = Some(o);
    }
    let outcomes: Vec<Vec<RunOutcome>> = done.into_iter().map(|d| d.expect("every cell ran")).collect();
    let cells = keys.iter().zip(&outcomes).map(|(k, o)| aggregate(*k, o)).collect();
    Ok(SweepResult { cells, outcomes, reused })
}

/// Best cell means over delta_p for one (1/lambda, policy, lanes) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub mean_interarrival: f64,
    pub policy: PolicyKind,
    pub lanes: LaneOpening,
    pub mtt: Option<f64>,
    pub mtt_delta_p: Option<usize>,
    pub mql: Option<f64>,
    pub mql_delta_p: Option<usize>,
}

fn argmin(points: impl Iterator<Item = (usize, Option<f64>)>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (dp, v) in points {
        let Some(v) = v else { continue };
        // Ties go to the smaller delta_p.
        let better = match best {
            None => true,
            Some((bdp, bv)) => v < bv || (v == bv && dp < bdp),
        };
        if better {
            best = Some((dp, v));
        }
    }
    best
}

/// Minimum of the cell means over delta_p per (1/lambda, policy, lanes).
/// Invalid cells take no part. Groups are ordered like the cells.
pub fn optimal_values(cells: &[AggregateCell]) -> Result<Vec<Optimum>, ConfigError> {
    if cells.is_empty() {
        return Err(ConfigError::Sweep("empty results table".into()));
    }
    let mut groups: BTreeMap<(LaneOpening, PolicyKind, u64), Vec<&AggregateCell>> = BTreeMap::new();
    for c in cells {
        groups
            .entry((c.lanes, c.policy, c.mean_interarrival.to_bits()))
            .or_default()
            .push(c);
    }
    let mut out: Vec<Optimum> = groups
        .into_values()
        .map(|g| {
            let valid: Vec<&&AggregateCell> = g.iter().filter(|c| !c.invalid).collect();
            let t = argmin(valid.iter().map(|c| (c.delta_p, c.mtt_mean)));
            let q = argmin(valid.iter().map(|c| (c.delta_p, c.mql_mean)));
            Optimum {
                mean_interarrival: g[0].mean_interarrival,
                policy: g[0].policy,
                lanes: g[0].lanes,
                mtt: t.map(|x| x.1),
                mtt_delta_p: t.map(|x| x.0),
                mql: q.map(|x| x.1),
                mql_delta_p: q.map(|x| x.0),
            }
        })
        .collect();
    out.sort_by(|a, b| {
        (a.lanes, a.policy)
            .cmp(&(b.lanes, b.policy))
            .then(a.mean_interarrival.total_cmp(&b.mean_interarrival))
    });
    Ok(out)
}

pub fn write_csv<W: std::io::Write>(cells: &[AggregateCell], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for c in cells {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<AggregateCell>, IoError> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in r.deserialize() {
        let cell: AggregateCell = row.map_err(|source| IoError::Csv { path: "<csv>".into(), source })?;
        if cell.schema_version != CSV_SCHEMA_VERSION {
            return Err(IoError::Format(format!(
                "results schema version {} (expected {CSV_SCHEMA_VERSION})",
                cell.schema_version
            )));
        }
        out.push(cell);
    }
    Ok(out)
}

pub fn write_csv_file(cells: &[AggregateCell], path: &Path) -> Result<(), IoError> {
    let f = fs::File::create(path).map_err(|e| IoError::io(path, e))?;
    write_csv(cells, std::io::BufWriter::new(f)).map_err(|source| IoError::Csv {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_csv_file(path: &Path) -> Result<Vec<AggregateCell>, IoError> {
    let f = fs::File::open(path).map_err(|e| IoError::io(path, e))?;
    read_csv(f).map_err(|e| match e {
        IoError::Csv { source, .. } => IoError::Csv { path: path.display().to_string(), source },
        other => other,
    })
}

pub fn write_optima_file(optima: &[Optimum], path: &Path) -> Result<(), IoError> {
    let text = serde_json::to_string_pretty(optima).map_err(|source| IoError::Json {
        path: path.display().to_string(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(|e| IoError::io(path, e))
}
