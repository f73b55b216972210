//! The subcommands, each writing its artifacts into an output directory.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde_json::json;
use threec_core::policies::{CongestionMetric, CostModel};
use threec_core::{run, SimConfig};

use crate::config::{config_hash, load_json, HarnessError, SweepSpec};
use crate::oracle::{oracle_check, LoadBlindMetric, OracleOutcome};
use crate::plot::{emit_plot, PlotKind};
use crate::sweep::{feasible_region, policy_sweep, write_region_csv, write_savings_csv, write_sweep_csv, Region};

/// Options shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Common {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub workers: usize,
}

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    Ok(BufWriter::new(File::create(path)?))
}

fn load_or_default<T: serde::de::DeserializeOwned + Default>(path: &Option<PathBuf>) -> Result<T, HarnessError> {
    path.as_deref().map_or_else(|| Ok(T::default()), load_json)
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub config: SimConfig,
    pub deliveries_csv: PathBuf,
    pub metadata_json: PathBuf,
    pub throughput_fps: f64,
    pub mean_delay_s: Option<f64>,
    pub violations: u64,
}

/// One scenario run: per-frame deliveries, a metadata record and optionally the queue
/// trajectory.
pub fn cmd_run(common: &Common) -> Result<RunSummary, HarnessError> {
    let mut config: SimConfig = load_or_default(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    config.validate()?;
    fs::create_dir_all(&common.out)?;
    let m = run(&config)?;
    let deliveries_csv = common.out.join("deliveries.csv");
    m.write_deliveries_csv(create(&deliveries_csv)?)?;
    if config.trajectory_every > 0 {
        m.write_trajectory_csv(create(&common.out.join("trajectory.csv"))?)?;
    }
    let perf = m.performance();
    let meta = json!({
        "config": &config,
        "warmup_slots": config.warmup(),
        "seed": config.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "config_sha256": config_hash(&config),
        "summary": {
            "throughput_fps": perf.throughput_fps,
            "mean_delay_ms": perf.mean_delay_s.map(|d| d * 1e3),
            "issued": m.issued,
            "delivered": m.deliveries.len(),
            "in_flight": m.in_flight,
            "utilization": &m.utilization,
            "audit": &m.audit,
        },
    });
    let metadata_json = common.out.join("metadata.json");
    fs::write(&metadata_json, serde_json::to_string_pretty(&meta).expect("json value"))?;
    Ok(RunSummary {
        config,
        deliveries_csv,
        metadata_json,
        throughput_fps: perf.throughput_fps,
        mean_delay_s: perf.mean_delay_s,
        violations: m.audit.total_violations(),
    })
}

fn sweep_spec(common: &Common) -> Result<SweepSpec, HarnessError> {
    let mut spec: SweepSpec = load_or_default(&common.config)?;
    if let Some(seed) = common.seed {
        spec.reseed(seed);
    }
    spec.validate()?;
    Ok(spec)
}

/// Delay/throughput table and chart. Returns the CSV path.
pub fn cmd_policy_sweep(common: &Common) -> Result<PathBuf, HarnessError> {
    let spec = sweep_spec(common)?;
    fs::create_dir_all(&common.out)?;
    let rows = policy_sweep(&spec, common.workers)?;
    let csv = common.out.join("policy_sweep.csv");
    write_sweep_csv(create(&csv)?, &spec, &rows)?;
    emit_plot(&csv, PlotKind::PolicySweep, &common.out.join("policy_sweep.svg"))?;
    Ok(csv)
}

/// Feasible regions for every storage fraction, their border chart and savings.
pub fn cmd_feasible_region(common: &Common) -> Result<Vec<Region>, HarnessError> {
    let spec = sweep_spec(common)?;
    fs::create_dir_all(&common.out)?;
    let regions = spec
        .region_beta3
        .iter()
        .map(|&b3| feasible_region(&spec, b3, common.workers))
        .collect::<Result<Vec<_>, _>>()?;
    let csv = common.out.join("feasible_region.csv");
    write_region_csv(create(&csv)?, &spec, &regions)?;
    write_savings_csv(create(&common.out.join("savings.csv"))?, &spec, &regions)?;
    emit_plot(&csv, PlotKind::Region, &common.out.join("feasible_region.svg"))?;
    Ok(regions)
}

#[derive(Debug, Clone, Copy)]
pub struct OracleArgs {
    pub trials: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Search with a load-blind metric, which the check should reject.
    pub perturb: bool,
}

impl Default for OracleArgs {
    fn default() -> Self {
        Self {
            trials: 1000,
            min_nodes: 3,
            max_nodes: 5,
            perturb: false,
        }
    }
}

/// Route search against enumeration. A mismatch writes the first counterexample to
/// `counterexample.json` and fails.
pub fn cmd_oracle_check(common: &Common, args: OracleArgs) -> Result<OracleOutcome, HarnessError> {
    let metric: &dyn CostModel = if args.perturb {
        &LoadBlindMetric
    } else {
        &CongestionMetric
    };
    let out = oracle_check(
        args.trials,
        common.seed.unwrap_or(0),
        args.min_nodes,
        args.max_nodes,
        metric,
    )?;
    if let Some(first) = out.mismatches.first() {
        fs::create_dir_all(&common.out)?;
        let text = serde_json::to_string_pretty(first).expect("counterexample serializes");
        fs::write(common.out.join("counterexample.json"), &text)?;
        return Err(HarnessError::Mismatch(format!(
            "{} of {} trials disagree; first counterexample:\n{text}",
            out.mismatches.len(),
            out.trials
        )));
    }
    Ok(out)
}

pub fn cmd_plot(csv: &Path, kind: PlotKind, out: &Path) -> Result<(), HarnessError> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    emit_plot(csv, kind, out)
}
