//! Parameter sweeps: the delay/throughput curves per policy and the feasible region over
//! user processing and transmission fractions.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use threec_core::{run, PolicyKind, SimConfig};

use crate::config::{config_hash, HarnessError, RegionSearch, SweepSpec};

/// Outcome of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointSummary {
    pub throughput_fps: f64,
    pub mean_delay_s: Option<f64>,
    pub feasible: bool,
}

/// Run every configuration on a pool of `workers` threads. Results keep input order.
pub fn run_points(
    configs: &[SimConfig],
    delay_req_s: f64,
    workers: usize,
) -> Result<Vec<PointSummary>, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Mismatch(e.to_string()))?;
    pool.install(|| {
        configs
            .par_iter()
            .map(|c| {
                let m = run(c)?;
                let perf = m.performance();
                Ok(PointSummary {
                    throughput_fps: perf.throughput_fps,
                    mean_delay_s: perf.mean_delay_s,
                    feasible: m.meets(delay_req_s),
                })
            })
            .collect()
    })
}

/// Median of the finite values; a missing delay counts as infinite.
pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Per-seed summaries of one grid point folded into one row value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregate {
    pub throughput_fps: f64,
    /// Infinite when the median run delivered nothing.
    pub mean_delay_s: f64,
    /// Majority vote over seeds.
    pub feasible: bool,
}

pub fn aggregate(points: &[PointSummary]) -> Aggregate {
    let thr = median(points.iter().map(|p| p.throughput_fps).collect());
    let delay = median(
        points
            .iter()
            .map(|p| p.mean_delay_s.unwrap_or(f64::INFINITY))
            .collect(),
    );
    let yes = points.iter().filter(|p| p.feasible).count();
    Aggregate {
        throughput_fps: thr,
        mean_delay_s: delay,
        feasible: 2 * yes > points.len(),
    }
}

fn fmt_ms(delay_s: f64) -> String {
    if delay_s.is_finite() {
        format!("{:.3}", delay_s * 1e3)
    } else {
        "inf".to_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub policy: PolicyKind,
    pub gamma: f64,
    pub lambda_fps: f64,
    pub agg: Aggregate,
}

pub const SWEEP_HEADER: &str = "policy,gamma,lambda_fps,throughput_fps,mean_delay_ms";

/// Delay against throughput: every policy and skew over the arrival-rate grid.
pub fn policy_sweep(spec: &SweepSpec, workers: usize) -> Result<Vec<SweepRow>, HarnessError> {
    spec.validate()?;
    let mut keys = Vec::new();
    let mut configs = Vec::new();
    for &policy in &spec.policies {
        for &gamma in &spec.gammas {
            for &lambda in &spec.lambdas {
                for &seed in &spec.seeds {
                    let mut c = spec.base.clone();
                    c.policy = policy;
                    c.gamma_pop = gamma;
                    c.gamma_cache = gamma;
                    c.beta3 = spec.policy_beta3;
                    c.lambda_fps = lambda;
                    c.seed = seed;
                    keys.push((policy, gamma, lambda));
                    configs.push(c);
                }
            }
        }
    }
    let results = run_points(&configs, spec.delay_req_s, workers)?;
    let mut rows: Vec<SweepRow> = Vec::new();
    for (chunk_keys, chunk) in keys
        .chunks(spec.seeds.len())
        .zip(results.chunks(spec.seeds.len()))
    {
        let (policy, gamma, lambda_fps) = chunk_keys[0];
        rows.push(SweepRow {
            policy,
            gamma,
            lambda_fps,
            agg: aggregate(chunk),
        });
    }
    rows.sort_by(|a, b| {
        (a.policy, a.gamma, a.lambda_fps)
            .partial_cmp(&(b.policy, b.gamma, b.lambda_fps))
            .expect("finite grid values")
    });
    Ok(rows)
}

fn write_preamble<W: Write>(out: &mut W, spec: &SweepSpec) -> Result<(), HarnessError> {
    writeln!(out, "# config_sha256={}", config_hash(spec))?;
    writeln!(out, "# version={}", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(mut out: W, spec: &SweepSpec, rows: &[SweepRow]) -> Result<(), HarnessError> {
    write_preamble(&mut out, spec)?;
    writeln!(out, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.4},{}",
            r.policy,
            r.gamma,
            r.lambda_fps,
            r.agg.throughput_fps,
            fmt_ms(r.agg.mean_delay_s)
        )?;
    }
    Ok(())
}

/// One point of the (beta1, beta2) grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionCell {
    pub beta1: f64,
    pub beta2: f64,
    pub feasible: bool,
    /// `None` when the search inferred the verdict instead of simulating.
    pub measured: Option<Aggregate>,
}

/// Feasible region for one storage fraction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Region {
    pub beta3: f64,
    pub grid: Vec<f64>,
    /// Row-major over beta1 then beta2.
    pub cells: Vec<RegionCell>,
}

impl Region {
    fn cell(&self, i: usize, j: usize) -> &RegionCell {
        &self.cells[i * self.grid.len() + j]
    }

    /// Smallest feasible beta2 at each beta1, if any.
    pub fn border(&self) -> Vec<(f64, Option<f64>)> {
        (0..self.grid.len())
            .map(|i| {
                let b = (0..self.grid.len())
                    .find(|&j| self.cell(i, j).feasible)
                    .map(|j| self.grid[j]);
                (self.grid[i], b)
            })
            .collect()
    }

    /// `1 - b` for the smallest feasible `b = beta1 = beta2`.
    pub fn diagonal_saving(&self) -> Option<f64> {
        (0..self.grid.len())
            .find(|&k| self.cell(k, k).feasible)
            .map(|k| 1.0 - self.grid[k])
    }

    /// `1 - beta2` for the smallest feasible beta2 with full processing.
    pub fn edge_saving(&self) -> Option<f64> {
        let last = self.grid.len() - 1;
        (0..self.grid.len())
            .find(|&j| self.cell(last, j).feasible)
            .map(|j| 1.0 - self.grid[j])
    }
}

fn region_config(spec: &SweepSpec, beta3: f64, beta1: f64, beta2: f64, seed: u64) -> SimConfig {
    let mut c = spec.base.clone();
    c.policy = PolicyKind::Centralized;
    c.lambda_fps = spec.region_lambda;
    c.gamma_pop = spec.region_gamma;
    c.gamma_cache = spec.region_gamma;
    c.beta1 = beta1;
    c.beta2 = beta2;
    c.beta3 = beta3;
    c.seed = seed;
    c
}

fn evaluate(
    spec: &SweepSpec,
    beta3: f64,
    points: &[(f64, f64)],
    workers: usize,
) -> Result<Vec<Aggregate>, HarnessError> {
    let configs: Vec<SimConfig> = points
        .iter()
        .flat_map(|&(b1, b2)| spec.seeds.iter().map(move |&s| (b1, b2, s)))
        .map(|(b1, b2, s)| region_config(spec, beta3, b1, b2, s))
        .collect();
    let results = run_points(&configs, spec.delay_req_s, workers)?;
    Ok(results.chunks(spec.seeds.len()).map(aggregate).collect())
}

/// Feasibility over the grid for one storage fraction.
pub fn feasible_region(spec: &SweepSpec, beta3: f64, workers: usize) -> Result<Region, HarnessError> {
    spec.validate()?;
    let grid = spec.beta_grid();
    let n = grid.len();
    let mut measured: BTreeMap<(usize, usize), Aggregate> = BTreeMap::new();
    let mut feasible = vec![false; n * n];
    match spec.search {
        RegionSearch::Grid => {
            let idx: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
            let pts: Vec<(f64, f64)> = idx.iter().map(|&(i, j)| (grid[i], grid[j])).collect();
            for (&(i, j), agg) in idx.iter().zip(evaluate(spec, beta3, &pts, workers)?) {
                feasible[i * n + j] = agg.feasible;
                measured.insert((i, j), agg);
            }
        }
        RegionSearch::Staircase => {
            // Walking beta1 downwards, the border in beta2 can only rise.
            let mut j = 0;
            for i in (0..n).rev() {
                while j < n {
                    let agg = evaluate(spec, beta3, &[(grid[i], grid[j])], workers)?[0];
                    measured.insert((i, j), agg);
                    if agg.feasible {
                        break;
                    }
                    j += 1;
                }
                for jj in j..n {
                    feasible[i * n + jj] = true;
                }
            }
        }
    }
    let cells = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| RegionCell {
            beta1: grid[i],
            beta2: grid[j],
            feasible: feasible[i * n + j],
            measured: measured.get(&(i, j)).copied(),
        })
        .collect();
    Ok(Region { beta3, grid, cells })
}

pub const REGION_HEADER: &str = "beta3,beta1,beta2,feasible,measured,throughput_fps,mean_delay_ms";

pub fn write_region_csv<W: Write>(mut out: W, spec: &SweepSpec, regions: &[Region]) -> Result<(), HarnessError> {
    write_preamble(&mut out, spec)?;
    writeln!(out, "{REGION_HEADER}")?;
    for r in regions {
        for c in &r.cells {
            let (thr, delay) = c.measured.map_or((String::new(), String::new()), |a| {
                (format!("{:.4}", a.throughput_fps), fmt_ms(a.mean_delay_s))
            });
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.beta3,
                c.beta1,
                c.beta2,
                c.feasible as u8,
                c.measured.is_some() as u8,
                thr,
                delay
            )?;
        }
    }
    Ok(())
}

pub fn write_savings_csv<W: Write>(mut out: W, spec: &SweepSpec, regions: &[Region]) -> Result<(), HarnessError> {
    write_preamble(&mut out, spec)?;
    writeln!(out, "beta3,diagonal_saving,edge_saving")?;
    let f = |v: Option<f64>| v.map_or(String::new(), |s| format!("{s:.4}"));
    for r in regions {
        writeln!(out, "{},{},{}", r.beta3, f(r.diagonal_saving()), f(r.edge_saving()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(thr: f64, delay: Option<f64>, feasible: bool) -> PointSummary {
        PointSummary {
            throughput_fps: thr,
            mean_delay_s: delay,
            feasible,
        }
    }

    #[test]
    fn medians_and_votes() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0]), 2.5);
        let a = aggregate(&[
            point(60.0, Some(0.01), true),
            point(50.0, None, false),
            point(59.0, Some(0.02), true),
        ]);
        assert_eq!(a.throughput_fps, 59.0);
        assert_eq!(a.mean_delay_s, 0.02);
        assert!(a.feasible);
        assert!(!aggregate(&[point(1.0, None, true), point(1.0, None, false)]).feasible);
    }

    fn synthetic(grid: usize, border: &[usize]) -> Region {
        let g: Vec<f64> = (0..grid).map(|k| k as f64 / (grid - 1) as f64).collect();
        let cells = (0..grid)
            .flat_map(|i| (0..grid).map(move |j| (i, j)))
            .map(|(i, j)| RegionCell {
                beta1: g[i],
                beta2: g[j],
                feasible: j >= border[i],
                measured: None,
            })
            .collect();
        Region {
            beta3: 0.5,
            grid: g,
            cells,
        }
    }

    #[test]
    fn savings_follow_the_border() {
        // grid 0, .25, .5, .75, 1
        let r = synthetic(5, &[5, 4, 2, 1, 1]);
        assert_eq!(r.diagonal_saving(), Some(0.5));
        assert_eq!(r.edge_saving(), Some(0.75));
        assert_eq!(r.border()[0], (0.0, None));
        assert_eq!(r.border()[2], (0.5, Some(0.5)));
        let none = synthetic(3, &[3, 3, 3]);
        assert_eq!(none.diagonal_saving(), None);
    }

    #[test]
    fn small_sweep_is_sorted_and_hashed() {
        let mut spec = SweepSpec {
            lambdas: vec![20.0, 10.0],
            policies: vec![PolicyKind::Mec, PolicyKind::Centralized],
            gammas: vec![1.0],
            seeds: vec![1],
            ..Default::default()
        };
        spec.base.horizon_slots = 200;
        spec.base.scenario.num_users = 10;
        spec.base.scenario.catalog_size = 100;
        let rows = policy_sweep(&spec, 2).unwrap();
        let keys: Vec<_> = rows.iter().map(|r| (r.policy, r.lambda_fps)).collect();
        assert_eq!(
            keys,
            vec![
                (PolicyKind::Centralized, 10.0),
                (PolicyKind::Centralized, 20.0),
                (PolicyKind::Mec, 10.0),
                (PolicyKind::Mec, 20.0)
            ]
        );
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &spec, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# config_sha256="));
        assert_eq!(text.lines().nth(2), Some(SWEEP_HEADER));
        assert_eq!(text.lines().count(), 7);
    }
}
