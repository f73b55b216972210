use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use threec_cli::commands::{
    cmd_feasible_region, cmd_oracle_check, cmd_plot, cmd_policy_sweep, cmd_run, Common, OracleArgs,
};
use threec_cli::plot::PlotKind;
use threec_cli::HarnessError;

#[derive(Debug, Parser)]
#[command(name = "threec", version, about = "Compute/cache/communication network simulator")]
struct Cli {
    /// JSON configuration. A run takes a simulation config, the sweeps a sweep spec.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Override the seed (sweeps use consecutive seeds from it).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one scenario.
    Run,
    /// Delay against throughput for each policy and popularity skew.
    PolicySweep,
    /// Feasible (beta1, beta2) region for each storage fraction.
    FeasibleRegion,
    /// Compare the route search with brute-force enumeration.
    OracleCheck {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 3)]
        min_nodes: usize,
        #[arg(long, default_value_t = 5)]
        max_nodes: usize,
        /// Search with a load-blind metric; the check must then fail.
        #[arg(long)]
        perturb: bool,
    },
    /// Render a sweep CSV as SVG.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        /// policy-sweep or region.
        #[arg(long)]
        kind: PlotKind,
        /// Output SVG path; defaults to the CSV name with an .svg extension in --out.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
}

fn fmt_delay(d: Option<f64>) -> String {
    d.map_or("none".to_owned(), |d| format!("{:.3} ms", d * 1e3))
}

fn dispatch(cli: Cli) -> Result<(), HarnessError> {
    let common = Common {
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
        workers: cli.workers,
    };
    match cli.command {
        Command::Run => {
            let s = cmd_run(&common)?;
            println!(
                "policy {} lambda {} fps: throughput {:.3} fps per user, mean delay {}, audit violations {}",
                s.config.policy,
                s.config.lambda_fps,
                s.throughput_fps,
                fmt_delay(s.mean_delay_s),
                s.violations
            );
            println!("wrote {} and {}", s.deliveries_csv.display(), s.metadata_json.display());
        }
        Command::PolicySweep => {
            let csv = cmd_policy_sweep(&common)?;
            println!("wrote {}", csv.display());
        }
        Command::FeasibleRegion => {
            for r in cmd_feasible_region(&common)? {
                let pct = |v: Option<f64>| v.map_or("none".to_owned(), |s| format!("{:.0}%", s * 100.0));
                println!(
                    "beta3 {}: diagonal saving {}, edge saving {}",
                    r.beta3,
                    pct(r.diagonal_saving()),
                    pct(r.edge_saving())
                );
            }
            println!("wrote {}", common.out.join("feasible_region.csv").display());
        }
        Command::OracleCheck {
            trials,
            min_nodes,
            max_nodes,
            perturb,
        } => {
            let out = cmd_oracle_check(
                &common,
                OracleArgs {
                    trials,
                    min_nodes,
                    max_nodes,
                    perturb,
                },
            )?;
            println!(
                "oracle check passed: {} trials, {} with a route",
                out.trials, out.feasible
            );
        }
        Command::Plot { csv, kind, svg } => {
            let svg = svg.unwrap_or_else(|| {
                let stem = csv.file_stem().map(|s| s.to_owned()).unwrap_or_else(|| "plot".into());
                common.out.join(stem).with_extension("svg")
            });
            cmd_plot(&csv, kind, &svg)?;
            println!("wrote {}", svg.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
