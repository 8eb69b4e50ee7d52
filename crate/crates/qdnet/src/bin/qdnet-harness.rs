//! Reproduction runs: `scenario-b`, `sweep-c`, `scaling-a`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qdnet::harness::scaling::{scaling_a, ScalingOptions};
use qdnet::harness::scenario::{scenario_b, ScenarioOptions};
use qdnet::harness::sweep::{sweep_c, SweepOptions};
use qdnet::harness::DEFAULT_TIME_SCALE;
use qdnet::orchestrator::{default_artifacts_dir, Stage};

#[derive(Parser)]
#[command(about = "Reproduction harness for the emulated QKD network")]
struct Cli {
    /// Output directory for CSV and JSON-lines files.
    #[arg(long, global = true, default_value = "harness-out")]
    out: PathBuf,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    #[arg(long, global = true, default_value_t = DEFAULT_TIME_SCALE)]
    time_scale: f64,
    /// Directory holding the service binaries.
    #[arg(long, global = true)]
    artifacts: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Event orderings of the four processes on the Madrid star.
    ScenarioB {
        #[arg(long, default_value_t = 1)]
        relays: usize,
    },
    /// Time and key bit rate against key size on the realistic links.
    SweepC {
        #[arg(long, value_delimiter = ',', default_value = "64,128,256,512")]
        sizes: Vec<u32>,
        #[arg(long, default_value_t = 10)]
        repetitions: usize,
    },
    /// Stage durations against node count.
    ScalingA {
        #[arg(long, value_delimiter = ',', default_value = "2,4,10")]
        counts: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        repetitions: usize,
    },
}

#[tokio::main]
async fn main() -> ExitCode {
    qdnet::init_tracing();
    let cli = Cli::parse();
    match run(cli).await {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

async fn run(cli: Cli) -> anyhow::Result<bool> {
    let artifacts = cli.artifacts.unwrap_or_else(default_artifacts_dir);
    let out = Some(cli.out.clone());
    match cli.command {
        Command::ScenarioB { relays } => {
            let report = scenario_b(&ScenarioOptions {
                seed: cli.seed,
                time_scale: cli.time_scale,
                relay_repetitions: relays,
                out,
                ..ScenarioOptions::new(artifacts)
            })
            .await?;
            for event in &report.events {
                println!("{:>8.3}s  {}", event.t_s, event.signature());
            }
            let violations = report.violations();
            for v in &violations {
                println!("VIOLATION {v}");
            }
            Ok(violations.is_empty())
        }
        Command::SweepC { sizes, repetitions } => {
            let report = sweep_c(&SweepOptions {
                seed: cli.seed,
                time_scale: cli.time_scale,
                sizes,
                repetitions,
                out,
                ..SweepOptions::new(artifacts)
            })
            .await?;
            println!("{:<18}{:>6}{:>12}{:>10}{:>12}{:>10}", "link", "size", "time_s", "ci95", "kbr_bps", "ci95");
            for r in &report.rows {
                println!(
                    "{:<18}{:>6}{:>12.3}{:>10.3}{:>12.1}{:>10.1}",
                    r.link, r.size, r.mean_time_s, r.ci95_time_s, r.mean_kbr_bps, r.ci95_kbr_bps
                );
            }
            Ok(report.samples.iter().all(|s| s.error.is_none()))
        }
        Command::ScalingA { counts, repetitions } => {
            let report = scaling_a(&ScalingOptions {
                counts,
                repetitions,
                out,
                ..ScalingOptions::new(artifacts)
            })
            .await?;
            println!("{:<8}{:<24}{:>10}{:>10}{:>13}", "nodes", "stage", "mean_s", "ci95", "invocations");
            for r in &report.rows {
                println!(
                    "{:<8}{:<24}{:>10.3}{:>10.3}{:>13}",
                    r.nodes, r.stage, r.mean_s, r.ci95_s, r.max_invocations
                );
            }
            for f in &report.failures {
                println!("FAILED {f}");
            }
            let law = report.invocation_law_holds();
            let node_stages: Vec<&str> = Stage::ALL
                .iter()
                .filter(|s| s.is_node_scoped())
                .map(|s| s.name())
                .collect();
            println!(
                "invocation law (N for {}, 1 otherwise): {}",
                node_stages.join(" and "),
                if law { "holds" } else { "VIOLATED" }
            );
            Ok(law && report.failures.is_empty())
        }
    }
}
