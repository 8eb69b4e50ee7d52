//! `qdnet start | stop | relay`.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use clap::{Parser, Subcommand};
use qdnet::orchestrator::{self, default_artifacts_dir, StartOptions};
use qdnet_core::topology::validate_pair;
use qdnet_relay::{AgentDirectory, NodeDirectory, RelayAgent, RelayPath, Relayer};

#[derive(Parser)]
#[command(about = "Deploys and drives an emulated QKD network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Installs and launches broker, nodes and engine.
    Start {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        inventory: PathBuf,
        /// Overrides the configuration's time_scale.
        #[arg(long)]
        time_scale: Option<f64>,
        /// Writes the stage report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Base seed of every protocol round.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Key lifetime in the node stores, seconds.
        #[arg(long)]
        ttl: Option<f64>,
        /// Directory holding qdnet-node, qdnet-engine and qdnet-broker;
        /// defaults to this executable's directory.
        #[arg(long)]
        artifacts: Option<PathBuf>,
    },
    /// Terminates every process recorded on the inventory hosts.
    Stop {
        #[arg(long)]
        inventory: PathBuf,
    },
    /// Relays an end-to-end key along a path of adjacent nodes.
    Relay {
        /// Comma-separated nodes, initiator first.
        #[arg(long)]
        path: String,
        /// Key size in bits.
        #[arg(long, default_value_t = 256)]
        size: u32,
        #[arg(long)]
        config: PathBuf,
        /// Resolves node addresses; loopback when omitted.
        #[arg(long)]
        inventory: Option<PathBuf>,
        /// Prints the key in hex.
        #[arg(long)]
        reveal: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[tokio::main]
async fn main() -> ExitCode {
    qdnet::init_tracing();
    match run(Cli::parse().command).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

async fn run(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Start {
            config,
            inventory,
            time_scale,
            report,
            seed,
            ttl,
            artifacts,
        } => {
            let config = qdnet::load_config(&config)?;
            let inventory = qdnet::load_inventory(&inventory)?;
            let plan = validate_pair(&config, &inventory)?;
            let options = StartOptions {
                time_scale,
                seed,
                node_ttl: ttl.map(Duration::from_secs_f64),
                ..StartOptions::new(artifacts.unwrap_or_else(default_artifacts_dir))
            };
            let deployment = orchestrator::start(&plan, &options).await?;
            println!("{}", deployment.report);
            if let Some(path) = report {
                let json = serde_json::to_string_pretty(&deployment.report)?;
                std::fs::write(&path, json).with_context(|| format!("cannot write {}", path.display()))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Stop { inventory } => {
            let inventory = qdnet::load_inventory(&inventory)?;
            let report = orchestrator::stop(&inventory).await;
            println!("{report}");
            Ok(if report.is_complete() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Relay {
            path,
            size,
            config,
            inventory,
            reveal,
            seed,
        } => {
            let config = qdnet::load_config(&config)?;
            let inventory = inventory.map(|p| qdnet::load_inventory(&p)).transpose()?;
            let path = RelayPath::parse(&config, &path)?;
            let directory = NodeDirectory::from_config(&config, inventory.as_ref());
            let agents = AgentDirectory::new();
            let mut running = Vec::new();
            for node in path.nodes() {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
                running.push(RelayAgent::spawn(node, directory.clone(), agents.clone(), None, listener)?);
            }
            let relayer = Relayer::new(config, directory, agents, seed);
            let outcome = relayer.relay_key(&path, size).await?;
            for agent in running {
                agent.shutdown();
            }
            println!("key_id {}", outcome.key_id);
            if reveal {
                let hex: String = outcome.target_key.iter().map(|b| format!("{b:02x}")).collect();
                println!("key {hex}");
            }
            anyhow::ensure!(outcome.keys_match(), "initiator and target keys differ");
            Ok(ExitCode::SUCCESS)
        }
    }
}
