//! `start` and `stop` of a whole emulated network.
//!
//! A deployment runs five stages strictly in order: node installation,
//! engine installation, bus configuration, node initialization and engine
//! initialization. Installation copies the prebuilt binaries and the
//! network description into each host's working directory; the
//! initialization stages launch the processes and wait until each one
//! answers its readiness probe. Launched processes leave a pid file under
//! `<workdir>/run`, which is all `stop` needs to tear them down again.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use qdnet_core::topology::{ConnectionMode, DeploymentPlan, HostEntry, Inventory, NetworkConfig};
use qdnet_engine::LogRecord;
use qdnet_relay::EtsiClient;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::remote::{execute_remote, Action, ActionOutput, ProcessState, RemoteError};

pub const NODE_ARTIFACT: &str = "qdnet-node";
pub const ENGINE_ARTIFACT: &str = "qdnet-engine";
pub const BROKER_ARTIFACT: &str = "qdnet-broker";

const POLL_INTERVAL: Duration = Duration::from_millis(20);
const PROBE_EVERY: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    NodeInstallation,
    EngineInstallation,
    BusConfiguration,
    NodeInitialization,
    EngineInitialization,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::NodeInstallation,
        Stage::EngineInstallation,
        Stage::BusConfiguration,
        Stage::NodeInitialization,
        Stage::EngineInitialization,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::NodeInstallation => "node_installation",
            Stage::EngineInstallation => "engine_installation",
            Stage::BusConfiguration => "bus_configuration",
            Stage::NodeInitialization => "node_initialization",
            Stage::EngineInitialization => "engine_initialization",
        }
    }

    /// Stages whose work is repeated for every node.
    pub fn is_node_scoped(self) -> bool {
        matches!(self, Stage::NodeInstallation | Stage::NodeInitialization)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One value per stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageMap<T> {
    pub node_installation: T,
    pub engine_installation: T,
    pub bus_configuration: T,
    pub node_initialization: T,
    pub engine_initialization: T,
}

impl<T> StageMap<T> {
    pub fn get(&self, stage: Stage) -> &T {
        match stage {
            Stage::NodeInstallation => &self.node_installation,
            Stage::EngineInstallation => &self.engine_installation,
            Stage::BusConfiguration => &self.bus_configuration,
            Stage::NodeInitialization => &self.node_initialization,
            Stage::EngineInitialization => &self.engine_initialization,
        }
    }

    pub fn get_mut(&mut self, stage: Stage) -> &mut T {
        match stage {
            Stage::NodeInstallation => &mut self.node_installation,
            Stage::EngineInstallation => &mut self.engine_installation,
            Stage::BusConfiguration => &mut self.bus_configuration,
            Stage::NodeInitialization => &mut self.node_initialization,
            Stage::EngineInitialization => &mut self.engine_initialization,
        }
    }
}

/// Timing of one `start`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    /// Seconds spent in each stage.
    pub stages: StageMap<f64>,
    /// Units of work per stage: one per node for node-scoped stages, one
    /// for the others.
    pub invocations: StageMap<u32>,
    pub node_count: usize,
    pub total_s: f64,
}

impl StageReport {
    pub fn stage_sum(&self) -> f64 {
        Stage::ALL.iter().map(|s| *self.stages.get(*s)).sum()
    }
}

impl fmt::Display for StageReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<24}{:>12}{:>13}", "stage", "seconds", "invocations")?;
        for stage in Stage::ALL {
            writeln!(
                f,
                "{:<24}{:>12.3}{:>13}",
                stage.name(),
                self.stages.get(stage),
                self.invocations.get(stage)
            )?;
        }
        write!(f, "{:<24}{:>12.3}   ({} nodes)", "total", self.total_s, self.node_count)
    }
}

#[derive(Debug, Clone)]
pub struct StartOptions {
    /// Directory holding the `qdnet-node`, `qdnet-engine` and
    /// `qdnet-broker` binaries.
    pub artifacts: PathBuf,
    /// Overrides the configuration's `time_scale`.
    pub time_scale: Option<f64>,
    pub seed: u64,
    pub node_ttl: Option<Duration>,
    /// Makes the broker record every frame it receives.
    pub capture_bus: bool,
    pub ready_timeout: Duration,
}

impl StartOptions {
    pub fn new(artifacts: impl Into<PathBuf>) -> Self {
        Self {
            artifacts: artifacts.into(),
            time_scale: None,
            seed: 0,
            node_ttl: None,
            capture_bus: false,
            ready_timeout: Duration::from_secs(20),
        }
    }
}

/// Directory of the running executable, where cargo places sibling binaries.
pub fn default_artifacts_dir() -> PathBuf {
    std::env::current_exe()
        .ok()
        .and_then(|exe| exe.parent().map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProcessRecord {
    /// `bus`, `engine` or `node-<name>`.
    pub role: String,
    pub host: String,
    pub pid: u32,
}

/// A started network.
#[derive(Debug, Clone)]
pub struct Deployment {
    pub plan: DeploymentPlan,
    pub report: StageReport,
    pub processes: Vec<ProcessRecord>,
}

impl Deployment {
    pub fn engine_log(&self) -> PathBuf {
        engine_dir(&self.plan.engine.host).join("events.jsonl")
    }

    pub fn bus_capture(&self) -> PathBuf {
        bus_dir(&self.plan.bus.host).join("capture.jsonl")
    }

    pub fn bus_addr(&self) -> String {
        self.plan.bus_endpoint.to_string()
    }

    pub fn node_url(&self, node: &str) -> Option<String> {
        let assignment = self.plan.nodes.iter().find(|a| a.role == qdnet_core::topology::Role::Node(node.into()))?;
        let decl = self.plan.config.node(node)?;
        Some(format!("http://{}:{}", assignment.host.address(), decl.api_port))
    }
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("artifact {0} not found; build the workspace binaries first")]
    MissingArtifact(PathBuf),
    #[error("stage {stage}: {source}")]
    Remote { stage: Stage, source: RemoteError },
    #[error("stage {stage}: port {port} on host {host} is already in use")]
    PortConflict { stage: Stage, host: String, port: u16 },
    #[error("stage {stage}: {role} on host {host} did not become ready: {detail}")]
    NotReady {
        stage: Stage,
        host: String,
        role: String,
        detail: String,
    },
}

fn node_dir(host: &HostEntry, node: &str) -> PathBuf {
    host.workdir().join("nodes").join(node)
}

fn engine_dir(host: &HostEntry) -> PathBuf {
    host.workdir().join("engine")
}

fn bus_dir(host: &HostEntry) -> PathBuf {
    host.workdir().join("bus")
}

fn run_dir(host: &HostEntry) -> PathBuf {
    host.workdir().join("run")
}

struct Driver<'a> {
    plan: &'a DeploymentPlan,
    options: &'a StartOptions,
    config_yaml: String,
    stage: Stage,
    launched: Vec<(HostEntry, ProcessRecord)>,
    invocations: StageMap<u32>,
}

/// Deploys `plan`. On failure every process already launched is killed.
pub async fn start(plan: &DeploymentPlan, options: &StartOptions) -> Result<Deployment, OrchestratorError> {
    for artifact in [NODE_ARTIFACT, ENGINE_ARTIFACT, BROKER_ARTIFACT] {
        let path = options.artifacts.join(artifact);
        if !path.is_file() {
            return Err(OrchestratorError::MissingArtifact(path));
        }
    }
    let mut config: NetworkConfig = plan.config.clone();
    if let Some(scale) = options.time_scale {
        config.time_scale = scale;
    }
    let mut driver = Driver {
        plan,
        options,
        config_yaml: config.to_yaml(),
        stage: Stage::NodeInstallation,
        launched: Vec::new(),
        invocations: StageMap::default(),
    };

    let mut report = StageReport {
        node_count: plan.nodes.len(),
        ..StageReport::default()
    };
    let started = Instant::now();
    for stage in Stage::ALL {
        driver.stage = stage;
        let stage_start = Instant::now();
        let outcome = match stage {
            Stage::NodeInstallation => driver.install_nodes().await,
            Stage::EngineInstallation => driver.install_engine().await,
            Stage::BusConfiguration => driver.configure_bus().await,
            Stage::NodeInitialization => driver.initialize_nodes().await,
            Stage::EngineInitialization => driver.initialize_engine(config.time_scale).await,
        };
        *report.stages.get_mut(stage) = stage_start.elapsed().as_secs_f64();
        if let Err(e) = outcome {
            warn!(%stage, error = %e, "deployment failed; rolling back");
            driver.rollback().await;
            return Err(e);
        }
        info!(%stage, seconds = report.stages.get(stage), "stage complete");
    }
    report.total_s = started.elapsed().as_secs_f64();
    report.invocations = driver.invocations;
    Ok(Deployment {
        plan: plan.clone(),
        report,
        processes: driver.launched.into_iter().map(|(_, record)| record).collect(),
    })
}

impl Driver<'_> {
    async fn exec(&self, host: &HostEntry, action: Action) -> Result<ActionOutput, OrchestratorError> {
        execute_remote(host, &action).await.map_err(|source| OrchestratorError::Remote {
            stage: self.stage,
            source,
        })
    }

    /// Copies `artifact` and the network description into `dir`.
    async fn install(&self, host: &HostEntry, dir: &Path, artifact: &str) -> Result<(), OrchestratorError> {
        self.exec(host, Action::MakeDir(dir.to_path_buf())).await?;
        self.exec(
            host,
            Action::Copy {
                from: self.options.artifacts.join(artifact),
                to: dir.join(artifact),
            },
        )
        .await?;
        self.exec(
            host,
            Action::WriteFile {
                path: dir.join("config.yaml"),
                contents: self.config_yaml.clone(),
            },
        )
        .await?;
        Ok(())
    }

    fn count(&mut self) {
        *self.invocations.get_mut(self.stage) += 1;
    }

    async fn install_nodes(&mut self) -> Result<(), OrchestratorError> {
        for assignment in &self.plan.nodes {
            let qdnet_core::topology::Role::Node(name) = &assignment.role else {
                continue;
            };
            self.install(&assignment.host, &node_dir(&assignment.host, name), NODE_ARTIFACT)
                .await?;
            self.count();
        }
        Ok(())
    }

    async fn install_engine(&mut self) -> Result<(), OrchestratorError> {
        let host = &self.plan.engine.host;
        let dir = engine_dir(host);
        self.install(host, &dir, ENGINE_ARTIFACT).await?;
        self.exec(host, Action::Remove(dir.join("events.jsonl"))).await?;
        self.count();
        Ok(())
    }

    async fn configure_bus(&mut self) -> Result<(), OrchestratorError> {
        let host = self.plan.bus.host.clone();
        let dir = bus_dir(&host);
        let endpoint = &self.plan.bus_endpoint;
        self.exec(&host, Action::MakeDir(dir.clone())).await?;
        self.exec(
            &host,
            Action::Copy {
                from: self.options.artifacts.join(BROKER_ARTIFACT),
                to: dir.join(BROKER_ARTIFACT),
            },
        )
        .await?;
        self.check_port(&host, &endpoint.host, endpoint.port)?;
        let bind = match host.connection {
            ConnectionMode::Local => endpoint.to_string(),
            ConnectionMode::Ssh => format!("0.0.0.0:{}", endpoint.port),
        };
        let mut args = vec!["--bind".to_owned(), bind];
        if self.options.capture_bus {
            let capture = dir.join("capture.jsonl");
            self.exec(&host, Action::Remove(capture.clone())).await?;
            args.push("--capture".into());
            args.push(capture.to_string_lossy().into_owned());
        }
        let pid = self
            .launch(&host, "bus", dir.join(BROKER_ARTIFACT), args, dir.join("broker.out"))
            .await?;
        let addr = endpoint.to_string();
        self.wait_ready(&host, "bus", pid, &dir.join("broker.out"), || async {
            tokio::net::TcpStream::connect(&addr).await.is_ok()
        })
        .await?;
        self.count();
        Ok(())
    }

    async fn initialize_nodes(&mut self) -> Result<(), OrchestratorError> {
        for assignment in &self.plan.nodes {
            let qdnet_core::topology::Role::Node(name) = &assignment.role else {
                continue;
            };
            let host = &assignment.host;
            let decl = self.plan.config.node(name).expect("plan nodes come from the config");
            let dir = node_dir(host, name);
            self.check_port(host, host.address(), decl.api_port)?;
            let listen = match host.connection {
                ConnectionMode::Local => host.address().to_owned(),
                ConnectionMode::Ssh => "0.0.0.0".to_owned(),
            };
            let mut args = vec![
                "--name".to_owned(),
                name.clone(),
                "--config".into(),
                dir.join("config.yaml").to_string_lossy().into_owned(),
                "--bus".into(),
                self.plan.bus_endpoint.to_string(),
                "--listen".into(),
                listen,
                "--port".into(),
                decl.api_port.to_string(),
            ];
            if let Some(ttl) = self.options.node_ttl {
                args.push("--ttl".into());
                args.push(ttl.as_secs_f64().to_string());
            }
            let role = format!("node-{name}");
            let log = dir.join("node.log");
            let pid = self.launch(host, &role, dir.join(NODE_ARTIFACT), args, log.clone()).await?;
            let client = EtsiClient::new(name.clone(), format!("http://{}:{}", host.address(), decl.api_port));
            let sae = decl.sae_id.clone();
            self.wait_ready(host, &role, pid, &log, || async { client.status(&sae).await.is_ok() })
                .await?;
            self.count();
        }
        Ok(())
    }

    async fn initialize_engine(&mut self, time_scale: f64) -> Result<(), OrchestratorError> {
        let host = self.plan.engine.host.clone();
        let dir = engine_dir(&host);
        let events = dir.join("events.jsonl");
        let args = vec![
            "--config".to_owned(),
            dir.join("config.yaml").to_string_lossy().into_owned(),
            "--bus".into(),
            self.plan.bus_endpoint.to_string(),
            "--log".into(),
            events.to_string_lossy().into_owned(),
            "--time-scale".into(),
            time_scale.to_string(),
            "--seed".into(),
            self.options.seed.to_string(),
        ];
        let pid = self
            .launch(&host, "engine", dir.join(ENGINE_ARTIFACT), args, dir.join("engine.out"))
            .await?;
        self.wait_ready(&host, "engine", pid, &dir.join("engine.out"), || async {
            match execute_remote(&host, &Action::ReadFile(events.clone())).await {
                Ok(ActionOutput::Text(text)) => text
                    .lines()
                    .filter_map(|line| serde_json::from_str::<LogRecord>(line).ok())
                    .any(|record| record.event == "ready"),
                _ => false,
            }
        })
        .await?;
        self.count();
        Ok(())
    }

    async fn launch(
        &mut self,
        host: &HostEntry,
        role: &str,
        program: PathBuf,
        args: Vec<String>,
        log: PathBuf,
    ) -> Result<u32, OrchestratorError> {
        let run = run_dir(host);
        self.exec(host, Action::MakeDir(run.clone())).await?;
        let output = self
            .exec(
                host,
                Action::Launch {
                    program,
                    args,
                    log,
                    pidfile: run.join(format!("{role}.pid")),
                },
            )
            .await?;
        let ActionOutput::Launched { pid } = output else {
            unreachable!("launch reports a pid")
        };
        info!(host = %host.host_name, role, pid, "launched");
        self.launched.push((
            host.clone(),
            ProcessRecord {
                role: role.to_owned(),
                host: host.host_name.clone(),
                pid,
            },
        ));
        Ok(pid)
    }

    /// Polls `ready` until it holds, the process dies or the timeout passes.
    async fn wait_ready<F, Fut>(
        &self,
        host: &HostEntry,
        role: &str,
        pid: u32,
        log: &Path,
        ready: F,
    ) -> Result<(), OrchestratorError>
    where
        F: Fn() -> Fut,
        Fut: std::future::Future<Output = bool>,
    {
        let deadline = Instant::now() + self.options.ready_timeout;
        let mut polls = 0u32;
        loop {
            if ready().await {
                return Ok(());
            }
            polls += 1;
            let died = polls % PROBE_EVERY == 0
                && matches!(
                    self.exec(host, Action::Probe { pid }).await?,
                    ActionOutput::State(ProcessState::Gone)
                );
            if died || Instant::now() >= deadline {
                let tail = match execute_remote(host, &Action::ReadFile(log.to_path_buf())).await {
                    Ok(ActionOutput::Text(text)) => text.lines().rev().take(3).collect::<Vec<_>>().join(" | "),
                    _ => String::new(),
                };
                let what = if died { "process exited" } else { "timed out" };
                return Err(OrchestratorError::NotReady {
                    stage: self.stage,
                    host: host.host_name.clone(),
                    role: role.to_owned(),
                    detail: if tail.is_empty() { what.to_owned() } else { format!("{what}: {tail}") },
                });
            }
            tokio::time::sleep(POLL_INTERVAL).await;
        }
    }

    /// On local hosts, refuses to launch onto a port that is already bound.
    fn check_port(&self, host: &HostEntry, address: &str, port: u16) -> Result<(), OrchestratorError> {
        if host.connection != ConnectionMode::Local {
            return Ok(());
        }
        match std::net::TcpListener::bind((address, port)) {
            Ok(_) => Ok(()),
            Err(_) => Err(OrchestratorError::PortConflict {
                stage: self.stage,
                host: host.host_name.clone(),
                port,
            }),
        }
    }

    async fn rollback(&mut self) {
        for (host, record) in self.launched.drain(..).rev() {
            if let Err(e) = execute_remote(&host, &Action::Kill { pid: record.pid }).await {
                warn!(host = %host.host_name, role = %record.role, error = %e, "rollback kill failed");
            }
            let pidfile = run_dir(&host).join(format!("{}.pid", record.role));
            let _ = execute_remote(&host, &Action::Remove(pidfile)).await;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StoppedProcess {
    pub host: String,
    pub role: String,
    pub pid: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct StopReport {
    pub stopped: Vec<StoppedProcess>,
    /// Hosts that could not be reached, with the reason.
    pub unreachable: Vec<(String, String)>,
}

impl StopReport {
    pub fn nothing_to_stop(&self) -> bool {
        self.stopped.is_empty() && self.unreachable.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.unreachable.is_empty()
    }
}

impl fmt::Display for StopReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.nothing_to_stop() {
            return f.write_str("nothing to stop");
        }
        for p in &self.stopped {
            writeln!(f, "stopped {} on {} (pid {})", p.role, p.host, p.pid)?;
        }
        for (host, reason) in &self.unreachable {
            writeln!(f, "unreachable host {host}: {reason}")?;
        }
        Ok(())
    }
}

/// Terminates every recorded process on every inventory host. Hosts that
/// cannot be reached are reported; the others are still stopped.
pub async fn stop(inventory: &Inventory) -> StopReport {
    let mut report = StopReport::default();
    for host in &inventory.hosts {
        if let Err(e) = stop_host(host, &mut report).await {
            report.unreachable.push((host.host_name.clone(), e.to_string()));
        }
    }
    report
}

async fn stop_host(host: &HostEntry, report: &mut StopReport) -> Result<(), RemoteError> {
    let listing = match execute_remote(host, &Action::ListPidfiles(run_dir(host))).await? {
        ActionOutput::Text(text) => text,
        _ => String::new(),
    };
    for line in listing.lines() {
        let Some((file, pid)) = line.rsplit_once(' ') else {
            continue;
        };
        let file = PathBuf::from(file);
        if let Ok(pid) = pid.trim().parse::<u32>() {
            execute_remote(host, &Action::Kill { pid }).await?;
            let role = file
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            report.stopped.push(StoppedProcess {
                host: host.host_name.clone(),
                role,
                pid,
            });
        }
        execute_remote(host, &Action::Remove(file)).await?;
    }
    Ok(())
}

/// Liveness of the processes of a deployment.
pub async fn probe_processes(deployment: &Deployment) -> Vec<(ProcessRecord, ProcessState)> {
    let mut states = Vec::new();
    for record in &deployment.processes {
        let host = std::iter::once(&deployment.plan.engine)
            .chain(deployment.plan.nodes.iter())
            .map(|a| &a.host)
            .find(|h| h.host_name == record.host)
            .expect("processes run on plan hosts");
        let state = match execute_remote(host, &Action::Probe { pid: record.pid }).await {
            Ok(ActionOutput::State(state)) => state,
            _ => ProcessState::Gone,
        };
        states.push((record.clone(), state));
    }
    states
}
