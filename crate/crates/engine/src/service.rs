use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use qdnet_bus::{BusClient, BusError, BusMessage, MessageKind};
use qdnet_core::messages::{self, ModelingRequest, ModelingResult, Recipient, ResultStatus, ENGINE_ROUTING_KEY};
use qdnet_core::quantum::{ProtocolRegistry, QkdProtocol};
use qdnet_core::topology::{LinkDecl, NetworkConfig};
use serde_json::json;
use thiserror::Error;
use tokio::sync::mpsc;
use tracing::{debug, warn};

use crate::{fulfill, EventLog, LinkBuffer, LinkSchedule, LogRecord};

const PUBLISH_ATTEMPTS: u32 = 8;
const FAILURES_BEFORE_LOGGING: u32 = 3;

#[derive(Debug, Clone)]
pub struct EngineSettings {
    /// Emulated seconds per wall-clock second.
    pub time_scale: f64,
    /// Base seed for every protocol round.
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("link {link}: protocol `{protocol}` is not registered")]
    UnknownProtocol { link: String, protocol: String },
    #[error("time_scale must be positive, got {0}")]
    InvalidTimeScale(f64),
    #[error(transparent)]
    Bus(#[from] BusError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RequestError {
    #[error(transparent)]
    Invalid(#[from] messages::RequestError),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("`{0}` and `{1}` are not neighbors")]
    NotAdjacent(String, String),
}

/// Checks that both nodes exist and share a link; returns the link index.
pub fn validate_request(req: &ModelingRequest, config: &NetworkConfig) -> Result<usize, RequestError> {
    req.validate()?;
    for node in [&req.initiator, &req.peer] {
        if config.node(node).is_none() {
            return Err(RequestError::UnknownNode(node.clone()));
        }
    }
    config
        .link_between(&req.initiator, &req.peer)
        .map(|(index, _)| index)
        .ok_or_else(|| RequestError::NotAdjacent(req.initiator.clone(), req.peer.clone()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkCounters {
    pub link: String,
    pub generated_bits: u64,
    pub delivered_bits: u64,
    pub requests: u64,
}

struct Job {
    request: ModelingRequest,
    received: Instant,
}

struct Ready {
    result: ModelingResult,
    completion: Instant,
    received: Instant,
}

struct Link {
    decl: LinkDecl,
    id: String,
    protocol: Arc<dyn QkdProtocol>,
    buffer: Arc<Mutex<LinkBuffer>>,
}

struct Shared {
    config: NetworkConfig,
    settings: EngineSettings,
    log: EventLog,
    links: Vec<Link>,
}

/// The modeling engine service.
#[derive(Clone)]
pub struct Engine {
    shared: Arc<Shared>,
}

impl Engine {
    pub fn new(
        config: NetworkConfig,
        registry: &ProtocolRegistry,
        settings: EngineSettings,
        log: EventLog,
    ) -> Result<Self, EngineError> {
        if !(settings.time_scale > 0.0 && settings.time_scale.is_finite()) {
            return Err(EngineError::InvalidTimeScale(settings.time_scale));
        }
        let links = config
            .links
            .iter()
            .map(|decl| {
                let protocol = registry
                    .get(decl.protocol.as_str())
                    .ok_or_else(|| EngineError::UnknownProtocol {
                        link: decl.id(),
                        protocol: decl.protocol.as_str().to_owned(),
                    })?;
                Ok(Link {
                    decl: decl.clone(),
                    id: decl.id(),
                    protocol,
                    buffer: Arc::default(),
                })
            })
            .collect::<Result<Vec<_>, EngineError>>()?;
        Ok(Self {
            shared: Arc::new(Shared {
                config,
                settings,
                log,
                links,
            }),
        })
    }

    pub fn counters(&self) -> Vec<LinkCounters> {
        self.shared
            .links
            .iter()
            .map(|link| {
                let buffer = link.buffer.lock().unwrap();
                LinkCounters {
                    link: link.id.clone(),
                    generated_bits: buffer.generated_bits,
                    delivered_bits: buffer.delivered_bits,
                    requests: buffer.requests,
                }
            })
            .collect()
    }

    /// Serves requests from the bus until the client is closed.
    pub async fn run(&self, bus: BusClient) -> Result<(), EngineError> {
        let mut requests = bus.subscribe(ENGINE_ROUTING_KEY).await?;
        let workers: Vec<mpsc::UnboundedSender<Job>> = (0..self.shared.links.len())
            .map(|index| self.spawn_link(index, bus.clone()))
            .collect();
        self.shared.log.record(LogRecord::info("ready").detail(json!({
            "links": self.shared.links.iter().map(|l| &l.id).collect::<Vec<_>>(),
            "time_scale": self.shared.settings.time_scale,
            "seed": self.shared.settings.seed,
        })));

        while let Some(msg) = requests.recv().await {
            let received = Instant::now();
            if msg.kind != MessageKind::ModelingRequest {
                self.error_record(None, format!("unexpected message kind {:?}", msg.kind));
                continue;
            }
            let request: ModelingRequest = match msg.decode() {
                Ok(request) => request,
                Err(e) => {
                    self.error_record(None, format!("malformed request: {e}"));
                    continue;
                }
            };
            self.shared.log.record(
                LogRecord::info("received")
                    .request(request.request_id)
                    .detail(json!({
                        "initiator": request.initiator,
                        "peer": request.peer,
                        "bits_needed": request.bits_needed,
                    })),
            );
            match validate_request(&request, &self.shared.config) {
                Ok(index) => {
                    self.shared.log.record(
                        LogRecord::info("validated")
                            .request(request.request_id)
                            .link(&self.shared.links[index].id),
                    );
                    let _ = workers[index].send(Job { request, received });
                }
                Err(e) => {
                    self.error_record(Some(request.request_id), e.to_string());
                    let result = ModelingResult::error(&request, e.to_string());
                    let bus = bus.clone();
                    let shared = self.shared.clone();
                    tokio::spawn(async move {
                        let msg = BusMessage::modeling_result(&result, Recipient::Initiator);
                        publish_with_retry(&bus, &msg, &shared.log, result.request_id).await;
                    });
                }
            }
        }
        Ok(())
    }

    fn error_record(&self, request_id: Option<uuid::Uuid>, reason: String) {
        let mut record = LogRecord::new("error", "error").detail(json!({ "reason": reason }));
        record.request_id = request_id;
        self.shared.log.record(record);
    }

    /// Starts the serial worker and the delayed publisher of one link.
    fn spawn_link(&self, index: usize, bus: BusClient) -> mpsc::UnboundedSender<Job> {
        let (job_tx, mut job_rx) = mpsc::unbounded_channel::<Job>();
        let (ready_tx, mut ready_rx) = mpsc::unbounded_channel::<Ready>();

        let shared = self.shared.clone();
        tokio::spawn(async move {
            let mut schedule = LinkSchedule::new(shared.links[index].id.clone());
            while let Some(job) = job_rx.recv().await {
                let worker = shared.clone();
                let request = job.request.clone();
                let outcome = tokio::task::spawn_blocking(move || {
                    let link = &worker.links[index];
                    let mut buffer = link.buffer.lock().unwrap();
                    fulfill(
                        &request,
                        &link.decl,
                        link.protocol.as_ref(),
                        &mut buffer,
                        &worker.config.engine_options,
                        worker.settings.seed,
                    )
                })
                .await;
                let fulfillment = match outcome {
                    Ok(f) => f,
                    Err(e) => {
                        warn!(error = %e, "protocol run panicked");
                        let result = ModelingResult::error(&job.request, "internal error");
                        let _ = ready_tx.send(Ready {
                            result,
                            completion: Instant::now(),
                            received: job.received,
                        });
                        continue;
                    }
                };
                let link_id = &shared.links[index].id;
                let threshold = shared.links[index].decl.phys.qber_abort_threshold;
                for round in &fulfillment.rounds {
                    shared.log.record(
                        LogRecord::info("round_completed")
                            .request(job.request.request_id)
                            .link(link_id)
                            .qber(round.qber)
                            .duration(round.duration_s)
                            .detail(serde_json::to_value(round).expect("round reports serialize")),
                    );
                    if round.aborted {
                        shared.log.record(
                            LogRecord::new("warn", "qber_alarm")
                                .request(job.request.request_id)
                                .link(link_id)
                                .qber(round.qber)
                                .detail(json!({
                                    "round": round.round,
                                    "threshold": threshold,
                                    "released_compromised": round.released_compromised,
                                })),
                        );
                    }
                }
                let result = fulfillment.result;
                if result.status == ResultStatus::Error {
                    shared.error_for(&result, link_id);
                }
                let completion = schedule.schedule(job.received, result.simulated_duration_s, shared.settings.time_scale);
                shared.log.record(
                    LogRecord::info("scheduled")
                        .request(result.request_id)
                        .link(link_id)
                        .qber(result.qber)
                        .duration(result.simulated_duration_s)
                        .detail(json!({
                            "status": result.status,
                            "rounds": result.rounds,
                            "from_buffer": fulfillment.from_buffer,
                            "wait_s": completion.saturating_duration_since(Instant::now()).as_secs_f64(),
                        })),
                );
                let _ = ready_tx.send(Ready {
                    result,
                    completion,
                    received: job.received,
                });
            }
        });

        let shared = self.shared.clone();
        tokio::spawn(async move {
            while let Some(ready) = ready_rx.recv().await {
                tokio::time::sleep_until(ready.completion.into()).await;
                let link_id = &shared.links[index].id;
                let result = &ready.result;
                let recipients: &[Recipient] = match result.status {
                    ResultStatus::Error => &[Recipient::Initiator],
                    _ => &[Recipient::Initiator, Recipient::Peer],
                };
                let mut delivered = true;
                for &recipient in recipients {
                    let msg = BusMessage::modeling_result(result, recipient);
                    delivered &= publish_with_retry(&bus, &msg, &shared.log, result.request_id).await;
                }
                shared.log.record(
                    LogRecord::info("published")
                        .request(result.request_id)
                        .link(link_id)
                        .qber(result.qber)
                        .duration(result.simulated_duration_s)
                        .detail(json!({
                            "status": result.status,
                            "delivered": delivered,
                            "bits": result.key_material.as_ref().map_or(0, |k| k.len()),
                            "wall_delay_s": ready.received.elapsed().as_secs_f64(),
                        })),
                );
            }
        });

        job_tx
    }
}

impl Shared {
    fn error_for(&self, result: &ModelingResult, link: &str) {
        self.log.record(
            LogRecord::new("error", "error")
                .request(result.request_id)
                .link(link)
                .detail(json!({ "reason": result.error })),
        );
    }
}

/// Publishes `msg`, retrying with backoff. Returns whether it went out.
async fn publish_with_retry(bus: &BusClient, msg: &BusMessage, log: &EventLog, request_id: uuid::Uuid) -> bool {
    let mut backoff = Duration::from_millis(100);
    for attempt in 1..=PUBLISH_ATTEMPTS {
        match bus.publish(msg).await {
            Ok(()) => return true,
            Err(e) => {
                debug!(attempt, error = %e, "publish failed");
                if attempt == FAILURES_BEFORE_LOGGING {
                    log.record(
                        LogRecord::new("error", "error")
                            .request(request_id)
                            .detail(json!({
                                "reason": format!("bus publish failed {attempt} times: {e}"),
                                "routing_key": msg.routing_key,
                            })),
                    );
                }
                tokio::time::sleep(backoff).await;
                backoff = (backoff * 2).min(Duration::from_secs(2));
            }
        }
    }
    false
}
