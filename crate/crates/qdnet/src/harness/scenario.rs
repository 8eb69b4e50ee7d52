//! The four event-ordering processes on the Madrid star.
//!
//! 1. Quintin asks for 512 then 64 bits on the same link.
//! 2. Quintin-Quijote (512 bits) and Quijote-Quevedo (64 bits) concurrently.
//! 3. Quijote-Aquiles under intercept-resend.
//! 4. Quintin relays an end-to-end key to Quevedo through Quijote.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use base64::Engine as _;
use qdnet_engine::LogRecord;
use qdnet_relay::{AgentDirectory, FrameTap, RelayAgent, RelayPath, Relayer};
use serde::Serialize;
use serde_json::{json, Value};
use tokio::net::TcpListener;
use uuid::Uuid;

use super::{madrid_adversarial, hex, write_jsonl, HarnessError, LocalNetwork, LocalOptions};

/// Gap between the two same-link requests of process 1: long enough for
/// the engine to receive them in order, short enough that the second is
/// sent before the first completes.
const SECOND_REQUEST_DELAY: Duration = Duration::from_millis(20);

#[derive(Debug, Clone)]
pub struct ScenarioOptions {
    pub artifacts: PathBuf,
    pub seed: u64,
    pub time_scale: f64,
    /// Number of relays in process 4.
    pub relay_repetitions: usize,
    /// Directory for the event log and captured frames.
    pub out: Option<PathBuf>,
}

impl ScenarioOptions {
    pub fn new(artifacts: impl Into<PathBuf>) -> Self {
        Self {
            artifacts: artifacts.into(),
            seed: 0,
            time_scale: super::DEFAULT_TIME_SCALE,
            relay_repetitions: 1,
            out: None,
        }
    }
}

/// One line of the scenario event log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioEvent {
    /// Seconds since the scenario started.
    pub t_s: f64,
    pub process: u8,
    pub event: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub link: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bits: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub key_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub key_hex: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qber: Option<f64>,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub detail: Value,
}

impl ScenarioEvent {
    fn new(t_s: f64, process: u8, event: &str) -> Self {
        Self {
            t_s,
            process,
            event: event.into(),
            node: None,
            link: None,
            bits: None,
            key_id: None,
            key_hex: None,
            qber: None,
            detail: Value::Null,
        }
    }

    /// The event without timing or random identifiers, for comparing runs.
    pub fn signature(&self) -> String {
        format!(
            "p{} {} {} {} {}",
            self.process,
            self.event,
            self.node.as_deref().unwrap_or("-"),
            self.link.as_deref().unwrap_or("-"),
            self.bits.map_or("-".into(), |b| b.to_string())
        )
    }
}

/// A key handed out by an initiator node.
#[derive(Debug, Clone)]
struct Delivery {
    key_id: String,
    key: Vec<u8>,
    /// Seconds from the process start to the API response.
    done_s: f64,
    /// Engine-side simulated duration of the request.
    simulated_s: f64,
    qber: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SerializationCheck {
    pub long_done_s: f64,
    pub short_done_s: f64,
    pub long_simulated_s: f64,
    pub short_simulated_s: f64,
    pub time_scale: f64,
}

impl SerializationCheck {
    /// Lower bound on the short request's completion: both requests'
    /// simulated time, scaled, minus 0.1 s.
    pub fn lower_bound_s(&self) -> f64 {
        (self.long_simulated_s + self.short_simulated_s) / self.time_scale - 0.1
    }

    pub fn holds(&self) -> bool {
        self.long_done_s < self.short_done_s && self.short_done_s >= self.lower_bound_s()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ParallelCheck {
    pub long_done_s: f64,
    pub short_done_s: f64,
    pub short_simulated_s: f64,
    pub time_scale: f64,
}

impl ParallelCheck {
    /// Upper bound on the short request: its own scaled time plus 0.5 s.
    pub fn upper_bound_s(&self) -> f64 {
        self.short_simulated_s / self.time_scale + 0.5
    }

    pub fn holds(&self) -> bool {
        self.short_done_s < self.long_done_s && self.short_done_s <= self.upper_bound_s()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EavesdropCheck {
    pub qber: Option<f64>,
    pub threshold: f64,
    pub alarm_logged: bool,
    pub keys_differ: bool,
}

impl EavesdropCheck {
    pub fn holds(&self) -> bool {
        self.qber.is_some_and(|q| q > self.threshold) && self.alarm_logged && self.keys_differ
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RelayCheck {
    pub repetitions: usize,
    pub matching: usize,
    pub failures: Vec<String>,
    pub frames_scanned: usize,
    /// Relays whose end-to-end key showed up in a captured frame.
    pub leaked: usize,
}

impl RelayCheck {
    pub fn holds(&self) -> bool {
        self.matching == self.repetitions && self.failures.is_empty() && self.leaked == 0 && self.frames_scanned > 0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub seed: u64,
    pub time_scale: f64,
    pub serialization: SerializationCheck,
    pub parallelism: ParallelCheck,
    pub eavesdrop: EavesdropCheck,
    pub relay: RelayCheck,
    #[serde(skip)]
    pub events: Vec<ScenarioEvent>,
}

impl ScenarioReport {
    /// Orderings that did not come out as expected.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.serialization.holds() {
            out.push(format!("process 1: same-link requests out of order or too early: {:?}", self.serialization));
        }
        if !self.parallelism.holds() {
            out.push(format!("process 2: shorter cross-link key not first or late: {:?}", self.parallelism));
        }
        if !self.eavesdrop.holds() {
            out.push(format!("process 3: eavesdropping not observed: {:?}", self.eavesdrop));
        }
        if !self.relay.holds() {
            out.push(format!("process 4: relay failed: {:?}", self.relay));
        }
        out
    }

    /// Key material in event order, hex encoded.
    pub fn key_material(&self) -> Vec<String> {
        self.events.iter().filter_map(|e| e.key_hex.clone()).collect()
    }

    pub fn ordering(&self) -> Vec<String> {
        self.events.iter().map(ScenarioEvent::signature).collect()
    }
}

struct Run<'a> {
    net: &'a LocalNetwork,
    started: Instant,
    events: Vec<ScenarioEvent>,
}

impl Run<'_> {
    fn now(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    fn push(&mut self, event: ScenarioEvent) {
        self.events.push(event);
    }

    fn records(&self) -> Vec<LogRecord> {
        self.net.engine_records()
    }

    fn sent(&mut self, t_s: f64, process: u8, initiator: &str, peer: &str, bits: u32) {
        let mut e = ScenarioEvent::new(t_s, process, "request_sent");
        e.node = Some(initiator.into());
        e.link = Some(format!("{initiator}-{peer}"));
        e.bits = Some(bits);
        self.push(e);
    }

    fn delivered(&mut self, process: u8, initiator: &str, peer: &str, bits: u32, d: &Delivery, t0: f64) {
        let mut e = ScenarioEvent::new(t0 + d.done_s, process, "key_delivered");
        e.node = Some(initiator.into());
        e.link = Some(format!("{initiator}-{peer}"));
        e.bits = Some(bits);
        e.key_id = Some(d.key_id.clone());
        e.key_hex = Some(hex(&d.key));
        e.qber = d.qber;
        e.detail = json!({ "simulated_s": d.simulated_s, "response_s": d.done_s });
        self.push(e);
    }

    async fn request(&self, initiator: &str, peer: &str, bits: u32, t0: Instant) -> Result<Delivery, HarnessError> {
        let (key_id, key) = self.net.client(initiator).enc_key(&self.net.sae(peer), bits).await?;
        let done_s = t0.elapsed().as_secs_f64();
        let scheduled = find(&self.records(), &key_id, "scheduled");
        Ok(Delivery {
            simulated_s: scheduled.as_ref().and_then(|r| r.duration_s).unwrap_or(f64::NAN),
            qber: scheduled.and_then(|r| r.qber),
            key_id,
            key,
            done_s,
        })
    }

    /// The peer side fetches the same key by id.
    async fn retrieve(&mut self, process: u8, peer: &str, initiator: &str, key_id: &str) -> Result<Vec<u8>, HarnessError> {
        let key = self.net.client(peer).dec_key(&self.net.sae(initiator), key_id).await?;
        let mut e = ScenarioEvent::new(self.now(), process, "key_retrieved");
        e.node = Some(peer.into());
        e.link = Some(format!("{initiator}-{peer}"));
        e.bits = Some(key.len() as u32 * 8);
        e.key_id = Some(key_id.into());
        e.key_hex = Some(hex(&key));
        self.push(e);
        Ok(key)
    }
}

fn find(records: &[LogRecord], key_id: &str, event: &str) -> Option<LogRecord> {
    let id = Uuid::parse_str(key_id).ok()?;
    records
        .iter()
        .find(|r| r.event == event && r.request_id == Some(id))
        .cloned()
}

/// Deploys the adversarial Madrid network and runs processes 1-4.
pub async fn scenario_b(options: &ScenarioOptions) -> Result<ScenarioReport, HarnessError> {
    let local = LocalOptions {
        time_scale: options.time_scale,
        seed: options.seed,
        capture_bus: true,
        ..LocalOptions::new(&options.artifacts)
    };
    let net = LocalNetwork::deploy(&madrid_adversarial(), &local).await?;
    let outcome = run_processes(&net, options).await;
    if let Some(out) = &options.out {
        std::fs::create_dir_all(out)?;
        let _ = std::fs::copy(net.deployment.engine_log(), out.join("engine.jsonl"));
        let _ = std::fs::copy(net.deployment.bus_capture(), out.join("bus-capture.jsonl"));
        let _ = std::fs::copy(net.scratch().join("relay-frames.jsonl"), out.join("relay-frames.jsonl"));
    }
    net.shutdown().await;
    let report = outcome?;
    if let Some(out) = &options.out {
        write_jsonl(&out.join("scenario-b.jsonl"), &report.events)?;
        std::fs::write(
            out.join("scenario-b-summary.json"),
            serde_json::to_string_pretty(&report).expect("report serializes"),
        )?;
    }
    Ok(report)
}

async fn run_processes(net: &LocalNetwork, options: &ScenarioOptions) -> Result<ScenarioReport, HarnessError> {
    let mut run = Run {
        net,
        started: Instant::now(),
        events: Vec::new(),
    };
    let scale = options.time_scale;

    // Process 1: 512 then 64 bits on Quintin-Quijote.
    let t0 = Instant::now();
    let t0_s = run.now();
    let (long, short) = {
        let long = run.request("Quintin", "Quijote", 512, t0);
        let short = async {
            tokio::time::sleep(SECOND_REQUEST_DELAY).await;
            run.request("Quintin", "Quijote", 64, t0).await
        };
        tokio::join!(long, short)
    };
    run.sent(t0_s, 1, "Quintin", "Quijote", 512);
    run.sent(t0_s + SECOND_REQUEST_DELAY.as_secs_f64(), 1, "Quintin", "Quijote", 64);
    let (long, short) = (long?, short?);
    // Record deliveries in completion order.
    let mut deliveries = [(512, &long), (64, &short)];
    deliveries.sort_by(|a, b| a.1.done_s.total_cmp(&b.1.done_s));
    for (bits, d) in deliveries {
        run.delivered(1, "Quintin", "Quijote", bits, d, t0_s);
    }
    run.retrieve(1, "Quijote", "Quintin", &long.key_id).await?;
    run.retrieve(1, "Quijote", "Quintin", &short.key_id).await?;
    let serialization = SerializationCheck {
        long_done_s: long.done_s,
        short_done_s: short.done_s,
        long_simulated_s: long.simulated_s,
        short_simulated_s: short.simulated_s,
        time_scale: scale,
    };

    // Process 2: concurrent requests on two links through Quijote.
    let t0 = Instant::now();
    let t0_s = run.now();
    run.sent(t0_s, 2, "Quintin", "Quijote", 512);
    run.sent(t0_s, 2, "Quijote", "Quevedo", 64);
    let (long, short) = tokio::join!(
        run.request("Quintin", "Quijote", 512, t0),
        run.request("Quijote", "Quevedo", 64, t0)
    );
    let (long, short) = (long?, short?);
    let mut deliveries = [("Quintin", "Quijote", 512, &long), ("Quijote", "Quevedo", 64, &short)];
    deliveries.sort_by(|a, b| a.3.done_s.total_cmp(&b.3.done_s));
    for (initiator, peer, bits, d) in deliveries {
        run.delivered(2, initiator, peer, bits, d, t0_s);
    }
    let parallelism = ParallelCheck {
        long_done_s: long.done_s,
        short_done_s: short.done_s,
        short_simulated_s: short.simulated_s,
        time_scale: scale,
    };

    // Process 3: eavesdropped exchange on Quijote-Aquiles.
    let t0 = Instant::now();
    let t0_s = run.now();
    run.sent(t0_s, 3, "Quijote", "Aquiles", 256);
    let tapped = run.request("Quijote", "Aquiles", 256, t0).await?;
    let records = run.records();
    let alarm = find(&records, &tapped.key_id, "qber_alarm");
    if let Some(alarm) = &alarm {
        let mut e = ScenarioEvent::new(t0_s + tapped.done_s, 3, "qber_alarm");
        e.link = alarm.link.clone();
        e.qber = alarm.qber;
        e.detail = alarm.detail.clone();
        run.push(e);
    }
    run.delivered(3, "Quijote", "Aquiles", 256, &tapped, t0_s);
    let peer_key = run.retrieve(3, "Aquiles", "Quijote", &tapped.key_id).await?;
    let threshold = net
        .config()
        .link_between("Quijote", "Aquiles")
        .map_or(0.11, |(_, l)| l.phys.qber_abort_threshold);
    let eavesdrop = EavesdropCheck {
        qber: tapped.qber,
        threshold,
        alarm_logged: alarm.is_some(),
        keys_differ: peer_key != tapped.key,
    };

    // Process 4: trusted-node relay Quintin -> Quijote -> Quevedo.
    let relay = relay_process(&mut run, options).await?;
    run.events.sort_by(|a, b| a.t_s.total_cmp(&b.t_s));

    Ok(ScenarioReport {
        seed: options.seed,
        time_scale: scale,
        serialization,
        parallelism,
        eavesdrop,
        relay,
        events: run.events,
    })
}

async fn relay_process(run: &mut Run<'_>, options: &ScenarioOptions) -> Result<RelayCheck, HarnessError> {
    let net = run.net;
    let tap_path = net.scratch().join("relay-frames.jsonl");
    let tap = FrameTap::create(&tap_path)?;
    let directory = net.directory();
    let agents = AgentDirectory::new();
    let mut running = Vec::new();
    for node in ["Quintin", "Quijote", "Quevedo"] {
        let listener = TcpListener::bind("127.0.0.1:0").await?;
        running.push(RelayAgent::spawn(node, directory.clone(), agents.clone(), Some(tap.clone()), listener)?);
    }
    let relayer = Relayer::new(net.config().clone(), directory, agents, Some(options.seed)).with_tap(tap);
    let path = RelayPath::parse(net.config(), "Quintin,Quijote,Quevedo")?;

    let mut keys = Vec::new();
    let mut failures = Vec::new();
    let mut matching = 0;
    for _ in 0..options.relay_repetitions {
        let t = run.now();
        match relayer.relay_key(&path, 256).await {
            Ok(outcome) => {
                if outcome.keys_match() {
                    matching += 1;
                }
                let mut e = ScenarioEvent::new(t, 4, "relay_complete");
                e.node = Some("Quevedo".into());
                e.link = Some("Quintin-Quijote-Quevedo".into());
                e.bits = Some(256);
                e.key_id = Some(outcome.key_id.to_string());
                e.key_hex = Some(hex(&outcome.initiator_key));
                e.detail = json!({
                    "target_key_hex": hex(&outcome.target_key),
                    "hop_key_ids": outcome.hop_key_ids,
                    "duration_s": run.now() - t,
                });
                run.push(e);
                keys.push(outcome.initiator_key);
            }
            Err(e) => failures.push(e.to_string()),
        }
    }
    for agent in running {
        agent.shutdown();
    }

    let mut captured = std::fs::read_to_string(net.deployment.bus_capture()).unwrap_or_default();
    captured.push_str(&std::fs::read_to_string(&tap_path).unwrap_or_default());
    let frames_scanned = captured.lines().count();
    let leaked = keys.iter().filter(|key| contains_key(&captured, key)).count();
    Ok(RelayCheck {
        repetitions: options.relay_repetitions,
        matching,
        failures,
        frames_scanned,
        leaked,
    })
}

/// Looks for `key` in base64, hex, JSON byte-array or raw form.
pub fn contains_key(captured: &str, key: &[u8]) -> bool {
    let b64 = base64::engine::general_purpose::STANDARD.encode(key);
    let array = serde_json::to_string(key).expect("bytes serialize");
    captured.contains(&b64)
        || captured.contains(&hex(key))
        || captured.contains(&array)
        || std::str::from_utf8(key).is_ok_and(|raw| captured.contains(raw))
}
