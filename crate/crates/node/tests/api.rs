use std::time::{Duration, Instant};

use base64::Engine as _;
use qdnet_bus::{Broker, BrokerHandle, BrokerOptions, BusClient, BusMessage};
use qdnet_core::etsi::{KeyContainer, Status};
use qdnet_core::messages::ModelingRequest;
use qdnet_core::quantum::ProtocolRegistry;
use qdnet_core::topology::{parse_config, NetworkConfig};
use qdnet_engine::{Engine, EngineSettings, EventLog};
use qdnet_node::{NodeService, NodeSettings, RunningNode};
use reqwest::StatusCode;
use serde_json::{json, Value};

const CONFIG: &str = "
nodes:
  - { name: Quintin, sae_id: sae-quintin, api_port: 1 }
  - { name: Quijote, sae_id: sae-quijote, api_port: 2 }
  - { name: Quevedo, sae_id: sae-quevedo, api_port: 3 }
  - { name: Aquiles, sae_id: sae-aquiles, api_port: 4 }
  - { name: Island, sae_id: sae-island, api_port: 5 }
links:
  - endpoint_a: Quintin
    endpoint_b: Quijote
    phys: { pulses_per_round: 2000, pulse_rate_hz: 1000, classical_overhead_s: 0 }
  - endpoint_a: Quijote
    endpoint_b: Quevedo
    phys: { pulses_per_round: 2000, pulse_rate_hz: 100000, classical_overhead_s: 0 }
  - endpoint_a: Quijote
    endpoint_b: Aquiles
    eve: { intercept_fraction: 1.0 }
    phys: { pulses_per_round: 4000, pulse_rate_hz: 100000, classical_overhead_s: 0 }
engine_host: engine
bus_endpoint: 127.0.0.1:5672
engine_options: { buffer_leftover: false }
";

struct Net {
    broker: Option<BrokerHandle>,
    bus_addr: String,
    nodes: Vec<RunningNode>,
    http: reqwest::Client,
}

impl Net {
    fn url(&self, node: usize, path: &str) -> String {
        format!("http://{}/api/v1/keys/{path}", self.nodes[node].api_addr)
    }

    async fn get(&self, node: usize, path: &str) -> (StatusCode, Value) {
        let resp = self.http.get(self.url(node, path)).send().await.unwrap();
        let status = resp.status();
        (status, resp.json().await.unwrap())
    }

    async fn post(&self, node: usize, path: &str, body: Value) -> (StatusCode, Value) {
        let resp = self.http.post(self.url(node, path)).json(&body).send().await.unwrap();
        let status = resp.status();
        (status, resp.json().await.unwrap())
    }
}

const QUINTIN: usize = 0;
const QUIJOTE: usize = 1;
const AQUILES: usize = 3;

async fn net(time_scale: f64, ttl: Duration, with_engine: bool) -> Net {
    let config: NetworkConfig = parse_config(CONFIG).unwrap();
    let broker = Broker::bind("127.0.0.1:0", BrokerOptions::default()).await.unwrap();
    let bus_addr = broker.local_addr().to_string();
    if with_engine {
        let (log, _) = EventLog::memory();
        let engine = Engine::new(config.clone(), &ProtocolRegistry::builtin(), EngineSettings { time_scale, seed: 3 }, log)
            .unwrap();
        let bus = BusClient::connect(&bus_addr).await.unwrap();
        tokio::spawn(async move { engine.run(bus).await });
    }
    let mut nodes = Vec::new();
    for decl in &config.nodes {
        let settings = NodeSettings {
            ttl,
            engine_timeout: Duration::from_millis(if with_engine { 10_000 } else { 300 }),
            ..NodeSettings::new(&decl.name)
        };
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        nodes.push(NodeService::spawn(config.clone(), settings, &bus_addr, listener).await.unwrap());
    }
    while with_engine && !broker.active_keys().iter().any(|k| k == "engine") {
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    Net {
        broker: Some(broker),
        bus_addr,
        nodes,
        http: reqwest::Client::new(),
    }
}

fn decode(container: &Value) -> (String, Vec<u8>) {
    let parsed: KeyContainer = serde_json::from_value(container.clone()).unwrap();
    assert_eq!(parsed.keys.len(), 1);
    let key = base64::engine::general_purpose::STANDARD.decode(&parsed.keys[0].key).unwrap();
    (parsed.keys[0].key_ID.clone(), key)
}

fn assert_error(status: StatusCode, body: &Value, expected: StatusCode) {
    assert_eq!(status, expected, "{body}");
    let obj = body.as_object().unwrap();
    assert_eq!(obj.len(), 1, "{body}");
    assert!(obj["message"].is_string());
}

#[tokio::test]
async fn status_shape_and_errors() {
    let net = net(50.0, Duration::from_secs(600), true).await;
    let (code, body) = net.get(QUINTIN, "sae-quijote/status").await;
    assert_eq!(code, StatusCode::OK);
    let status: Status = serde_json::from_value(body.clone()).unwrap();
    assert_eq!(status.stored_key_count, 0);
    assert_eq!(status.key_size, 256);
    assert_eq!(status.max_key_per_request, 1);
    assert_eq!(status.master_SAE_ID, "sae-quintin");
    assert_eq!(status.slave_SAE_ID, "sae-quijote");
    assert_eq!(body.as_object().unwrap().len(), 11);

    // Routed but not adjacent: still a valid status.
    let (code, _) = net.get(QUINTIN, "sae-quevedo/status").await;
    assert_eq!(code, StatusCode::OK);
    // Readiness probe on the node's own SAE.
    let (code, _) = net.get(QUINTIN, "sae-quintin/status").await;
    assert_eq!(code, StatusCode::OK);

    let (code, body) = net.get(QUINTIN, "nobody/status").await;
    assert_error(code, &body, StatusCode::NOT_FOUND);
    let (code, body) = net.get(QUINTIN, "sae-island/status").await;
    assert_error(code, &body, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn initiator_and_responder_share_the_key() {
    let net = net(50.0, Duration::from_secs(600), true).await;
    let (code, body) = net.get(QUINTIN, "sae-quijote/enc_keys?size=256").await;
    assert_eq!(code, StatusCode::OK, "{body}");
    let (id, key) = decode(&body);
    assert_eq!(key.len(), 32);
    assert!(uuid::Uuid::parse_str(&id).is_ok());

    let (code, body) = net.get(QUIJOTE, &format!("sae-quintin/dec_keys?key_ID={id}")).await;
    assert_eq!(code, StatusCode::OK, "{body}");
    assert_eq!(decode(&body), (id.clone(), key.clone()));
    let (code, body) = net.post(QUIJOTE, "sae-quintin/dec_keys", json!({"key_IDs": [{"key_ID": id}]})).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(decode(&body).1, key);

    // Base64 survives a re-encode round trip.
    let reencoded = base64::engine::general_purpose::STANDARD.encode(&key);
    assert_eq!(body["keys"][0]["key"], reencoded);

    // Wrong counterpart SAE cannot read it.
    let (code, body) = net.get(QUIJOTE, &format!("sae-quevedo/dec_keys?key_ID={id}")).await;
    assert_error(code, &body, StatusCode::BAD_REQUEST);

    for node in [QUINTIN, QUIJOTE] {
        let sae = if node == QUINTIN { "sae-quijote" } else { "sae-quintin" };
        let (_, status) = net.get(node, &format!("{sae}/status")).await;
        assert_eq!(status["stored_key_count"], 1);
    }

    let (code, body) = net.post(QUINTIN, "sae-quijote/enc_keys", json!({"number": 1, "size": 64})).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(decode(&body).1.len(), 8);
    let (code, body) = net.post(QUINTIN, "sae-quijote/enc_keys", json!({})).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(decode(&body).1.len(), 32);
}

#[tokio::test]
async fn invalid_requests_are_rejected() {
    let net = net(50.0, Duration::from_secs(600), true).await;
    for query in ["size=0", "size=12", "size=abc", "number=0", "number=2", "size=1048576"] {
        let (code, body) = net.get(QUINTIN, &format!("sae-quijote/enc_keys?{query}")).await;
        assert_error(code, &body, StatusCode::BAD_REQUEST);
    }
    let (code, body) = net.get(QUINTIN, "sae-quevedo/enc_keys").await;
    assert_error(code, &body, StatusCode::BAD_REQUEST);
    let (code, body) = net.get(QUINTIN, "nobody/enc_keys").await;
    assert_error(code, &body, StatusCode::NOT_FOUND);
    let (code, body) = net.post(QUINTIN, "sae-quijote/enc_keys", json!({"size": "big"})).await;
    assert_error(code, &body, StatusCode::BAD_REQUEST);
    let (code, body) = net.get(QUIJOTE, "sae-quintin/dec_keys?key_ID=not-a-uuid").await;
    assert_error(code, &body, StatusCode::BAD_REQUEST);
    let (code, body) = net.get(QUIJOTE, &format!("sae-quintin/dec_keys?key_ID={}", uuid::Uuid::new_v4())).await;
    assert_error(code, &body, StatusCode::BAD_REQUEST);
    assert!(body["message"].as_str().unwrap().contains("not found"));
}

#[tokio::test]
async fn expired_key_is_reported() {
    let net = net(50.0, Duration::from_secs(1), true).await;
    let (_, body) = net.get(QUINTIN, "sae-quijote/enc_keys").await;
    let (id, _) = decode(&body);
    tokio::time::sleep(Duration::from_millis(1500)).await;
    let (code, body) = net.get(QUIJOTE, &format!("sae-quintin/dec_keys?key_ID={id}")).await;
    assert_error(code, &body, StatusCode::BAD_REQUEST);
    assert!(body["message"].as_str().unwrap().contains("expired"), "{body}");
    let (_, status) = net.get(QUIJOTE, "sae-quintin/status").await;
    assert_eq!(status["stored_key_count"], 0);
}

#[tokio::test]
async fn responder_sees_nothing_before_the_latency() {
    // 2000 pulses at 1 kHz: 2 s of emulated time, 0.4 s at scale 5.
    let net = net(5.0, Duration::from_secs(600), true).await;
    let bus = BusClient::connect(&net.bus_addr).await.unwrap();
    let req = ModelingRequest::new("Quintin", "Quijote", 64);
    bus.publish(&BusMessage::modeling_request(&req)).await.unwrap();
    let path = format!("sae-quintin/dec_keys?key_ID={}", req.request_id);
    let (code, body) = net.get(QUIJOTE, &path).await;
    assert_error(code, &body, StatusCode::BAD_REQUEST);
    tokio::time::sleep(Duration::from_millis(700)).await;
    let (code, _) = net.get(QUIJOTE, &path).await;
    assert_eq!(code, StatusCode::OK);
}

#[tokio::test]
async fn blocked_get_key_does_not_block_lookups() {
    let net = net(1.0, Duration::from_secs(600), true).await;
    let url = net.url(QUINTIN, "sae-quijote/enc_keys");
    let http = net.http.clone();
    let waiting = tokio::spawn(async move { http.get(url).send().await.unwrap().status() });
    tokio::time::sleep(Duration::from_millis(100)).await;
    let start = Instant::now();
    let (code, _) = net.get(QUINTIN, "sae-quijote/status").await;
    assert_eq!(code, StatusCode::OK);
    let (code, _) = net.get(QUINTIN, &format!("sae-quijote/dec_keys?key_ID={}", uuid::Uuid::new_v4())).await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
    assert!(start.elapsed() < Duration::from_millis(500));
    assert!(!waiting.is_finished());
    assert_eq!(waiting.await.unwrap(), StatusCode::OK);
}

#[tokio::test]
async fn engine_timeout_is_unavailable() {
    let net = net(50.0, Duration::from_secs(600), false).await;
    let (code, body) = net.get(QUINTIN, "sae-quijote/enc_keys").await;
    assert_error(code, &body, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn bus_outage_is_unavailable() {
    let mut net = net(50.0, Duration::from_secs(600), false).await;
    net.broker.take().unwrap().shutdown().await;
    tokio::time::sleep(Duration::from_millis(100)).await;
    let (code, body) = net.get(QUINTIN, "sae-quijote/enc_keys").await;
    assert_error(code, &body, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn eavesdropped_link_gives_differing_keys() {
    let net = net(50.0, Duration::from_secs(600), true).await;
    let (code, body) = net.get(QUIJOTE, "sae-aquiles/enc_keys").await;
    assert_eq!(code, StatusCode::OK, "{body}");
    let (id, mine) = decode(&body);
    let (code, body) = net.get(AQUILES, &format!("sae-quijote/dec_keys?key_ID={id}")).await;
    assert_eq!(code, StatusCode::OK);
    let (_, theirs) = decode(&body);
    assert_eq!(mine.len(), theirs.len());
    assert_ne!(mine, theirs);
}

#[tokio::test]
async fn sequential_requests_on_one_link() {
    let net = net(50.0, Duration::from_secs(600), true).await;
    let start = Instant::now();
    let first = {
        let (url, http) = (net.url(QUINTIN, "sae-quijote/enc_keys?size=512"), net.http.clone());
        tokio::spawn(async move {
            let resp = http.get(url).send().await.unwrap();
            assert_eq!(resp.status(), StatusCode::OK);
            start.elapsed()
        })
    };
    tokio::time::sleep(Duration::from_millis(10)).await;
    let (code, _) = net.get(QUINTIN, "sae-quijote/enc_keys?size=64").await;
    let second = start.elapsed();
    assert_eq!(code, StatusCode::OK);
    let first = first.await.unwrap();
    assert!(first < second, "{first:?} vs {second:?}");
}
