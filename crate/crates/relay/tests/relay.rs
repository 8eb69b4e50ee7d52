use std::path::Path;
use std::time::Duration;

use base64::Engine as _;
use proptest::prelude::*;
use qdnet_bus::{Broker, BrokerHandle, BrokerOptions, BusClient};
use qdnet_core::quantum::ProtocolRegistry;
use qdnet_core::topology::{parse_config, NetworkConfig};
use qdnet_engine::{Engine, EngineSettings, EventLog};
use qdnet_node::{NodeService, NodeSettings, RunningNode};
use qdnet_relay::{AgentDirectory, FrameTap, NodeDirectory, RelayAgent, RelayError, RelayPath, Relayer};
use tokio::net::TcpListener;

const MADRID: &str = include_str!("../../../configs/madrid-adversarial.yaml");

struct Net {
    _broker: BrokerHandle,
    _nodes: Vec<RunningNode>,
    agents: Vec<RelayAgent>,
    relayer: Relayer,
}

impl Net {
    fn agent(&self, node: &str) -> &RelayAgent {
        self.agents.iter().find(|a| a.node() == node).unwrap()
    }
}

/// Broker, engine, every node and one relay agent per node, all in-process.
async fn deploy(config: NetworkConfig, ttl: Duration, capture: Option<&Path>, seed: u64) -> Net {
    let broker = Broker::bind(
        "127.0.0.1:0",
        BrokerOptions {
            capture: capture.map(|dir| dir.join("bus.jsonl")),
            ..BrokerOptions::default()
        },
    )
    .await
    .unwrap();
    let bus_addr = broker.local_addr().to_string();
    let (log, _) = EventLog::memory();
    let engine = Engine::new(
        config.clone(),
        &ProtocolRegistry::builtin(),
        EngineSettings {
            time_scale: 1000.0,
            seed,
        },
        log,
    )
    .unwrap();
    let engine_bus = BusClient::connect(&bus_addr).await.unwrap();
    tokio::spawn(async move { engine.run(engine_bus).await });

    let mut nodes = Vec::new();
    let mut directory = NodeDirectory::from_config(&config, None);
    for decl in &config.nodes {
        let settings = NodeSettings {
            ttl,
            ..NodeSettings::new(&decl.name)
        };
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        let node = NodeService::spawn(config.clone(), settings, &bus_addr, listener).await.unwrap();
        directory.set_url(&decl.name, format!("http://{}", node.api_addr));
        nodes.push(node);
    }
    while !broker.active_keys().iter().any(|k| k == "engine") {
        tokio::time::sleep(Duration::from_millis(10)).await;
    }

    let tap = capture.map(|dir| FrameTap::create(&dir.join("relay.jsonl")).unwrap());
    let registry = AgentDirectory::new();
    let mut agents = Vec::new();
    for decl in &config.nodes {
        let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
        agents.push(RelayAgent::spawn(&decl.name, directory.clone(), registry.clone(), tap.clone(), listener).unwrap());
    }
    let mut relayer = Relayer::new(config, directory, registry, Some(seed));
    if let Some(tap) = tap {
        relayer = relayer.with_tap(tap);
    }
    Net {
        _broker: broker,
        _nodes: nodes,
        agents,
        relayer,
    }
}

fn madrid() -> NetworkConfig {
    parse_config(MADRID).unwrap()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[tokio::test]
async fn madrid_relay_shares_one_key_and_never_exposes_it() {
    let dir = tempfile::tempdir().unwrap();
    let net = deploy(madrid(), Duration::from_secs(600), Some(dir.path()), 11).await;
    let path = RelayPath::parse(net.relayer.config(), "Quintin,Quijote,Quevedo").unwrap();

    let mut keys = Vec::new();
    for _ in 0..5 {
        let outcome = net.relayer.relay_key(&path, 256).await.unwrap();
        assert_eq!(outcome.initiator_key.len(), 32);
        assert!(outcome.keys_match());
        assert_eq!(outcome.hop_key_ids.len(), 2);
        keys.push(outcome.initiator_key);
    }
    // Quijote unwraps one hop key and wraps with another per relay.
    assert_eq!(net.agent("Quijote").used_key_count(), 10);
    assert_eq!(net.agent("Quevedo").used_key_count(), 5);
    assert_eq!(net.agent("Quintin").used_key_count(), 0);

    let mut captured = std::fs::read_to_string(dir.path().join("bus.jsonl")).unwrap();
    let relay_frames = std::fs::read_to_string(dir.path().join("relay.jsonl")).unwrap();
    assert!(relay_frames.lines().count() >= 10, "two hop frames and two acks per relay");
    assert!(relay_frames.contains("relay_hop"));
    captured.push_str(&relay_frames);
    for key in &keys {
        let b64 = base64::engine::general_purpose::STANDARD.encode(key);
        let json_array = serde_json::to_string(key).unwrap();
        for needle in [b64, hex(key), json_array] {
            assert!(!captured.contains(&needle), "end-to-end key found in captured frames");
        }
    }
}

#[tokio::test]
async fn expired_upstream_key_is_reported_to_the_initiator() {
    let net = deploy(madrid(), Duration::from_secs(1), None, 5).await;
    let path = RelayPath::parse(net.relayer.config(), "Quintin,Quijote,Quevedo").unwrap();
    let prepared = net.relayer.prepare(&path, 256).await.unwrap();
    tokio::time::sleep(Duration::from_millis(1500)).await;
    match net.relayer.transmit(prepared).await {
        Err(RelayError::Hop { node, message }) => {
            assert_eq!(node, "Quijote");
            assert!(message.contains("expired"), "{message}");
        }
        other => panic!("expected a hop failure, got {other:?}"),
    }
}

#[tokio::test]
async fn a_hop_key_cannot_pad_twice() {
    let net = deploy(madrid(), Duration::from_secs(600), None, 6).await;
    let path = RelayPath::parse(net.relayer.config(), "Quintin,Quijote,Quevedo").unwrap();
    let prepared = net.relayer.prepare(&path, 64).await.unwrap();
    let first = net.relayer.transmit(prepared.clone()).await.unwrap();
    assert!(first.keys_match());
    assert_eq!(
        net.relayer.transmit(prepared.clone()).await,
        Err(RelayError::KeyReused(prepared.hop_key_ids()[0].clone()))
    );
}

#[tokio::test]
async fn same_seed_same_relay_key() {
    let path_of = |net: &Net| RelayPath::parse(net.relayer.config(), "Quintin,Quijote,Quevedo").unwrap();
    let a = deploy(madrid(), Duration::from_secs(600), None, 42).await;
    let first = a.relayer.relay_key(&path_of(&a), 128).await.unwrap();
    let b = deploy(madrid(), Duration::from_secs(600), None, 42).await;
    let second = b.relayer.relay_key(&path_of(&b), 128).await.unwrap();
    assert_eq!(first.key_id, second.key_id);
    assert_eq!(first.initiator_key, second.initiator_key);
}

#[tokio::test]
async fn invalid_sizes_are_rejected_before_any_request() {
    let net = deploy(madrid(), Duration::from_secs(600), None, 1).await;
    let path = RelayPath::parse(net.relayer.config(), "Quintin,Quijote,Quevedo").unwrap();
    assert_eq!(net.relayer.relay_key(&path, 0).await, Err(RelayError::InvalidSize(0)));
    assert_eq!(net.relayer.relay_key(&path, 12).await, Err(RelayError::InvalidSize(12)));
}

/// A random tree on `n` nodes; node `i > 0` hangs off `parents[i - 1] % i`.
fn tree_config(parents: &[usize]) -> NetworkConfig {
    let n = parents.len() + 1;
    let mut doc = String::from("nodes:\n");
    for i in 0..n {
        doc.push_str(&format!("  - {{ name: N{i}, api_port: {} }}\n", 9000 + i));
    }
    doc.push_str("links:\n");
    for (i, parent) in parents.iter().enumerate() {
        doc.push_str(&format!(
            "  - endpoint_a: N{}\n    endpoint_b: N{}\n    phys: {{ pulses_per_round: 2000, pulse_rate_hz: 1000000.0, classical_overhead_s: 0 }}\n",
            parent % (i + 1),
            i + 1
        ));
    }
    doc.push_str("engine_host: engine\nbus_endpoint: 127.0.0.1:5672\nengine_options: { buffer_leftover: false }\n");
    parse_config(&doc).unwrap()
}

/// Longest simple path in a tree, found by two breadth-first sweeps.
fn longest_path(config: &NetworkConfig) -> Vec<String> {
    let farthest = |from: &str| {
        let mut parent = std::collections::HashMap::new();
        let mut queue = std::collections::VecDeque::from([from.to_owned()]);
        parent.insert(from.to_owned(), None::<String>);
        let mut last = from.to_owned();
        while let Some(node) = queue.pop_front() {
            last = node.clone();
            for next in config.neighbors(&node) {
                if !parent.contains_key(next) {
                    parent.insert(next.to_owned(), Some(node.clone()));
                    queue.push_back(next.to_owned());
                }
            }
        }
        let mut path = vec![last.clone()];
        while let Some(Some(p)) = parent.get(path.last().unwrap()) {
            path.push(p.clone());
        }
        path
    };
    let end = farthest("N0")[0].clone();
    farthest(&end)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn random_topologies_relay_equal_keys(
        parents in proptest::collection::vec(0usize..8, 2..6),
        bytes in 1u32..40,
        seed in any::<u64>(),
    ) {
        let config = tree_config(&parents);
        let nodes = longest_path(&config);
        prop_assume!(nodes.len() >= 3);
        let runtime = tokio::runtime::Runtime::new().unwrap();
        let outcome = runtime.block_on(async {
            let net = deploy(config, Duration::from_secs(600), None, seed).await;
            let path = RelayPath::new(net.relayer.config(), nodes).unwrap();
            net.relayer.relay_key(&path, bytes * 8).await
        });
        let outcome = outcome.unwrap();
        prop_assert!(outcome.keys_match());
        prop_assert_eq!(outcome.target_key.len(), bytes as usize);
    }
}
