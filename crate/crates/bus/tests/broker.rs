use std::collections::BTreeSet;
use std::time::Duration;

use proptest::prelude::*;
use qdnet_bus::{
    Broker, BrokerHandle, BrokerOptions, BusClient, BusError, BusMessage, ClientOptions, ConnectionState,
    MessageKind, Subscription, MAX_FRAME_LEN,
};
use serde_json::json;
use tokio::time::timeout;

async fn broker() -> BrokerHandle {
    Broker::bind("127.0.0.1:0", BrokerOptions::default()).await.unwrap()
}

async fn client(b: &BrokerHandle) -> BusClient {
    BusClient::connect(&b.local_addr().to_string()).await.unwrap()
}

fn msg(key: &str, seq: u64) -> BusMessage {
    BusMessage::new(key, MessageKind::RelayHop, &json!({ "seq": seq }))
}

fn seq_of(m: &BusMessage) -> u64 {
    m.payload["seq"].as_u64().unwrap()
}

async fn next(sub: &mut Subscription) -> BusMessage {
    timeout(Duration::from_secs(5), sub.recv()).await.expect("delivery").expect("open")
}

async fn nothing_more(sub: &mut Subscription) {
    assert!(timeout(Duration::from_millis(200), sub.recv()).await.is_err());
}

#[tokio::test]
async fn single_subscriber_gets_exactly_one_copy() {
    let b = broker().await;
    let engine = client(&b).await;
    let node = client(&b).await;
    let mut sub = engine.subscribe("engine").await.unwrap();
    node.publish(&msg("engine", 1)).await.unwrap();
    assert_eq!(seq_of(&next(&mut sub).await), 1);
    nothing_more(&mut sub).await;
}

#[tokio::test]
async fn every_subscriber_of_a_key_gets_a_copy() {
    let b = broker().await;
    let publisher = client(&b).await;
    let (c1, c2) = (client(&b).await, client(&b).await);
    let mut s1 = c1.subscribe("node.A").await.unwrap();
    let mut s2 = c2.subscribe("node.A").await.unwrap();
    // A second local subscription on the same connection shares one broker
    // subscription but still sees every message.
    let mut s3 = c2.subscribe("node.A").await.unwrap();
    publisher.publish(&msg("node.A", 7)).await.unwrap();
    for sub in [&mut s1, &mut s2, &mut s3] {
        assert_eq!(seq_of(&next(sub).await), 7);
        nothing_more(sub).await;
    }
}

#[tokio::test]
async fn retained_until_subscriber_binds() {
    let b = broker().await;
    let publisher = client(&b).await;
    publisher.publish(&msg("node.late", 1)).await.unwrap();
    publisher.publish(&msg("node.late", 2)).await.unwrap();
    assert_eq!(b.retained_count(), 2);
    let late = client(&b).await;
    let mut sub = late.subscribe("node.late").await.unwrap();
    assert_eq!(seq_of(&next(&mut sub).await), 1);
    assert_eq!(seq_of(&next(&mut sub).await), 2);
    assert_eq!(b.retained_count(), 0);
}

#[tokio::test]
async fn retention_lapses_after_ttl() {
    let options = BrokerOptions {
        retention: Duration::from_millis(200),
        ..Default::default()
    };
    let b = Broker::bind("127.0.0.1:0", options).await.unwrap();
    let publisher = client(&b).await;
    publisher.publish(&msg("gone", 1)).await.unwrap();
    tokio::time::sleep(Duration::from_millis(500)).await;
    assert_eq!(b.retained_count(), 0);
    let late = client(&b).await;
    let mut sub = late.subscribe("gone").await.unwrap();
    nothing_more(&mut sub).await;
}

#[tokio::test]
async fn fifo_over_ten_thousand_messages() {
    const N: u64 = 10_000;
    let b = broker().await;
    let consumer = client(&b).await;
    let mut sub = consumer.subscribe("engine").await.unwrap();
    let producer = client(&b).await;
    let send = tokio::spawn(async move {
        for seq in 0..N {
            producer.publish(&msg("engine", seq)).await.unwrap();
        }
    });
    for expected in 0..N {
        assert_eq!(seq_of(&next(&mut sub).await), expected);
    }
    send.await.unwrap();
    nothing_more(&mut sub).await;
}

#[tokio::test]
async fn unknown_key_subscription_is_valid() {
    let b = broker().await;
    let c = client(&b).await;
    let mut sub = c.subscribe("never-used-before").await.unwrap();
    assert_eq!(sub.routing_key(), "never-used-before");
    nothing_more(&mut sub).await;
    assert_eq!(b.active_keys(), vec!["never-used-before".to_string()]);
}

#[tokio::test]
async fn oversized_payload_rejected() {
    let b = broker().await;
    let c = client(&b).await;
    let big = BusMessage::new("engine", MessageKind::RelayHop, &json!({ "blob": "x".repeat(MAX_FRAME_LEN) }));
    assert!(matches!(c.publish(&big).await, Err(BusError::Oversized { .. })));
    // The connection is still usable afterwards.
    c.publish(&msg("engine", 1)).await.unwrap();
}

#[tokio::test]
async fn five_clients_see_orderly_disconnect() {
    let b = broker().await;
    let mut clients = Vec::new();
    for i in 0..5 {
        let c = BusClient::connect_with(
            &b.local_addr().to_string(),
            ClientOptions {
                reconnect: false,
                ..Default::default()
            },
        )
        .await
        .unwrap();
        let sub = c.subscribe(&format!("node.{i}")).await.unwrap();
        clients.push((c, sub));
    }
    b.shutdown().await;
    for (c, mut sub) in clients {
        timeout(Duration::from_secs(5), c.wait_for(ConnectionState::Disconnected))
            .await
            .unwrap();
        assert!(matches!(c.publish(&msg("x", 0)).await, Err(BusError::Disconnected)));
        // No message arrives; the stream simply stays quiet.
        assert!(sub.try_recv().is_none());
    }
}

#[tokio::test]
async fn restart_is_volatile_and_clients_resume() {
    let b = broker().await;
    let addr = b.local_addr().to_string();
    let c = client(&b).await;
    let mut sub = c.subscribe("node.A").await.unwrap();
    c.publish(&msg("node.orphan", 1)).await.unwrap();
    assert_eq!(b.retained_count(), 1);
    b.shutdown().await;
    timeout(Duration::from_secs(5), c.wait_for(ConnectionState::Disconnected))
        .await
        .unwrap();

    let b2 = Broker::bind(&addr, BrokerOptions::default()).await.unwrap();
    timeout(Duration::from_secs(5), c.wait_for(ConnectionState::Connected))
        .await
        .unwrap();
    assert_eq!(b2.retained_count(), 0);
    // The resubscription is processed before any frame we send now.
    c.publish(&msg("node.A", 2)).await.unwrap();
    assert_eq!(seq_of(&next(&mut sub).await), 2);
    let mut orphan = c.subscribe("node.orphan").await.unwrap();
    nothing_more(&mut orphan).await;
}

#[tokio::test]
async fn four_nodes_and_engine_make_five_keys() {
    let b = broker().await;
    let mut subs = Vec::new();
    let mut clients = Vec::new();
    for key in ["node.Quintin", "node.Quijote", "node.Quevedo", "node.Aquiles", "engine"] {
        let c = client(&b).await;
        subs.push(c.subscribe(key).await.unwrap());
        clients.push(c);
    }
    assert_eq!(b.active_keys().len(), 5);
    clients.pop().unwrap().close();
    tokio::time::sleep(Duration::from_millis(100)).await;
    assert_eq!(b.active_keys().len(), 4);
}

#[tokio::test]
async fn capture_records_received_frames() {
    let dir = std::env::temp_dir().join(format!("qdnet-bus-capture-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("frames.jsonl");
    let b = Broker::bind(
        "127.0.0.1:0",
        BrokerOptions {
            capture: Some(path.clone()),
            ..Default::default()
        },
    )
    .await
    .unwrap();
    let c = client(&b).await;
    c.publish(&msg("engine", 42)).await.unwrap();
    b.shutdown().await;
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.lines().any(|l| l.contains("\"seq\":42")), "{text}");
    std::fs::remove_dir_all(dir).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, .. ProptestConfig::default() })]

    #[test]
    fn no_cross_key_leakage(
        keys in proptest::collection::btree_set("[a-z]{1,6}", 2..6),
        sends in proptest::collection::vec((0usize..6, 0u64..1000), 1..40),
    ) {
        let keys: Vec<String> = keys.into_iter().collect();
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async {
            let b = broker().await;
            let publisher = client(&b).await;
            let mut subs = Vec::new();
            for key in &keys {
                let c = client(&b).await;
                let sub = c.subscribe(key).await.unwrap();
                subs.push((c, sub));
            }
            let mut expected: Vec<BTreeSet<(u64, usize)>> = vec![BTreeSet::new(); keys.len()];
            for (i, (k, seq)) in sends.iter().enumerate() {
                let k = k % keys.len();
                let m = BusMessage::new(&keys[k], MessageKind::RelayHop, &json!({ "seq": seq, "i": i }));
                publisher.publish(&m).await.unwrap();
                expected[k].insert((*seq, i));
            }
            for (k, (_, sub)) in subs.iter_mut().enumerate() {
                let mut got = BTreeSet::new();
                for _ in 0..expected[k].len() {
                    let m = next(sub).await;
                    assert_eq!(m.routing_key, keys[k]);
                    got.insert((seq_of(&m), m.payload["i"].as_u64().unwrap() as usize));
                }
                assert_eq!(got, expected[k]);
                assert!(sub.try_recv().is_none());
            }
        });
    }
}
