use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use base64::Engine as _;
use qdnet_bus::{BusClient, BusError, BusMessage, Subscription};
use qdnet_core::etsi::{self, KeyContainer, KeyEntry, Status};
use qdnet_core::messages::{node_routing_key, ModelingRequest, ModelingResult, Recipient, ResultStatus};
use qdnet_core::topology::{NetworkConfig, NodeDecl};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{oneshot, watch};
use tokio::task::JoinHandle;
use tracing::{info, warn};
use uuid::Uuid;

use crate::store::{KeyStore, LookupError, StoredKey};
use crate::{router, ApiError, DEFAULT_TTL};

/// How long an initiator waits for the engine before giving up.
pub const DEFAULT_ENGINE_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone)]
pub struct NodeSettings {
    pub name: String,
    pub ttl: Duration,
    pub engine_timeout: Duration,
    pub store_capacity: usize,
}

impl NodeSettings {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ttl: DEFAULT_TTL,
            engine_timeout: DEFAULT_ENGINE_TIMEOUT,
            store_capacity: 100_000,
        }
    }
}

#[derive(Debug, Error)]
pub enum NodeError {
    #[error("node `{0}` is not in the configuration")]
    UnknownNode(String),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error("cannot serve the API: {0}")]
    Io(#[from] std::io::Error),
}

struct Inner {
    config: NetworkConfig,
    me: NodeDecl,
    settings: NodeSettings,
    store: Mutex<KeyStore>,
    pending: Mutex<HashMap<Uuid, oneshot::Sender<ModelingResult>>>,
    bus: BusClient,
}

/// Key delivery logic of one node. Cheap to clone.
#[derive(Clone)]
pub struct NodeService {
    inner: Arc<Inner>,
}

impl NodeService {
    pub fn new(config: NetworkConfig, settings: NodeSettings, bus: BusClient) -> Result<Self, NodeError> {
        let me = config
            .node(&settings.name)
            .cloned()
            .ok_or_else(|| NodeError::UnknownNode(settings.name.clone()))?;
        Ok(Self {
            inner: Arc::new(Inner {
                store: Mutex::new(KeyStore::new(settings.store_capacity)),
                pending: Mutex::new(HashMap::new()),
                config,
                me,
                settings,
                bus,
            }),
        })
    }

    pub fn name(&self) -> &str {
        &self.inner.me.name
    }

    pub fn sae_id(&self) -> &str {
        &self.inner.me.sae_id
    }

    /// Status of the key supply towards `slave_sae`. The node's own SAE is
    /// accepted too, reporting all stored keys; it doubles as a readiness
    /// probe.
    pub fn status(&self, slave_sae: &str) -> Result<Status, ApiError> {
        let me = &self.inner.me;
        let target = self
            .inner
            .config
            .node_by_sae(slave_sae)
            .ok_or_else(|| ApiError::not_found(format!("unknown SAE `{slave_sae}`")))?;
        let peer_filter = if target.name == me.name {
            None
        } else if self.inner.config.has_route(&me.name, &target.name) {
            Some(target.name.as_str())
        } else {
            return Err(ApiError::not_found(format!("no route to SAE `{slave_sae}`")));
        };
        let store = self.inner.store.lock().unwrap();
        Ok(Status {
            source_KME_ID: me.name.clone(),
            target_KME_ID: target.name.clone(),
            master_SAE_ID: me.sae_id.clone(),
            slave_SAE_ID: slave_sae.to_owned(),
            key_size: etsi::DEFAULT_KEY_SIZE,
            stored_key_count: store.count(peer_filter, Instant::now()) as u64,
            max_key_count: store.capacity() as u64,
            max_key_per_request: etsi::MAX_KEY_PER_REQUEST,
            max_key_size: etsi::MAX_KEY_SIZE,
            min_key_size: etsi::MIN_KEY_SIZE,
            max_SAE_ID_count: 0,
        })
    }

    /// Requests a fresh key shared with `slave_sae` and waits for it.
    pub async fn get_key(&self, slave_sae: &str, number: Option<u32>, size: Option<u32>) -> Result<KeyContainer, ApiError> {
        let number = number.unwrap_or(1);
        let size = size.unwrap_or(etsi::DEFAULT_KEY_SIZE);
        if number == 0 || number > etsi::MAX_KEY_PER_REQUEST {
            return Err(ApiError::bad_request(format!(
                "number must be between 1 and {}",
                etsi::MAX_KEY_PER_REQUEST
            )));
        }
        if size < etsi::MIN_KEY_SIZE || size > etsi::MAX_KEY_SIZE || size % 8 != 0 {
            return Err(ApiError::bad_request(format!(
                "size must be a multiple of 8 between {} and {}, got {size}",
                etsi::MIN_KEY_SIZE,
                etsi::MAX_KEY_SIZE
            )));
        }
        let me = &self.inner.me;
        let peer = self
            .inner
            .config
            .node_by_sae(slave_sae)
            .ok_or_else(|| ApiError::not_found(format!("unknown SAE `{slave_sae}`")))?;
        if self.inner.config.link_between(&me.name, &peer.name).is_none() {
            return Err(ApiError::bad_request(format!(
                "SAE `{slave_sae}` is not adjacent to {}; keys for it need a relay",
                me.name
            )));
        }

        let request = ModelingRequest::new(&me.name, &peer.name, u64::from(number) * u64::from(size));
        let (tx, rx) = oneshot::channel();
        self.inner.pending.lock().unwrap().insert(request.request_id, tx);
        info!(request_id = %request.request_id, peer = %peer.name, bits = request.bits_needed, "requesting key");
        if let Err(e) = self.inner.bus.publish(&BusMessage::modeling_request(&request)).await {
            self.inner.pending.lock().unwrap().remove(&request.request_id);
            return Err(ApiError::unavailable(format!("bus unavailable: {e}")));
        }

        let result = match tokio::time::timeout(self.inner.settings.engine_timeout, rx).await {
            Ok(Ok(result)) => result,
            _ => {
                self.inner.pending.lock().unwrap().remove(&request.request_id);
                return Err(ApiError::unavailable("modeling engine did not answer in time"));
            }
        };
        if result.status == ResultStatus::Error {
            let reason = result.error.unwrap_or_else(|| "unspecified".into());
            return Err(ApiError::unavailable(format!("key generation failed: {reason}")));
        }
        let material = result
            .key_material
            .ok_or_else(|| ApiError::unavailable("result carried no key material"))?;
        Ok(KeyContainer {
            keys: vec![KeyEntry {
                key_ID: result.key_id.to_string(),
                key: material.to_base64(),
            }],
        })
    }

    /// Returns stored keys shared with the node of `master_sae`.
    pub fn get_key_with_ids(&self, master_sae: &str, key_ids: &[String]) -> Result<KeyContainer, ApiError> {
        let master = self
            .inner
            .config
            .node_by_sae(master_sae)
            .ok_or_else(|| ApiError::not_found(format!("unknown SAE `{master_sae}`")))?;
        if key_ids.is_empty() {
            return Err(ApiError::bad_request("no key_ID given"));
        }
        let now = Instant::now();
        let mut store = self.inner.store.lock().unwrap();
        let mut keys = Vec::with_capacity(key_ids.len());
        for raw in key_ids {
            let id = Uuid::parse_str(raw).map_err(|_| ApiError::bad_request(format!("malformed key_ID `{raw}`")))?;
            let key = store.get(id, &master.name, now).map_err(|e| match e {
                LookupError::NotFound(_) | LookupError::Expired(_) | LookupError::WrongPeer { .. } => {
                    ApiError::bad_request(e.to_string())
                }
            })?;
            keys.push(KeyEntry {
                key_ID: id.to_string(),
                key: base64::engine::general_purpose::STANDARD.encode(&key.material),
            });
        }
        Ok(KeyContainer { keys })
    }

    /// Stores the key carried by `result` and wakes the waiting client if
    /// this node initiated the request.
    pub fn store_result(&self, result: ModelingResult) {
        let me = &self.inner.me.name;
        let recipient = result.recipient.unwrap_or(if &result.initiator == me {
            Recipient::Initiator
        } else {
            Recipient::Peer
        });
        if result.node_of(recipient) != me {
            warn!(key_id = %result.key_id, "result addressed to another node");
            return;
        }
        if result.status != ResultStatus::Error {
            match result.material_for(recipient) {
                Some(bits) => {
                    let peer = match recipient {
                        Recipient::Initiator => result.peer.clone(),
                        Recipient::Peer => result.initiator.clone(),
                    };
                    let stored = StoredKey {
                        key_id: result.key_id,
                        material: bits.to_bytes(),
                        peer,
                        stored_at: Instant::now(),
                        ttl: self.inner.settings.ttl,
                    };
                    match self.inner.store.lock().unwrap().insert(stored) {
                        Ok(()) => info!(key_id = %result.key_id, bits = bits.len(), status = ?result.status, "key stored"),
                        Err(e) => warn!(key_id = %result.key_id, error = %e, "key not stored"),
                    }
                }
                None => warn!(key_id = %result.key_id, "result without key material"),
            }
        }
        if recipient == Recipient::Initiator {
            if let Some(waiter) = self.inner.pending.lock().unwrap().remove(&result.request_id) {
                let _ = waiter.send(result);
            }
        }
    }

    /// Removes expired keys; returns how many went.
    pub fn purge_expired(&self) -> usize {
        self.inner.store.lock().unwrap().purge(Instant::now())
    }

    /// Connects to the bus, subscribes to this node's routing key and
    /// serves the API on `listener`.
    pub async fn spawn(
        config: NetworkConfig,
        settings: NodeSettings,
        bus_addr: &str,
        listener: TcpListener,
    ) -> Result<RunningNode, NodeError> {
        let bus = BusClient::connect(bus_addr).await?;
        let node = NodeService::new(config, settings, bus.clone())?;
        let results = bus.subscribe(&node_routing_key(node.name())).await?;
        let api_addr = listener.local_addr()?;
        let (stop_tx, mut stop_rx) = watch::channel(false);

        let mut tasks = vec![tokio::spawn(handle_results(node.clone(), results))];
        let purger = node.clone();
        let period = (purger.inner.settings.ttl / 4).clamp(Duration::from_millis(100), Duration::from_secs(5));
        tasks.push(tokio::spawn(async move {
            let mut tick = tokio::time::interval(period);
            loop {
                tick.tick().await;
                purger.purge_expired();
            }
        }));
        let app = router(node.clone());
        let server = tokio::spawn(async move {
            let shutdown = async move {
                let _ = stop_rx.wait_for(|stop| *stop).await;
            };
            if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(shutdown).await {
                warn!(error = %e, "API server failed");
            }
        });
        info!(node = node.name(), %api_addr, "node ready");
        Ok(RunningNode {
            api_addr,
            node,
            bus,
            stop: stop_tx,
            server,
            tasks,
        })
    }
}

async fn handle_results(node: NodeService, mut results: Subscription) {
    while let Some(msg) = results.recv().await {
        match msg.decode::<ModelingResult>() {
            Ok(result) => node.store_result(result),
            Err(e) => warn!(error = %e, "ignoring malformed result"),
        }
    }
}

/// A node serving its API in the background.
pub struct RunningNode {
    pub api_addr: SocketAddr,
    pub node: NodeService,
    bus: BusClient,
    stop: watch::Sender<bool>,
    server: JoinHandle<()>,
    tasks: Vec<JoinHandle<()>>,
}

impl RunningNode {
    /// Waits until the API server exits.
    pub async fn wait(&mut self) {
        let _ = (&mut self.server).await;
    }

    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        let _ = self.server.await;
        for task in self.tasks {
            task.abort();
        }
        self.bus.close();
    }
}
