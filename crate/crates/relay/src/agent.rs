use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};

use base64::Engine as _;
use qdnet_bus::{read_frame, write_frame, BusMessage, Frame, MessageKind};
use serde::{Deserialize, Serialize};
use tokio::net::{TcpListener, TcpStream};
use tokio::task::JoinHandle;
use tracing::{debug, warn};
use uuid::Uuid;

use crate::pad::{forward_hop, xor_pad};
use crate::{NodeDirectory, RelayError};

/// Body of a `relay_hop` frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HopPayload {
    pub relay_id: Uuid,
    pub path: Vec<String>,
    /// Index in `path` of the node receiving this frame.
    pub position: usize,
    /// Hop key ids; entry `i` pads the hop from `path[i]` to `path[i + 1]`.
    pub key_ids: Vec<String>,
    /// Padded end-to-end key, base64.
    pub ciphertext: String,
}

impl HopPayload {
    fn decode_ciphertext(&self) -> Result<Vec<u8>, RelayError> {
        base64::engine::general_purpose::STANDARD
            .decode(&self.ciphertext)
            .map_err(|e| RelayError::Protocol(format!("ciphertext is not base64: {e}")))
    }

    fn check(&self) -> Result<(), RelayError> {
        if self.path.len() < 3 {
            return Err(RelayError::PathTooShort(self.path.len()));
        }
        if self.key_ids.len() != self.path.len() - 1 {
            return Err(RelayError::Protocol(format!(
                "{} key ids for a path of {} nodes",
                self.key_ids.len(),
                self.path.len()
            )));
        }
        if self.position == 0 || self.position >= self.path.len() {
            return Err(RelayError::Protocol(format!("position {} outside the path", self.position)));
        }
        Ok(())
    }
}

/// Appends every frame written by relay agents to a JSON-lines file.
#[derive(Debug, Clone)]
pub struct FrameTap {
    file: Arc<Mutex<File>>,
}

impl FrameTap {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            file: Arc::new(Mutex::new(file)),
        })
    }

    fn record(&self, frame: &Frame) {
        let line = serde_json::to_string(frame).expect("frames serialize");
        let mut file = self.file.lock().unwrap();
        if let Err(e) = writeln!(file, "{line}") {
            warn!(error = %e, "frame capture write failed");
        }
    }
}

#[derive(Debug, Default)]
struct AgentShared {
    used_keys: Mutex<HashSet<String>>,
    delivered: Mutex<HashMap<Uuid, Vec<u8>>>,
}

#[derive(Debug, Clone)]
struct AgentEntry {
    addr: SocketAddr,
    shared: Arc<AgentShared>,
}

/// Running relay agents by node name.
#[derive(Debug, Clone, Default)]
pub struct AgentDirectory {
    agents: Arc<RwLock<HashMap<String, AgentEntry>>>,
}

impl AgentDirectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn addr(&self, node: &str) -> Option<SocketAddr> {
        self.agents.read().unwrap().get(node).map(|e| e.addr)
    }

    /// Hands over the end-to-end key that `node` recovered for `relay_id`.
    pub(crate) fn take_delivered(&self, node: &str, relay_id: Uuid) -> Option<Vec<u8>> {
        let entry = self.agents.read().unwrap().get(node).cloned()?;
        let key = entry.shared.delivered.lock().unwrap().remove(&relay_id);
        key
    }

    fn register(&self, node: &str, entry: AgentEntry) {
        self.agents.write().unwrap().insert(node.to_owned(), entry);
    }

    fn unregister(&self, node: &str) {
        self.agents.write().unwrap().remove(node);
    }
}

struct AgentContext {
    node: String,
    nodes: NodeDirectory,
    agents: AgentDirectory,
    tap: Option<FrameTap>,
    shared: Arc<AgentShared>,
}

/// Key management agent of one node: unwraps and re-pads relay frames
/// using the node's stored hop keys.
pub struct RelayAgent {
    node: String,
    addr: SocketAddr,
    agents: AgentDirectory,
    shared: Arc<AgentShared>,
    task: JoinHandle<()>,
}

impl RelayAgent {
    /// Serves relay frames for `node` on `listener` and registers the agent
    /// in `agents`.
    pub fn spawn(
        node: impl Into<String>,
        nodes: NodeDirectory,
        agents: AgentDirectory,
        tap: Option<FrameTap>,
        listener: TcpListener,
    ) -> Result<Self, RelayError> {
        let node = node.into();
        nodes.sae(&node)?;
        let addr = listener
            .local_addr()
            .map_err(|e| RelayError::Protocol(format!("agent listener: {e}")))?;
        let shared = Arc::new(AgentShared::default());
        agents.register(
            &node,
            AgentEntry {
                addr,
                shared: shared.clone(),
            },
        );
        let context = Arc::new(AgentContext {
            node: node.clone(),
            nodes,
            agents: agents.clone(),
            tap,
            shared: shared.clone(),
        });
        let task = tokio::spawn(async move {
            loop {
                let stream = match listener.accept().await {
                    Ok((stream, _)) => stream,
                    Err(e) => {
                        warn!(error = %e, "relay agent accept failed");
                        continue;
                    }
                };
                let context = context.clone();
                tokio::spawn(async move { serve(context, stream).await });
            }
        });
        Ok(Self {
            node,
            addr,
            agents,
            shared,
            task,
        })
    }

    pub fn node(&self) -> &str {
        &self.node
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Number of distinct hop keys this agent has consumed.
    pub fn used_key_count(&self) -> usize {
        self.shared.used_keys.lock().unwrap().len()
    }

    pub fn shutdown(self) {
        self.agents.unregister(&self.node);
        self.task.abort();
    }
}

async fn serve(context: Arc<AgentContext>, mut stream: TcpStream) {
    let frame = match read_frame(&mut stream).await {
        Ok(Some(frame)) => frame,
        Ok(None) => return,
        Err(e) => {
            warn!(node = %context.node, error = %e, "unreadable relay frame");
            return;
        }
    };
    let routing_key = frame.routing_key.clone();
    let message_id = frame.message_id;
    let outcome = handle(&context, frame).await;
    let mut ack = Frame::ack(routing_key, message_id);
    if let Err(e) = outcome {
        let (node, message) = match e {
            RelayError::Hop { node, message } => (node, message),
            other => (context.node.clone(), other.to_string()),
        };
        ack.payload = Some(serde_json::json!({ "node": node, "message": message }));
        ack.error = Some(message);
    }
    if let Some(tap) = &context.tap {
        tap.record(&ack);
    }
    if let Err(e) = write_frame(&mut stream, &ack).await {
        warn!(node = %context.node, error = %e, "relay ack not sent");
    }
}

async fn handle(context: &AgentContext, frame: Frame) -> Result<(), RelayError> {
    let message = BusMessage::from_frame(frame).map_err(|e| RelayError::Protocol(e.to_string()))?;
    if message.kind != MessageKind::RelayHop {
        return Err(RelayError::Protocol(format!("unexpected {:?} frame", message.kind)));
    }
    let payload: HopPayload = message.decode().map_err(|e| RelayError::Protocol(e.to_string()))?;
    payload.check()?;
    let position = payload.position;
    if payload.path[position] != context.node {
        return Err(RelayError::Protocol(format!(
            "frame for {} reached {}",
            payload.path[position], context.node
        )));
    }
    let ciphertext = payload.decode_ciphertext()?;
    let own = context.nodes.client(&context.node)?;

    let upstream_id = &payload.key_ids[position - 1];
    let upstream_sae = context.nodes.sae(&payload.path[position - 1])?;
    claim(context, upstream_id)?;
    let upstream = own.dec_key(upstream_sae, upstream_id).await?;

    if position == payload.path.len() - 1 {
        let key = xor_pad(&ciphertext, &upstream)?;
        debug!(node = %context.node, relay_id = %payload.relay_id, "end-to-end key recovered");
        context.shared.delivered.lock().unwrap().insert(payload.relay_id, key);
        return Ok(());
    }

    let downstream_id = &payload.key_ids[position];
    let downstream_sae = context.nodes.sae(&payload.path[position + 1])?;
    claim(context, downstream_id)?;
    let downstream = own.dec_key(downstream_sae, downstream_id).await?;
    let next = forward_hop(&ciphertext, &upstream, &downstream)?;
    debug!(node = %context.node, relay_id = %payload.relay_id, "forwarding relay frame");

    let forwarded = HopPayload {
        position: position + 1,
        ciphertext: base64::engine::general_purpose::STANDARD.encode(next),
        ..payload
    };
    send_hop(&context.agents, context.tap.as_ref(), &forwarded).await
}

/// Records `key_id` in the agent's one-time ledger.
fn claim(context: &AgentContext, key_id: &str) -> Result<(), RelayError> {
    if context.shared.used_keys.lock().unwrap().insert(key_id.to_owned()) {
        Ok(())
    } else {
        Err(RelayError::KeyReused(key_id.to_owned()))
    }
}

/// Delivers `payload` to the agent at `payload.path[payload.position]` and
/// waits for the acknowledgement of the rest of the chain.
pub(crate) async fn send_hop(
    agents: &AgentDirectory,
    tap: Option<&FrameTap>,
    payload: &HopPayload,
) -> Result<(), RelayError> {
    let to = &payload.path[payload.position];
    let addr = agents
        .addr(to)
        .ok_or_else(|| RelayError::Unreachable(format!("relay agent of {to}")))?;
    let frame = BusMessage::new(format!("relay.{to}"), MessageKind::RelayHop, payload).to_frame();
    if let Some(tap) = tap {
        tap.record(&frame);
    }
    let unreachable = |e: &dyn std::fmt::Display| RelayError::Unreachable(format!("relay agent of {to} ({e})"));
    let mut stream = TcpStream::connect(addr).await.map_err(|e| unreachable(&e))?;
    write_frame(&mut stream, &frame).await.map_err(|e| unreachable(&e))?;
    let ack = read_frame(&mut stream)
        .await
        .map_err(|e| unreachable(&e))?
        .ok_or_else(|| unreachable(&"connection closed before ack"))?;
    match ack.error {
        None => Ok(()),
        Some(message) => {
            let node = ack
                .payload
                .as_ref()
                .and_then(|p| p.get("node"))
                .and_then(|n| n.as_str())
                .unwrap_or(to)
                .to_owned();
            Err(RelayError::Hop { node, message })
        }
    }
}
