use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use tokio::io::AsyncWriteExt;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;
use tracing::{debug, info, warn};

use crate::frame::read_raw;
use crate::{write_frame, BusError, Frame, Op};

/// How long a message published to a key without subscribers is kept.
pub const DEFAULT_RETENTION: Duration = Duration::from_secs(60);

#[derive(Debug, Clone)]
pub struct BrokerOptions {
    pub retention: Duration,
    /// Append every frame the broker receives to this file, one JSON body
    /// per line. Meant for test inspection of what crossed the wire.
    pub capture: Option<PathBuf>,
}

impl Default for BrokerOptions {
    fn default() -> Self {
        Self {
            retention: DEFAULT_RETENTION,
            capture: None,
        }
    }
}

type Outbox = mpsc::UnboundedSender<Frame>;

#[derive(Default)]
struct KeyQueue {
    subscribers: Vec<(u64, Outbox)>,
    retained: VecDeque<(Instant, Frame)>,
}

struct Shared {
    keys: Mutex<HashMap<String, KeyQueue>>,
    retention: Duration,
    capture: Option<Mutex<BufWriter<File>>>,
    next_conn: AtomicU64,
}

impl Shared {
    fn record(&self, body: &[u8]) {
        if let Some(capture) = &self.capture {
            let mut out = capture.lock().unwrap();
            let _ = out.write_all(body).and_then(|_| out.write_all(b"\n")).and_then(|_| out.flush());
        }
    }

    fn subscribe(&self, conn: u64, key: &str, outbox: &Outbox) {
        let mut keys = self.keys.lock().unwrap();
        let queue = keys.entry(key.to_owned()).or_default();
        if !queue.subscribers.iter().any(|(id, _)| *id == conn) {
            queue.subscribers.push((conn, outbox.clone()));
        }
        let cutoff = Instant::now().checked_sub(self.retention);
        while let Some((at, frame)) = queue.retained.pop_front() {
            if cutoff.is_none_or(|c| at >= c) {
                let _ = outbox.send(frame);
            }
        }
    }

    fn publish(&self, frame: Frame) {
        let mut keys = self.keys.lock().unwrap();
        let queue = keys.entry(frame.routing_key.clone()).or_default();
        queue.subscribers.retain(|(_, outbox)| outbox.send(frame.clone()).is_ok());
        if queue.subscribers.is_empty() {
            queue.retained.push_back((Instant::now(), frame));
        }
    }

    fn drop_connection(&self, conn: u64) {
        let mut keys = self.keys.lock().unwrap();
        for queue in keys.values_mut() {
            queue.subscribers.retain(|(id, _)| *id != conn);
        }
    }

    fn expire(&self) {
        let Some(cutoff) = Instant::now().checked_sub(self.retention) else {
            return;
        };
        let mut keys = self.keys.lock().unwrap();
        for queue in keys.values_mut() {
            let before = queue.retained.len();
            queue.retained.retain(|(at, _)| *at >= cutoff);
            let dropped = before - queue.retained.len();
            if dropped > 0 {
                debug!(dropped, "expired retained messages");
            }
        }
        keys.retain(|_, q| !q.subscribers.is_empty() || !q.retained.is_empty());
    }
}

/// The broker server.
pub struct Broker;

impl Broker {
    /// Binds `addr` and starts serving in the background.
    pub async fn bind(addr: &str, options: BrokerOptions) -> Result<BrokerHandle, BusError> {
        let listener = TcpListener::bind(addr).await?;
        let local_addr = listener.local_addr()?;
        let capture = match &options.capture {
            Some(path) => {
                let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
                Some(Mutex::new(BufWriter::new(file)))
            }
            None => None,
        };
        let shared = Arc::new(Shared {
            keys: Mutex::new(HashMap::new()),
            retention: options.retention,
            capture,
            next_conn: AtomicU64::new(0),
        });
        let (stop_tx, stop_rx) = watch::channel(false);
        let task = tokio::spawn(serve(listener, shared.clone(), stop_rx));
        info!(%local_addr, "broker listening");
        Ok(BrokerHandle {
            local_addr,
            shared,
            stop: stop_tx,
            task,
        })
    }
}

pub struct BrokerHandle {
    local_addr: SocketAddr,
    shared: Arc<Shared>,
    stop: watch::Sender<bool>,
    task: JoinHandle<()>,
}

impl BrokerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Keys with at least one live subscriber, sorted.
    pub fn active_keys(&self) -> Vec<String> {
        let keys = self.shared.keys.lock().unwrap();
        let mut active: Vec<String> = keys
            .iter()
            .filter(|(_, q)| q.subscribers.iter().any(|(_, o)| !o.is_closed()))
            .map(|(k, _)| k.clone())
            .collect();
        active.sort();
        active
    }

    /// Messages waiting for a subscriber, over all keys.
    pub fn retained_count(&self) -> usize {
        let keys = self.shared.keys.lock().unwrap();
        keys.values().map(|q| q.retained.len()).sum()
    }

    /// Closes every connection and stops listening. Retained messages are
    /// lost.
    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        let _ = self.task.await;
        info!(local_addr = %self.local_addr, "broker stopped");
    }
}

async fn serve(listener: TcpListener, shared: Arc<Shared>, mut stop: watch::Receiver<bool>) {
    let sweep_every = (shared.retention / 4).clamp(Duration::from_millis(10), Duration::from_secs(1));
    let mut sweep = tokio::time::interval(sweep_every);
    let mut connections = Vec::new();
    loop {
        tokio::select! {
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    let conn = shared.next_conn.fetch_add(1, Ordering::Relaxed);
                    debug!(conn, %peer, "client connected");
                    connections.push(tokio::spawn(connection(conn, stream, shared.clone(), stop.clone())));
                    connections.retain(|c: &JoinHandle<()>| !c.is_finished());
                }
                Err(e) => warn!(error = %e, "accept failed"),
            },
            _ = sweep.tick() => shared.expire(),
            _ = stop.changed() => break,
        }
    }
    drop(listener);
    for conn in connections {
        let _ = conn.await;
    }
}

async fn connection(conn: u64, stream: TcpStream, shared: Arc<Shared>, mut stop: watch::Receiver<bool>) {
    let _ = stream.set_nodelay(true);
    let (mut reader, mut writer) = stream.into_split();
    let (outbox, mut inbox) = mpsc::unbounded_channel::<Frame>();
    let writer_task = tokio::spawn(async move {
        while let Some(frame) = inbox.recv().await {
            if let Err(e) = write_frame(&mut writer, &frame).await {
                debug!(conn, error = %e, "write failed");
                break;
            }
        }
        let _ = writer.shutdown().await;
    });

    loop {
        let frame = tokio::select! {
            read = read_raw(&mut reader) => read,
            _ = stop.changed() => break,
        };
        match frame {
            Ok(Some((frame, body))) => {
                shared.record(&body);
                handle(conn, frame, &shared, &outbox);
            }
            Ok(None) => break,
            Err(e) => {
                warn!(conn, error = %e, "dropping connection");
                break;
            }
        }
    }

    shared.drop_connection(conn);
    drop(outbox);
    let _ = writer_task.await;
    debug!(conn, "client disconnected");
}

fn handle(conn: u64, frame: Frame, shared: &Shared, outbox: &Outbox) {
    let mut ack = Frame::ack(frame.routing_key.clone(), frame.message_id);
    match frame.op {
        Op::Subscribe if frame.routing_key.is_empty() => ack.error = Some("empty routing key".into()),
        Op::Subscribe => shared.subscribe(conn, &frame.routing_key, outbox),
        Op::Publish => {
            if frame.routing_key.is_empty() {
                ack.error = Some("empty routing key".into());
            } else if frame.kind.is_none() || frame.payload.is_none() || frame.message_id.is_none() {
                ack.error = Some("publish needs kind, message_id and payload".into());
            } else {
                shared.publish(frame);
            }
        }
        Op::Ack => return,
    }
    let _ = outbox.send(ack);
}
