use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use tokio::net::TcpStream;
use tokio::sync::{mpsc, oneshot, watch};
use tokio::task::JoinHandle;
use tracing::{debug, info, warn};
use uuid::Uuid;

use crate::frame::read_raw;
use crate::{write_frame, BusError, BusMessage, Frame, Op};

#[derive(Debug, Clone)]
pub struct ClientOptions {
    /// Reconnect and resubscribe when the broker goes away.
    pub reconnect: bool,
    pub ack_timeout: Duration,
    pub connect_timeout: Duration,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self {
            reconnect: true,
            ack_timeout: Duration::from_secs(5),
            connect_timeout: Duration::from_secs(5),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConnectionState {
    Connected,
    Disconnected,
    Closed,
}

type AckSender = oneshot::Sender<Result<(), String>>;

struct Inner {
    addr: String,
    options: ClientOptions,
    outgoing: Mutex<Option<mpsc::UnboundedSender<Frame>>>,
    pending: Mutex<HashMap<Uuid, AckSender>>,
    subscriptions: Mutex<HashMap<String, Vec<mpsc::UnboundedSender<BusMessage>>>>,
    state: watch::Sender<ConnectionState>,
    closed: AtomicBool,
}

struct Driver {
    inner: Arc<Inner>,
    task: Mutex<Option<JoinHandle<()>>>,
}

impl Drop for Driver {
    fn drop(&mut self) {
        self.inner.close();
        if let Some(task) = self.task.lock().unwrap().take() {
            task.abort();
        }
    }
}

/// A connection to a broker. Cheap to clone; clones share the connection.
#[derive(Clone)]
pub struct BusClient {
    inner: Arc<Inner>,
    _driver: Arc<Driver>,
}

/// Messages published to one routing key.
pub struct Subscription {
    routing_key: String,
    rx: mpsc::UnboundedReceiver<BusMessage>,
}

impl Subscription {
    pub fn routing_key(&self) -> &str {
        &self.routing_key
    }

    /// Next message, or `None` once the client is closed.
    pub async fn recv(&mut self) -> Option<BusMessage> {
        self.rx.recv().await
    }

    pub fn try_recv(&mut self) -> Option<BusMessage> {
        self.rx.try_recv().ok()
    }
}

impl BusClient {
    pub async fn connect(addr: &str) -> Result<Self, BusError> {
        Self::connect_with(addr, ClientOptions::default()).await
    }

    pub async fn connect_with(addr: &str, options: ClientOptions) -> Result<Self, BusError> {
        let stream = dial(addr, options.connect_timeout).await?;
        let (state, _) = watch::channel(ConnectionState::Connected);
        let inner = Arc::new(Inner {
            addr: addr.to_owned(),
            options,
            outgoing: Mutex::new(None),
            pending: Mutex::new(HashMap::new()),
            subscriptions: Mutex::new(HashMap::new()),
            state,
            closed: AtomicBool::new(false),
        });
        let driver = Arc::new(Driver {
            inner: inner.clone(),
            task: Mutex::new(None),
        });
        let first = attach(&inner, stream);
        *driver.task.lock().unwrap() = Some(tokio::spawn(drive(inner.clone(), first)));
        Ok(Self { inner, _driver: driver })
    }

    pub fn broker_addr(&self) -> &str {
        &self.inner.addr
    }

    pub fn state(&self) -> watch::Receiver<ConnectionState> {
        self.inner.state.subscribe()
    }

    /// Waits until the connection reaches `wanted`.
    pub async fn wait_for(&self, wanted: ConnectionState) {
        let mut rx = self.state();
        let _ = rx.wait_for(|s| *s == wanted).await;
    }

    /// Publishes and waits for the broker's acknowledgement.
    pub async fn publish(&self, msg: &BusMessage) -> Result<(), BusError> {
        self.send_acked(msg.to_frame()).await
    }

    /// Starts receiving messages published to `routing_key`. Returns once
    /// the broker has registered the subscription.
    pub async fn subscribe(&self, routing_key: &str) -> Result<Subscription, BusError> {
        let (tx, rx) = mpsc::unbounded_channel();
        let first = {
            let mut subs = self.inner.subscriptions.lock().unwrap();
            let entry = subs.entry(routing_key.to_owned()).or_default();
            entry.push(tx);
            entry.len() == 1
        };
        if first {
            let mut frame = Frame::subscribe(routing_key);
            frame.message_id = Some(Uuid::new_v4());
            if let Err(e) = self.send_acked(frame).await {
                self.inner.subscriptions.lock().unwrap().remove(routing_key);
                return Err(e);
            }
        }
        Ok(Subscription {
            routing_key: routing_key.to_owned(),
            rx,
        })
    }

    /// Disconnects; subscriptions end and further calls fail.
    pub fn close(&self) {
        self.inner.close();
    }

    async fn send_acked(&self, frame: Frame) -> Result<(), BusError> {
        frame.encode()?;
        let id = frame.message_id.expect("acked frames carry an id");
        let (tx, rx) = oneshot::channel();
        self.inner.pending.lock().unwrap().insert(id, tx);
        let sent = match &*self.inner.outgoing.lock().unwrap() {
            Some(out) => out.send(frame).is_ok(),
            None => false,
        };
        if !sent {
            self.inner.pending.lock().unwrap().remove(&id);
            return Err(BusError::Disconnected);
        }
        match tokio::time::timeout(self.inner.options.ack_timeout, rx).await {
            Ok(Ok(Ok(()))) => Ok(()),
            Ok(Ok(Err(reason))) => Err(BusError::Rejected(reason)),
            Ok(Err(_)) => Err(BusError::Disconnected),
            Err(_) => {
                self.inner.pending.lock().unwrap().remove(&id);
                Err(BusError::AckTimeout(self.inner.options.ack_timeout))
            }
        }
    }
}

impl Inner {
    fn close(&self) {
        self.closed.store(true, Ordering::SeqCst);
        self.outgoing.lock().unwrap().take();
        self.pending.lock().unwrap().clear();
        self.subscriptions.lock().unwrap().clear();
        self.state.send_replace(ConnectionState::Closed);
    }

    fn is_closed(&self) -> bool {
        self.closed.load(Ordering::SeqCst)
    }

    fn deliver(&self, frame: Frame) {
        match frame.op {
            Op::Publish => match BusMessage::from_frame(frame) {
                Ok(msg) => {
                    let mut subs = self.subscriptions.lock().unwrap();
                    if let Some(list) = subs.get_mut(&msg.routing_key) {
                        list.retain(|tx| tx.send(msg.clone()).is_ok());
                    }
                }
                Err(e) => warn!(error = %e, "ignoring malformed delivery"),
            },
            Op::Ack => {
                if let Some(id) = frame.message_id {
                    if let Some(tx) = self.pending.lock().unwrap().remove(&id) {
                        let _ = tx.send(frame.error.map_or(Ok(()), Err));
                    }
                }
            }
            Op::Subscribe => warn!("broker sent a subscribe frame"),
        }
    }
}

async fn dial(addr: &str, timeout: Duration) -> Result<TcpStream, BusError> {
    match tokio::time::timeout(timeout, TcpStream::connect(addr)).await {
        Ok(Ok(stream)) => {
            let _ = stream.set_nodelay(true);
            Ok(stream)
        }
        _ => Err(BusError::Unreachable(addr.to_owned())),
    }
}

/// Installs a fresh outgoing queue for `stream` and returns the reader
/// half plus the writer task.
fn attach(inner: &Arc<Inner>, stream: TcpStream) -> (tokio::net::tcp::OwnedReadHalf, JoinHandle<()>) {
    let (reader, mut writer) = stream.into_split();
    let (tx, mut rx) = mpsc::unbounded_channel::<Frame>();
    let writer_task = tokio::spawn(async move {
        while let Some(frame) = rx.recv().await {
            if let Err(e) = write_frame(&mut writer, &frame).await {
                debug!(error = %e, "bus write failed");
                break;
            }
        }
    });
    // Resubscribe before anything else can be queued on the new connection.
    for key in inner.subscriptions.lock().unwrap().keys() {
        let _ = tx.send(Frame::subscribe(key.clone()));
    }
    *inner.outgoing.lock().unwrap() = Some(tx);
    inner.state.send_replace(ConnectionState::Connected);
    (reader, writer_task)
}

async fn drive(inner: Arc<Inner>, first: (tokio::net::tcp::OwnedReadHalf, JoinHandle<()>)) {
    let (mut reader, mut writer_task) = first;
    loop {
        loop {
            match read_raw(&mut reader).await {
                Ok(Some((frame, _))) => inner.deliver(frame),
                Ok(None) => break,
                Err(e) => {
                    warn!(error = %e, "bus connection failed");
                    break;
                }
            }
        }
        inner.outgoing.lock().unwrap().take();
        writer_task.abort();
        // Dropping the senders fails every in-flight publish.
        inner.pending.lock().unwrap().clear();
        if inner.is_closed() {
            return;
        }
        inner.state.send_replace(ConnectionState::Disconnected);
        info!(addr = %inner.addr, "disconnected from broker");
        if !inner.options.reconnect {
            return;
        }

        let mut backoff = Duration::from_millis(50);
        let stream = loop {
            tokio::time::sleep(backoff).await;
            if inner.is_closed() {
                return;
            }
            match dial(&inner.addr, inner.options.connect_timeout).await {
                Ok(stream) => break stream,
                Err(_) => backoff = (backoff * 2).min(Duration::from_secs(1)),
            }
        };
        (reader, writer_task) = attach(&inner, stream);
        info!(addr = %inner.addr, "reconnected to broker");
    }
}
