//! Real-socket runs: every scripted client is its own task with its own
//! websocket, talking to an in-process hub on the loopback interface (or to
//! an external hub).

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use rustls::pki_types::ServerName;
use rustls::ClientConfig;
use tokio::io::{AsyncRead, AsyncWrite};
use tokio::net::TcpStream;
use tokio::sync::mpsc;
use tokio::time::Instant;
use tokio_rustls::TlsConnector;
use tokio_tungstenite::tungstenite::protocol::WebSocketConfig;
use tokio_tungstenite::tungstenite::Message;

use super::client::{ClientLog, ClientModel};
use super::report::{build_report, HubSide, RunOutcome};
use super::scenario::{Scenario, Step};
use super::sim::client_seed;
use super::HarnessError;
use crate::hub::HubConfig;
use crate::protocol::MAX_FRAME_BYTES;
use crate::server::{start_with_listener, HubHandle};
use crate::tls::{pinned_client_config, read_certificates};

/// Where and how clients reach the hub.
#[derive(Clone)]
pub struct Endpoint {
    pub url: String,
    pub addr: SocketAddr,
    pub host: String,
    pub tls: Option<Arc<ClientConfig>>,
}

impl Endpoint {
    /// Parses `ws://host:port/path` or `wss://…`; `wss` requires `pinned`.
    pub fn parse(url: &str, pinned: Option<&std::path::Path>) -> Result<Self, HarnessError> {
        let bad = || HarnessError::BadUrl(url.to_owned());
        let (secure, rest) = if let Some(r) = url.strip_prefix("wss://") {
            (true, r)
        } else if let Some(r) = url.strip_prefix("ws://") {
            (false, r)
        } else {
            return Err(bad());
        };
        let authority = rest.split('/').next().ok_or_else(bad)?;
        let addr: SocketAddr = authority.parse().map_err(|_| bad())?;
        let tls = match (secure, pinned) {
            (false, _) => None,
            (true, Some(path)) => {
                let cert = read_certificates(path)?.remove(0);
                Some(Arc::new(pinned_client_config(cert)?))
            }
            (true, None) => return Err(HarnessError::MissingPin),
        };
        Ok(Self {
            url: url.to_owned(),
            addr,
            host: addr.ip().to_string(),
            tls,
        })
    }
}

/// Byte stream under a client websocket: plain TCP or TLS.
pub trait Io: AsyncRead + AsyncWrite + Unpin + Send {}
impl<T: AsyncRead + AsyncWrite + Unpin + Send> Io for T {}

pub type ClientSocket = tokio_tungstenite::WebSocketStream<Box<dyn Io>>;

/// Opens a websocket to the hub, over TLS when the endpoint asks for it.
pub async fn connect(endpoint: &Endpoint) -> Result<ClientSocket, HarnessError> {
    let tcp = TcpStream::connect(endpoint.addr)
        .await
        .map_err(|e| HarnessError::Unreachable(format!("{}: {e}", endpoint.addr)))?;
    tcp.set_nodelay(true).ok();
    let io: Box<dyn Io> = match &endpoint.tls {
        Some(config) => {
            let name = ServerName::try_from(endpoint.host.clone())
                .map_err(|_| HarnessError::BadUrl(endpoint.url.clone()))?;
            let tls = TlsConnector::from(Arc::clone(config))
                .connect(name, tcp)
                .await
                .map_err(|e| HarnessError::Tls(e.to_string()))?;
            Box::new(tls)
        }
        None => Box::new(tcp),
    };
    let mut ws_config = WebSocketConfig::default();
    ws_config.max_message_size = Some(MAX_FRAME_BYTES);
    ws_config.max_frame_size = Some(MAX_FRAME_BYTES);
    let (ws, _) = tokio_tungstenite::client_async_with_config(endpoint.url.as_str(), io, Some(ws_config))
        .await
        .map_err(|e| HarnessError::Unreachable(format!("websocket handshake: {e}")))?;
    Ok(ws)
}

enum Inbound {
    Text(String),
    Closed,
}

struct Timing {
    base: Instant,
    duration_ms: u64,
    settle_ms: u64,
    ping_interval_ms: u64,
}

impl Timing {
    fn now(&self) -> u64 {
        self.base.elapsed().as_millis() as u64
    }

    fn at(&self, ms: u64) -> Instant {
        self.base + Duration::from_millis(ms)
    }
}

async fn sleep_until(t: Option<Instant>) {
    match t {
        Some(t) => tokio::time::sleep_until(t).await,
        None => std::future::pending().await,
    }
}

async fn run_client(mut model: ClientModel, endpoint: Endpoint, timing: Arc<Timing>) -> ClientLog {
    let spec = model.spec().clone();
    let delay = Duration::from_millis(spec.delay_ms);
    tokio::time::sleep_until(timing.at(spec.join_ms)).await;
    let ws = match connect(&endpoint).await {
        Ok(ws) => ws,
        Err(e) => {
            log::warn!("{}: {e}", spec.name);
            model.closed(timing.now());
            return model.into_log();
        }
    };
    let (mut sink, mut stream) = ws.split();

    // outbound: frames leave `delay` after the model produced them
    let (out_tx, mut out_rx) = mpsc::unbounded_channel::<(Instant, Message)>();
    let writer = tokio::spawn(async move {
        while let Some((due, msg)) = out_rx.recv().await {
            tokio::time::sleep_until(due).await;
            let closing = matches!(msg, Message::Close(_));
            if sink.send(msg).await.is_err() || closing {
                break;
            }
        }
        let _ = sink.close().await;
    });
    let send = |frames: Vec<String>| {
        for f in frames {
            let _ = out_tx.send((Instant::now() + delay, Message::text(f)));
        }
    };

    // inbound: frames are stamped on arrival and handed over `delay` later
    let (in_tx, mut in_rx) = mpsc::unbounded_channel::<(Instant, Inbound)>();
    let reader = tokio::spawn(async move {
        while let Some(msg) = stream.next().await {
            let item = match msg {
                Ok(Message::Text(t)) => Inbound::Text(t.as_str().to_owned()),
                Ok(Message::Binary(b)) => Inbound::Text(String::from_utf8_lossy(&b).into_owned()),
                Ok(Message::Close(_)) | Err(_) => break,
                Ok(_) => continue,
            };
            if in_tx.send((Instant::now() + delay, item)).is_err() {
                return;
            }
        }
        let _ = in_tx.send((Instant::now() + delay, Inbound::Closed));
    });

    send(vec![model.hello(timing.now())]);
    let mut steps = spec.schedule().into_iter().peekable();
    let mut next_ping = (timing.ping_interval_ms > 0).then(|| spec.join_ms + timing.ping_interval_ms);
    let end = timing.at(timing.duration_ms + timing.settle_ms);
    let mut pending: Option<(Instant, Inbound)> = None;

    loop {
        let step_at = steps
            .peek()
            .map(|(t, _)| timing.at((*t).max(spec.join_ms)));
        let ping_at = next_ping
            .filter(|t| *t <= timing.duration_ms)
            .map(|t| timing.at(t));
        let inbound_due = pending.as_ref().map(|(due, _)| *due);
        tokio::select! {
            biased;
            _ = sleep_until(inbound_due) => {
                let (_, item) = pending.take().expect("pending inbound");
                match item {
                    Inbound::Text(text) => {
                        let replies = model.receive(&text, timing.now());
                        send(replies);
                    }
                    Inbound::Closed => {
                        model.closed(timing.now());
                        break;
                    }
                }
            }
            item = in_rx.recv(), if pending.is_none() => match item {
                Some(item) => pending = Some(item),
                None => {
                    model.closed(timing.now());
                    break;
                }
            },
            _ = sleep_until(step_at) => {
                let (_, step) = steps.next().expect("peeked step");
                let was_open = !model.is_closed();
                send(model.step(&step, timing.now()));
                if step == Step::Disconnect && was_open {
                    let _ = out_tx.send((Instant::now() + delay, Message::Close(None)));
                    break;
                }
            }
            _ = sleep_until(ping_at) => {
                if let Some(f) = model.ping(timing.now()) {
                    send(vec![f]);
                }
                next_ping = next_ping.map(|t| t + timing.ping_interval_ms);
            }
            _ = tokio::time::sleep_until(end) => break,
        }
    }
    let _ = out_tx.send((Instant::now(), Message::Close(None)));
    drop(out_tx);
    let _ = tokio::time::timeout(Duration::from_secs(2), writer).await;
    reader.abort();
    model.into_log()
}

/// Runs `scenario` with real websocket clients.
pub async fn run_real(scenario: &Scenario) -> Result<RunOutcome, HarnessError> {
    let (endpoint, handle): (Endpoint, Option<HubHandle>) = match &scenario.hub.url {
        Some(url) => (Endpoint::parse(url, scenario.hub.pin_cert.as_deref())?, None),
        None => {
            let mut config = HubConfig::new(([127, 0, 0, 1], 1).into(), std::env::temp_dir());
            config.session = scenario.hub.session_config(scenario.seed);
            config.out_queue = scenario.hub.out_queue;
            config.record_mutations = true;
            if let Some(tls) = &scenario.hub.tls {
                config.tls = Some(crate::hub::TlsFiles {
                    cert: tls.cert.clone(),
                    key: tls.key.clone(),
                });
            }
            let listener = std::net::TcpListener::bind(("127.0.0.1", 0))?;
            let handle = start_with_listener(config, listener).await?;
            let pin = scenario.hub.tls.as_ref().map(|t| t.cert.as_path());
            (Endpoint::parse(&handle.ws_url(), pin)?, Some(handle))
        }
    };
    // fail early and clearly when nothing listens there
    TcpStream::connect(endpoint.addr)
        .await
        .map_err(|e| HarnessError::Unreachable(format!("{}: {e}", endpoint.addr)))?;

    let timing = Arc::new(Timing {
        base: Instant::now() + Duration::from_millis(50),
        duration_ms: scenario.duration_ms,
        settle_ms: scenario.settle_ms,
        ping_interval_ms: scenario.ping_interval_ms,
    });
    let tasks: Vec<_> = scenario
        .clients
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let model = ClientModel::new(c.clone(), client_seed(scenario.seed, i));
            tokio::spawn(run_client(model, endpoint.clone(), Arc::clone(&timing)))
        })
        .collect();
    let mut logs = Vec::with_capacity(tasks.len());
    for t in tasks {
        logs.push(t.await.map_err(|e| HarnessError::Client(e.to_string()))?);
    }

    let hub = match handle {
        Some(h) => {
            let side = HubSide {
                stats: Some(h.stats().await?.hub),
                rtts: h.rtt_samples().await?,
                state: Some(h.snapshot().await?),
                journal: h.journal().await?,
            };
            h.shutdown().await;
            side
        }
        None => HubSide {
            stats: None,
            rtts: Vec::new(),
            state: None,
            journal: Vec::new(),
        },
    };
    let max_delay = scenario.clients.iter().map(|c| c.delay_ms).max().unwrap_or(0);
    Ok(build_report(scenario, &logs, &hub, 250 + 2 * max_delay))
}
