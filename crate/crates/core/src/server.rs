//! The networked hub: HTTP(S) for pages and surface definitions, websockets
//! for units, all routed through one [`HubCore`] owned by a single task.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use hyper_util::rt::{TokioExecutor, TokioIo};
use hyper_util::server::conn::auto::Builder as ConnBuilder;
use hyper_util::service::TowerToHyperService;
use serde::Serialize;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot, watch, Notify};
use tokio::task::{JoinHandle, JoinSet};
use tokio::time::{Instant, MissedTickBehavior};
use tokio_rustls::TlsAcceptor;
use tower_http::services::ServeDir;

use crate::hub::{ConfigError, ConnId, HubConfig, HubCore, HubStats, OutQueue, Output, RttEstimate, UnitInfo};
use crate::osc::{load_bridge_config, BridgeConfig, BridgeCounters, MappingError, OscBridge};
use crate::protocol::MAX_FRAME_BYTES;
use crate::surface::{Mutation, SharedState, SpecError, SurfaceSpec};
use crate::tls::{server_config, TlsError};

/// RTT samples kept for [`HubHandle::rtt_samples`].
const RTT_HISTORY: usize = 100_000;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("address {0} is already in use")]
    PortInUse(SocketAddr),
    #[error(transparent)]
    BadCertificate(#[from] TlsError),
    #[error("asset root {0} is not a directory")]
    MissingAssetRoot(PathBuf),
    #[error("surfaces: {0}")]
    Surface(#[from] SpecError),
    #[error("OSC bridge: {0}")]
    Bridge(String),
    #[error("hub has stopped")]
    Stopped,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl ServerError {
    pub fn code(&self) -> &'static str {
        match self {
            ServerError::Config(_) => "invalid-config",
            ServerError::PortInUse(_) => "port-in-use",
            ServerError::BadCertificate(_) => "bad-certificate",
            ServerError::MissingAssetRoot(_) => "missing-asset-root",
            ServerError::Surface(_) => "bad-surface",
            ServerError::Bridge(_) => "bad-bridge-config",
            ServerError::Stopped => "stopped",
            ServerError::Io(_) => "io-error",
        }
    }
}

impl From<MappingError> for ServerError {
    fn from(e: MappingError) -> Self {
        ServerError::Bridge(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ServerStats {
    #[serde(flatten)]
    pub hub: HubStats,
    pub connections: usize,
    /// Sensor frames dropped from full per-connection send queues.
    pub outbound_dropped: u64,
    pub bridge: Option<BridgeCounters>,
}

struct ConnShared {
    queue: Mutex<OutQueue>,
    notify: Notify,
    closing: AtomicBool,
}

impl ConnShared {
    fn close(&self) {
        self.closing.store(true, Ordering::SeqCst);
        self.notify.notify_one();
    }
}

enum Command {
    Connect(ConnId, Arc<ConnShared>),
    Text(ConnId, String),
    Binary(ConnId, Vec<u8>),
    Disconnect(ConnId),
    Stats(oneshot::Sender<ServerStats>),
    Snapshot(oneshot::Sender<SharedState>),
    Units(oneshot::Sender<Vec<UnitInfo>>),
    Rtts(oneshot::Sender<Vec<RttEstimate>>),
    Journal(oneshot::Sender<Vec<Mutation>>),
    ReloadBridge(BridgeConfig),
}

#[derive(Clone)]
struct AppState {
    commands: mpsc::UnboundedSender<Command>,
    surfaces: Arc<Vec<SurfaceSpec>>,
    next_conn: Arc<AtomicU64>,
    out_queue: usize,
}

/// Control handle of a running hub. Dropping it stops the hub.
pub struct HubHandle {
    local_addr: SocketAddr,
    tls: bool,
    bridge_path: Option<PathBuf>,
    commands: mpsc::UnboundedSender<Command>,
    shutdown: watch::Sender<bool>,
    tasks: Vec<JoinHandle<()>>,
}

impl std::fmt::Debug for HubHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HubHandle")
            .field("local_addr", &self.local_addr)
            .field("tls", &self.tls)
            .finish_non_exhaustive()
    }
}

impl HubHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn is_tls(&self) -> bool {
        self.tls
    }

    /// Websocket endpoint URL.
    pub fn ws_url(&self) -> String {
        let scheme = if self.tls { "wss" } else { "ws" };
        format!("{scheme}://{}/ws", self.local_addr)
    }

    pub fn http_url(&self) -> String {
        let scheme = if self.tls { "https" } else { "http" };
        format!("{scheme}://{}/", self.local_addr)
    }

    async fn ask<T>(&self, make: impl FnOnce(oneshot::Sender<T>) -> Command) -> Result<T, ServerError> {
        let (tx, rx) = oneshot::channel();
        self.commands.send(make(tx)).map_err(|_| ServerError::Stopped)?;
        rx.await.map_err(|_| ServerError::Stopped)
    }

    pub async fn stats(&self) -> Result<ServerStats, ServerError> {
        self.ask(Command::Stats).await
    }

    pub async fn snapshot(&self) -> Result<SharedState, ServerError> {
        self.ask(Command::Snapshot).await
    }

    pub async fn units(&self) -> Result<Vec<UnitInfo>, ServerError> {
        self.ask(Command::Units).await
    }

    /// Every heartbeat round trip measured so far (most recent 100 000).
    pub async fn rtt_samples(&self) -> Result<Vec<RttEstimate>, ServerError> {
        self.ask(Command::Rtts).await
    }

    /// Mutations applied so far; empty unless `record_mutations` was set.
    pub async fn journal(&self) -> Result<Vec<Mutation>, ServerError> {
        self.ask(Command::Journal).await
    }

    /// Re-reads the OSC mapping file named in the config.
    pub fn reload_bridge(&self) -> Result<(), ServerError> {
        let Some(path) = &self.bridge_path else {
            return Err(ServerError::Bridge("no bridge configured".into()));
        };
        let text = std::fs::read_to_string(path)?;
        let config = load_bridge_config(&text)?;
        self.commands
            .send(Command::ReloadBridge(config))
            .map_err(|_| ServerError::Stopped)
    }

    /// Closes every connection and waits for the hub tasks to finish.
    pub async fn shutdown(mut self) {
        let _ = self.shutdown.send(true);
        for t in self.tasks.drain(..) {
            let _ = t.await;
        }
    }

    /// Resolves once the hub has stopped, for whatever reason.
    pub async fn wait(mut self) {
        for t in self.tasks.drain(..) {
            let _ = t.await;
        }
    }
}

impl Drop for HubHandle {
    fn drop(&mut self) {
        let _ = self.shutdown.send(true);
    }
}

/// Binds, spawns the hub tasks and returns once the hub accepts connections.
pub async fn start(config: HubConfig) -> Result<HubHandle, ServerError> {
    config.validate()?;
    let listener = std::net::TcpListener::bind(config.bind).map_err(|e| {
        if e.kind() == std::io::ErrorKind::AddrInUse {
            ServerError::PortInUse(config.bind)
        } else {
            ServerError::Io(e)
        }
    })?;
    start_with_listener(config, listener).await
}

/// Like [`start`], on a socket that is already bound (possibly to an
/// ephemeral port); `config.bind` is ignored.
pub async fn start_with_listener(
    config: HubConfig,
    listener: std::net::TcpListener,
) -> Result<HubHandle, ServerError> {
    config.session.validate()?;
    if !config.asset_root.is_dir() {
        return Err(ServerError::MissingAssetRoot(config.asset_root.clone()));
    }
    let acceptor = match &config.tls {
        Some(files) => Some(TlsAcceptor::from(Arc::new(server_config(&files.cert, &files.key)?))),
        None => None,
    };
    let bridge = match &config.osc_bridge {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ServerError::Bridge(format!("{}: {e}", path.display())))?;
            Some(OscBridge::spawn(load_bridge_config(&text)?)?)
        }
        None => None,
    };
    let mut core = HubCore::new(config.session.clone())?;
    if bridge.is_some() {
        core.enable_feed();
    }
    if config.record_mutations {
        core.enable_journal();
    }
    listener.set_nonblocking(true)?;
    let listener = TcpListener::from_std(listener)?;
    let local_addr = listener.local_addr()?;

    let (cmd_tx, cmd_rx) = mpsc::unbounded_channel();
    let (shutdown_tx, shutdown_rx) = watch::channel(false);
    let app = AppState {
        commands: cmd_tx.clone(),
        surfaces: Arc::new(core.surfaces().cloned().collect()),
        next_conn: Arc::new(AtomicU64::new(1)),
        out_queue: config.out_queue,
    };
    let router = Router::new()
        .route("/", get(index))
        .route("/surfaces", get(surface_list))
        .route("/surfaces/{name}", get(surface_doc))
        .route("/ws", get(ws_upgrade))
        .nest_service("/client", ServeDir::new(&config.asset_root))
        .with_state(app);

    let heartbeat = Duration::from_millis(config.session.heartbeat_ms);
    let event_loop = tokio::spawn(run_core(core, bridge, cmd_rx, shutdown_rx.clone(), heartbeat));
    let acceptor_task = tokio::spawn(accept_loop(listener, acceptor, router, shutdown_rx));
    log::info!(
        "hub listening on {}://{local_addr}",
        if config.tls.is_some() { "https" } else { "http" }
    );
    Ok(HubHandle {
        local_addr,
        tls: config.tls.is_some(),
        bridge_path: config.osc_bridge.clone(),
        commands: cmd_tx,
        shutdown: shutdown_tx,
        tasks: vec![event_loop, acceptor_task],
    })
}

async fn accept_loop(
    listener: TcpListener,
    acceptor: Option<TlsAcceptor>,
    router: Router,
    mut shutdown: watch::Receiver<bool>,
) {
    let mut conns = JoinSet::new();
    loop {
        let (stream, peer) = tokio::select! {
            accepted = listener.accept() => match accepted {
                Ok(a) => a,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            },
            _ = shutdown.changed() => break,
            Some(_) = conns.join_next(), if !conns.is_empty() => continue,
        };
        let _ = stream.set_nodelay(true);
        let service = TowerToHyperService::new(router.clone());
        let acceptor = acceptor.clone();
        conns.spawn(async move {
            let builder = ConnBuilder::new(TokioExecutor::new());
            let result = match acceptor {
                Some(acceptor) => match acceptor.accept(stream).await {
                    Ok(tls) => {
                        builder
                            .serve_connection_with_upgrades(TokioIo::new(tls), service)
                            .await
                    }
                    Err(e) => {
                        log::debug!("TLS handshake with {peer} failed: {e}");
                        return;
                    }
                },
                None => {
                    builder
                        .serve_connection_with_upgrades(TokioIo::new(stream), service)
                        .await
                }
            };
            if let Err(e) = result {
                log::debug!("connection from {peer} ended: {e}");
            }
        });
    }
    // give websocket writers a moment to send their close frames
    let _ = tokio::time::timeout(Duration::from_millis(500), async {
        while conns.join_next().await.is_some() {}
    })
    .await;
    conns.abort_all();
}

async fn sleep_until(deadline: Option<Instant>) {
    match deadline {
        Some(d) => tokio::time::sleep_until(d).await,
        None => std::future::pending().await,
    }
}

async fn run_core(
    mut core: HubCore,
    mut bridge: Option<OscBridge>,
    mut commands: mpsc::UnboundedReceiver<Command>,
    mut shutdown: watch::Receiver<bool>,
    heartbeat: Duration,
) {
    let start = Instant::now();
    let now = || start.elapsed().as_millis() as u64;
    let mut conns: HashMap<ConnId, Arc<ConnShared>> = HashMap::new();
    let mut rtts: Vec<RttEstimate> = Vec::new();
    let mut outbound_dropped = 0u64;
    let mut ticker = tokio::time::interval_at(start + heartbeat, heartbeat);
    ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);

    loop {
        let deadline = core.clock_deadline().map(|ms| start + Duration::from_millis(ms));
        tokio::select! {
            cmd = commands.recv() => {
                let Some(cmd) = cmd else { break };
                match cmd {
                    Command::Connect(conn, shared) => {
                        conns.insert(conn, shared);
                    }
                    Command::Text(conn, text) if conns.contains_key(&conn) => {
                        core.on_frame(conn, &text, now());
                    }
                    Command::Binary(conn, bytes) if conns.contains_key(&conn) => {
                        core.on_binary(conn, &bytes, now());
                    }
                    Command::Text(..) | Command::Binary(..) => {}
                    Command::Disconnect(conn) => {
                        if let Some(unit) = core.unit_for_conn(conn) {
                            log::info!("{unit} disconnected");
                        }
                        core.on_disconnect(conn);
                        if let Some(shared) = conns.remove(&conn) {
                            outbound_dropped += shared.queue.lock().unwrap().dropped();
                        }
                    }
                    Command::Stats(reply) => {
                        let live: u64 = conns.values().map(|c| c.queue.lock().unwrap().dropped()).sum();
                        let _ = reply.send(ServerStats {
                            hub: core.stats(),
                            connections: conns.len(),
                            outbound_dropped: outbound_dropped + live,
                            bridge: bridge.as_ref().map(OscBridge::stats),
                        });
                    }
                    Command::Snapshot(reply) => {
                        let _ = reply.send(core.state().clone());
                    }
                    Command::Units(reply) => {
                        let _ = reply.send(core.units().cloned().collect());
                    }
                    Command::Rtts(reply) => {
                        let _ = reply.send(rtts.clone());
                    }
                    Command::Journal(reply) => {
                        let _ = reply.send(core.journal().to_vec());
                    }
                    Command::ReloadBridge(config) => match &bridge {
                        Some(b) => b.reload(config),
                        None => log::warn!("bridge reload ignored: no bridge running"),
                    },
                }
            }
            _ = ticker.tick() => {
                let report = core.heartbeat_tick(now());
                for unit in &report.evicted {
                    log::info!("evicted {unit}: idle");
                }
                rtts.extend(report.rtts);
                if rtts.len() > RTT_HISTORY {
                    rtts.drain(..rtts.len() - RTT_HISTORY);
                }
            }
            _ = sleep_until(deadline) => {
                core.clock_tick(now());
            }
            _ = shutdown.changed() => break,
        }

        for out in core.take_outputs() {
            match out {
                Output::Frame { conn, frame, class } => {
                    if let Some(shared) = conns.get(&conn) {
                        shared.queue.lock().unwrap().push(frame, class);
                        shared.notify.notify_one();
                    }
                }
                Output::Close { conn } => {
                    if let Some(shared) = conns.remove(&conn) {
                        outbound_dropped += shared.queue.lock().unwrap().dropped();
                        shared.close();
                    }
                }
            }
        }
        if let Some(b) = &bridge {
            for env in core.take_routed() {
                b.feed(env);
            }
        }
    }
    for shared in conns.values() {
        shared.close();
    }
    if let Some(b) = bridge.take() {
        // joining the worker blocks briefly
        let _ = tokio::task::spawn_blocking(move || drop(b)).await;
    }
    log::info!("hub stopped");
}

async fn index(State(app): State<AppState>) -> Html<String> {
    let mut items = String::new();
    for s in app.surfaces.iter() {
        items.push_str(&format!(
            "<li><a href=\"/client/?surface={name}\">{title}</a> \
             (<a href=\"/surfaces/{name}\">definition</a>)</li>\n",
            name = html_escape(&s.name),
            title = html_escape(s.title.as_deref().unwrap_or(&s.name)),
        ));
    }
    Html(format!(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">\
         <meta name=\"viewport\" content=\"width=device-width\">\
         <title>zombihub</title></head>\n<body><h1>Surfaces</h1>\n<ul>\n{items}</ul>\n</body></html>\n"
    ))
}

fn html_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

async fn surface_list(State(app): State<AppState>) -> Json<Vec<String>> {
    Json(app.surfaces.iter().map(|s| s.name.clone()).collect())
}

async fn surface_doc(State(app): State<AppState>, UrlPath(name): UrlPath<String>) -> Response {
    let name = name.strip_suffix(".json").unwrap_or(&name);
    match app.surfaces.iter().find(|s| s.name == name) {
        Some(spec) => (
            [(header::CACHE_CONTROL, "no-cache")],
            Json(spec.clone()),
        )
            .into_response(),
        None => (StatusCode::NOT_FOUND, format!("no surface named {name}\n")).into_response(),
    }
}

async fn ws_upgrade(State(app): State<AppState>, ws: WebSocketUpgrade) -> Response {
    ws.max_message_size(MAX_FRAME_BYTES)
        .max_frame_size(MAX_FRAME_BYTES)
        .on_upgrade(move |socket| serve_socket(app, socket))
}

async fn serve_socket(app: AppState, socket: WebSocket) {
    let conn = app.next_conn.fetch_add(1, Ordering::Relaxed);
    let shared = Arc::new(ConnShared {
        queue: Mutex::new(OutQueue::new(app.out_queue)),
        notify: Notify::new(),
        closing: AtomicBool::new(false),
    });
    if app.commands.send(Command::Connect(conn, Arc::clone(&shared))).is_err() {
        return;
    }
    let (mut sink, mut stream) = socket.split();

    let writer_shared = Arc::clone(&shared);
    let writer = async move {
        loop {
            let batch: Vec<Arc<str>> = {
                let mut q = writer_shared.queue.lock().unwrap();
                std::iter::from_fn(|| q.pop()).collect()
            };
            for frame in batch {
                if sink.send(Message::Text(frame.as_ref().into())).await.is_err() {
                    return;
                }
            }
            if writer_shared.closing.load(Ordering::SeqCst) && writer_shared.queue.lock().unwrap().is_empty() {
                let _ = sink.send(Message::Close(None)).await;
                return;
            }
            writer_shared.notify.notified().await;
        }
    };

    let commands = app.commands.clone();
    let reader = async move {
        while let Some(msg) = stream.next().await {
            let cmd = match msg {
                Ok(Message::Text(t)) => Command::Text(conn, t.as_str().to_owned()),
                Ok(Message::Binary(b)) => Command::Binary(conn, b.to_vec()),
                Ok(Message::Close(_)) => break,
                Ok(_) => continue,
                Err(e) => {
                    log::debug!("websocket {conn}: {e}");
                    break;
                }
            };
            if commands.send(cmd).is_err() {
                break;
            }
        }
    };

    tokio::select! {
        _ = writer => {}
        _ = reader => {}
    }
    let _ = app.commands.send(Command::Disconnect(conn));
}
