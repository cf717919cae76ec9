use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, SyncSender, TrySendError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use super::encode::{OscError, OscPacket};
use super::mapping::{map_message, BridgeConfig};
use crate::protocol::Envelope;

const FEED_DEPTH: usize = 4096;

/// Sends one packet as one datagram.
pub fn send(socket: &UdpSocket, packet: &OscPacket, dest: SocketAddr) -> Result<(), OscError> {
    match socket.send_to(packet.as_bytes(), dest) {
        Ok(n) if n == packet.len() => Ok(()),
        Ok(n) => Err(OscError::Socket(format!("short send: {n} of {} bytes", packet.len()))),
        Err(e) => Err(OscError::Socket(e.to_string())),
    }
}

/// Socket bound to the unspecified address of `dest`'s family.
pub fn socket_for(dest: SocketAddr) -> std::io::Result<UdpSocket> {
    let bind: SocketAddr = if dest.is_ipv4() {
        ([0, 0, 0, 0], 0).into()
    } else {
        ([0u16; 8], 0).into()
    };
    UdpSocket::bind(bind)
}

#[derive(Debug, Default)]
pub struct BridgeStats {
    pub routed: AtomicU64,
    pub sent: AtomicU64,
    pub send_errors: AtomicU64,
    pub dropped: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct BridgeCounters {
    pub routed: u64,
    pub sent: u64,
    pub send_errors: u64,
    pub dropped: u64,
}

impl BridgeStats {
    pub fn counters(&self) -> BridgeCounters {
        BridgeCounters {
            routed: self.routed.load(Ordering::Relaxed),
            sent: self.sent.load(Ordering::Relaxed),
            send_errors: self.send_errors.load(Ordering::Relaxed),
            dropped: self.dropped.load(Ordering::Relaxed),
        }
    }
}

enum Msg {
    Route(Arc<Envelope>),
    Reload(BridgeConfig),
    Enable(bool),
    Flush(mpsc::Sender<()>),
}

/// Worker thread turning routed envelopes into OSC datagrams.
///
/// Feeding never blocks: when the worker falls behind, envelopes are dropped
/// and counted.
pub struct OscBridge {
    tx: Option<SyncSender<Msg>>,
    stats: Arc<BridgeStats>,
    worker: Option<JoinHandle<()>>,
}

impl OscBridge {
    pub fn spawn(config: BridgeConfig) -> std::io::Result<Self> {
        let socket = socket_for(config.dest)?;
        let (tx, rx) = mpsc::sync_channel(FEED_DEPTH);
        let stats = Arc::new(BridgeStats::default());
        let worker_stats = Arc::clone(&stats);
        let worker = thread::Builder::new()
            .name("osc-bridge".into())
            .spawn(move || run(rx, socket, config, worker_stats))?;
        Ok(Self {
            tx: Some(tx),
            stats,
            worker: Some(worker),
        })
    }

    pub fn feed(&self, e: Arc<Envelope>) {
        self.push(Msg::Route(e));
    }

    pub fn reload(&self, config: BridgeConfig) {
        self.push(Msg::Reload(config));
    }

    /// Stops (or resumes) sending; routing input is still consumed.
    pub fn set_enabled(&self, enabled: bool) {
        self.push(Msg::Enable(enabled));
    }

    /// Waits until everything fed so far has been processed.
    pub fn flush(&self) {
        let (done_tx, done_rx) = mpsc::channel();
        if let Some(tx) = &self.tx {
            if tx.send(Msg::Flush(done_tx)).is_ok() {
                let _ = done_rx.recv();
            }
        }
    }

    pub fn stats(&self) -> BridgeCounters {
        self.stats.counters()
    }

    fn push(&self, msg: Msg) {
        let Some(tx) = &self.tx else { return };
        match tx.try_send(msg) {
            Ok(()) => {}
            Err(TrySendError::Full(Msg::Route(_))) => {
                self.stats.dropped.fetch_add(1, Ordering::Relaxed);
            }
            Err(TrySendError::Full(other)) => {
                // configuration changes must not be lost
                let _ = tx.send(other);
            }
            Err(TrySendError::Disconnected(_)) => {}
        }
    }
}

impl Drop for OscBridge {
    fn drop(&mut self) {
        self.tx.take();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn run(rx: Receiver<Msg>, mut socket: UdpSocket, mut config: BridgeConfig, stats: Arc<BridgeStats>) {
    let mut enabled = true;
    for msg in rx {
        match msg {
            Msg::Route(e) => {
                stats.routed.fetch_add(1, Ordering::Relaxed);
                if !enabled {
                    continue;
                }
                for packet in map_message(&e, &config.rules) {
                    match send(&socket, &packet, config.dest) {
                        Ok(()) => stats.sent.fetch_add(1, Ordering::Relaxed),
                        Err(err) => {
                            log::debug!("osc send to {} failed: {err}", config.dest);
                            stats.send_errors.fetch_add(1, Ordering::Relaxed)
                        }
                    };
                }
            }
            Msg::Reload(c) => {
                if c.dest.is_ipv4() != config.dest.is_ipv4() {
                    match socket_for(c.dest) {
                        Ok(s) => socket = s,
                        Err(err) => {
                            log::warn!("keeping previous OSC rules: {err}");
                            continue;
                        }
                    }
                }
                log::info!("OSC bridge reloaded: {} rules to {}", c.rules.len(), c.dest);
                config = c;
            }
            Msg::Enable(on) => enabled = on,
            Msg::Flush(done) => {
                let _ = done.send(());
            }
        }
    }
}
