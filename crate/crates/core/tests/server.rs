use std::net::SocketAddr;
use std::path::Path;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio_tungstenite::tungstenite::Message;

use zombihub_core::harness::{connect, ClientSocket, Endpoint, HarnessError};
use zombihub_core::hub::{HubConfig, TlsFiles};
use zombihub_core::protocol::{ControlChange, Hello, Role, Topics};
use zombihub_core::server::{start, start_with_listener, HubHandle, ServerError};
use zombihub_core::tls::generate_certificate;
use zombihub_core::{
    decode_envelope, encode_envelope, CapabilityProfile, Envelope, Payload, TopicPattern, UnitId,
};

fn assets() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<!doctype html><title>client</title>").unwrap();
    dir
}

async fn hub(config: HubConfig) -> HubHandle {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    start_with_listener(config, listener).await.unwrap()
}

fn config(asset_root: &Path) -> HubConfig {
    HubConfig::new("127.0.0.1:1".parse().unwrap(), asset_root)
}

async fn http_get(addr: SocketAddr, path: &str) -> (u16, String) {
    let mut s = tokio::net::TcpStream::connect(addr).await.unwrap();
    let req = format!("GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n");
    s.write_all(req.as_bytes()).await.unwrap();
    let mut raw = Vec::new();
    s.read_to_end(&mut raw).await.unwrap();
    let text = String::from_utf8_lossy(&raw).into_owned();
    let status = text.split(' ').nth(1).unwrap().parse().unwrap();
    let body = text.split_once("\r\n\r\n").map(|(_, b)| b.to_owned()).unwrap_or_default();
    (status, body)
}

fn frame(src: &str, seq: u64, payload: Payload) -> Message {
    let e = Envelope::new(UnitId::new(src).unwrap(), seq, 0, payload);
    Message::text(encode_envelope(&e).unwrap())
}

async fn next_envelope(ws: &mut ClientSocket) -> Envelope {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(5), ws.next())
            .await
            .expect("frame within 5 s")
            .expect("stream open")
            .unwrap();
        if let Message::Text(t) = msg {
            return decode_envelope(t.as_str()).unwrap();
        }
    }
}

async fn join(endpoint: &Endpoint, id: &str) -> ClientSocket {
    let mut ws = connect(endpoint).await.unwrap();
    let hello = Payload::Hello(Hello {
        roles: [Role::Client].into(),
        caps: CapabilityProfile::full(),
        wants_surface: Some("zombitronica".into()),
    });
    ws.send(frame(id, 0, hello)).await.unwrap();
    match next_envelope(&mut ws).await.payload {
        Payload::Welcome(w) => assert_eq!(w.unit.as_str(), id),
        other => panic!("expected welcome, got {other:?}"),
    }
    ws
}

#[tokio::test]
async fn serves_index_surfaces_and_client_assets() {
    let dir = assets();
    let h = hub(config(dir.path())).await;
    let addr = h.local_addr();

    let (status, body) = http_get(addr, "/").await;
    assert_eq!(status, 200);
    assert!(body.contains("zombitronica"));

    let (status, body) = http_get(addr, "/surfaces/zombitronica").await;
    assert_eq!(status, 200);
    let doc: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(doc["name"], "zombitronica");

    let (status, body) = http_get(addr, "/surfaces").await;
    assert_eq!(status, 200);
    assert!(serde_json::from_str::<serde_json::Value>(&body).unwrap().is_array());

    assert_eq!(http_get(addr, "/surfaces/no-such-surface").await.0, 404);
    let (status, body) = http_get(addr, "/client/index.html").await;
    assert_eq!((status, body.contains("client")), (200, true));
    assert_eq!(http_get(addr, "/client/missing.js").await.0, 404);
    h.shutdown().await;
}

#[tokio::test]
async fn routes_between_websocket_clients() {
    let dir = assets();
    let mut c = config(dir.path());
    c.record_mutations = true;
    let h = hub(c).await;
    let endpoint = Endpoint::parse(&h.ws_url(), None).unwrap();

    let mut a = join(&endpoint, "alpha").await;
    let mut b = join(&endpoint, "beta").await;
    let sub = Payload::Subscribe(Topics {
        topics: vec![TopicPattern::new("control/*").unwrap()],
    });
    b.send(frame("beta", 1, sub)).await.unwrap();
    // the pong shows the subscribe has been applied
    b.send(frame("beta", 2, Payload::Ping(zombihub_core::protocol::Ping { nonce: 9 }))).await.unwrap();
    assert!(matches!(next_envelope(&mut b).await.payload, Payload::Pong(_)));

    let change = Payload::ControlChange(ControlChange {
        control: "zombitronica/vol0".into(),
        value: 0.75,
    });
    a.send(frame("alpha", 1, change.clone())).await.unwrap();
    let got = next_envelope(&mut b).await;
    assert_eq!(got.source.as_str(), "alpha");
    assert_eq!(got.payload, change);

    let state = h.snapshot().await.unwrap();
    assert_eq!(state.controls["zombitronica/vol0"], 0.75);
    assert_eq!(h.journal().await.unwrap().len(), 1);
    assert_eq!(h.units().await.unwrap().len(), 2);

    // a frame with a foreign source is refused with an error frame
    a.send(frame("beta", 2, Payload::Ping(zombihub_core::protocol::Ping { nonce: 1 }))).await.unwrap();
    match next_envelope(&mut a).await.payload {
        Payload::Error(e) => assert_eq!(e.code, "source-mismatch"),
        other => panic!("expected error, got {other:?}"),
    }
    h.shutdown().await;
}

#[tokio::test]
async fn serves_wss_with_generated_certificate() {
    let dir = assets();
    let certs = tempfile::tempdir().unwrap();
    let files = generate_certificate("127.0.0.1", 30, certs.path()).unwrap();
    let mut c = config(dir.path());
    c.tls = Some(TlsFiles {
        cert: files.cert.clone(),
        key: files.key.clone(),
    });
    let h = hub(c).await;
    assert!(h.is_tls());
    assert!(h.ws_url().starts_with("wss://"));

    let endpoint = Endpoint::parse(&h.ws_url(), Some(&files.cert)).unwrap();
    let ws = join(&endpoint, "secure").await;
    drop(ws);

    // a client pinning some other certificate refuses the hub
    let other = tempfile::tempdir().unwrap();
    let stranger = generate_certificate("127.0.0.1", 30, other.path()).unwrap();
    let wrong = Endpoint::parse(&h.ws_url(), Some(&stranger.cert)).unwrap();
    assert!(matches!(connect(&wrong).await, Err(HarnessError::Tls(_))));

    // and wss without a pin is refused up front
    assert!(matches!(Endpoint::parse(&h.ws_url(), None), Err(HarnessError::MissingPin)));
    h.shutdown().await;
}

#[tokio::test]
async fn reports_port_in_use() {
    let dir = assets();
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let mut c = config(dir.path());
    c.bind = taken.local_addr().unwrap();
    let err = start(c).await.unwrap_err();
    assert_eq!(err.code(), "port-in-use");
}

#[tokio::test]
async fn reports_bad_certificate() {
    let dir = assets();
    let junk = dir.path().join("junk.pem");
    std::fs::write(&junk, "-----BEGIN CERTIFICATE-----\nnot base64\n-----END CERTIFICATE-----\n").unwrap();
    let mut c = config(dir.path());
    c.tls = Some(TlsFiles {
        cert: junk.clone(),
        key: junk,
    });
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let err = start_with_listener(c, listener).await.unwrap_err();
    assert!(matches!(err, ServerError::BadCertificate(_)), "{err}");

    let mut c = config(dir.path());
    c.tls = Some(TlsFiles {
        cert: dir.path().join("absent.pem"),
        key: dir.path().join("absent-key.pem"),
    });
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    assert_eq!(start_with_listener(c, listener).await.unwrap_err().code(), "bad-certificate");
}

#[tokio::test]
async fn reports_missing_asset_root() {
    let c = config(Path::new("/definitely/not/here"));
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let err = start_with_listener(c, listener).await.unwrap_err();
    assert_eq!(err.code(), "missing-asset-root");
}

#[tokio::test]
async fn port_zero_is_rejected() {
    let dir = assets();
    let mut c = config(dir.path());
    c.bind = "127.0.0.1:0".parse().unwrap();
    assert_eq!(start(c).await.unwrap_err().code(), "invalid-config");
}
