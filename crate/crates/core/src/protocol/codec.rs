//! Text wire format.
//!
//! One frame is a single-line JSON object with exactly the keys
//! `v`, `kind`, `src`, `seq`, `ts` and `pl`, written in that order:
//!
//! ```text
//! {"v":1,"kind":"control","src":"u3","seq":12,"ts":83211,"pl":{"control":"zombitronica/vol0","value":0.5}}
//! ```

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use thiserror::Error;

use super::ids::{Topic, UnitId};
use super::payload::{Kind, Payload};

pub const PROTOCOL_VERSION: u32 = 1;

/// Largest frame the codec accepts, in bytes.
pub const MAX_FRAME_BYTES: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub version: u32,
    pub source: UnitId,
    pub seq: u64,
    pub ts_ms: u64,
    pub payload: Payload,
}

impl Envelope {
    pub fn new(source: UnitId, seq: u64, ts_ms: u64, payload: Payload) -> Self {
        Self {
            version: PROTOCOL_VERSION,
            source,
            seq,
            ts_ms,
            payload,
        }
    }

    pub fn kind(&self) -> Kind {
        self.payload.kind()
    }

    /// The publish path this envelope is routed on, if it carries routable data.
    pub fn topic(&self) -> Option<Topic> {
        let path = match &self.payload {
            Payload::Touch(t) => format!("control/{}/{}", t.surface, t.control),
            Payload::ControlChange(c) => format!("control/{}", c.control),
            Payload::Motion(_) => format!("sensor/motion/{}", self.source),
            Payload::Orientation(_) => format!("sensor/orientation/{}", self.source),
            Payload::SeqCellSet(_) => "state/seq".to_owned(),
            Payload::TransportSet(_) | Payload::Tick(_) => "state/transport".to_owned(),
            _ => return None,
        };
        Topic::new(path).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("unknown kind {0:?}")]
    UnknownKind(String),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u64),
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
}

impl DecodeError {
    /// Stable code used in `Error` frames.
    pub fn code(&self) -> &'static str {
        match self {
            DecodeError::MalformedFrame(_) => "malformed-frame",
            DecodeError::UnknownKind(_) => "unknown-kind",
            DecodeError::UnsupportedVersion(_) => "unsupported-version",
            DecodeError::InvariantViolation(_) => "invariant-violation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("cannot encode {kind} frame: {detail}")]
    InvariantViolation { kind: Kind, detail: String },
    #[error("encoded frame is {0} bytes, limit is {MAX_FRAME_BYTES}")]
    TooLarge(usize),
}

#[derive(Serialize)]
struct FrameOut<'a, P: Serialize> {
    v: u32,
    kind: &'static str,
    src: &'a UnitId,
    seq: u64,
    ts: u64,
    pl: &'a P,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameIn<'a> {
    v: u64,
    kind: String,
    src: String,
    seq: u64,
    ts: u64,
    #[serde(borrow)]
    pl: &'a RawValue,
}

#[derive(Deserialize)]
struct VersionProbe {
    v: u64,
}

pub fn encode_envelope(e: &Envelope) -> Result<String, EncodeError> {
    let kind = e.kind();
    let reject = |detail: String| EncodeError::InvariantViolation { kind, detail };
    if e.version != PROTOCOL_VERSION {
        return Err(reject(format!("version {} is not supported", e.version)));
    }
    e.payload.validate().map_err(reject)?;

    fn write<P: Serialize>(e: &Envelope, kind: Kind, pl: &P) -> Result<String, EncodeError> {
        let frame = FrameOut {
            v: e.version,
            kind: kind.as_str(),
            src: &e.source,
            seq: e.seq,
            ts: e.ts_ms,
            pl,
        };
        serde_json::to_string(&frame).map_err(|err| EncodeError::InvariantViolation {
            kind,
            detail: err.to_string(),
        })
    }

    let text = match &e.payload {
        Payload::Hello(p) => write(e, kind, p),
        Payload::Welcome(p) => write(e, kind, p),
        Payload::Subscribe(p) | Payload::Unsubscribe(p) => write(e, kind, p),
        Payload::Touch(p) => write(e, kind, p),
        Payload::Motion(p) => write(e, kind, p),
        Payload::Orientation(p) => write(e, kind, p),
        Payload::ControlChange(p) => write(e, kind, p),
        Payload::SeqCellSet(p) => write(e, kind, p),
        Payload::TransportSet(p) => write(e, kind, p),
        Payload::Tick(p) => write(e, kind, p),
        Payload::Ping(p) => write(e, kind, p),
        Payload::Pong(p) => write(e, kind, p),
        Payload::Error(p) => write(e, kind, p),
    }?;
    if text.len() > MAX_FRAME_BYTES {
        return Err(EncodeError::TooLarge(text.len()));
    }
    Ok(text)
}

/// Decodes arbitrary bytes; non-UTF-8 input is a malformed frame.
pub fn decode_bytes(frame: &[u8]) -> Result<Envelope, DecodeError> {
    match std::str::from_utf8(frame) {
        Ok(s) => decode_envelope(s),
        Err(e) => Err(DecodeError::MalformedFrame(format!("not UTF-8: {e}"))),
    }
}

pub fn decode_envelope(frame: &str) -> Result<Envelope, DecodeError> {
    if frame.is_empty() {
        return Err(DecodeError::MalformedFrame("empty frame".into()));
    }
    if frame.len() > MAX_FRAME_BYTES {
        return Err(DecodeError::MalformedFrame(format!(
            "frame is {} bytes, limit is {MAX_FRAME_BYTES}",
            frame.len()
        )));
    }
    if frame.contains('\n') {
        return Err(DecodeError::MalformedFrame("frame spans several lines".into()));
    }
    let raw: FrameIn<'_> = match serde_json::from_str(frame) {
        Ok(raw) => raw,
        Err(err) => {
            // A frame from a newer peer may change the layout; report the version.
            if let Ok(VersionProbe { v }) = serde_json::from_str::<VersionProbe>(frame) {
                if v != u64::from(PROTOCOL_VERSION) {
                    return Err(DecodeError::UnsupportedVersion(v));
                }
            }
            return Err(DecodeError::MalformedFrame(err.to_string()));
        }
    };
    if raw.v != u64::from(PROTOCOL_VERSION) {
        return Err(DecodeError::UnsupportedVersion(raw.v));
    }
    let kind: Kind = raw
        .kind
        .parse()
        .map_err(|_| DecodeError::UnknownKind(raw.kind.clone()))?;
    let source = UnitId::new(raw.src).map_err(|e| DecodeError::InvariantViolation(e.to_string()))?;

    fn body<T: DeserializeOwned>(pl: &RawValue) -> Result<T, DecodeError> {
        serde_json::from_str(pl.get()).map_err(|e| DecodeError::MalformedFrame(format!("payload: {e}")))
    }

    let pl = raw.pl;
    let payload = match kind {
        Kind::Hello => Payload::Hello(body(pl)?),
        Kind::Welcome => Payload::Welcome(Box::new(body(pl)?)),
        Kind::Subscribe => Payload::Subscribe(body(pl)?),
        Kind::Unsubscribe => Payload::Unsubscribe(body(pl)?),
        Kind::Touch => Payload::Touch(body(pl)?),
        Kind::Motion => Payload::Motion(body(pl)?),
        Kind::Orientation => Payload::Orientation(body(pl)?),
        Kind::ControlChange => Payload::ControlChange(body(pl)?),
        Kind::SeqCellSet => Payload::SeqCellSet(body(pl)?),
        Kind::TransportSet => Payload::TransportSet(body(pl)?),
        Kind::Tick => Payload::Tick(body(pl)?),
        Kind::Ping => Payload::Ping(body(pl)?),
        Kind::Pong => Payload::Pong(body(pl)?),
        Kind::Error => Payload::Error(body(pl)?),
    };
    payload.validate().map_err(DecodeError::InvariantViolation)?;
    Ok(Envelope {
        version: PROTOCOL_VERSION,
        source,
        seq: raw.seq,
        ts_ms: raw.ts,
        payload,
    })
}
