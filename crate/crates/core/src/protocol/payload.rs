use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::caps::{CapabilityProfile, Role};
use super::ids::{TopicPattern, UnitId};
use crate::surface::SharedState;

/// Highest note number accepted in a sequencer cell.
pub const MAX_NOTE: u8 = 127;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hello {
    pub roles: BTreeSet<Role>,
    pub caps: CapabilityProfile,
    #[serde(default)]
    pub wants_surface: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Welcome {
    pub unit: UnitId,
    pub session: String,
    pub snapshot: SharedState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topics {
    pub topics: Vec<TopicPattern>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TouchPhase {
    Down,
    Move,
    Up,
}

/// Touch in control-local coordinates, both axes normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Touch {
    pub surface: String,
    pub control: String,
    pub phase: TouchPhase,
    pub x: f64,
    pub y: f64,
}

/// Acceleration in m/s² and rotation rate in deg/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Motion {
    pub ax: f64,
    pub ay: f64,
    pub az: f64,
    pub rot_alpha: f64,
    pub rot_beta: f64,
    pub rot_gamma: f64,
}

/// Device orientation in degrees: alpha in `[0, 360)`, beta in `[-180, 180]`,
/// gamma in `[-90, 90]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Orientation {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

/// New value for a control. `control` is the surface-qualified key,
/// e.g. `zombitronica/vol0` or `zombitronica/lead/x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlChange {
    pub control: String,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeqCellSet {
    pub instrument: u32,
    pub step: u32,
    pub on: bool,
    #[serde(default)]
    pub note: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportSet {
    #[serde(default)]
    pub bpm: Option<f64>,
    #[serde(default)]
    pub playing: Option<bool>,
}

/// Step boundary announced by the hub's transport clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tick {
    pub step: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ping {
    pub nonce: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pong {
    pub nonce: u64,
    pub hub_ts_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBody {
    pub code: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Hello(Hello),
    Welcome(Box<Welcome>),
    Subscribe(Topics),
    Unsubscribe(Topics),
    Touch(Touch),
    Motion(Motion),
    Orientation(Orientation),
    ControlChange(ControlChange),
    SeqCellSet(SeqCellSet),
    TransportSet(TransportSet),
    Tick(Tick),
    Ping(Ping),
    Pong(Pong),
    Error(ErrorBody),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Kind {
    Hello,
    Welcome,
    Subscribe,
    Unsubscribe,
    Touch,
    Motion,
    Orientation,
    ControlChange,
    SeqCellSet,
    TransportSet,
    Tick,
    Ping,
    Pong,
    Error,
}

impl Kind {
    pub const ALL: [Kind; 14] = [
        Kind::Hello,
        Kind::Welcome,
        Kind::Subscribe,
        Kind::Unsubscribe,
        Kind::Touch,
        Kind::Motion,
        Kind::Orientation,
        Kind::ControlChange,
        Kind::SeqCellSet,
        Kind::TransportSet,
        Kind::Tick,
        Kind::Ping,
        Kind::Pong,
        Kind::Error,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Hello => "hello",
            Kind::Welcome => "welcome",
            Kind::Subscribe => "subscribe",
            Kind::Unsubscribe => "unsubscribe",
            Kind::Touch => "touch",
            Kind::Motion => "motion",
            Kind::Orientation => "orientation",
            Kind::ControlChange => "control",
            Kind::SeqCellSet => "seq",
            Kind::TransportSet => "transport",
            Kind::Tick => "tick",
            Kind::Ping => "ping",
            Kind::Pong => "pong",
            Kind::Error => "error",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Kind {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        Kind::ALL.into_iter().find(|k| k.as_str() == s).ok_or(())
    }
}

/// Whether a frame may be dropped under backpressure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficClass {
    Sensor,
    Control,
}

impl Payload {
    pub fn kind(&self) -> Kind {
        match self {
            Payload::Hello(_) => Kind::Hello,
            Payload::Welcome(_) => Kind::Welcome,
            Payload::Subscribe(_) => Kind::Subscribe,
            Payload::Unsubscribe(_) => Kind::Unsubscribe,
            Payload::Touch(_) => Kind::Touch,
            Payload::Motion(_) => Kind::Motion,
            Payload::Orientation(_) => Kind::Orientation,
            Payload::ControlChange(_) => Kind::ControlChange,
            Payload::SeqCellSet(_) => Kind::SeqCellSet,
            Payload::TransportSet(_) => Kind::TransportSet,
            Payload::Tick(_) => Kind::Tick,
            Payload::Ping(_) => Kind::Ping,
            Payload::Pong(_) => Kind::Pong,
            Payload::Error(_) => Kind::Error,
        }
    }

    pub fn traffic_class(&self) -> TrafficClass {
        match self {
            Payload::Motion(_) | Payload::Orientation(_) => TrafficClass::Sensor,
            _ => TrafficClass::Control,
        }
    }

    /// True for payloads that edit the shared session state.
    pub fn is_mutation(&self) -> bool {
        matches!(
            self,
            Payload::ControlChange(_) | Payload::SeqCellSet(_) | Payload::TransportSet(_)
        )
    }

    /// Checks the value-level invariants that do not depend on session layout.
    pub fn validate(&self) -> Result<(), String> {
        match self {
            Payload::Hello(h) => {
                if h.roles.is_empty() {
                    return Err("hello must declare at least one role".into());
                }
                if let Some(s) = &h.wants_surface {
                    check_name("wants_surface", s)?;
                }
                Ok(())
            }
            Payload::Welcome(w) => {
                if w.session.is_empty() {
                    return Err("empty session token".into());
                }
                w.snapshot.check().map_err(|e| e.to_string())
            }
            Payload::Subscribe(t) | Payload::Unsubscribe(t) => {
                if t.topics.is_empty() {
                    Err("topic list is empty".into())
                } else {
                    Ok(())
                }
            }
            Payload::Touch(t) => {
                check_name("surface", &t.surface)?;
                check_name("control", &t.control)?;
                unit_interval("x", t.x)?;
                unit_interval("y", t.y)
            }
            Payload::Motion(m) => {
                for (name, v) in [
                    ("ax", m.ax),
                    ("ay", m.ay),
                    ("az", m.az),
                    ("rot_alpha", m.rot_alpha),
                    ("rot_beta", m.rot_beta),
                    ("rot_gamma", m.rot_gamma),
                ] {
                    finite(name, v)?;
                }
                Ok(())
            }
            Payload::Orientation(o) => {
                finite("alpha", o.alpha)?;
                if !(0.0..360.0).contains(&o.alpha) {
                    return Err(format!("alpha {} outside [0, 360)", o.alpha));
                }
                within("beta", o.beta, -180.0, 180.0)?;
                within("gamma", o.gamma, -90.0, 90.0)
            }
            Payload::ControlChange(c) => {
                check_control_key(&c.control)?;
                unit_interval("value", c.value)
            }
            Payload::SeqCellSet(s) => match s.note {
                Some(n) if n > MAX_NOTE => Err(format!("note {n} outside [0, {MAX_NOTE}]")),
                _ => Ok(()),
            },
            Payload::TransportSet(t) => match t.bpm {
                Some(b) => finite("bpm", b),
                None => Ok(()),
            },
            Payload::Error(e) => {
                if e.code.is_empty() {
                    Err("empty error code".into())
                } else {
                    Ok(())
                }
            }
            Payload::Tick(_) | Payload::Ping(_) | Payload::Pong(_) => Ok(()),
        }
    }
}

fn finite(name: &str, v: f64) -> Result<(), String> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(format!("{name} is not finite"))
    }
}

fn within(name: &str, v: f64, lo: f64, hi: f64) -> Result<(), String> {
    finite(name, v)?;
    if (lo..=hi).contains(&v) {
        Ok(())
    } else {
        Err(format!("{name} {v} outside [{lo}, {hi}]"))
    }
}

fn unit_interval(name: &str, v: f64) -> Result<(), String> {
    within(name, v, 0.0, 1.0)
}

/// Surface and control ids are single topic segments made of `[A-Za-z0-9_-]`.
pub fn is_valid_name(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 64
        && s
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

fn check_name(what: &str, s: &str) -> Result<(), String> {
    if is_valid_name(s) {
        Ok(())
    } else {
        Err(format!("{what} {s:?} is not a valid name"))
    }
}

/// A control key is one or more `/`-separated names.
pub fn check_control_key(key: &str) -> Result<(), String> {
    if key.split('/').all(is_valid_name) {
        Ok(())
    } else {
        Err(format!("control key {key:?} is malformed"))
    }
}
