//! Scenario files: who joins when, what they publish, and how their links
//! misbehave.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hub::{
    load_surfaces, SessionConfig, DEFAULT_HEARTBEAT_MS, DEFAULT_IDLE_TIMEOUT_MS, DEFAULT_MAX_UNITS,
    DEFAULT_OUT_QUEUE, DEFAULT_SENSOR_RATE,
};
use crate::protocol::{CapabilityProfile, ScriptBaseline, TopicPattern, UnitId};
use crate::surface::{bundled_spec, SurfaceSpec};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("scenario is not valid TOML: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Deterministic discrete-event run against an in-memory hub.
    #[default]
    Virtual,
    /// Real websocket clients against a hub on the loopback interface.
    Real,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PublishKind {
    Touch,
    Motion,
    Orientation,
    Control,
    Seq,
    Transport,
}

impl PublishKind {
    pub fn is_sensor(self) -> bool {
        matches!(self, PublishKind::Motion | PublishKind::Orientation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "do", rename_all = "lowercase", deny_unknown_fields)]
pub enum Action {
    Subscribe {
        at_ms: u64,
        topics: Vec<TopicPattern>,
    },
    Unsubscribe {
        at_ms: u64,
        topics: Vec<TopicPattern>,
    },
    /// `count` frames, or `duration_ms * rate_hz / 1000` when `count` is absent.
    Publish {
        at_ms: u64,
        kind: PublishKind,
        rate_hz: f64,
        #[serde(default)]
        count: Option<u64>,
        #[serde(default)]
        duration_ms: Option<u64>,
        /// Control key for `control` frames or control id for `touch`
        /// frames; random when absent.
        #[serde(default)]
        control: Option<String>,
    },
    /// Random valid state edits (controls, sequencer cells, transport).
    Mutate {
        at_ms: u64,
        rate_hz: f64,
        count: u64,
    },
    /// Stops sending anything, heartbeat replies included.
    Silence { at_ms: u64, duration_ms: u64 },
    Disconnect { at_ms: u64 },
}

impl Action {
    pub fn at_ms(&self) -> u64 {
        match self {
            Action::Subscribe { at_ms, .. }
            | Action::Unsubscribe { at_ms, .. }
            | Action::Publish { at_ms, .. }
            | Action::Mutate { at_ms, .. }
            | Action::Silence { at_ms, .. }
            | Action::Disconnect { at_ms } => *at_ms,
        }
    }
}

/// One emission of a client's script, already placed in time.
#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Subscribe(Vec<TopicPattern>),
    Unsubscribe(Vec<TopicPattern>),
    Publish {
        kind: PublishKind,
        control: Option<String>,
    },
    Mutate,
    Silence(u64),
    Disconnect,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientSpec {
    pub name: String,
    pub caps: CapabilityProfile,
    pub surface: Option<String>,
    /// Extra one-way delay on this client's link, both directions.
    pub delay_ms: u64,
    /// Offset added to this client's timestamps.
    pub skew_ms: i64,
    pub join_ms: u64,
    pub actions: Vec<Action>,
}

impl ClientSpec {
    /// The client's script as timed steps, ordered by time then by
    /// position in the file.
    pub fn schedule(&self) -> Vec<(u64, Step)> {
        let mut out = Vec::new();
        for action in &self.actions {
            match action {
                Action::Subscribe { at_ms, topics } => out.push((*at_ms, Step::Subscribe(topics.clone()))),
                Action::Unsubscribe { at_ms, topics } => {
                    out.push((*at_ms, Step::Unsubscribe(topics.clone())))
                }
                Action::Publish {
                    at_ms,
                    kind,
                    rate_hz,
                    count,
                    duration_ms,
                    control,
                } => {
                    let n = count.unwrap_or_else(|| {
                        (duration_ms.unwrap_or(0) as f64 * rate_hz / 1000.0).floor() as u64
                    });
                    for k in 0..n {
                        let t = at_ms + spacing(k, *rate_hz);
                        out.push((
                            t,
                            Step::Publish {
                                kind: *kind,
                                control: control.clone(),
                            },
                        ));
                    }
                }
                Action::Mutate { at_ms, rate_hz, count } => {
                    for k in 0..*count {
                        out.push((at_ms + spacing(k, *rate_hz), Step::Mutate));
                    }
                }
                Action::Silence { at_ms, duration_ms } => out.push((*at_ms, Step::Silence(*duration_ms))),
                Action::Disconnect { at_ms } => out.push((*at_ms, Step::Disconnect)),
            }
        }
        out.sort_by_key(|(t, _)| *t);
        out
    }
}

fn spacing(k: u64, rate_hz: f64) -> u64 {
    (k as f64 * 1000.0 / rate_hz).floor() as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct TlsSettings {
    pub cert: PathBuf,
    pub key: PathBuf,
}

#[derive(Debug, Clone)]
pub struct HubSettings {
    pub heartbeat_ms: u64,
    pub idle_timeout_ms: u64,
    pub max_units: usize,
    pub sensor_rate_per_s: u32,
    pub steps_per_beat: u32,
    pub out_queue: usize,
    pub surfaces: Vec<SurfaceSpec>,
    /// External hub to drive in real mode; an in-process hub is started
    /// when absent.
    pub url: Option<String>,
    /// Certificate of the hub, pinned by real-mode clients.
    pub pin_cert: Option<PathBuf>,
    /// Serve the in-process hub over TLS with this pair (and pin its cert).
    pub tls: Option<TlsSettings>,
}

impl HubSettings {
    pub fn session_config(&self, seed: u64) -> SessionConfig {
        SessionConfig {
            surfaces: self.surfaces.clone(),
            heartbeat_ms: self.heartbeat_ms,
            idle_timeout_ms: self.idle_timeout_ms,
            max_units: self.max_units,
            sensor_rate_per_s: self.sensor_rate_per_s,
            steps_per_beat: self.steps_per_beat,
            seed: Some(seed),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub mode: Mode,
    pub seed: u64,
    pub duration_ms: u64,
    pub latency_ms: u64,
    pub jitter_ms: u64,
    /// Client-initiated ping period; 0 disables client RTT probes.
    pub ping_interval_ms: u64,
    /// Time after `duration_ms` during which in-flight frames still count.
    pub settle_ms: u64,
    /// Sensor frames may be dropped by the hub's throttle without failing
    /// the run.
    pub allow_sensor_loss: bool,
    pub hub: HubSettings,
    pub clients: Vec<ClientSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    #[serde(default)]
    mode: Mode,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    duration_ms: u64,
    #[serde(default)]
    latency_ms: u64,
    #[serde(default)]
    jitter_ms: u64,
    #[serde(default)]
    ping_interval_ms: u64,
    #[serde(default)]
    settle_ms: Option<u64>,
    #[serde(default)]
    allow_sensor_loss: bool,
    #[serde(default)]
    hub: RawHub,
    #[serde(default, rename = "client")]
    clients: Vec<RawClient>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawHub {
    heartbeat_ms: Option<u64>,
    idle_timeout_ms: Option<u64>,
    max_units: Option<usize>,
    sensor_rate_per_s: Option<u32>,
    steps_per_beat: Option<u32>,
    out_queue: Option<usize>,
    #[serde(default)]
    surfaces: Vec<String>,
    url: Option<String>,
    pin_cert: Option<PathBuf>,
    tls: Option<RawTls>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTls {
    cert: PathBuf,
    key: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClient {
    id: String,
    #[serde(default = "one")]
    count: u32,
    profile: Option<String>,
    caps: Option<CapabilityProfile>,
    surface: Option<String>,
    #[serde(default)]
    delay_ms: u64,
    #[serde(default)]
    skew_ms: i64,
    #[serde(default)]
    join_ms: u64,
    #[serde(default, rename = "action")]
    actions: Vec<Action>,
}

fn one() -> u32 {
    1
}

/// Named capability profiles modelled on a heterogeneous second-hand fleet.
pub fn profile(name: &str) -> Option<CapabilityProfile> {
    let legacy = CapabilityProfile {
        script_baseline: ScriptBaseline::Es5,
        ..CapabilityProfile::full()
    };
    Some(match name {
        "full" => CapabilityProfile::full(),
        "legacy" => legacy,
        "gyroless" => CapabilityProfile {
            gyroscope: false,
            ..legacy
        },
        "touch-only" => CapabilityProfile {
            accelerometer: false,
            gyroscope: false,
            secure_transport: false,
            ..legacy
        },
        "insecure" => CapabilityProfile {
            secure_transport: false,
            ..legacy
        },
        _ => return None,
    })
}

pub const PROFILES: [&str; 5] = ["full", "legacy", "gyroless", "touch-only", "insecure"];

pub fn parse_scenario(document: &str, base: &Path) -> Result<Scenario, ScenarioError> {
    let raw: RawScenario = toml::from_str(document).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    let invalid = |m: String| ScenarioError::Invalid(m);
    let at = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };

    let mut surface_paths = Vec::new();
    let mut surfaces = Vec::new();
    for s in raw.hub.surfaces {
        if s.ends_with(".toml") {
            surface_paths.push(at(PathBuf::from(s)));
        } else {
            surfaces.push(bundled_spec(&s).ok_or_else(|| invalid(format!("no bundled surface {s:?}")))?);
        }
    }
    if !surface_paths.is_empty() {
        surfaces.extend(load_surfaces(&surface_paths).map_err(|e| invalid(e.to_string()))?);
    }
    if surfaces.is_empty() {
        surfaces = load_surfaces(&[]).map_err(|e| invalid(e.to_string()))?;
    }
    let known: BTreeSet<&str> = surfaces.iter().map(|s| s.name.as_str()).collect();

    let hub = HubSettings {
        heartbeat_ms: raw.hub.heartbeat_ms.unwrap_or(DEFAULT_HEARTBEAT_MS),
        idle_timeout_ms: raw.hub.idle_timeout_ms.unwrap_or(DEFAULT_IDLE_TIMEOUT_MS),
        max_units: raw.hub.max_units.unwrap_or(DEFAULT_MAX_UNITS),
        sensor_rate_per_s: raw.hub.sensor_rate_per_s.unwrap_or(DEFAULT_SENSOR_RATE),
        steps_per_beat: raw.hub.steps_per_beat.unwrap_or(1),
        out_queue: raw.hub.out_queue.unwrap_or(DEFAULT_OUT_QUEUE),
        url: raw.hub.url,
        pin_cert: raw.hub.pin_cert.map(at),
        tls: raw.hub.tls.map(|t| TlsSettings {
            cert: at(t.cert),
            key: at(t.key),
        }),
        surfaces: surfaces.clone(),
    };
    hub.session_config(raw.seed)
        .validate()
        .map_err(|e| invalid(e.to_string()))?;

    let mut clients = Vec::new();
    let mut names = BTreeSet::new();
    for c in raw.clients {
        let caps = match (&c.profile, c.caps) {
            (Some(_), Some(_)) => return Err(invalid(format!("client {}: give profile or caps, not both", c.id))),
            (Some(p), None) => profile(p).ok_or_else(|| {
                invalid(format!("client {}: unknown profile {p:?} (known: {})", c.id, PROFILES.join(", ")))
            })?,
            (None, Some(caps)) => caps,
            (None, None) => CapabilityProfile::full(),
        };
        if let Some(s) = &c.surface {
            if !known.contains(s.as_str()) {
                return Err(invalid(format!("client {}: surface {s:?} is not loaded by the hub", c.id)));
            }
        }
        for a in &c.actions {
            match a {
                Action::Publish { rate_hz, count, duration_ms, .. } => {
                    if !(rate_hz.is_finite() && *rate_hz > 0.0) {
                        return Err(invalid(format!("client {}: rate_hz must be > 0", c.id)));
                    }
                    if count.is_none() && duration_ms.is_none() {
                        return Err(invalid(format!("client {}: publish needs count or duration_ms", c.id)));
                    }
                }
                Action::Mutate { rate_hz, .. } if !(rate_hz.is_finite() && *rate_hz > 0.0) => {
                    return Err(invalid(format!("client {}: rate_hz must be > 0", c.id)));
                }
                _ => {}
            }
        }
        if c.count == 0 {
            continue;
        }
        for i in 1..=c.count {
            let name = if c.count == 1 { c.id.clone() } else { format!("{}{i}", c.id) };
            let id = UnitId::new(name.clone()).map_err(|e| invalid(e.to_string()))?;
            if id.is_anonymous() || id.as_str() == crate::protocol::HUB_UNIT || name.contains(['/', '*']) {
                return Err(invalid(format!("client id {name:?} is reserved or contains '/' or '*'")));
            }
            if !names.insert(name.clone()) {
                return Err(invalid(format!("duplicate client id {name:?}")));
            }
            clients.push(ClientSpec {
                name,
                caps,
                surface: c.surface.clone(),
                delay_ms: c.delay_ms,
                skew_ms: c.skew_ms,
                join_ms: c.join_ms,
                actions: c.actions.clone(),
            });
        }
    }

    let latest = clients
        .iter()
        .flat_map(|c| c.schedule().last().map(|(t, _)| *t).into_iter().chain([c.join_ms]))
        .max()
        .unwrap_or(0);
    let duration_ms = if raw.duration_ms == 0 { latest + 1 } else { raw.duration_ms };
    let max_delay = clients.iter().map(|c| c.delay_ms).max().unwrap_or(0);
    Ok(Scenario {
        name: raw.name,
        mode: raw.mode,
        seed: raw.seed,
        duration_ms,
        latency_ms: raw.latency_ms,
        jitter_ms: raw.jitter_ms,
        ping_interval_ms: raw.ping_interval_ms,
        settle_ms: raw
            .settle_ms
            .unwrap_or(500 + 4 * (raw.latency_ms + raw.jitter_ms + max_delay)),
        allow_sensor_loss: raw.allow_sensor_loss,
        hub,
        clients,
    })
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Read {
        path: path.to_owned(),
        source,
    })?;
    parse_scenario(&text, path.parent().unwrap_or(Path::new(".")))
}
