//! The hub's routing and state core.
//!
//! `HubCore` is a plain single-threaded state machine: the network layer (or
//! the virtual-time harness) feeds it connection events with a millisecond
//! timestamp and drains the resulting output queue. Every join, publish and
//! state mutation is therefore totally ordered by call order.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use super::config::SessionConfig;
use super::throttle::RateLimiter;
use crate::protocol::{
    decode_envelope, encode_envelope, missing_capabilities, Capability, CapabilityProfile,
    DecodeError, Envelope, ErrorBody, Hello, Payload, Ping, Pong, Role, SeqTracker, Tick, Topic,
    TopicPattern, TrafficClass, UnitId, Welcome,
};
use crate::surface::{
    Mutation, SessionLayout, SharedState, SpecError, StateError, SurfaceSpec, TransportClock,
};

pub type ConnId = u64;

/// Subscriptions every unit starts with, so that shared state mirrors stay
/// complete from the moment of the join.
pub const DEFAULT_SUBSCRIPTIONS: [&str; 2] = ["state/*", "control/*"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HubError {
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u64),
    #[error("session is full ({0} units)")]
    SessionFull(usize),
    #[error("the hub is the session's only server")]
    RoleConflict,
    #[error("expected a hello frame, got {0}")]
    NotHello(&'static str),
    #[error("unknown source {0}")]
    UnknownSource(String),
    #[error("invalid topic: {0}")]
    InvalidTopic(String),
    #[error(transparent)]
    State(#[from] StateError),
}

impl HubError {
    pub fn code(&self) -> &'static str {
        match self {
            HubError::UnsupportedVersion(_) => "unsupported-version",
            HubError::SessionFull(_) => "session-full",
            HubError::RoleConflict => "role-conflict",
            HubError::NotHello(_) => "expected-hello",
            HubError::UnknownSource(_) => "unknown-source",
            HubError::InvalidTopic(_) => "invalid-topic",
            HubError::State(e) => e.code(),
        }
    }
}

/// Work for the network layer, in the order it must be performed.
#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    Frame {
        conn: ConnId,
        frame: Arc<str>,
        class: TrafficClass,
    },
    /// Close after the frames queued before it have been sent.
    Close { conn: ConnId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DeliveryReport {
    pub delivered_to: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RttEstimate {
    pub unit: UnitId,
    pub rtt_ms: f64,
    pub sampled_at_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct HeartbeatReport {
    /// Round trips measured since the previous tick.
    pub rtts: Vec<RttEstimate>,
    pub evicted: Vec<UnitId>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct HubStats {
    pub units: usize,
    pub frames_in: u64,
    pub frames_out: u64,
    pub rejected_frames: u64,
    pub dropped_sensor: u64,
    pub evictions: u64,
    pub revision: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct UnitInfo {
    pub unit: UnitId,
    pub roles: BTreeSet<Role>,
    pub caps: CapabilityProfile,
    pub surface: Option<String>,
    pub subscriptions: BTreeSet<TopicPattern>,
    pub last_seen_ms: u64,
    pub rtt_ms: Option<f64>,
}

#[derive(Debug)]
struct UnitEntry {
    conn: ConnId,
    info: UnitInfo,
    pending_pings: HashMap<u64, u64>,
    throttle: RateLimiter,
}

pub struct HubCore {
    config: SessionConfig,
    surfaces: BTreeMap<String, SurfaceSpec>,
    session: String,
    state: SharedState,
    clock: Option<TransportClock>,
    next_fire_ms: Option<u64>,
    units: BTreeMap<UnitId, UnitEntry>,
    conns: HashMap<ConnId, UnitId>,
    inbound_seq: SeqTracker,
    hub_id: UnitId,
    hub_seq: u64,
    next_fresh: u64,
    next_nonce: u64,
    outputs: Vec<Output>,
    fresh_rtts: Vec<RttEstimate>,
    routed: Option<Vec<Arc<Envelope>>>,
    journal: Option<Vec<Mutation>>,
    stats: HubStats,
}

impl HubCore {
    pub fn new(config: SessionConfig) -> Result<Self, SpecError> {
        let layout = SessionLayout::from_surfaces(&config.surfaces)?;
        let mut rng = match config.seed {
            Some(s) => ChaCha8Rng::seed_from_u64(s),
            None => ChaCha8Rng::from_entropy(),
        };
        let session = format!("{:016x}", rng.gen::<u64>());
        let surfaces = config
            .surfaces
            .iter()
            .map(|s| (s.name.clone(), s.clone()))
            .collect();
        Ok(Self {
            surfaces,
            session,
            state: SharedState::new(&layout),
            clock: None,
            next_fire_ms: None,
            units: BTreeMap::new(),
            conns: HashMap::new(),
            inbound_seq: SeqTracker::new(),
            hub_id: UnitId::hub(),
            hub_seq: 0,
            next_fresh: 1,
            next_nonce: 1,
            outputs: Vec::new(),
            fresh_rtts: Vec::new(),
            routed: None,
            journal: None,
            stats: HubStats::default(),
            config,
        })
    }

    /// Starts collecting every routed envelope for [`HubCore::take_routed`].
    pub fn enable_feed(&mut self) {
        self.routed.get_or_insert_with(Vec::new);
    }

    /// Starts recording every applied mutation, in application order.
    pub fn enable_journal(&mut self) {
        self.journal.get_or_insert_with(Vec::new);
    }

    /// Mutations applied since [`HubCore::enable_journal`].
    pub fn journal(&self) -> &[Mutation] {
        self.journal.as_deref().unwrap_or_default()
    }

    pub fn session(&self) -> &str {
        &self.session
    }

    pub fn state(&self) -> &SharedState {
        &self.state
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &SurfaceSpec> {
        self.surfaces.values()
    }

    pub fn surface(&self, name: &str) -> Option<&SurfaceSpec> {
        self.surfaces.get(name)
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn stats(&self) -> HubStats {
        HubStats {
            units: self.units.len(),
            revision: self.state.revision,
            ..self.stats
        }
    }

    pub fn units(&self) -> impl Iterator<Item = &UnitInfo> {
        self.units.values().map(|u| &u.info)
    }

    pub fn unit(&self, id: &UnitId) -> Option<&UnitInfo> {
        self.units.get(id).map(|u| &u.info)
    }

    pub fn unit_for_conn(&self, conn: ConnId) -> Option<&UnitId> {
        self.conns.get(&conn)
    }

    pub fn take_outputs(&mut self) -> Vec<Output> {
        std::mem::take(&mut self.outputs)
    }

    pub fn take_routed(&mut self) -> Vec<Arc<Envelope>> {
        self.routed.as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn hub_envelope(&mut self, now_ms: u64, payload: Payload) -> Envelope {
        let seq = self.hub_seq;
        self.hub_seq += 1;
        Envelope::new(self.hub_id.clone(), seq, now_ms, payload)
    }

    fn emit(&mut self, conn: ConnId, frame: Arc<str>, class: TrafficClass) {
        self.stats.frames_out += 1;
        self.outputs.push(Output::Frame { conn, frame, class });
    }

    fn send_hub(&mut self, conn: ConnId, now_ms: u64, payload: Payload) {
        let env = self.hub_envelope(now_ms, payload);
        let frame = encode_envelope(&env).expect("hub frames are valid");
        self.emit(conn, frame.into(), TrafficClass::Control);
    }

    fn send_error(&mut self, conn: ConnId, now_ms: u64, code: &str, detail: String) {
        self.stats.rejected_frames += 1;
        self.send_hub(
            conn,
            now_ms,
            Payload::Error(ErrorBody {
                code: code.to_owned(),
                detail,
            }),
        );
    }

    fn close(&mut self, conn: ConnId) {
        if let Some(unit) = self.conns.remove(&conn) {
            self.units.remove(&unit);
            self.inbound_seq.forget(&unit);
        }
        self.outputs.push(Output::Close { conn });
    }

    /// The transport dropped `conn`.
    pub fn on_disconnect(&mut self, conn: ConnId) {
        if let Some(unit) = self.conns.remove(&conn) {
            self.units.remove(&unit);
            self.inbound_seq.forget(&unit);
        }
    }

    /// Binary messages are accepted when they hold UTF-8 text.
    pub fn on_binary(&mut self, conn: ConnId, bytes: &[u8], now_ms: u64) {
        match std::str::from_utf8(bytes) {
            Ok(text) => self.on_frame(conn, text, now_ms),
            Err(e) => {
                self.stats.frames_in += 1;
                let err = DecodeError::MalformedFrame(format!("frame is not UTF-8: {e}"));
                self.send_error(conn, now_ms, err.code(), err.to_string());
                if !self.conns.contains_key(&conn) {
                    self.close(conn);
                }
            }
        }
    }

    /// Entry point for one text frame received on `conn`.
    pub fn on_frame(&mut self, conn: ConnId, text: &str, now_ms: u64) {
        self.stats.frames_in += 1;
        let admitted = self.conns.get(&conn).cloned();
        let env = match decode_envelope(text) {
            Ok(env) => env,
            Err(e) => {
                self.send_error(conn, now_ms, e.code(), e.to_string());
                if admitted.is_none() || matches!(e, DecodeError::UnsupportedVersion(_)) {
                    self.close(conn);
                }
                return;
            }
        };
        let Some(unit) = admitted else {
            match self.admit(conn, &env, now_ms) {
                Ok(_) => {}
                Err(e) => {
                    self.send_error(conn, now_ms, e.code(), e.to_string());
                    self.close(conn);
                }
            }
            return;
        };
        if env.source != unit {
            self.send_error(
                conn,
                now_ms,
                "source-mismatch",
                format!("frame claims source {} on the connection of {unit}", env.source),
            );
            return;
        }
        if let Err(v) = self.inbound_seq.observe(&unit, env.seq) {
            self.send_error(conn, now_ms, "seq-violation", v.to_string());
            return;
        }
        if let Some(u) = self.units.get_mut(&unit) {
            u.info.last_seen_ms = u.info.last_seen_ms.max(now_ms);
        }
        self.dispatch(conn, unit, env, now_ms);
    }

    fn dispatch(&mut self, conn: ConnId, unit: UnitId, env: Envelope, now_ms: u64) {
        match &env.payload {
            Payload::Subscribe(t) => {
                let entry = self.units.get_mut(&unit).expect("admitted unit");
                entry.info.subscriptions.extend(t.topics.iter().cloned());
            }
            Payload::Unsubscribe(t) => {
                let entry = self.units.get_mut(&unit).expect("admitted unit");
                for p in &t.topics {
                    entry.info.subscriptions.remove(p);
                }
            }
            Payload::Ping(p) => {
                let nonce = p.nonce;
                self.send_hub(conn, now_ms, Payload::Pong(Pong { nonce, hub_ts_ms: now_ms }));
            }
            Payload::Pong(p) => self.record_pong(&unit, p.nonce, now_ms),
            Payload::Touch(_)
            | Payload::Motion(_)
            | Payload::Orientation(_)
            | Payload::ControlChange(_)
            | Payload::SeqCellSet(_)
            | Payload::TransportSet(_) => {
                let topic = env.topic().ok_or_else(|| {
                    HubError::InvalidTopic(format!("no topic for source {}", env.source))
                });
                let result = topic.and_then(|t| self.publish(&unit, &t, env, now_ms));
                if let Err(e) = result {
                    self.send_error(conn, now_ms, e.code(), e.to_string());
                }
            }
            Payload::Hello(_) | Payload::Welcome(_) | Payload::Tick(_) | Payload::Error(_) => {
                let kind = env.kind();
                self.send_error(
                    conn,
                    now_ms,
                    "unexpected-kind",
                    format!("{kind} frames are not accepted from units"),
                );
            }
        }
    }

    fn usable_requested_id(&self, id: &UnitId) -> bool {
        !id.is_anonymous()
            && *id != self.hub_id
            && !id.as_str().contains(['/', '*'])
            && !self.units.contains_key(id)
    }

    fn fresh_id(&mut self) -> UnitId {
        loop {
            let id = UnitId::new(format!("u{}", self.next_fresh)).expect("generated ids are valid");
            self.next_fresh += 1;
            if !self.units.contains_key(&id) {
                return id;
            }
        }
    }

    /// Registers the unit greeting on `conn` and queues its Welcome.
    pub fn admit(&mut self, conn: ConnId, hello: &Envelope, now_ms: u64) -> Result<Envelope, HubError> {
        if u64::from(hello.version) != u64::from(crate::protocol::PROTOCOL_VERSION) {
            return Err(HubError::UnsupportedVersion(hello.version.into()));
        }
        let Payload::Hello(Hello {
            roles,
            caps,
            wants_surface,
        }) = &hello.payload
        else {
            return Err(HubError::NotHello(hello.kind().as_str()));
        };
        if roles.contains(&Role::Server) {
            return Err(HubError::RoleConflict);
        }
        if self.units.len() >= self.config.max_units {
            return Err(HubError::SessionFull(self.config.max_units));
        }
        let unit = if self.usable_requested_id(&hello.source) {
            hello.source.clone()
        } else {
            self.fresh_id()
        };
        let subscriptions = DEFAULT_SUBSCRIPTIONS
            .iter()
            .map(|p| TopicPattern::new(*p).expect("static patterns are valid"))
            .collect();
        self.units.insert(
            unit.clone(),
            UnitEntry {
                conn,
                info: UnitInfo {
                    unit: unit.clone(),
                    roles: roles.clone(),
                    caps: *caps,
                    surface: wants_surface.clone(),
                    subscriptions,
                    last_seen_ms: now_ms,
                    rtt_ms: None,
                },
                pending_pings: HashMap::new(),
                throttle: RateLimiter::new(self.config.sensor_rate_per_s, now_ms),
            },
        );
        self.conns.insert(conn, unit.clone());
        let _ = self.inbound_seq.observe(&unit, hello.seq);

        let welcome = self.hub_envelope(
            now_ms,
            Payload::Welcome(Box::new(Welcome {
                unit: unit.clone(),
                session: self.session.clone(),
                snapshot: self.state.clone(),
            })),
        );
        let frame = encode_envelope(&welcome).expect("welcome is valid");
        self.emit(conn, frame.into(), TrafficClass::Control);

        if let Some(name) = wants_surface {
            match self.check_surface(caps, name) {
                Ok(()) => {}
                Err((code, detail)) => self.send_error(conn, now_ms, code, detail),
            }
        }
        Ok(welcome)
    }

    fn check_surface(&self, caps: &CapabilityProfile, name: &str) -> Result<(), (&'static str, String)> {
        let Some(spec) = self.surfaces.get(name) else {
            return Err(("unknown-surface", format!("no surface named {name}")));
        };
        missing_capabilities(caps, spec.requires()).map_err(|missing: Vec<Capability>| {
            let names: Vec<String> = missing.iter().map(|c| c.to_string()).collect();
            ("missing-capabilities", names.join(","))
        })
    }

    /// Routes `env` from `source` on `topic`: state mutations are applied
    /// first, then one copy goes to every other unit with a matching
    /// subscription.
    pub fn publish(
        &mut self,
        source: &UnitId,
        topic: &Topic,
        env: Envelope,
        now_ms: u64,
    ) -> Result<DeliveryReport, HubError> {
        let class = env.payload.traffic_class();
        let entry = self
            .units
            .get_mut(source)
            .ok_or_else(|| HubError::UnknownSource(source.to_string()))?;
        if class == TrafficClass::Sensor && !entry.throttle.allow(now_ms) {
            self.stats.dropped_sensor += 1;
            return Ok(DeliveryReport { delivered_to: 0 });
        }
        if let Some(m) = Mutation::from_payload(&env.payload) {
            self.state.apply(&m)?;
            if let Mutation::Transport(_) = m {
                self.sync_clock(now_ms);
            }
            if let Some(j) = &mut self.journal {
                j.push(m);
            }
        }
        let frame: Arc<str> = encode_envelope(&env)
            .map_err(|e| HubError::InvalidTopic(e.to_string()))?
            .into();
        let targets: Vec<ConnId> = self
            .units
            .iter()
            .filter(|(id, u)| {
                *id != source && u.info.subscriptions.iter().any(|p| p.matches(topic))
            })
            .map(|(_, u)| u.conn)
            .collect();
        for conn in &targets {
            self.emit(*conn, Arc::clone(&frame), class);
        }
        if let Some(feed) = &mut self.routed {
            feed.push(Arc::new(env));
        }
        Ok(DeliveryReport {
            delivered_to: targets.len(),
        })
    }

    fn record_pong(&mut self, unit: &UnitId, nonce: u64, now_ms: u64) {
        let Some(entry) = self.units.get_mut(unit) else {
            return;
        };
        if let Some(sent) = entry.pending_pings.remove(&nonce) {
            let rtt = now_ms.saturating_sub(sent) as f64;
            entry.info.rtt_ms = Some(rtt);
            self.fresh_rtts.push(RttEstimate {
                unit: unit.clone(),
                rtt_ms: rtt,
                sampled_at_ms: now_ms,
            });
        }
    }

    /// Evicts units silent for longer than the idle timeout, then pings the rest.
    pub fn heartbeat_tick(&mut self, now_ms: u64) -> HeartbeatReport {
        let timeout = self.config.idle_timeout_ms;
        let stale: Vec<(UnitId, ConnId)> = self
            .units
            .values()
            .filter(|u| now_ms.saturating_sub(u.info.last_seen_ms) > timeout)
            .map(|u| (u.info.unit.clone(), u.conn))
            .collect();
        for (_, conn) in &stale {
            self.stats.evictions += 1;
            self.close(*conn);
        }

        let targets: Vec<(UnitId, ConnId)> = self
            .units
            .values()
            .map(|u| (u.info.unit.clone(), u.conn))
            .collect();
        for (unit, conn) in targets {
            let nonce = self.next_nonce;
            self.next_nonce += 1;
            if let Some(entry) = self.units.get_mut(&unit) {
                entry
                    .pending_pings
                    .retain(|_, sent| now_ms.saturating_sub(*sent) <= timeout);
                entry.pending_pings.insert(nonce, now_ms);
            }
            self.send_hub(conn, now_ms, Payload::Ping(Ping { nonce }));
        }
        HeartbeatReport {
            rtts: std::mem::take(&mut self.fresh_rtts),
            evicted: stale.into_iter().map(|(u, _)| u).collect(),
        }
    }

    fn sync_clock(&mut self, now_ms: u64) {
        let t = self.state.transport;
        match (&mut self.clock, t.playing) {
            (_, false) => {
                self.clock = None;
                self.next_fire_ms = None;
            }
            (Some(clock), true) => {
                if clock.milli_bpm() != (t.bpm * 1000.0).round() as u64 {
                    clock.retempo(now_ms, t.bpm).expect("state bpm is clamped");
                }
                self.next_fire_ms = Some(clock.step_at(now_ms).next_fire_ms);
            }
            (None, true) => {
                let clock = TransportClock::new(
                    t.bpm,
                    self.config.steps_per_beat,
                    self.state.grid.steps,
                    now_ms,
                    t.step,
                )
                .expect("state transport is valid");
                self.next_fire_ms = Some(clock.step_at(now_ms).next_fire_ms);
                self.clock = Some(clock);
            }
        }
    }

    /// When the next step tick is due, if the transport is playing.
    pub fn clock_deadline(&self) -> Option<u64> {
        self.next_fire_ms
    }

    /// Advances the transport to `now_ms` and announces a new step on
    /// `state/transport`.
    pub fn clock_tick(&mut self, now_ms: u64) -> Option<u32> {
        let due = self.next_fire_ms?;
        if now_ms < due {
            return None;
        }
        let pos = self.clock.as_ref()?.step_at(now_ms);
        self.next_fire_ms = Some(pos.next_fire_ms);
        self.state.transport.step = pos.step;
        let env = self.hub_envelope(now_ms, Payload::Tick(Tick { step: pos.step }));
        let topic = env.topic().expect("ticks have a topic");
        let frame: Arc<str> = encode_envelope(&env).expect("tick is valid").into();
        let targets: Vec<ConnId> = self
            .units
            .values()
            .filter(|u| u.info.subscriptions.iter().any(|p| p.matches(&topic)))
            .map(|u| u.conn)
            .collect();
        for conn in targets {
            self.emit(conn, Arc::clone(&frame), TrafficClass::Control);
        }
        if let Some(feed) = &mut self.routed {
            feed.push(Arc::new(env));
        }
        Some(pos.step)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{ControlChange, Motion, ScriptBaseline, SeqCellSet, Topics, TransportSet};
    use crate::surface::bundled_spec;

    fn core(max_units: usize) -> HubCore {
        HubCore::new(SessionConfig {
            max_units,
            seed: Some(1),
            ..SessionConfig::default()
        })
        .unwrap()
    }

    fn hello_frame(id: &str, gyro: bool, surface: Option<&str>) -> String {
        encode_envelope(&Envelope::new(
            UnitId::new(id).unwrap(),
            0,
            0,
            Payload::Hello(Hello {
                roles: [Role::Client].into(),
                caps: CapabilityProfile {
                    gyroscope: gyro,
                    script_baseline: ScriptBaseline::Es5,
                    ..CapabilityProfile::full()
                },
                wants_surface: surface.map(str::to_owned),
            }),
        ))
        .unwrap()
    }

    fn frame(id: &str, seq: u64, p: Payload) -> String {
        encode_envelope(&Envelope::new(UnitId::new(id).unwrap(), seq, 0, p)).unwrap()
    }

    fn decoded(outputs: &[Output], conn: ConnId) -> Vec<Envelope> {
        outputs
            .iter()
            .filter_map(|o| match o {
                Output::Frame { conn: c, frame, .. } if *c == conn => Some(decode_envelope(frame).unwrap()),
                _ => None,
            })
            .collect()
    }

    fn join(core: &mut HubCore, conn: ConnId, id: &str) -> UnitId {
        core.on_frame(conn, &hello_frame(id, true, None), 0);
        let out = core.take_outputs();
        match &decoded(&out, conn)[0].payload {
            Payload::Welcome(w) => w.unit.clone(),
            other => panic!("expected welcome, got {other:?}"),
        }
    }

    fn motion() -> Payload {
        Payload::Motion(Motion {
            ax: 0.0,
            ay: 0.0,
            az: 9.81,
            rot_alpha: 0.0,
            rot_beta: 0.0,
            rot_gamma: 0.0,
        })
    }

    fn subscribe(core: &mut HubCore, conn: ConnId, id: &str, seq: u64, pattern: &str) {
        core.on_frame(
            conn,
            &frame(
                id,
                seq,
                Payload::Subscribe(Topics {
                    topics: vec![TopicPattern::new(pattern).unwrap()],
                }),
            ),
            0,
        );
    }

    #[test]
    fn first_hello_gets_initial_snapshot() {
        let mut c = core(32);
        let initial = c.state().clone();
        c.on_frame(1, &hello_frame("phone", true, None), 0);
        let out = decoded(&c.take_outputs(), 1);
        assert_eq!(out.len(), 1);
        let Payload::Welcome(w) = &out[0].payload else { panic!() };
        assert_eq!(w.unit.as_str(), "phone");
        assert_eq!(w.snapshot, initial);
        assert_eq!(w.session, c.session());
    }

    #[test]
    fn duplicate_id_gets_fresh_one() {
        let mut c = core(32);
        let a = join(&mut c, 1, "phone");
        let b = join(&mut c, 2, "phone");
        assert_ne!(a, b);
        assert_eq!(c.units().count(), 2);
        let anon = join(&mut c, 3, "?");
        assert!(!anon.is_anonymous());
        let hub = join(&mut c, 4, "hub");
        assert_ne!(hub.as_str(), "hub");
    }

    #[test]
    fn session_cap_enforced() {
        let mut c = core(32);
        for i in 0..32 {
            join(&mut c, i, &format!("p{i}"));
        }
        c.on_frame(99, &hello_frame("late", true, None), 0);
        let out = c.take_outputs();
        let errs = decoded(&out, 99);
        assert!(matches!(&errs[0].payload, Payload::Error(e) if e.code == "session-full"));
        assert_eq!(out.last(), Some(&Output::Close { conn: 99 }));
        assert_eq!(c.units().count(), 32);
    }

    #[test]
    fn version_mismatch_closes() {
        let mut c = core(32);
        c.on_frame(
            1,
            r#"{"v":2,"kind":"hello","src":"a","seq":0,"ts":0,"pl":{}}"#,
            0,
        );
        let out = c.take_outputs();
        assert!(matches!(&decoded(&out, 1)[0].payload, Payload::Error(e) if e.code == "unsupported-version"));
        assert_eq!(out.last(), Some(&Output::Close { conn: 1 }));
    }

    #[test]
    fn server_role_rejected() {
        let mut c = core(32);
        let hello = Envelope::new(
            UnitId::new("x").unwrap(),
            0,
            0,
            Payload::Hello(Hello {
                roles: [Role::Server, Role::Client].into(),
                caps: CapabilityProfile::full(),
                wants_surface: None,
            }),
        );
        assert_eq!(c.admit(1, &hello, 0), Err(HubError::RoleConflict));
    }

    #[test]
    fn fan_out_counts_and_no_echo() {
        let mut c = core(32);
        let p = join(&mut c, 1, "pub");
        for (conn, id) in [(2, "s1"), (3, "s2"), (4, "s3")] {
            join(&mut c, conn, id);
            subscribe(&mut c, conn, id, 1, "sensor/motion/*");
        }
        subscribe(&mut c, 1, "pub", 1, "sensor/motion/*");
        c.take_outputs();
        let env = Envelope::new(p.clone(), 2, 0, motion());
        let topic = env.topic().unwrap();
        let report = c.publish(&p, &topic, env, 0).unwrap();
        assert_eq!(report.delivered_to, 3);
        let out = c.take_outputs();
        assert!(decoded(&out, 1).is_empty(), "no echo to the source");
        for conn in 2..=4 {
            assert_eq!(decoded(&out, conn).len(), 1);
        }
    }

    #[test]
    fn publish_errors() {
        let mut c = core(32);
        let ghost = UnitId::new("ghost").unwrap();
        let env = Envelope::new(ghost.clone(), 0, 0, motion());
        let topic = env.topic().unwrap();
        assert!(matches!(c.publish(&ghost, &topic, env, 0), Err(HubError::UnknownSource(_))));
    }

    #[test]
    fn mutations_applied_before_fanout() {
        let mut c = core(32);
        join(&mut c, 1, "a");
        join(&mut c, 2, "b");
        c.on_frame(
            1,
            &frame(
                "a",
                1,
                Payload::SeqCellSet(SeqCellSet {
                    instrument: 2,
                    step: 5,
                    on: true,
                    note: Some(64),
                }),
            ),
            10,
        );
        assert!(c.state().grid.cell(2, 5).unwrap().on);
        assert_eq!(c.state().revision, 1);
        let out = c.take_outputs();
        assert_eq!(decoded(&out, 2).len(), 1, "default state subscription");
        // third unit's snapshot reflects the edit
        c.on_frame(3, &hello_frame("c", true, None), 20);
        let w = decoded(&c.take_outputs(), 3);
        let Payload::Welcome(w) = &w[0].payload else { panic!() };
        assert!(w.snapshot.grid.cell(2, 5).unwrap().on);
    }

    #[test]
    fn rejected_mutation_reports_error_to_source_only() {
        let mut c = core(32);
        join(&mut c, 1, "a");
        join(&mut c, 2, "b");
        c.on_frame(
            1,
            &frame(
                "a",
                1,
                Payload::ControlChange(ControlChange {
                    control: "zombitronica/nope".into(),
                    value: 0.3,
                }),
            ),
            0,
        );
        let out = c.take_outputs();
        assert!(decoded(&out, 2).is_empty());
        assert!(matches!(&decoded(&out, 1)[0].payload, Payload::Error(e) if e.code == "unknown-control"));
        assert_eq!(c.state().revision, 0);
    }

    #[test]
    fn seq_and_source_checks() {
        let mut c = core(32);
        join(&mut c, 1, "a");
        c.on_frame(1, &frame("a", 1, Payload::Ping(Ping { nonce: 1 })), 0);
        c.on_frame(1, &frame("a", 1, Payload::Ping(Ping { nonce: 2 })), 0);
        c.on_frame(1, &frame("b", 2, Payload::Ping(Ping { nonce: 3 })), 0);
        let out = decoded(&c.take_outputs(), 1);
        let codes: Vec<&str> = out
            .iter()
            .map(|e| match &e.payload {
                Payload::Pong(_) => "pong",
                Payload::Error(e) => e.code.as_str(),
                _ => "other",
            })
            .collect();
        assert_eq!(codes, ["pong", "seq-violation", "source-mismatch"]);
    }

    #[test]
    fn missing_capability_reported_after_welcome() {
        let mut c = core(32);
        c.on_frame(1, &hello_frame("old", false, Some("imu-probe")), 0);
        let out = decoded(&c.take_outputs(), 1);
        assert!(matches!(out[0].payload, Payload::Welcome(_)));
        assert!(matches!(&out[1].payload, Payload::Error(e) if e.code == "missing-capabilities" && e.detail == "gyroscope"));
        assert_eq!(c.units().count(), 1);
    }

    #[test]
    fn heartbeat_rtt_and_eviction() {
        let mut c = HubCore::new(SessionConfig {
            heartbeat_ms: 5000,
            idle_timeout_ms: 15000,
            seed: Some(2),
            ..SessionConfig::default()
        })
        .unwrap();
        join(&mut c, 1, "a");
        join(&mut c, 2, "b");
        subscribe(&mut c, 2, "b", 1, "sensor/motion/*");
        c.take_outputs();
        let hb = c.heartbeat_tick(1000);
        assert!(hb.rtts.is_empty() && hb.evicted.is_empty());
        let pings = decoded(&c.take_outputs(), 1);
        let Payload::Ping(Ping { nonce }) = pings[0].payload else { panic!() };
        c.on_frame(1, &frame("a", 1, Payload::Pong(Pong { nonce, hub_ts_ms: 0 })), 1008);
        // b stays silent from t=0; a was last seen at 1008
        assert!(c.heartbeat_tick(15000).evicted.is_empty());
        let hb = c.heartbeat_tick(15001);
        assert_eq!(hb.evicted, vec![UnitId::new("b").unwrap()]);
        assert_eq!(hb.rtts.len(), 0, "rtt was returned by the previous tick");
        let out = c.take_outputs();
        assert!(out.contains(&Output::Close { conn: 2 }));
        // evicted unit no longer counted
        let a = UnitId::new("a").unwrap();
        let env = Envelope::new(a.clone(), 5, 0, motion());
        let t = env.topic().unwrap();
        assert_eq!(c.publish(&a, &t, env, 15002).unwrap().delivered_to, 0);
        assert_eq!(c.unit(&a).unwrap().rtt_ms, Some(8.0));
    }

    #[test]
    fn heartbeat_returns_fresh_rtts() {
        let mut c = core(32);
        join(&mut c, 1, "a");
        c.take_outputs();
        c.heartbeat_tick(100);
        let Payload::Ping(Ping { nonce }) = decoded(&c.take_outputs(), 1)[0].payload else { panic!() };
        c.on_frame(1, &frame("a", 1, Payload::Pong(Pong { nonce, hub_ts_ms: 100 })), 108);
        let hb = c.heartbeat_tick(5100);
        assert_eq!(hb.rtts.len(), 1);
        assert_eq!(hb.rtts[0].rtt_ms, 8.0);
        assert_eq!(hb.rtts[0].sampled_at_ms, 108);
    }

    #[test]
    fn sensor_throttle_drops_excess() {
        let mut c = HubCore::new(SessionConfig {
            sensor_rate_per_s: 10,
            seed: Some(3),
            ..SessionConfig::default()
        })
        .unwrap();
        join(&mut c, 1, "a");
        join(&mut c, 2, "b");
        subscribe(&mut c, 2, "b", 1, "sensor/*");
        c.take_outputs();
        for seq in 1..=20 {
            c.on_frame(1, &frame("a", seq, motion()), 0);
        }
        assert_eq!(decoded(&c.take_outputs(), 2).len(), 10);
        assert_eq!(c.stats().dropped_sensor, 10);
        // control frames bypass the throttle
        for seq in 21..=40 {
            c.on_frame(
                1,
                &frame(
                    "a",
                    seq,
                    Payload::ControlChange(ControlChange {
                        control: "zombitronica/vol1".into(),
                        value: 0.5,
                    }),
                ),
                0,
            );
        }
        assert_eq!(decoded(&c.take_outputs(), 2).len(), 20);
    }

    #[test]
    fn transport_clock_ticks() {
        let mut c = core(32);
        join(&mut c, 1, "a");
        join(&mut c, 2, "b");
        c.take_outputs();
        assert_eq!(c.clock_deadline(), None);
        c.on_frame(
            1,
            &frame("a", 1, Payload::TransportSet(TransportSet { bpm: Some(120.0), playing: Some(true) })),
            1000,
        );
        assert_eq!(c.clock_deadline(), Some(1500));
        assert_eq!(c.clock_tick(1499), None);
        assert_eq!(c.clock_tick(1500), Some(1));
        assert_eq!(c.state().transport.step, 1);
        let ticks: Vec<_> = decoded(&c.take_outputs(), 1)
            .into_iter()
            .filter(|e| matches!(e.payload, Payload::Tick(_)))
            .collect();
        assert_eq!(ticks.len(), 1, "ticks go to every state subscriber, source included");
        // stop
        c.on_frame(
            1,
            &frame("a", 2, Payload::TransportSet(TransportSet { bpm: None, playing: Some(false) })),
            1600,
        );
        assert_eq!(c.clock_deadline(), None);
    }

    #[test]
    fn layout_follows_surfaces() {
        let c = HubCore::new(SessionConfig {
            surfaces: vec![bundled_spec("zombitronica").unwrap()],
            seed: Some(4),
            ..SessionConfig::default()
        })
        .unwrap();
        assert_eq!(c.state().controls.len(), 4 + 2 + 3);
        assert_eq!((c.state().grid.instruments, c.state().grid.steps), (4, 8));
    }
}
