//! A scripted unit, independent of how its frames travel.
//!
//! The virtual-time simulator and the real-socket runner both drive the same
//! [`ClientModel`]: they hand it received text frames and due script steps,
//! and carry whatever frames it returns.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scenario::{ClientSpec, PublishKind, Step};
use crate::hub::DEFAULT_SUBSCRIPTIONS;
use crate::protocol::{
    decode_envelope, encode_envelope, ControlChange, Envelope, ErrorBody, Hello, Motion,
    Orientation, Payload, Ping, Pong, Role, SeqCellSet, Topic, TopicPattern, Topics, Touch,
    TouchPhase, TrafficClass, TransportSet, UnitId, HUB_UNIT,
};
use crate::surface::{Mutation, SharedState, MAX_BPM, MIN_BPM};

#[derive(Debug, Clone, PartialEq)]
pub struct SentRecord {
    pub t_ms: u64,
    pub topic: Topic,
    pub class: TrafficClass,
}

/// A change of the set of topics the hub routes to this client, with the
/// interval during which the hub may have applied it.
#[derive(Debug, Clone, PartialEq)]
pub struct SubChange {
    pub lo_ms: u64,
    pub hi_ms: u64,
    pub change: SubOp,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SubOp {
    Add(Vec<TopicPattern>),
    Remove(Vec<TopicPattern>),
    /// The connection ended; nothing is routed to this client any more.
    Leave,
}

/// Everything a client observed during a run.
#[derive(Debug, Clone, Default)]
pub struct ClientLog {
    pub name: String,
    pub unit: Option<UnitId>,
    pub hello_ms: Option<u64>,
    pub welcomed_ms: Option<u64>,
    pub sent: Vec<SentRecord>,
    pub subs: Vec<SubChange>,
    /// Routed frames received, by source and topic.
    pub received: BTreeMap<(UnitId, Topic), u64>,
    pub frames_sent: u64,
    pub frames_received: u64,
    pub hub_frames: u64,
    pub mutations_sent: u64,
    pub rtts_ms: Vec<f64>,
    pub errors: Vec<ErrorBody>,
    pub ordering_violations: u64,
    pub duplicates: u64,
    pub echoes: u64,
    pub undecodable: u64,
    /// Script steps that fell outside the connected, non-silent window.
    pub skipped_steps: u64,
    pub disconnected: bool,
    /// The hub closed the connection after admitting the client.
    pub evicted: bool,
    /// The hub closed the connection without admitting the client.
    pub rejected: bool,
    pub mirror: Option<SharedState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Idle,
    Joining,
    Active,
    Closed,
}

pub struct ClientModel {
    spec: ClientSpec,
    phase: Phase,
    seq: u64,
    rng: ChaCha8Rng,
    last_seq: HashMap<UnitId, u64>,
    pending_pings: HashMap<u64, u64>,
    next_nonce: u64,
    silent_until: u64,
    held: Vec<Step>,
    log: ClientLog,
}

impl ClientModel {
    pub fn new(spec: ClientSpec, seed: u64) -> Self {
        let log = ClientLog {
            name: spec.name.clone(),
            ..ClientLog::default()
        };
        Self {
            spec,
            phase: Phase::Idle,
            seq: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            last_seq: HashMap::new(),
            pending_pings: HashMap::new(),
            next_nonce: 1,
            silent_until: 0,
            held: Vec::new(),
            log,
        }
    }

    pub fn spec(&self) -> &ClientSpec {
        &self.spec
    }

    pub fn log(&self) -> &ClientLog {
        &self.log
    }

    pub fn into_log(self) -> ClientLog {
        self.log
    }

    pub fn is_active(&self) -> bool {
        self.phase == Phase::Active
    }

    pub fn is_closed(&self) -> bool {
        self.phase == Phase::Closed
    }

    fn silent(&self, now_ms: u64) -> bool {
        now_ms < self.silent_until
    }

    fn ts(&self, now_ms: u64) -> u64 {
        (now_ms as i64 + self.spec.skew_ms).max(0) as u64
    }

    fn source(&self) -> UnitId {
        self.log
            .unit
            .clone()
            .unwrap_or_else(|| UnitId::new(self.spec.name.clone()).expect("scenario ids are valid"))
    }

    fn frame(&mut self, now_ms: u64, payload: Payload) -> String {
        let env = Envelope::new(self.source(), self.seq, self.ts(now_ms), payload);
        self.seq += 1;
        self.log.frames_sent += 1;
        if let Some(topic) = env.topic() {
            self.log.sent.push(SentRecord {
                t_ms: now_ms,
                topic,
                class: env.payload.traffic_class(),
            });
        }
        encode_envelope(&env).expect("scripted frames are valid")
    }

    /// The greeting that opens the connection.
    pub fn hello(&mut self, now_ms: u64) -> String {
        self.phase = Phase::Joining;
        self.log.hello_ms = Some(now_ms);
        let payload = Payload::Hello(Hello {
            roles: [Role::Client].into(),
            caps: self.spec.caps,
            wants_surface: self.spec.surface.clone(),
        });
        self.frame(now_ms, payload)
    }

    /// Handles one frame from the hub and returns the replies to send.
    pub fn receive(&mut self, text: &str, now_ms: u64) -> Vec<String> {
        if self.phase == Phase::Closed {
            return Vec::new();
        }
        self.log.frames_received += 1;
        let env = match decode_envelope(text) {
            Ok(e) => e,
            Err(_) => {
                self.log.undecodable += 1;
                return Vec::new();
            }
        };
        match self.last_seq.get(&env.source) {
            Some(&last) if env.seq == last => self.log.duplicates += 1,
            Some(&last) if env.seq < last => self.log.ordering_violations += 1,
            _ => {}
        }
        let last = self.last_seq.entry(env.source.clone()).or_insert(env.seq);
        *last = (*last).max(env.seq);

        let from_hub = env.source.as_str() == HUB_UNIT;
        if from_hub {
            self.log.hub_frames += 1;
        } else if Some(&env.source) == self.log.unit.as_ref() {
            self.log.echoes += 1;
        } else if let Some(topic) = env.topic() {
            *self.log.received.entry((env.source.clone(), topic)).or_default() += 1;
        }

        match env.payload {
            Payload::Welcome(w) if from_hub && self.phase == Phase::Joining => {
                self.phase = Phase::Active;
                self.log.welcomed_ms = Some(now_ms);
                self.log.unit = Some(w.unit.clone());
                self.log.mirror = Some(w.snapshot);
                let defaults = DEFAULT_SUBSCRIPTIONS
                    .iter()
                    .map(|p| TopicPattern::new(*p).expect("static patterns are valid"))
                    .collect();
                self.log.subs.push(SubChange {
                    lo_ms: self.log.hello_ms.unwrap_or(now_ms),
                    hi_ms: now_ms,
                    change: SubOp::Add(defaults),
                });
                let held = std::mem::take(&mut self.held);
                held.iter().flat_map(|s| self.step(s, now_ms)).collect()
            }
            Payload::Ping(Ping { nonce }) if from_hub => {
                if self.phase != Phase::Active || self.silent(now_ms) {
                    return Vec::new();
                }
                let ts = self.ts(now_ms);
                vec![self.frame(now_ms, Payload::Pong(Pong { nonce, hub_ts_ms: ts }))]
            }
            Payload::Pong(p) => {
                if let Some(sent) = self.pending_pings.remove(&p.nonce) {
                    self.log.rtts_ms.push(now_ms.saturating_sub(sent) as f64);
                }
                Vec::new()
            }
            Payload::Error(e) => {
                self.log.errors.push(e);
                Vec::new()
            }
            Payload::Tick(t) => {
                if let Some(m) = &mut self.log.mirror {
                    m.transport.step = t.step;
                }
                Vec::new()
            }
            ref p => {
                if let (Some(m), Some(mirror)) = (Mutation::from_payload(p), &mut self.log.mirror) {
                    // the hub applied it already, so it must apply here too
                    let _ = mirror.apply(&m);
                }
                Vec::new()
            }
        }
    }

    /// The hub (or the network) ended the connection.
    pub fn closed(&mut self, now_ms: u64) {
        match self.phase {
            Phase::Closed => return,
            Phase::Active => {
                self.log.evicted = !self.log.disconnected;
                self.log.subs.push(SubChange {
                    lo_ms: self.log.welcomed_ms.unwrap_or(0),
                    hi_ms: now_ms,
                    change: SubOp::Leave,
                });
            }
            Phase::Joining | Phase::Idle => self.log.rejected = true,
        }
        self.phase = Phase::Closed;
    }

    /// Sends a client ping for round-trip measurement.
    pub fn ping(&mut self, now_ms: u64) -> Option<String> {
        if self.phase != Phase::Active || self.silent(now_ms) {
            return None;
        }
        let nonce = self.next_nonce;
        self.next_nonce += 1;
        self.pending_pings.insert(nonce, now_ms);
        Some(self.frame(now_ms, Payload::Ping(Ping { nonce })))
    }

    /// Runs one script step. A `Disconnect` step returns no frames and
    /// leaves the model closed; the caller then drops the connection.
    /// Subscription changes scripted before the welcome arrives are held
    /// and sent right after it; other early steps are skipped.
    pub fn step(&mut self, step: &Step, now_ms: u64) -> Vec<String> {
        if self.phase == Phase::Joining && matches!(step, Step::Subscribe(_) | Step::Unsubscribe(_)) {
            self.held.push(step.clone());
            return Vec::new();
        }
        if self.phase != Phase::Active || self.silent(now_ms) {
            self.log.skipped_steps += 1;
            return Vec::new();
        }
        match step {
            Step::Subscribe(topics) => {
                self.log.subs.push(SubChange {
                    lo_ms: now_ms,
                    hi_ms: now_ms,
                    change: SubOp::Add(topics.clone()),
                });
                let p = Payload::Subscribe(Topics { topics: topics.clone() });
                vec![self.frame(now_ms, p)]
            }
            Step::Unsubscribe(topics) => {
                self.log.subs.push(SubChange {
                    lo_ms: now_ms,
                    hi_ms: now_ms,
                    change: SubOp::Remove(topics.clone()),
                });
                let p = Payload::Unsubscribe(Topics { topics: topics.clone() });
                vec![self.frame(now_ms, p)]
            }
            Step::Publish { kind, control } => match self.make_publish(*kind, control.as_deref()) {
                Some(p) => vec![self.send_payload(now_ms, p)],
                None => {
                    self.log.skipped_steps += 1;
                    Vec::new()
                }
            },
            Step::Mutate => match self.random_mutation() {
                Some(m) => vec![self.send_payload(now_ms, m.into_payload())],
                None => {
                    self.log.skipped_steps += 1;
                    Vec::new()
                }
            },
            Step::Silence(d) => {
                self.silent_until = now_ms + d;
                Vec::new()
            }
            Step::Disconnect => {
                self.log.disconnected = true;
                self.closed(now_ms);
                Vec::new()
            }
        }
    }

    fn send_payload(&mut self, now_ms: u64, p: Payload) -> String {
        if let Some(m) = Mutation::from_payload(&p) {
            self.log.mutations_sent += 1;
            if let Some(mirror) = &mut self.log.mirror {
                let _ = mirror.apply(&m);
            }
        }
        self.frame(now_ms, p)
    }

    fn make_publish(&mut self, kind: PublishKind, control: Option<&str>) -> Option<Payload> {
        let r = &mut self.rng;
        Some(match kind {
            PublishKind::Touch => Payload::Touch(Touch {
                surface: self.spec.surface.clone().unwrap_or_else(|| "free".into()),
                control: control.unwrap_or("pad").to_owned(),
                phase: [TouchPhase::Down, TouchPhase::Move, TouchPhase::Up][r.gen_range(0..3)],
                x: r.gen(),
                y: r.gen(),
            }),
            PublishKind::Motion => Payload::Motion(Motion {
                ax: r.gen_range(-20.0..20.0),
                ay: r.gen_range(-20.0..20.0),
                az: r.gen_range(-20.0..20.0),
                rot_alpha: r.gen_range(-500.0..500.0),
                rot_beta: r.gen_range(-500.0..500.0),
                rot_gamma: r.gen_range(-500.0..500.0),
            }),
            PublishKind::Orientation => Payload::Orientation(Orientation {
                alpha: r.gen_range(0.0..360.0),
                beta: r.gen_range(-180.0..=180.0),
                gamma: r.gen_range(-90.0..=90.0),
            }),
            PublishKind::Control => {
                let key = match control {
                    Some(k) => k.to_owned(),
                    None => self.random_control_key()?,
                };
                Payload::ControlChange(ControlChange {
                    control: key,
                    value: self.rng.gen(),
                })
            }
            PublishKind::Seq => Mutation::SeqCell(self.random_cell()?).into_payload(),
            PublishKind::Transport => Mutation::Transport(self.random_transport()).into_payload(),
        })
    }

    fn random_control_key(&mut self) -> Option<String> {
        let mirror = self.log.mirror.as_ref()?;
        if mirror.controls.is_empty() {
            return None;
        }
        let i = self.rng.gen_range(0..mirror.controls.len());
        mirror.controls.keys().nth(i).cloned()
    }

    fn random_cell(&mut self) -> Option<SeqCellSet> {
        let grid = &self.log.mirror.as_ref()?.grid;
        let (instruments, steps) = (grid.instruments, grid.steps);
        let r = &mut self.rng;
        Some(SeqCellSet {
            instrument: r.gen_range(0..instruments),
            step: r.gen_range(0..steps),
            on: r.gen(),
            note: r.gen_bool(0.7).then(|| r.gen_range(36..=84)),
        })
    }

    fn random_transport(&mut self) -> TransportSet {
        let r = &mut self.rng;
        TransportSet {
            // reaches a little past both limits to exercise clamping
            bpm: r.gen_bool(0.8).then(|| r.gen_range(MIN_BPM - 10.0..=MAX_BPM + 10.0)),
            playing: r.gen_bool(0.5).then(|| r.gen()),
        }
    }

    /// A random edit that is valid against this client's mirror.
    pub fn random_mutation(&mut self) -> Option<Mutation> {
        self.log.mirror.as_ref()?;
        let pick: f64 = self.rng.gen();
        if pick < 0.55 {
            if let Some(key) = self.random_control_key() {
                return Some(Mutation::Control(ControlChange {
                    control: key,
                    value: self.rng.gen(),
                }));
            }
        }
        if pick < 0.95 {
            return self.random_cell().map(Mutation::SeqCell);
        }
        Some(Mutation::Transport(self.random_transport()))
    }
}
