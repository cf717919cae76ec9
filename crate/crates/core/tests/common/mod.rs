#![allow(dead_code)]

use proptest::collection::{btree_map, vec};
use proptest::option;
use proptest::prelude::*;

use zombihub_core::protocol::{
    CapabilityProfile, ControlChange, ErrorBody, Hello, Motion, Orientation, Payload, Ping, Pong,
    Role, ScriptBaseline, SeqCellSet, Tick, Topics, Touch, TouchPhase, TransportSet, Welcome,
};
use zombihub_core::surface::{Cell, Grid, Transport};
use zombihub_core::{Envelope, SharedState, TopicPattern, UnitId};

pub fn unit_id() -> impl Strategy<Value = UnitId> {
    "[!-~]{1,64}".prop_map(|s| UnitId::new(s).unwrap())
}

pub fn name() -> impl Strategy<Value = String> {
    "[A-Za-z0-9_-]{1,16}"
}

pub fn control_key() -> impl Strategy<Value = String> {
    vec(name(), 1..4).prop_map(|parts| parts.join("/"))
}

pub fn pattern() -> impl Strategy<Value = TopicPattern> {
    let segment = "[a-z0-9_.:é-]{1,8}";
    (vec(segment, 1..4), any::<bool>(), any::<bool>()).prop_map(|(segs, star, all)| {
        let path = if all && !star {
            "*".to_owned()
        } else if star {
            format!("{}/*", segs.join("/"))
        } else {
            segs.join("/")
        };
        TopicPattern::new(path).unwrap()
    })
}

/// Finite doubles drawn from the whole exponent range.
pub fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        -1e3..1e3f64,
        Just(0.0),
    ]
}

pub fn unit_value() -> impl Strategy<Value = f64> {
    prop_oneof![0.0..=1.0f64, Just(0.0), Just(1.0)]
}

pub fn caps() -> impl Strategy<Value = CapabilityProfile> {
    (any::<[bool; 4]>(), any::<bool>()).prop_map(|(b, es5)| CapabilityProfile {
        touch: b[0],
        accelerometer: b[1],
        gyroscope: b[2],
        secure_transport: b[3],
        script_baseline: if es5 {
            ScriptBaseline::Es5
        } else {
            ScriptBaseline::Es6plus
        },
    })
}

pub fn state() -> impl Strategy<Value = SharedState> {
    (1u32..5, 1u32..17).prop_flat_map(|(instruments, steps)| {
        let cell = (any::<bool>(), option::of(0u8..=127)).prop_map(|(on, note)| Cell { on, note });
        (
            vec(vec(cell, steps as usize), instruments as usize),
            20.0..=300.0f64,
            any::<bool>(),
            0..steps,
            btree_map(control_key(), unit_value(), 0..6),
            any::<u64>(),
        )
            .prop_map(move |(cells, bpm, playing, step, controls, revision)| SharedState {
                grid: Grid {
                    instruments,
                    steps,
                    cells,
                },
                transport: Transport { bpm, playing, step },
                controls,
                revision,
            })
    })
}

pub fn payload() -> impl Strategy<Value = Payload> {
    let roles = proptest::sample::subsequence(vec![Role::Hotspot, Role::Server, Role::Client], 1..=3)
        .prop_map(|r| r.into_iter().collect());
    let phase = prop_oneof![Just(TouchPhase::Down), Just(TouchPhase::Move), Just(TouchPhase::Up)];
    prop_oneof![
        (roles, caps(), option::of(name())).prop_map(|(roles, caps, wants_surface)| {
            Payload::Hello(Hello {
                roles,
                caps,
                wants_surface,
            })
        }),
        (unit_id(), "[a-f0-9]{1,16}", state()).prop_map(|(unit, session, snapshot)| {
            Payload::Welcome(Box::new(Welcome {
                unit,
                session,
                snapshot,
            }))
        }),
        vec(pattern(), 1..5).prop_map(|topics| Payload::Subscribe(Topics { topics })),
        vec(pattern(), 1..5).prop_map(|topics| Payload::Unsubscribe(Topics { topics })),
        (name(), name(), phase, unit_value(), unit_value()).prop_map(|(surface, control, phase, x, y)| {
            Payload::Touch(Touch {
                surface,
                control,
                phase,
                x,
                y,
            })
        }),
        [finite(), finite(), finite(), finite(), finite(), finite()].prop_map(|v| {
            Payload::Motion(Motion {
                ax: v[0],
                ay: v[1],
                az: v[2],
                rot_alpha: v[3],
                rot_beta: v[4],
                rot_gamma: v[5],
            })
        }),
        (0.0..360.0f64, -180.0..=180.0f64, -90.0..=90.0f64).prop_map(|(alpha, beta, gamma)| {
            Payload::Orientation(Orientation { alpha, beta, gamma })
        }),
        (control_key(), unit_value())
            .prop_map(|(control, value)| Payload::ControlChange(ControlChange { control, value })),
        (any::<u32>(), any::<u32>(), any::<bool>(), option::of(0u8..=127)).prop_map(
            |(instrument, step, on, note)| Payload::SeqCellSet(SeqCellSet {
                instrument,
                step,
                on,
                note,
            })
        ),
        (option::of(finite()), option::of(any::<bool>()))
            .prop_map(|(bpm, playing)| Payload::TransportSet(TransportSet { bpm, playing })),
        any::<u32>().prop_map(|step| Payload::Tick(Tick { step })),
        any::<u64>().prop_map(|nonce| Payload::Ping(Ping { nonce })),
        (any::<u64>(), any::<u64>()).prop_map(|(nonce, hub_ts_ms)| Payload::Pong(Pong { nonce, hub_ts_ms })),
        ("[a-z-]{1,24}", ".{0,40}").prop_map(|(code, detail)| Payload::Error(ErrorBody { code, detail })),
    ]
}

pub fn envelope() -> impl Strategy<Value = Envelope> {
    (unit_id(), any::<u64>(), any::<u64>(), payload())
        .prop_map(|(src, seq, ts, pl)| Envelope::new(src, seq, ts, pl))
}

pub fn fixture(name: &str) -> String {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Non-empty, non-comment lines of a fixture file.
pub fn fixture_lines(name: &str) -> Vec<String> {
    fixture(name)
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect()
}

pub fn workspace_root() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .unwrap()
}

/// Metronome advanced one millisecond at a time. Tempo is held in
/// millibeats per minute and the beat phase in exact integer units, so the
/// simulation accumulates no rounding error.
pub struct MetronomeSim {
    pub now_ms: u64,
    pub step: u32,
    pub steps: u32,
    rate: u64,
    phase: u64,
}

const STEP_PHASE: u64 = 60_000 * 1000;

impl MetronomeSim {
    pub fn new(bpm: f64, steps_per_beat: u32, steps: u32, start_ms: u64, start_step: u32) -> Self {
        Self {
            now_ms: start_ms,
            step: start_step,
            steps,
            rate: (bpm * 1000.0).round() as u64 * u64::from(steps_per_beat),
            phase: 0,
        }
    }

    pub fn tick(&mut self) {
        self.now_ms += 1;
        self.phase += self.rate;
        while self.phase >= STEP_PHASE {
            self.phase -= STEP_PHASE;
            self.step = (self.step + 1) % self.steps;
        }
    }

    /// New tempo from now on; the step playing now starts over at full length.
    pub fn set_tempo(&mut self, bpm: f64, steps_per_beat: u32) {
        self.rate = (bpm * 1000.0).round() as u64 * u64::from(steps_per_beat);
        self.phase = 0;
    }
}

/// Applies a mutation to a state held as untyped JSON, or returns `None`
/// when the hub would reject it.
pub fn replay_json(state: &mut serde_json::Value, m: &zombihub_core::surface::Mutation) -> Option<()> {
    use serde_json::{json, Value};
    use zombihub_core::surface::Mutation;
    match m {
        Mutation::Control(c) => {
            if !(c.value >= 0.0 && c.value <= 1.0) {
                return None;
            }
            let slot = state["controls"].get_mut(&c.control)?;
            *slot = json!(c.value);
        }
        Mutation::SeqCell(s) => {
            if s.note.is_some_and(|n| n > 127) {
                return None;
            }
            let cell = state["grid"]["cells"]
                .get_mut(s.instrument as usize)?
                .get_mut(s.step as usize)?;
            *cell = json!({ "on": s.on, "note": s.note });
        }
        Mutation::Transport(t) => {
            if let Some(bpm) = t.bpm {
                if !bpm.is_finite() {
                    return None;
                }
                state["transport"]["bpm"] = json!(bpm.clamp(20.0, 300.0));
            }
            if let Some(p) = t.playing {
                state["transport"]["playing"] = Value::Bool(p);
            }
        }
    }
    let rev = state["revision"].as_u64()?;
    state["revision"] = json!(rev + 1);
    Some(())
}

/// Serialization with object keys in sorted order, for byte comparison.
pub fn canonical<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_value(v).unwrap().to_string()
}
