use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::spec::SessionLayout;
use crate::protocol::{ControlChange, Payload, SeqCellSet, TransportSet, MAX_NOTE};

pub const MIN_BPM: f64 = 20.0;
pub const MAX_BPM: f64 = 300.0;
pub const DEFAULT_BPM: f64 = 120.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StateError {
    #[error("cell ({instrument}, {step}) is outside the {instruments}x{steps} grid")]
    IndexOutOfRange {
        instrument: u32,
        step: u32,
        instruments: u32,
        steps: u32,
    },
    #[error("unknown control {0:?}")]
    UnknownControl(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("snapshot is inconsistent: {0}")]
    Inconsistent(String),
    #[error("snapshot is not valid JSON: {0}")]
    Parse(String),
}

impl StateError {
    pub fn code(&self) -> &'static str {
        match self {
            StateError::IndexOutOfRange { .. } => "index-out-of-range",
            StateError::UnknownControl(_) => "unknown-control",
            StateError::InvalidValue(_) => "invariant-violation",
            StateError::Inconsistent(_) | StateError::Parse(_) => "bad-snapshot",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub on: bool,
    pub note: Option<u8>,
}

/// `cells[instrument][step]`; dimensions are fixed for the session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub instruments: u32,
    pub steps: u32,
    pub cells: Vec<Vec<Cell>>,
}

impl Grid {
    pub fn new(instruments: u32, steps: u32) -> Self {
        Self {
            instruments,
            steps,
            cells: vec![vec![Cell::default(); steps as usize]; instruments as usize],
        }
    }

    pub fn cell(&self, instrument: u32, step: u32) -> Option<&Cell> {
        self.cells
            .get(instrument as usize)
            .and_then(|row| row.get(step as usize))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transport {
    pub bpm: f64,
    pub playing: bool,
    pub step: u32,
}

/// Authoritative session state held by the hub and mirrored by clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SharedState {
    pub grid: Grid,
    pub transport: Transport,
    pub controls: BTreeMap<String, f64>,
    pub revision: u64,
}

/// The payloads that edit shared state.
#[derive(Debug, Clone, PartialEq)]
pub enum Mutation {
    Control(ControlChange),
    SeqCell(SeqCellSet),
    Transport(TransportSet),
}

impl Mutation {
    pub fn into_payload(self) -> Payload {
        match self {
            Mutation::Control(c) => Payload::ControlChange(c),
            Mutation::SeqCell(s) => Payload::SeqCellSet(s),
            Mutation::Transport(t) => Payload::TransportSet(t),
        }
    }

    pub fn from_payload(p: &Payload) -> Option<Self> {
        match p {
            Payload::ControlChange(c) => Some(Mutation::Control(c.clone())),
            Payload::SeqCellSet(s) => Some(Mutation::SeqCell(*s)),
            Payload::TransportSet(t) => Some(Mutation::Transport(*t)),
            _ => None,
        }
    }
}

impl SharedState {
    pub fn new(layout: &SessionLayout) -> Self {
        Self {
            grid: Grid::new(layout.instruments, layout.steps),
            transport: Transport {
                bpm: DEFAULT_BPM,
                playing: false,
                step: 0,
            },
            controls: layout.controls.clone(),
            revision: 0,
        }
    }

    /// Applies `m` in place. On error the state is left untouched.
    pub fn apply(&mut self, m: &Mutation) -> Result<(), StateError> {
        match m {
            Mutation::Control(c) => {
                if !(0.0..=1.0).contains(&c.value) {
                    return Err(StateError::InvalidValue(format!(
                        "control value {} outside [0, 1]",
                        c.value
                    )));
                }
                let slot = self
                    .controls
                    .get_mut(&c.control)
                    .ok_or_else(|| StateError::UnknownControl(c.control.clone()))?;
                *slot = c.value;
            }
            Mutation::SeqCell(s) => {
                if let Some(n) = s.note {
                    if n > MAX_NOTE {
                        return Err(StateError::InvalidValue(format!("note {n}")));
                    }
                }
                let (instruments, steps) = (self.grid.instruments, self.grid.steps);
                let cell = self
                    .grid
                    .cells
                    .get_mut(s.instrument as usize)
                    .and_then(|row| row.get_mut(s.step as usize))
                    .ok_or(StateError::IndexOutOfRange {
                        instrument: s.instrument,
                        step: s.step,
                        instruments,
                        steps,
                    })?;
                *cell = Cell {
                    on: s.on,
                    note: s.note,
                };
            }
            Mutation::Transport(t) => {
                if let Some(bpm) = t.bpm {
                    if !bpm.is_finite() {
                        return Err(StateError::InvalidValue("bpm is not finite".into()));
                    }
                    self.transport.bpm = clamp_bpm(bpm);
                }
                if let Some(playing) = t.playing {
                    self.transport.playing = playing;
                }
            }
        }
        self.revision += 1;
        Ok(())
    }

    /// Layout-level consistency check used when loading a snapshot.
    pub fn check(&self) -> Result<(), StateError> {
        let bad = |s: String| Err(StateError::Inconsistent(s));
        let g = &self.grid;
        if g.instruments < 1 || g.steps < 1 {
            return bad("grid dimensions must be >= 1".into());
        }
        if g.cells.len() != g.instruments as usize
            || g.cells.iter().any(|r| r.len() != g.steps as usize)
        {
            return bad("cell matrix does not match declared dimensions".into());
        }
        if g.cells.iter().flatten().any(|c| c.note.is_some_and(|n| n > MAX_NOTE)) {
            return bad("note out of range".into());
        }
        if self.transport.step >= g.steps {
            return bad(format!("step {} outside [0, {})", self.transport.step, g.steps));
        }
        if !(MIN_BPM..=MAX_BPM).contains(&self.transport.bpm) {
            return bad(format!("bpm {} outside [{MIN_BPM}, {MAX_BPM}]", self.transport.bpm));
        }
        if let Some((k, v)) = self.controls.iter().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return bad(format!("control {k} has value {v}"));
        }
        Ok(())
    }
}

pub fn clamp_bpm(bpm: f64) -> f64 {
    bpm.clamp(MIN_BPM, MAX_BPM)
}

/// Pure form of [`SharedState::apply`]: the input is never modified.
pub fn apply_mutation(state: &SharedState, m: &Mutation) -> Result<SharedState, StateError> {
    let mut next = state.clone();
    next.apply(m)?;
    Ok(next)
}

/// Serializes a state losslessly. Identical states give identical bytes.
pub fn snapshot(state: &SharedState) -> String {
    serde_json::to_string(state).expect("shared state always serializes")
}

pub fn load_snapshot(text: &str) -> Result<SharedState, StateError> {
    let s: SharedState = serde_json::from_str(text).map_err(|e| StateError::Parse(e.to_string()))?;
    s.check()?;
    Ok(s)
}
