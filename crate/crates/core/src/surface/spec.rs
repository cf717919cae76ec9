use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{is_valid_name, Capability};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecError {
    #[error("surface document is not valid TOML: {0}")]
    Parse(String),
    #[error("invalid name {0:?}: use 1-64 characters from [A-Za-z0-9_-]")]
    BadName(String),
    #[error("surface {0:?} has no controls")]
    Empty(String),
    #[error("duplicate control id {0:?}")]
    DuplicateControl(String),
    #[error("unknown control kind {kind:?} for control {id:?}")]
    UnknownKind { id: String, kind: String },
    #[error("control {id:?}: {detail}")]
    BadControl { id: String, detail: String },
    #[error("duplicate surface {0:?} in session")]
    DuplicateSurface(String),
    #[error("step sequencers disagree on step count: {0} vs {1}")]
    GridMismatch(u32, u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Alpha,
    Beta,
    Gamma,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Alpha => "alpha",
            Axis::Beta => "beta",
            Axis::Gamma => "gamma",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlKind {
    Slider {
        default: f64,
    },
    Pot {
        default: f64,
    },
    Xy,
    PadGrid {
        rows: u32,
        cols: u32,
    },
    StepSequencer {
        instruments: u32,
        steps: u32,
        /// Row of the session grid this sequencer's first instrument edits.
        first_instrument: u32,
    },
    Tilt {
        axes: BTreeSet<Axis>,
    },
}

impl ControlKind {
    pub fn name(&self) -> &'static str {
        match self {
            ControlKind::Slider { .. } => "slider",
            ControlKind::Pot { .. } => "pot",
            ControlKind::Xy => "xy",
            ControlKind::PadGrid { .. } => "pad_grid",
            ControlKind::StepSequencer { .. } => "step_sequencer",
            ControlKind::Tilt { .. } => "tilt",
        }
    }

    pub fn requires(&self) -> Capability {
        match self {
            ControlKind::Tilt { .. } => Capability::Gyroscope,
            _ => Capability::Touch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlSpec {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(flatten)]
    pub kind: ControlKind,
}

impl ControlSpec {
    /// Sub-axes carrying their own continuous value, if any.
    pub fn value_axes(&self) -> Vec<&'static str> {
        match &self.kind {
            ControlKind::Xy => vec!["x", "y"],
            ControlKind::Tilt { axes } => axes.iter().map(|a| a.as_str()).collect(),
            _ => Vec::new(),
        }
    }

    /// Initial value of each continuous value this control owns, keyed by
    /// sub-axis (`None` for single-valued controls).
    pub fn initial_values(&self) -> Vec<(Option<&'static str>, f64)> {
        match &self.kind {
            ControlKind::Slider { default } | ControlKind::Pot { default } => vec![(None, *default)],
            ControlKind::Xy | ControlKind::Tilt { .. } => {
                self.value_axes().into_iter().map(|a| (Some(a), 0.5)).collect()
            }
            ControlKind::PadGrid { .. } | ControlKind::StepSequencer { .. } => Vec::new(),
        }
    }
}

/// A validated control surface. `requires` is derived from the controls.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurfaceSpec {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub controls: Vec<ControlSpec>,
    requires: BTreeSet<Capability>,
}

impl SurfaceSpec {
    pub fn new(
        name: impl Into<String>,
        title: Option<String>,
        controls: Vec<ControlSpec>,
    ) -> Result<Self, SpecError> {
        let name = name.into();
        if !is_valid_name(&name) {
            return Err(SpecError::BadName(name));
        }
        if controls.is_empty() {
            return Err(SpecError::Empty(name));
        }
        let mut seen = BTreeSet::new();
        for c in &controls {
            if !is_valid_name(&c.id) {
                return Err(SpecError::BadName(c.id.clone()));
            }
            if !seen.insert(c.id.as_str()) {
                return Err(SpecError::DuplicateControl(c.id.clone()));
            }
            check_kind(&c.id, &c.kind)?;
        }
        let requires = controls.iter().map(|c| c.kind.requires()).collect();
        Ok(Self {
            name,
            title,
            controls,
            requires,
        })
    }

    pub fn requires(&self) -> &BTreeSet<Capability> {
        &self.requires
    }

    pub fn control(&self, id: &str) -> Option<&ControlSpec> {
        self.controls.iter().find(|c| c.id == id)
    }

    pub fn count_kind(&self, kind: &str) -> usize {
        self.controls.iter().filter(|c| c.kind.name() == kind).count()
    }
}

fn check_kind(id: &str, kind: &ControlKind) -> Result<(), SpecError> {
    let bad = |detail: &str| SpecError::BadControl {
        id: id.to_owned(),
        detail: detail.to_owned(),
    };
    match kind {
        ControlKind::Slider { default } | ControlKind::Pot { default } => {
            if !(0.0..=1.0).contains(default) {
                return Err(bad("default must lie in [0, 1]"));
            }
        }
        ControlKind::PadGrid { rows, cols } => {
            if *rows < 1 || *cols < 1 {
                return Err(bad("pad_grid needs rows >= 1 and cols >= 1"));
            }
        }
        ControlKind::StepSequencer {
            instruments, steps, ..
        } => {
            if *instruments < 1 || *steps < 1 {
                return Err(bad("step_sequencer needs instruments >= 1 and steps >= 1"));
            }
            if *steps > MAX_STEPS {
                return Err(bad("step_sequencer supports at most 64 steps"));
            }
        }
        ControlKind::Tilt { axes } => {
            if axes.is_empty() {
                return Err(bad("tilt needs at least one axis"));
            }
        }
        ControlKind::Xy => {}
    }
    Ok(())
}

pub const MAX_STEPS: u32 = 64;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSurface {
    name: String,
    #[serde(default)]
    title: Option<String>,
    #[serde(default, rename = "control")]
    controls: Vec<RawControl>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawControl {
    id: String,
    kind: String,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    default: Option<f64>,
    #[serde(default)]
    rows: Option<i64>,
    #[serde(default)]
    cols: Option<i64>,
    #[serde(default)]
    instruments: Option<i64>,
    #[serde(default)]
    steps: Option<i64>,
    #[serde(default)]
    first_instrument: Option<i64>,
    #[serde(default)]
    axes: Option<Vec<Axis>>,
}

impl RawControl {
    fn into_spec(self) -> Result<ControlSpec, SpecError> {
        let id = self.id;
        let bad = |detail: String| SpecError::BadControl {
            id: id.clone(),
            detail,
        };
        let dim = |field: &str, v: Option<i64>| -> Result<u32, SpecError> {
            let v = v.ok_or_else(|| bad(format!("missing {field}")))?;
            u32::try_from(v).map_err(|_| bad(format!("{field} must be a non-negative integer")))
        };
        let unexpected: Vec<&str> = [
            ("default", self.default.is_some()),
            ("rows", self.rows.is_some()),
            ("cols", self.cols.is_some()),
            ("instruments", self.instruments.is_some()),
            ("steps", self.steps.is_some()),
            ("first_instrument", self.first_instrument.is_some()),
            ("axes", self.axes.is_some()),
        ]
        .into_iter()
        .filter(|(_, set)| *set)
        .map(|(f, _)| f)
        .collect();
        let allow = |allowed: &[&str]| -> Result<(), SpecError> {
            match unexpected.iter().find(|f| !allowed.contains(f)) {
                Some(f) => Err(bad(format!("field {f} does not apply to {}", self.kind))),
                None => Ok(()),
            }
        };
        let kind = match self.kind.as_str() {
            "slider" | "pot" => {
                allow(&["default"])?;
                let default = self.default.unwrap_or(0.0);
                if self.kind == "slider" {
                    ControlKind::Slider { default }
                } else {
                    ControlKind::Pot { default }
                }
            }
            "xy" => {
                allow(&[])?;
                ControlKind::Xy
            }
            "pad_grid" => {
                allow(&["rows", "cols"])?;
                ControlKind::PadGrid {
                    rows: dim("rows", self.rows)?,
                    cols: dim("cols", self.cols)?,
                }
            }
            "step_sequencer" => {
                allow(&["instruments", "steps", "first_instrument"])?;
                ControlKind::StepSequencer {
                    instruments: dim("instruments", self.instruments)?,
                    steps: dim("steps", self.steps)?,
                    first_instrument: dim("first_instrument", self.first_instrument.or(Some(0)))?,
                }
            }
            "tilt" => {
                allow(&["axes"])?;
                ControlKind::Tilt {
                    axes: self.axes.clone().unwrap_or_default().into_iter().collect(),
                }
            }
            other => {
                return Err(SpecError::UnknownKind {
                    id: id.clone(),
                    kind: other.to_owned(),
                })
            }
        };
        Ok(ControlSpec {
            id,
            label: self.label,
            kind,
        })
    }
}

/// Parses and validates a surface document.
pub fn load_spec(document: &str) -> Result<SurfaceSpec, SpecError> {
    let raw: RawSurface = toml::from_str(document).map_err(|e| SpecError::Parse(e.to_string()))?;
    let controls = raw
        .controls
        .into_iter()
        .map(RawControl::into_spec)
        .collect::<Result<Vec<_>, _>>()?;
    SurfaceSpec::new(raw.name, raw.title, controls)
}

const BUNDLED: &[(&str, &str)] = &[
    ("zombitronica", include_str!("../../../../assets/surfaces/zombitronica.toml")),
    ("zombichord-chords", include_str!("../../../../assets/surfaces/zombichord-chords.toml")),
    ("zombichord-notes", include_str!("../../../../assets/surfaces/zombichord-notes.toml")),
    ("zombee-player1", include_str!("../../../../assets/surfaces/zombee-player1.toml")),
    ("zombee-player2", include_str!("../../../../assets/surfaces/zombee-player2.toml")),
    ("zombee-player3", include_str!("../../../../assets/surfaces/zombee-player3.toml")),
    ("zombee-player4", include_str!("../../../../assets/surfaces/zombee-player4.toml")),
    ("zombee-conductor", include_str!("../../../../assets/surfaces/zombee-conductor.toml")),
    ("imu-probe", include_str!("../../../../assets/surfaces/imu-probe.toml")),
];

/// The surface documents shipped with the hub, as `(name, document)` pairs.
pub fn bundled_documents() -> &'static [(&'static str, &'static str)] {
    BUNDLED
}

pub fn bundled_specs() -> Vec<SurfaceSpec> {
    BUNDLED
        .iter()
        .map(|(name, doc)| load_spec(doc).unwrap_or_else(|e| panic!("bundled spec {name}: {e}")))
        .collect()
}

pub fn bundled_spec(name: &str) -> Option<SurfaceSpec> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .and_then(|(_, doc)| load_spec(doc).ok())
}

/// Shape of a session derived from its surfaces: grid size and the set of
/// continuous controls with their initial values.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionLayout {
    pub instruments: u32,
    pub steps: u32,
    pub controls: BTreeMap<String, f64>,
}

impl SessionLayout {
    pub const DEFAULT_INSTRUMENTS: u32 = 4;
    pub const DEFAULT_STEPS: u32 = 8;

    pub fn from_surfaces<'a>(
        surfaces: impl IntoIterator<Item = &'a SurfaceSpec>,
    ) -> Result<Self, SpecError> {
        let mut names = BTreeSet::new();
        let mut instruments = 0;
        let mut steps: Option<u32> = None;
        let mut controls = BTreeMap::new();
        for s in surfaces {
            if !names.insert(s.name.clone()) {
                return Err(SpecError::DuplicateSurface(s.name.clone()));
            }
            for c in &s.controls {
                if let ControlKind::StepSequencer {
                    instruments: n,
                    steps: st,
                    first_instrument,
                } = c.kind
                {
                    instruments = instruments.max(first_instrument + n);
                    match steps {
                        Some(prev) if prev != st => return Err(SpecError::GridMismatch(prev, st)),
                        _ => steps = Some(st),
                    }
                }
                for (axis, v) in c.initial_values() {
                    let key = match axis {
                        Some(a) => format!("{}/{}/{}", s.name, c.id, a),
                        None => format!("{}/{}", s.name, c.id),
                    };
                    controls.insert(key, v);
                }
            }
        }
        Ok(Self {
            instruments: if instruments == 0 {
                Self::DEFAULT_INSTRUMENTS
            } else {
                instruments
            },
            steps: steps.unwrap_or(Self::DEFAULT_STEPS),
            controls,
        })
    }
}
