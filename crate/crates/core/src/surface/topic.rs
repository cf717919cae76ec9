use crate::protocol::{IdError, Topic};

use super::spec::{ControlKind, SurfaceSpec};

/// `control/<surface>/<control>[/<axis>]`.
pub fn control_topic(surface: &str, control: &str, axis: Option<&str>) -> Result<Topic, IdError> {
    match axis {
        Some(a) => Topic::new(format!("control/{surface}/{control}/{a}")),
        None => Topic::new(format!("control/{surface}/{control}")),
    }
}

/// Every topic a surface can publish on: one per control, plus one per
/// value axis of XY pads and tilt controls. Step sequencers publish on
/// `state/seq` and are not listed.
pub fn surface_topics(spec: &SurfaceSpec) -> Vec<Topic> {
    let mut out = Vec::new();
    for c in &spec.controls {
        if matches!(c.kind, ControlKind::StepSequencer { .. }) {
            continue;
        }
        out.push(control_topic(&spec.name, &c.id, None).expect("validated names form a topic"));
        for axis in c.value_axes() {
            out.push(control_topic(&spec.name, &c.id, Some(axis)).expect("validated names form a topic"));
        }
    }
    out
}
