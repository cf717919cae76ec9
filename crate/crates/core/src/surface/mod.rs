//! Control-surface definitions and the shared session state they edit.

mod clock;
mod spec;
mod state;
mod topic;

pub use clock::{ClockError, StepPosition, TransportClock};
pub use spec::{
    bundled_documents, bundled_spec, bundled_specs, load_spec, Axis, ControlKind, ControlSpec,
    SessionLayout, SpecError, SurfaceSpec, MAX_STEPS,
};
pub use state::{
    apply_mutation, clamp_bpm, load_snapshot, snapshot, Cell, Grid, Mutation, SharedState,
    StateError, Transport, DEFAULT_BPM, MAX_BPM, MIN_BPM,
};
pub use topic::{control_topic, surface_topics};
