//! Routing hub for fleets of browser-bearing devices: wire protocol, shared
//! session state, websocket server, OSC bridge and a scripted-client harness.

pub mod harness;
pub mod hub;
pub mod osc;
pub mod protocol;
pub mod server;
pub mod surface;
pub mod tls;

pub use protocol::{
    decode_envelope, encode_envelope, validate_capabilities, Capability, CapabilityProfile,
    Envelope, Payload, Topic, TopicPattern, UnitId,
};
pub use surface::{apply_mutation, load_spec, SharedState, SurfaceSpec, TransportClock};
