//! Wire types exchanged between units and the hub, and their text codec.

mod caps;
mod codec;
mod ids;
mod payload;
mod seq;

pub use caps::{validate_capabilities, Capability, CapabilityProfile, Role, ScriptBaseline};
pub(crate) use caps::missing as missing_capabilities;
pub use codec::{
    decode_bytes, decode_envelope, encode_envelope, DecodeError, EncodeError, Envelope,
    MAX_FRAME_BYTES, PROTOCOL_VERSION,
};
pub use ids::{IdError, Topic, TopicPattern, UnitId, ANONYMOUS_UNIT, HUB_UNIT};
pub use payload::{
    check_control_key, is_valid_name, ControlChange, ErrorBody, Hello, Kind, Motion, Orientation,
    Payload, Ping, Pong, SeqCellSet, Tick, Topics, Touch, TouchPhase, TrafficClass, TransportSet,
    Welcome, MAX_NOTE,
};
pub use seq::{SeqTracker, SeqViolation};
