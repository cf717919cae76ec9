//! Open Sound Control output: message encoding, mapping rules and the UDP
//! sender worker.

mod bridge;
mod encode;
mod mapping;

pub use bridge::{send, socket_for, BridgeCounters, BridgeStats, OscBridge};
pub use encode::{check_address, encode_osc, OscArg, OscError, OscPacket};
pub use mapping::{
    load_bridge_config, map_message, ArgSource, BridgeConfig, Field, MappingError, OscMapping,
};
