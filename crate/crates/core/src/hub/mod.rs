//! Session routing: unit registry, topic fan-out, heartbeats and the
//! transport clock, independent of any socket.

mod config;
mod outbox;
mod router;
mod throttle;

pub use config::{
    load_hub_config, load_surfaces, parse_hub_config, ConfigError, HubConfig, SessionConfig,
    TlsFiles, DEFAULT_HEARTBEAT_MS, DEFAULT_IDLE_TIMEOUT_MS, DEFAULT_MAX_UNITS, DEFAULT_OUT_QUEUE,
    DEFAULT_SENSOR_RATE,
};
pub use outbox::OutQueue;
pub use router::{
    ConnId, DeliveryReport, HeartbeatReport, HubCore, HubError, HubStats, Output, RttEstimate,
    UnitInfo, DEFAULT_SUBSCRIPTIONS,
};
pub use throttle::RateLimiter;
