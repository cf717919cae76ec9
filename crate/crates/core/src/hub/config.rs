use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::surface::{bundled_specs, load_spec, SpecError, SurfaceSpec};

pub const DEFAULT_HEARTBEAT_MS: u64 = 5_000;
pub const DEFAULT_IDLE_TIMEOUT_MS: u64 = 15_000;
pub const DEFAULT_MAX_UNITS: usize = 32;
pub const DEFAULT_SENSOR_RATE: u32 = 200;
pub const DEFAULT_OUT_QUEUE: usize = 1024;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config is not valid TOML: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("surface {path}: {source}")]
    Surface { path: PathBuf, source: SpecError },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TlsFiles {
    pub cert: PathBuf,
    pub key: PathBuf,
}

/// Settings of the routing core that do not involve sockets.
#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub surfaces: Vec<SurfaceSpec>,
    pub heartbeat_ms: u64,
    pub idle_timeout_ms: u64,
    pub max_units: usize,
    /// Sensor frames each unit may publish per second before excess is dropped.
    pub sensor_rate_per_s: u32,
    pub steps_per_beat: u32,
    /// Seed for the session token; a random one is drawn when `None`.
    pub seed: Option<u64>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            surfaces: bundled_specs(),
            heartbeat_ms: DEFAULT_HEARTBEAT_MS,
            idle_timeout_ms: DEFAULT_IDLE_TIMEOUT_MS,
            max_units: DEFAULT_MAX_UNITS,
            sensor_rate_per_s: DEFAULT_SENSOR_RATE,
            steps_per_beat: 1,
            seed: None,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.heartbeat_ms == 0 {
            return Err(ConfigError::Invalid("heartbeat interval must be > 0".into()));
        }
        if self.idle_timeout_ms <= self.heartbeat_ms {
            return Err(ConfigError::Invalid(format!(
                "idle timeout ({} ms) must exceed the heartbeat interval ({} ms)",
                self.idle_timeout_ms, self.heartbeat_ms
            )));
        }
        if self.max_units == 0 {
            return Err(ConfigError::Invalid("max_units must be >= 1".into()));
        }
        if self.steps_per_beat == 0 {
            return Err(ConfigError::Invalid("steps_per_beat must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct HubConfig {
    pub bind: SocketAddr,
    pub tls: Option<TlsFiles>,
    pub asset_root: PathBuf,
    pub session: SessionConfig,
    pub out_queue: usize,
    pub osc_bridge: Option<PathBuf>,
    /// Keep every applied mutation so it can be inspected with
    /// `HubHandle::journal`; grows without bound.
    pub record_mutations: bool,
}

impl HubConfig {
    pub fn new(bind: SocketAddr, asset_root: impl Into<PathBuf>) -> Self {
        Self {
            bind,
            tls: None,
            asset_root: asset_root.into(),
            session: SessionConfig::default(),
            out_queue: DEFAULT_OUT_QUEUE,
            osc_bridge: None,
            record_mutations: false,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.bind.port() == 0 {
            return Err(ConfigError::Invalid("port must be in [1, 65535]".into()));
        }
        self.session.validate()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHubConfig {
    bind: String,
    asset_root: PathBuf,
    #[serde(default)]
    tls: Option<RawTls>,
    #[serde(default)]
    heartbeat_ms: Option<u64>,
    #[serde(default)]
    idle_timeout_ms: Option<u64>,
    #[serde(default)]
    max_units: Option<usize>,
    #[serde(default)]
    sensor_rate_per_s: Option<u32>,
    #[serde(default)]
    steps_per_beat: Option<u32>,
    #[serde(default)]
    out_queue: Option<usize>,
    #[serde(default)]
    surfaces: Vec<PathBuf>,
    #[serde(default)]
    osc_bridge: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTls {
    cert: PathBuf,
    key: PathBuf,
}

/// Reads surface documents from disk; an empty list selects the bundled set.
pub fn load_surfaces(paths: &[PathBuf]) -> Result<Vec<SurfaceSpec>, ConfigError> {
    if paths.is_empty() {
        return Ok(bundled_specs());
    }
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.clone(),
                source,
            })?;
            load_spec(&text).map_err(|source| ConfigError::Surface {
                path: p.clone(),
                source,
            })
        })
        .collect()
}

/// Parses a hub config document. Relative paths are taken relative to `base`.
pub fn parse_hub_config(document: &str, base: &Path) -> Result<HubConfig, ConfigError> {
    let raw: RawHubConfig = toml::from_str(document).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let bind = raw
        .bind
        .parse()
        .map_err(|_| ConfigError::Invalid(format!("bind address {:?}", raw.bind)))?;
    let at = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
    let surfaces: Vec<PathBuf> = raw.surfaces.into_iter().map(at).collect();
    let session = SessionConfig {
        surfaces: load_surfaces(&surfaces)?,
        heartbeat_ms: raw.heartbeat_ms.unwrap_or(DEFAULT_HEARTBEAT_MS),
        idle_timeout_ms: raw.idle_timeout_ms.unwrap_or(DEFAULT_IDLE_TIMEOUT_MS),
        max_units: raw.max_units.unwrap_or(DEFAULT_MAX_UNITS),
        sensor_rate_per_s: raw.sensor_rate_per_s.unwrap_or(DEFAULT_SENSOR_RATE),
        steps_per_beat: raw.steps_per_beat.unwrap_or(1),
        seed: None,
    };
    let config = HubConfig {
        bind,
        tls: raw.tls.map(|t| TlsFiles {
            cert: at(t.cert),
            key: at(t.key),
        }),
        asset_root: at(raw.asset_root),
        session,
        out_queue: raw.out_queue.unwrap_or(DEFAULT_OUT_QUEUE),
        osc_bridge: raw.osc_bridge.map(at),
        record_mutations: false,
    };
    config.validate()?;
    Ok(config)
}

pub fn load_hub_config(path: &Path) -> Result<HubConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_owned(),
        source,
    })?;
    parse_hub_config(&text, path.parent().unwrap_or(Path::new(".")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn port_zero_is_invalid() {
        let c = HubConfig::new("127.0.0.1:0".parse().unwrap(), ".");
        assert!(matches!(c.validate(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn timeout_must_exceed_heartbeat() {
        let mut s = SessionConfig::default();
        s.idle_timeout_ms = s.heartbeat_ms;
        assert!(s.validate().is_err());
    }

    #[test]
    fn parses_with_relative_paths() {
        let c = parse_hub_config(
            r#"
bind = "0.0.0.0:8443"
asset_root = "assets"
heartbeat_ms = 1000
idle_timeout_ms = 4000

[tls]
cert = "certs/cert.pem"
key = "/etc/zombihub/key.pem"
"#,
            Path::new("/srv/hub"),
        )
        .unwrap();
        assert_eq!(c.asset_root, PathBuf::from("/srv/hub/assets"));
        let tls = c.tls.unwrap();
        assert_eq!(tls.cert, PathBuf::from("/srv/hub/certs/cert.pem"));
        assert_eq!(tls.key, PathBuf::from("/etc/zombihub/key.pem"));
        assert_eq!(c.session.heartbeat_ms, 1000);
        assert_eq!(c.session.surfaces.len(), bundled_specs().len());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = parse_hub_config("bind = \"0.0.0.0:1\"\nasset_root = \".\"\nport = 3\n", Path::new("."));
        assert!(matches!(err, Err(ConfigError::Parse(_))));
    }
}
