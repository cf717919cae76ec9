use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::surface::SurfaceSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Hotspot,
    Server,
    Client,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScriptBaseline {
    Es5,
    Es6plus,
}

/// What a unit's browser and sensors can do. Every field is explicit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapabilityProfile {
    pub touch: bool,
    pub accelerometer: bool,
    pub gyroscope: bool,
    pub secure_transport: bool,
    pub script_baseline: ScriptBaseline,
}

impl CapabilityProfile {
    pub const fn full() -> Self {
        Self {
            touch: true,
            accelerometer: true,
            gyroscope: true,
            secure_transport: true,
            script_baseline: ScriptBaseline::Es6plus,
        }
    }

    pub fn has(&self, cap: Capability) -> bool {
        match cap {
            Capability::Touch => self.touch,
            Capability::Accelerometer => self.accelerometer,
            Capability::Gyroscope => self.gyroscope,
            Capability::SecureTransport => self.secure_transport,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Touch,
    Accelerometer,
    Gyroscope,
    SecureTransport,
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Capability::Touch => "touch",
            Capability::Accelerometer => "accelerometer",
            Capability::Gyroscope => "gyroscope",
            Capability::SecureTransport => "secure_transport",
        })
    }
}

/// Returns every capability `spec` requires that `caps` lacks, in a stable order.
pub fn validate_capabilities(
    caps: &CapabilityProfile,
    spec: &SurfaceSpec,
) -> Result<(), Vec<Capability>> {
    missing(caps, spec.requires())
}

pub(crate) fn missing(
    caps: &CapabilityProfile,
    required: &BTreeSet<Capability>,
) -> Result<(), Vec<Capability>> {
    let missing: Vec<Capability> = required.iter().copied().filter(|c| !caps.has(*c)).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(missing)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::{bundled_specs, load_spec};

    const TILT_ONLY: &str = r#"
name = "tiltpad"
[[control]]
id = "tilt"
kind = "tilt"
axes = ["beta", "gamma"]
"#;

    const TOUCH_ONLY: &str = r#"
name = "one"
[[control]]
id = "fader"
kind = "slider"
"#;

    fn caps() -> CapabilityProfile {
        CapabilityProfile {
            touch: true,
            accelerometer: true,
            gyroscope: false,
            secure_transport: true,
            script_baseline: ScriptBaseline::Es5,
        }
    }

    #[test]
    fn gyroless_unit_cannot_drive_orientation_controls() {
        let spec = load_spec(TILT_ONLY).unwrap();
        assert_eq!(
            validate_capabilities(&caps(), &spec),
            Err(vec![Capability::Gyroscope])
        );
    }

    #[test]
    fn full_caps_satisfy_every_bundled_spec() {
        for spec in bundled_specs() {
            assert_eq!(
                validate_capabilities(&CapabilityProfile::full(), &spec),
                Ok(()),
                "{}",
                spec.name
            );
        }
    }

    #[test]
    fn touchless_unit_on_touch_surface() {
        let spec = load_spec(TOUCH_ONLY).unwrap();
        let c = CapabilityProfile {
            touch: false,
            ..caps()
        };
        assert_eq!(validate_capabilities(&c, &spec), Err(vec![Capability::Touch]));
    }

    #[test]
    fn profile_rejects_unknown_fields() {
        let err = serde_json::from_str::<CapabilityProfile>(
            r#"{"touch":true,"accelerometer":true,"gyroscope":true,"secure_transport":true,"script_baseline":"es5","camera":true}"#,
        );
        assert!(err.is_err());
        let missing_field = serde_json::from_str::<CapabilityProfile>(
            r#"{"touch":true,"accelerometer":true,"gyroscope":true,"script_baseline":"es5"}"#,
        );
        assert!(missing_field.is_err());
    }
}
