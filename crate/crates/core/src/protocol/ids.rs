use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Id the hub uses as `src` on every frame it originates.
pub const HUB_UNIT: &str = "hub";

/// `src` value a client puts in its Hello when it has no preferred id.
pub const ANONYMOUS_UNIT: &str = "?";

const MAX_UNIT_ID_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdError {
    #[error("unit id must be 1..=64 visible ASCII characters, got {0:?}")]
    BadUnitId(String),
    #[error("invalid topic {path:?}: {reason}")]
    BadTopic { path: String, reason: &'static str },
}

/// Opaque unit token: 1 to 64 visible ASCII characters.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UnitId(String);

impl UnitId {
    pub fn new(value: impl Into<String>) -> Result<Self, IdError> {
        let value = value.into();
        let ok = !value.is_empty()
            && value.len() <= MAX_UNIT_ID_LEN
            && value.bytes().all(|b| b.is_ascii_graphic());
        if ok {
            Ok(Self(value))
        } else {
            Err(IdError::BadUnitId(value))
        }
    }

    pub fn hub() -> Self {
        Self(HUB_UNIT.to_owned())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_anonymous(&self) -> bool {
        self.0 == ANONYMOUS_UNIT
    }
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for UnitId {
    type Err = IdError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl Serialize for UnitId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for UnitId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        UnitId::new(s).map_err(serde::de::Error::custom)
    }
}

fn check_segments(path: &str, allow_trailing_wildcard: bool) -> Result<(), IdError> {
    let bad = |reason| IdError::BadTopic {
        path: path.to_owned(),
        reason,
    };
    if path.is_empty() {
        return Err(bad("empty path"));
    }
    let segments: Vec<&str> = path.split('/').collect();
    let last = segments.len() - 1;
    for (i, seg) in segments.iter().enumerate() {
        if seg.is_empty() {
            return Err(bad("empty segment"));
        }
        if seg.chars().any(|c| c.is_whitespace() || c.is_control()) {
            return Err(bad("whitespace or control character"));
        }
        if seg.contains('*') {
            if !allow_trailing_wildcard {
                return Err(bad("wildcard not allowed in a publish path"));
            }
            if *seg != "*" || i != last {
                return Err(bad("only a single trailing \"*\" segment is allowed"));
            }
        }
    }
    Ok(())
}

/// Concrete publish path such as `sensor/motion/u3` or `control/zombitronica/vol0`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Topic(String);

impl Topic {
    pub fn new(path: impl Into<String>) -> Result<Self, IdError> {
        let path = path.into();
        check_segments(&path, false)?;
        Ok(Self(path))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn segments(&self) -> impl Iterator<Item = &str> {
        self.0.split('/')
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Subscription pattern: a topic path whose last segment may be `*`.
///
/// A trailing `*` matches one or more remaining segments, so `control/*`
/// covers `control/zombitronica/lead/x`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TopicPattern(String);

impl TopicPattern {
    pub fn new(path: impl Into<String>) -> Result<Self, IdError> {
        let path = path.into();
        check_segments(&path, true)?;
        Ok(Self(path))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_wildcard(&self) -> bool {
        self.0 == "*" || self.0.ends_with("/*")
    }

    pub fn matches(&self, topic: &Topic) -> bool {
        if self.0 == "*" {
            return true;
        }
        match self.0.strip_suffix("/*") {
            Some(prefix) => topic
                .as_str()
                .strip_prefix(prefix)
                .is_some_and(|rest| rest.len() > 1 && rest.starts_with('/')),
            None => self.0 == topic.0,
        }
    }
}

impl From<Topic> for TopicPattern {
    fn from(t: Topic) -> Self {
        Self(t.0)
    }
}

impl fmt::Display for TopicPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

macro_rules! string_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.0)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                <$ty>::new(s).map_err(serde::de::Error::custom)
            }
        }

        impl FromStr for $ty {
            type Err = IdError;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                <$ty>::new(s)
            }
        }
    };
}

string_serde!(Topic);
string_serde!(TopicPattern);
