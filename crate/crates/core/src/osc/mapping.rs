//! Rules turning routed envelopes into OSC messages.
//!
//! A rules file looks like:
//!
//! ```toml
//! dest = "127.0.0.1:9000"
//!
//! [[rule]]
//! match = "control/zombitronica/*"
//! address = "/zombitronica/{control}"
//! args = ["value"]
//!
//! [[rule]]
//! match = "sensor/motion/*"
//! address = "/motion/{unit}"
//! args = [{ from = "ax", scale = 0.1 }, { from = "ay", scale = 0.1 }, { from = "az", scale = 0.1 }]
//! ```
//!
//! Placeholders: `{unit}`, `{surface}`, `{control}`, `{axis}`. A rule whose
//! template or extractors need a field the envelope lacks does not fire.

use std::net::SocketAddr;

use serde::Deserialize;
use thiserror::Error;

use super::encode::{check_address, encode_osc, OscArg, OscPacket};
use crate::protocol::{Envelope, Payload, TopicPattern};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MappingError {
    #[error("rules file is not valid TOML: {0}")]
    Parse(String),
    #[error("rule {index}: {detail}")]
    BadRule { index: usize, detail: String },
    #[error("bad destination {0:?}")]
    BadDest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Value,
    X,
    Y,
    Ax,
    Ay,
    Az,
    Alpha,
    Beta,
    Gamma,
    Step,
    Bpm,
}

impl Field {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "value" => Field::Value,
            "x" => Field::X,
            "y" => Field::Y,
            "ax" => Field::Ax,
            "ay" => Field::Ay,
            "az" => Field::Az,
            "alpha" => Field::Alpha,
            "beta" => Field::Beta,
            "gamma" => Field::Gamma,
            "step" => Field::Step,
            "bpm" => Field::Bpm,
            _ => return None,
        })
    }

    /// Reads the field from a payload. For motion samples the angle names
    /// select rotation rates.
    fn extract(self, p: &Payload) -> Option<f64> {
        match (self, p) {
            (Field::Value, Payload::ControlChange(c)) => Some(c.value),
            (Field::X, Payload::Touch(t)) => Some(t.x),
            (Field::Y, Payload::Touch(t)) => Some(t.y),
            (Field::Ax, Payload::Motion(m)) => Some(m.ax),
            (Field::Ay, Payload::Motion(m)) => Some(m.ay),
            (Field::Az, Payload::Motion(m)) => Some(m.az),
            (Field::Alpha, Payload::Motion(m)) => Some(m.rot_alpha),
            (Field::Beta, Payload::Motion(m)) => Some(m.rot_beta),
            (Field::Gamma, Payload::Motion(m)) => Some(m.rot_gamma),
            (Field::Alpha, Payload::Orientation(o)) => Some(o.alpha),
            (Field::Beta, Payload::Orientation(o)) => Some(o.beta),
            (Field::Gamma, Payload::Orientation(o)) => Some(o.gamma),
            (Field::Step, Payload::Tick(t)) => Some(f64::from(t.step)),
            (Field::Step, Payload::SeqCellSet(s)) => Some(f64::from(s.step)),
            (Field::Bpm, Payload::TransportSet(t)) => t.bpm,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArgSource {
    Field { field: Field, scale: f64, offset: f64 },
    ConstFloat(f32),
    ConstInt(i32),
}

impl ArgSource {
    fn resolve(&self, p: &Payload) -> Option<OscArg> {
        match self {
            ArgSource::Field {
                field,
                scale,
                offset,
            } => field
                .extract(p)
                .map(|v| OscArg::Float((scale * v + offset) as f32)),
            ArgSource::ConstFloat(v) => Some(OscArg::Float(*v)),
            ArgSource::ConstInt(v) => Some(OscArg::Int(*v)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Piece {
    Literal(String),
    Unit,
    Surface,
    Control,
    Axis,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OscMapping {
    pub pattern: TopicPattern,
    template: Vec<Piece>,
    pub args: Vec<ArgSource>,
}

struct Names<'a> {
    unit: &'a str,
    surface: Option<&'a str>,
    control: Option<&'a str>,
    axis: Option<String>,
}

impl<'a> Names<'a> {
    fn of(e: &'a Envelope) -> Self {
        let mut n = Names {
            unit: e.source.as_str(),
            surface: None,
            control: None,
            axis: None,
        };
        match &e.payload {
            Payload::Touch(t) => {
                n.surface = Some(&t.surface);
                n.control = Some(&t.control);
            }
            Payload::ControlChange(c) => {
                let mut parts = c.control.splitn(3, '/');
                n.surface = parts.next();
                n.control = parts.next();
                n.axis = parts.next().map(str::to_owned);
            }
            _ => {}
        }
        n
    }
}

impl OscMapping {
    pub fn new(pattern: TopicPattern, address: &str, args: Vec<ArgSource>) -> Result<Self, String> {
        let template = parse_template(address)?;
        // Placeholders always render to non-empty names, so probing with a
        // fixed word validates the literal parts.
        let probe = render(&template, &Names {
            unit: "u",
            surface: Some("s"),
            control: Some("c"),
            axis: Some("a".into()),
        })
        .expect("all placeholders provided");
        check_address(&probe).map_err(|e| e.to_string())?;
        Ok(Self {
            pattern,
            template,
            args,
        })
    }

    /// Builds this rule's packet for `e`, or `None` if the rule does not apply.
    pub fn apply(&self, e: &Envelope) -> Option<OscPacket> {
        let topic = e.topic()?;
        if !self.pattern.matches(&topic) {
            return None;
        }
        let address = render(&self.template, &Names::of(e))?;
        let args = self
            .args
            .iter()
            .map(|a| a.resolve(&e.payload))
            .collect::<Option<Vec<_>>>()?;
        encode_osc(&address, &args).ok()
    }
}

fn parse_template(t: &str) -> Result<Vec<Piece>, String> {
    let mut out = Vec::new();
    let mut rest = t;
    while let Some(open) = rest.find('{') {
        if open > 0 {
            out.push(Piece::Literal(rest[..open].to_owned()));
        }
        let close = rest[open..]
            .find('}')
            .ok_or_else(|| format!("unclosed placeholder in {t:?}"))?
            + open;
        out.push(match &rest[open + 1..close] {
            "unit" => Piece::Unit,
            "surface" => Piece::Surface,
            "control" => Piece::Control,
            "axis" => Piece::Axis,
            other => return Err(format!("unknown placeholder {{{other}}}")),
        });
        rest = &rest[close + 1..];
    }
    if !rest.is_empty() {
        out.push(Piece::Literal(rest.to_owned()));
    }
    Ok(out)
}

fn render(template: &[Piece], n: &Names<'_>) -> Option<String> {
    let mut s = String::new();
    for p in template {
        match p {
            Piece::Literal(l) => s.push_str(l),
            Piece::Unit => s.push_str(n.unit),
            Piece::Surface => s.push_str(n.surface?),
            Piece::Control => s.push_str(n.control?),
            Piece::Axis => s.push_str(n.axis.as_deref()?),
        }
    }
    Some(s)
}

/// Applies every matching rule in order.
pub fn map_message(e: &Envelope, rules: &[OscMapping]) -> Vec<OscPacket> {
    rules.iter().filter_map(|r| r.apply(e)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BridgeConfig {
    pub dest: SocketAddr,
    pub rules: Vec<OscMapping>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    dest: String,
    #[serde(default, rename = "rule")]
    rules: Vec<RawRule>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    #[serde(rename = "match")]
    pattern: String,
    address: String,
    #[serde(default)]
    args: Vec<RawArg>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawArg {
    Name(String),
    Table(RawArgTable),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArgTable {
    from: Option<String>,
    scale: Option<f64>,
    offset: Option<f64>,
    float: Option<f64>,
    int: Option<i64>,
}

fn parse_arg(raw: RawArg) -> Result<ArgSource, String> {
    let field = |name: &str, scale: f64, offset: f64| {
        Field::parse(name)
            .map(|field| ArgSource::Field {
                field,
                scale,
                offset,
            })
            .ok_or_else(|| format!("unknown extractor {name:?}"))
    };
    match raw {
        RawArg::Name(n) => field(&n, 1.0, 0.0),
        RawArg::Table(t) => match (t.from, t.float, t.int) {
            (Some(f), None, None) => {
                let (scale, offset) = (t.scale.unwrap_or(1.0), t.offset.unwrap_or(0.0));
                if !scale.is_finite() || !offset.is_finite() {
                    return Err("scale and offset must be finite".into());
                }
                field(&f, scale, offset)
            }
            (None, Some(v), None) if t.scale.is_none() && t.offset.is_none() => {
                Ok(ArgSource::ConstFloat(v as f32))
            }
            (None, None, Some(v)) if t.scale.is_none() && t.offset.is_none() => i32::try_from(v)
                .map(ArgSource::ConstInt)
                .map_err(|_| format!("int constant {v} does not fit 32 bits")),
            _ => Err("an argument needs exactly one of `from`, `float` or `int`; scale/offset only apply to `from`".into()),
        },
    }
}

pub fn load_bridge_config(document: &str) -> Result<BridgeConfig, MappingError> {
    let raw: RawConfig = toml::from_str(document).map_err(|e| MappingError::Parse(e.to_string()))?;
    let dest = raw
        .dest
        .parse()
        .map_err(|_| MappingError::BadDest(raw.dest.clone()))?;
    let rules = raw
        .rules
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            let bad = |detail: String| MappingError::BadRule { index, detail };
            let pattern = TopicPattern::new(r.pattern).map_err(|e| bad(e.to_string()))?;
            let args = r
                .args
                .into_iter()
                .map(parse_arg)
                .collect::<Result<Vec<_>, _>>()
                .map_err(bad)?;
            OscMapping::new(pattern, &r.address, args).map_err(bad)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BridgeConfig { dest, rules })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{ControlChange, Motion, Ping, UnitId};

    fn env(p: Payload) -> Envelope {
        Envelope::new(UnitId::new("u1").unwrap(), 0, 0, p)
    }

    fn rules(doc: &str) -> Vec<OscMapping> {
        load_bridge_config(&format!("dest = \"127.0.0.1:9000\"\n{doc}"))
            .unwrap()
            .rules
    }

    #[test]
    fn control_change_to_address() {
        let r = rules(
            r#"
[[rule]]
match = "control/z/*"
address = "/{surface}/{control}"
args = ["value"]
"#,
        );
        let out = map_message(
            &env(Payload::ControlChange(ControlChange {
                control: "z/vol0".into(),
                value: 0.5,
            })),
            &r,
        );
        assert_eq!(out, vec![encode_osc("/z/vol0", &[OscArg::Float(0.5)]).unwrap()]);
    }

    #[test]
    fn scaled_motion() {
        let r = rules(
            r#"
[[rule]]
match = "sensor/motion/*"
address = "/motion/{unit}"
args = [{ from = "ax", scale = 0.1 }, { from = "ay", scale = 0.1 }, { from = "az", scale = 0.1 }]
"#,
        );
        let m = Motion {
            ax: 1.0,
            ay: -2.0,
            az: 9.81,
            rot_alpha: 0.0,
            rot_beta: 0.0,
            rot_gamma: 0.0,
        };
        let out = map_message(&env(Payload::Motion(m)), &r);
        // 0.1 * 1.0, 0.1 * -2.0, 0.1 * 9.81 in f64 first, then narrowed
        let want = encode_osc(
            "/motion/u1",
            &[
                OscArg::Float(0.1_f32),
                OscArg::Float(-0.2_f32),
                OscArg::Float(0.981_f32),
            ],
        )
        .unwrap();
        assert_eq!(out, vec![want]);
    }

    #[test]
    fn control_messages_never_map() {
        let r = rules(
            r#"
[[rule]]
match = "*"
address = "/all"
"#,
        );
        assert!(map_message(&env(Payload::Ping(Ping { nonce: 1 })), &r).is_empty());
    }

    #[test]
    fn rules_fire_in_order_and_skip_missing_fields() {
        let r = rules(
            r#"
[[rule]]
match = "control/*"
address = "/first/{axis}"
args = ["value"]

[[rule]]
match = "control/*"
address = "/second"
args = [{ int = 7 }, "value"]

[[rule]]
match = "control/*"
address = "/third"
args = ["ax"]
"#,
        );
        let e = env(Payload::ControlChange(ControlChange {
            control: "z/vol0".into(),
            value: 0.25,
        }));
        // no axis on z/vol0, no ax on a control change
        assert_eq!(
            map_message(&e, &r),
            vec![encode_osc("/second", &[OscArg::Int(7), OscArg::Float(0.25)]).unwrap()]
        );
        let xy = env(Payload::ControlChange(ControlChange {
            control: "z/lead/x".into(),
            value: 1.0,
        }));
        assert_eq!(map_message(&xy, &r).len(), 2);
    }

    #[test]
    fn bad_rules_rejected() {
        let bad = |doc: &str| load_bridge_config(&format!("dest = \"127.0.0.1:9000\"\n{doc}"));
        assert!(matches!(
            bad("[[rule]]\nmatch = \"control/*\"\naddress = \"no-slash\"\n"),
            Err(MappingError::BadRule { .. })
        ));
        assert!(matches!(
            bad("[[rule]]\nmatch = \"control/*\"\naddress = \"/{who}\"\n"),
            Err(MappingError::BadRule { .. })
        ));
        assert!(matches!(
            bad("[[rule]]\nmatch = \"control/*\"\naddress = \"/a b\"\n"),
            Err(MappingError::BadRule { .. })
        ));
        assert!(matches!(
            bad("[[rule]]\nmatch = \"control/*\"\naddress = \"/x\"\nargs = [\"speed\"]\n"),
            Err(MappingError::BadRule { .. })
        ));
        assert!(matches!(
            load_bridge_config("dest = \"nowhere\""),
            Err(MappingError::BadDest(_))
        ));
    }
}
