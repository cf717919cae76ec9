use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OscError {
    #[error("invalid OSC address {0:?}")]
    InvalidAddress(String),
    #[error("unsupported OSC argument type '{0}'")]
    UnsupportedArgType(char),
    #[error("OSC string argument contains a NUL byte")]
    InvalidString,
    #[error("socket error: {0}")]
    Socket(String),
}

/// Argument values. Only `i`, `f`, `s` and `b` are OSC 1.0 core types; the
/// rest exist so callers get a clear error instead of a silent conversion.
#[derive(Debug, Clone, PartialEq)]
pub enum OscArg {
    Int(i32),
    Float(f32),
    Str(String),
    Blob(Vec<u8>),
    Int64(i64),
    Double(f64),
    TimeTag(u64),
}

impl OscArg {
    pub fn type_tag(&self) -> char {
        match self {
            OscArg::Int(_) => 'i',
            OscArg::Float(_) => 'f',
            OscArg::Str(_) => 's',
            OscArg::Blob(_) => 'b',
            OscArg::Int64(_) => 'h',
            OscArg::Double(_) => 'd',
            OscArg::TimeTag(_) => 't',
        }
    }
}

/// One encoded OSC message, ready to go out as a single datagram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OscPacket(Vec<u8>);

impl OscPacket {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

const RESERVED: &[char] = &[' ', '#', '*', ',', '?', '[', ']', '{', '}'];

/// Address must start with `/`, have no empty parts and use printable ASCII
/// outside the pattern-reserved characters.
pub fn check_address(address: &str) -> Result<(), OscError> {
    let ok = address.len() > 1
        && address.starts_with('/')
        && address[1..].split('/').all(|part| !part.is_empty())
        && address
            .chars()
            .all(|c| c.is_ascii_graphic() && !RESERVED.contains(&c));
    if ok {
        Ok(())
    } else {
        Err(OscError::InvalidAddress(address.to_owned()))
    }
}

fn push_padded_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(s.as_bytes());
    // at least one NUL, then up to the next 4-byte boundary
    let pad = 4 - (s.len() % 4);
    buf.resize(buf.len() + pad, 0);
}

pub fn encode_osc(address: &str, args: &[OscArg]) -> Result<OscPacket, OscError> {
    check_address(address)?;
    let mut tags = String::with_capacity(args.len() + 1);
    tags.push(',');
    for a in args {
        match a {
            OscArg::Int(_) | OscArg::Float(_) | OscArg::Blob(_) => {}
            OscArg::Str(s) if s.contains('\0') => return Err(OscError::InvalidString),
            OscArg::Str(_) => {}
            other => return Err(OscError::UnsupportedArgType(other.type_tag())),
        }
        tags.push(a.type_tag());
    }

    let mut buf = Vec::with_capacity(address.len() + tags.len() + 8 + args.len() * 4);
    push_padded_str(&mut buf, address);
    push_padded_str(&mut buf, &tags);
    for a in args {
        match a {
            OscArg::Int(v) => buf.extend_from_slice(&v.to_be_bytes()),
            OscArg::Float(v) => buf.extend_from_slice(&v.to_be_bytes()),
            OscArg::Str(s) => push_padded_str(&mut buf, s),
            OscArg::Blob(b) => {
                buf.extend_from_slice(&(b.len() as i32).to_be_bytes());
                buf.extend_from_slice(b);
                let pad = (4 - b.len() % 4) % 4;
                buf.resize(buf.len() + pad, 0);
            }
            _ => unreachable!("rejected above"),
        }
    }
    debug_assert_eq!(buf.len() % 4, 0);
    Ok(OscPacket(buf))
}
