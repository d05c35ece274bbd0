//! Newline-delimited text records.
//!
//! Each record is one line: a kind word followed by `key=value` fields.
//! Values are bare tokens except `detail`, which is double-quoted with `\"`
//! and `\\` escapes. Unknown keys are skipped so newer peers can add fields.
//!
//! ```text
//! SetLength panel=1 roll=3 target_mm=65 epoch=42
//! Ack panel=1 roll=3 epoch=42 actual_mm=65
//! RssiFeedback link=0 value_dbm=-48 epoch=42 seq=17
//! Hello node=101 role=panel
//! Error code=stale detail="epoch 3 after 7"
//! ```
//!
//! Transports append envelope keys (`src`, `dst`, `wire_seq`, `t`) to the same
//! line; plain message decoding ignores them.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub type NodeId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeRole {
    Server,
    Controller,
    Panel,
    Endpoint,
}

impl NodeRole {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeRole::Server => "server",
            NodeRole::Controller => "controller",
            NodeRole::Panel => "panel",
            NodeRole::Endpoint => "endpoint",
        }
    }
}

impl fmt::Display for NodeRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NodeRole {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "server" => Ok(NodeRole::Server),
            "controller" => Ok(NodeRole::Controller),
            "panel" => Ok(NodeRole::Panel),
            "endpoint" => Ok(NodeRole::Endpoint),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ErrorCode {
    Bounds,
    Stale,
    Unroutable,
    Other(String),
}

impl ErrorCode {
    pub fn as_str(&self) -> &str {
        match self {
            ErrorCode::Bounds => "bounds",
            ErrorCode::Stale => "stale",
            ErrorCode::Unroutable => "unroutable",
            ErrorCode::Other(s) => s,
        }
    }

    fn parse(s: &str) -> Self {
        match s {
            "bounds" => ErrorCode::Bounds,
            "stale" => ErrorCode::Stale,
            "unroutable" => ErrorCode::Unroutable,
            other => ErrorCode::Other(other.to_string()),
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    SetLength {
        panel_id: u32,
        roll_id: u32,
        target_mm: u32,
        epoch: u64,
    },
    Ack {
        panel_id: u32,
        roll_id: u32,
        epoch: u64,
        actual_mm: u32,
    },
    RssiFeedback {
        link_id: u32,
        value_dbm: f64,
        epoch: u64,
        seq: u64,
    },
    Hello {
        node_id: NodeId,
        role: NodeRole,
    },
    Error {
        code: ErrorCode,
        detail: String,
    },
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::SetLength { .. } => "SetLength",
            Message::Ack { .. } => "Ack",
            Message::RssiFeedback { .. } => "RssiFeedback",
            Message::Hello { .. } => "Hello",
            Message::Error { .. } => "Error",
        }
    }

    /// One record without the trailing newline.
    pub fn encode(&self) -> String {
        match self {
            Message::SetLength {
                panel_id,
                roll_id,
                target_mm,
                epoch,
            } => format!("SetLength panel={panel_id} roll={roll_id} target_mm={target_mm} epoch={epoch}"),
            Message::Ack {
                panel_id,
                roll_id,
                epoch,
                actual_mm,
            } => format!("Ack panel={panel_id} roll={roll_id} epoch={epoch} actual_mm={actual_mm}"),
            // `{}` on f64 prints the shortest string that parses back to the same bits.
            Message::RssiFeedback {
                link_id,
                value_dbm,
                epoch,
                seq,
            } => format!("RssiFeedback link={link_id} value_dbm={value_dbm} epoch={epoch} seq={seq}"),
            Message::Hello { node_id, role } => format!("Hello node={node_id} role={role}"),
            Message::Error { code, detail } => format!("Error code={code} detail={}", quote(detail)),
        }
    }

    pub fn decode(line: &str) -> Result<Self, DecodeError> {
        decode_at(line, 0)
    }
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encode())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("byte {offset}: {kind}")]
pub struct DecodeError {
    pub offset: usize,
    pub kind: DecodeErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeErrorKind {
    #[error("empty record")]
    Empty,
    #[error("unknown record kind {0:?}")]
    UnknownKind(String),
    #[error("expected key=value")]
    ExpectedField,
    #[error("unterminated quoted value")]
    UnterminatedQuote,
    #[error("bad value for {key}: {value:?}")]
    BadValue { key: String, value: String },
    #[error("missing field {0}")]
    MissingField(&'static str),
    #[error("record is not valid UTF-8")]
    Utf8,
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// A parsed field: key, value, and the byte offset of the value.
pub(crate) struct Field<'a> {
    pub key: &'a str,
    pub value: std::borrow::Cow<'a, str>,
    pub offset: usize,
}

/// Splits a record into its kind word and fields. `base` is added to every
/// reported offset.
pub(crate) fn fields(line: &str, base: usize) -> Result<(&str, Vec<Field<'_>>), DecodeError> {
    let err = |offset: usize, kind| DecodeError {
        offset: base + offset,
        kind,
    };
    let bytes = line.as_bytes();
    let mut i = 0;
    let skip_ws = |i: &mut usize| {
        while *i < bytes.len() && bytes[*i] == b' ' {
            *i += 1;
        }
    };
    skip_ws(&mut i);
    let start = i;
    while i < bytes.len() && bytes[i] != b' ' {
        i += 1;
    }
    if start == i {
        return Err(err(start, DecodeErrorKind::Empty));
    }
    let kind = &line[start..i];
    let mut out = Vec::new();
    loop {
        skip_ws(&mut i);
        if i >= bytes.len() {
            break;
        }
        let kstart = i;
        while i < bytes.len() && bytes[i] != b'=' && bytes[i] != b' ' {
            i += 1;
        }
        if i >= bytes.len() || bytes[i] != b'=' || kstart == i {
            return Err(err(kstart, DecodeErrorKind::ExpectedField));
        }
        let key = &line[kstart..i];
        i += 1;
        let vstart = i;
        if i < bytes.len() && bytes[i] == b'"' {
            let mut val = String::new();
            i += 1;
            let mut closed = false;
            while i < bytes.len() {
                match bytes[i] {
                    b'"' => {
                        closed = true;
                        i += 1;
                        break;
                    }
                    b'\\' if i + 1 < bytes.len() => {
                        val.push(match bytes[i + 1] {
                            b'n' => '\n',
                            other => other as char,
                        });
                        i += 2;
                    }
                    _ => {
                        let ch = line[i..].chars().next().expect("in bounds");
                        val.push(ch);
                        i += ch.len_utf8();
                    }
                }
            }
            if !closed {
                return Err(err(vstart, DecodeErrorKind::UnterminatedQuote));
            }
            out.push(Field {
                key,
                value: val.into(),
                offset: base + vstart,
            });
        } else {
            while i < bytes.len() && bytes[i] != b' ' {
                i += 1;
            }
            out.push(Field {
                key,
                value: line[vstart..i].into(),
                offset: base + vstart,
            });
        }
    }
    Ok((kind, out))
}

struct Fields<'a> {
    items: Vec<Field<'a>>,
    end: usize,
}

impl Fields<'_> {
    fn get<T: FromStr>(&self, key: &'static str) -> Result<T, DecodeError> {
        let f = self.items.iter().rev().find(|f| f.key == key).ok_or(DecodeError {
            offset: self.end,
            kind: DecodeErrorKind::MissingField(key),
        })?;
        f.value.parse().map_err(|_| DecodeError {
            offset: f.offset,
            kind: DecodeErrorKind::BadValue {
                key: key.to_string(),
                value: f.value.to_string(),
            },
        })
    }

    fn raw(&self, key: &'static str) -> Result<&str, DecodeError> {
        self.items
            .iter()
            .rev()
            .find(|f| f.key == key)
            .map(|f| f.value.as_ref())
            .ok_or(DecodeError {
                offset: self.end,
                kind: DecodeErrorKind::MissingField(key),
            })
    }
}

pub(crate) fn decode_at(line: &str, base: usize) -> Result<Message, DecodeError> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    let line = line.strip_suffix('\r').unwrap_or(line);
    let (kind, items) = fields(line, base)?;
    let f = Fields {
        items,
        end: base + line.len(),
    };
    Ok(match kind {
        "SetLength" => Message::SetLength {
            panel_id: f.get("panel")?,
            roll_id: f.get("roll")?,
            target_mm: f.get("target_mm")?,
            epoch: f.get("epoch")?,
        },
        "Ack" => Message::Ack {
            panel_id: f.get("panel")?,
            roll_id: f.get("roll")?,
            epoch: f.get("epoch")?,
            actual_mm: f.get("actual_mm")?,
        },
        "RssiFeedback" => Message::RssiFeedback {
            link_id: f.get("link")?,
            value_dbm: f.get("value_dbm")?,
            epoch: f.get("epoch")?,
            seq: f.get("seq")?,
        },
        "Hello" => Message::Hello {
            node_id: f.get("node")?,
            role: f.get("role")?,
        },
        "Error" => Message::Error {
            code: ErrorCode::parse(f.raw("code")?),
            detail: f.raw("detail")?.to_string(),
        },
        other => {
            return Err(DecodeError {
                offset: base + line.len() - line.trim_start().len(),
                kind: DecodeErrorKind::UnknownKind(other.to_string()),
            })
        }
    })
}

/// Decodes a byte stream of records. Offsets in errors are relative to the
/// start of `bytes`. Blank lines are skipped; a final line without a newline
/// is decoded like any other.
pub fn decode_stream(bytes: &[u8]) -> Result<Vec<Message>, DecodeError> {
    let text = std::str::from_utf8(bytes).map_err(|e| DecodeError {
        offset: e.valid_up_to(),
        kind: DecodeErrorKind::Utf8,
    })?;
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if !line.trim().is_empty() {
            out.push(decode_at(line, offset)?);
        }
        offset += line.len();
    }
    Ok(out)
}

/// Encodes messages as a newline-terminated byte stream.
pub fn encode_stream<'a>(msgs: impl IntoIterator<Item = &'a Message>) -> Vec<u8> {
    let mut out = Vec::new();
    for m in msgs {
        out.extend_from_slice(m.encode().as_bytes());
        out.push(b'\n');
    }
    out
}

/// A message plus the routing keys a transport adds to the record.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub src: NodeId,
    pub dst: NodeId,
    /// Per (src, dst) sequence number.
    pub seq: u64,
    /// Send time in microseconds since the network started.
    pub sent_us: u64,
    pub msg: Message,
}

impl Envelope {
    pub fn encode(&self) -> String {
        format!(
            "{} src={} dst={} wire_seq={} t={}",
            self.msg.encode(),
            self.src,
            self.dst,
            self.seq,
            self.sent_us
        )
    }

    pub fn decode(line: &str) -> Result<Self, DecodeError> {
        let msg = Message::decode(line)?;
        let line = line.trim_end_matches(['\n', '\r']);
        let (_, items) = fields(line, 0)?;
        let f = Fields { items, end: line.len() };
        Ok(Self {
            src: f.get("src")?,
            dst: f.get("dst")?,
            seq: f.get("wire_seq")?,
            sent_us: f.get("t")?,
            msg,
        })
    }
}
