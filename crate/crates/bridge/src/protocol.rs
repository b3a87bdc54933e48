//! Wire format.
//!
//! Text frames carrying one JSON object each, tagged by `kind` and
//! versioned by a top-level `"v": 1`.
//!
//! Client to server:
//!
//! ```json
//! {"v":1,"kind":"hello","role":"operator_a"}
//! {"v":1,"kind":"strike","key":3}
//! ```
//!
//! Server to client: `hello` (the session's layout and capabilities, sent
//! once a role is granted), `light`, `progress`, `annotation`, `stats`,
//! `feedback` and `error`.

use std::fmt;
use std::str::FromStr;

use ipoxp_core::notes::{StrikeClass, XylophoneLayout};
use ipoxp_core::Side;
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    OperatorA,
    OperatorB,
    Audience,
}

impl Role {
    /// The side whose LEDs this role watches and whose strikes it makes.
    pub fn side(self) -> Option<Side> {
        match self {
            Role::OperatorA => Some(Side::A),
            Role::OperatorB => Some(Side::B),
            Role::Audience => None,
        }
    }

    pub fn operator(side: Side) -> Self {
        match side {
            Side::A => Role::OperatorA,
            Side::B => Role::OperatorB,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::OperatorA => "operator_a",
            Role::OperatorB => "operator_b",
            Role::Audience => "audience",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "operator_a" => Ok(Role::OperatorA),
            "operator_b" => Ok(Role::OperatorB),
            "audience" => Ok(Role::Audience),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}

/// Adds the version field around a message body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub v: u32,
    #[serde(flatten)]
    pub body: T,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClientMessage {
    /// The role stays a string so an unknown role can be told apart from a
    /// malformed message.
    Hello {
        role: String,
    },
    Strike {
        key: u16,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Malformed,
    UnsupportedVersion,
    UnknownRole,
    RoleTaken,
    AlreadyAttached,
    NotAttached,
    KeyOutOfRange,
    Forbidden,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyInfo {
    pub index: u16,
    pub name: String,
    pub accidental: bool,
}

pub fn layout_info(layout: &XylophoneLayout) -> Vec<KeyInfo> {
    layout.keys().iter().map(|k| KeyInfo { index: k.index.0, name: k.name.clone(), accidental: k.accidental }).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    /// Strikes are answered with a `feedback` classification.
    pub feedback: bool,
    /// Consoles should show only the keys and LEDs.
    pub restricted_view: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// A symbol leaves on an LED.
    Light,
    /// A key was struck and sensed on the far side.
    Strike,
    /// A symbol was never struck.
    Missed,
    /// The receiver assembled a byte.
    Byte,
    /// The receiver closed a SLIP frame.
    Frame,
    /// A datagram reached the receiving host.
    Packet,
    PingComplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationBody {
    pub offset: usize,
    pub field: String,
    pub value: String,
}

/// One step of a symbol's journey, for the audience animation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    /// Seconds since the session started.
    pub t: f64,
    /// The side acting: lighting arduino, striking operator, or receiving
    /// host.
    pub side: Side,
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<StrikeClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtt_s: Option<f64>,
    /// Fields decoded so far in the frame the receiver is assembling.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub annotations: Vec<AnnotationBody>,
}

impl Progress {
    pub fn new(t: f64, side: Side, phase: Phase) -> Self {
        Progress {
            t,
            side,
            phase,
            key: None,
            seq: None,
            value: None,
            class: None,
            rtt_s: None,
            annotations: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello {
        role: Role,
        layout: Vec<KeyInfo>,
        symbol_period_ms: f64,
        capabilities: Capabilities,
    },
    Light {
        key: u16,
        seq: u64,
        duration_ms: u64,
    },
    Progress(Progress),
    Annotation {
        t: f64,
        side: Side,
        #[serde(flatten)]
        body: AnnotationBody,
    },
    Stats {
        t: f64,
        symbols_sent: u64,
        strikes: u64,
        correct: u64,
        wrong_key: u64,
        missed: u64,
        spurious: u64,
        packets_sent: u64,
        packets_delivered: u64,
        pings_completed: u64,
        effective_baud: f64,
        rtts_s: Vec<f64>,
    },
    Feedback {
        key: u16,
        class: StrikeClass,
    },
    Error {
        code: ErrorCode,
        message: String,
    },
}

impl ServerMessage {
    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        ServerMessage::Error { code, message: message.into() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&Envelope { v: PROTOCOL_VERSION, body: self }).expect("messages serialize")
    }
}

impl ClientMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&Envelope { v: PROTOCOL_VERSION, body: self }).expect("messages serialize")
    }
}

/// Why an incoming frame was refused.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub code: ErrorCode,
    pub message: String,
}

/// A client frame after version and role checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Request {
    Hello(Role),
    Strike(u16),
}

pub fn parse_client(text: &str) -> Result<Request, Rejection> {
    let reject = |code, message: String| Rejection { code, message };
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| reject(ErrorCode::Malformed, e.to_string()))?;
    match value.get("v").and_then(serde_json::Value::as_u64) {
        Some(v) if v == u64::from(PROTOCOL_VERSION) => {}
        Some(v) => return Err(reject(ErrorCode::UnsupportedVersion, format!("protocol version {v} is not supported"))),
        None => return Err(reject(ErrorCode::Malformed, "missing protocol version `v`".into())),
    }
    let envelope: Envelope<ClientMessage> =
        serde_json::from_value(value).map_err(|e| reject(ErrorCode::Malformed, e.to_string()))?;
    match envelope.body {
        ClientMessage::Hello { role } => {
            role.parse().map(Request::Hello).map_err(|m| reject(ErrorCode::UnknownRole, m))
        }
        ClientMessage::Strike { key } => Ok(Request::Strike(key)),
    }
}

pub fn parse_server(text: &str) -> Result<ServerMessage, serde_json::Error> {
    let envelope: Envelope<ServerMessage> = serde_json::from_str(text)?;
    Ok(envelope.body)
}
