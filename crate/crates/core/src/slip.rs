//! Serial Line IP framing and the raw/hex serial representation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const END: u8 = 0xC0;
pub const ESC: u8 = 0xDB;
pub const ESC_END: u8 = 0xDC;
pub const ESC_ESC: u8 = 0xDD;

/// One datagram carried between two END delimiters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlipFrame {
    pub payload: Vec<u8>,
    /// Set when an ESC was followed by something other than ESC_END/ESC_ESC.
    pub corrupted: bool,
}

/// Wraps a payload as `END ‖ escaped(payload) ‖ END`.
pub fn slip_encode(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 2);
    out.push(END);
    for &b in payload {
        match b {
            END => out.extend_from_slice(&[ESC, ESC_END]),
            ESC => out.extend_from_slice(&[ESC, ESC_ESC]),
            _ => out.push(b),
        }
    }
    out.push(END);
    out
}

/// What a single wire byte did to the decoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SlipStep {
    /// The byte was consumed without producing data (an ESC, or an END
    /// closing an empty frame).
    Pending,
    /// One payload byte was decoded.
    Data(u8),
    /// An END closed a non-empty frame.
    Frame(SlipFrame),
}

/// Streaming SLIP decoder. Never fails: protocol violations become flags,
/// and any garbage is flushed by the next END.
#[derive(Debug, Clone, Default)]
pub struct SlipDecoder {
    buf: Vec<u8>,
    escaped: bool,
    corrupted: bool,
}

impl SlipDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Bytes of the frame currently being assembled.
    pub fn partial(&self) -> &[u8] {
        &self.buf
    }

    pub fn step(&mut self, byte: u8) -> SlipStep {
        if byte == END {
            if self.escaped {
                self.corrupted = true;
                self.escaped = false;
            }
            if self.buf.is_empty() {
                self.corrupted = false;
                return SlipStep::Pending;
            }
            let frame = SlipFrame { payload: std::mem::take(&mut self.buf), corrupted: self.corrupted };
            self.corrupted = false;
            return SlipStep::Frame(frame);
        }
        if self.escaped {
            self.escaped = false;
            let decoded = match byte {
                ESC_END => END,
                ESC_ESC => ESC,
                other => {
                    self.corrupted = true;
                    other
                }
            };
            self.buf.push(decoded);
            return SlipStep::Data(decoded);
        }
        if byte == ESC {
            self.escaped = true;
            return SlipStep::Pending;
        }
        self.buf.push(byte);
        SlipStep::Data(byte)
    }

    /// Feeds one byte; returns a frame when it completes one.
    pub fn push(&mut self, byte: u8) -> Option<SlipFrame> {
        match self.step(byte) {
            SlipStep::Frame(f) => Some(f),
            _ => None,
        }
    }

    pub fn decode_stream(&mut self, bytes: &[u8]) -> Vec<SlipFrame> {
        bytes.iter().filter_map(|&b| self.push(b)).collect()
    }
}

/// How octets are represented on the host ↔ arduino serial pipe.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SerialMode {
    /// Octets pass unchanged.
    #[default]
    RawSlip,
    /// Each octet becomes two uppercase ASCII hex characters.
    HexAscii,
}

impl SerialMode {
    /// Wire bytes per octet.
    pub fn expansion(self) -> usize {
        match self {
            SerialMode::RawSlip => 1,
            SerialMode::HexAscii => 2,
        }
    }
}

impl std::str::FromStr for SerialMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" | "raw_slip" | "raw-slip" => Ok(SerialMode::RawSlip),
            "hex" | "hex_ascii" | "hex-ascii" => Ok(SerialMode::HexAscii),
            _ => Err(format!("unknown serial mode `{s}` (expected raw_slip or hex_ascii)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ToWire,
    FromWire,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TranscodeError {
    #[error("invalid hex character 0x{byte:02x} at offset {offset}")]
    InvalidHex { offset: usize, byte: u8 },
    #[error("odd-length hex input: dangling character at offset {offset}")]
    OddLength { offset: usize },
}

const HEX_DIGITS: &[u8; 16] = b"0123456789ABCDEF";

fn hex_value(c: u8) -> Option<u8> {
    match c {
        b'0'..=b'9' => Some(c - b'0'),
        b'a'..=b'f' => Some(c - b'a' + 10),
        b'A'..=b'F' => Some(c - b'A' + 10),
        _ => None,
    }
}

pub fn serial_transcode(data: &[u8], direction: Direction, mode: SerialMode) -> Result<Vec<u8>, TranscodeError> {
    match (mode, direction) {
        (SerialMode::RawSlip, _) => Ok(data.to_vec()),
        (SerialMode::HexAscii, Direction::ToWire) => Ok(data
            .iter()
            .flat_map(|&b| [HEX_DIGITS[usize::from(b >> 4)], HEX_DIGITS[usize::from(b & 0x0f)]])
            .collect()),
        (SerialMode::HexAscii, Direction::FromWire) => {
            let mut out = Vec::with_capacity(data.len() / 2);
            let mut pairs = data.chunks_exact(2);
            for (i, pair) in (&mut pairs).enumerate() {
                let nibble = |k: usize| {
                    hex_value(pair[k]).ok_or(TranscodeError::InvalidHex { offset: 2 * i + k, byte: pair[k] })
                };
                out.push((nibble(0)? << 4) | nibble(1)?);
            }
            if !pairs.remainder().is_empty() {
                let offset = data.len() - 1;
                return match hex_value(data[offset]) {
                    Some(_) => Err(TranscodeError::OddLength { offset }),
                    None => Err(TranscodeError::InvalidHex { offset, byte: data[offset] }),
                };
            }
            Ok(out)
        }
    }
}

/// Streaming from-wire decoder used on the receive path.
#[derive(Debug, Clone, Default)]
pub struct SerialDecoder {
    mode: SerialMode,
    high: Option<u8>,
    offset: usize,
}

impl SerialDecoder {
    pub fn new(mode: SerialMode) -> Self {
        SerialDecoder { mode, high: None, offset: 0 }
    }

    /// Returns the next octet once enough wire bytes arrived. In hex mode a
    /// non-hex character yields an error and is skipped.
    ///
    /// Nibble phase is not recovered: a lost character shifts every later
    /// pair until another character is lost.
    pub fn push(&mut self, byte: u8) -> Result<Option<u8>, TranscodeError> {
        let offset = self.offset;
        self.offset += 1;
        match self.mode {
            SerialMode::RawSlip => Ok(Some(byte)),
            SerialMode::HexAscii => {
                let v = hex_value(byte).ok_or(TranscodeError::InvalidHex { offset, byte })?;
                match self.high.take() {
                    None => {
                        self.high = Some(v);
                        Ok(None)
                    }
                    Some(h) => Ok(Some((h << 4) | v)),
                }
            }
        }
    }
}
