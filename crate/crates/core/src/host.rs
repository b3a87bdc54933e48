//! Layer-3 endpoint: ping client, echo responder and the live field display.
//!
//! Outbound datagrams are SLIP-framed first and then transcoded for the
//! serial pipe; inbound bytes travel the reverse path one at a time.

use std::collections::{BTreeMap, HashSet};
use std::net::Ipv4Addr;
use std::ops::Range;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::packet::{
    build_echo_reply, build_echo_request, parse_ipv4, ChecksumStatus, FieldAnnotation, FieldAnnotator, Ipv4Packet,
    PacketError, DEFAULT_TTL,
};
use crate::slip::{
    serial_transcode, slip_encode, Direction, SerialDecoder, SerialMode, SlipDecoder, SlipStep, TranscodeError,
};
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HostConfig {
    pub address: Ipv4Addr,
    pub label: String,
    /// Drop packets whose checksums do not verify instead of flagging them.
    pub strict_checksums: bool,
    pub serial_mode: SerialMode,
    pub ttl: u8,
}

impl Default for HostConfig {
    fn default() -> Self {
        HostConfig {
            address: Ipv4Addr::new(10, 0, 0, 1),
            label: "sender".into(),
            strict_checksums: false,
            serial_mode: SerialMode::RawSlip,
            ttl: DEFAULT_TTL,
        }
    }
}

impl HostConfig {
    pub fn new(address: Ipv4Addr, label: &str) -> Self {
        HostConfig { address, label: label.into(), ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HostError {
    #[error("ping {identifier}/{sequence} is already outstanding")]
    DuplicatePending { identifier: u16, sequence: u16 },
    #[error("refusing to ping own address {0}")]
    OwnAddress(Ipv4Addr),
    #[error(transparent)]
    Packet(#[from] PacketError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DatagramKind {
    EchoRequest,
    EchoReply,
}

/// Bytes handed to the serial pipe for one datagram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransmitAction {
    pub kind: DatagramKind,
    pub identifier: u16,
    pub sequence: u16,
    pub datagram: Vec<u8>,
    /// Framed and transcoded.
    pub wire: Vec<u8>,
    /// Where the escaped datagram sits inside `wire` (between delimiters).
    pub datagram_wire: Range<usize>,
}

/// A datagram that made it up to layer 3, damaged or not.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub packet: Ipv4Packet,
    pub bytes: Vec<u8>,
    pub slip_corrupted: bool,
}

impl Delivery {
    pub fn flagged(&self) -> bool {
        self.slip_corrupted || self.packet.is_flagged()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HostEvent {
    Annotation(FieldAnnotation),
    SerialError(TranscodeError),
    /// A SLIP frame closed.
    Frame {
        len: usize,
        corrupted: bool,
    },
    /// A frame too damaged to be read as IPv4 at all.
    Unparseable {
        error: PacketError,
        bytes: Vec<u8>,
    },
    Delivered(Delivery),
    /// Strict mode refused a packet.
    Dropped {
        reason: String,
        bytes: Vec<u8>,
    },
    Reply(TransmitAction),
    PingCompleted {
        identifier: u16,
        sequence: u16,
        rtt: Duration,
        flagged: bool,
    },
    UnmatchedReply {
        identifier: u16,
        sequence: u16,
    },
    DuplicateReply {
        identifier: u16,
        sequence: u16,
    },
}

#[derive(Debug, Clone)]
pub struct Host {
    config: HostConfig,
    serial: SerialDecoder,
    slip: SlipDecoder,
    annotator: FieldAnnotator,
    pending: BTreeMap<(u16, u16), SimTime>,
    completed: HashSet<(u16, u16)>,
}

impl Host {
    pub fn new(config: HostConfig) -> Self {
        Host {
            serial: SerialDecoder::new(config.serial_mode),
            config,
            slip: SlipDecoder::new(),
            annotator: FieldAnnotator::new(),
            pending: BTreeMap::new(),
            completed: HashSet::new(),
        }
    }

    pub fn config(&self) -> &HostConfig {
        &self.config
    }

    pub fn address(&self) -> Ipv4Addr {
        self.config.address
    }

    /// Outstanding pings in (identifier, sequence) order with their send times.
    pub fn pending(&self) -> impl Iterator<Item = ((u16, u16), SimTime)> + '_ {
        self.pending.iter().map(|(k, v)| (*k, *v))
    }

    pub fn is_completed(&self, identifier: u16, sequence: u16) -> bool {
        self.completed.contains(&(identifier, sequence))
    }

    fn frame(&self, kind: DatagramKind, identifier: u16, sequence: u16, datagram: Vec<u8>) -> TransmitAction {
        let framed = slip_encode(&datagram);
        let wire = serial_transcode(&framed, Direction::ToWire, self.config.serial_mode)
            .expect("to-wire transcoding is infallible");
        let delim = self.config.serial_mode.expansion();
        let datagram_wire = delim..wire.len() - delim;
        TransmitAction { kind, identifier, sequence, datagram, wire, datagram_wire }
    }

    pub fn send_ping(
        &mut self,
        now: SimTime,
        dst: Ipv4Addr,
        identifier: u16,
        sequence: u16,
        payload: &[u8],
    ) -> Result<TransmitAction, HostError> {
        if dst == self.config.address {
            return Err(HostError::OwnAddress(dst));
        }
        let key = (identifier, sequence);
        if self.pending.contains_key(&key) {
            return Err(HostError::DuplicatePending { identifier, sequence });
        }
        let datagram = build_echo_request(self.config.address, dst, identifier, sequence, payload, self.config.ttl)?;
        self.pending.insert(key, now);
        Ok(self.frame(DatagramKind::EchoRequest, identifier, sequence, datagram))
    }

    /// One byte from the serial pipe.
    pub fn on_serial_byte(&mut self, now: SimTime, byte: u8) -> Vec<HostEvent> {
        let octet = match self.serial.push(byte) {
            Ok(Some(o)) => o,
            Ok(None) => return Vec::new(),
            Err(e) => return vec![HostEvent::SerialError(e)],
        };
        match self.slip.step(octet) {
            SlipStep::Pending => Vec::new(),
            SlipStep::Data(b) => self.annotator.feed(b).into_iter().map(HostEvent::Annotation).collect(),
            SlipStep::Frame(frame) => {
                self.annotator.reset();
                let mut events = vec![HostEvent::Frame { len: frame.payload.len(), corrupted: frame.corrupted }];
                self.on_frame(now, frame.payload, frame.corrupted, &mut events);
                events
            }
        }
    }

    fn on_frame(&mut self, now: SimTime, bytes: Vec<u8>, slip_corrupted: bool, events: &mut Vec<HostEvent>) {
        let packet = match parse_ipv4(&bytes) {
            Ok(p) => p,
            Err(error) => {
                events.push(HostEvent::Unparseable { error, bytes });
                return;
            }
        };
        if self.config.strict_checksums && packet.checksum_status != ChecksumStatus::Valid {
            let reason = format!("checksum {:?}", packet.checksum_status).to_lowercase();
            events.push(HostEvent::Dropped { reason, bytes });
            return;
        }
        let delivery = Delivery { packet, bytes, slip_corrupted };
        let flagged = delivery.flagged();
        let echo = delivery.packet.icmp();
        let reply = build_echo_reply(&delivery.packet).ok();
        events.push(HostEvent::Delivered(delivery));

        let Some(echo) = echo else { return };
        if let Some(datagram) = reply {
            events.push(HostEvent::Reply(self.frame(
                DatagramKind::EchoReply,
                echo.identifier,
                echo.sequence,
                datagram,
            )));
        } else if echo.is_reply() {
            let key = (echo.identifier, echo.sequence);
            let (identifier, sequence) = key;
            if let Some(sent) = self.pending.remove(&key) {
                self.completed.insert(key);
                events.push(HostEvent::PingCompleted { identifier, sequence, rtt: now - sent, flagged });
            } else if self.completed.contains(&key) {
                events.push(HostEvent::DuplicateReply { identifier, sequence });
            } else {
                events.push(HostEvent::UnmatchedReply { identifier, sequence });
            }
        }
    }
}
