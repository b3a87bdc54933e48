//! IPv4 / ICMP echo datagrams.
//!
//! Building is strict (ihl 5, Don't Fragment, valid checksums). Parsing is
//! lenient: once 20 bytes with an IPv4 version nibble have arrived a packet
//! is always produced, and damage is reported through [`ChecksumStatus`] and
//! [`Integrity`] instead of an error.

use std::fmt;
use std::net::Ipv4Addr;

use serde::Serialize;
use thiserror::Error;

pub const IPV4_HEADER_LEN: usize = 20;
pub const ICMP_HEADER_LEN: usize = 8;
/// Largest echo payload that fits a single 1500-byte datagram.
pub const MAX_ECHO_PAYLOAD: usize = 1480;
pub const PROTO_ICMP: u8 = 1;
pub const ICMP_ECHO_REPLY: u8 = 0;
pub const ICMP_ECHO_REQUEST: u8 = 8;
pub const DEFAULT_TTL: u8 = 64;
const FLAG_DF: u16 = 0x4000;
const FLAG_MF: u16 = 0x2000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PacketError {
    #[error("truncated: {len} bytes is shorter than an IPv4 header")]
    Truncated { len: usize },
    #[error("malformed: version nibble is {version}, not 4")]
    Malformed { version: u8 },
    #[error("echo payload of {len} bytes exceeds the {MAX_ECHO_PAYLOAD}-byte limit")]
    PayloadTooLarge { len: usize },
    #[error("not an ICMP echo request")]
    NotEchoRequest,
}

/// Internet checksum: ones' complement of the ones' complement sum of
/// big-endian 16-bit words. An odd trailing byte is padded with zero.
pub fn compute_checksum(data: &[u8]) -> u16 {
    let mut sum: u32 = 0;
    let mut words = data.chunks_exact(2);
    for w in &mut words {
        sum += u32::from(u16::from_be_bytes([w[0], w[1]]));
    }
    if let [last] = words.remainder() {
        sum += u32::from(*last) << 8;
    }
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Ipv4Header {
    pub version: u8,
    /// Header length in 32-bit words.
    pub ihl: u8,
    pub dscp_ecn: u8,
    pub total_length: u16,
    pub identification: u16,
    pub flags_fragment: u16,
    pub ttl: u8,
    pub protocol: u8,
    pub header_checksum: u16,
    pub src_addr: Ipv4Addr,
    pub dst_addr: Ipv4Addr,
}

impl Ipv4Header {
    /// Serializes the fixed 20-byte part of the header.
    pub fn to_bytes(&self) -> [u8; IPV4_HEADER_LEN] {
        let mut b = [0u8; IPV4_HEADER_LEN];
        b[0] = (self.version << 4) | (self.ihl & 0x0f);
        b[1] = self.dscp_ecn;
        b[2..4].copy_from_slice(&self.total_length.to_be_bytes());
        b[4..6].copy_from_slice(&self.identification.to_be_bytes());
        b[6..8].copy_from_slice(&self.flags_fragment.to_be_bytes());
        b[8] = self.ttl;
        b[9] = self.protocol;
        b[10..12].copy_from_slice(&self.header_checksum.to_be_bytes());
        b[12..16].copy_from_slice(&self.src_addr.octets());
        b[16..20].copy_from_slice(&self.dst_addr.octets());
        b
    }

    fn from_prefix(b: &[u8]) -> Self {
        Ipv4Header {
            version: b[0] >> 4,
            ihl: b[0] & 0x0f,
            dscp_ecn: b[1],
            total_length: u16::from_be_bytes([b[2], b[3]]),
            identification: u16::from_be_bytes([b[4], b[5]]),
            flags_fragment: u16::from_be_bytes([b[6], b[7]]),
            ttl: b[8],
            protocol: b[9],
            header_checksum: u16::from_be_bytes([b[10], b[11]]),
            src_addr: Ipv4Addr::new(b[12], b[13], b[14], b[15]),
            dst_addr: Ipv4Addr::new(b[16], b[17], b[18], b[19]),
        }
    }

    /// Header length in bytes as used for slicing; an impossible ihl below 5
    /// is read as the minimum header.
    pub fn header_len(&self) -> usize {
        usize::from(self.ihl.max(5)) * 4
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IcmpEcho {
    pub icmp_type: u8,
    pub code: u8,
    pub checksum: u16,
    pub identifier: u16,
    pub sequence: u16,
    pub payload: Vec<u8>,
}

impl IcmpEcho {
    pub fn request(identifier: u16, sequence: u16, payload: Vec<u8>) -> Self {
        Self::with_type(ICMP_ECHO_REQUEST, identifier, sequence, payload)
    }

    fn with_type(icmp_type: u8, identifier: u16, sequence: u16, payload: Vec<u8>) -> Self {
        let mut echo = IcmpEcho { icmp_type, code: 0, checksum: 0, identifier, sequence, payload };
        echo.checksum = compute_checksum(&echo.to_bytes());
        echo
    }

    /// Reads an echo message; `None` when fewer than 8 bytes are present.
    pub fn parse(data: &[u8]) -> Option<Self> {
        if data.len() < ICMP_HEADER_LEN {
            return None;
        }
        Some(IcmpEcho {
            icmp_type: data[0],
            code: data[1],
            checksum: u16::from_be_bytes([data[2], data[3]]),
            identifier: u16::from_be_bytes([data[4], data[5]]),
            sequence: u16::from_be_bytes([data[6], data[7]]),
            payload: data[ICMP_HEADER_LEN..].to_vec(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(ICMP_HEADER_LEN + self.payload.len());
        out.push(self.icmp_type);
        out.push(self.code);
        out.extend_from_slice(&self.checksum.to_be_bytes());
        out.extend_from_slice(&self.identifier.to_be_bytes());
        out.extend_from_slice(&self.sequence.to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn is_request(&self) -> bool {
        self.icmp_type == ICMP_ECHO_REQUEST
    }

    pub fn is_reply(&self) -> bool {
        self.icmp_type == ICMP_ECHO_REPLY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ChecksumStatus {
    Valid,
    Invalid,
    /// Not enough bytes arrived to verify the upper-layer checksum.
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrity {
    Intact,
    Corrupted,
    Truncated,
}

/// A reconstructed datagram together with what went wrong on the way.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Ipv4Packet {
    pub header: Ipv4Header,
    /// Everything after the header.
    pub payload: Vec<u8>,
    pub checksum_status: ChecksumStatus,
    pub integrity: Integrity,
    pub header_checksum_ok: bool,
    /// `None` when the packet is not ICMP or the message is incomplete.
    pub icmp_checksum_ok: Option<bool>,
}

impl Ipv4Packet {
    pub fn icmp(&self) -> Option<IcmpEcho> {
        if self.header.protocol != PROTO_ICMP {
            return None;
        }
        IcmpEcho::parse(&self.payload)
    }

    /// True when anything about the packet is suspect.
    pub fn is_flagged(&self) -> bool {
        self.checksum_status != ChecksumStatus::Valid || self.integrity != Integrity::Intact
    }
}

fn assemble(src: Ipv4Addr, dst: Ipv4Addr, ttl: u8, identification: u16, icmp: &IcmpEcho) -> Vec<u8> {
    let icmp_bytes = icmp.to_bytes();
    let mut header = Ipv4Header {
        version: 4,
        ihl: 5,
        dscp_ecn: 0,
        total_length: (IPV4_HEADER_LEN + icmp_bytes.len()) as u16,
        identification,
        flags_fragment: FLAG_DF,
        ttl,
        protocol: PROTO_ICMP,
        header_checksum: 0,
        src_addr: src,
        dst_addr: dst,
    };
    header.header_checksum = compute_checksum(&header.to_bytes());
    let mut out = header.to_bytes().to_vec();
    out.extend_from_slice(&icmp_bytes);
    out
}

/// Serializes an ICMP echo request datagram. The IP identification field
/// carries the sequence number.
pub fn build_echo_request(
    src: Ipv4Addr,
    dst: Ipv4Addr,
    identifier: u16,
    sequence: u16,
    payload: &[u8],
    ttl: u8,
) -> Result<Vec<u8>, PacketError> {
    if payload.len() > MAX_ECHO_PAYLOAD {
        return Err(PacketError::PayloadTooLarge { len: payload.len() });
    }
    let icmp = IcmpEcho::request(identifier, sequence, payload.to_vec());
    Ok(assemble(src, dst, ttl, sequence, &icmp))
}

/// Answers an echo request: addresses swapped, identifier, sequence and
/// payload preserved, both checksums recomputed. The request's own checksums
/// are not consulted.
pub fn build_echo_reply(request: &Ipv4Packet) -> Result<Vec<u8>, PacketError> {
    let echo = request.icmp().filter(IcmpEcho::is_request).ok_or(PacketError::NotEchoRequest)?;
    if echo.payload.len() > MAX_ECHO_PAYLOAD {
        return Err(PacketError::PayloadTooLarge { len: echo.payload.len() });
    }
    let reply = IcmpEcho::with_type(ICMP_ECHO_REPLY, echo.identifier, echo.sequence, echo.payload);
    Ok(assemble(request.header.dst_addr, request.header.src_addr, DEFAULT_TTL, request.header.identification, &reply))
}

/// Reconstructs a datagram from whatever bytes arrived.
pub fn parse_ipv4(data: &[u8]) -> Result<Ipv4Packet, PacketError> {
    if data.len() < IPV4_HEADER_LEN {
        return Err(PacketError::Truncated { len: data.len() });
    }
    let header = Ipv4Header::from_prefix(data);
    if header.version != 4 {
        return Err(PacketError::Malformed { version: header.version });
    }
    let declared_hlen = usize::from(header.ihl) * 4;
    let hlen = header.header_len();
    let total = usize::from(header.total_length);

    let header_checksum_ok =
        header.ihl >= 5 && data.len() >= declared_hlen && compute_checksum(&data[..declared_hlen]) == 0;

    let integrity = if header.ihl < 5 || total < hlen || data.len() > total {
        Integrity::Corrupted
    } else if data.len() < total || data.len() < hlen {
        Integrity::Truncated
    } else {
        Integrity::Intact
    };

    let payload = data[hlen.min(data.len())..].to_vec();

    let icmp_checksum_ok =
        if header.protocol == PROTO_ICMP && integrity != Integrity::Truncated && payload.len() >= ICMP_HEADER_LEN {
            Some(compute_checksum(&payload) == 0)
        } else {
            None
        };

    let checksum_status = if !header_checksum_ok || icmp_checksum_ok == Some(false) {
        ChecksumStatus::Invalid
    } else if header.protocol == PROTO_ICMP && icmp_checksum_ok.is_none() {
        ChecksumStatus::Unknown
    } else {
        ChecksumStatus::Valid
    };

    Ok(Ipv4Packet { header, payload, checksum_status, integrity, header_checksum_ok, icmp_checksum_ok })
}

/// One decoded header field, produced the moment its last byte arrives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FieldAnnotation {
    pub byte_offset: usize,
    pub field_name: &'static str,
    pub value_text: String,
    pub raw_bytes: Vec<u8>,
}

impl fmt::Display for FieldAnnotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:>3}] {}: {}", self.byte_offset, self.field_name.replace('_', " "), self.value_text)
    }
}

/// Byte-at-a-time decoder for the audience display.
///
/// Feed bytes in arrival order; call [`FieldAnnotator::reset`] at every
/// frame boundary.
#[derive(Debug, Clone, Default)]
pub struct FieldAnnotator {
    seen: Vec<u8>,
    offset: usize,
}

// (name, first byte, last byte) of the fixed IPv4 header.
const IP_FIELDS: [(&str, usize, usize); 10] = [
    ("version_ihl", 0, 0),
    ("dscp_ecn", 1, 1),
    ("total_length", 2, 3),
    ("identification", 4, 5),
    ("flags_fragment", 6, 7),
    ("ttl", 8, 8),
    ("protocol", 9, 9),
    ("header_checksum", 10, 11),
    ("src_addr", 12, 15),
    ("dst_addr", 16, 19),
];

// Relative to the end of the IP header.
const ICMP_FIELDS: [(&str, usize, usize); 5] =
    [("icmp_type", 0, 0), ("icmp_code", 1, 1), ("icmp_checksum", 2, 3), ("identifier", 4, 5), ("sequence", 6, 7)];

impl FieldAnnotator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        self.seen.clear();
        self.offset = 0;
    }

    /// Bytes fed since the last reset.
    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn feed(&mut self, byte: u8) -> Vec<FieldAnnotation> {
        let at = self.offset;
        self.offset += 1;
        let hlen = self.header_len();
        // Only the headers are retained; the payload is merely counted.
        if at < hlen.max(IPV4_HEADER_LEN) + ICMP_HEADER_LEN {
            self.seen.push(byte);
        }

        let mut out = Vec::new();
        if let Some(&(name, start, end)) = IP_FIELDS.iter().find(|f| f.2 == at) {
            out.push(self.annotate(name, start, end));
        }
        let hlen = self.header_len();
        if self.protocol() == Some(PROTO_ICMP) && at >= hlen {
            let rel = at - hlen;
            if let Some(&(name, start, end)) = ICMP_FIELDS.iter().find(|f| f.2 == rel) {
                out.push(self.annotate(name, hlen + start, hlen + end));
            }
            if let Some(total) = self.total_length() {
                let body = hlen + ICMP_HEADER_LEN;
                if total > body && at + 1 == total {
                    out.push(FieldAnnotation {
                        byte_offset: at,
                        field_name: "payload",
                        value_text: format!("{} bytes", total - body),
                        raw_bytes: Vec::new(),
                    });
                }
            }
        }
        out
    }

    fn header_len(&self) -> usize {
        match self.seen.first() {
            Some(b) => usize::from((b & 0x0f).max(5)) * 4,
            None => IPV4_HEADER_LEN,
        }
    }

    fn protocol(&self) -> Option<u8> {
        self.seen.get(9).copied()
    }

    fn total_length(&self) -> Option<usize> {
        (self.seen.len() >= 4).then(|| usize::from(u16::from_be_bytes([self.seen[2], self.seen[3]])))
    }

    fn annotate(&self, name: &'static str, start: usize, end: usize) -> FieldAnnotation {
        let raw = self.seen[start..=end].to_vec();
        let word = || u16::from_be_bytes([raw[0], raw[1]]);
        let value_text = match name {
            "version_ihl" => format!("IPv{}, {}-byte header", raw[0] >> 4, usize::from(raw[0] & 0x0f) * 4),
            "dscp_ecn" => format!("0x{:02x}", raw[0]),
            "total_length" | "identification" | "identifier" | "sequence" => word().to_string(),
            "flags_fragment" => {
                let v = word();
                let mut flags = Vec::new();
                if v & FLAG_DF != 0 {
                    flags.push("DF");
                }
                if v & FLAG_MF != 0 {
                    flags.push("MF");
                }
                let flags = if flags.is_empty() { "none".to_string() } else { flags.join("+") };
                format!("{flags}, offset {}", v & 0x1fff)
            }
            "ttl" | "icmp_code" => raw[0].to_string(),
            "protocol" => match raw[0] {
                PROTO_ICMP => "1 (ICMP)".to_string(),
                6 => "6 (TCP)".to_string(),
                17 => "17 (UDP)".to_string(),
                p => p.to_string(),
            },
            "header_checksum" | "icmp_checksum" => format!("0x{:04x}", word()),
            "src_addr" | "dst_addr" => Ipv4Addr::new(raw[0], raw[1], raw[2], raw[3]).to_string(),
            "icmp_type" => match raw[0] {
                ICMP_ECHO_REQUEST => "8 (echo request)".to_string(),
                ICMP_ECHO_REPLY => "0 (echo reply)".to_string(),
                t => t.to_string(),
            },
            _ => format!("{raw:02x?}"),
        };
        FieldAnnotation { byte_offset: end, field_name: name, value_text, raw_bytes: raw }
    }
}

/// Runs a whole datagram through a fresh annotator.
pub fn annotate_all(data: &[u8]) -> Vec<FieldAnnotation> {
    let mut annotator = FieldAnnotator::new();
    data.iter().flat_map(|&b| annotator.feed(b)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 1);
    const B: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 2);

    // Independent oracle: sum 16-bit words in a u64, fold once at the end.
    fn oracle_checksum(data: &[u8]) -> u16 {
        let mut acc: u64 = 0;
        let mut i = 0;
        while i < data.len() {
            let hi = u64::from(data[i]);
            let lo = if i + 1 < data.len() { u64::from(data[i + 1]) } else { 0 };
            acc += hi * 256 + lo;
            i += 2;
        }
        while acc >> 16 != 0 {
            acc = (acc & 0xffff) + (acc >> 16);
        }
        0xffff - acc as u16
    }

    const SAMPLE_HEADER: [u8; 20] = [
        0x45, 0x00, 0x00, 0x3c, 0x1c, 0x46, 0x40, 0x00, 0x40, 0x06, 0x00, 0x00, 0xac, 0x10, 0x0a, 0x63, 0xac, 0x10,
        0x0a, 0x0c,
    ];

    #[test]
    fn checksum_of_empty_is_all_ones() {
        assert_eq!(compute_checksum(&[]), 0xffff);
    }

    #[test]
    fn checksum_of_sample_header() {
        assert_eq!(oracle_checksum(&SAMPLE_HEADER), 0xb1e6);
        assert_eq!(compute_checksum(&SAMPLE_HEADER), 0xb1e6);
    }

    #[test]
    fn checksum_inserted_verifies_to_zero() {
        let mut h = SAMPLE_HEADER;
        let c = compute_checksum(&h);
        h[10..12].copy_from_slice(&c.to_be_bytes());
        assert_eq!(compute_checksum(&h), 0);
    }

    #[test]
    fn odd_length_pads_with_zero() {
        assert_eq!(compute_checksum(&[0x12, 0x34, 0x56]), compute_checksum(&[0x12, 0x34, 0x56, 0x00]));
        assert_eq!(compute_checksum(&[0x12, 0x34, 0x56]), oracle_checksum(&[0x12, 0x34, 0x56]));
    }

    #[test]
    fn request_sizes() {
        assert_eq!(build_echo_request(A, B, 1, 1, &[0x61; 28], 64).unwrap().len(), 56);
        assert_eq!(build_echo_request(A, B, 1, 1, &[], 64).unwrap().len(), 28);
        assert_eq!(build_echo_request(A, B, 1, 1, &[0; 1481], 64), Err(PacketError::PayloadTooLarge { len: 1481 }));
        assert!(build_echo_request(A, B, 1, 1, &[0; 1480], 64).is_ok());
    }

    #[test]
    fn request_round_trip() {
        let bytes = build_echo_request(A, B, 0x1234, 7, b"hello xylophone", 64).unwrap();
        let p = parse_ipv4(&bytes).unwrap();
        assert_eq!(p.integrity, Integrity::Intact);
        assert_eq!(p.checksum_status, ChecksumStatus::Valid);
        assert_eq!(p.header.protocol, PROTO_ICMP);
        assert_eq!(p.header.src_addr, A);
        assert_eq!(p.header.dst_addr, B);
        assert_eq!(p.header.ttl, 64);
        assert_eq!(p.header.flags_fragment, FLAG_DF);
        let echo = p.icmp().unwrap();
        assert!(echo.is_request());
        assert_eq!((echo.identifier, echo.sequence), (0x1234, 7));
        assert_eq!(echo.payload, b"hello xylophone");
    }

    #[test]
    fn reply_swaps_and_preserves() {
        let req = parse_ipv4(&build_echo_request(A, B, 1, 1, b"abc", 64).unwrap()).unwrap();
        let reply = parse_ipv4(&build_echo_reply(&req).unwrap()).unwrap();
        assert_eq!(reply.checksum_status, ChecksumStatus::Valid);
        assert_eq!(reply.header.src_addr, B);
        assert_eq!(reply.header.dst_addr, A);
        let echo = reply.icmp().unwrap();
        assert!(echo.is_reply());
        assert_eq!((echo.identifier, echo.sequence, echo.payload.as_slice()), (1, 1, &b"abc"[..]));

        assert_eq!(build_echo_reply(&reply), Err(PacketError::NotEchoRequest));
    }

    #[test]
    fn reply_to_damaged_request_is_still_built() {
        let mut bytes = build_echo_request(A, B, 1, 1, &[0x55; 28], 64).unwrap();
        bytes[30] ^= 0x01;
        let req = parse_ipv4(&bytes).unwrap();
        assert_eq!(req.integrity, Integrity::Intact);
        assert_eq!(req.checksum_status, ChecksumStatus::Invalid);
        assert_eq!(req.icmp_checksum_ok, Some(false));
        assert!(req.header_checksum_ok);
        let reply = parse_ipv4(&build_echo_reply(&req).unwrap()).unwrap();
        assert_eq!(reply.checksum_status, ChecksumStatus::Valid);
    }

    #[test]
    fn parse_errors() {
        let bytes = build_echo_request(A, B, 1, 1, &[0; 28], 64).unwrap();
        assert_eq!(parse_ipv4(&bytes[..19]), Err(PacketError::Truncated { len: 19 }));
        let mut v6 = bytes.clone();
        v6[0] = 0x65;
        assert_eq!(parse_ipv4(&v6), Err(PacketError::Malformed { version: 6 }));
    }

    #[test]
    fn short_and_long_inputs_are_flagged() {
        let bytes = build_echo_request(A, B, 1, 1, &[0; 28], 64).unwrap();
        let short = parse_ipv4(&bytes[..40]).unwrap();
        assert_eq!(short.integrity, Integrity::Truncated);
        assert_eq!(short.checksum_status, ChecksumStatus::Unknown);

        let mut long = bytes.clone();
        long.push(0);
        assert_eq!(parse_ipv4(&long).unwrap().integrity, Integrity::Corrupted);
    }

    #[test]
    fn impossible_ihl_is_tolerated() {
        let mut bytes = build_echo_request(A, B, 1, 1, &[0; 28], 64).unwrap();
        bytes[0] = 0x44;
        let p = parse_ipv4(&bytes).unwrap();
        assert_eq!(p.integrity, Integrity::Corrupted);
        assert!(!p.header_checksum_ok);

        // A 60-byte header cannot fit a 56-byte datagram.
        bytes[0] = 0x4f;
        let p = parse_ipv4(&bytes).unwrap();
        assert_eq!(p.integrity, Integrity::Corrupted);
        assert!(p.payload.is_empty());
    }

    #[test]
    fn annotator_emits_total_length_on_fourth_byte() {
        let mut a = FieldAnnotator::new();
        let first = a.feed(0x45);
        assert_eq!(first.len(), 1);
        assert_eq!(first[0].field_name, "version_ihl");
        assert_eq!(first[0].value_text, "IPv4, 20-byte header");
        assert_eq!(a.feed(0x00)[0].field_name, "dscp_ecn");
        assert!(a.feed(0x00).is_empty());
        let fourth = a.feed(0x54);
        assert_eq!(fourth.len(), 1);
        assert_eq!(fourth[0].field_name, "total_length");
        assert_eq!(fourth[0].value_text, "84");
        assert_eq!(fourth[0].byte_offset, 3);
        assert_eq!(fourth[0].raw_bytes, vec![0x00, 0x54]);
    }

    #[test]
    fn annotator_offsets() {
        let bytes = build_echo_request(A, B, 9, 3, &[1; 28], 64).unwrap();
        let anns = annotate_all(&bytes);
        let at = |name: &str| anns.iter().find(|a| a.field_name == name).unwrap().byte_offset;
        assert_eq!(at("version_ihl"), 0);
        assert_eq!(at("total_length"), 3);
        assert_eq!(at("protocol"), 9);
        assert_eq!(at("header_checksum"), 11);
        assert_eq!(at("src_addr"), 15);
        assert_eq!(at("dst_addr"), 19);
        assert_eq!(at("icmp_type"), 20);
        assert_eq!(at("identifier"), 25);
        assert_eq!(at("sequence"), 27);
        assert_eq!(at("payload"), 55);
        let mut names: Vec<_> = anns.iter().map(|a| a.field_name).collect();
        let n = names.len();
        names.dedup();
        assert_eq!(names.len(), n, "each field annotated once");
    }

    #[test]
    fn annotator_survives_garbage() {
        let mut a = FieldAnnotator::new();
        for b in 0..=255u8 {
            a.feed(b);
        }
        a.reset();
        assert_eq!(a.offset(), 0);
        assert_eq!(a.feed(0x45)[0].byte_offset, 0);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn build_then_parse_round_trips(
                id in any::<u16>(),
                seq in any::<u16>(),
                ttl in 1u8..,
                payload in proptest::collection::vec(any::<u8>(), 0..=MAX_ECHO_PAYLOAD),
            ) {
                let bytes = build_echo_request(A, B, id, seq, &payload, ttl).unwrap();
                let p = parse_ipv4(&bytes).unwrap();
                prop_assert_eq!(p.header.src_addr, A);
                prop_assert_eq!(p.header.dst_addr, B);
                prop_assert_eq!(p.header.ttl, ttl);
                prop_assert_eq!(usize::from(p.header.total_length), bytes.len());
                prop_assert_eq!(p.checksum_status, ChecksumStatus::Valid);
                prop_assert!(!p.is_flagged());
                let echo = p.icmp().unwrap();
                prop_assert!(echo.is_request());
                prop_assert_eq!((echo.identifier, echo.sequence), (id, seq));
                prop_assert_eq!(echo.payload, payload);
            }

            #[test]
            fn inserted_checksum_verifies(mut data in proptest::collection::vec(any::<u8>(), 2..200), at in any::<prop::sample::Index>()) {
                let word = at.index(data.len() / 2) * 2;
                data[word] = 0;
                data[word + 1] = 0;
                let sum = compute_checksum(&data);
                prop_assert_eq!(sum, oracle_checksum(&data));
                data[word..word + 2].copy_from_slice(&sum.to_be_bytes());
                prop_assert_eq!(compute_checksum(&data), 0);
            }

            #[test]
            fn single_byte_corruption_is_flagged_not_rejected(
                payload in proptest::collection::vec(any::<u8>(), 0..64),
                at in any::<prop::sample::Index>(),
                mask in 1u8..,
            ) {
                let mut bytes = build_echo_request(A, B, 7, 9, &payload, 64).unwrap();
                let at = at.index(bytes.len());
                bytes[at] ^= if at == 0 { mask & 0x0f | 0x01 } else { mask };
                let p = parse_ipv4(&bytes).unwrap();
                prop_assert!(p.is_flagged());
            }

            #[test]
            fn annotations_agree_with_parser(
                id in any::<u16>(),
                seq in any::<u16>(),
                payload in proptest::collection::vec(any::<u8>(), 0..100),
            ) {
                let bytes = build_echo_request(A, B, id, seq, &payload, 64).unwrap();
                let p = parse_ipv4(&bytes).unwrap();
                let echo = p.icmp().unwrap();
                let anns = annotate_all(&bytes);
                let value = |name: &str| anns.iter().find(|a| a.field_name == name).map(|a| a.value_text.clone());
                prop_assert_eq!(value("total_length"), Some(p.header.total_length.to_string()));
                prop_assert_eq!(value("identification"), Some(p.header.identification.to_string()));
                prop_assert_eq!(value("ttl"), Some(p.header.ttl.to_string()));
                prop_assert_eq!(value("header_checksum"), Some(format!("0x{:04x}", p.header.header_checksum)));
                prop_assert_eq!(value("src_addr"), Some(A.to_string()));
                prop_assert_eq!(value("dst_addr"), Some(B.to_string()));
                prop_assert_eq!(value("identifier"), Some(echo.identifier.to_string()));
                prop_assert_eq!(value("sequence"), Some(echo.sequence.to_string()));
                for a in &anns {
                    prop_assert_eq!(&a.raw_bytes[..], &bytes[a.byte_offset + 1 - a.raw_bytes.len()..=a.byte_offset]);
                }
            }
        }
    }
}
