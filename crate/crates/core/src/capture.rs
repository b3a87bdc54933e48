//! Classic libpcap capture files with raw-IP link type.

use std::io::{self, Write};

use crate::time::SimTime;

/// `LINKTYPE_RAW`: each record is a bare IPv4/IPv6 datagram.
pub const LINKTYPE_RAW: u32 = 101;
const MAGIC_USEC: u32 = 0xa1b2_c3d4;
const SNAPLEN: u32 = 65_535;

pub struct PcapWriter<W: Write> {
    inner: W,
}

impl<W: Write> PcapWriter<W> {
    /// Writes the global header.
    pub fn new(mut inner: W) -> io::Result<Self> {
        inner.write_all(&MAGIC_USEC.to_le_bytes())?;
        inner.write_all(&2u16.to_le_bytes())?;
        inner.write_all(&4u16.to_le_bytes())?;
        inner.write_all(&0i32.to_le_bytes())?; // thiszone
        inner.write_all(&0u32.to_le_bytes())?; // sigfigs
        inner.write_all(&SNAPLEN.to_le_bytes())?;
        inner.write_all(&LINKTYPE_RAW.to_le_bytes())?;
        Ok(PcapWriter { inner })
    }

    /// Appends one datagram stamped with its virtual arrival time.
    pub fn write_packet(&mut self, at: SimTime, data: &[u8]) -> io::Result<()> {
        let ns = at.as_nanos();
        let secs = (ns / 1_000_000_000) as u32;
        let usecs = ((ns % 1_000_000_000) / 1_000) as u32;
        let captured = data.len().min(SNAPLEN as usize);
        self.inner.write_all(&secs.to_le_bytes())?;
        self.inner.write_all(&usecs.to_le_bytes())?;
        self.inner.write_all(&(captured as u32).to_le_bytes())?;
        self.inner.write_all(&(data.len() as u32).to_le_bytes())?;
        self.inner.write_all(&data[..captured])
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

/// A parsed capture record, for checking our own output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PcapRecord {
    pub secs: u32,
    pub usecs: u32,
    pub data: Vec<u8>,
}

/// Reads back a little-endian microsecond capture. Returns the link type
/// and the records, or `None` if the bytes are not such a file.
pub fn read_pcap(bytes: &[u8]) -> Option<(u32, Vec<PcapRecord>)> {
    let u32_at = |b: &[u8], i: usize| b.get(i..i + 4).map(|s| u32::from_le_bytes(s.try_into().unwrap()));
    if u32_at(bytes, 0)? != MAGIC_USEC {
        return None;
    }
    let linktype = u32_at(bytes, 20)?;
    let mut records = Vec::new();
    let mut at = 24;
    while at < bytes.len() {
        let secs = u32_at(bytes, at)?;
        let usecs = u32_at(bytes, at + 4)?;
        let incl = u32_at(bytes, at + 8)? as usize;
        let data = bytes.get(at + 16..at + 16 + incl)?.to_vec();
        records.push(PcapRecord { secs, usecs, data });
        at += 16 + incl;
    }
    Some((linktype, records))
}
