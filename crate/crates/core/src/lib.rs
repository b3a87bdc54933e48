//! IPv4 over a human-keyed xylophone link.
//!
//! Two virtual hosts exchange real IPv4/ICMP datagrams. Each host frames
//! its datagrams with SLIP and writes them to a virtual arduino, which lights
//! one xylophone key per symbol for its operator. The operator's strikes are
//! sensed by the *other* side's arduino, decoded back into bytes and handed
//! up to the other host.
//!
//! ```text
//!  host A ── serial ──> arduino A ── LEDs ──> operator A ── strikes ──> arduino B ── serial ──> host B
//!  host A <── serial ── arduino A <── strikes ── operator B <── LEDs ── arduino B <── serial ── host B
//! ```
//!
//! [`link::LinkSession`] wires the pieces together on a discrete-event clock.

pub mod arduino;
pub mod capture;
pub mod host;
pub mod link;
pub mod notes;
pub mod operator;
pub mod packet;
pub mod scenario;
pub mod slip;
pub mod time;

use serde::{Deserialize, Serialize};

pub use link::{LinkSession, LinkStats, SessionConfig};
pub use time::SimTime;

/// One end of the link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn other(self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Side::A => 0,
            Side::B => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::A => "A",
            Side::B => "B",
        }
    }
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
