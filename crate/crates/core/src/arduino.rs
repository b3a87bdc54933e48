//! Layer-2 device of one side.
//!
//! The transmit half turns serial bytes from its host into a timed stream
//! of [`LightCommand`]s for the local operator. Pacing is open-loop: the
//! device senses only the remote xylophone, so it never waits for strikes.
//! The receive half collects strikes sensed on the remote xylophone and
//! hands each completed byte to its host. The halves share nothing but the
//! codec.

use std::collections::VecDeque;
use std::time::Duration;

use thiserror::Error;

use crate::notes::{DecodedByte, KeyIndex, LightCommand, NoteCodec, StrikeEvent};
use crate::time::SimTime;
use crate::Side;

pub const DEFAULT_TX_CAPACITY: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ArduinoError {
    #[error("transmit queue full: {queued} queued, {offered} offered, capacity {capacity}")]
    Backpressure { queued: usize, offered: usize, capacity: usize },
    #[error("strike on key {key} outside a {keys}-key layout")]
    KeyOutOfRange { key: KeyIndex, keys: usize },
}

#[derive(Debug, Clone)]
pub struct Arduino {
    side: Side,
    codec: NoteCodec,
    layout_keys: usize,
    symbol_period: Duration,
    capacity: usize,
    tx_queue: VecDeque<u8>,
    tx_symbols: VecDeque<KeyIndex>,
    next_symbol_at: SimTime,
    next_symbol_seq: u64,
    /// Bytes moved from the queue into `tx_symbols` so far.
    bytes_started: u64,
    rx_accumulator: Vec<KeyIndex>,
    rx_idle_reset: Option<Duration>,
    rx_last_strike: Option<SimTime>,
    rx_discarded: u64,
}

impl Arduino {
    pub fn new(side: Side, codec: NoteCodec, layout_keys: usize, symbol_period: Duration) -> Self {
        assert!(!symbol_period.is_zero(), "symbol period must be positive");
        Arduino {
            side,
            codec,
            layout_keys,
            symbol_period,
            capacity: DEFAULT_TX_CAPACITY,
            tx_queue: VecDeque::new(),
            tx_symbols: VecDeque::new(),
            next_symbol_at: SimTime::ZERO,
            next_symbol_seq: 0,
            bytes_started: 0,
            rx_accumulator: Vec::new(),
            rx_idle_reset: None,
            rx_last_strike: None,
            rx_discarded: 0,
        }
    }

    pub fn with_capacity(mut self, capacity: usize) -> Self {
        self.capacity = capacity;
        self
    }

    /// Discards a partial byte when the next strike comes more than `idle`
    /// after the previous one, so a lost symbol only damages the frame it
    /// fell in. Without this, alignment is purely positional forever.
    pub fn with_rx_idle_reset(mut self, idle: Option<Duration>) -> Self {
        self.rx_idle_reset = idle;
        self
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn codec(&self) -> &NoteCodec {
        &self.codec
    }

    pub fn symbol_period(&self) -> Duration {
        self.symbol_period
    }

    /// Symbols still to be lit, including queued bytes.
    pub fn pending_symbols(&self) -> usize {
        self.tx_symbols.len() + self.tx_queue.len() * self.codec.symbols_per_byte()
    }

    pub fn queued_bytes(&self) -> usize {
        self.tx_queue.len()
    }

    pub fn rx_pending(&self) -> usize {
        self.rx_accumulator.len()
    }

    /// Symbols thrown away by idle resynchronization so far.
    pub fn rx_discarded(&self) -> u64 {
        self.rx_discarded
    }

    /// Serial bytes arriving from the host at `now`. Emission happens in
    /// [`Arduino::tick`]; an idle transmitter restarts its schedule at `now`.
    /// The chunk is refused whole if it would overflow the queue.
    pub fn tx_feed_serial(&mut self, now: SimTime, data: &[u8]) -> Result<(), ArduinoError> {
        if data.is_empty() {
            return Ok(());
        }
        if self.tx_queue.len() + data.len() > self.capacity {
            return Err(ArduinoError::Backpressure {
                queued: self.tx_queue.len(),
                offered: data.len(),
                capacity: self.capacity,
            });
        }
        if self.pending_symbols() == 0 && self.next_symbol_at < now {
            self.next_symbol_at = now;
        }
        self.tx_queue.extend(data);
        Ok(())
    }

    /// When the next LightCommand is due, if any symbols remain.
    pub fn next_deadline(&self) -> Option<SimTime> {
        (self.pending_symbols() > 0).then_some(self.next_symbol_at)
    }

    /// Emits every symbol whose slot has started by `now`.
    pub fn tick(&mut self, now: SimTime) -> Vec<LightCommand> {
        let mut out = Vec::new();
        while now >= self.next_symbol_at {
            if self.tx_symbols.is_empty() {
                let Some(byte) = self.tx_queue.pop_front() else { break };
                self.tx_symbols.extend(self.codec.encode_byte(byte));
                self.bytes_started += 1;
            }
            let key = self.tx_symbols.pop_front().expect("refilled above");
            out.push(LightCommand {
                key,
                symbol_seq: self.next_symbol_seq,
                byte_seq: self.bytes_started - 1,
                on_time: self.next_symbol_at,
                duration: self.symbol_period,
            });
            self.next_symbol_seq += 1;
            self.next_symbol_at += self.symbol_period;
        }
        out
    }

    /// A strike sensed on the remote xylophone. Returns a byte for the host
    /// once a full symbol group has accumulated.
    pub fn rx_on_strike(&mut self, event: &StrikeEvent) -> Result<Option<DecodedByte>, ArduinoError> {
        if usize::from(event.key.0) >= self.layout_keys {
            return Err(ArduinoError::KeyOutOfRange { key: event.key, keys: self.layout_keys });
        }
        if let (Some(idle), Some(last)) = (self.rx_idle_reset, self.rx_last_strike) {
            if event.time.since(last) > idle && !self.rx_accumulator.is_empty() {
                self.rx_discarded += self.rx_accumulator.len() as u64;
                self.rx_accumulator.clear();
            }
        }
        self.rx_last_strike = Some(self.rx_last_strike.map_or(event.time, |t| t.max(event.time)));
        self.rx_accumulator.push(event.key);
        if self.rx_accumulator.len() < self.codec.symbols_per_byte() {
            return Ok(None);
        }
        let decoded = self.codec.decode_strikes(&self.rx_accumulator).expect("accumulator holds exactly one byte");
        self.rx_accumulator.clear();
        Ok(Some(decoded))
    }
}
