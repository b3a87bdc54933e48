//! Discrete-event session engine.
//!
//! A [`LinkSession`] owns both hosts, both arduinos and both operators and
//! processes their interactions in timestamp order. Events that share a
//! timestamp are ordered by component id (host A, arduino A, operator A,
//! host B, arduino B, operator B) and then by the order they were scheduled.
//!
//! Wiring is crossed: operator A watches arduino A's LEDs, and its strikes
//! land on the xylophone sensed by arduino B.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, HashSet, VecDeque};
use std::net::Ipv4Addr;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::arduino::{Arduino, ArduinoError, DEFAULT_TX_CAPACITY};
use crate::capture::PcapWriter;
use crate::host::{DatagramKind, Host, HostConfig, HostEvent, TransmitAction};
use crate::notes::{
    classify_strike, CodecError, KeyIndex, LightCommand, NoteCodec, StrikeClass, StrikeEvent, XylophoneLayout,
};
use crate::operator::{Operator, OperatorError, OperatorModel};
use crate::packet::{ChecksumStatus, Integrity};
use crate::time::SimTime;
use crate::Side;

pub const DEFAULT_SYMBOL_PERIOD: Duration = Duration::from_secs(2);
pub const DEFAULT_MAX_EVENTS: u64 = 1_000_000;
pub const DEFAULT_RX_RESYNC_PERIODS: u32 = 8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    #[default]
    Virtual,
    /// Virtual durations map 1:1 onto wall time.
    Realtime,
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub layout: XylophoneLayout,
    pub codec: NoteCodec,
    pub symbol_period: Duration,
    /// How far from its LED a strike may land and still count; defaults to
    /// one symbol period.
    pub strike_window: Option<Duration>,
    pub operator_a: OperatorModel,
    pub operator_b: OperatorModel,
    pub host_a: HostConfig,
    pub host_b: HostConfig,
    pub clock_mode: ClockMode,
    pub seed: u64,
    pub max_events: u64,
    pub tx_capacity: usize,
    /// Receivers drop a partial byte after this many silent symbol periods.
    /// `None` keeps byte alignment purely positional.
    pub rx_resync_periods: Option<u32>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        let layout = XylophoneLayout::diatonic13();
        SessionConfig {
            codec: NoteCodec::default_for(&layout),
            layout,
            symbol_period: DEFAULT_SYMBOL_PERIOD,
            strike_window: None,
            operator_a: OperatorModel::default(),
            operator_b: OperatorModel::default(),
            host_a: HostConfig::new(Ipv4Addr::new(10, 0, 0, 1), "sender"),
            host_b: HostConfig::new(Ipv4Addr::new(10, 0, 0, 2), "receiver"),
            clock_mode: ClockMode::Virtual,
            seed: 0,
            max_events: DEFAULT_MAX_EVENTS,
            tx_capacity: DEFAULT_TX_CAPACITY,
            rx_resync_periods: Some(DEFAULT_RX_RESYNC_PERIODS),
        }
    }
}

impl SessionConfig {
    pub fn window(&self) -> Duration {
        self.strike_window.unwrap_or(self.symbol_period)
    }

    /// Time from queueing a frame of `wire_len` serial bytes to its last
    /// strike landing on the far side, for a perfect operator.
    pub fn ideal_one_way(&self, wire_len: usize, reaction: Duration) -> Duration {
        let symbols = (wire_len * self.codec.symbols_per_byte()) as u32;
        self.symbol_period * symbols.saturating_sub(1) + reaction
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinkError {
    #[error("both hosts use address {0}")]
    SameAddress(Ipv4Addr),
    #[error("hosts disagree on serial mode")]
    SerialModeMismatch,
    #[error("symbol period must be positive")]
    ZeroPeriod,
    #[error("codec does not fit the layout: {0}")]
    Codec(#[from] CodecError),
    #[error("operator {side}: {source}")]
    Operator { side: Side, source: OperatorError },
    #[error("realtime sessions cannot run to a virtual deadline")]
    RealtimeUntil,
    #[error("event at {at} is before the session clock {now}")]
    Stale { at: SimTime, now: SimTime },
    #[error("event id {0} is already pending")]
    DuplicateEvent(u64),
    #[error(transparent)]
    Arduino(#[from] ArduinoError),
    #[error("event cap of {cap} reached at {now} with {pending} events still pending")]
    EventCap { cap: u64, now: SimTime, pending: usize },
    #[error("unknown log format `{0}` (expected jsonl or pcap)")]
    UnknownFormat(String),
}

/// Something put on the queue from outside the session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Injection {
    /// Caller-chosen id; must not collide with another pending injection.
    pub id: u64,
    pub at: SimTime,
    pub event: InjectedEvent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InjectedEvent {
    /// A key struck by `operator`, sensed by the opposite arduino.
    Strike { operator: Side, key: KeyIndex },
    /// `from` pings the other host.
    Ping { from: Side, identifier: u16, sequence: u16, payload: Vec<u8> },
}

/// Deliberate damage applied while the session runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Suppress the `index`-th (0-based) strike produced by `operator`.
    DropStrike { operator: Side, index: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunLimit {
    Until(SimTime),
    Quiescence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogFormat {
    Jsonl,
    Pcap,
}

impl FromStr for LogFormat {
    type Err = LinkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(LogFormat::Jsonl),
            "pcap" => Ok(LogFormat::Pcap),
            other => Err(LinkError::UnknownFormat(other.to_string())),
        }
    }
}

fn secs<S: Serializer>(t: &SimTime, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(t.as_secs_f64())
}

fn dur_secs<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogEntry {
    #[serde(serialize_with = "secs")]
    pub t: SimTime,
    #[serde(flatten)]
    pub event: LogEvent,
    pub side: Side,
}

/// Log payloads. `side` on the entry is the side that acted: the lighting
/// arduino, the striking operator, or the host that sent or received.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogEvent {
    Light {
        key: KeyIndex,
        seq: u64,
        byte_seq: u64,
        #[serde(serialize_with = "dur_secs")]
        duration: Duration,
    },
    Strike {
        key: KeyIndex,
        class: StrikeClass,
        injected: bool,
    },
    Missed {
        key: KeyIndex,
        seq: u64,
    },
    FaultDrop {
        key: KeyIndex,
        index: u64,
    },
    RxResync {
        discarded: u64,
    },
    Byte {
        value: u8,
        valid: bool,
    },
    Transmit {
        datagram: DatagramKind,
        identifier: u16,
        sequence: u16,
        wire_bytes: usize,
        datagram_bytes: usize,
        first_byte_seq: u64,
    },
    Backpressure {
        offered: usize,
    },
    PingRejected {
        error: String,
    },
    SerialError {
        error: String,
    },
    Annotation {
        offset: usize,
        field: &'static str,
        value: String,
    },
    Frame {
        len: usize,
        corrupted: bool,
    },
    Unparseable {
        len: usize,
        error: String,
    },
    Packet {
        len: usize,
        src: Ipv4Addr,
        dst: Ipv4Addr,
        protocol: u8,
        icmp_type: Option<u8>,
        identifier: Option<u16>,
        sequence: Option<u16>,
        checksum: ChecksumStatus,
        integrity: Integrity,
        flagged: bool,
        hex: String,
    },
    Dropped {
        len: usize,
        reason: String,
    },
    PingComplete {
        identifier: u16,
        sequence: u16,
        #[serde(serialize_with = "dur_secs")]
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

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    pub correct: u64,
    pub wrong_key: u64,
    pub missed: u64,
    pub spurious: u64,
}

impl ClassCounts {
    fn bump(&mut self, class: StrikeClass) {
        match class {
            StrikeClass::Correct => self.correct += 1,
            StrikeClass::WrongKey => self.wrong_key += 1,
            StrikeClass::Missed => self.missed += 1,
            StrikeClass::Spurious => self.spurious += 1,
        }
    }

    pub fn get(&self, class: StrikeClass) -> u64 {
        match class {
            StrikeClass::Correct => self.correct,
            StrikeClass::WrongKey => self.wrong_key,
            StrikeClass::Missed => self.missed,
            StrikeClass::Spurious => self.spurious,
        }
    }
}

/// Keying of one transmitted frame, reconstructed from the light log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameTiming {
    pub side: Side,
    pub kind: DatagramKind,
    pub identifier: u16,
    pub sequence: u16,
    pub wire_bytes: usize,
    pub datagram_bytes: usize,
    #[serde(serialize_with = "secs")]
    pub queued_at: SimTime,
    /// Time from the first LED of the frame to the end of its last symbol.
    #[serde(serialize_with = "dur_secs")]
    pub keying: Duration,
    /// Same, for the datagram alone (delimiters excluded).
    #[serde(serialize_with = "dur_secs")]
    pub datagram_keying: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkStats {
    pub symbols_sent: u64,
    pub strikes: u64,
    pub strike_classes: ClassCounts,
    pub bytes_delivered: u64,
    pub frames_delivered: u64,
    pub packets_sent: u64,
    pub packets_delivered: u64,
    pub packets_flagged: u64,
    pub pings_completed: u64,
    /// Symbols per second of keying time.
    pub effective_baud: f64,
    /// Delivered datagram bits per second of session time.
    pub goodput_bps: f64,
    #[serde(serialize_with = "rtt_secs")]
    pub rtts: Vec<Duration>,
    /// Time during which some transmitter had an LED lit, summed per side.
    #[serde(serialize_with = "dur_secs")]
    pub elapsed: Duration,
    #[serde(serialize_with = "secs")]
    pub session_time: SimTime,
    /// Fully keyed frames only.
    pub frames: Vec<FrameTiming>,
}

fn rtt_secs<S: Serializer>(rtts: &[Duration], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(rtts.iter().map(Duration::as_secs_f64))
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Scheduled {
    Tick(Side),
    Strike { strike: StrikeEvent, injected: Option<u64> },
    Ping { from: Side, identifier: u16, sequence: u16, payload: Vec<u8>, injected: Option<u64> },
    Expire { side: Side, seq: u64 },
}

impl Scheduled {
    fn component(&self) -> u8 {
        let (side, offset) = match self {
            Scheduled::Ping { from, .. } => (*from, 0),
            Scheduled::Tick(side) | Scheduled::Expire { side, .. } => (*side, 1),
            Scheduled::Strike { strike, .. } => (strike.source, 2),
        };
        side.index() as u8 * 3 + offset
    }

    fn injected(&self) -> Option<u64> {
        match self {
            Scheduled::Strike { injected, .. } | Scheduled::Ping { injected, .. } => *injected,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Queued {
    at: SimTime,
    component: u8,
    seq: u64,
    event: Scheduled,
}

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.at, self.component, self.seq).cmp(&(other.at, other.component, other.seq))
    }
}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
struct Outstanding {
    command: LightCommand,
    matched: bool,
}

#[derive(Debug, Clone)]
struct TxRecord {
    side: Side,
    action_kind: DatagramKind,
    identifier: u16,
    sequence: u16,
    queued_at: SimTime,
    first_byte_seq: u64,
    wire_bytes: usize,
    datagram_wire: std::ops::Range<usize>,
    datagram_bytes: usize,
}

pub struct LinkSession {
    config: SessionConfig,
    hosts: [Host; 2],
    arduinos: [Arduino; 2],
    operators: [Operator; 2],
    queue: BinaryHeap<Reverse<Queued>>,
    next_seq: u64,
    now: SimTime,
    log: Vec<LogEntry>,
    deliveries: Vec<(SimTime, Vec<u8>)>,
    outstanding: [VecDeque<Outstanding>; 2],
    tick_at: [Option<SimTime>; 2],
    pending_ids: HashSet<u64>,
    faults: Vec<Fault>,
    strikes_emitted: [u64; 2],
    wire_fed: [u64; 2],
    tx_records: Vec<TxRecord>,
    processed: u64,
    epoch: Option<Instant>,
}

impl LinkSession {
    pub fn new(config: SessionConfig) -> Result<Self, LinkError> {
        if config.host_a.address == config.host_b.address {
            return Err(LinkError::SameAddress(config.host_a.address));
        }
        if config.host_a.serial_mode != config.host_b.serial_mode {
            return Err(LinkError::SerialModeMismatch);
        }
        if config.symbol_period.is_zero() {
            return Err(LinkError::ZeroPeriod);
        }
        config.codec.validate(&config.layout)?;
        for (side, model) in [(Side::A, &config.operator_a), (Side::B, &config.operator_b)] {
            model.validate().map_err(|source| LinkError::Operator { side, source })?;
        }
        let keys = config.layout.len();
        let arduino = |side| {
            Arduino::new(side, config.codec.clone(), keys, config.symbol_period)
                .with_capacity(config.tx_capacity)
                .with_rx_idle_reset(config.rx_resync_periods.map(|n| config.symbol_period * n))
        };
        Ok(LinkSession {
            hosts: [Host::new(config.host_a.clone()), Host::new(config.host_b.clone())],
            arduinos: [arduino(Side::A), arduino(Side::B)],
            operators: [
                Operator::new(Side::A, config.operator_a.clone(), keys, config.seed),
                Operator::new(Side::B, config.operator_b.clone(), keys, config.seed),
            ],
            config,
            queue: BinaryHeap::new(),
            next_seq: 0,
            now: SimTime::ZERO,
            log: Vec::new(),
            deliveries: Vec::new(),
            outstanding: [VecDeque::new(), VecDeque::new()],
            tick_at: [None, None],
            pending_ids: HashSet::new(),
            faults: Vec::new(),
            strikes_emitted: [0, 0],
            wire_fed: [0, 0],
            tx_records: Vec::new(),
            processed: 0,
            epoch: None,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn host(&self, side: Side) -> &Host {
        &self.hosts[side.index()]
    }

    pub fn arduino(&self, side: Side) -> &Arduino {
        &self.arduinos[side.index()]
    }

    pub fn operator(&self, side: Side) -> &Operator {
        &self.operators[side.index()]
    }

    /// Datagrams delivered to either host, with arrival times.
    pub fn deliveries(&self) -> &[(SimTime, Vec<u8>)] {
        &self.deliveries
    }

    pub fn set_operator(&mut self, side: Side, model: OperatorModel) -> Result<(), LinkError> {
        model.validate().map_err(|source| LinkError::Operator { side, source })?;
        self.operators[side.index()].set_model(model);
        Ok(())
    }

    pub fn add_fault(&mut self, fault: Fault) {
        self.faults.push(fault);
    }

    pub fn next_event_time(&self) -> Option<SimTime> {
        self.queue.peek().map(|Reverse(q)| q.at)
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    fn schedule(&mut self, at: SimTime, event: Scheduled) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Queued { at, component: event.component(), seq, event }));
    }

    fn record(&mut self, side: Side, event: LogEvent) {
        self.log.push(LogEntry { t: self.now, side, event });
    }

    /// Schedules a ping from `from` to the other host at `at`.
    pub fn schedule_ping(
        &mut self,
        at: SimTime,
        from: Side,
        identifier: u16,
        sequence: u16,
        payload: Vec<u8>,
    ) -> Result<(), LinkError> {
        if at < self.now {
            return Err(LinkError::Stale { at, now: self.now });
        }
        self.schedule(at, Scheduled::Ping { from, identifier, sequence, payload, injected: None });
        Ok(())
    }

    /// Enqueues an external event (a live strike, a scripted ping).
    pub fn inject(&mut self, injection: Injection) -> Result<(), LinkError> {
        let Injection { id, at, event } = injection;
        if at < self.now {
            return Err(LinkError::Stale { at, now: self.now });
        }
        if self.pending_ids.contains(&id) {
            return Err(LinkError::DuplicateEvent(id));
        }
        let scheduled = match event {
            InjectedEvent::Strike { operator, key } => {
                if !self.config.layout.contains(key) {
                    return Err(ArduinoError::KeyOutOfRange { key, keys: self.config.layout.len() }.into());
                }
                Scheduled::Strike { strike: StrikeEvent { key, time: at, source: operator }, injected: Some(id) }
            }
            InjectedEvent::Ping { from, identifier, sequence, payload } => {
                Scheduled::Ping { from, identifier, sequence, payload, injected: Some(id) }
            }
        };
        self.pending_ids.insert(id);
        self.schedule(at, scheduled);
        Ok(())
    }

    /// Runs the session. Virtual sessions may stop at a deadline (the clock
    /// is then left at the deadline); realtime sessions only run to
    /// quiescence, sleeping between events.
    pub fn run(&mut self, limit: RunLimit) -> Result<LinkStats, LinkError> {
        match (self.config.clock_mode, limit) {
            (ClockMode::Realtime, RunLimit::Until(_)) => return Err(LinkError::RealtimeUntil),
            (ClockMode::Virtual, RunLimit::Until(until)) => {
                self.advance_to(until)?;
            }
            (ClockMode::Virtual, RunLimit::Quiescence) => while self.step()? {},
            (ClockMode::Realtime, RunLimit::Quiescence) => {
                let epoch = *self.epoch.get_or_insert_with(Instant::now);
                while let Some(at) = self.next_event_time() {
                    let due = epoch + Duration::from_nanos(at.as_nanos());
                    let wait = due.saturating_duration_since(Instant::now());
                    if !wait.is_zero() {
                        std::thread::sleep(wait);
                    }
                    self.step()?;
                }
            }
        }
        Ok(self.stats())
    }

    /// Processes every event due at or before `now` and moves the clock
    /// there. External drivers (the bridge, realtime loops) own the clock
    /// through this call.
    pub fn advance_to(&mut self, now: SimTime) -> Result<(), LinkError> {
        while self.next_event_time().is_some_and(|t| t <= now) {
            self.step()?;
        }
        if now > self.now {
            self.now = now;
        }
        Ok(())
    }

    /// Processes the single earliest event. Returns `false` when idle.
    pub fn step(&mut self) -> Result<bool, LinkError> {
        let Some(Reverse(queued)) = self.queue.pop() else { return Ok(false) };
        if self.processed >= self.config.max_events {
            let pending = self.queue.len() + 1;
            self.queue.push(Reverse(queued));
            return Err(LinkError::EventCap { cap: self.config.max_events, now: self.now, pending });
        }
        self.processed += 1;
        self.now = self.now.max(queued.at);
        if let Some(id) = queued.event.injected() {
            self.pending_ids.remove(&id);
        }
        match queued.event {
            Scheduled::Tick(side) => self.on_tick(side),
            Scheduled::Strike { strike, injected } => self.on_strike(strike, injected.is_some()),
            Scheduled::Ping { from, identifier, sequence, payload, .. } => {
                self.on_ping(from, identifier, sequence, &payload)
            }
            Scheduled::Expire { side, seq } => self.on_expire(side, seq),
        }
        Ok(true)
    }

    fn reschedule_tick(&mut self, side: Side) {
        let i = side.index();
        if let Some(due) = self.arduinos[i].next_deadline() {
            if self.tick_at[i] != Some(due) {
                self.tick_at[i] = Some(due);
                self.schedule(due, Scheduled::Tick(side));
            }
        }
    }

    fn on_tick(&mut self, side: Side) {
        let i = side.index();
        if self.tick_at[i] != Some(self.now) {
            // Superseded.
            return;
        }
        self.tick_at[i] = None;
        let window = self.config.window();
        for light in self.arduinos[i].tick(self.now) {
            self.record(
                side,
                LogEvent::Light {
                    key: light.key,
                    seq: light.symbol_seq,
                    byte_seq: light.byte_seq,
                    duration: light.duration,
                },
            );
            // One nanosecond past the window so a strike exactly on its edge
            // is judged first.
            self.schedule(
                light.on_time + window + Duration::from_nanos(1),
                Scheduled::Expire { side, seq: light.symbol_seq },
            );
            let strikes = self.operators[i].react(&light);
            self.outstanding[i].push_back(Outstanding { command: light, matched: false });
            for strike in strikes {
                let index = self.strikes_emitted[i];
                self.strikes_emitted[i] += 1;
                let dropped = self
                    .faults
                    .iter()
                    .any(|f| matches!(f, Fault::DropStrike { operator, index: n } if *operator == side && *n == index));
                if dropped {
                    self.record(side, LogEvent::FaultDrop { key: strike.key, index });
                    continue;
                }
                let at = strike.time.max(self.now);
                self.schedule(at, Scheduled::Strike { strike: StrikeEvent { time: at, ..strike }, injected: None });
            }
        }
        self.reschedule_tick(side);
    }

    fn classify(&mut self, strike: &StrikeEvent) -> StrikeClass {
        let window = self.config.window();
        let outstanding = &mut self.outstanding[strike.source.index()];
        let in_window = |o: &Outstanding| {
            !o.matched
                && classify_strike(Some(&o.command), Some(strike), window).is_some_and(|c| c != StrikeClass::Spurious)
        };
        let chosen = outstanding
            .iter()
            .position(|o| in_window(o) && o.command.key == strike.key)
            .or_else(|| outstanding.iter().rposition(|o| in_window(o) && o.command.on_time <= strike.time))
            .or_else(|| outstanding.iter().position(in_window));
        match chosen {
            Some(i) => {
                outstanding[i].matched = true;
                classify_strike(Some(&outstanding[i].command), Some(strike), window).expect("both present")
            }
            None => StrikeClass::Spurious,
        }
    }

    fn on_strike(&mut self, strike: StrikeEvent, injected: bool) {
        let class = self.classify(&strike);
        self.record(strike.source, LogEvent::Strike { key: strike.key, class, injected });
        let receiver = strike.source.other();
        let arduino = &mut self.arduinos[receiver.index()];
        let discarded_before = arduino.rx_discarded();
        let decoded = match arduino.rx_on_strike(&strike) {
            Ok(d) => d,
            // Keys are range-checked on the way in.
            Err(_) => return,
        };
        let discarded = arduino.rx_discarded() - discarded_before;
        if discarded > 0 {
            self.record(receiver, LogEvent::RxResync { discarded });
        }
        if let Some(byte) = decoded {
            self.record(receiver, LogEvent::Byte { value: byte.value, valid: byte.valid });
            let events = self.hosts[receiver.index()].on_serial_byte(self.now, byte.value);
            self.on_host_events(receiver, events);
        }
    }

    fn on_expire(&mut self, side: Side, seq: u64) {
        let outstanding = &mut self.outstanding[side.index()];
        let Some(pos) = outstanding.iter().position(|o| o.command.symbol_seq == seq) else { return };
        let entry = outstanding.remove(pos).expect("position is valid");
        if !entry.matched {
            self.record(side, LogEvent::Missed { key: entry.command.key, seq });
        }
    }

    fn on_ping(&mut self, from: Side, identifier: u16, sequence: u16, payload: &[u8]) {
        let dst = self.hosts[from.other().index()].address();
        match self.hosts[from.index()].send_ping(self.now, dst, identifier, sequence, payload) {
            Ok(action) => self.transmit(from, action),
            Err(e) => self.record(from, LogEvent::PingRejected { error: e.to_string() }),
        }
    }

    fn transmit(&mut self, side: Side, action: TransmitAction) {
        let i = side.index();
        if let Err(e) = self.arduinos[i].tx_feed_serial(self.now, &action.wire) {
            if let ArduinoError::Backpressure { offered, .. } = e {
                self.record(side, LogEvent::Backpressure { offered });
            }
            return;
        }
        let first_byte_seq = self.wire_fed[i];
        self.wire_fed[i] += action.wire.len() as u64;
        self.record(
            side,
            LogEvent::Transmit {
                datagram: action.kind,
                identifier: action.identifier,
                sequence: action.sequence,
                wire_bytes: action.wire.len(),
                datagram_bytes: action.datagram.len(),
                first_byte_seq,
            },
        );
        self.tx_records.push(TxRecord {
            side,
            action_kind: action.kind,
            identifier: action.identifier,
            sequence: action.sequence,
            queued_at: self.now,
            first_byte_seq,
            wire_bytes: action.wire.len(),
            datagram_wire: action.datagram_wire,
            datagram_bytes: action.datagram.len(),
        });
        self.reschedule_tick(side);
    }

    fn on_host_events(&mut self, side: Side, events: Vec<HostEvent>) {
        for event in events {
            match event {
                HostEvent::Annotation(a) => self.record(
                    side,
                    LogEvent::Annotation { offset: a.byte_offset, field: a.field_name, value: a.value_text },
                ),
                HostEvent::SerialError(e) => self.record(side, LogEvent::SerialError { error: e.to_string() }),
                HostEvent::Frame { len, corrupted } => self.record(side, LogEvent::Frame { len, corrupted }),
                HostEvent::Unparseable { error, bytes } => {
                    self.record(side, LogEvent::Unparseable { len: bytes.len(), error: error.to_string() })
                }
                HostEvent::Delivered(d) => {
                    let echo = d.packet.icmp();
                    let hex = d.bytes.iter().map(|b| format!("{b:02x}")).collect();
                    self.record(
                        side,
                        LogEvent::Packet {
                            len: d.bytes.len(),
                            src: d.packet.header.src_addr,
                            dst: d.packet.header.dst_addr,
                            protocol: d.packet.header.protocol,
                            icmp_type: echo.as_ref().map(|e| e.icmp_type),
                            identifier: echo.as_ref().map(|e| e.identifier),
                            sequence: echo.as_ref().map(|e| e.sequence),
                            checksum: d.packet.checksum_status,
                            integrity: d.packet.integrity,
                            flagged: d.flagged(),
                            hex,
                        },
                    );
                    self.deliveries.push((self.now, d.bytes));
                }
                HostEvent::Dropped { reason, bytes } => {
                    self.record(side, LogEvent::Dropped { len: bytes.len(), reason })
                }
                HostEvent::Reply(action) => self.transmit(side, action),
                HostEvent::PingCompleted { identifier, sequence, rtt, flagged } => {
                    self.record(side, LogEvent::PingComplete { identifier, sequence, rtt, flagged })
                }
                HostEvent::UnmatchedReply { identifier, sequence } => {
                    self.record(side, LogEvent::UnmatchedReply { identifier, sequence })
                }
                HostEvent::DuplicateReply { identifier, sequence } => {
                    self.record(side, LogEvent::DuplicateReply { identifier, sequence })
                }
            }
        }
    }

    /// Statistics over everything logged so far.
    pub fn stats(&self) -> LinkStats {
        let mut s = LinkStats {
            symbols_sent: 0,
            strikes: 0,
            strike_classes: ClassCounts::default(),
            bytes_delivered: 0,
            frames_delivered: 0,
            packets_sent: 0,
            packets_delivered: 0,
            packets_flagged: 0,
            pings_completed: 0,
            effective_baud: 0.0,
            goodput_bps: 0.0,
            rtts: Vec::new(),
            elapsed: Duration::ZERO,
            session_time: self.now,
            frames: Vec::new(),
        };
        // Per side: byte_seq -> (first on_time, last symbol end, symbols lit).
        let mut byte_spans: [BTreeMap<u64, (SimTime, SimTime, usize)>; 2] = [BTreeMap::new(), BTreeMap::new()];
        let mut busy_until = [SimTime::ZERO; 2];
        let mut delivered_bits = 0u64;
        for entry in &self.log {
            match &entry.event {
                LogEvent::Light { byte_seq, duration, .. } => {
                    s.symbols_sent += 1;
                    let i = entry.side.index();
                    let end = entry.t + *duration;
                    let start = entry.t.max(busy_until[i]);
                    s.elapsed += end.since(start);
                    busy_until[i] = busy_until[i].max(end);
                    byte_spans[i]
                        .entry(*byte_seq)
                        .and_modify(|span| {
                            span.1 = end;
                            span.2 += 1;
                        })
                        .or_insert((entry.t, end, 1));
                }
                LogEvent::Strike { class, .. } => {
                    s.strikes += 1;
                    s.strike_classes.bump(*class);
                }
                LogEvent::Missed { .. } => s.strike_classes.bump(StrikeClass::Missed),
                LogEvent::Byte { .. } => s.bytes_delivered += 1,
                LogEvent::Frame { .. } => s.frames_delivered += 1,
                LogEvent::Transmit { .. } => s.packets_sent += 1,
                LogEvent::Packet { flagged, len, .. } => {
                    s.packets_delivered += 1;
                    s.packets_flagged += u64::from(*flagged);
                    delivered_bits += 8 * *len as u64;
                }
                LogEvent::PingComplete { rtt, .. } => {
                    s.pings_completed += 1;
                    s.rtts.push(*rtt);
                }
                _ => {}
            }
        }
        if !s.elapsed.is_zero() {
            s.effective_baud = s.symbols_sent as f64 / s.elapsed.as_secs_f64();
        }
        if self.now > SimTime::ZERO {
            s.goodput_bps = delivered_bits as f64 / self.now.as_secs_f64();
        }
        let per_byte = self.config.codec.symbols_per_byte();
        for rec in &self.tx_records {
            let spans = &byte_spans[rec.side.index()];
            let span = |from: u64, to: u64| -> Option<Duration> {
                let first = spans.get(&from)?;
                let last = spans.get(&(to - 1)).filter(|l| l.2 == per_byte)?;
                Some(last.1 - first.0)
            };
            let start = rec.first_byte_seq;
            let (Some(keying), Some(datagram_keying)) = (
                span(start, start + rec.wire_bytes as u64),
                span(start + rec.datagram_wire.start as u64, start + rec.datagram_wire.end as u64),
            ) else {
                continue;
            };
            s.frames.push(FrameTiming {
                side: rec.side,
                kind: rec.action_kind,
                identifier: rec.identifier,
                sequence: rec.sequence,
                wire_bytes: rec.wire_bytes,
                datagram_bytes: rec.datagram_bytes,
                queued_at: rec.queued_at,
                keying,
                datagram_keying,
            });
        }
        s
    }

    /// Serializes the log: `jsonl` is every event, one JSON object per
    /// line; `pcap` is the delivered datagrams only.
    pub fn export_log(&self, format: LogFormat) -> Vec<u8> {
        match format {
            LogFormat::Jsonl => {
                let mut out = Vec::new();
                for entry in &self.log {
                    serde_json::to_writer(&mut out, entry).expect("log entries serialize");
                    out.push(b'\n');
                }
                out
            }
            LogFormat::Pcap => {
                let mut w = PcapWriter::new(Vec::new()).expect("writing to memory");
                for (t, bytes) in &self.deliveries {
                    w.write_packet(*t, bytes).expect("writing to memory");
                }
                w.into_inner()
            }
        }
    }

    /// [`LinkSession::export_log`] with the format given by name.
    pub fn export_log_named(&self, format: &str) -> Result<Vec<u8>, LinkError> {
        Ok(self.export_log(format.parse()?))
    }
}
