//! The live session and its WebSocket front end.
//!
//! One task owns the [`LinkSession`] and maps wall time since start onto
//! the session clock. Connection tasks parse frames and forward requests to
//! it over an unbounded intake channel; it answers and broadcasts through
//! per-connection unbounded senders, so a slow client never stalls the
//! session.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use ipoxp_core::link::{ClockMode, InjectedEvent, Injection, LinkError, LogEvent, LogFormat};
use ipoxp_core::notes::{KeyIndex, StrikeClass};
use ipoxp_core::operator::OperatorModel;
use ipoxp_core::{LinkSession, LinkStats, SessionConfig, Side, SimTime};
use thiserror::Error;
use tokio::net::{TcpListener, TcpStream, ToSocketAddrs};
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;
use tokio::time::{sleep_until, Instant, MissedTickBehavior};
use tokio_tungstenite::tungstenite::protocol::frame::coding::CloseCode;
use tokio_tungstenite::tungstenite::protocol::CloseFrame;
use tokio_tungstenite::tungstenite::Message;
use tracing::{debug, info, warn};

use crate::protocol::{
    layout_info, parse_client, AnnotationBody, Capabilities, ErrorCode, Phase, Progress, Request, Role, ServerMessage,
};

/// How long a closing connection waits for the peer's close frame.
const CLOSE_GRACE: Duration = Duration::from_secs(5);

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("cannot listen")]
    Bind(#[from] std::io::Error),
    #[error(transparent)]
    Session(#[from] LinkError),
}

/// Pings the session sends on its own, so there is traffic to key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PingSchedule {
    pub from: Side,
    pub identifier: u16,
    pub payload: Vec<u8>,
    pub start: Duration,
    pub interval: Duration,
    /// `None` pings until shutdown.
    pub count: Option<u32>,
}

impl Default for PingSchedule {
    fn default() -> Self {
        PingSchedule {
            from: Side::A,
            identifier: 0x4958,
            payload: (0..28).collect(),
            start: Duration::ZERO,
            interval: Duration::from_secs(2000),
            count: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BridgeConfig {
    /// Both operators start absent whatever this says; connecting clients
    /// take over their side.
    pub session: SessionConfig,
    pub pings: PingSchedule,
    pub capabilities: Capabilities,
    pub stats_interval: Duration,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        BridgeConfig {
            session: SessionConfig::default(),
            pings: PingSchedule::default(),
            capabilities: Capabilities::default(),
            stats_interval: Duration::from_secs(1),
        }
    }
}

/// What a finished session leaves behind.
#[derive(Debug, Clone)]
pub struct Summary {
    pub stats: LinkStats,
    pub jsonl: Vec<u8>,
}

enum Command {
    Hello { conn: u64, role: Role, tx: mpsc::UnboundedSender<Message> },
    Strike { conn: u64, key: u16, tx: mpsc::UnboundedSender<Message> },
    Disconnect { conn: u64 },
    Stats(oneshot::Sender<LinkStats>),
    Shutdown(oneshot::Sender<Summary>),
}

/// A running bridge. Dropping it leaves the tasks running; call
/// [`BridgeHandle::shutdown`] to stop them.
pub struct BridgeHandle {
    addr: SocketAddr,
    intake: mpsc::UnboundedSender<Command>,
    accept: JoinHandle<()>,
    session: JoinHandle<()>,
}

impl BridgeHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("ws://{}", self.addr)
    }

    /// Current statistics, or `None` once the session has stopped.
    pub async fn stats(&self) -> Option<LinkStats> {
        let (tx, rx) = oneshot::channel();
        self.intake.send(Command::Stats(tx)).ok()?;
        rx.await.ok()
    }

    /// Polls until `done` holds or `timeout` passes; returns the last
    /// statistics seen either way.
    pub async fn wait_for(&self, timeout: Duration, done: impl Fn(&LinkStats) -> bool) -> Option<LinkStats> {
        let deadline = Instant::now() + timeout;
        loop {
            let stats = self.stats().await?;
            if done(&stats) || Instant::now() >= deadline {
                return Some(stats);
            }
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }

    /// Stops accepting, closes every client and returns the session's
    /// final statistics and jsonl log.
    pub async fn shutdown(self) -> Option<Summary> {
        self.accept.abort();
        let (tx, rx) = oneshot::channel();
        self.intake.send(Command::Shutdown(tx)).ok()?;
        let summary = rx.await.ok();
        let _ = self.session.await;
        summary
    }

    /// Runs until the session task ends.
    pub async fn join(self) {
        let _ = self.session.await;
        self.accept.abort();
    }
}

/// Binds `addr` and starts the session.
pub async fn bind(addr: impl ToSocketAddrs, config: BridgeConfig) -> Result<BridgeHandle, BridgeError> {
    let listener = TcpListener::bind(addr).await?;
    serve(listener, config)
}

/// Starts the session and serves connections from `listener`.
pub fn serve(listener: TcpListener, config: BridgeConfig) -> Result<BridgeHandle, BridgeError> {
    let addr = listener.local_addr()?;
    let mut session_config = config.session.clone();
    session_config.clock_mode = ClockMode::Realtime;
    session_config.operator_a = OperatorModel::absent();
    session_config.operator_b = OperatorModel::absent();
    let session = LinkSession::new(session_config)?;

    let (intake, rx) = mpsc::unbounded_channel();
    let task = SessionTask::new(session, &config);
    let session = tokio::spawn(task.run(rx, config.stats_interval));
    let accept = tokio::spawn(accept_loop(listener, intake.clone()));
    info!(%addr, "bridge listening");
    Ok(BridgeHandle { addr, intake, accept, session })
}

async fn accept_loop(listener: TcpListener, intake: mpsc::UnboundedSender<Command>) {
    let mut next_id = 0u64;
    loop {
        match listener.accept().await {
            Ok((stream, peer)) => {
                next_id += 1;
                debug!(%peer, conn = next_id, "connection");
                tokio::spawn(connection(stream, next_id, intake.clone()));
            }
            Err(e) => {
                warn!(error = %e, "accept failed");
                tokio::time::sleep(Duration::from_millis(50)).await;
            }
        }
    }
}

fn text(msg: &ServerMessage) -> Message {
    Message::text(msg.to_json())
}

fn close(code: CloseCode, reason: &str) -> Message {
    Message::Close(Some(CloseFrame { code, reason: reason.into() }))
}

/// Sends an error and then a close frame.
fn refuse(tx: &mpsc::UnboundedSender<Message>, code: ErrorCode, message: &str) {
    let _ = tx.send(text(&ServerMessage::error(code, message)));
    let _ = tx.send(close(CloseCode::Policy, message));
}

async fn connection(stream: TcpStream, conn: u64, intake: mpsc::UnboundedSender<Command>) {
    // Lights and strikes are tiny frames; batching them adds symbol-scale lag.
    let _ = stream.set_nodelay(true);
    let ws = match tokio_tungstenite::accept_async(stream).await {
        Ok(ws) => ws,
        Err(e) => {
            debug!(conn, error = %e, "handshake failed");
            return;
        }
    };
    let (mut sink, mut source) = ws.split();
    let (tx, mut rx) = mpsc::unbounded_channel::<Message>();
    let writer = tokio::spawn(async move {
        while let Some(msg) = rx.recv().await {
            let last = matches!(msg, Message::Close(_));
            if sink.send(msg).await.is_err() || last {
                break;
            }
        }
    });

    let mut closing = false;
    loop {
        let next = if closing {
            tokio::time::timeout(CLOSE_GRACE, source.next()).await.unwrap_or(None)
        } else {
            source.next().await
        };
        let Some(Ok(msg)) = next else { break };
        if closing {
            continue;
        }
        match msg {
            Message::Text(body) => match parse_client(body.as_str()) {
                Ok(Request::Hello(role)) => {
                    let _ = intake.send(Command::Hello { conn, role, tx: tx.clone() });
                }
                Ok(Request::Strike(key)) => {
                    let _ = intake.send(Command::Strike { conn, key, tx: tx.clone() });
                }
                Err(rejection) => {
                    debug!(conn, ?rejection, "rejected frame");
                    refuse(&tx, rejection.code, &rejection.message);
                    closing = true;
                }
            },
            Message::Binary(_) => {
                refuse(&tx, ErrorCode::Malformed, "binary frames are not part of the protocol");
                closing = true;
            }
            Message::Close(_) => break,
            _ => {}
        }
    }
    let _ = intake.send(Command::Disconnect { conn });
    drop(tx);
    let _ = writer.await;
    debug!(conn, "closed");
}

struct Client {
    role: Role,
    tx: mpsc::UnboundedSender<Message>,
}

struct SessionTask {
    session: LinkSession,
    epoch: Instant,
    clients: BTreeMap<u64, Client>,
    slots: [Option<u64>; 2],
    cursor: usize,
    annotations: [Vec<AnnotationBody>; 2],
    pings: PingSchedule,
    next_ping: Option<(SimTime, u16)>,
    capabilities: Capabilities,
    next_injection: u64,
}

impl SessionTask {
    fn new(session: LinkSession, config: &BridgeConfig) -> Self {
        let pings = config.pings.clone();
        let next_ping = (pings.count != Some(0)).then(|| (SimTime::ZERO + pings.start, 0));
        SessionTask {
            session,
            epoch: Instant::now(),
            clients: BTreeMap::new(),
            slots: [None, None],
            cursor: 0,
            annotations: [Vec::new(), Vec::new()],
            pings,
            next_ping,
            capabilities: config.capabilities,
            next_injection: 0,
        }
    }

    fn sim_now(&self) -> SimTime {
        SimTime::from_nanos(self.epoch.elapsed().as_nanos() as u64)
    }

    fn wall(&self, t: SimTime) -> Instant {
        self.epoch + Duration::from_nanos(t.as_nanos())
    }

    async fn run(mut self, mut intake: mpsc::UnboundedReceiver<Command>, stats_interval: Duration) {
        let mut stats_tick = tokio::time::interval(stats_interval);
        stats_tick.set_missed_tick_behavior(MissedTickBehavior::Skip);
        loop {
            let wake = [self.session.next_event_time(), self.next_ping.map(|(t, _)| t)].into_iter().flatten().min();
            let deadline = wake.map(|t| self.wall(t));
            tokio::select! {
                cmd = intake.recv() => match cmd {
                    None => break,
                    Some(Command::Shutdown(reply)) => {
                        self.pump();
                        let _ = reply.send(Summary {
                            stats: self.session.stats(),
                            jsonl: self.session.export_log(LogFormat::Jsonl),
                        });
                        for client in self.clients.values() {
                            let _ = client.tx.send(close(CloseCode::Away, "session over"));
                        }
                        break;
                    }
                    Some(cmd) => self.handle(cmd),
                },
                _ = sleep_until(deadline.unwrap_or_else(Instant::now)), if deadline.is_some() => {}
                _ = stats_tick.tick() => self.broadcast_stats(),
            }
            self.pump();
        }
    }

    fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Hello { conn, role, tx } => self.hello(conn, role, tx),
            Command::Strike { conn, key, tx } => self.strike(conn, key, &tx),
            Command::Disconnect { conn } => {
                if let Some(client) = self.clients.remove(&conn) {
                    if let Some(side) = client.role.side() {
                        self.slots[side.index()] = None;
                        self.session.set_operator(side, OperatorModel::absent()).expect("absent model is valid");
                        info!(%side, "operator left");
                    }
                }
            }
            Command::Stats(reply) => {
                self.pump();
                let _ = reply.send(self.session.stats());
            }
            Command::Shutdown(_) => unreachable!("handled by the loop"),
        }
    }

    fn hello(&mut self, conn: u64, role: Role, tx: mpsc::UnboundedSender<Message>) {
        if self.clients.contains_key(&conn) {
            let _ = tx.send(text(&ServerMessage::error(ErrorCode::AlreadyAttached, "already attached")));
            return;
        }
        if let Some(side) = role.side() {
            if self.slots[side.index()].is_some() {
                let _ = tx.send(text(&ServerMessage::error(ErrorCode::RoleTaken, "role taken")));
                return;
            }
            self.slots[side.index()] = Some(conn);
            self.session.set_operator(side, OperatorModel::remote()).expect("remote model is valid");
            info!(%side, "operator joined");
        }
        let config = self.session.config();
        let _ = tx.send(text(&ServerMessage::Hello {
            role,
            layout: layout_info(&config.layout),
            symbol_period_ms: config.symbol_period.as_secs_f64() * 1e3,
            capabilities: self.capabilities,
        }));
        self.clients.insert(conn, Client { role, tx });
    }

    fn strike(&mut self, conn: u64, key: u16, tx: &mpsc::UnboundedSender<Message>) {
        let Some(client) = self.clients.get(&conn) else {
            let _ = tx.send(text(&ServerMessage::error(ErrorCode::NotAttached, "send hello first")));
            return;
        };
        let Some(side) = client.role.side() else {
            refuse(&client.tx, ErrorCode::Forbidden, "audience clients cannot strike");
            return;
        };
        let keys = self.session.config().layout.len();
        if usize::from(key) >= keys {
            let msg = ServerMessage::error(ErrorCode::KeyOutOfRange, format!("key {key} outside a {keys}-key layout"));
            let _ = client.tx.send(text(&msg));
            return;
        }
        self.pump();
        let at = self.sim_now().max(self.session.now());
        self.next_injection += 1;
        let injection = Injection {
            id: self.next_injection,
            at,
            event: InjectedEvent::Strike { operator: side, key: KeyIndex(key) },
        };
        if let Err(e) = self.session.inject(injection) {
            warn!(error = %e, "strike rejected by the session");
        }
    }

    /// Brings the session up to wall time and fans out what happened.
    fn pump(&mut self) {
        let now = self.sim_now();
        while let Some((at, seq)) = self.next_ping.filter(|(at, _)| *at <= now) {
            let at = at.max(self.session.now());
            let p = &self.pings;
            if let Err(e) = self.session.schedule_ping(at, p.from, p.identifier, seq, p.payload.clone()) {
                warn!(error = %e, "cannot schedule ping");
            }
            let next = u32::from(seq) + 1;
            self.next_ping = match p.count {
                Some(n) if next >= n => None,
                _ => Some((at + p.interval, next as u16)),
            };
        }
        if let Err(e) = self.session.advance_to(now) {
            warn!(error = %e, "session stalled");
        }
        self.fan_out();
    }

    fn send_to(&self, role: Role, msg: &ServerMessage) {
        let frame = text(msg);
        for client in self.clients.values().filter(|c| c.role == role) {
            let _ = client.tx.send(frame.clone());
        }
    }

    fn broadcast(&self, msg: &ServerMessage) {
        let frame = text(msg);
        for client in self.clients.values() {
            let _ = client.tx.send(frame.clone());
        }
    }

    fn broadcast_stats(&mut self) {
        if self.clients.is_empty() {
            return;
        }
        let s = self.session.stats();
        let c = s.strike_classes;
        self.broadcast(&ServerMessage::Stats {
            t: self.session.now().as_secs_f64(),
            symbols_sent: s.symbols_sent,
            strikes: s.strikes,
            correct: c.correct,
            wrong_key: c.wrong_key,
            missed: c.missed,
            spurious: c.spurious,
            packets_sent: s.packets_sent,
            packets_delivered: s.packets_delivered,
            pings_completed: s.pings_completed,
            effective_baud: s.effective_baud,
            rtts_s: s.rtts.iter().map(Duration::as_secs_f64).collect(),
        });
    }

    fn fan_out(&mut self) {
        let entries = self.session.log()[self.cursor..].to_vec();
        self.cursor += entries.len();
        let duration_ms = self.session.config().symbol_period.as_millis() as u64;
        for entry in entries {
            let side = entry.side;
            let t = entry.t.as_secs_f64();
            let progress = |phase| Progress::new(t, side, phase);
            match entry.event {
                LogEvent::Light { key, seq, .. } => {
                    self.send_to(Role::operator(side), &ServerMessage::Light { key: key.0, seq, duration_ms });
                    self.progress(Progress { key: Some(key.0), seq: Some(seq), ..progress(Phase::Light) });
                }
                LogEvent::Strike { key, class, injected } => {
                    if injected && self.capabilities.feedback {
                        self.send_to(Role::operator(side), &ServerMessage::Feedback { key: key.0, class });
                    }
                    self.progress(Progress { key: Some(key.0), class: Some(class), ..progress(Phase::Strike) });
                }
                LogEvent::Missed { key, seq } => {
                    if self.capabilities.feedback {
                        let msg = ServerMessage::Feedback { key: key.0, class: StrikeClass::Missed };
                        self.send_to(Role::operator(side), &msg);
                    }
                    self.progress(Progress { key: Some(key.0), seq: Some(seq), ..progress(Phase::Missed) });
                }
                LogEvent::Byte { value, .. } => {
                    let annotations = self.annotations[side.index()].clone();
                    self.progress(Progress { value: Some(value), annotations, ..progress(Phase::Byte) });
                }
                LogEvent::Annotation { offset, field, value } => {
                    let body = AnnotationBody { offset, field: field.to_string(), value };
                    self.annotations[side.index()].push(body.clone());
                    self.send_to(Role::Audience, &ServerMessage::Annotation { t, side, body });
                }
                LogEvent::Frame { .. } => {
                    self.annotations[side.index()].clear();
                    self.progress(progress(Phase::Frame));
                }
                LogEvent::Unparseable { .. } => self.annotations[side.index()].clear(),
                LogEvent::Packet { .. } => self.progress(progress(Phase::Packet)),
                LogEvent::PingComplete { rtt, .. } => {
                    self.progress(Progress { rtt_s: Some(rtt.as_secs_f64()), ..progress(Phase::PingComplete) });
                    self.broadcast_stats();
                }
                _ => {}
            }
        }
    }

    fn progress(&self, progress: Progress) {
        self.send_to(Role::Audience, &ServerMessage::Progress(progress));
    }
}
