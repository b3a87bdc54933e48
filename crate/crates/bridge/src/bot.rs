//! Scripted WebSocket clients.
//!
//! A bot speaks the same protocol as a browser console. As an operator it
//! answers every `light` with a `strike` on the lit key after a fixed
//! reaction time; as audience it only listens. Everything it receives is
//! kept for inspection.

use std::collections::HashSet;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::sync::mpsc;
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message;

use crate::protocol::{parse_server, ClientMessage, Role, ServerMessage};

#[derive(Debug, Error)]
pub enum BotError {
    #[error("websocket: {0}")]
    Ws(#[from] tokio_tungstenite::tungstenite::Error),
    #[error("unparseable server message: {0}")]
    Protocol(#[from] serde_json::Error),
}

#[derive(Debug, Clone)]
pub struct BotConfig {
    pub role: Role,
    pub reaction: Duration,
    /// Light sequence numbers to leave unstruck.
    pub skip: HashSet<u64>,
    /// Hang up after this many lights.
    pub disconnect_after: Option<u64>,
}

impl BotConfig {
    pub fn perfect(role: Role, reaction: Duration) -> Self {
        BotConfig { role, reaction, skip: HashSet::new(), disconnect_after: None }
    }

    pub fn audience() -> Self {
        Self::perfect(Role::Audience, Duration::ZERO)
    }
}

#[derive(Debug, Clone, Default)]
pub struct BotReport {
    pub lights: u64,
    pub strikes: u64,
    /// Every server message, in arrival order.
    pub received: Vec<ServerMessage>,
    /// Close code sent by the server, if it closed the connection.
    pub close_code: Option<u16>,
}

impl BotReport {
    pub fn errors(&self) -> impl Iterator<Item = &ServerMessage> {
        self.received.iter().filter(|m| matches!(m, ServerMessage::Error { .. }))
    }
}

/// Connects to `url` and plays until the server closes the connection or
/// the bot hangs up.
pub async fn run_bot(url: &str, config: BotConfig) -> Result<BotReport, BotError> {
    let (ws, _) = tokio_tungstenite::connect_async_with_config(url, None, true).await?;
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
    let _ = tx.send(Message::text(ClientMessage::Hello { role: config.role.to_string() }.to_json()));

    let mut report = BotReport::default();
    while let Some(msg) = source.next().await {
        let msg = match msg {
            Ok(msg) => msg,
            Err(_) => break,
        };
        match msg {
            Message::Text(body) => {
                let parsed = parse_server(body.as_str())?;
                if let ServerMessage::Light { key, seq, .. } = parsed {
                    report.lights += 1;
                    if !config.skip.contains(&seq) {
                        report.strikes += 1;
                        let tx = tx.clone();
                        let reaction = config.reaction;
                        tokio::spawn(async move {
                            tokio::time::sleep(reaction).await;
                            let _ = tx.send(Message::text(ClientMessage::Strike { key }.to_json()));
                        });
                    }
                    if config.disconnect_after.is_some_and(|n| report.lights >= n) {
                        report.received.push(parsed);
                        let _ = tx.send(Message::Close(None));
                        break;
                    }
                }
                report.received.push(parsed);
            }
            Message::Close(frame) => {
                report.close_code = frame.map(|f| u16::from(f.code));
                break;
            }
            _ => {}
        }
    }
    drop(tx);
    let _ = writer.await;
    Ok(report)
}

pub fn spawn_bot(url: String, config: BotConfig) -> JoinHandle<Result<BotReport, BotError>> {
    tokio::spawn(async move { run_bot(&url, config).await })
}
