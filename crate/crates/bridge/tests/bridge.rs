use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use ipoxp_bridge::bot::{run_bot, spawn_bot, BotConfig};
use ipoxp_bridge::protocol::{parse_server, Capabilities, ErrorCode, Phase, Role, ServerMessage};
use ipoxp_bridge::{bind, BridgeConfig, BridgeHandle, PingSchedule};
use ipoxp_core::notes::StrikeClass;
use ipoxp_core::{SessionConfig, Side};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

const PERIOD: Duration = Duration::from_millis(10);

fn config(pings: Option<u32>) -> BridgeConfig {
    BridgeConfig {
        session: SessionConfig { symbol_period: PERIOD, rx_resync_periods: Some(100), ..Default::default() },
        pings: PingSchedule { count: pings, start: Duration::from_millis(500), ..Default::default() },
        capabilities: Capabilities { feedback: true, restricted_view: false },
        stats_interval: Duration::from_millis(200),
    }
}

async fn start(pings: Option<u32>) -> BridgeHandle {
    bind("127.0.0.1:0", config(pings)).await.unwrap()
}

async fn connect(bridge: &BridgeHandle) -> Ws {
    tokio_tungstenite::connect_async(bridge.url()).await.unwrap().0
}

async fn send(ws: &mut Ws, text: &str) {
    ws.send(Message::text(text)).await.unwrap();
}

/// Next text message, skipping anything that is not `want`.
async fn next_matching(ws: &mut Ws, want: impl Fn(&ServerMessage) -> bool) -> Option<ServerMessage> {
    let deadline = tokio::time::Instant::now() + Duration::from_secs(5);
    loop {
        let msg = tokio::time::timeout_at(deadline, ws.next()).await.ok()??.ok()?;
        if let Message::Text(body) = msg {
            let parsed = parse_server(body.as_str()).unwrap();
            if want(&parsed) {
                return Some(parsed);
            }
        }
    }
}

async fn expect_error(ws: &mut Ws) -> ErrorCode {
    match next_matching(ws, |m| matches!(m, ServerMessage::Error { .. })).await {
        Some(ServerMessage::Error { code, .. }) => code,
        other => panic!("expected an error, got {other:?}"),
    }
}

/// Reads until the server's close frame and returns its code.
async fn expect_close(ws: &mut Ws) -> Option<u16> {
    loop {
        match tokio::time::timeout(Duration::from_secs(5), ws.next()).await.ok()? {
            Some(Ok(Message::Close(frame))) => return frame.map(|f| u16::from(f.code)),
            Some(Ok(_)) => continue,
            _ => return None,
        }
    }
}

fn is_hello(m: &ServerMessage) -> bool {
    matches!(m, ServerMessage::Hello { .. })
}

#[tokio::test]
async fn operator_slots() {
    let bridge = start(Some(0)).await;
    let mut first = connect(&bridge).await;
    send(&mut first, r#"{"v":1,"kind":"hello","role":"operator_a"}"#).await;
    match next_matching(&mut first, is_hello).await.unwrap() {
        ServerMessage::Hello { role, layout, symbol_period_ms, capabilities } => {
            assert_eq!(role, Role::OperatorA);
            assert_eq!(layout.len(), 13);
            assert_eq!(layout[4].name, "G4");
            assert_eq!(symbol_period_ms, 10.0);
            assert!(capabilities.feedback);
        }
        _ => unreachable!(),
    }

    let mut second = connect(&bridge).await;
    send(&mut second, r#"{"v":1,"kind":"hello","role":"operator_a"}"#).await;
    assert_eq!(expect_error(&mut second).await, ErrorCode::RoleTaken);
    // Still usable for another role.
    send(&mut second, r#"{"v":1,"kind":"hello","role":"operator_b"}"#).await;
    assert!(next_matching(&mut second, is_hello).await.is_some());
    send(&mut second, r#"{"v":1,"kind":"hello","role":"audience"}"#).await;
    assert_eq!(expect_error(&mut second).await, ErrorCode::AlreadyAttached);

    // Leaving frees the slot.
    first.close(None).await.unwrap();
    tokio::time::sleep(Duration::from_millis(100)).await;
    let mut third = connect(&bridge).await;
    send(&mut third, r#"{"v":1,"kind":"hello","role":"operator_a"}"#).await;
    assert!(next_matching(&mut third, is_hello).await.is_some());
    bridge.shutdown().await.unwrap();
}

#[tokio::test]
async fn ten_audience_clients() {
    let bridge = start(Some(0)).await;
    let mut clients = Vec::new();
    for _ in 0..10 {
        let mut ws = connect(&bridge).await;
        send(&mut ws, r#"{"v":1,"kind":"hello","role":"audience"}"#).await;
        clients.push(ws);
    }
    for ws in &mut clients {
        assert!(next_matching(ws, is_hello).await.is_some());
    }
    bridge.shutdown().await.unwrap();
}

#[tokio::test]
async fn malformed_message_closes_only_that_connection() {
    let bridge = start(Some(0)).await;
    let mut bad = connect(&bridge).await;
    send(&mut bad, "{not json").await;
    assert_eq!(expect_error(&mut bad).await, ErrorCode::Malformed);
    assert_eq!(expect_close(&mut bad).await, Some(1008));

    let mut versioned = connect(&bridge).await;
    send(&mut versioned, r#"{"v":7,"kind":"hello","role":"audience"}"#).await;
    assert_eq!(expect_error(&mut versioned).await, ErrorCode::UnsupportedVersion);
    assert_eq!(expect_close(&mut versioned).await, Some(1008));

    let mut binary = connect(&bridge).await;
    binary.send(Message::binary(vec![1u8, 2, 3])).await.unwrap();
    assert_eq!(expect_error(&mut binary).await, ErrorCode::Malformed);

    // The session carries on.
    assert!(bridge.stats().await.is_some());
    let mut good = connect(&bridge).await;
    send(&mut good, r#"{"v":1,"kind":"hello","role":"audience"}"#).await;
    assert!(next_matching(&mut good, is_hello).await.is_some());
    bridge.shutdown().await.unwrap();
}

#[tokio::test]
async fn unknown_role_closes() {
    let bridge = start(Some(0)).await;
    let mut ws = connect(&bridge).await;
    send(&mut ws, r#"{"v":1,"kind":"hello","role":"conductor"}"#).await;
    assert_eq!(expect_error(&mut ws).await, ErrorCode::UnknownRole);
    assert_eq!(expect_close(&mut ws).await, Some(1008));
    bridge.shutdown().await.unwrap();
}

#[tokio::test]
async fn strike_rules() {
    let bridge = start(Some(0)).await;

    let mut early = connect(&bridge).await;
    send(&mut early, r#"{"v":1,"kind":"strike","key":3}"#).await;
    assert_eq!(expect_error(&mut early).await, ErrorCode::NotAttached);

    let mut op = connect(&bridge).await;
    send(&mut op, r#"{"v":1,"kind":"hello","role":"operator_a"}"#).await;
    next_matching(&mut op, is_hello).await.unwrap();
    send(&mut op, r#"{"v":1,"kind":"strike","key":99}"#).await;
    assert_eq!(expect_error(&mut op).await, ErrorCode::KeyOutOfRange);
    // A valid strike with nothing lit is spurious, and goes to arduino B.
    send(&mut op, r#"{"v":1,"kind":"strike","key":3}"#).await;
    match next_matching(&mut op, |m| matches!(m, ServerMessage::Feedback { .. })).await.unwrap() {
        ServerMessage::Feedback { key, class } => {
            assert_eq!(key, 3);
            assert_eq!(class, StrikeClass::Spurious);
        }
        _ => unreachable!(),
    }

    let mut audience = connect(&bridge).await;
    send(&mut audience, r#"{"v":1,"kind":"hello","role":"audience"}"#).await;
    next_matching(&mut audience, is_hello).await.unwrap();
    send(&mut audience, r#"{"v":1,"kind":"strike","key":3}"#).await;
    assert_eq!(expect_error(&mut audience).await, ErrorCode::Forbidden);
    assert_eq!(expect_close(&mut audience).await, Some(1008));

    let summary = bridge.shutdown().await.unwrap();
    assert_eq!(summary.stats.strikes, 1);
    assert_eq!(summary.stats.strike_classes.spurious, 1);
    let log = String::from_utf8(summary.jsonl).unwrap();
    let strike = log.lines().find(|l| l.contains(r#""kind":"strike""#)).unwrap();
    assert!(strike.contains(r#""side":"A""#) && strike.contains(r#""injected":true"#));
}

#[tokio::test]
async fn leds_keep_signaling_without_players() {
    let bridge = start(None).await;
    let stats = bridge.wait_for(Duration::from_secs(5), |s| s.symbols_sent >= 50).await.unwrap();
    assert!(stats.symbols_sent >= 50);
    assert_eq!(stats.packets_delivered, 0);
    assert!(stats.strike_classes.missed > 0);
    bridge.shutdown().await.unwrap();
}

#[tokio::test]
async fn bots_complete_a_ping() {
    let bridge = start(Some(1)).await;
    let audience = spawn_bot(bridge.url(), BotConfig::audience());
    let a = spawn_bot(bridge.url(), BotConfig::perfect(Role::OperatorA, Duration::from_millis(2)));
    let b = spawn_bot(bridge.url(), BotConfig::perfect(Role::OperatorB, Duration::from_millis(2)));

    let stats = bridge.wait_for(Duration::from_secs(60), |s| s.pings_completed >= 1).await.unwrap();
    assert_eq!(stats.pings_completed, 1, "{stats:?}");
    let summary = bridge.shutdown().await.unwrap();
    assert_eq!(summary.stats.packets_delivered, 2);

    let a = a.await.unwrap().unwrap();
    let b = b.await.unwrap().unwrap();
    assert_eq!(a.lights, 464);
    assert_eq!(b.lights, 464);
    // Lights reach their operator in order.
    let seqs: Vec<u64> = a
        .received
        .iter()
        .filter_map(|m| if let ServerMessage::Light { seq, .. } = m { Some(*seq) } else { None })
        .collect();
    assert_eq!(seqs, (0..464).collect::<Vec<_>>());
    // One feedback per strike, plus one per symbol that expired unstruck.
    let feedback = a
        .received
        .iter()
        .filter(|m| matches!(m, ServerMessage::Feedback { class, .. } if *class != StrikeClass::Missed))
        .count();
    assert_eq!(feedback, 464);
    // Wall-clock jitter may push the odd strike out of its window.
    assert!(summary.stats.strike_classes.correct >= 2 * 464 * 9 / 10, "{:?}", summary.stats.strike_classes);

    let audience = audience.await.unwrap().unwrap();
    let total_lengths: Vec<(Side, String)> = audience
        .received
        .iter()
        .filter_map(|m| match m {
            ServerMessage::Annotation { side, body, .. } if body.field == "total_length" => {
                Some((*side, body.value.clone()))
            }
            _ => None,
        })
        .collect();
    assert_eq!(total_lengths, vec![(Side::B, "56".to_string()), (Side::A, "56".to_string())]);
    // Annotations arrive in byte order.
    let offsets: Vec<usize> = audience
        .received
        .iter()
        .filter_map(|m| match m {
            ServerMessage::Annotation { side: Side::B, body, .. } => Some(body.offset),
            _ => None,
        })
        .collect();
    assert!(offsets.windows(2).all(|w| w[0] < w[1]));
    let strikes = audience
        .received
        .iter()
        .filter(|m| matches!(m, ServerMessage::Progress(p) if p.phase == Phase::Strike))
        .count();
    assert_eq!(strikes, 2 * 464);
    assert!(audience
        .received
        .iter()
        .any(|m| matches!(m, ServerMessage::Progress(p) if p.phase == Phase::PingComplete)));
}

#[tokio::test]
async fn disconnect_mid_packet_shows_missed_strikes() {
    let bridge = start(Some(1)).await;
    let mut quitter = BotConfig::perfect(Role::OperatorA, Duration::from_millis(2));
    quitter.disconnect_after = Some(100);
    let report = run_bot(&bridge.url(), quitter).await.unwrap();
    assert_eq!(report.lights, 100);
    let stats = bridge.wait_for(Duration::from_secs(5), |s| s.strike_classes.missed >= 100).await.unwrap();
    assert!(stats.strike_classes.missed >= 100, "{stats:?}");
    assert!(stats.strikes >= 95 && stats.strikes <= 100);
    let summary = bridge.shutdown().await.unwrap();
    assert_eq!(summary.stats.pings_completed, 0);
}

#[tokio::test]
async fn shutdown_closes_clients() {
    let bridge = start(Some(0)).await;
    let audience = spawn_bot(bridge.url(), BotConfig::audience());
    tokio::time::sleep(Duration::from_millis(200)).await;
    bridge.shutdown().await.unwrap();
    let report = audience.await.unwrap().unwrap();
    assert_eq!(report.close_code, Some(1001));
    assert!(report.received.iter().any(is_hello));
}
