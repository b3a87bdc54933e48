use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::Context;
use clap::Args;
use ipoxp_bridge::protocol::Capabilities;
use ipoxp_bridge::{BridgeConfig, PingSchedule};
use ipoxp_core::scenario::payload_pattern;

use crate::args::{session_config, usage, SessionArgs};

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub session: SessionArgs,
    /// Address for the WebSocket listener.
    #[arg(long, default_value = "127.0.0.1:8080", value_name = "ADDR")]
    pub listen: SocketAddr,
    /// Number of pings to send; unlimited when omitted.
    #[arg(long, value_name = "N")]
    pub pings: Option<u32>,
    /// Seconds between pings.
    #[arg(long, value_name = "SECS")]
    pub interval: Option<f64>,
    /// Classify each strike back to the operator who made it.
    #[arg(long)]
    pub feedback: bool,
    /// Ask consoles to show only keys and LEDs.
    #[arg(long)]
    pub restricted_view: bool,
    /// Write the event log as JSON lines on shutdown.
    #[arg(long, value_name = "PATH")]
    pub log: Option<PathBuf>,
}

pub fn bridge_config(args: &ServeArgs) -> anyhow::Result<BridgeConfig> {
    let scenario = args.session.scenario()?;
    let session = session_config(&scenario)?;
    let interval = match args.interval {
        Some(v) => Duration::try_from_secs_f64(v)
            .ok()
            .filter(|d| !d.is_zero())
            .ok_or_else(|| usage("--interval must be a positive number of seconds"))?,
        None => session.symbol_period * 1000,
    };
    if args.pings == Some(0) {
        return Err(usage("--pings must be at least 1"));
    }
    Ok(BridgeConfig {
        pings: PingSchedule {
            identifier: scenario.ping.identifier,
            payload: payload_pattern(scenario.ping.payload_size),
            interval,
            count: args.pings,
            ..PingSchedule::default()
        },
        capabilities: Capabilities { feedback: args.feedback, restricted_view: args.restricted_view },
        session,
        ..BridgeConfig::default()
    })
}

pub async fn run(args: &ServeArgs) -> anyhow::Result<()> {
    let config = bridge_config(args)?;
    let handle =
        ipoxp_bridge::bind(args.listen, config).await.with_context(|| format!("cannot serve on {}", args.listen))?;
    println!("bridge listening on {}; ctrl-c stops", handle.url());
    tokio::signal::ctrl_c().await.context("waiting for ctrl-c")?;
    let summary = handle.shutdown().await.context("session ended unexpectedly")?;
    let s = &summary.stats;
    println!(
        "symbols {} strikes {} (correct {}, wrong key {}, missed {}, spurious {})",
        s.symbols_sent,
        s.strikes,
        s.strike_classes.correct,
        s.strike_classes.wrong_key,
        s.strike_classes.missed,
        s.strike_classes.spurious
    );
    println!(
        "packets sent {} delivered {} pings completed {} effective baud {:.3}",
        s.packets_sent, s.packets_delivered, s.pings_completed, s.effective_baud
    );
    if let Some(path) = &args.log {
        std::fs::write(path, &summary.jsonl).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
