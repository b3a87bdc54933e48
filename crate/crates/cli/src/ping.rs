use std::fmt;
use std::net::Ipv4Addr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use clap::Args;
use ipoxp_core::link::{LogEvent, LogFormat, RunLimit};
use ipoxp_core::operator::OperatorKind;
use ipoxp_core::packet::{ICMP_HEADER_LEN, IPV4_HEADER_LEN, MAX_ECHO_PAYLOAD};
use ipoxp_core::scenario::payload_pattern;
use ipoxp_core::{LinkSession, SessionConfig, Side, SimTime};

use crate::args::{operator_label, session_config, usage, SessionArgs};

#[derive(Debug, Clone, Args)]
pub struct PingArgs {
    #[command(flatten)]
    pub session: SessionArgs,
    /// Number of echo requests.
    #[arg(long, short = 'c')]
    pub count: Option<u32>,
    /// Payload size in bytes.
    #[arg(long, short = 's', value_name = "BYTES")]
    pub payload: Option<usize>,
    /// Seconds between requests; defaults to one ideal round trip plus a
    /// short pause.
    #[arg(long, value_name = "SECS")]
    pub interval: Option<f64>,
    /// Seconds before a request counts as lost; defaults to twice the ideal
    /// round trip.
    #[arg(long, value_name = "SECS")]
    pub timeout: Option<f64>,
    /// Write delivered datagrams as a pcap capture.
    #[arg(long, value_name = "PATH")]
    pub pcap: Option<PathBuf>,
    /// Write the event log as JSON lines.
    #[arg(long, value_name = "PATH")]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub sequence: u16,
    /// `None` for a lost or late reply.
    pub rtt: Option<Duration>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PingReport {
    pub dst: Ipv4Addr,
    pub payload: usize,
    pub ttl: u8,
    pub banner: String,
    pub replies: Vec<Reply>,
    pub session_time: SimTime,
    pub effective_baud: f64,
}

impl PingReport {
    pub fn sent(&self) -> usize {
        self.replies.len()
    }

    pub fn received(&self) -> usize {
        self.replies.iter().filter(|r| r.rtt.is_some()).count()
    }

    pub fn loss_percent(&self) -> f64 {
        if self.sent() == 0 {
            return 0.0;
        }
        100.0 * (1.0 - self.received() as f64 / self.sent() as f64)
    }

    /// (min, avg, max) over received replies.
    pub fn rtt_summary(&self) -> Option<(f64, f64, f64)> {
        let rtts: Vec<f64> = self.replies.iter().filter_map(|r| r.rtt).map(|d| d.as_secs_f64()).collect();
        if rtts.is_empty() {
            return None;
        }
        let min = rtts.iter().copied().fold(f64::INFINITY, f64::min);
        let max = rtts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let avg = rtts.iter().sum::<f64>() / rtts.len() as f64;
        Some((min, avg, max))
    }
}

impl fmt::Display for PingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let datagram = self.payload + IPV4_HEADER_LEN + ICMP_HEADER_LEN;
        writeln!(f, "PING {0} ({0}) {1}({2}) bytes of data {3}", self.dst, self.payload, datagram, self.banner)?;
        for r in &self.replies {
            match r.rtt {
                Some(rtt) => writeln!(
                    f,
                    "{} bytes from {}: icmp_seq={} ttl={} time={:.3} s{}",
                    self.payload + ICMP_HEADER_LEN,
                    self.dst,
                    r.sequence,
                    self.ttl,
                    rtt.as_secs_f64(),
                    if r.flagged { " (checksum flagged)" } else { "" }
                )?,
                None => writeln!(f, "Request timeout for icmp_seq {}", r.sequence)?,
            }
        }
        writeln!(f)?;
        writeln!(f, "--- {} ping statistics ---", self.dst)?;
        writeln!(
            f,
            "{} packets transmitted, {} received, {:.1}% packet loss, time {:.3} s",
            self.sent(),
            self.received(),
            self.loss_percent(),
            self.session_time.as_secs_f64()
        )?;
        if let Some((min, avg, max)) = self.rtt_summary() {
            writeln!(f, "rtt min/avg/max = {min:.3}/{avg:.3}/{max:.3} s")?;
        }
        writeln!(f, "effective baud {:.3} symbols/s", self.effective_baud)
    }
}

/// Round trip of a perfect link for this datagram size, ignoring escapes.
fn ideal_rtt(config: &SessionConfig, payload: usize) -> Duration {
    let wire = (payload + IPV4_HEADER_LEN + ICMP_HEADER_LEN + 2) * config.host_a.serial_mode.expansion();
    config.ideal_one_way(wire, config.operator_a.reaction_mean)
        + config.ideal_one_way(wire, config.operator_b.reaction_mean)
}

/// Runs the session and builds the report; also returns the session for
/// log export.
pub fn execute(args: &PingArgs) -> anyhow::Result<(PingReport, LinkSession)> {
    let mut scenario = args.session.scenario()?;
    if let Some(count) = args.count {
        scenario.ping.count = count;
    }
    if let Some(size) = args.payload {
        scenario.ping.payload_size = size;
    }
    if let Some(interval) = args.interval {
        scenario.ping.interval = Some(interval);
    }
    if let Some(timeout) = args.timeout {
        scenario.ping.timeout = Some(timeout);
    }
    if scenario.ping.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    if scenario.ping.payload_size > MAX_ECHO_PAYLOAD {
        return Err(usage(format!("--payload is limited to {MAX_ECHO_PAYLOAD} bytes")));
    }
    for model in [&scenario.operator_a, &scenario.operator_b] {
        if model.kind == OperatorKind::Remote {
            return Err(usage("remote operators need a live session; use `ipoxp serve`"));
        }
    }
    let config = session_config(&scenario)?;
    let positive = |name: &str, v: f64| {
        Duration::try_from_secs_f64(v)
            .ok()
            .filter(|d| !d.is_zero())
            .ok_or_else(|| usage(format!("--{name} must be a positive number of seconds")))
    };
    let rtt = ideal_rtt(&config, scenario.ping.payload_size);
    let interval = match scenario.ping.interval {
        Some(v) => positive("interval", v)?,
        None => rtt + config.symbol_period * 16,
    };
    let timeout = match scenario.ping.timeout {
        Some(v) => positive("timeout", v)?,
        None => rtt * 2,
    };

    let banner = format!(
        "over xylophone: {} codec, {} s per symbol, operators {} / {}",
        if config.codec.symbols_per_byte() == 8 { "bit" } else { "nibble" },
        config.symbol_period.as_secs_f64(),
        operator_label(&config.operator_a),
        operator_label(&config.operator_b),
    );
    let dst = config.host_b.address;
    let ttl = config.host_b.ttl;
    let mut session = LinkSession::new(config)?;
    let payload = payload_pattern(scenario.ping.payload_size);
    let identifier = scenario.ping.identifier;
    for i in 0..scenario.ping.count {
        let at = SimTime::ZERO + interval * i;
        session.schedule_ping(at, Side::A, identifier, i as u16, payload.clone())?;
    }
    let stats = session.run(RunLimit::Quiescence).context("session aborted")?;

    let mut replies: Vec<Reply> =
        (0..scenario.ping.count).map(|i| Reply { sequence: i as u16, rtt: None, flagged: false }).collect();
    for entry in session.log().iter().filter(|e| e.side == Side::A) {
        if let LogEvent::PingComplete { identifier: id, sequence, rtt, flagged } = entry.event {
            if id == identifier && rtt <= timeout {
                if let Some(r) = replies.get_mut(usize::from(sequence)) {
                    r.rtt = Some(rtt);
                    r.flagged = flagged;
                }
            }
        }
    }
    let report = PingReport {
        dst,
        payload: scenario.ping.payload_size,
        ttl,
        banner,
        replies,
        session_time: stats.session_time,
        effective_baud: stats.effective_baud,
    };
    Ok((report, session))
}

pub fn run(args: &PingArgs) -> anyhow::Result<ExitCode> {
    let (report, session) = execute(args)?;
    print!("{report}");
    if let Some(path) = &args.pcap {
        std::fs::write(path, session.export_log(LogFormat::Pcap))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &args.log {
        std::fs::write(path, session.export_log(LogFormat::Jsonl))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(if report.received() > 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(count: u32) -> PingArgs {
        PingArgs {
            session: SessionArgs::default(),
            count: Some(count),
            payload: Some(28),
            interval: None,
            timeout: None,
            pcap: None,
            log: None,
        }
    }

    #[test]
    fn one_perfect_ping() {
        let (report, _) = execute(&args(1)).unwrap();
        assert_eq!(report.sent(), 1);
        assert_eq!(report.received(), 1);
        assert_eq!(report.replies[0].rtt, Some(Duration::from_secs(1853)));
        let text = report.to_string();
        assert!(text.starts_with("PING 10.0.0.2 (10.0.0.2) 28(56) bytes of data"));
        assert!(text.contains("36 bytes from 10.0.0.2: icmp_seq=0 ttl=64 time=1853.000 s"));
        assert!(text.contains("1 packets transmitted, 1 received, 0.0% packet loss"));
        assert!(text.contains("effective baud 0.500"));
    }

    #[test]
    fn report_arithmetic_is_consistent() {
        let mut a = args(20);
        a.session.p_miss = Some(0.001);
        a.session.seed = Some(5);
        let (report, _) = execute(&a).unwrap();
        let expected_loss = 100.0 * (1.0 - report.received() as f64 / report.sent() as f64);
        assert_eq!(report.loss_percent(), expected_loss);
        assert!(report.received() > 0 && report.received() < 20);
        let (min, avg, max) = report.rtt_summary().unwrap();
        assert!(min <= avg && avg <= max);
    }

    #[test]
    fn short_timeout_turns_replies_into_losses() {
        let mut a = args(1);
        a.timeout = Some(100.0);
        let (report, _) = execute(&a).unwrap();
        assert_eq!(report.received(), 0);
        assert!(report.to_string().contains("Request timeout for icmp_seq 0"));
    }

    #[test]
    fn usage_errors() {
        use crate::args::UsageError;
        let mut a = args(0);
        assert!(execute(&a).err().unwrap().is::<UsageError>());
        a.count = Some(1);
        a.session.operator = Some(OperatorKind::Remote);
        assert!(execute(&a).err().unwrap().is::<UsageError>());
        let mut a = args(1);
        a.payload = Some(1481);
        assert!(execute(&a).err().unwrap().is::<UsageError>());
    }
}
