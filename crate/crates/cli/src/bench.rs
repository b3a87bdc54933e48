use std::fmt;
use std::time::Duration;

use clap::Args;
use ipoxp_core::link::RunLimit;
use ipoxp_core::operator::OperatorKind;
use ipoxp_core::packet::{build_echo_request, MAX_ECHO_PAYLOAD};
use ipoxp_core::scenario::payload_pattern;
use ipoxp_core::slip::slip_encode;
use ipoxp_core::{LinkSession, SessionConfig, Side, SimTime};

use crate::args::{session_config, usage, SessionArgs};

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub session: SessionArgs,
    /// Per-symbol miss probabilities to sweep.
    #[arg(long, value_delimiter = ',', default_value = "0,0.001,0.005,0.01", value_name = "P,P,...")]
    pub sweep: Vec<f64>,
    /// Sessions per row.
    #[arg(long, default_value_t = 200)]
    pub trials: u32,
    /// Payload size in bytes.
    #[arg(long, short = 's', default_value_t = 28, value_name = "BYTES")]
    pub payload: usize,
}

/// A published measurement quoted next to the simulation rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LiteratureDatum {
    pub label: &'static str,
    pub sent: u32,
    pub returned: u32,
    pub latency_secs: (u32, u32),
}

pub const AVIAN_CARRIER: LiteratureDatum =
    LiteratureDatum { label: "avian carrier (Bergen 2001)", sent: 9, returned: 4, latency_secs: (3000, 6000) };

impl fmt::Display for LiteratureDatum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {}/{} delivered, {}-{} s",
            self.label, self.returned, self.sent, self.latency_secs.0, self.latency_secs.1
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub p_miss: f64,
    pub trials: u32,
    /// Requests that reached B byte for byte.
    pub delivered: u32,
    /// (1 - p)^n for a miss-only model, where n is the frame's symbol count.
    pub predicted: Option<f64>,
    pub round_trips: u32,
    pub mean_rtt: Option<Duration>,
}

impl BenchRow {
    pub fn delivery(&self) -> f64 {
        f64::from(self.delivered) / f64::from(self.trials)
    }

    /// Three binomial standard deviations around the prediction.
    pub fn band(&self) -> Option<(f64, f64)> {
        let p = self.predicted?;
        let sigma = (p * (1.0 - p) / f64::from(self.trials)).sqrt();
        Some(((p - 3.0 * sigma).max(0.0), (p + 3.0 * sigma).min(1.0)))
    }

    pub fn within_band(&self) -> Option<bool> {
        let (lo, hi) = self.band()?;
        Some((lo..=hi).contains(&self.delivery()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchTable {
    pub payload: usize,
    pub frame_symbols: usize,
    pub symbol_period: Duration,
    pub rows: Vec<BenchRow>,
}

impl fmt::Display for BenchTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "delivery over a noisy operator: {}-byte payload, {}-symbol frames, {} s per symbol",
            self.payload,
            self.frame_symbols,
            self.symbol_period.as_secs_f64()
        )?;
        writeln!(
            f,
            "{:<9} {:>10} {:>9} {:>9} {:>16} {:>7} {:>11} {:>12}",
            "p_miss", "delivered", "fraction", "(1-p)^n", "3-sigma band", "in band", "round trip", "mean RTT"
        )?;
        for r in &self.rows {
            let predicted = r.predicted.map_or("-".to_string(), |p| format!("{p:.4}"));
            let band = r.band().map_or("-".to_string(), |(lo, hi)| format!("[{lo:.3}, {hi:.3}]"));
            let in_band = r.within_band().map_or("-", |ok| if ok { "yes" } else { "no" });
            let rtt = r.mean_rtt.map_or("-".to_string(), |d| format!("{:.1} s", d.as_secs_f64()));
            writeln!(
                f,
                "{:<9} {:>10} {:>9.4} {:>9} {:>16} {:>7} {:>11} {:>12}",
                r.p_miss,
                format!("{}/{}", r.delivered, r.trials),
                r.delivery(),
                predicted,
                band,
                in_band,
                format!("{}/{}", r.round_trips, r.trials),
                rtt
            )?;
        }
        writeln!(f)?;
        writeln!(f, "literature reference (not simulated): {AVIAN_CARRIER}")
    }
}

/// Runs `trials` one-ping sessions with operator A missing symbols at
/// `p_miss` (plus any other noise in `base`). Trial `i` uses seed
/// `base.seed + i`.
pub fn run_row(base: &SessionConfig, p_miss: f64, trials: u32, payload: &[u8]) -> anyhow::Result<BenchRow> {
    let request = build_echo_request(base.host_a.address, base.host_b.address, 1, 0, payload, base.host_a.ttl)?;
    let mut delivered = 0;
    let mut round_trips = 0;
    let mut rtt_sum = Duration::ZERO;
    for trial in 0..trials {
        let mut config = base.clone();
        config.seed = base.seed.wrapping_add(u64::from(trial));
        for model in [&mut config.operator_a, &mut config.operator_b] {
            if model.kind == OperatorKind::Perfect {
                model.kind = OperatorKind::Noisy;
            }
            model.p_miss = p_miss;
        }
        let mut session = LinkSession::new(config)?;
        session.schedule_ping(SimTime::ZERO, Side::A, 1, 0, payload.to_vec())?;
        let stats = session.run(RunLimit::Quiescence)?;
        let at_b = session.deliveries().iter().any(|(_, bytes)| *bytes == request);
        delivered += u32::from(at_b);
        if let Some(rtt) = stats.rtts.first() {
            round_trips += 1;
            rtt_sum += *rtt;
        }
    }
    let clean = base.operator_a.p_wrong_key == 0.0 && base.operator_a.p_spurious == 0.0;
    let n = frame_symbols(base, &request);
    Ok(BenchRow {
        p_miss,
        trials,
        delivered,
        predicted: clean.then(|| (1.0 - p_miss).powi(n as i32)),
        round_trips,
        mean_rtt: (round_trips > 0).then(|| rtt_sum / round_trips),
    })
}

pub fn frame_symbols(config: &SessionConfig, datagram: &[u8]) -> usize {
    slip_encode(datagram).len() * config.host_a.serial_mode.expansion() * config.codec.symbols_per_byte()
}

pub fn execute(args: &BenchArgs) -> anyhow::Result<BenchTable> {
    if args.sweep.is_empty() {
        return Err(usage("--sweep needs at least one probability"));
    }
    if let Some(p) = args.sweep.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(usage(format!("--sweep value {p} is not a probability")));
    }
    if args.trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    if args.payload > MAX_ECHO_PAYLOAD {
        return Err(usage(format!("--payload is limited to {MAX_ECHO_PAYLOAD} bytes")));
    }
    let scenario = args.session.scenario()?;
    for model in [&scenario.operator_a, &scenario.operator_b] {
        if matches!(model.kind, OperatorKind::Remote | OperatorKind::Absent) {
            return Err(usage("bench needs simulated operators (perfect or noisy)"));
        }
    }
    let config = session_config(&scenario)?;
    let payload = payload_pattern(args.payload);
    let request = build_echo_request(config.host_a.address, config.host_b.address, 1, 0, &payload, config.host_a.ttl)?;
    let rows =
        args.sweep.iter().map(|&p| run_row(&config, p, args.trials, &payload)).collect::<anyhow::Result<Vec<_>>>()?;
    Ok(BenchTable {
        payload: args.payload,
        frame_symbols: frame_symbols(&config, &request),
        symbol_period: config.symbol_period,
        rows,
    })
}

pub fn run(args: &BenchArgs) -> anyhow::Result<()> {
    print!("{}", execute(args)?);
    Ok(())
}
