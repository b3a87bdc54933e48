use std::fmt;
use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, ValueEnum};
use ipoxp_core::link::ClockMode;
use ipoxp_core::notes::{NoteCodec, XylophoneLayout};
use ipoxp_core::operator::{OperatorKind, OperatorModel};
use ipoxp_core::scenario::{LayoutSpec, Scenario};
use ipoxp_core::slip::SerialMode;
use ipoxp_core::SessionConfig;

/// Bad flags or flag combinations; the process exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CodecArg {
    /// Two keys, eight strikes per byte.
    Bit,
    /// Sixteen keys, two strikes per byte (chromatic layout).
    Nibble,
}

/// Session settings shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct SessionArgs {
    /// Scenario file (TOML); flags override its values.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seconds per symbol.
    #[arg(long, value_name = "SECS")]
    pub period: Option<f64>,
    #[arg(long, value_enum)]
    pub codec: Option<CodecArg>,
    /// Serial representation between host and arduino: raw_slip or hex_ascii.
    #[arg(long, value_name = "MODE")]
    pub serial: Option<SerialMode>,
    /// Operator model for both sides: perfect, noisy, absent or remote.
    #[arg(long, value_name = "KIND")]
    pub operator: Option<OperatorKind>,
    /// Operator model for side A only.
    #[arg(long, value_name = "KIND")]
    pub operator_a: Option<OperatorKind>,
    /// Operator model for side B only.
    #[arg(long, value_name = "KIND")]
    pub operator_b: Option<OperatorKind>,
    /// Per-symbol miss probability; implies a noisy operator.
    #[arg(long, value_name = "P")]
    pub p_miss: Option<f64>,
    /// Per-symbol wrong-key probability; implies a noisy operator.
    #[arg(long, value_name = "P")]
    pub p_wrong: Option<f64>,
    /// Per-symbol spurious-strike probability; implies a noisy operator.
    #[arg(long, value_name = "P")]
    pub p_spurious: Option<f64>,
    /// Mean reaction time in seconds.
    #[arg(long, value_name = "SECS")]
    pub reaction: Option<f64>,
    /// Uniform reaction jitter in seconds (noisy operators).
    #[arg(long, value_name = "SECS")]
    pub jitter: Option<f64>,
    /// Run on the virtual clock (default).
    #[arg(long, conflicts_with = "realtime")]
    pub fast: bool,
    /// Map session time 1:1 onto wall time.
    #[arg(long)]
    pub realtime: bool,
}

fn secs(name: &str, value: f64) -> anyhow::Result<Duration> {
    Duration::try_from_secs_f64(value).map_err(|_| usage(format!("--{name} must be a non-negative number of seconds")))
}

impl SessionArgs {
    /// The scenario file (or defaults) with every given flag applied.
    pub fn scenario(&self) -> anyhow::Result<Scenario> {
        let mut s = match &self.config {
            Some(path) => Scenario::load(path).map_err(|e| usage(e.to_string()))?,
            None => Scenario::default(),
        };
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(period) = self.period {
            if !(period.is_finite() && period > 0.0) {
                return Err(usage("--period must be a positive number of seconds"));
            }
            s.symbol_period = period;
        }
        if let Some(serial) = self.serial {
            s.serial_mode = serial;
        }
        match self.codec {
            Some(CodecArg::Nibble) => {
                s.layout = LayoutSpec { preset: Some("chromatic16".into()), keys: None };
                s.codec = Some(NoteCodec::nibble_identity());
            }
            Some(CodecArg::Bit) => {
                let layout = s.layout.build().map_err(|e| usage(e.to_string()))?;
                s.codec = Some(bit_codec_for(&layout));
            }
            None => {}
        }
        if self.realtime {
            s.clock = ClockMode::Realtime;
        } else if self.fast {
            s.clock = ClockMode::Virtual;
        }
        let noisy_flags = self.p_miss.is_some() || self.p_wrong.is_some() || self.p_spurious.is_some();
        for (model, side_kind) in [(&mut s.operator_a, self.operator_a), (&mut s.operator_b, self.operator_b)] {
            if let Some(kind) = side_kind.or(self.operator) {
                model.kind = kind;
            } else if noisy_flags && model.kind == OperatorKind::Perfect {
                model.kind = OperatorKind::Noisy;
            }
            if let Some(p) = self.p_miss {
                model.p_miss = p;
            }
            if let Some(p) = self.p_wrong {
                model.p_wrong_key = p;
            }
            if let Some(p) = self.p_spurious {
                model.p_spurious = p;
            }
            if let Some(r) = self.reaction {
                model.reaction_mean = secs("reaction", r)?;
            }
            if let Some(j) = self.jitter {
                model.reaction_jitter = secs("jitter", j)?;
            }
            model.validate().map_err(|e| usage(e.to_string()))?;
        }
        Ok(s)
    }
}

/// The scenario's session, checked the way the engine will check it.
pub fn session_config(scenario: &Scenario) -> anyhow::Result<SessionConfig> {
    let config = scenario.session_config().map_err(|e| usage(e.to_string()))?;
    config.codec.validate(&config.layout).map_err(|e| usage(format!("codec: {e}")))?;
    Ok(config)
}

/// G4 for zero and A4 for one, wherever the layout puts them.
fn bit_codec_for(layout: &XylophoneLayout) -> NoteCodec {
    match (layout.index_of("G4"), layout.index_of("A4")) {
        (Some(zero), Some(one)) => NoteCodec::bit(zero.0, one.0),
        _ => NoteCodec::bit(0, 1),
    }
}

pub fn operator_label(model: &OperatorModel) -> String {
    match model.kind {
        OperatorKind::Noisy => {
            format!("noisy (miss {}, wrong {}, spurious {})", model.p_miss, model.p_wrong_key, model.p_spurious)
        }
        kind => format!("{kind:?}").to_lowercase(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_defaults() {
        let args = SessionArgs { seed: Some(9), period: Some(0.5), p_miss: Some(0.01), ..Default::default() };
        let s = args.scenario().unwrap();
        assert_eq!(s.seed, 9);
        assert_eq!(s.symbol_period, 0.5);
        assert_eq!(s.operator_a.kind, OperatorKind::Noisy);
        assert_eq!(s.operator_b.p_miss, 0.01);
    }

    #[test]
    fn per_side_operator_wins() {
        let args = SessionArgs {
            operator: Some(OperatorKind::Perfect),
            operator_b: Some(OperatorKind::Absent),
            ..Default::default()
        };
        let s = args.scenario().unwrap();
        assert_eq!(s.operator_a.kind, OperatorKind::Perfect);
        assert_eq!(s.operator_b.kind, OperatorKind::Absent);
    }

    #[test]
    fn nibble_switches_layout() {
        let args = SessionArgs { codec: Some(CodecArg::Nibble), ..Default::default() };
        let config = session_config(&args.scenario().unwrap()).unwrap();
        assert_eq!(config.layout.len(), 16);
        assert_eq!(config.codec.symbols_per_byte(), 2);
        let args = SessionArgs { codec: Some(CodecArg::Bit), ..Default::default() };
        let config = session_config(&args.scenario().unwrap()).unwrap();
        assert_eq!(config.codec, NoteCodec::bit(4, 5));
    }

    #[test]
    fn bad_values_are_usage_errors() {
        for args in [
            SessionArgs { p_miss: Some(1.5), ..Default::default() },
            SessionArgs { period: Some(0.0), ..Default::default() },
            SessionArgs { reaction: Some(-1.0), ..Default::default() },
        ] {
            assert!(args.scenario().unwrap_err().is::<UsageError>());
        }
    }
}
