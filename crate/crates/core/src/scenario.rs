//! Scenario files.
//!
//! A scenario is a TOML document describing one session and the pings to
//! run over it:
//!
//! ```toml
//! seed = 7
//! symbol_period = 2.0
//! clock = "virtual"
//! serial_mode = "raw_slip"
//!
//! [layout]
//! preset = "diatonic13"
//!
//! [codec]
//! kind = "bit"
//! zero_key = 4
//! one_key = 5
//!
//! [ping]
//! count = 3
//! payload_size = 28
//!
//! [operator_a]
//! kind = "noisy"
//! p_miss = 0.01
//! ```
//!
//! Every key is optional. Command-line flags are applied on top of the
//! parsed file.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::host::HostConfig;
use crate::link::{ClockMode, SessionConfig};
use crate::notes::{LayoutError, NoteCodec, XylophoneLayout};
use crate::operator::OperatorModel;
use crate::packet::MAX_ECHO_PAYLOAD;
use crate::slip::SerialMode;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unknown layout preset `{0}` (expected diatonic13 or chromatic16)")]
    UnknownPreset(String),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error("payload of {0} bytes exceeds the {MAX_ECHO_PAYLOAD}-byte limit")]
    PayloadTooLarge(usize),
    #[error("{name} must be a positive number of seconds, got {value}")]
    BadDuration { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutSpec {
    pub preset: Option<String>,
    /// Key names in index order; overrides `preset`. Names containing `#`
    /// are accidentals.
    pub keys: Option<Vec<String>>,
}

impl Default for LayoutSpec {
    fn default() -> Self {
        LayoutSpec { preset: Some("diatonic13".into()), keys: None }
    }
}

impl LayoutSpec {
    pub fn build(&self) -> Result<XylophoneLayout, ScenarioError> {
        if let Some(keys) = &self.keys {
            return Ok(XylophoneLayout::from_names(keys.iter().map(|k| (k.as_str(), k.contains('#'))))?);
        }
        match self.preset.as_deref().unwrap_or("diatonic13") {
            "diatonic13" => Ok(XylophoneLayout::diatonic13()),
            "chromatic16" => Ok(XylophoneLayout::chromatic16()),
            other => Err(ScenarioError::UnknownPreset(other.into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PingPlan {
    pub count: u32,
    pub payload_size: usize,
    pub identifier: u16,
    /// Seconds between pings; defaults to back-to-back after the previous
    /// round trip would ideally complete.
    pub interval: Option<f64>,
    /// Seconds before an unanswered ping counts as lost; defaults to twice
    /// the ideal round trip.
    pub timeout: Option<f64>,
}

impl Default for PingPlan {
    fn default() -> Self {
        PingPlan { count: 1, payload_size: 28, identifier: 0x4958, interval: None, timeout: None }
    }
}

/// The classic incrementing ping pattern.
pub fn payload_pattern(len: usize) -> Vec<u8> {
    (0..len).map(|i| i as u8).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    /// Seconds per symbol.
    pub symbol_period: f64,
    /// Seconds; defaults to the symbol period.
    pub strike_window: Option<f64>,
    pub clock: ClockMode,
    pub serial_mode: SerialMode,
    pub layout: LayoutSpec,
    /// Defaults to the layout's natural codec.
    pub codec: Option<NoteCodec>,
    pub ping: PingPlan,
    pub operator_a: OperatorModel,
    pub operator_b: OperatorModel,
    pub host_a: Option<HostConfig>,
    pub host_b: Option<HostConfig>,
    pub max_events: Option<u64>,
    /// Silent symbol periods before a receiver drops a partial byte; 0
    /// disables resynchronization.
    pub rx_resync_periods: Option<u32>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            seed: 0,
            symbol_period: 2.0,
            strike_window: None,
            clock: ClockMode::Virtual,
            serial_mode: SerialMode::RawSlip,
            layout: LayoutSpec::default(),
            codec: None,
            ping: PingPlan::default(),
            operator_a: OperatorModel::default(),
            operator_b: OperatorModel::default(),
            host_a: None,
            host_b: None,
            max_events: None,
            rx_resync_periods: None,
        }
    }
}

fn positive_secs(name: &'static str, value: f64) -> Result<Duration, ScenarioError> {
    if value.is_finite() && value > 0.0 {
        Duration::try_from_secs_f64(value).map_err(|_| ScenarioError::BadDuration { name, value })
    } else {
        Err(ScenarioError::BadDuration { name, value })
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn payload(&self) -> Result<Vec<u8>, ScenarioError> {
        if self.ping.payload_size > MAX_ECHO_PAYLOAD {
            return Err(ScenarioError::PayloadTooLarge(self.ping.payload_size));
        }
        Ok(payload_pattern(self.ping.payload_size))
    }

    /// Builds the session configuration. Codec and operator validity are
    /// checked when the session is created.
    pub fn session_config(&self) -> Result<SessionConfig, ScenarioError> {
        let layout = self.layout.build()?;
        let codec = self.codec.clone().unwrap_or_else(|| NoteCodec::default_for(&layout));
        let defaults = SessionConfig::default();
        let host = |given: &Option<HostConfig>, fallback: HostConfig| {
            let mut h = given.clone().unwrap_or(fallback);
            h.serial_mode = self.serial_mode;
            h
        };
        Ok(SessionConfig {
            codec,
            layout,
            symbol_period: positive_secs("symbol_period", self.symbol_period)?,
            strike_window: self.strike_window.map(|w| positive_secs("strike_window", w)).transpose()?,
            operator_a: self.operator_a.clone(),
            operator_b: self.operator_b.clone(),
            host_a: host(&self.host_a, defaults.host_a.clone()),
            host_b: host(&self.host_b, defaults.host_b.clone()),
            clock_mode: self.clock,
            seed: self.seed,
            max_events: self.max_events.unwrap_or(defaults.max_events),
            tx_capacity: defaults.tx_capacity,
            rx_resync_periods: match self.rx_resync_periods {
                Some(0) => None,
                Some(n) => Some(n),
                None => defaults.rx_resync_periods,
            },
        })
    }
}
