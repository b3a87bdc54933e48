//! Layer-1 carriers: whoever watches the LEDs and strikes the keys.

use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::notes::{KeyIndex, LightCommand, StrikeEvent};
use crate::time::{serde_secs, SimTime};
use crate::Side;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    #[default]
    Perfect,
    Noisy,
    Scripted,
    /// Nobody at the xylophone.
    Absent,
    /// A live human whose strikes arrive through the bridge.
    Remote,
}

impl std::str::FromStr for OperatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "perfect" => Ok(OperatorKind::Perfect),
            "noisy" => Ok(OperatorKind::Noisy),
            "scripted" => Ok(OperatorKind::Scripted),
            "absent" => Ok(OperatorKind::Absent),
            "remote" => Ok(OperatorKind::Remote),
            _ => Err(format!("unknown operator kind `{s}`")),
        }
    }
}

/// Response to one command in a scripted run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptStep {
    /// Strike the lit key after the reaction delay.
    Echo,
    Miss,
    Strike(KeyIndex),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OperatorModel {
    pub kind: OperatorKind,
    #[serde(with = "serde_secs")]
    pub reaction_mean: Duration,
    #[serde(with = "serde_secs")]
    pub reaction_jitter: Duration,
    pub p_miss: f64,
    pub p_wrong_key: f64,
    pub p_spurious: f64,
    /// Added to `p_miss` after every command.
    pub fatigue_rate: f64,
    /// Own RNG seed; derived from the session seed when absent.
    pub seed: Option<u64>,
    /// Steps for the scripted kind, indexed by symbol sequence number.
    /// Commands past the end are echoed.
    pub script: Vec<ScriptStep>,
}

pub const DEFAULT_REACTION: Duration = Duration::from_millis(500);

impl Default for OperatorModel {
    fn default() -> Self {
        OperatorModel {
            kind: OperatorKind::Perfect,
            reaction_mean: DEFAULT_REACTION,
            reaction_jitter: Duration::ZERO,
            p_miss: 0.0,
            p_wrong_key: 0.0,
            p_spurious: 0.0,
            fatigue_rate: 0.0,
            seed: None,
            script: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OperatorError {
    #[error("{name} = {value} is not a probability")]
    Probability { name: &'static str, value: f64 },
    #[error("fatigue rate {0} must be finite and non-negative")]
    Fatigue(f64),
}

impl OperatorModel {
    pub fn perfect(reaction: Duration) -> Self {
        OperatorModel { reaction_mean: reaction, ..Default::default() }
    }

    pub fn noisy(p_miss: f64, p_wrong_key: f64, p_spurious: f64) -> Self {
        OperatorModel { kind: OperatorKind::Noisy, p_miss, p_wrong_key, p_spurious, ..Default::default() }
    }

    pub fn absent() -> Self {
        OperatorModel { kind: OperatorKind::Absent, ..Default::default() }
    }

    pub fn remote() -> Self {
        OperatorModel { kind: OperatorKind::Remote, ..Default::default() }
    }

    pub fn scripted(script: Vec<ScriptStep>) -> Self {
        OperatorModel { kind: OperatorKind::Scripted, script, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), OperatorError> {
        for (name, value) in
            [("p_miss", self.p_miss), ("p_wrong_key", self.p_wrong_key), ("p_spurious", self.p_spurious)]
        {
            if !(0.0..=1.0).contains(&value) {
                return Err(OperatorError::Probability { name, value });
            }
        }
        if !(self.fatigue_rate.is_finite() && self.fatigue_rate >= 0.0) {
            return Err(OperatorError::Fatigue(self.fatigue_rate));
        }
        Ok(())
    }

    /// One command's worth of tiring.
    pub fn fatigue_step(&self) -> Self {
        let mut next = self.clone();
        next.p_miss = (self.p_miss + self.fatigue_rate).clamp(0.0, 1.0);
        next
    }
}

/// Strikes an operator produces for one lit LED. `key_count` is the size of
/// the layout (wrong and spurious keys are drawn from it); `source` is the
/// operator's side. All randomness comes from `rng`.
pub fn react(
    command: &LightCommand,
    model: &OperatorModel,
    key_count: usize,
    source: Side,
    rng: &mut ChaCha8Rng,
) -> Vec<StrikeEvent> {
    let strike = |key: KeyIndex, time: SimTime| StrikeEvent { key, time, source };
    let on_time = command.on_time;
    match model.kind {
        OperatorKind::Absent | OperatorKind::Remote => Vec::new(),
        OperatorKind::Perfect => vec![strike(command.key, on_time + model.reaction_mean)],
        OperatorKind::Scripted => {
            let step = usize::try_from(command.symbol_seq).ok().and_then(|i| model.script.get(i));
            match step {
                Some(ScriptStep::Miss) => Vec::new(),
                Some(ScriptStep::Strike(key)) => vec![strike(*key, on_time + model.reaction_mean)],
                Some(ScriptStep::Echo) | None => vec![strike(command.key, on_time + model.reaction_mean)],
            }
        }
        OperatorKind::Noisy => {
            let mut out = Vec::with_capacity(2);
            if !rng.random_bool(model.p_miss) {
                let key = if key_count > 1 && rng.random_bool(model.p_wrong_key) {
                    // Uniform over the other keys.
                    let pick = rng.random_range(0..key_count as u16 - 1);
                    KeyIndex(if pick >= command.key.0 { pick + 1 } else { pick })
                } else {
                    command.key
                };
                let jitter = model.reaction_jitter.as_nanos() as i64;
                let offset = if jitter > 0 { rng.random_range(-jitter..=jitter) } else { 0 };
                let delay = (model.reaction_mean.as_nanos() as i64 + offset).max(0) as u64;
                out.push(strike(key, on_time + Duration::from_nanos(delay)));
            }
            if rng.random_bool(model.p_spurious) {
                let key = KeyIndex(rng.random_range(0..key_count.max(1) as u16));
                let within = rng.random_range(0..command.duration.as_nanos().max(1) as u64);
                out.push(strike(key, on_time + Duration::from_nanos(within)));
            }
            out.sort_by_key(|s| s.time);
            out
        }
    }
}

/// An operator seat: a model plus its RNG stream, tiring as it goes.
#[derive(Debug, Clone)]
pub struct Operator {
    side: Side,
    model: OperatorModel,
    key_count: usize,
    rng: ChaCha8Rng,
}

impl Operator {
    pub fn new(side: Side, model: OperatorModel, key_count: usize, session_seed: u64) -> Self {
        let seed = model.seed.unwrap_or_else(|| derive_seed(session_seed, side));
        Operator { side, model, key_count, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn model(&self) -> &OperatorModel {
        &self.model
    }

    /// Swaps the behavior model; the RNG stream continues.
    pub fn set_model(&mut self, model: OperatorModel) {
        self.model = model;
    }

    pub fn react(&mut self, command: &LightCommand) -> Vec<StrikeEvent> {
        let strikes = react(command, &self.model, self.key_count, self.side, &mut self.rng);
        if self.model.fatigue_rate > 0.0 {
            self.model = self.model.fatigue_step();
        }
        strikes
    }
}

fn derive_seed(session_seed: u64, side: Side) -> u64 {
    let salt = match side {
        Side::A => 0x9E37_79B9_7F4A_7C15,
        Side::B => 0xC2B2_AE3D_27D4_EB4F,
    };
    session_seed ^ salt
}
