//! Xylophone layouts and the byte ↔ key-sequence codecs.

use std::collections::HashSet;
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::SimTime;
use crate::Side;

/// Position of a key on a xylophone, counted from 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeyIndex(pub u16);

impl fmt::Display for KeyIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Key {
    pub index: KeyIndex,
    pub name: String,
    pub accidental: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LayoutError {
    #[error("a layout needs at least two keys, got {0}")]
    TooFewKeys(usize),
    #[error("key at position {position} has index {index}")]
    NonDenseIndex { position: usize, index: KeyIndex },
    #[error("duplicate note name `{0}`")]
    DuplicateName(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct XylophoneLayout {
    keys: Vec<Key>,
}

impl XylophoneLayout {
    pub fn new(keys: Vec<Key>) -> Result<Self, LayoutError> {
        if keys.len() < 2 {
            return Err(LayoutError::TooFewKeys(keys.len()));
        }
        let mut names = HashSet::new();
        for (position, key) in keys.iter().enumerate() {
            if usize::from(key.index.0) != position {
                return Err(LayoutError::NonDenseIndex { position, index: key.index });
            }
            if !names.insert(key.name.as_str()) {
                return Err(LayoutError::DuplicateName(key.name.clone()));
            }
        }
        Ok(XylophoneLayout { keys })
    }

    /// Builds a layout from `(name, accidental)` pairs, indexing in order.
    pub fn from_names<'a>(names: impl IntoIterator<Item = (&'a str, bool)>) -> Result<Self, LayoutError> {
        let keys = names
            .into_iter()
            .enumerate()
            .map(|(i, (name, accidental))| Key { index: KeyIndex(i as u16), name: name.to_string(), accidental })
            .collect();
        Self::new(keys)
    }

    /// Eight naturals C4..C5 (indices 0-7) followed by the five accidentals
    /// of the octave (indices 8-12).
    pub fn diatonic13() -> Self {
        Self::from_names([
            ("C4", false),
            ("D4", false),
            ("E4", false),
            ("F4", false),
            ("G4", false),
            ("A4", false),
            ("B4", false),
            ("C5", false),
            ("C#4", true),
            ("D#4", true),
            ("F#4", true),
            ("G#4", true),
            ("A#4", true),
        ])
        .expect("stock layout")
    }

    /// Sixteen chromatic keys C4..D#5, enough for the nibble codec.
    pub fn chromatic16() -> Self {
        Self::from_names([
            ("C4", false),
            ("C#4", true),
            ("D4", false),
            ("D#4", true),
            ("E4", false),
            ("F4", false),
            ("F#4", true),
            ("G4", false),
            ("G#4", true),
            ("A4", false),
            ("A#4", true),
            ("B4", false),
            ("C5", false),
            ("C#5", true),
            ("D5", false),
            ("D#5", true),
        ])
        .expect("stock layout")
    }

    pub fn keys(&self) -> &[Key] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn contains(&self, key: KeyIndex) -> bool {
        usize::from(key.0) < self.keys.len()
    }

    pub fn index_of(&self, name: &str) -> Option<KeyIndex> {
        self.keys.iter().find(|k| k.name == name).map(|k| k.index)
    }

    pub fn name_of(&self, key: KeyIndex) -> Option<&str> {
        self.keys.get(usize::from(key.0)).map(|k| k.name.as_str())
    }
}

impl Default for XylophoneLayout {
    fn default() -> Self {
        Self::diatonic13()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitOrder {
    #[default]
    MsbFirst,
    LsbFirst,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoteCodec {
    /// One key per bit: eight strikes per byte.
    Bit {
        zero_key: KeyIndex,
        one_key: KeyIndex,
        #[serde(default)]
        bit_order: BitOrder,
    },
    /// One key per nibble value: two strikes per byte, high nibble first.
    Nibble { nibble_keys: [KeyIndex; 16] },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("key {0} is not on the layout")]
    KeyOutOfRange(KeyIndex),
    #[error("zero and one keys are both {0}")]
    SameBitKeys(KeyIndex),
    #[error("nibble keys must be distinct; {0} repeats")]
    DuplicateNibbleKey(KeyIndex),
    #[error("expected {expected} symbols per byte, got {got}")]
    Framing { expected: usize, got: usize },
}

/// A decoded byte and whether every symbol belonged to the codec alphabet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodedByte {
    pub value: u8,
    pub valid: bool,
}

impl NoteCodec {
    pub fn bit(zero_key: u16, one_key: u16) -> Self {
        NoteCodec::Bit { zero_key: KeyIndex(zero_key), one_key: KeyIndex(one_key), bit_order: BitOrder::MsbFirst }
    }

    /// Nibble value `n` struck as key `n`.
    pub fn nibble_identity() -> Self {
        NoteCodec::Nibble { nibble_keys: std::array::from_fn(|i| KeyIndex(i as u16)) }
    }

    /// Zero on the lower G, one on the adjacent A, most significant bit first.
    pub fn default_for(layout: &XylophoneLayout) -> Self {
        let g = layout.index_of("G4").unwrap_or(KeyIndex(0));
        let a = layout.index_of("A4").unwrap_or(KeyIndex(1));
        NoteCodec::Bit { zero_key: g, one_key: a, bit_order: BitOrder::MsbFirst }
    }

    pub fn validate(&self, layout: &XylophoneLayout) -> Result<(), CodecError> {
        let check = |k: KeyIndex| if layout.contains(k) { Ok(()) } else { Err(CodecError::KeyOutOfRange(k)) };
        match self {
            NoteCodec::Bit { zero_key, one_key, .. } => {
                check(*zero_key)?;
                check(*one_key)?;
                if zero_key == one_key {
                    return Err(CodecError::SameBitKeys(*zero_key));
                }
            }
            NoteCodec::Nibble { nibble_keys } => {
                let mut seen = HashSet::new();
                for &k in nibble_keys {
                    check(k)?;
                    if !seen.insert(k) {
                        return Err(CodecError::DuplicateNibbleKey(k));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn symbols_per_byte(&self) -> usize {
        match self {
            NoteCodec::Bit { .. } => 8,
            NoteCodec::Nibble { .. } => 2,
        }
    }

    pub fn encode_byte(&self, value: u8) -> Vec<KeyIndex> {
        match self {
            NoteCodec::Bit { zero_key, one_key, bit_order } => (0..8)
                .map(|i| {
                    let shift = match bit_order {
                        BitOrder::MsbFirst => 7 - i,
                        BitOrder::LsbFirst => i,
                    };
                    if (value >> shift) & 1 == 1 {
                        *one_key
                    } else {
                        *zero_key
                    }
                })
                .collect(),
            NoteCodec::Nibble { nibble_keys } => {
                vec![nibble_keys[usize::from(value >> 4)], nibble_keys[usize::from(value & 0x0f)]]
            }
        }
    }

    /// Inverse of [`NoteCodec::encode_byte`]. A key outside the alphabet
    /// reads as 0 and clears `valid`; decoding never stalls.
    pub fn decode_strikes(&self, keys: &[KeyIndex]) -> Result<DecodedByte, CodecError> {
        let expected = self.symbols_per_byte();
        if keys.len() != expected {
            return Err(CodecError::Framing { expected, got: keys.len() });
        }
        let mut valid = true;
        let value = match self {
            NoteCodec::Bit { zero_key, one_key, bit_order } => keys.iter().enumerate().fold(0u8, |acc, (i, k)| {
                let bit = if k == one_key {
                    1
                } else {
                    valid &= k == zero_key;
                    0
                };
                let shift = match bit_order {
                    BitOrder::MsbFirst => 7 - i,
                    BitOrder::LsbFirst => i,
                };
                acc | (bit << shift)
            }),
            NoteCodec::Nibble { nibble_keys } => {
                let mut nibble = |k: &KeyIndex| match nibble_keys.iter().position(|n| n == k) {
                    Some(v) => v as u8,
                    None => {
                        valid = false;
                        0
                    }
                };
                (nibble(&keys[0]) << 4) | nibble(&keys[1])
            }
        };
        Ok(DecodedByte { value, valid })
    }
}

/// Instruction to an operator: light `key` for one symbol period.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LightCommand {
    pub key: KeyIndex,
    /// Strictly increasing per transmitter.
    pub symbol_seq: u64,
    /// Which serial byte (counted from session start) this symbol belongs to.
    pub byte_seq: u64,
    pub on_time: SimTime,
    pub duration: Duration,
}

/// A key hit, as sensed on a xylophone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StrikeEvent {
    pub key: KeyIndex,
    pub time: SimTime,
    /// The operator who struck it.
    pub source: Side,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrikeClass {
    Correct,
    WrongKey,
    Missed,
    Spurious,
}

impl StrikeClass {
    pub const ALL: [StrikeClass; 4] =
        [StrikeClass::Correct, StrikeClass::WrongKey, StrikeClass::Missed, StrikeClass::Spurious];

    pub fn as_str(self) -> &'static str {
        match self {
            StrikeClass::Correct => "correct",
            StrikeClass::WrongKey => "wrong_key",
            StrikeClass::Missed => "missed",
            StrikeClass::Spurious => "spurious",
        }
    }
}

/// Judges a strike against the LED that was lit.
///
/// A strike outside the window of the lit command counts as spurious (the
/// command itself is then missed). Returns `None` only when there was
/// neither a command nor a strike.
pub fn classify_strike(
    expected: Option<&LightCommand>,
    actual: Option<&StrikeEvent>,
    window: Duration,
) -> Option<StrikeClass> {
    match (expected, actual) {
        (None, None) => None,
        (Some(_), None) => Some(StrikeClass::Missed),
        (None, Some(_)) => Some(StrikeClass::Spurious),
        (Some(cmd), Some(strike)) => {
            let delta = if strike.time >= cmd.on_time { strike.time - cmd.on_time } else { cmd.on_time - strike.time };
            Some(if delta > window {
                StrikeClass::Spurious
            } else if strike.key == cmd.key {
                StrikeClass::Correct
            } else {
                StrikeClass::WrongKey
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(v: &[u16]) -> Vec<KeyIndex> {
        v.iter().map(|&i| KeyIndex(i)).collect()
    }

    // Independent bit-shift oracle, msb first.
    fn bits_of(v: u8) -> Vec<u16> {
        let mut out = Vec::new();
        let mut mask = 0x80u8;
        while mask != 0 {
            out.push(u16::from(v & mask != 0));
            mask >>= 1;
        }
        out
    }

    #[test]
    fn stock_layouts_are_valid() {
        assert_eq!(XylophoneLayout::diatonic13().len(), 13);
        assert_eq!(XylophoneLayout::chromatic16().len(), 16);
        let l = XylophoneLayout::diatonic13();
        assert_eq!(l.keys().iter().filter(|k| k.accidental).count(), 5);
        assert_eq!(NoteCodec::default_for(&l), NoteCodec::bit(4, 5));
        assert_eq!(NoteCodec::default_for(&l).validate(&l), Ok(()));
    }

    #[test]
    fn layout_validation() {
        assert_eq!(XylophoneLayout::from_names([("C", false)]), Err(LayoutError::TooFewKeys(1)));
        assert_eq!(
            XylophoneLayout::from_names([("C", false), ("C", false)]),
            Err(LayoutError::DuplicateName("C".into()))
        );
        let keys = vec![
            Key { index: KeyIndex(0), name: "a".into(), accidental: false },
            Key { index: KeyIndex(2), name: "b".into(), accidental: false },
        ];
        assert_eq!(XylophoneLayout::new(keys), Err(LayoutError::NonDenseIndex { position: 1, index: KeyIndex(2) }));
    }

    #[test]
    fn codec_validation() {
        let l = XylophoneLayout::diatonic13();
        assert_eq!(NoteCodec::bit(3, 3).validate(&l), Err(CodecError::SameBitKeys(KeyIndex(3))));
        assert_eq!(NoteCodec::bit(0, 13).validate(&l), Err(CodecError::KeyOutOfRange(KeyIndex(13))));
        assert_eq!(NoteCodec::nibble_identity().validate(&l), Err(CodecError::KeyOutOfRange(KeyIndex(13))));
        assert_eq!(NoteCodec::nibble_identity().validate(&XylophoneLayout::chromatic16()), Ok(()));
        let mut keys = std::array::from_fn(|i| KeyIndex(i as u16));
        keys[15] = KeyIndex(0);
        assert_eq!(
            NoteCodec::Nibble { nibble_keys: keys }.validate(&XylophoneLayout::chromatic16()),
            Err(CodecError::DuplicateNibbleKey(KeyIndex(0)))
        );
    }

    #[test]
    fn encode_examples() {
        let bit = NoteCodec::bit(0, 1);
        assert_eq!(bit.encode_byte(0x00), k(&[0; 8]));
        assert_eq!(bits_of(0xA5), vec![1, 0, 1, 0, 0, 1, 0, 1]);
        assert_eq!(bit.encode_byte(0xA5), k(&bits_of(0xA5)));
        assert_eq!(NoteCodec::nibble_identity().encode_byte(0xA5), k(&[10, 5]));
    }

    #[test]
    fn lsb_first_reverses() {
        let lsb = NoteCodec::Bit { zero_key: KeyIndex(0), one_key: KeyIndex(1), bit_order: BitOrder::LsbFirst };
        assert_eq!(lsb.encode_byte(0x01), k(&[1, 0, 0, 0, 0, 0, 0, 0]));
        assert_eq!(lsb.decode_strikes(&k(&[1, 0, 0, 0, 0, 0, 0, 0])).unwrap().value, 0x01);
    }

    #[test]
    fn decode_examples() {
        let bit = NoteCodec::bit(0, 1);
        assert_eq!(bit.decode_strikes(&k(&[1, 0, 1, 0, 0, 1, 0, 1])), Ok(DecodedByte { value: 0xA5, valid: true }));
        assert_eq!(bit.decode_strikes(&k(&[3, 0, 1, 0, 0, 1, 0, 1])), Ok(DecodedByte { value: 0x25, valid: false }));
        assert_eq!(bit.decode_strikes(&k(&[1, 0])), Err(CodecError::Framing { expected: 8, got: 2 }));
        let nib = NoteCodec::nibble_identity();
        assert_eq!(nib.decode_strikes(&k(&[10, 20])), Ok(DecodedByte { value: 0xA0, valid: false }));
    }

    #[test]
    fn bijection_over_all_octets() {
        let codecs = [
            NoteCodec::bit(0, 1),
            NoteCodec::bit(4, 5),
            NoteCodec::Bit { zero_key: KeyIndex(7), one_key: KeyIndex(2), bit_order: BitOrder::LsbFirst },
            NoteCodec::nibble_identity(),
            NoteCodec::Nibble { nibble_keys: std::array::from_fn(|i| KeyIndex(15 - i as u16)) },
        ];
        for codec in &codecs {
            for v in 0..=255u8 {
                let keys = codec.encode_byte(v);
                assert_eq!(keys.len(), codec.symbols_per_byte());
                assert_eq!(codec.decode_strikes(&keys), Ok(DecodedByte { value: v, valid: true }));
            }
        }
    }

    fn light(key: u16, at: f64) -> LightCommand {
        LightCommand {
            key: KeyIndex(key),
            symbol_seq: 0,
            byte_seq: 0,
            on_time: SimTime::from_secs_f64(at),
            duration: Duration::from_secs(2),
        }
    }

    fn strike(key: u16, at: f64) -> StrikeEvent {
        StrikeEvent { key: KeyIndex(key), time: SimTime::from_secs_f64(at), source: Side::A }
    }

    #[test]
    fn classification() {
        let w = Duration::from_secs(2);
        let cmd = light(3, 10.0);
        assert_eq!(classify_strike(Some(&cmd), Some(&strike(3, 10.5)), w), Some(StrikeClass::Correct));
        assert_eq!(classify_strike(Some(&cmd), Some(&strike(4, 10.5)), w), Some(StrikeClass::WrongKey));
        assert_eq!(classify_strike(Some(&cmd), Some(&strike(3, 12.0)), w), Some(StrikeClass::Correct));
        assert_eq!(classify_strike(Some(&cmd), Some(&strike(3, 12.5)), w), Some(StrikeClass::Spurious));
        assert_eq!(classify_strike(Some(&cmd), None, w), Some(StrikeClass::Missed));
        assert_eq!(classify_strike(None, Some(&strike(3, 1.0)), w), Some(StrikeClass::Spurious));
        assert_eq!(classify_strike(None, None, w), None);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn codec() -> impl Strategy<Value = NoteCodec> {
            prop_oneof![
                (0u16..16, 0u16..16, any::<bool>()).prop_filter("distinct keys", |(z, o, _)| z != o).prop_map(
                    |(z, o, lsb)| NoteCodec::Bit {
                        zero_key: KeyIndex(z),
                        one_key: KeyIndex(o),
                        bit_order: if lsb { BitOrder::LsbFirst } else { BitOrder::MsbFirst },
                    }
                ),
                Just((0..16u16).collect::<Vec<_>>())
                    .prop_shuffle()
                    .prop_map(|keys| NoteCodec::Nibble { nibble_keys: std::array::from_fn(|i| KeyIndex(keys[i])) }),
            ]
        }

        fn command(key: u16, at: f64) -> LightCommand {
            LightCommand {
                key: KeyIndex(key),
                symbol_seq: 0,
                byte_seq: 0,
                on_time: SimTime::from_secs_f64(at),
                duration: Duration::from_secs(2),
            }
        }

        proptest! {
            #[test]
            fn every_valid_codec_is_a_bijection(codec in codec()) {
                prop_assert!(codec.validate(&XylophoneLayout::chromatic16()).is_ok());
                for v in 0..=255u8 {
                    let keys = codec.encode_byte(v);
                    prop_assert_eq!(keys.len(), codec.symbols_per_byte());
                    prop_assert_eq!(codec.decode_strikes(&keys).unwrap(), DecodedByte { value: v, valid: true });
                }
            }

            #[test]
            fn classification_is_total(
                expected in proptest::option::of((0u16..16, 0.0f64..100.0)),
                actual in proptest::option::of((0u16..16, 0.0f64..100.0)),
                window in 0.0f64..5.0,
            ) {
                let cmd = expected.map(|(k, t)| command(k, t));
                let strike = actual.map(|(k, t)| StrikeEvent { key: KeyIndex(k), time: SimTime::from_secs_f64(t), source: Side::A });
                let class = classify_strike(cmd.as_ref(), strike.as_ref(), Duration::from_secs_f64(window));
                prop_assert_eq!(class.is_none(), cmd.is_none() && strike.is_none());
                if let (Some(c), Some(s)) = (&cmd, &strike) {
                    let close = s.time.max(c.on_time) - s.time.min(c.on_time) <= Duration::from_secs_f64(window);
                    let want = match (close, s.key == c.key) {
                        (false, _) => StrikeClass::Spurious,
                        (true, true) => StrikeClass::Correct,
                        (true, false) => StrikeClass::WrongKey,
                    };
                    prop_assert_eq!(class, Some(want));
                }
            }
        }
    }
}
