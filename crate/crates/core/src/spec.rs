//! Fault specifications and sites.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use bitstorm_isa::{Opcode, OperatorKind, OperatorTag};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    /// Flip a bit of the value an instruction writes to its destination.
    #[default]
    Value,
    /// Flip a bit of the instruction's encoded word for one dynamic instance.
    Encoding,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Value => "VALUE",
            Mode::Encoding => "ENCODING",
        }
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_uppercase().as_str() {
            "VALUE" => Ok(Mode::Value),
            "ENCODING" => Ok(Mode::Encoding),
            _ => Err(format!("unknown mode `{s}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum BitPolicy {
    /// Any of the 32 bit positions, uniformly.
    #[default]
    Random,
    Fixed(u8),
}

impl fmt::Display for BitPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BitPolicy::Random => f.write_str("RANDOM"),
            BitPolicy::Fixed(b) => write!(f, "FIXED({b})"),
        }
    }
}

impl FromStr for BitPolicy {
    type Err = String;

    /// Accepts `RANDOM`, `FIXED(b)` or a bare bit number.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let t = s.trim().to_ascii_uppercase();
        if t == "RANDOM" {
            return Ok(BitPolicy::Random);
        }
        let inner = t.strip_prefix("FIXED(").and_then(|r| r.strip_suffix(')')).unwrap_or(&t);
        let b: u8 = inner.trim().parse().map_err(|_| format!("bad bit policy `{s}`"))?;
        if b > 31 {
            return Err(format!("bit {b} out of range 0..=31"));
        }
        Ok(BitPolicy::Fixed(b))
    }
}

impl Serialize for BitPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BitPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Instruction filters. `None` admits everything.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Filters {
    pub opcodes: Option<BTreeSet<Opcode>>,
    pub operators: Option<BTreeSet<OperatorKind>>,
    /// Layer indices. Instructions without a layer never pass a layer filter.
    pub layers: Option<BTreeSet<u8>>,
}

impl Filters {
    pub fn admits(&self, opcode: Opcode, tag: OperatorTag) -> bool {
        self.opcodes.as_ref().is_none_or(|s| s.contains(&opcode))
            && self.operators.as_ref().is_none_or(|s| s.contains(&tag.kind))
            && self.layers.as_ref().is_none_or(|s| tag.layer.is_some_and(|l| s.contains(&l)))
    }

    pub fn is_empty(&self) -> bool {
        self.opcodes.is_none() && self.operators.is_none() && self.layers.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FaultSpec {
    pub mode: Mode,
    /// Faults per trial.
    pub n: u32,
    pub bit: BitPolicy,
    pub filters: Filters,
}

impl Default for FaultSpec {
    fn default() -> Self {
        FaultSpec { mode: Mode::Value, n: 1, bit: BitPolicy::Random, filters: Filters::default() }
    }
}

impl FaultSpec {
    pub fn value(n: u32, bit: BitPolicy) -> Self {
        FaultSpec { mode: Mode::Value, n, bit, filters: Filters::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(CoreError::InvalidSpec("fault count must be at least 1".into()));
        }
        if let BitPolicy::Fixed(b) = self.bit {
            if b > 31 {
                return Err(CoreError::InvalidSpec(format!("bit {b} out of range 0..=31")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Target {
    DestValue,
    DestPredicate,
    EncodingWord,
}

/// One place a single bit flip can land.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FaultSite {
    pub dyn_index: u64,
    pub target: Target,
    /// Bit position; always 0 for predicates.
    pub bit: u8,
    /// Opcode and tag of the golden instruction at `dyn_index`.
    pub opcode: Opcode,
    pub tag: OperatorTag,
}

impl FaultSite {
    pub fn mode(&self) -> Mode {
        match self.target {
            Target::EncodingWord => Mode::Encoding,
            _ => Mode::Value,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_policy_text() {
        assert_eq!("random".parse::<BitPolicy>(), Ok(BitPolicy::Random));
        assert_eq!("FIXED(30)".parse::<BitPolicy>(), Ok(BitPolicy::Fixed(30)));
        assert_eq!("7".parse::<BitPolicy>(), Ok(BitPolicy::Fixed(7)));
        assert!("FIXED(32)".parse::<BitPolicy>().is_err());
        assert_eq!(BitPolicy::Fixed(4).to_string(), "FIXED(4)");
    }

    #[test]
    fn layer_filter_excludes_layerless() {
        let f = Filters { layers: Some([0].into()), ..Default::default() };
        assert!(f.admits(Opcode::Fadd, OperatorTag::new(OperatorKind::Mlp, Some(0))));
        assert!(!f.admits(Opcode::Fadd, OperatorTag::new(OperatorKind::Mlp, Some(1))));
        assert!(!f.admits(Opcode::Fadd, OperatorTag::new(OperatorKind::LmHead, None)));
    }

    #[test]
    fn zero_faults_rejected() {
        assert!(FaultSpec::value(0, BitPolicy::Random).validate().is_err());
    }
}
