//! Trial log records (one JSON object per line).

use std::io::{BufRead, Write};

use bitstorm_isa::{fnv1a64, Opcode, OperatorKind, OperatorTag, TrapCause};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::classify::{Outcome, OutcomeKind, SdcCause};
use crate::error::{CoreError, Result};
use crate::inject::RawTrialResult;
use crate::spec::{BitPolicy, FaultSite, FaultSpec, Mode, Target};

pub const TRIAL_SCHEMA: &str = "bitstorm.trial/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteRecord {
    #[serde(rename = "dyn")]
    pub dyn_index: u64,
    #[serde(with = "opcode_name")]
    pub opcode: Opcode,
    pub target: Target,
    pub bit: u8,
    #[serde(with = "kind_name")]
    pub operator: OperatorKind,
    pub layer: Option<u8>,
    pub reached: bool,
}

impl SiteRecord {
    pub fn new(site: &FaultSite, reached: bool) -> Self {
        SiteRecord {
            dyn_index: site.dyn_index,
            opcode: site.opcode,
            target: site.target,
            bit: site.bit,
            operator: site.tag.kind,
            layer: site.tag.layer,
            reached,
        }
    }

    pub fn tag(&self) -> OperatorTag {
        OperatorTag::new(self.operator, self.layer)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagRecord {
    #[serde(with = "kind_name")]
    pub operator: OperatorKind,
    pub layer: Option<u8>,
}

impl From<OperatorTag> for TagRecord {
    fn from(t: OperatorTag) -> Self {
        TagRecord { operator: t.kind, layer: t.layer }
    }
}

impl From<TagRecord> for OperatorTag {
    fn from(t: TagRecord) -> Self {
        OperatorTag::new(t.operator, t.layer)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub schema: String,
    pub trial: u64,
    pub seed: u64,
    /// Repeat block the trial belongs to.
    pub repeat: u32,
    pub mode: Mode,
    pub n_faults: u32,
    pub bit_policy: BitPolicy,
    pub sites: Vec<SiteRecord>,
    pub outcome: OutcomeKind,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "opt_cause")]
    pub due_cause: Option<TrapCause>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sdc_cause: Option<SdcCause>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_inconsistent: Option<TagRecord>,
    pub tokens_digest: String,
    #[serde(with = "logit_dev")]
    pub max_logit_dev: Option<f64>,
    pub dyn_count: u64,
}

impl TrialRecord {
    pub fn new(
        trial: u64,
        seed: u64,
        repeat: u32,
        spec: &FaultSpec,
        faults: &[FaultSite],
        raw: &RawTrialResult,
        outcome: &Outcome,
    ) -> Self {
        TrialRecord {
            schema: TRIAL_SCHEMA.into(),
            trial,
            seed,
            repeat,
            mode: spec.mode,
            n_faults: faults.len() as u32,
            bit_policy: spec.bit,
            sites: faults.iter().zip(&raw.reached).map(|(f, &r)| SiteRecord::new(f, r)).collect(),
            outcome: outcome.kind,
            due_cause: outcome.due_cause,
            sdc_cause: outcome.sdc_cause,
            first_inconsistent: outcome.first_inconsistent.map(Into::into),
            tokens_digest: format!("{:016x}", fnv1a64(&raw.output)),
            max_logit_dev: outcome.max_logit_dev,
            dyn_count: raw.dyn_count,
        }
    }

    pub fn first_inconsistent(&self) -> Option<OperatorTag> {
        self.first_inconsistent.map(Into::into)
    }
}

pub fn write_jsonl<W: Write>(mut w: W, records: &[TrialRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn to_jsonl(records: &[TrialRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    write_jsonl(&mut out, records).expect("writing to a Vec cannot fail");
    out
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<TrialRecord>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrialRecord =
            serde_json::from_str(&line).map_err(|e| CoreError::Record(format!("line {}: {e}", n + 1)))?;
        if rec.schema != TRIAL_SCHEMA {
            return Err(CoreError::Record(format!("line {}: unknown schema `{}`", n + 1, rec.schema)));
        }
        out.push(rec);
    }
    Ok(out)
}

mod opcode_name {
    use super::*;

    pub fn serialize<S: Serializer>(op: &Opcode, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(op.mnemonic())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Opcode, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

mod kind_name {
    use super::*;

    pub fn serialize<S: Serializer>(k: &OperatorKind, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(k.name())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<OperatorKind, D::Error> {
        let s = String::deserialize(d)?;
        OperatorKind::from_name(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown operator `{s}`")))
    }
}

mod opt_cause {
    use super::*;

    pub fn serialize<S: Serializer>(c: &Option<TrapCause>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match c {
            Some(c) => s.serialize_str(c.code()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<TrapCause>, D::Error> {
        match Option::<String>::deserialize(d)? {
            None => Ok(None),
            Some(s) => TrapCause::from_code(&s)
                .map(Some)
                .ok_or_else(|| serde::de::Error::custom(format!("unknown cause `{s}`"))),
        }
    }
}

/// Finite deviations are numbers; infinities are the string "inf"; DUE
/// trials carry null.
mod logit_dev {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(x) if x.is_finite() => s.serialize_f64(*x),
            Some(_) => s.serialize_str("inf"),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<f64>, D::Error> {
        match Option::<Raw>::deserialize(d)? {
            None => Ok(None),
            Some(Raw::Num(x)) => Ok(Some(x)),
            Some(Raw::Text(t)) if t == "inf" => Ok(Some(f64::INFINITY)),
            Some(Raw::Text(t)) => Err(serde::de::Error::custom(format!("bad deviation `{t}`"))),
        }
    }
}
