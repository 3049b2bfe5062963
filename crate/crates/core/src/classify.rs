//! Outcome classification.

use std::fmt;

use bitstorm_forge::GoldenTrace;
use bitstorm_isa::{OperatorTag, TrapCause};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::inject::RawTrialResult;
use crate::taint::TaintState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OutcomeKind {
    Masked,
    Sdc,
    Due,
}

impl OutcomeKind {
    pub const ALL: [OutcomeKind; 3] = [OutcomeKind::Masked, OutcomeKind::Sdc, OutcomeKind::Due];

    pub fn name(self) -> &'static str {
        match self {
            OutcomeKind::Masked => "MASKED",
            OutcomeKind::Sdc => "SDC",
            OutcomeKind::Due => "DUE",
        }
    }

    pub fn is_error(self) -> bool {
        self != OutcomeKind::Masked
    }
}

impl fmt::Display for OutcomeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SdcCause {
    /// Corruption travelled through arithmetic only.
    Numeric,
    /// A corrupted value was used as a memory address.
    Address,
}

impl SdcCause {
    pub fn name(self) -> &'static str {
        match self {
            SdcCause::Numeric => "NUMERIC",
            SdcCause::Address => "ADDRESS",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Outcome {
    pub kind: OutcomeKind,
    pub due_cause: Option<TrapCause>,
    pub sdc_cause: Option<SdcCause>,
    pub first_inconsistent: Option<OperatorTag>,
    /// Largest absolute logit difference; absent for DUE.
    pub max_logit_dev: Option<f64>,
    pub tokens_equal: bool,
}

/// Largest |faulty - golden| over fp32 logits. Bitwise-equal words count as
/// 0 and any other pair involving a NaN or infinity counts as infinite.
pub fn max_logit_dev(faulty: &[u32], golden: &[u32]) -> f64 {
    let mut dev = 0.0f64;
    for (&a, &b) in faulty.iter().zip(golden) {
        if a == b {
            continue;
        }
        let (x, y) = (f32::from_bits(a) as f64, f32::from_bits(b) as f64);
        let d = (x - y).abs();
        dev = dev.max(if d.is_finite() { d } else { f64::INFINITY });
    }
    if faulty.len() != golden.len() {
        dev = f64::INFINITY;
    }
    dev
}

/// Kind, trap cause and logit deviation. SDC sub-cause is left empty; see
/// [`attribute_sdc`].
pub fn classify(raw: &RawTrialResult, golden: &GoldenTrace) -> Result<Outcome> {
    if raw.program_digest != golden.program_digest {
        return Err(CoreError::MismatchedTrace);
    }
    let tokens_equal = raw.trap.is_none() && raw.output == golden.output;
    let first_inconsistent = first_inconsistent_operator(raw, golden);
    let (kind, due_cause, dev) = match raw.trap {
        Some(t) => (OutcomeKind::Due, Some(t.cause), None),
        None => {
            let dev = max_logit_dev(&raw.logits, &golden.logits.concat());
            let kind = if tokens_equal { OutcomeKind::Masked } else { OutcomeKind::Sdc };
            (kind, None, Some(dev))
        }
    };
    Ok(Outcome { kind, due_cause, sdc_cause: None, first_inconsistent, max_logit_dev: dev, tokens_equal })
}

pub fn attribute_sdc(taint: &TaintState) -> SdcCause {
    if taint.ever_tainted_address {
        SdcCause::Address
    } else {
        SdcCause::Numeric
    }
}

/// Tag of the earliest snapshot whose digest differs from golden. A golden
/// snapshot the faulty run never took (it trapped or left a loop early)
/// counts as differing.
pub fn first_inconsistent_operator(raw: &RawTrialResult, golden: &GoldenTrace) -> Option<OperatorTag> {
    for (k, &(tag, digest)) in raw.snapshots.iter().enumerate() {
        match golden.snapshots.get(k) {
            Some(g) if g.digest == digest && g.tag == tag => continue,
            Some(g) => return Some(g.tag),
            None => return Some(tag),
        }
    }
    golden.snapshots.get(raw.snapshots.len()).map(|g| g.tag)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logit_deviation() {
        let g = [1.0f32.to_bits(), 2.0f32.to_bits()];
        assert_eq!(max_logit_dev(&g, &g), 0.0);
        let f = [1.5f32.to_bits(), 2.0f32.to_bits()];
        assert_eq!(max_logit_dev(&f, &g), 0.5);
        let n = [f32::NAN.to_bits(), 2.0f32.to_bits()];
        assert_eq!(max_logit_dev(&n, &g), f64::INFINITY);
        assert_eq!(max_logit_dev(&n, &n), 0.0);
    }
}
