//! Site enumeration and fault sampling.
//!
//! A site space is a list of eligible dynamic instructions times a number of
//! bit slots per instruction (32 under RANDOM, 1 under FIXED). Slot `k` of
//! eligible instruction `i` has index `i * slots + k`. Predicate
//! destinations hold one bit, so every slot of a predicate-writing
//! instruction maps to the same physical flip; sampling within a trial
//! rejects physical duplicates, which keeps the per-instruction weights
//! proportional to dynamic counts.

use std::collections::HashSet;

use bitstorm_forge::GoldenTrace;
use bitstorm_isa::{Dest, Opcode, OperatorTag, Program};

use crate::error::{CoreError, Result};
use crate::rng::SiteRng;
use crate::spec::{BitPolicy, FaultSite, FaultSpec, Mode, Target};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Eligible {
    pub dyn_index: u64,
    pub pc: u32,
    pub opcode: Opcode,
    pub tag: OperatorTag,
    pub target: Target,
}

#[derive(Clone, Debug)]
pub struct SiteSpace {
    pub mode: Mode,
    pub bit: BitPolicy,
    pub program_digest: u64,
    pub eligible: Vec<Eligible>,
}

/// Target of the golden instruction for a VALUE fault, if it has one.
fn value_target(dest: Dest) -> Option<Target> {
    match dest {
        Dest::Reg(_) => Some(Target::DestValue),
        Dest::Pred(_) => Some(Target::DestPredicate),
        Dest::None => None,
    }
}

pub fn enumerate_sites(program: &Program, golden: &GoldenTrace, spec: &FaultSpec) -> Result<SiteSpace> {
    spec.validate()?;
    if golden.program_digest != program.digest() {
        return Err(CoreError::MismatchedTrace);
    }
    let code = program.decoded();
    let mut eligible = Vec::new();
    for (d, &entry) in golden.trace.iter().enumerate() {
        let pc = entry & !bitstorm_isa::machine::TRACE_SKIPPED;
        let skipped = entry & bitstorm_isa::machine::TRACE_SKIPPED != 0;
        let inst = &code[pc as usize];
        if !spec.filters.admits(inst.opcode, inst.tag) {
            continue;
        }
        let target = match spec.mode {
            Mode::Encoding => Target::EncodingWord,
            Mode::Value => {
                if skipped || !inst.opcode.writes_dest() {
                    continue;
                }
                match value_target(inst.dest) {
                    Some(t) => t,
                    None => continue,
                }
            }
        };
        eligible.push(Eligible { dyn_index: d as u64, pc, opcode: inst.opcode, tag: inst.tag, target });
    }
    if eligible.is_empty() {
        return Err(CoreError::EmptySiteSpace);
    }
    Ok(SiteSpace { mode: spec.mode, bit: spec.bit, program_digest: golden.program_digest, eligible })
}

impl SiteSpace {
    /// Bit slots per eligible instruction.
    pub fn slots(&self) -> u64 {
        match self.bit {
            BitPolicy::Random => 32,
            BitPolicy::Fixed(_) => 1,
        }
    }

    /// Number of sites, |S|.
    pub fn len(&self) -> u64 {
        self.eligible.len() as u64 * self.slots()
    }

    pub fn is_empty(&self) -> bool {
        self.eligible.is_empty()
    }

    /// Number of distinct physical flips.
    pub fn physical_len(&self) -> u64 {
        self.eligible.iter().map(|e| if e.target == Target::DestPredicate { 1 } else { self.slots() }).sum()
    }

    pub fn site(&self, index: u64) -> FaultSite {
        let e = &self.eligible[(index / self.slots()) as usize];
        let raw = match self.bit {
            BitPolicy::Random => (index % 32) as u8,
            BitPolicy::Fixed(b) => b,
        };
        FaultSite {
            dyn_index: e.dyn_index,
            target: e.target,
            bit: if e.target == Target::DestPredicate { 0 } else { raw },
            opcode: e.opcode,
            tag: e.tag,
        }
    }

    /// Eligible instructions per opcode ordinal.
    pub fn opcode_counts(&self) -> [u64; 32] {
        let mut c = [0; 32];
        for e in &self.eligible {
            c[e.opcode.ordinal() as usize] += 1;
        }
        c
    }

    /// Dynamic proportion of each eligible opcode among eligible instructions.
    pub fn opcode_weights(&self) -> Vec<(Opcode, f64)> {
        let total = self.eligible.len() as f64;
        self.opcode_counts()
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (Opcode::from_ordinal(i as u8).unwrap(), c as f64 / total))
            .collect()
    }
}

/// Draws `n` sites uniformly without replacement, as physical flips. The
/// result is sorted by dynamic index, then bit.
pub fn sample_faults(space: &SiteSpace, n: u32, seed: u64) -> Result<Vec<FaultSite>> {
    let wanted = n as u64;
    if wanted > space.len() || wanted > space.physical_len() {
        return Err(CoreError::NotEnoughSites { wanted, available: space.physical_len().min(space.len()) });
    }
    let mut rng = SiteRng::new(seed);
    let mut seen = HashSet::with_capacity(n as usize);
    let mut out = Vec::with_capacity(n as usize);
    while out.len() < n as usize {
        let site = space.site(rng.below(space.len()));
        if seen.insert((site.dyn_index, site.bit)) {
            out.push(site);
        }
    }
    out.sort_by_key(|s| (s.dyn_index, s.bit));
    Ok(out)
}
