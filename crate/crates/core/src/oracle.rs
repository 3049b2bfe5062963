//! Exhaustive ground truth: every single-fault site, or every site pair.

use std::collections::BTreeMap;

use bitstorm_isa::{Opcode, OperatorKind, OperatorTag, TrapCause};
use rayon::prelude::*;

use crate::analytics::{binomial_se, BitSweepRow, Counts, IvfEntry, LayerVuln, OperatorVuln, LOW_CONFIDENCE_TRIALS};
use crate::classify::{attribute_sdc, classify, OutcomeKind, SdcCause};
use crate::error::{CoreError, Result};
use crate::inject::{Engine, InjectHook};
use crate::record::TrialRecord;
use crate::sites::SiteSpace;
use crate::spec::{BitPolicy, FaultSite, Mode, Target};
use crate::taint::TaintHook;

/// Default cap on the number of runs an exhaustive enumeration may take.
pub const DEFAULT_CAP: u64 = 2_000_000;

const EXACT_MAGIC: &[u8; 4] = b"BFEX";
const EXACT_VERSION: u32 = 1;

/// Outcome of one physical site. `weight` is the number of site-space
/// slots it stands for (32 for a predicate under RANDOM bits, else 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExactSite {
    pub dyn_index: u64,
    pub opcode: Opcode,
    pub tag: OperatorTag,
    pub target: Target,
    pub bit: u8,
    pub weight: u32,
    pub kind: OutcomeKind,
    pub due_cause: Option<TrapCause>,
    pub sdc_cause: Option<SdcCause>,
    pub first_inconsistent: Option<OperatorTag>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExactResult {
    pub program_digest: u64,
    pub mode: Mode,
    pub bit_policy: BitPolicy,
    /// |S| of the site space, counting slots.
    pub site_count: u64,
    pub sites: Vec<ExactSite>,
}

/// Physical sites of a space with their slot weights, in site order.
pub fn physical_sites(space: &SiteSpace) -> Vec<(FaultSite, u32)> {
    let slots = space.slots();
    let mut out = Vec::with_capacity(space.physical_len() as usize);
    for i in 0..space.eligible.len() as u64 {
        if space.eligible[i as usize].target == Target::DestPredicate {
            out.push((space.site(i * slots), slots as u32));
        } else {
            for k in 0..slots {
                out.push((space.site(i * slots + k), 1));
            }
        }
    }
    out
}

/// Runs every admissible single-fault site once.
pub fn exact_single(engine: &Engine<'_>, space: &SiteSpace, cap: u64) -> Result<ExactResult> {
    if space.len() > cap {
        return Err(CoreError::SpaceTooLarge { size: space.len(), cap });
    }
    if space.program_digest != engine.golden.program_digest {
        return Err(CoreError::MismatchedTrace);
    }
    let sites = physical_sites(space);
    // chunks share one fault-free prefix run
    let chunks: Vec<&[(FaultSite, u32)]> = sites.chunk_by(|a, b| a.0.dyn_index / 256 == b.0.dyn_index / 256).collect();
    let done: Result<Vec<Vec<ExactSite>>> = chunks
        .par_iter()
        .map(|chunk| {
            let mut cursor = engine.golden_cursor(chunk[0].0.dyn_index);
            let mut out = Vec::with_capacity(chunk.len());
            for &(site, weight) in chunk.iter() {
                cursor.advance(site.dyn_index);
                let faults = [site];
                let raw = engine.execute_from(&cursor, &faults);
                let o = classify(&raw, engine.golden)?;
                let sdc_cause = (o.kind == OutcomeKind::Sdc).then(|| {
                    let mut hook = TaintHook::new(engine.program, InjectHook::new(&faults));
                    engine.execute_with(&faults, &mut hook);
                    attribute_sdc(&hook.state)
                });
                out.push(ExactSite {
                    dyn_index: site.dyn_index,
                    opcode: site.opcode,
                    tag: site.tag,
                    target: site.target,
                    bit: site.bit,
                    weight,
                    kind: o.kind,
                    due_cause: o.due_cause,
                    sdc_cause,
                    first_inconsistent: o.first_inconsistent,
                });
            }
            Ok(out)
        })
        .collect();
    Ok(ExactResult {
        program_digest: space.program_digest,
        mode: space.mode,
        bit_policy: space.bit,
        site_count: space.len(),
        sites: done?.concat(),
    })
}

fn weighted<'a>(sites: impl IntoIterator<Item = &'a ExactSite>) -> Counts {
    let mut c = Counts::default();
    for s in sites {
        let w = s.weight as u64;
        c.trials += w;
        match s.kind {
            OutcomeKind::Masked => c.masked += w,
            OutcomeKind::Sdc => c.sdc += w,
            OutcomeKind::Due => c.due += w,
        }
    }
    c
}

impl ExactResult {
    pub fn counts(&self) -> Counts {
        weighted(&self.sites)
    }

    pub fn mvf(&self) -> f64 {
        self.counts().mvf()
    }

    pub fn opcode_counts(&self) -> BTreeMap<Opcode, Counts> {
        let mut by: BTreeMap<Opcode, Vec<&ExactSite>> = BTreeMap::new();
        for s in &self.sites {
            by.entry(s.opcode).or_default().push(s);
        }
        by.into_iter().map(|(op, v)| (op, weighted(v))).collect()
    }

    /// Exact IVF per opcode, with p_i from `weights`.
    pub fn ivf_table(&self, weights: &[(Opcode, f64)]) -> Vec<IvfEntry> {
        let p: BTreeMap<Opcode, f64> = weights.iter().copied().collect();
        self.opcode_counts()
            .into_iter()
            .map(|(op, c)| IvfEntry {
                opcode: op,
                group: op.group(),
                trials: c.trials,
                sdc_rate: c.sdc_rate(),
                due_rate: c.due_rate(),
                ivf: c.mvf(),
                p_i: p.get(&op).copied().unwrap_or(0.0),
                std_dev: None,
                low_confidence: c.trials < LOW_CONFIDENCE_TRIALS,
            })
            .collect()
    }

    /// Exact rates per bit position.
    pub fn bit_table(&self) -> Vec<BitSweepRow> {
        let mut by: BTreeMap<u8, Counts> = BTreeMap::new();
        let mut add = |bit: u8, kind: OutcomeKind, w: u64| {
            let c = by.entry(bit).or_default();
            c.trials += w;
            match kind {
                OutcomeKind::Masked => c.masked += w,
                OutcomeKind::Sdc => c.sdc += w,
                OutcomeKind::Due => c.due += w,
            }
        };
        for s in &self.sites {
            match self.bit_policy {
                BitPolicy::Fixed(b) => add(b, s.kind, s.weight as u64),
                // a predicate site stands for one slot of every bit
                BitPolicy::Random if s.target == Target::DestPredicate => {
                    for b in 0..32 {
                        add(b, s.kind, s.weight as u64 / 32);
                    }
                }
                BitPolicy::Random => add(s.bit, s.kind, s.weight as u64),
            }
        }
        by.into_iter()
            .map(|(bit, c)| BitSweepRow {
                bit,
                trials: c.trials,
                sdc_rate: c.sdc_rate(),
                due_rate: c.due_rate(),
                masked_rate: c.masked_rate(),
            })
            .collect()
    }

    fn observations(&self) -> impl Iterator<Item = (Option<OperatorTag>, bool, u64)> + '_ {
        self.sites.iter().map(|s| (s.first_inconsistent, s.kind.is_error(), s.weight as u64))
    }

    pub fn operator_vulnerability(&self) -> Vec<OperatorVuln> {
        crate::analytics::operator_rows(self.observations())
    }

    pub fn layer_vulnerability(&self, layers: u8) -> Vec<LayerVuln> {
        crate::analytics::layer_rows(self.observations(), layers)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(40 + self.sites.len() * 16);
        b.extend_from_slice(EXACT_MAGIC);
        b.extend_from_slice(&EXACT_VERSION.to_le_bytes());
        b.extend_from_slice(&self.program_digest.to_le_bytes());
        b.push(match self.mode {
            Mode::Value => 0,
            Mode::Encoding => 1,
        });
        b.push(match self.bit_policy {
            BitPolicy::Random => 0xff,
            BitPolicy::Fixed(x) => x,
        });
        b.extend_from_slice(&self.site_count.to_le_bytes());
        b.extend_from_slice(&(self.sites.len() as u64).to_le_bytes());
        for s in &self.sites {
            b.extend_from_slice(&s.dyn_index.to_le_bytes());
            b.push(s.opcode.ordinal());
            b.push(tag_code(s.tag.kind));
            b.push(s.tag.layer.unwrap_or(0xff));
            b.push(match s.target {
                Target::DestValue => 0,
                Target::DestPredicate => 1,
                Target::EncodingWord => 2,
            });
            b.push(s.bit);
            b.extend_from_slice(&s.weight.to_le_bytes());
            b.push(match s.kind {
                OutcomeKind::Masked => 0,
                OutcomeKind::Sdc => 1,
                OutcomeKind::Due => 2,
            });
            b.push(s.due_cause.map_or(0xff, |c| TrapCause::ALL.iter().position(|&x| x == c).unwrap() as u8));
            b.push(match s.sdc_cause {
                None => 0xff,
                Some(SdcCause::Numeric) => 0,
                Some(SdcCause::Address) => 1,
            });
            match s.first_inconsistent {
                None => b.extend_from_slice(&[0xff, 0xff]),
                Some(t) => b.extend_from_slice(&[tag_code(t.kind), t.layer.unwrap_or(0xff)]),
            }
        }
        b
    }

    pub fn from_bytes(b: &[u8]) -> Result<ExactResult> {
        let bad = |m: &str| CoreError::Record(format!("exact result: {m}"));
        let mut r = Reader { b, at: 0 };
        if r.take(4).ok_or_else(|| bad("truncated"))? != EXACT_MAGIC {
            return Err(bad("bad magic"));
        }
        if r.u32().ok_or_else(|| bad("truncated"))? != EXACT_VERSION {
            return Err(bad("unsupported version"));
        }
        let go = || -> Option<ExactResult> {
            let mut r = Reader { b, at: 8 };
            let program_digest = r.u64()?;
            let mode = match r.u8()? {
                0 => Mode::Value,
                1 => Mode::Encoding,
                _ => return None,
            };
            let bit_policy = match r.u8()? {
                0xff => BitPolicy::Random,
                x if x < 32 => BitPolicy::Fixed(x),
                _ => return None,
            };
            let site_count = r.u64()?;
            let n = r.u64()? as usize;
            let mut sites = Vec::with_capacity(n.min(1 << 24));
            for _ in 0..n {
                let dyn_index = r.u64()?;
                let opcode = Opcode::from_ordinal(r.u8()?)?;
                let tag = OperatorTag::new(tag_kind(r.u8()?)?, layer(r.u8()?));
                let target = match r.u8()? {
                    0 => Target::DestValue,
                    1 => Target::DestPredicate,
                    2 => Target::EncodingWord,
                    _ => return None,
                };
                let bit = r.u8()?;
                let weight = r.u32()?;
                let kind = *OutcomeKind::ALL.get(r.u8()? as usize)?;
                let due_cause = match r.u8()? {
                    0xff => None,
                    c => Some(*TrapCause::ALL.get(c as usize)?),
                };
                let sdc_cause = match r.u8()? {
                    0xff => None,
                    0 => Some(SdcCause::Numeric),
                    1 => Some(SdcCause::Address),
                    _ => return None,
                };
                let (k, l) = (r.u8()?, r.u8()?);
                let first_inconsistent = match k {
                    0xff => None,
                    k => Some(OperatorTag::new(tag_kind(k)?, layer(l))),
                };
                sites.push(ExactSite {
                    dyn_index,
                    opcode,
                    tag,
                    target,
                    bit,
                    weight,
                    kind,
                    due_cause,
                    sdc_cause,
                    first_inconsistent,
                });
            }
            (r.at == b.len()).then_some(ExactResult { program_digest, mode, bit_policy, site_count, sites })
        };
        go().ok_or_else(|| bad("malformed body"))
    }
}

fn tag_code(k: OperatorKind) -> u8 {
    OperatorKind::ALL.iter().position(|&x| x == k).unwrap() as u8
}

fn tag_kind(c: u8) -> Option<OperatorKind> {
    OperatorKind::ALL.get(c as usize).copied()
}

fn layer(l: u8) -> Option<u8> {
    (l != 0xff).then_some(l)
}

struct Reader<'a> {
    b: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Option<&[u8]> {
        let s = self.b.get(self.at..self.at + n)?;
        self.at += n;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|s| s[0])
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|s| u32::from_le_bytes(s.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|s| u64::from_le_bytes(s.try_into().unwrap()))
    }
}

/// Exact outcome distribution at two faults per run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairwiseResult {
    /// Unordered slot pairs with distinct physical sites.
    pub pairs: u64,
    /// Counts weighted by slot pairs.
    pub counts: Counts,
}

/// Runs every unordered pair of distinct physical sites. Each pair counts
/// once per pair of slots it stands for.
pub fn exact_pairwise(engine: &Engine<'_>, space: &SiteSpace, cap: u64) -> Result<PairwiseResult> {
    let s = space.len();
    let pairs_total = s.checked_mul(s.saturating_sub(1)).map(|x| x / 2).unwrap_or(u64::MAX);
    if pairs_total > cap {
        return Err(CoreError::SpaceTooLarge { size: pairs_total, cap });
    }
    let sites = physical_sites(space);
    let per_first: Result<Vec<Counts>> = (0..sites.len())
        .into_par_iter()
        .map(|a| {
            let (sa, wa) = sites[a];
            let cursor = {
                let mut c = engine.golden_cursor(sa.dyn_index);
                c.advance(sa.dyn_index);
                c
            };
            let mut c = Counts::default();
            for &(sb, wb) in &sites[a + 1..] {
                let faults = [sa, sb];
                let raw = engine.execute_from(&cursor, &faults);
                let o = classify(&raw, engine.golden)?;
                let w = wa as u64 * wb as u64;
                c.trials += w;
                match o.kind {
                    OutcomeKind::Masked => c.masked += w,
                    OutcomeKind::Sdc => c.sdc += w,
                    OutcomeKind::Due => c.due += w,
                }
            }
            Ok(c)
        })
        .collect();
    let mut total = Counts::default();
    for c in per_first? {
        total.trials += c.trials;
        total.masked += c.masked;
        total.sdc += c.sdc;
        total.due += c.due;
    }
    Ok(PairwiseResult { pairs: total.trials, counts: total })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Deviation {
    pub statistic: String,
    pub estimate: f64,
    pub exact: f64,
    pub trials: u64,
    pub abs_dev: f64,
    /// `None` when the exact value is 0.
    pub rel_dev: Option<f64>,
    /// Binomial standard error at the exact rate.
    pub se: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviationReport {
    pub sigma: f64,
    pub rows: Vec<Deviation>,
    pub pass: bool,
}

fn deviation(statistic: String, estimate: f64, exact: f64, trials: u64, sigma: f64) -> Deviation {
    let abs_dev = (estimate - exact).abs();
    let se = binomial_se(exact, trials);
    Deviation {
        statistic,
        estimate,
        exact,
        trials,
        abs_dev,
        rel_dev: (exact != 0.0).then(|| abs_dev / exact),
        se,
        pass: abs_dev <= sigma * se,
    }
}

/// Sampled single-fault statistics against exact values: MVF, SDC and DUE
/// rates, and the IVF of every sampled opcode.
pub fn compare(records: &[TrialRecord], exact: &ExactResult, sigma: f64) -> Result<DeviationReport> {
    if records.is_empty() {
        return Err(CoreError::EmptyRecords);
    }
    for r in records {
        if r.n_faults != 1 || r.mode != exact.mode || r.bit_policy != exact.bit_policy {
            return Err(CoreError::SpecMismatch(format!(
                "trial {} is {} {} x{}, exact is {} {} x1",
                r.trial,
                r.mode.name(),
                r.bit_policy,
                r.n_faults,
                exact.mode.name(),
                exact.bit_policy
            )));
        }
    }
    let est = crate::analytics::mvf(records)?;
    let ex = exact.counts();
    let n = est.counts.trials;
    let mut rows = vec![
        deviation("mvf".into(), est.mvf, ex.mvf(), n, sigma),
        deviation("sdc_rate".into(), est.sdc_rate, ex.sdc_rate(), n, sigma),
        deviation("due_rate".into(), est.due_rate, ex.due_rate(), n, sigma),
    ];
    let exact_ops = exact.opcode_counts();
    for e in crate::analytics::ivf_table(records, &[])? {
        let x = exact_ops
            .get(&e.opcode)
            .ok_or_else(|| CoreError::SpecMismatch(format!("{} has no exact sites", e.opcode)))?;
        rows.push(deviation(format!("ivf:{}", e.opcode), e.ivf, x.mvf(), e.trials, sigma));
    }
    let pass = rows.iter().all(|r| r.pass);
    Ok(DeviationReport { sigma, rows, pass })
}
