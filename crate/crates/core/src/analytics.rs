//! Vulnerability statistics folded from trial records.

use std::collections::BTreeMap;

use bitstorm_isa::{Group, Opcode, OperatorKind, OperatorTag, TrapCause};
use serde::Serialize;

use crate::classify::{OutcomeKind, SdcCause};
use crate::error::{CoreError, Result};
use crate::record::TrialRecord;
use crate::spec::BitPolicy;

/// Trials below this count are flagged in reports.
pub const LOW_CONFIDENCE_TRIALS: u64 = 30;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub trials: u64,
    pub masked: u64,
    pub sdc: u64,
    pub due: u64,
}

impl Counts {
    pub fn add(&mut self, k: OutcomeKind) {
        self.trials += 1;
        match k {
            OutcomeKind::Masked => self.masked += 1,
            OutcomeKind::Sdc => self.sdc += 1,
            OutcomeKind::Due => self.due += 1,
        }
    }

    fn rate(&self, n: u64) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            n as f64 / self.trials as f64
        }
    }

    pub fn masked_rate(&self) -> f64 {
        self.rate(self.masked)
    }

    pub fn sdc_rate(&self) -> f64 {
        self.rate(self.sdc)
    }

    pub fn due_rate(&self) -> f64 {
        self.rate(self.due)
    }

    /// (#SDC + #DUE) / trials, summed from the two rates so that
    /// `mvf == sdc_rate + due_rate` holds bit for bit.
    pub fn mvf(&self) -> f64 {
        self.sdc_rate() + self.due_rate()
    }
}

fn fold<'a, I: IntoIterator<Item = &'a TrialRecord>>(records: I) -> Counts {
    let mut c = Counts::default();
    for r in records {
        c.add(r.outcome);
    }
    c
}

/// Sample standard deviation, or `None` below two values.
pub fn sample_std(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Some((ss / (n - 1.0)).sqrt())
}

/// Std dev of a per-repeat statistic over repeats that have trials.
fn repeat_std<'a>(records: impl IntoIterator<Item = &'a TrialRecord>, stat: impl Fn(&Counts) -> f64) -> Option<f64> {
    let mut by: BTreeMap<u32, Counts> = BTreeMap::new();
    for r in records {
        by.entry(r.repeat).or_default().add(r.outcome);
    }
    let v: Vec<f64> = by.values().map(stat).collect();
    sample_std(&v)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MvfSummary {
    pub counts: Counts,
    pub mvf: f64,
    pub sdc_rate: f64,
    pub due_rate: f64,
    pub masked_rate: f64,
    /// Across repeat blocks, when there are at least two.
    pub std_dev: Option<f64>,
    pub repeats: usize,
}

pub fn mvf(records: &[TrialRecord]) -> Result<MvfSummary> {
    if records.is_empty() {
        return Err(CoreError::EmptyRecords);
    }
    let c = fold(records);
    let mut reps: Vec<u32> = records.iter().map(|r| r.repeat).collect();
    reps.sort_unstable();
    reps.dedup();
    Ok(MvfSummary {
        counts: c,
        mvf: c.mvf(),
        sdc_rate: c.sdc_rate(),
        due_rate: c.due_rate(),
        masked_rate: c.masked_rate(),
        std_dev: repeat_std(records, Counts::mvf),
        repeats: reps.len(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct IvfEntry {
    pub opcode: Opcode,
    pub group: Group,
    pub trials: u64,
    pub sdc_rate: f64,
    pub due_rate: f64,
    pub ivf: f64,
    pub p_i: f64,
    pub std_dev: Option<f64>,
    pub low_confidence: bool,
}

/// Per-opcode IVF from single-fault records. `weights` gives p_i per opcode;
/// opcodes without trials are omitted.
pub fn ivf_table(records: &[TrialRecord], weights: &[(Opcode, f64)]) -> Result<Vec<IvfEntry>> {
    if let Some(r) = records.iter().find(|r| r.n_faults != 1) {
        return Err(CoreError::MixedFaultCount(r.n_faults));
    }
    let mut by: BTreeMap<Opcode, Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        by.entry(r.sites[0].opcode).or_default().push(r);
    }
    let p: BTreeMap<Opcode, f64> = weights.iter().copied().collect();
    Ok(by
        .into_iter()
        .map(|(op, rs)| {
            let c = fold(rs.iter().copied());
            IvfEntry {
                opcode: op,
                group: op.group(),
                trials: c.trials,
                sdc_rate: c.sdc_rate(),
                due_rate: c.due_rate(),
                ivf: c.mvf(),
                p_i: p.get(&op).copied().unwrap_or(0.0),
                std_dev: repeat_std(rs.iter().copied(), Counts::mvf),
                low_confidence: c.trials < LOW_CONFIDENCE_TRIALS,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupStats {
    pub group: Group,
    pub mu: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub measured: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MvfEstimate {
    pub v_avg: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub measured: Vec<Opcode>,
    pub unmeasured: Vec<Opcode>,
    pub groups: Vec<GroupStats>,
    pub exact: Option<f64>,
}

impl MvfEstimate {
    pub fn brackets(&self, x: f64) -> bool {
        self.v_min <= x && x <= self.v_max
    }
}

/// Group-wise imputation from IVF entries.
pub fn approx_mvf(measured: &[IvfEntry], universe: &[(Opcode, f64)]) -> Result<MvfEstimate> {
    let v: Vec<(Opcode, f64)> = measured.iter().map(|e| (e.opcode, e.ivf)).collect();
    approx_mvf_values(&v, universe)
}

/// Group-wise imputation. `measured` maps opcodes to IVF; `universe` maps
/// every opcode of the trace to its proportion p_i.
///
/// Step 1 takes the mean, min and max IVF of the measured members of each
/// group. Step 2 assigns them to the unmeasured members. Step 3 sums
/// p_i v_i over measured opcodes plus p_j times the imputed value over
/// unmeasured ones, once each for mean, min and max.
pub fn approx_mvf_values(measured: &[(Opcode, f64)], universe: &[(Opcode, f64)]) -> Result<MvfEstimate> {
    let total: f64 = universe.iter().map(|u| u.1).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(CoreError::WeightsNotNormalized(total));
    }
    let v: BTreeMap<Opcode, f64> = measured.iter().copied().collect();
    let mut members: BTreeMap<Group, Vec<f64>> = BTreeMap::new();
    for &(op, _) in universe {
        if let Some(&x) = v.get(&op) {
            members.entry(op.group()).or_default().push(x);
        }
    }
    let groups: Vec<GroupStats> = members
        .iter()
        .map(|(&g, xs)| GroupStats {
            group: g,
            mu: xs.iter().sum::<f64>() / xs.len() as f64,
            v_min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            v_max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            measured: xs.len(),
        })
        .collect();
    let stats: BTreeMap<Group, &GroupStats> = groups.iter().map(|g| (g.group, g)).collect();
    let (mut avg, mut lo, mut hi) = (0.0, 0.0, 0.0);
    let (mut m, mut u) = (Vec::new(), Vec::new());
    for &(op, p) in universe {
        if let Some(&x) = v.get(&op) {
            avg += p * x;
            lo += p * x;
            hi += p * x;
            m.push(op);
        } else {
            let g = stats.get(&op.group()).ok_or_else(|| CoreError::UncoveredGroup(op.group().name().into()))?;
            avg += p * g.mu;
            lo += p * g.v_min;
            hi += p * g.v_max;
            u.push(op);
        }
    }
    // rounding can put the mean a hair outside identical bounds
    let avg = avg.clamp(lo, hi);
    Ok(MvfEstimate { v_avg: avg, v_min: lo, v_max: hi, measured: m, unmeasured: u, groups, exact: None })
}

#[derive(Clone, Debug, PartialEq)]
pub struct OperatorVuln {
    pub kind: OperatorKind,
    pub n_error: u64,
    pub n_inconsistent: u64,
    /// n_error / n_inconsistent; `None` when nothing was inconsistent.
    pub v: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Operator vulnerability keyed by the first inconsistent snapshot. Every
/// operator kind gets a row.
pub fn operator_vulnerability(records: &[TrialRecord]) -> Vec<OperatorVuln> {
    operator_rows(records.iter().map(|r| (r.first_inconsistent(), r.outcome.is_error(), 1)))
}

/// Operator rows from (first inconsistent tag, is error, weight) triples.
pub fn operator_rows(obs: impl IntoIterator<Item = (Option<OperatorTag>, bool, u64)>) -> Vec<OperatorVuln> {
    let mut c: BTreeMap<OperatorKind, (u64, u64)> = OperatorKind::ALL.iter().map(|&k| (k, (0, 0))).collect();
    for (tag, err, w) in obs {
        if let Some(t) = tag {
            let e = c.get_mut(&t.kind).unwrap();
            e.1 += w;
            if err {
                e.0 += w;
            }
        }
    }
    c.into_iter()
        .map(|(kind, (n_error, n_inconsistent))| OperatorVuln {
            kind,
            n_error,
            n_inconsistent,
            v: ratio(n_error, n_inconsistent),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerVuln {
    /// Layer index, or the operator name for layerless buckets.
    pub bucket: String,
    pub layer: Option<u8>,
    pub n_error: u64,
    pub n_inconsistent: u64,
    pub v: Option<f64>,
}

/// Layer vulnerability: rows for layers `0..layers`, then one row per
/// layerless operator kind that can hold a snapshot (EMBEDDING, NORM for the
/// final norm, LM_HEAD), then any other layerless bucket that occurs.
pub fn layer_vulnerability(records: &[TrialRecord], layers: u8) -> Vec<LayerVuln> {
    layer_rows(records.iter().map(|r| (r.first_inconsistent(), r.outcome.is_error(), 1)), layers)
}

pub fn layer_rows(obs: impl IntoIterator<Item = (Option<OperatorTag>, bool, u64)>, layers: u8) -> Vec<LayerVuln> {
    let mut rows: Vec<(String, Option<u8>, u64, u64)> = (0..layers).map(|l| (l.to_string(), Some(l), 0, 0)).collect();
    for k in [OperatorKind::Embedding, OperatorKind::Norm, OperatorKind::LmHead] {
        rows.push((k.name().into(), None, 0, 0));
    }
    for (tag, err, w) in obs {
        let Some(t) = tag else { continue };
        let key = match t.layer {
            Some(l) => l.to_string(),
            None => t.kind.name().to_string(),
        };
        let i = match rows.iter().position(|row| row.0 == key) {
            Some(i) => i,
            None => {
                rows.push((key, t.layer, 0, 0));
                rows.len() - 1
            }
        };
        rows[i].3 += w;
        if err {
            rows[i].2 += w;
        }
    }
    rows.into_iter()
        .map(|(bucket, layer, n_error, n_inconsistent)| LayerVuln {
            bucket,
            layer,
            n_error,
            n_inconsistent,
            v: ratio(n_error, n_inconsistent),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BitSweepRow {
    pub bit: u8,
    pub trials: u64,
    pub sdc_rate: f64,
    pub due_rate: f64,
    pub masked_rate: f64,
}

/// One row per fixed bit; records from RANDOM campaigns are ignored.
pub fn bit_sweep(records: &[TrialRecord]) -> Vec<BitSweepRow> {
    let mut by: BTreeMap<u8, Counts> = BTreeMap::new();
    for r in records {
        if let BitPolicy::Fixed(b) = r.bit_policy {
            by.entry(b).or_default().add(r.outcome);
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

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MultiFaultRow {
    pub n: u32,
    pub trials: u64,
    pub masked_rate: f64,
    pub sdc_rate: f64,
    pub due_rate: f64,
}

pub fn multi_fault_curve(records: &[TrialRecord]) -> Vec<MultiFaultRow> {
    let mut by: BTreeMap<u32, Counts> = BTreeMap::new();
    for r in records {
        by.entry(r.n_faults).or_default().add(r.outcome);
    }
    by.into_iter()
        .map(|(n, c)| MultiFaultRow {
            n,
            trials: c.trials,
            masked_rate: c.masked_rate(),
            sdc_rate: c.sdc_rate(),
            due_rate: c.due_rate(),
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CauseBreakdown {
    pub due: BTreeMap<String, u64>,
    pub sdc: BTreeMap<String, u64>,
}

/// DUE trap causes and SDC sub-causes, with every known cause listed.
pub fn cause_breakdown(records: &[TrialRecord]) -> CauseBreakdown {
    let mut b = CauseBreakdown::default();
    for c in TrapCause::ALL {
        b.due.insert(c.code().into(), 0);
    }
    for c in [SdcCause::Numeric, SdcCause::Address] {
        b.sdc.insert(c.name().into(), 0);
    }
    for r in records {
        if let Some(c) = r.due_cause {
            *b.due.entry(c.code().into()).or_default() += 1;
        }
        if let Some(c) = r.sdc_cause {
            *b.sdc.entry(c.name().into()).or_default() += 1;
        }
    }
    b
}

/// Binomial standard error of a rate `p` estimated from `n` trials.
pub fn binomial_se(p: f64, n: u64) -> f64 {
    if n == 0 {
        return f64::INFINITY;
    }
    (p * (1.0 - p) / n as f64).sqrt()
}
