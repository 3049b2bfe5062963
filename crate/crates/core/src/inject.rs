//! Trial execution.
//!
//! The engine keeps copies of the golden machine state every `interval`
//! dynamic instructions. A trial resumes from the last checkpoint before its
//! first fault instead of replaying from the start, and once every fault has
//! been applied it compares its state with the golden checkpoint at each
//! boundary. Identical states have identical futures, so a match ends the
//! run early with the golden remainder spliced in.

use bitstorm_forge::GoldenTrace;
use bitstorm_isa::{Effect, Hook, Machine, MachineState, NoHook, OperatorTag, Program, RunConfig, Space, Trap, Word32};

use crate::error::{CoreError, Result};
use crate::spec::{FaultSite, Target};

/// Default hang budget as a multiple of the golden dynamic count.
pub const DEFAULT_HANG_MULTIPLIER: u64 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Limits {
    pub hang_multiplier: u64,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { hang_multiplier: DEFAULT_HANG_MULTIPLIER }
    }
}

/// What a faulty run produced, before classification.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawTrialResult {
    pub program_digest: u64,
    pub trap: Option<Trap>,
    /// Bytes of the program's output region.
    pub output: Vec<u8>,
    /// Words of the logits region, row-major.
    pub logits: Vec<u32>,
    pub snapshots: Vec<(OperatorTag, u64)>,
    pub dyn_count: u64,
    /// Per fault, in the order given: whether its dynamic index was reached.
    pub reached: Vec<bool>,
    /// The run rejoined the golden state and was cut short.
    pub converged: bool,
}

/// Applies a sorted list of faults as the run passes their dynamic indices.
#[derive(Clone, Debug)]
pub struct InjectHook<'f> {
    faults: &'f [FaultSite],
    next: usize,
    pub reached: Vec<bool>,
    /// An encoding flip was applied to the instruction now executing.
    pub encoding_hit: bool,
    /// A value flip was applied to the write now being committed.
    pub value_hit: bool,
}

impl<'f> InjectHook<'f> {
    pub fn new(faults: &'f [FaultSite]) -> Self {
        debug_assert!(faults.windows(2).all(|w| w[0].dyn_index <= w[1].dyn_index));
        InjectHook { faults, next: 0, reached: vec![false; faults.len()], encoding_hit: false, value_hit: false }
    }

    fn pending(&self, dyn_index: u64) -> bool {
        self.faults.get(self.next).is_some_and(|f| f.dyn_index == dyn_index)
    }

    fn at(&self, dyn_index: u64) -> std::ops::Range<usize> {
        let end = self.faults[self.next..]
            .iter()
            .position(|f| f.dyn_index != dyn_index)
            .map_or(self.faults.len(), |p| self.next + p);
        self.next..end
    }
}

impl Hook for InjectHook<'_> {
    #[inline]
    fn before(&mut self, dyn_index: u64, _pc: u32, word: Word32) -> Option<Word32> {
        self.encoding_hit = false;
        if !self.pending(dyn_index) {
            return None;
        }
        let mut w = word;
        for k in self.at(dyn_index) {
            let f = self.faults[k];
            if f.target == Target::EncodingWord {
                w = w.flip(f.bit);
                self.reached[k] = true;
                self.encoding_hit = true;
            }
        }
        self.encoding_hit.then_some(w)
    }

    #[inline]
    fn after(&mut self, effect: &Effect<'_>) -> Option<u32> {
        self.value_hit = false;
        if !self.pending(effect.dyn_index) {
            return None;
        }
        let range = self.at(effect.dyn_index);
        self.next = range.end;
        let write = effect.write?;
        let mut v = write.value;
        for k in range {
            let f = self.faults[k];
            if f.target == Target::EncodingWord {
                continue;
            }
            v ^= match write.dest {
                bitstorm_isa::Dest::Pred(_) => 1,
                _ => 1 << (f.bit & 31),
            };
            self.reached[k] = true;
            self.value_hit = true;
        }
        self.value_hit.then_some(v)
    }
}

struct Checkpoint {
    state: MachineState,
    /// Golden snapshots taken before this point.
    snapshots: usize,
}

/// Runs faulty trials of one program against its golden trace.
pub struct Engine<'a> {
    pub program: &'a Program,
    pub golden: &'a GoldenTrace,
    checkpoints: Vec<Checkpoint>,
    interval: u64,
    max_dyn: u64,
    golden_logits: Vec<u32>,
    digest: u64,
}

impl<'a> Engine<'a> {
    pub fn new(program: &'a Program, golden: &'a GoldenTrace, limits: Limits) -> Result<Self> {
        // about 256 checkpoints, but no closer than 512 instructions apart
        let interval = (golden.dyn_count / 256).max(512);
        Self::with_interval(program, golden, limits, interval)
    }

    pub fn with_interval(program: &'a Program, golden: &'a GoldenTrace, limits: Limits, interval: u64) -> Result<Self> {
        let digest = program.digest();
        if golden.program_digest != digest {
            return Err(CoreError::MismatchedTrace);
        }
        let interval = interval.max(1);
        let mut m = Machine::new(program, quiet(u64::MAX));
        let mut checkpoints = Vec::new();
        let mut at = 0;
        while at < golden.dyn_count {
            m.run_until(&mut NoHook, at);
            checkpoints.push(Checkpoint { state: m.state.clone(), snapshots: m.snapshots.len() });
            at += interval;
        }
        Ok(Engine {
            program,
            golden,
            checkpoints,
            interval,
            max_dyn: golden.dyn_count.saturating_mul(limits.hang_multiplier.max(1)),
            golden_logits: golden.logits.concat(),
            digest,
        })
    }

    pub fn max_dyn(&self) -> u64 {
        self.max_dyn
    }

    /// A golden machine positioned at the last checkpoint at or before `dyn_index`.
    pub fn golden_cursor(&self, dyn_index: u64) -> Cursor<'a> {
        let k = ((dyn_index / self.interval) as usize).min(self.checkpoints.len() - 1);
        let c = &self.checkpoints[k];
        Cursor {
            machine: Machine::with_state(self.program, quiet(u64::MAX), c.state.clone()),
            base_snapshots: c.snapshots,
        }
    }

    /// Runs one trial. `faults` must be sorted by dynamic index.
    pub fn execute(&self, faults: &[FaultSite]) -> RawTrialResult {
        let first = faults.first().map_or(self.golden.dyn_count, |f| f.dyn_index);
        let mut cursor = self.golden_cursor(first);
        cursor.advance(first);
        self.execute_from(&cursor, faults)
    }

    /// Runs one trial from a golden cursor at or before the first fault.
    pub fn execute_from(&self, cursor: &Cursor<'_>, faults: &[FaultSite]) -> RawTrialResult {
        let mut hook = InjectHook::new(faults);
        let mut m = cursor.fork(self.max_dyn);
        let last = faults.last().map_or(0, |f| f.dyn_index);
        m.run_until(&mut hook, last + 1);
        let converged = self.run_to_convergence(&mut m, &mut hook);
        self.collect(cursor.snapshot_count(), m, hook.reached, converged)
    }

    /// Runs one trial under an arbitrary hook that wraps the injection,
    /// without the convergence shortcut.
    pub fn execute_with<H: Hook>(&self, faults: &[FaultSite], hook: &mut H) -> RawTrialResult {
        let first = faults.first().map_or(self.golden.dyn_count, |f| f.dyn_index);
        let mut cursor = self.golden_cursor(first);
        cursor.advance(first);
        let mut m = cursor.fork(self.max_dyn);
        m.run(hook);
        self.collect(cursor.snapshot_count(), m, Vec::new(), None)
    }

    /// Advances past checkpoint boundaries until the state matches golden
    /// or the run halts. Returns the checkpoint index on convergence.
    fn run_to_convergence<H: Hook>(&self, m: &mut Machine<'_>, hook: &mut H) -> Option<usize> {
        loop {
            if m.state.halted() {
                return None;
            }
            let d = m.state.dyn_count;
            let k = (d / self.interval) as usize;
            if d.is_multiple_of(self.interval) {
                if let Some(c) = self.checkpoints.get(k) {
                    if m.state.same_state(&c.state) {
                        return Some(k);
                    }
                }
            }
            if k + 1 >= self.checkpoints.len() {
                m.run(hook);
                return None;
            }
            m.run_until(hook, (k as u64 + 1) * self.interval);
        }
    }

    fn collect(
        &self,
        base_snapshots: usize,
        m: Machine<'_>,
        reached: Vec<bool>,
        converged: Option<usize>,
    ) -> RawTrialResult {
        let g = self.golden;
        let mut snapshots: Vec<(OperatorTag, u64)> =
            g.snapshots[..base_snapshots].iter().map(|s| (s.tag, s.digest)).collect();
        snapshots.extend(m.snapshots.iter().map(|s| (s.tag, s.digest)));
        let digest = self.digest;
        if let Some(k) = converged {
            let rest = self.checkpoints[k].snapshots;
            snapshots.extend(g.snapshots[rest..].iter().map(|s| (s.tag, s.digest)));
            return RawTrialResult {
                program_digest: digest,
                trap: None,
                output: g.output.clone(),
                logits: self.golden_logits.clone(),
                snapshots,
                dyn_count: g.dyn_count,
                reached,
                converged: true,
            };
        }
        let layout = &self.program.layout;
        let read = |r: bitstorm_isa::Region| -> Vec<u8> {
            let seg = match r.space {
                Space::Const => &self.program.const_bank,
                s => m.state.segment(s),
            };
            seg[r.offset as usize..r.end() as usize].to_vec()
        };
        let logits = layout.logits.map_or_else(Vec::new, |l| {
            read(l.region()).chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect()
        });
        RawTrialResult {
            program_digest: digest,
            trap: m.state.trap,
            output: read(layout.output),
            logits,
            snapshots,
            dyn_count: m.state.dyn_count,
            reached,
            converged: false,
        }
    }
}

fn quiet(max_dyn: u64) -> RunConfig {
    RunConfig { max_dyn, snapshot_bytes: false, record_trace: false }
}

/// A fault-free machine used as the starting point of trials.
pub struct Cursor<'a> {
    machine: Machine<'a>,
    base_snapshots: usize,
}

impl<'a> Cursor<'a> {
    pub fn dyn_count(&self) -> u64 {
        self.machine.state.dyn_count
    }

    /// Runs fault-free until `dyn_index` instructions have executed.
    pub fn advance(&mut self, dyn_index: u64) {
        self.machine.run_until(&mut NoHook, dyn_index);
    }

    fn snapshot_count(&self) -> usize {
        self.base_snapshots + self.machine.snapshots.len()
    }

    fn fork(&self, max_dyn: u64) -> Machine<'a> {
        Machine::with_state(self.machine.program(), quiet(max_dyn), self.machine.state.clone())
    }
}

/// Runs one trial without checkpoints or the convergence shortcut. Used to
/// cross-check [`Engine::execute`].
pub fn execute_naive(program: &Program, golden: &GoldenTrace, faults: &[FaultSite], limits: Limits) -> RawTrialResult {
    let max_dyn = golden.dyn_count.saturating_mul(limits.hang_multiplier.max(1));
    let mut hook = InjectHook::new(faults);
    let mut m = Machine::new(program, quiet(max_dyn));
    m.run(&mut hook);
    let layout = &program.layout;
    let seg = |r: bitstorm_isa::Region| m.state.segment(r.space)[r.offset as usize..r.end() as usize].to_vec();
    let logits = layout.logits.map_or_else(Vec::new, |l| {
        seg(l.region()).chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect()
    });
    RawTrialResult {
        program_digest: program.digest(),
        trap: m.state.trap,
        output: seg(layout.output),
        logits,
        snapshots: m.snapshots.iter().map(|s| (s.tag, s.digest)).collect(),
        dyn_count: m.state.dyn_count,
        reached: hook.reached,
        converged: false,
    }
}
