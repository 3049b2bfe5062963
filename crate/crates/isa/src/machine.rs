//! Deterministic interpreter.
//!
//! One scalar instruction stream, 255 general registers plus RZ, seven
//! predicates plus PT, and flat byte-addressed global/shared segments next to
//! a read-only constant bank. Every instruction computes its full effect
//! before anything is committed, so a trapping instruction leaves the state
//! untouched.

use std::fmt;

use crate::encode::decode;
use crate::fnv1a64;
use crate::fp;
use crate::inst::{Dest, Instruction, MemWidth, Operand, OperatorTag, Space, PT, RZ};
use crate::opcode::Opcode;
use crate::program::Program;
use crate::word::Word32;

/// Page granularity of the dirty-page bitmap.
pub const PAGE_SHIFT: u32 = 8;

/// Set in a trace entry when the instruction was skipped by its guard.
pub const TRACE_SKIPPED: u32 = 1 << 31;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TrapCause {
    /// Effective address outside its segment, or negative.
    AddrOob,
    /// Register index at or above the register budget.
    RegOob,
    /// Effective address not a multiple of the access width.
    Misaligned,
    /// Undefined opcode, predicate index out of range, or a missing field.
    IllegalOperand,
    /// Dynamic instruction budget exhausted.
    Hang,
}

impl TrapCause {
    pub const ALL: [TrapCause; 5] =
        [TrapCause::AddrOob, TrapCause::RegOob, TrapCause::Misaligned, TrapCause::IllegalOperand, TrapCause::Hang];

    pub fn code(self) -> &'static str {
        match self {
            TrapCause::AddrOob => "E1",
            TrapCause::RegOob => "E3",
            TrapCause::Misaligned => "E4",
            TrapCause::IllegalOperand => "E5",
            TrapCause::Hang => "HANG",
        }
    }

    pub fn from_code(s: &str) -> Option<TrapCause> {
        Self::ALL.iter().copied().find(|c| c.code() == s)
    }
}

impl fmt::Display for TrapCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Trap {
    pub cause: TrapCause,
    pub pc: u32,
    /// Offending address, register index, ordinal or budget.
    pub detail: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Continued,
    Exited,
    Trapped(Trap),
}

/// Architectural state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MachineState {
    pub pc: u32,
    pub regs: [u32; 256],
    /// Bit `i` is predicate `Pi`; bit 7 (PT) is always set.
    pub preds: u8,
    pub global: Vec<u8>,
    pub shared: Vec<u8>,
    pub dyn_count: u64,
    pub trap: Option<Trap>,
    pub exited: bool,
    /// One bit per page of global then shared memory, set on every store.
    pub dirty: Vec<u64>,
}

impl MachineState {
    pub fn new(program: &Program) -> Self {
        let (global, shared) = program.initial_memory();
        let pages = pages(global.len()) + pages(shared.len());
        MachineState {
            pc: 0,
            regs: [0; 256],
            preds: 1 << PT,
            global,
            shared,
            dyn_count: 0,
            trap: None,
            exited: false,
            dirty: vec![0; pages.div_ceil(64)],
        }
    }

    pub fn reg(&self, r: u8) -> Word32 {
        Word32(self.regs[r as usize])
    }

    pub fn pred(&self, p: u8) -> bool {
        self.preds >> p & 1 == 1
    }

    pub fn halted(&self) -> bool {
        self.exited || self.trap.is_some()
    }

    pub fn segment(&self, space: Space) -> &[u8] {
        match space {
            Space::Global => &self.global,
            Space::Shared => &self.shared,
            Space::Const => &[],
        }
    }

    fn mark_dirty(&mut self, space: Space, addr: u32) {
        let page = match space {
            Space::Global => (addr >> PAGE_SHIFT) as usize,
            _ => pages(self.global.len()) + (addr >> PAGE_SHIFT) as usize,
        };
        self.dirty[page / 64] |= 1 << (page % 64);
    }

    /// Whether `self` and `other` are the same architectural state, assuming
    /// both started from the same initial memory image. Only pages stored to
    /// by either run are compared.
    pub fn same_state(&self, other: &MachineState) -> bool {
        if self.pc != other.pc
            || self.preds != other.preds
            || self.exited != other.exited
            || self.trap != other.trap
            || self.regs != other.regs
        {
            return false;
        }
        let gpages = pages(self.global.len());
        let page_len = 1usize << PAGE_SHIFT;
        for (w, (a, b)) in self.dirty.iter().zip(&other.dirty).enumerate() {
            let mut bits = a | b;
            while bits != 0 {
                let page = w * 64 + bits.trailing_zeros() as usize;
                bits &= bits - 1;
                let (seg_a, seg_b, p) = if page < gpages {
                    (&self.global, &other.global, page)
                } else {
                    (&self.shared, &other.shared, page - gpages)
                };
                let lo = p * page_len;
                let hi = (lo + page_len).min(seg_a.len());
                if seg_a[lo..hi] != seg_b[lo..hi] {
                    return false;
                }
            }
        }
        true
    }
}

fn pages(bytes: usize) -> usize {
    bytes.div_ceil(1 << PAGE_SHIFT)
}

/// A register or predicate write about to be committed. Predicate values are
/// 0 or 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DestWrite {
    pub dest: Dest,
    pub value: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemAccess {
    pub space: Space,
    pub addr: u32,
    pub width: MemWidth,
    pub store: bool,
}

/// Everything an executed (or guard-skipped) instruction is about to do.
#[derive(Clone, Copy, Debug)]
pub struct Effect<'a> {
    pub dyn_index: u64,
    pub pc: u32,
    /// The instruction as executed, after any encoding substitution.
    pub inst: &'a Instruction,
    pub skipped: bool,
    pub write: Option<DestWrite>,
    pub mem: Option<MemAccess>,
    pub branch_taken: bool,
}

/// Per-instruction callback used for fault injection and observation.
pub trait Hook {
    /// Called before decode of every dynamic instruction with its encoded
    /// word. Returning a word substitutes it for this dynamic instance only.
    #[inline(always)]
    fn before(&mut self, _dyn_index: u64, _pc: u32, _word: Word32) -> Option<Word32> {
        None
    }

    /// Called after the effect is computed and before it is committed.
    /// Returning a value replaces the pending destination write.
    #[inline(always)]
    fn after(&mut self, _effect: &Effect<'_>) -> Option<u32> {
        None
    }
}

/// Hook that does nothing.
#[derive(Clone, Copy, Debug, Default)]
pub struct NoHook;

impl Hook for NoHook {}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunConfig {
    pub max_dyn: u64,
    /// Keep snapshot bytes, not only digests.
    pub snapshot_bytes: bool,
    /// Record the pc of every dynamic instruction.
    pub record_trace: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { max_dyn: u64::MAX, snapshot_bytes: true, record_trace: false }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SnapshotRecord {
    pub tag: OperatorTag,
    pub pc: u32,
    /// Dynamic instructions executed before the capture.
    pub dyn_count: u64,
    pub digest: u64,
    pub bytes: Option<Vec<u8>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunResult {
    pub state: MachineState,
    pub snapshots: Vec<SnapshotRecord>,
    /// Dynamic count per opcode ordinal.
    pub histogram: [u64; 32],
    /// Per dynamic instruction: its pc, with [`TRACE_SKIPPED`] set when the
    /// guard was false.
    pub trace: Option<Vec<u32>>,
}

impl RunResult {
    pub fn trap(&self) -> Option<Trap> {
        self.state.trap
    }

    pub fn dyn_count(&self) -> u64 {
        self.state.dyn_count
    }
}

enum Action {
    None,
    Write(Dest, u32),
    Store(u32),
    Branch(u32),
    Exit,
}

/// An interpreter bound to one program.
pub struct Machine<'p> {
    program: &'p Program,
    code: &'p [Instruction],
    operands_ok: &'p [bool],
    pub state: MachineState,
    pub snapshots: Vec<SnapshotRecord>,
    pub histogram: [u64; 32],
    pub trace: Option<Vec<u32>>,
    pub config: RunConfig,
}

impl<'p> Machine<'p> {
    pub fn new(program: &'p Program, config: RunConfig) -> Self {
        Self::with_state(program, config, MachineState::new(program))
    }

    /// Resumes from a saved state. Snapshots and histogram start empty.
    pub fn with_state(program: &'p Program, config: RunConfig, state: MachineState) -> Self {
        Machine {
            program,
            code: program.decoded(),
            operands_ok: program.operands_ok(),
            state,
            snapshots: Vec::new(),
            histogram: [0; 32],
            trace: config.record_trace.then(Vec::new),
            config,
        }
    }

    pub fn program(&self) -> &'p Program {
        self.program
    }

    fn trap(&mut self, cause: TrapCause, detail: u64) -> StepOutcome {
        let t = Trap { cause, pc: self.state.pc, detail };
        self.state.trap = Some(t);
        StepOutcome::Trapped(t)
    }

    /// Runs until halt or until `dyn_count` reaches `stop`. SNAPSHOT
    /// instructions that follow the last executed instruction are not taken.
    pub fn run_until<H: Hook>(&mut self, hook: &mut H, stop: u64) -> StepOutcome {
        loop {
            if let Some(t) = self.state.trap {
                return StepOutcome::Trapped(t);
            }
            if self.state.exited {
                return StepOutcome::Exited;
            }
            if self.state.dyn_count >= stop {
                return StepOutcome::Continued;
            }
            self.step(hook);
        }
    }

    pub fn run<H: Hook>(&mut self, hook: &mut H) -> StepOutcome {
        self.run_until(hook, u64::MAX)
    }

    pub fn finish(self) -> RunResult {
        RunResult { state: self.state, snapshots: self.snapshots, histogram: self.histogram, trace: self.trace }
    }

    fn take_snapshot(&mut self, inst: &Instruction) {
        let Some(r) = inst.snapshot else { return };
        let seg: &[u8] = match r.space {
            Space::Const => &self.program.const_bank,
            s => self.state.segment(s),
        };
        let bytes = &seg[r.offset as usize..(r.offset + r.len) as usize];
        self.snapshots.push(SnapshotRecord {
            tag: inst.tag,
            pc: self.state.pc,
            dyn_count: self.state.dyn_count,
            digest: fnv1a64(bytes),
            bytes: self.config.snapshot_bytes.then(|| bytes.to_vec()),
        });
    }

    pub fn step<H: Hook>(&mut self, hook: &mut H) -> StepOutcome {
        if let Some(t) = self.state.trap {
            return StepOutcome::Trapped(t);
        }
        if self.state.exited {
            return StepOutcome::Exited;
        }
        let pc = self.state.pc;
        let code = self.code;
        let Some(golden) = code.get(pc as usize) else {
            return self.trap(TrapCause::IllegalOperand, pc as u64);
        };
        if golden.opcode == Opcode::Snapshot {
            self.take_snapshot(golden);
            self.state.pc += 1;
            return StepOutcome::Continued;
        }
        if self.state.dyn_count >= self.config.max_dyn {
            return self.trap(TrapCause::Hang, self.config.max_dyn);
        }
        let dyn_index = self.state.dyn_count;
        let enc = &self.program.code[pc as usize];
        match hook.before(dyn_index, pc, enc.word) {
            None => self.execute(golden, self.operands_ok[pc as usize], dyn_index, hook),
            Some(w) => match decode(w, &enc.side) {
                Ok(inst) => self.execute(&inst, false, dyn_index, hook),
                Err(_) => self.trap(TrapCause::IllegalOperand, (w.bits() >> 24) as u64),
            },
        }
    }

    #[inline]
    fn read(&self, op: Operand) -> Result<u32, (TrapCause, u64)> {
        match op {
            Operand::Reg(r) => Ok(self.state.regs[r as usize]),
            Operand::Pred(p) => Ok(self.state.pred(p) as u32),
            Operand::Imm(v) => Ok(v),
            Operand::Const(o) => {
                let bank = &self.program.const_bank;
                let o = o as usize;
                match bank.get(o..o + 4) {
                    Some(b) => Ok(u32::from_le_bytes(b.try_into().unwrap())),
                    None => Err((TrapCause::AddrOob, o as u64)),
                }
            }
            Operand::None => Err((TrapCause::IllegalOperand, 0)),
        }
    }

    fn address(&self, space: Space, base: u32, offset: i32, width: MemWidth) -> Result<u32, (TrapCause, u64)> {
        let eff = base as i64 + offset as i64;
        let size = match space {
            Space::Const => self.program.const_bank.len() as i64,
            s => self.state.segment(s).len() as i64,
        };
        let n = width.bytes() as i64;
        if eff < 0 || eff + n > size {
            return Err((TrapCause::AddrOob, eff as u64));
        }
        if eff % n != 0 {
            return Err((TrapCause::Misaligned, eff as u64));
        }
        Ok(eff as u32)
    }

    fn load(&self, space: Space, addr: u32, width: MemWidth) -> u32 {
        let seg: &[u8] = match space {
            Space::Const => &self.program.const_bank,
            s => self.state.segment(s),
        };
        let a = addr as usize;
        match width {
            MemWidth::W8 => seg[a] as u32,
            MemWidth::W16 => u16::from_le_bytes([seg[a], seg[a + 1]]) as u32,
            MemWidth::W32 => u32::from_le_bytes(seg[a..a + 4].try_into().unwrap()),
        }
    }

    fn store(&mut self, space: Space, addr: u32, width: MemWidth, value: u32) {
        self.state.mark_dirty(space, addr);
        let seg = match space {
            Space::Global => &mut self.state.global,
            _ => &mut self.state.shared,
        };
        let a = addr as usize;
        let n = width.bytes() as usize;
        seg[a..a + n].copy_from_slice(&value.to_le_bytes()[..n]);
    }

    /// Computes the effect of `i` without mutating state.
    fn compute(&self, i: &Instruction) -> Result<(Action, Option<MemAccess>), (TrapCause, u64)> {
        use Opcode::*;
        let illegal = (TrapCause::IllegalOperand, i.opcode.ordinal() as u64);
        let reg_dest = || match i.dest {
            Dest::Reg(r) => Ok(Dest::Reg(r)),
            _ => Err(illegal),
        };
        let pred_dest = || match i.dest {
            Dest::Pred(p) => Ok(Dest::Pred(p)),
            _ => Err(illegal),
        };
        let a = || self.read(i.srcs[0]);
        let b = || self.read(i.srcs[1]);
        let c = || self.read(i.srcs[2]);
        let w = |v: u32| -> Result<_, (TrapCause, u64)> { Ok((Action::Write(reg_dest()?, v), None)) };
        match i.opcode {
            Fadd => w(fp::fadd(a()?, b()?)),
            Fmul => w(fp::fmul(a()?, b()?)),
            Ffma => w(fp::ffma(a()?, b()?, c()?)),
            MufuRcp => w(fp::rcp(a()?)),
            MufuEx2 => w(fp::ex2(a()?)),
            MufuLg2 => w(fp::lg2(a()?)),
            MufuRsq => w(fp::rsq(a()?)),
            Hadd2 => w(fp::hadd2(a()?, b()?)),
            Hmul2 => w(fp::hmul2(a()?, b()?)),
            Hfma2 => w(fp::hfma2(a()?, b()?, c()?)),
            HmmaStep => w(fp::hmma_step(a()?, b()?, c()?)),
            F2h2 => w(fp::f2h2(a()?, b()?)),
            H2fLo => w(fp::h2f_lo(a()?)),
            H2fHi => w(fp::h2f_hi(a()?)),
            Imad => w(a()?.wrapping_mul(b()?).wrapping_add(c()?)),
            Iadd3 => w(a()?.wrapping_add(b()?).wrapping_add(c()?)),
            Lop3 => {
                let lut = i.lut.ok_or(illegal)?;
                w(lop3(a()?, b()?, c()?, lut))
            }
            Shf => {
                let s = i.shift.filter(|&s| s < 32).ok_or(illegal)?;
                let wide = (b()? as u64) << 32 | a()? as u64;
                w((wide >> s) as u32)
            }
            Lea => {
                let s = i.shift.filter(|&s| s < 32).ok_or(illegal)?;
                w((a()? << s).wrapping_add(b()?))
            }
            Fsetp => {
                let cmp = i.cmp.ok_or(illegal)?;
                let v = cmp.eval_f32(f32::from_bits(a()?), f32::from_bits(b()?));
                Ok((Action::Write(pred_dest()?, v as u32), None))
            }
            Isetp => {
                let cmp = i.cmp.ok_or(illegal)?;
                let v = cmp.eval_i32(a()? as i32, b()? as i32);
                Ok((Action::Write(pred_dest()?, v as u32), None))
            }
            Mov => w(a()?),
            Sel => {
                let Operand::Pred(p) = i.srcs[2] else { return Err(illegal) };
                w(if self.state.pred(p) { a()? } else { b()? })
            }
            Ldg | Lds | Ldc => {
                let width = i.mem_width.ok_or(illegal)?;
                let dest = reg_dest()?;
                let space = i.mem_space().unwrap();
                let addr = self.address(space, a()?, i.mem_offset, width)?;
                let v = self.load(space, addr, width);
                Ok((Action::Write(dest, v), Some(MemAccess { space, addr, width, store: false })))
            }
            Stg | Sts => {
                let width = i.mem_width.ok_or(illegal)?;
                let space = i.mem_space().unwrap();
                let value = b()?;
                let addr = self.address(space, a()?, i.mem_offset, width)?;
                Ok((Action::Store(value), Some(MemAccess { space, addr, width, store: true })))
            }
            Bra => {
                let t = i.branch_target.filter(|&t| (t as usize) < self.code.len());
                Ok((Action::Branch(t.ok_or(illegal)?), None))
            }
            Exit => Ok((Action::Exit, None)),
            Nop => Ok((Action::None, None)),
            Snapshot => Err(illegal),
        }
    }

    fn execute<H: Hook>(&mut self, i: &Instruction, checked: bool, dyn_index: u64, hook: &mut H) -> StepOutcome {
        if !checked {
            if let Err((cause, detail)) = check_operands(i, self.program.reg_budget) {
                return self.trap(cause, detail);
            }
        }
        let pc = self.state.pc;
        let skipped = match i.guard {
            Some(g) => self.state.pred(g.pred) == g.negate,
            None => false,
        };
        let (action, mem) = if skipped {
            (Action::None, None)
        } else {
            match self.compute(i) {
                Ok(x) => x,
                Err((cause, detail)) => return self.trap(cause, detail),
            }
        };
        let write = match action {
            Action::Write(dest, value) => Some(DestWrite { dest, value }),
            _ => None,
        };
        let effect =
            Effect { dyn_index, pc, inst: i, skipped, write, mem, branch_taken: matches!(action, Action::Branch(_)) };
        let replaced = hook.after(&effect);

        self.state.dyn_count += 1;
        self.histogram[i.opcode.ordinal() as usize] += 1;
        if let Some(t) = self.trace.as_mut() {
            t.push(if skipped { pc | TRACE_SKIPPED } else { pc });
        }
        let mut next = pc + 1;
        match action {
            Action::None => {}
            Action::Write(dest, value) => {
                let value = replaced.unwrap_or(value);
                match dest {
                    Dest::Reg(r) if r != RZ => self.state.regs[r as usize] = value,
                    Dest::Pred(p) if p != PT => {
                        if value & 1 == 1 {
                            self.state.preds |= 1 << p;
                        } else {
                            self.state.preds &= !(1 << p);
                        }
                    }
                    _ => {}
                }
            }
            Action::Store(value) => {
                let m = mem.unwrap();
                self.store(m.space, m.addr, m.width, value);
            }
            Action::Branch(t) => next = t,
            Action::Exit => {
                self.state.exited = true;
                return StepOutcome::Exited;
            }
        }
        self.state.pc = next;
        StepOutcome::Continued
    }
}

pub(crate) fn check_operands(i: &Instruction, budget: u8) -> Result<(), (TrapCause, u64)> {
    let reg_ok = |r: u8| r == RZ || r < budget;
    match i.dest {
        Dest::Reg(r) if !reg_ok(r) => return Err((TrapCause::RegOob, r as u64)),
        Dest::Pred(p) if p > PT => return Err((TrapCause::IllegalOperand, p as u64)),
        _ => {}
    }
    for s in &i.srcs {
        match *s {
            Operand::Reg(r) if !reg_ok(r) => return Err((TrapCause::RegOob, r as u64)),
            Operand::Pred(p) if p > PT => return Err((TrapCause::IllegalOperand, p as u64)),
            _ => {}
        }
    }
    if let Some(g) = i.guard {
        if g.pred > PT {
            return Err((TrapCause::IllegalOperand, g.pred as u64));
        }
    }
    Ok(())
}

/// Bitwise three-input function: result bit `k` is `lut` bit
/// `(a_k << 2) | (b_k << 1) | c_k`.
pub fn lop3(a: u32, b: u32, c: u32, lut: u8) -> u32 {
    let mut r = 0;
    for idx in 0..8u8 {
        if lut >> idx & 1 == 1 {
            let ma = if idx & 4 != 0 { a } else { !a };
            let mb = if idx & 2 != 0 { b } else { !b };
            let mc = if idx & 1 != 0 { c } else { !c };
            r |= ma & mb & mc;
        }
    }
    r
}

/// Runs `program` from its initial state to halt.
pub fn run<H: Hook>(program: &Program, config: RunConfig, hook: &mut H) -> RunResult {
    let mut m = Machine::new(program, config);
    m.run(hook);
    m.finish()
}
