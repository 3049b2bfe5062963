//! Program container: code, memory layout, constant bank and serialization.

use std::fmt::Write as _;
use std::sync::OnceLock;

use crate::encode::{encode, DestKind, EncodedInstruction, SideEntry, SlotKind};
use crate::error::{IsaError, Result};
use crate::inst::{
    CmpOp, Dest, Guard, Instruction, MemWidth, Operand, OperatorKind, OperatorTag, SnapshotRegion, Space, PT, RZ,
};
use crate::opcode::Opcode;
use crate::word::Word32;

pub const MAGIC: &[u8; 4] = b"BFSM";
pub const VERSION: u16 = 1;

/// Hard caps on program size.
pub const MAX_INSTRUCTIONS: usize = 1 << 20;
pub const MAX_SEGMENT_BYTES: u32 = 64 << 20;

/// A byte range inside one memory space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Region {
    pub space: Space,
    pub offset: u32,
    pub len: u32,
}

impl Region {
    pub fn global(offset: u32, len: u32) -> Self {
        Region { space: Space::Global, offset, len }
    }

    pub fn end(&self) -> u64 {
        self.offset as u64 + self.len as u64
    }

    pub fn contains(&self, space: Space, addr: u32, len: u32) -> bool {
        space == self.space && addr as u64 >= self.offset as u64 && addr as u64 + len as u64 <= self.end()
    }
}

/// Row-major fp32 logits written by the program, one row per decoding step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LogitsRegion {
    pub offset: u32,
    pub rows: u32,
    pub cols: u32,
}

impl LogitsRegion {
    pub fn region(&self) -> Region {
        Region::global(self.offset, self.rows * self.cols * 4)
    }
}

/// Initial contents of part of a writable segment.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct InitSegment {
    pub space: Space,
    pub offset: u32,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MemoryLayout {
    pub global_size: u32,
    pub shared_size: u32,
    /// Observable output: generated tokens as little-endian u32 words.
    pub output: Region,
    pub logits: Option<LogitsRegion>,
    /// Regions that hold persistent state between decoding steps.
    pub kv_cache: Option<Region>,
}

impl MemoryLayout {
    pub fn segment_size(&self, space: Space) -> u32 {
        match space {
            Space::Global => self.global_size,
            Space::Shared => self.shared_size,
            Space::Const => 0,
        }
    }
}

#[derive(Debug)]
pub struct Program {
    pub name: String,
    pub code: Vec<EncodedInstruction>,
    pub const_bank: Vec<u8>,
    pub layout: MemoryLayout,
    pub init: Vec<InitSegment>,
    /// Registers `0..reg_budget` are addressable; index 255 is RZ.
    pub reg_budget: u8,
    decoded: OnceLock<Vec<Instruction>>,
    operands_ok: OnceLock<Vec<bool>>,
}

impl Clone for Program {
    fn clone(&self) -> Self {
        Program::new(
            self.name.clone(),
            self.code.clone(),
            self.const_bank.clone(),
            self.layout.clone(),
            self.init.clone(),
            self.reg_budget,
        )
    }
}

impl PartialEq for Program {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.code == other.code
            && self.const_bank == other.const_bank
            && self.layout == other.layout
            && self.init == other.init
            && self.reg_budget == other.reg_budget
    }
}

impl Eq for Program {}

impl Program {
    pub fn new(
        name: String,
        code: Vec<EncodedInstruction>,
        const_bank: Vec<u8>,
        layout: MemoryLayout,
        init: Vec<InitSegment>,
        reg_budget: u8,
    ) -> Self {
        Program {
            name,
            code,
            const_bank,
            layout,
            init,
            reg_budget,
            decoded: OnceLock::new(),
            operands_ok: OnceLock::new(),
        }
    }

    pub fn from_instructions(
        name: impl Into<String>,
        insts: &[Instruction],
        const_bank: Vec<u8>,
        layout: MemoryLayout,
        init: Vec<InitSegment>,
        reg_budget: u8,
    ) -> Self {
        let code = insts.iter().map(encode).collect();
        Program::new(name.into(), code, const_bank, layout, init, reg_budget)
    }

    pub fn len(&self) -> usize {
        self.code.len()
    }

    pub fn is_empty(&self) -> bool {
        self.code.is_empty()
    }

    /// Fault-free decoded instructions, cached.
    ///
    /// # Panics
    ///
    /// Panics if a stored word does not decode; [`Program::validate`] rules
    /// this out.
    pub fn decoded(&self) -> &[Instruction] {
        self.decoded
            .get_or_init(|| self.code.iter().map(|e| e.decode().expect("program word does not decode")).collect())
    }

    /// Per pc: whether the fault-free instruction passes the register and
    /// predicate range checks, which depend only on the instruction and the
    /// register budget.
    pub(crate) fn operands_ok(&self) -> &[bool] {
        self.operands_ok.get_or_init(|| {
            self.decoded().iter().map(|i| crate::machine::check_operands(i, self.reg_budget).is_ok()).collect()
        })
    }

    pub fn side(&self, pc: u32) -> &SideEntry {
        &self.code[pc as usize].side
    }

    /// Initial contents of the global and shared segments.
    pub fn initial_memory(&self) -> (Vec<u8>, Vec<u8>) {
        let mut global = vec![0u8; self.layout.global_size as usize];
        let mut shared = vec![0u8; self.layout.shared_size as usize];
        for seg in &self.init {
            let dst = match seg.space {
                Space::Global => &mut global,
                _ => &mut shared,
            };
            let o = seg.offset as usize;
            dst[o..o + seg.bytes.len()].copy_from_slice(&seg.bytes);
        }
        (global, shared)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |pc: usize, msg: String| IsaError::InvalidProgram(format!("pc {pc}: {msg}"));
        if self.code.is_empty() {
            return Err(IsaError::InvalidProgram("empty program".into()));
        }
        if self.code.len() > MAX_INSTRUCTIONS {
            return Err(IsaError::InvalidProgram(format!(
                "{} instructions exceed the cap of {MAX_INSTRUCTIONS}",
                self.code.len()
            )));
        }
        let lay = &self.layout;
        if lay.global_size > MAX_SEGMENT_BYTES || lay.shared_size > MAX_SEGMENT_BYTES {
            return Err(IsaError::InvalidProgram("segment size exceeds cap".into()));
        }
        let in_bounds = |r: &Region| -> bool {
            let size = match r.space {
                Space::Const => self.const_bank.len() as u64,
                s => lay.segment_size(s) as u64,
            };
            r.end() <= size
        };
        if lay.output.space != Space::Global || !in_bounds(&lay.output) || !lay.output.len.is_multiple_of(4) {
            return Err(IsaError::InvalidProgram("output region out of bounds".into()));
        }
        if let Some(l) = lay.logits {
            if !in_bounds(&l.region()) {
                return Err(IsaError::InvalidProgram("logits region out of bounds".into()));
            }
        }
        if let Some(kv) = lay.kv_cache {
            if !in_bounds(&kv) {
                return Err(IsaError::InvalidProgram("kv region out of bounds".into()));
            }
        }
        for seg in &self.init {
            let r = Region { space: seg.space, offset: seg.offset, len: seg.bytes.len() as u32 };
            if seg.space == Space::Const || !in_bounds(&r) {
                return Err(IsaError::InvalidProgram("init segment out of bounds".into()));
            }
        }
        let budget = self.reg_budget as u32;
        for (pc, e) in self.code.iter().enumerate() {
            let i = e.decode().map_err(|err| bad(pc, err.to_string()))?;
            let reg_ok = |r: u8| r == RZ || (r as u32) < budget;
            if let Dest::Reg(r) = i.dest {
                if !reg_ok(r) {
                    return Err(bad(pc, format!("register R{r} outside budget")));
                }
            }
            if let Dest::Pred(p) = i.dest {
                if p > PT {
                    return Err(bad(pc, format!("predicate P{p} out of range")));
                }
            }
            for s in i.srcs {
                match s {
                    Operand::Reg(r) if !reg_ok(r) => return Err(bad(pc, format!("register R{r} outside budget"))),
                    Operand::Pred(p) if p > PT => return Err(bad(pc, format!("predicate P{p} out of range"))),
                    Operand::Const(o) if o as usize + 4 > self.const_bank.len() => {
                        return Err(bad(pc, format!("constant offset {o:#x} out of bank")))
                    }
                    _ => {}
                }
            }
            if let Some(g) = i.guard {
                if g.pred > PT {
                    return Err(bad(pc, format!("guard P{} out of range", g.pred)));
                }
            }
            match i.opcode {
                Opcode::Bra => match i.branch_target {
                    Some(t) if (t as usize) < self.code.len() => {}
                    _ => return Err(bad(pc, "branch target out of range".into())),
                },
                Opcode::Snapshot => match i.snapshot {
                    Some(r) if in_bounds(&Region { space: r.space, offset: r.offset, len: r.len }) => {}
                    _ => return Err(bad(pc, "snapshot region out of bounds".into())),
                },
                op if op.group() == crate::opcode::Group::Mem && i.mem_width.is_none() => {
                    return Err(bad(pc, "memory instruction without width".into()))
                }
                _ => {}
            }
        }
        match self.decoded().last().map(|i| i.opcode) {
            Some(Opcode::Exit) | Some(Opcode::Bra) => Ok(()),
            _ => Err(IsaError::InvalidProgram("last instruction must be EXIT or BRA".into())),
        }
    }

    /// SASS-like listing, one instruction per line.
    pub fn disassemble(&self) -> String {
        let mut s = String::new();
        for (pc, e) in self.code.iter().enumerate() {
            match e.decode() {
                Ok(i) => writeln!(s, "/*{pc:05x}*/ {i:<60} /* {} */", e.word).unwrap(),
                Err(err) => writeln!(s, "/*{pc:05x}*/ <{err}> /* {} */", e.word).unwrap(),
            }
        }
        s
    }

    pub fn digest(&self) -> u64 {
        crate::fnv1a64(&self.to_bytes())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.buf.extend_from_slice(MAGIC);
        w.u16(VERSION);
        w.bytes(self.name.as_bytes());
        w.u8(self.reg_budget);
        let lay = &self.layout;
        w.u32(lay.global_size);
        w.u32(lay.shared_size);
        w.region(&lay.output);
        match lay.logits {
            Some(l) => {
                w.u8(1);
                w.u32(l.offset);
                w.u32(l.rows);
                w.u32(l.cols);
            }
            None => w.u8(0),
        }
        match lay.kv_cache {
            Some(r) => {
                w.u8(1);
                w.region(&r);
            }
            None => w.u8(0),
        }
        w.bytes(&self.const_bank);
        w.u32(self.init.len() as u32);
        for seg in &self.init {
            w.u8(seg.space.code());
            w.u32(seg.offset);
            w.bytes(&seg.bytes);
        }
        w.u32(self.code.len() as u32);
        for e in &self.code {
            w.u32(e.word.bits());
            w.side(&e.side);
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Program> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(IsaError::Container("bad magic".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(IsaError::Container(format!("unsupported version {version}")));
        }
        let name =
            String::from_utf8(r.bytes()?.to_vec()).map_err(|_| IsaError::Container("name is not UTF-8".into()))?;
        let reg_budget = r.u8()?;
        let global_size = r.u32()?;
        let shared_size = r.u32()?;
        let output = r.region()?;
        let logits = match r.u8()? {
            0 => None,
            _ => Some(LogitsRegion { offset: r.u32()?, rows: r.u32()?, cols: r.u32()? }),
        };
        let kv_cache = match r.u8()? {
            0 => None,
            _ => Some(r.region()?),
        };
        let const_bank = r.bytes()?.to_vec();
        let n_init = r.u32()?;
        let mut init = Vec::new();
        for _ in 0..n_init {
            let space = r.space()?;
            let offset = r.u32()?;
            init.push(InitSegment { space, offset, bytes: r.bytes()?.to_vec() });
        }
        let n = r.u32()? as usize;
        if n > MAX_INSTRUCTIONS {
            return Err(IsaError::Container("instruction count exceeds cap".into()));
        }
        let mut code = Vec::with_capacity(n);
        for _ in 0..n {
            let word = Word32(r.u32()?);
            code.push(EncodedInstruction { word, side: r.side()? });
        }
        if r.pos != bytes.len() {
            return Err(IsaError::Container("trailing bytes".into()));
        }
        let layout = MemoryLayout { global_size, shared_size, output, logits, kv_cache };
        Ok(Program::new(name, code, const_bank, layout, init, reg_budget))
    }
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.buf.extend_from_slice(b);
    }

    fn region(&mut self, r: &Region) {
        self.u8(r.space.code());
        self.u32(r.offset);
        self.u32(r.len);
    }

    fn opt_u8(&mut self, v: Option<u8>) {
        match v {
            Some(x) => {
                self.u8(1);
                self.u8(x);
            }
            None => self.u8(0),
        }
    }

    fn slot(&mut self, k: SlotKind) {
        let (tag, v) = match k {
            SlotKind::None => (0, 0),
            SlotKind::Reg => (1, 0),
            SlotKind::Pred => (2, 0),
            SlotKind::Imm(v) => (3, v),
            SlotKind::Const(o) => (4, o),
        };
        self.u8(tag);
        self.u32(v);
    }

    fn operand(&mut self, op: Operand) {
        let (tag, v) = match op {
            Operand::None => (0, 0),
            Operand::Reg(r) => (1, r as u32),
            Operand::Pred(p) => (2, p as u32),
            Operand::Imm(v) => (3, v),
            Operand::Const(o) => (4, o),
        };
        self.u8(tag);
        self.u32(v);
    }

    fn side(&mut self, s: &SideEntry) {
        self.u8(match s.dest {
            DestKind::None => 0,
            DestKind::Reg => 1,
            DestKind::Pred => 2,
        });
        self.slot(s.src0);
        self.slot(s.src1);
        self.operand(s.src2);
        self.opt_u8(s.cmp.map(CmpOp::code));
        self.opt_u8(s.lut);
        self.opt_u8(s.shift);
        self.u8(match s.mem_width {
            None => 0,
            Some(w) => w.bytes() as u8,
        });
        self.u32(s.mem_offset as u32);
        match s.branch_target {
            Some(t) => {
                self.u8(1);
                self.u32(t);
            }
            None => self.u8(0),
        }
        match s.guard {
            Some(g) => {
                self.u8(1);
                self.u8(g.pred);
                self.u8(g.negate as u8);
            }
            None => self.u8(0),
        }
        match s.snapshot {
            Some(r) => {
                self.u8(1);
                self.u8(r.space.code());
                self.u32(r.offset);
                self.u32(r.len);
            }
            None => self.u8(0),
        }
        self.u8(s.tag.kind.code());
        self.u8(s.tag.layer.unwrap_or(0xff));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| IsaError::Container(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn space(&mut self) -> Result<Space> {
        let c = self.u8()?;
        Space::from_code(c).ok_or_else(|| IsaError::Container(format!("bad space code {c}")))
    }

    fn region(&mut self) -> Result<Region> {
        Ok(Region { space: self.space()?, offset: self.u32()?, len: self.u32()? })
    }

    fn opt_u8(&mut self) -> Result<Option<u8>> {
        Ok(match self.u8()? {
            0 => None,
            _ => Some(self.u8()?),
        })
    }

    fn tagged(&mut self) -> Result<(u8, u32)> {
        Ok((self.u8()?, self.u32()?))
    }

    fn slot(&mut self) -> Result<SlotKind> {
        Ok(match self.tagged()? {
            (0, _) => SlotKind::None,
            (1, _) => SlotKind::Reg,
            (2, _) => SlotKind::Pred,
            (3, v) => SlotKind::Imm(v),
            (4, o) => SlotKind::Const(o),
            (t, _) => return Err(IsaError::Container(format!("bad slot kind {t}"))),
        })
    }

    fn operand(&mut self) -> Result<Operand> {
        Ok(match self.tagged()? {
            (0, _) => Operand::None,
            (1, r) => Operand::Reg(r as u8),
            (2, p) => Operand::Pred(p as u8),
            (3, v) => Operand::Imm(v),
            (4, o) => Operand::Const(o),
            (t, _) => return Err(IsaError::Container(format!("bad operand kind {t}"))),
        })
    }

    fn side(&mut self) -> Result<SideEntry> {
        let dest = match self.u8()? {
            0 => DestKind::None,
            1 => DestKind::Reg,
            2 => DestKind::Pred,
            t => return Err(IsaError::Container(format!("bad dest kind {t}"))),
        };
        let src0 = self.slot()?;
        let src1 = self.slot()?;
        let src2 = self.operand()?;
        let cmp = match self.opt_u8()? {
            None => None,
            Some(c) => Some(CmpOp::from_code(c).ok_or_else(|| IsaError::Container(format!("bad comparison {c}")))?),
        };
        let lut = self.opt_u8()?;
        let shift = self.opt_u8()?;
        let mem_width = match self.u8()? {
            0 => None,
            1 => Some(MemWidth::W8),
            2 => Some(MemWidth::W16),
            4 => Some(MemWidth::W32),
            w => return Err(IsaError::Container(format!("bad memory width {w}"))),
        };
        let mem_offset = self.u32()? as i32;
        let branch_target = match self.u8()? {
            0 => None,
            _ => Some(self.u32()?),
        };
        let guard = match self.u8()? {
            0 => None,
            _ => Some(Guard { pred: self.u8()?, negate: self.u8()? != 0 }),
        };
        let snapshot = match self.u8()? {
            0 => None,
            _ => Some(SnapshotRegion { space: self.space()?, offset: self.u32()?, len: self.u32()? }),
        };
        let kind = self.u8()?;
        let kind =
            OperatorKind::from_code(kind).ok_or_else(|| IsaError::Container(format!("bad operator kind {kind}")))?;
        let layer = match self.u8()? {
            0xff => None,
            l => Some(l),
        };
        Ok(SideEntry {
            dest,
            src0,
            src1,
            src2,
            cmp,
            lut,
            shift,
            mem_width,
            mem_offset,
            branch_target,
            guard,
            snapshot,
            tag: OperatorTag { kind, layer },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Program {
        let mut mov = Instruction::new(Opcode::Mov);
        mov.dest = Dest::Reg(0);
        mov.srcs[0] = Operand::Imm(7);
        let mut stg = Instruction::new(Opcode::Stg);
        stg.srcs = [Operand::Reg(RZ), Operand::Reg(0), Operand::None];
        stg.mem_width = Some(MemWidth::W32);
        stg.guard = Some(Guard { pred: PT, negate: false });
        let exit = Instruction::new(Opcode::Exit);
        let layout = MemoryLayout {
            global_size: 64,
            shared_size: 16,
            output: Region::global(0, 4),
            logits: Some(LogitsRegion { offset: 4, rows: 1, cols: 2 }),
            kv_cache: None,
        };
        Program::from_instructions(
            "tiny",
            &[mov, stg, exit],
            vec![1, 2, 3, 4],
            layout,
            vec![InitSegment { space: Space::Shared, offset: 8, bytes: vec![9; 8] }],
            4,
        )
    }

    #[test]
    fn container_round_trip() {
        let p = tiny();
        p.validate().unwrap();
        let bytes = p.to_bytes();
        assert_eq!(&bytes[..4], b"BFSM");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), VERSION);
        let q = Program::from_bytes(&bytes).unwrap();
        assert_eq!(p, q);
        assert_eq!(q.to_bytes(), bytes);
    }

    #[test]
    fn truncated_container_is_rejected() {
        let bytes = tiny().to_bytes();
        for cut in [0, 3, 6, bytes.len() - 1] {
            assert!(Program::from_bytes(&bytes[..cut]).is_err());
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Program::from_bytes(&bad).is_err());
    }

    #[test]
    fn validate_rejects_out_of_budget_register() {
        let mut p = tiny();
        p.reg_budget = 0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn disassembly_is_one_line_per_instruction() {
        let text = tiny().disassemble();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().next().unwrap().contains("MOV R0, 0x7"));
    }

    #[test]
    fn initial_memory_applies_segments() {
        let (g, s) = tiny().initial_memory();
        assert_eq!(g.len(), 64);
        assert_eq!(&s[8..16], &[9; 8]);
    }
}
