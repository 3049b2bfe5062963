//! Canonical 32-bit encoding.
//!
//! ```text
//!  31      24 23      16 15       8 7        0
//! +----------+----------+----------+----------+
//! |  opcode  |   dest   |   src0   |   src1   |
//! +----------+----------+----------+----------+
//! ```
//!
//! Only these four fields are exposed to encoding faults. Everything else
//! (operand kinds, immediates, constant offsets, the third source, guards,
//! comparison codes, memory widths and offsets, branch targets, snapshot
//! regions and provenance) lives in a [`SideEntry`] carried next to the word.
//! A field byte whose side-table kind is not a register or predicate is
//! encoded as zero and ignored on decode.

use crate::error::{IsaError, Result};
use crate::inst::{CmpOp, Dest, Guard, Instruction, MemWidth, Operand, OperatorTag, SnapshotRegion};
use crate::opcode::Opcode;
use crate::word::Word32;

/// How an encoded operand byte is interpreted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum SlotKind {
    #[default]
    None,
    Reg,
    Pred,
    Imm(u32),
    Const(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum DestKind {
    #[default]
    None,
    Reg,
    Pred,
}

/// Non-encodable part of an instruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SideEntry {
    pub dest: DestKind,
    pub src0: SlotKind,
    pub src1: SlotKind,
    pub src2: Operand,
    pub cmp: Option<CmpOp>,
    pub lut: Option<u8>,
    pub shift: Option<u8>,
    pub mem_width: Option<MemWidth>,
    pub mem_offset: i32,
    pub branch_target: Option<u32>,
    pub guard: Option<Guard>,
    pub snapshot: Option<SnapshotRegion>,
    pub tag: OperatorTag,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EncodedInstruction {
    pub word: Word32,
    pub side: SideEntry,
}

fn split_operand(op: Operand) -> (SlotKind, u8) {
    match op {
        Operand::None => (SlotKind::None, 0),
        Operand::Reg(r) => (SlotKind::Reg, r),
        Operand::Pred(p) => (SlotKind::Pred, p),
        Operand::Imm(v) => (SlotKind::Imm(v), 0),
        Operand::Const(o) => (SlotKind::Const(o), 0),
    }
}

fn join_operand(kind: SlotKind, byte: u8) -> Operand {
    match kind {
        SlotKind::None => Operand::None,
        SlotKind::Reg => Operand::Reg(byte),
        SlotKind::Pred => Operand::Pred(byte),
        SlotKind::Imm(v) => Operand::Imm(v),
        SlotKind::Const(o) => Operand::Const(o),
    }
}

pub fn encode(inst: &Instruction) -> EncodedInstruction {
    let (dest, dbyte) = match inst.dest {
        Dest::None => (DestKind::None, 0),
        Dest::Reg(r) => (DestKind::Reg, r),
        Dest::Pred(p) => (DestKind::Pred, p),
    };
    let (src0, b0) = split_operand(inst.srcs[0]);
    let (src1, b1) = split_operand(inst.srcs[1]);
    let word = (inst.opcode.ordinal() as u32) << 24 | (dbyte as u32) << 16 | (b0 as u32) << 8 | b1 as u32;
    EncodedInstruction {
        word: Word32(word),
        side: SideEntry {
            dest,
            src0,
            src1,
            src2: inst.srcs[2],
            cmp: inst.cmp,
            lut: inst.lut,
            shift: inst.shift,
            mem_width: inst.mem_width,
            mem_offset: inst.mem_offset,
            branch_target: inst.branch_target,
            guard: inst.guard,
            snapshot: inst.snapshot,
            tag: inst.tag,
        },
    }
}

/// Rebuilds an instruction from a (possibly corrupted) word and its side
/// entry. Register and predicate indices are taken verbatim; only the opcode
/// ordinal is validated here.
pub fn decode(word: Word32, side: &SideEntry) -> Result<Instruction> {
    let w = word.bits();
    let ord = (w >> 24) as u8;
    let opcode = Opcode::from_ordinal(ord).ok_or(IsaError::IllegalOpcode(ord))?;
    let dbyte = (w >> 16) as u8;
    let dest = match side.dest {
        DestKind::None => Dest::None,
        DestKind::Reg => Dest::Reg(dbyte),
        DestKind::Pred => Dest::Pred(dbyte),
    };
    Ok(Instruction {
        opcode,
        dest,
        srcs: [join_operand(side.src0, (w >> 8) as u8), join_operand(side.src1, w as u8), side.src2],
        cmp: side.cmp,
        lut: side.lut,
        shift: side.shift,
        mem_width: side.mem_width,
        mem_offset: side.mem_offset,
        branch_target: side.branch_target,
        guard: side.guard,
        snapshot: side.snapshot,
        tag: side.tag,
    })
}

impl EncodedInstruction {
    pub fn decode(&self) -> Result<Instruction> {
        decode(self.word, &self.side)
    }
}
