//! Decoded instruction form.

use std::fmt;

use crate::opcode::Opcode;

/// Zero register: reads as 0, writes are discarded.
pub const RZ: u8 = 255;
/// Always-true predicate: reads as true, writes are discarded.
pub const PT: u8 = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Space {
    Global,
    Shared,
    Const,
}

impl Space {
    pub fn name(self) -> &'static str {
        match self {
            Space::Global => "GLOBAL",
            Space::Shared => "SHARED",
            Space::Const => "CONST",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Space::Global => 0,
            Space::Shared => 1,
            Space::Const => 2,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Space> {
        match c {
            0 => Some(Space::Global),
            1 => Some(Space::Shared),
            2 => Some(Space::Const),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MemWidth {
    W8,
    W16,
    W32,
}

impl MemWidth {
    pub fn bytes(self) -> u32 {
        match self {
            MemWidth::W8 => 1,
            MemWidth::W16 => 2,
            MemWidth::W32 => 4,
        }
    }

    pub fn bits(self) -> u32 {
        self.bytes() * 8
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ne,
    Ge,
    Gt,
}

impl CmpOp {
    pub fn name(self) -> &'static str {
        match self {
            CmpOp::Lt => "LT",
            CmpOp::Le => "LE",
            CmpOp::Eq => "EQ",
            CmpOp::Ne => "NE",
            CmpOp::Ge => "GE",
            CmpOp::Gt => "GT",
        }
    }

    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(c: u8) -> Option<CmpOp> {
        [CmpOp::Lt, CmpOp::Le, CmpOp::Eq, CmpOp::Ne, CmpOp::Ge, CmpOp::Gt].get(c as usize).copied()
    }

    pub fn eval_i32(self, a: i32, b: i32) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Ge => a >= b,
            CmpOp::Gt => a > b,
        }
    }

    /// Ordered comparisons: false on NaN, except NE which is true.
    pub fn eval_f32(self, a: f32, b: f32) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Ge => a >= b,
            CmpOp::Gt => a > b,
        }
    }
}

/// Source operand.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Operand {
    #[default]
    None,
    Reg(u8),
    Pred(u8),
    Imm(u32),
    /// Byte offset into the constant bank, read as a 32-bit word.
    Const(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Dest {
    #[default]
    None,
    Reg(u8),
    Pred(u8),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Guard {
    pub pred: u8,
    pub negate: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OperatorKind {
    Embedding,
    Attention,
    Mlp,
    Norm,
    LmHead,
    Other,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 6] = [
        OperatorKind::Embedding,
        OperatorKind::Attention,
        OperatorKind::Mlp,
        OperatorKind::Norm,
        OperatorKind::LmHead,
        OperatorKind::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::Embedding => "EMBEDDING",
            OperatorKind::Attention => "ATTENTION",
            OperatorKind::Mlp => "MLP",
            OperatorKind::Norm => "NORM",
            OperatorKind::LmHead => "LM_HEAD",
            OperatorKind::Other => "OTHER",
        }
    }

    pub fn from_name(s: &str) -> Option<OperatorKind> {
        let up = s.trim().to_ascii_uppercase();
        Self::ALL.iter().copied().find(|k| k.name() == up)
    }

    pub(crate) fn code(self) -> u8 {
        self as u8
    }

    pub(crate) fn from_code(c: u8) -> Option<OperatorKind> {
        Self::ALL.get(c as usize).copied()
    }
}

/// Provenance of an instruction: the model operator it belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OperatorTag {
    pub kind: OperatorKind,
    pub layer: Option<u8>,
}

impl OperatorTag {
    pub const OTHER: OperatorTag = OperatorTag { kind: OperatorKind::Other, layer: None };

    pub fn new(kind: OperatorKind, layer: Option<u8>) -> Self {
        OperatorTag { kind, layer }
    }
}

impl Default for OperatorTag {
    fn default() -> Self {
        OperatorTag::OTHER
    }
}

impl fmt::Display for OperatorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.layer {
            Some(l) => write!(f, "{}.{}", self.kind.name(), l),
            None => f.write_str(self.kind.name()),
        }
    }
}

/// Memory region captured by a SNAPSHOT instruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SnapshotRegion {
    pub space: Space,
    pub offset: u32,
    pub len: u32,
}

/// One decoded instruction.
///
/// Fields an opcode does not use stay at their defaults. Fields an opcode
/// needs but finds missing (for example a comparison code on an ISETP that
/// was produced by a corrupted opcode field) raise an illegal-operand trap at
/// execution time, not at decode time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub opcode: Opcode,
    pub dest: Dest,
    pub srcs: [Operand; 3],
    pub cmp: Option<CmpOp>,
    pub lut: Option<u8>,
    pub shift: Option<u8>,
    pub mem_width: Option<MemWidth>,
    /// Signed byte offset added to the base operand of a memory access.
    pub mem_offset: i32,
    pub branch_target: Option<u32>,
    pub guard: Option<Guard>,
    pub snapshot: Option<SnapshotRegion>,
    pub tag: OperatorTag,
}

impl Instruction {
    pub fn new(opcode: Opcode) -> Self {
        Instruction {
            opcode,
            dest: Dest::None,
            srcs: [Operand::None; 3],
            cmp: None,
            lut: None,
            shift: None,
            mem_width: None,
            mem_offset: 0,
            branch_target: None,
            guard: None,
            snapshot: None,
            tag: OperatorTag::OTHER,
        }
    }

    /// Memory space implied by the opcode, for memory instructions.
    pub fn mem_space(&self) -> Option<Space> {
        match self.opcode {
            Opcode::Ldg | Opcode::Stg => Some(Space::Global),
            Opcode::Lds | Opcode::Sts => Some(Space::Shared),
            Opcode::Ldc => Some(Space::Const),
            _ => None,
        }
    }

    /// Registers read by this instruction (excluding RZ).
    pub fn reg_reads(&self) -> impl Iterator<Item = u8> + '_ {
        self.srcs.iter().filter_map(|s| match s {
            Operand::Reg(r) if *r != RZ => Some(*r),
            _ => None,
        })
    }

    /// Predicates read by this instruction, including the guard.
    pub fn pred_reads(&self) -> impl Iterator<Item = u8> + '_ {
        self.srcs
            .iter()
            .filter_map(|s| match s {
                Operand::Pred(p) if *p != PT => Some(*p),
                _ => None,
            })
            .chain(self.guard.and_then(|g| (g.pred != PT).then_some(g.pred)))
    }
}

fn fmt_operand(f: &mut fmt::Formatter<'_>, op: &Operand) -> fmt::Result {
    match *op {
        Operand::None => f.write_str("_"),
        Operand::Reg(RZ) => f.write_str("RZ"),
        Operand::Reg(r) => write!(f, "R{r}"),
        Operand::Pred(PT) => f.write_str("PT"),
        Operand::Pred(p) => write!(f, "P{p}"),
        Operand::Imm(v) => write!(f, "{v:#x}"),
        Operand::Const(o) => write!(f, "c[{o:#x}]"),
    }
}

/// SASS-like disassembly, one line per instruction.
impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(g) = self.guard {
            let neg = if g.negate { "!" } else { "" };
            if g.pred == PT {
                write!(f, "@{neg}PT ")?;
            } else {
                write!(f, "@{neg}P{} ", g.pred)?;
            }
        }
        f.write_str(self.opcode.mnemonic())?;
        if let Some(c) = self.cmp {
            write!(f, ".{}", c.name())?;
        }
        if let Some(w) = self.mem_width {
            write!(f, ".{}", w.bits())?;
        }
        if let Some(l) = self.lut {
            write!(f, ".LUT{l:#04x}")?;
        }
        if let Some(s) = self.shift {
            write!(f, ".S{s}")?;
        }
        let mut parts = 0;
        let mut sep = |f: &mut fmt::Formatter<'_>| -> fmt::Result {
            let s = if parts == 0 { " " } else { ", " };
            parts += 1;
            f.write_str(s)
        };
        match self.dest {
            Dest::None => {}
            Dest::Reg(RZ) => {
                sep(f)?;
                f.write_str("RZ")?;
            }
            Dest::Reg(r) => {
                sep(f)?;
                write!(f, "R{r}")?;
            }
            Dest::Pred(PT) => {
                sep(f)?;
                f.write_str("PT")?;
            }
            Dest::Pred(p) => {
                sep(f)?;
                write!(f, "P{p}")?;
            }
        }
        if let Some(space) = self.mem_space() {
            sep(f)?;
            f.write_str("[")?;
            fmt_operand(f, &self.srcs[0])?;
            if self.mem_offset != 0 {
                if self.mem_offset < 0 {
                    write!(f, "-{:#x}", self.mem_offset.unsigned_abs())?;
                } else {
                    write!(f, "+{:#x}", self.mem_offset)?;
                }
            }
            f.write_str("]")?;
            let _ = space;
            if self.opcode.is_store() {
                sep(f)?;
                fmt_operand(f, &self.srcs[1])?;
            }
        } else {
            for s in self.srcs.iter().filter(|s| **s != Operand::None) {
                sep(f)?;
                fmt_operand(f, s)?;
            }
        }
        if let Some(t) = self.branch_target {
            sep(f)?;
            write!(f, "{t:#x}")?;
        }
        if let Some(r) = self.snapshot {
            sep(f)?;
            write!(f, "{}[{:#x}..+{:#x}]", r.space.name(), r.offset, r.len)?;
        }
        write!(f, " ; {}", self.tag)
    }
}
