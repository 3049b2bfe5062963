//! Opcode table.
//!
//! Ordinals are dense in `0..32` and fixed; they are part of the encoding and
//! of every persisted program, so never reorder them.
//!
//! | ordinal | mnemonic  | group  | ordinal | mnemonic  | group  |
//! |---------|-----------|--------|---------|-----------|--------|
//! | 0       | FADD      | FP32   | 16      | IADD3     | INT    |
//! | 1       | FMUL      | FP32   | 17      | LOP3      | INT    |
//! | 2       | FFMA      | FP32   | 18      | SHF       | INT    |
//! | 3       | FSETP     | FP32   | 19      | LEA       | INT    |
//! | 4       | MUFU_RCP  | FP32   | 20      | ISETP     | INT    |
//! | 5       | MUFU_EX2  | FP32   | 21      | MOV       | MOVSEL |
//! | 6       | MUFU_LG2  | FP32   | 22      | SEL       | MOVSEL |
//! | 7       | MUFU_RSQ  | FP32   | 23      | LDG       | MEM    |
//! | 8       | HADD2     | FP16   | 24      | STG       | MEM    |
//! | 9       | HMUL2     | FP16   | 25      | LDS       | MEM    |
//! | 10      | HFMA2     | FP16   | 26      | STS       | MEM    |
//! | 11      | HMMA_STEP | FP16   | 27      | LDC       | MEM    |
//! | 12      | F2H2      | FP16   | 28      | BRA       | CTRL   |
//! | 13      | H2F_LO    | FP16   | 29      | EXIT      | CTRL   |
//! | 14      | H2F_HI    | FP16   | 30      | NOP       | CTRL   |
//! | 15      | IMAD      | INT    | 31      | SNAPSHOT  | CTRL   |

use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Opcode {
    Fadd = 0,
    Fmul,
    Ffma,
    Fsetp,
    MufuRcp,
    MufuEx2,
    MufuLg2,
    MufuRsq,
    Hadd2,
    Hmul2,
    Hfma2,
    HmmaStep,
    F2h2,
    H2fLo,
    H2fHi,
    Imad,
    Iadd3,
    Lop3,
    Shf,
    Lea,
    Isetp,
    Mov,
    Sel,
    Ldg,
    Stg,
    Lds,
    Sts,
    Ldc,
    Bra,
    Exit,
    Nop,
    Snapshot,
}

/// Instruction groups used for group-wise imputation and distribution tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    Fp32,
    Fp16,
    Int,
    MovSel,
    Mem,
    Ctrl,
}

impl Group {
    pub const ALL: [Group; 6] = [Group::Fp32, Group::Fp16, Group::Int, Group::MovSel, Group::Mem, Group::Ctrl];

    pub fn name(self) -> &'static str {
        match self {
            Group::Fp32 => "FP32",
            Group::Fp16 => "FP16",
            Group::Int => "INT",
            Group::MovSel => "MOVSEL",
            Group::Mem => "MEM",
            Group::Ctrl => "CTRL",
        }
    }

    /// Arithmetic groups, the "computation instructions" of a distribution.
    pub fn is_compute(self) -> bool {
        matches!(self, Group::Fp32 | Group::Fp16 | Group::Int)
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

const ALL: [Opcode; 32] = [
    Opcode::Fadd,
    Opcode::Fmul,
    Opcode::Ffma,
    Opcode::Fsetp,
    Opcode::MufuRcp,
    Opcode::MufuEx2,
    Opcode::MufuLg2,
    Opcode::MufuRsq,
    Opcode::Hadd2,
    Opcode::Hmul2,
    Opcode::Hfma2,
    Opcode::HmmaStep,
    Opcode::F2h2,
    Opcode::H2fLo,
    Opcode::H2fHi,
    Opcode::Imad,
    Opcode::Iadd3,
    Opcode::Lop3,
    Opcode::Shf,
    Opcode::Lea,
    Opcode::Isetp,
    Opcode::Mov,
    Opcode::Sel,
    Opcode::Ldg,
    Opcode::Stg,
    Opcode::Lds,
    Opcode::Sts,
    Opcode::Ldc,
    Opcode::Bra,
    Opcode::Exit,
    Opcode::Nop,
    Opcode::Snapshot,
];

impl Opcode {
    pub const COUNT: usize = 32;

    pub fn all() -> &'static [Opcode; 32] {
        &ALL
    }

    pub fn ordinal(self) -> u8 {
        self as u8
    }

    pub fn from_ordinal(ord: u8) -> Option<Opcode> {
        ALL.get(ord as usize).copied()
    }

    pub fn group(self) -> Group {
        use Opcode::*;
        match self {
            Fadd | Fmul | Ffma | Fsetp | MufuRcp | MufuEx2 | MufuLg2 | MufuRsq => Group::Fp32,
            Hadd2 | Hmul2 | Hfma2 | HmmaStep | F2h2 | H2fLo | H2fHi => Group::Fp16,
            Imad | Iadd3 | Lop3 | Shf | Lea | Isetp => Group::Int,
            Mov | Sel => Group::MovSel,
            Ldg | Stg | Lds | Sts | Ldc => Group::Mem,
            Bra | Exit | Nop | Snapshot => Group::Ctrl,
        }
    }

    pub fn mnemonic(self) -> &'static str {
        use Opcode::*;
        match self {
            Fadd => "FADD",
            Fmul => "FMUL",
            Ffma => "FFMA",
            Fsetp => "FSETP",
            MufuRcp => "MUFU_RCP",
            MufuEx2 => "MUFU_EX2",
            MufuLg2 => "MUFU_LG2",
            MufuRsq => "MUFU_RSQ",
            Hadd2 => "HADD2",
            Hmul2 => "HMUL2",
            Hfma2 => "HFMA2",
            HmmaStep => "HMMA_STEP",
            F2h2 => "F2H2",
            H2fLo => "H2F_LO",
            H2fHi => "H2F_HI",
            Imad => "IMAD",
            Iadd3 => "IADD3",
            Lop3 => "LOP3",
            Shf => "SHF",
            Lea => "LEA",
            Isetp => "ISETP",
            Mov => "MOV",
            Sel => "SEL",
            Ldg => "LDG",
            Stg => "STG",
            Lds => "LDS",
            Sts => "STS",
            Ldc => "LDC",
            Bra => "BRA",
            Exit => "EXIT",
            Nop => "NOP",
            Snapshot => "SNAPSHOT",
        }
    }

    /// Whether a well-formed instance writes a register or predicate.
    pub fn writes_dest(self) -> bool {
        !matches!(self, Opcode::Stg | Opcode::Sts | Opcode::Bra | Opcode::Exit | Opcode::Nop | Opcode::Snapshot)
    }

    pub fn writes_predicate(self) -> bool {
        matches!(self, Opcode::Fsetp | Opcode::Isetp)
    }

    pub fn is_load(self) -> bool {
        matches!(self, Opcode::Ldg | Opcode::Lds | Opcode::Ldc)
    }

    pub fn is_store(self) -> bool {
        matches!(self, Opcode::Stg | Opcode::Sts)
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

impl FromStr for Opcode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let up = s.trim().to_ascii_uppercase().replace('.', "_");
        ALL.iter().copied().find(|op| op.mnemonic() == up).ok_or_else(|| format!("unknown opcode `{s}`"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn ordinals_are_dense_and_unique() {
        let mut seen = HashSet::new();
        for (i, op) in Opcode::all().iter().enumerate() {
            assert_eq!(op.ordinal() as usize, i);
            assert!(seen.insert(op.ordinal()));
            assert_eq!(Opcode::from_ordinal(i as u8), Some(*op));
        }
        assert_eq!(Opcode::from_ordinal(32), None);
        assert_eq!(Opcode::from_ordinal(0xff), None);
    }

    #[test]
    fn group_membership() {
        let names =
            |g: Group| -> Vec<&str> { Opcode::all().iter().filter(|o| o.group() == g).map(|o| o.mnemonic()).collect() };
        assert_eq!(
            names(Group::Fp32),
            ["FADD", "FMUL", "FFMA", "FSETP", "MUFU_RCP", "MUFU_EX2", "MUFU_LG2", "MUFU_RSQ"]
        );
        assert_eq!(names(Group::Fp16), ["HADD2", "HMUL2", "HFMA2", "HMMA_STEP", "F2H2", "H2F_LO", "H2F_HI"]);
        assert_eq!(names(Group::Int), ["IMAD", "IADD3", "LOP3", "SHF", "LEA", "ISETP"]);
        assert_eq!(names(Group::MovSel), ["MOV", "SEL"]);
        assert_eq!(names(Group::Mem), ["LDG", "STG", "LDS", "STS", "LDC"]);
        assert_eq!(names(Group::Ctrl), ["BRA", "EXIT", "NOP", "SNAPSHOT"]);
    }

    #[test]
    fn parse_mnemonics() {
        assert_eq!("mufu.rcp".parse::<Opcode>(), Ok(Opcode::MufuRcp));
        assert_eq!("HMMA_STEP".parse::<Opcode>(), Ok(Opcode::HmmaStep));
        assert!("FOO".parse::<Opcode>().is_err());
    }
}
