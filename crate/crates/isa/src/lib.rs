//! A miniature GPU-like scalar instruction set.
//!
//! The ISA mirrors the shape of SASS closely enough that bit flips in
//! destination registers or in the encoded instruction word reproduce the
//! failure modes seen on real hardware: out-of-range addresses, misaligned
//! accesses, out-of-range registers and illegal instructions.
//!
//! Everything here is deterministic. Floating point goes through [`fp`],
//! which pins rounding and NaN payloads so runs are bitwise reproducible on
//! every host.

pub mod encode;
pub mod error;
pub mod fp;
pub mod inst;
pub mod machine;
pub mod opcode;
pub mod program;
pub mod word;

pub use encode::{decode, encode, DestKind, EncodedInstruction, SideEntry, SlotKind};
pub use error::{IsaError, Result};
pub use inst::{
    CmpOp, Dest, Guard, Instruction, MemWidth, Operand, OperatorKind, OperatorTag, SnapshotRegion, Space, PT, RZ,
};
pub use machine::{
    run, DestWrite, Effect, Hook, Machine, MachineState, MemAccess, NoHook, RunConfig, RunResult, SnapshotRecord,
    StepOutcome, Trap, TrapCause,
};
pub use opcode::{Group, Opcode};
pub use program::{InitSegment, LogitsRegion, MemoryLayout, Program, Region};
pub use word::{flip_bit, Word32};

/// 64-bit FNV-1a over a byte slice. Used for snapshot and artifact digests.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
