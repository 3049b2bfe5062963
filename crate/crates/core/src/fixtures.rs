//! Small hand-written programs with exactly enumerable site spaces.

use bitstorm_isa::{
    CmpOp, Dest, Guard, InitSegment, Instruction, MemWidth, MemoryLayout, Opcode, Operand, OperatorKind, OperatorTag,
    Program, Region, SnapshotRegion, Space, RZ,
};

const A: u32 = 0x000;
const B: u32 = 0x100;
const OUT: u32 = 0x200;
const GLOBAL: u32 = 0x400;

const A_VALUES: [f32; 8] = [1.0, -0.5, 0.75, 2.0, -1.25, 0.5, 1.5, -0.25];
const B_VALUES: [f32; 8] = [0.5, 1.25, -1.0, 0.25, 0.75, -1.5, 1.0, 2.0];

const COMPUTE: OperatorTag = OperatorTag { kind: OperatorKind::Mlp, layer: Some(0) };
const RESULT: OperatorTag = OperatorTag { kind: OperatorKind::LmHead, layer: None };

fn inst(op: Opcode, dest: Dest, srcs: [Operand; 3], tag: OperatorTag) -> Instruction {
    let mut i = Instruction::new(op);
    i.dest = dest;
    i.srcs = srcs;
    i.tag = tag;
    i
}

fn r(x: u8) -> Operand {
    Operand::Reg(x)
}

fn imm(v: u32) -> Operand {
    Operand::Imm(v)
}

const NONE: Operand = Operand::None;

fn load(op: Opcode, d: u8, base: Operand, offset: i32, tag: OperatorTag) -> Instruction {
    let mut i = inst(op, Dest::Reg(d), [base, NONE, NONE], tag);
    i.mem_width = Some(MemWidth::W32);
    i.mem_offset = offset;
    i
}

fn store(base: Operand, offset: i32, v: u8, tag: OperatorTag) -> Instruction {
    let mut i = inst(Opcode::Stg, Dest::None, [base, r(v), NONE], tag);
    i.mem_width = Some(MemWidth::W32);
    i.mem_offset = offset;
    i
}

fn lea(d: u8, index: u8, base: u32, tag: OperatorTag) -> Instruction {
    let mut i = inst(Opcode::Lea, Dest::Reg(d), [r(index), imm(base), NONE], tag);
    i.shift = Some(2);
    i
}

fn loop_tail(counter: u8, bound: Operand, target: u32) -> [Instruction; 3] {
    let inc = inst(Opcode::Iadd3, Dest::Reg(counter), [r(counter), imm(1), r(RZ)], OperatorTag::OTHER);
    let mut cmp = inst(Opcode::Isetp, Dest::Pred(0), [r(counter), bound, NONE], OperatorTag::OTHER);
    cmp.cmp = Some(CmpOp::Lt);
    let mut bra = Instruction::new(Opcode::Bra);
    bra.branch_target = Some(target);
    bra.guard = Some(Guard { pred: 0, negate: false });
    [inc, cmp, bra]
}

fn snapshot(offset: u32, len: u32, tag: OperatorTag) -> Instruction {
    let mut i = Instruction::new(Opcode::Snapshot);
    i.snapshot = Some(SnapshotRegion { space: Space::Global, offset, len });
    i.tag = tag;
    i
}

fn inputs(n: usize) -> Vec<InitSegment> {
    let bytes = |v: &[f32]| v.iter().flat_map(|x| x.to_le_bytes()).collect();
    vec![
        InitSegment { space: Space::Global, offset: A, bytes: bytes(&A_VALUES[..n]) },
        InitSegment { space: Space::Global, offset: B, bytes: bytes(&B_VALUES[..n]) },
    ]
}

fn layout(out_len: u32) -> MemoryLayout {
    MemoryLayout {
        global_size: GLOBAL,
        shared_size: 0,
        output: Region::global(OUT, out_len),
        logits: None,
        kv_cache: None,
    }
}

/// `sum(a[i] * b[i])` over `n` elements (1..=8) in a counted loop, stored
/// to the output word. The element count comes from the constant bank.
pub fn dot_product(n: usize) -> Program {
    assert!((1..=8).contains(&n), "dot product fixture takes 1..=8 elements");
    let mut code = vec![
        load(Opcode::Ldc, 0, r(RZ), 0, OperatorTag::OTHER),
        inst(Opcode::Mov, Dest::Reg(1), [imm(0), NONE, NONE], OperatorTag::OTHER),
        inst(Opcode::Mov, Dest::Reg(2), [imm(0), NONE, NONE], COMPUTE),
        lea(3, 1, A, COMPUTE),
        load(Opcode::Ldg, 4, r(3), 0, COMPUTE),
        lea(5, 1, B, COMPUTE),
        load(Opcode::Ldg, 6, r(5), 0, COMPUTE),
        inst(Opcode::Fmul, Dest::Reg(7), [r(4), r(6), NONE], COMPUTE),
        inst(Opcode::Fadd, Dest::Reg(2), [r(2), r(7), NONE], COMPUTE),
    ];
    code.extend(loop_tail(1, r(0), 3));
    code.push(store(r(RZ), OUT as i32, 2, RESULT));
    code.push(snapshot(OUT, 4, RESULT));
    code.push(Instruction::new(Opcode::Exit));
    let consts = (n as u32).to_le_bytes().to_vec();
    Program::from_instructions(format!("dot{n}"), &code, consts, layout(4), inputs(n), 16)
}

/// `out[i] = |a[i] * b[i]|` for `n` elements (1..=8); the absolute value is a
/// LOP3 that clears the sign bit of the product.
pub fn abs_product(n: usize) -> Program {
    assert!((1..=8).contains(&n), "abs fixture takes 1..=8 elements");
    let mut and = inst(Opcode::Lop3, Dest::Reg(8), [r(7), imm(0x7fff_ffff), r(RZ)], COMPUTE);
    // bit (a << 2 | b << 1 | c) of the table: set where a and b are both 1
    and.lut = Some(0xc0);
    let mut code = vec![
        inst(Opcode::Mov, Dest::Reg(1), [imm(0), NONE, NONE], OperatorTag::OTHER),
        lea(3, 1, A, COMPUTE),
        load(Opcode::Ldg, 4, r(3), 0, COMPUTE),
        lea(5, 1, B, COMPUTE),
        load(Opcode::Ldg, 6, r(5), 0, COMPUTE),
        inst(Opcode::Fmul, Dest::Reg(7), [r(4), r(6), NONE], COMPUTE),
        and,
        lea(9, 1, OUT, RESULT),
        store(r(9), 0, 8, RESULT),
    ];
    code.extend(loop_tail(1, imm(n as u32), 1));
    code.push(snapshot(OUT, 4 * n as u32, RESULT));
    code.push(Instruction::new(Opcode::Exit));
    Program::from_instructions(format!("abs{n}"), &code, vec![0; 4], layout(4 * n as u32), inputs(n), 16)
}

/// Reference value of the dot product fixture, accumulated in the same order.
pub fn dot_product_value(n: usize) -> f32 {
    let mut acc = 0.0f32;
    for i in 0..n {
        acc += A_VALUES[i] * B_VALUES[i];
    }
    acc
}
