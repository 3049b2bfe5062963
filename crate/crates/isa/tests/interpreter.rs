use bitstorm_isa::machine::lop3;
use bitstorm_isa::*;

fn layout(global: u32) -> MemoryLayout {
    MemoryLayout { global_size: global, shared_size: 256, output: Region::global(0, 4), logits: None, kv_cache: None }
}

fn prog(insts: &[Instruction]) -> Program {
    let p = Program::from_instructions("t", insts, vec![0; 16], layout(4096), vec![], 32);
    p.validate().unwrap();
    p
}

fn mov(d: u8, v: u32) -> Instruction {
    let mut i = Instruction::new(Opcode::Mov);
    i.dest = Dest::Reg(d);
    i.srcs[0] = Operand::Imm(v);
    i
}

fn op2(op: Opcode, d: u8, a: Operand, b: Operand) -> Instruction {
    let mut i = Instruction::new(op);
    i.dest = Dest::Reg(d);
    i.srcs[0] = a;
    i.srcs[1] = b;
    if matches!(op, Opcode::Iadd3 | Opcode::Imad) {
        i.srcs[2] = Operand::Reg(RZ);
    }
    i
}

fn mem(op: Opcode, base: u8, off: i32, val: u8) -> Instruction {
    let mut i = Instruction::new(op);
    i.mem_width = Some(MemWidth::W32);
    i.mem_offset = off;
    i.srcs[0] = Operand::Reg(base);
    if op.is_store() {
        i.srcs[1] = Operand::Reg(val);
    } else {
        i.dest = Dest::Reg(val);
    }
    i
}

fn exit() -> Instruction {
    Instruction::new(Opcode::Exit)
}

fn run_plain(p: &Program) -> RunResult {
    run(p, RunConfig::default(), &mut NoHook)
}

#[test]
fn reciprocal_of_five() {
    let p = prog(&[mov(24, 5.0f32.to_bits()), op2(Opcode::MufuRcp, 13, Operand::Reg(24), Operand::None), exit()]);
    let r = run_plain(&p);
    assert_eq!(r.state.regs[13], 0x3e4c_cccd);
    assert_eq!(f32::from_bits(r.state.regs[13]), 0.2);
}

#[test]
fn misaligned_load_traps_e4() {
    let p = prog(&[mov(1, 2), mem(Opcode::Ldg, 1, 0, 2), exit()]);
    let r = run_plain(&p);
    let t = r.trap().unwrap();
    assert_eq!(t.cause, TrapCause::Misaligned);
    assert_eq!(t.pc, 1);
    assert_eq!(t.detail, 2);
}

#[test]
fn store_past_segment_traps_e1() {
    let p = prog(&[mov(1, 5000), mem(Opcode::Stg, 1, 0, 2), exit()]);
    let t = run_plain(&p).trap().unwrap();
    assert_eq!(t.cause, TrapCause::AddrOob);
    assert_eq!(t.detail, 5000);
}

#[test]
fn negative_effective_address_traps_e1() {
    let p = prog(&[mov(1, 4), mem(Opcode::Ldg, 1, -8, 2), exit()]);
    assert_eq!(run_plain(&p).trap().unwrap().cause, TrapCause::AddrOob);
}

#[test]
fn out_of_bounds_wins_over_misalignment() {
    let p = prog(&[mov(1, 4094), mem(Opcode::Ldg, 1, 0, 2), exit()]);
    assert_eq!(run_plain(&p).trap().unwrap().cause, TrapCause::AddrOob);
}

#[test]
fn straight_line_count() {
    let p = prog(&[
        mov(0, 1),
        mov(1, 2),
        op2(Opcode::Iadd3, 2, Operand::Reg(0), Operand::Reg(1)),
        op2(Opcode::Imad, 3, Operand::Reg(2), Operand::Reg(2)),
        mem(Opcode::Stg, RZ, 0, 3),
        Instruction::new(Opcode::Nop),
        exit(),
    ]);
    let r = run_plain(&p);
    assert_eq!(r.dyn_count(), 7);
    assert!(r.trap().is_none());
    assert!(r.state.exited);
    assert_eq!(&r.state.global[..4], &[9, 0, 0, 0]);
    assert_eq!(r.histogram.iter().sum::<u64>(), 7);
}

#[test]
fn infinite_loop_hits_budget() {
    let mut bra = Instruction::new(Opcode::Bra);
    bra.branch_target = Some(0);
    let mut isetp = Instruction::new(Opcode::Isetp);
    isetp.dest = Dest::Pred(0);
    isetp.cmp = Some(CmpOp::Eq);
    isetp.srcs = [Operand::Reg(0), Operand::Reg(RZ), Operand::None];
    bra.guard = Some(Guard { pred: 0, negate: false });
    let p = prog(&[isetp, bra, exit()]);
    let cfg = RunConfig { max_dyn: 1000, ..RunConfig::default() };
    let r = run(&p, cfg, &mut NoHook);
    let t = r.trap().unwrap();
    assert_eq!(t.cause, TrapCause::Hang);
    assert_eq!(r.dyn_count(), 1000);
}

#[test]
fn guard_skipped_counts_and_snapshot_does_not() {
    let mut m = mov(0, 5);
    m.guard = Some(Guard { pred: PT, negate: true });
    let mut snap = Instruction::new(Opcode::Snapshot);
    snap.snapshot = Some(SnapshotRegion { space: Space::Global, offset: 0, len: 8 });
    let p = prog(&[m, snap, exit()]);
    let mut machine = Machine::new(&p, RunConfig { record_trace: true, ..RunConfig::default() });
    machine.run(&mut NoHook);
    let r = machine.finish();
    assert_eq!(r.dyn_count(), 2);
    assert_eq!(r.state.regs[0], 0);
    assert_eq!(r.snapshots.len(), 1);
    assert_eq!(r.snapshots[0].dyn_count, 1);
    assert_eq!(r.snapshots[0].digest, fnv1a64(&[0; 8]));
    assert_eq!(r.trace.unwrap(), vec![TRACE_SKIPPED, 2]);
}

use bitstorm_isa::machine::TRACE_SKIPPED;

#[test]
fn rz_writes_are_discarded() {
    let p = prog(&[mov(RZ, 77), op2(Opcode::Iadd3, 0, Operand::Reg(RZ), Operand::Imm(1)), exit()]);
    let r = run_plain(&p);
    assert_eq!(r.state.regs[RZ as usize], 0);
    assert_eq!(r.state.regs[0], 1);
}

struct FlipAfter {
    at: u64,
    bit: u8,
}

impl Hook for FlipAfter {
    fn after(&mut self, e: &Effect<'_>) -> Option<u32> {
        (e.dyn_index == self.at).then(|| e.write.unwrap().value ^ 1 << self.bit)
    }
}

#[test]
fn value_hook_rewrites_destination() {
    let p = prog(&[mov(0, 0x3e4c_cccd), mov(RZ, 3), exit()]);
    let r = run(&p, RunConfig::default(), &mut FlipAfter { at: 0, bit: 30 });
    assert_eq!(r.state.regs[0], 0x7e4c_cccd);
    let golden = run_plain(&p);
    let r = run(&p, RunConfig::default(), &mut FlipAfter { at: 1, bit: 5 });
    assert_eq!(r.state, golden.state);
}

struct FlipWord {
    at: u64,
    bit: u8,
}

impl Hook for FlipWord {
    fn before(&mut self, d: u64, _pc: u32, w: Word32) -> Option<Word32> {
        (d == self.at).then(|| w.flip(self.bit))
    }
}

#[test]
fn encoding_flip_in_dest_field_traps_e3() {
    let p = prog(&[mov(3, 1), exit()]);
    // dest byte is bits 16..23; bit 23 turns R3 into R131, outside the budget of 32
    let r = run(&p, RunConfig::default(), &mut FlipWord { at: 0, bit: 23 });
    let t = r.trap().unwrap();
    assert_eq!(t.cause, TrapCause::RegOob);
    assert_eq!(t.detail, 131);
    assert_eq!(r.dyn_count(), 0);
}

#[test]
fn encoding_flip_in_opcode_field_traps_e5() {
    let p = prog(&[mov(3, 1), exit()]);
    let r = run(&p, RunConfig::default(), &mut FlipWord { at: 0, bit: 31 });
    assert_eq!(r.trap().unwrap().cause, TrapCause::IllegalOperand);
    // MOV (21) with bit 26 flipped is 0x1d.. = 29? no: 21 ^ 4 = 17 = LOP3, which lacks a table
    let r = run(&p, RunConfig::default(), &mut FlipWord { at: 0, bit: 26 });
    assert_eq!(r.trap().unwrap().cause, TrapCause::IllegalOperand);
}

#[test]
fn trap_leaves_state_untouched() {
    let p = prog(&[mov(1, 5000), mov(2, 9), mem(Opcode::Stg, 1, 0, 2), exit()]);
    let mut m = Machine::new(&p, RunConfig::default());
    m.step(&mut NoHook);
    m.step(&mut NoHook);
    let before = m.state.clone();
    let out = m.step(&mut NoHook);
    assert!(matches!(out, StepOutcome::Trapped(_)));
    let mut after = m.state.clone();
    after.trap = None;
    assert_eq!(after, before);
    assert_eq!(m.step(&mut NoHook), out);
}

#[test]
fn integer_semantics() {
    assert_eq!(lop3(0xf0f0, 0xff00, 0xaaaa, 0x80), 0xf0f0 & 0xff00 & 0xaaaa);
    assert_eq!(lop3(0xf0f0, 0xff00, 0, 0xfc), 0xf0f0 | 0xff00);
    assert_eq!(lop3(0x1234, 0x8000_0000, 0, 0x3c), 0x1234 ^ 0x8000_0000);

    let mut shf = op2(Opcode::Shf, 2, Operand::Reg(0), Operand::Reg(1));
    shf.shift = Some(8);
    let mut lea = op2(Opcode::Lea, 3, Operand::Reg(0), Operand::Imm(3));
    lea.shift = Some(2);
    let p = prog(&[mov(0, 0x1122_3344), mov(1, 0xaabb_ccdd), shf, lea, exit()]);
    let r = run_plain(&p);
    assert_eq!(r.state.regs[2], 0xdd11_2233);
    assert_eq!(r.state.regs[3], 0x1122_3344u32.wrapping_shl(2).wrapping_add(3));
}

#[test]
fn narrow_loads_zero_extend_and_stores_truncate() {
    let mut st = mem(Opcode::Sts, RZ, 6, 0);
    st.mem_width = Some(MemWidth::W16);
    let mut ld = mem(Opcode::Lds, RZ, 6, 1);
    ld.mem_width = Some(MemWidth::W16);
    let mut ldb = mem(Opcode::Lds, RZ, 7, 2);
    ldb.mem_width = Some(MemWidth::W8);
    let p = prog(&[mov(0, 0xdead_beef), st, ld, ldb, exit()]);
    let r = run_plain(&p);
    assert_eq!(r.state.regs[1], 0xbeef);
    assert_eq!(r.state.regs[2], 0xbe);
    assert_eq!(&r.state.shared[6..8], &[0xef, 0xbe]);
}

#[test]
fn setp_and_sel() {
    let mut fsetp = Instruction::new(Opcode::Fsetp);
    fsetp.dest = Dest::Pred(1);
    fsetp.cmp = Some(CmpOp::Ne);
    fsetp.srcs = [Operand::Reg(0), Operand::Reg(0), Operand::None];
    let mut sel = op2(Opcode::Sel, 2, Operand::Imm(10), Operand::Imm(20));
    sel.srcs[2] = Operand::Pred(1);
    let p = prog(&[mov(0, 0x7fc0_0000), fsetp, sel, exit()]);
    let r = run_plain(&p);
    assert!(r.state.pred(1), "NE is true on NaN");
    assert_eq!(r.state.regs[2], 10);
}

#[test]
fn runs_are_deterministic() {
    let p = prog(&[
        mov(0, 1.5f32.to_bits()),
        op2(Opcode::MufuEx2, 1, Operand::Reg(0), Operand::None),
        op2(Opcode::MufuLg2, 2, Operand::Reg(1), Operand::None),
        op2(Opcode::Hadd2, 3, Operand::Reg(0), Operand::Reg(1)),
        mem(Opcode::Stg, RZ, 0, 3),
        exit(),
    ]);
    let a = run_plain(&p);
    let b = run_plain(&p);
    assert_eq!(a, b);
    assert_eq!(a.state.regs[2], 1.5f32.to_bits());
}

#[test]
fn resume_from_saved_state_matches_full_run() {
    let p = prog(&[mov(0, 1), mov(1, 2), op2(Opcode::Iadd3, 2, Operand::Reg(0), Operand::Reg(1)), exit()]);
    let full = run_plain(&p);
    let mut m = Machine::new(&p, RunConfig::default());
    m.run_until(&mut NoHook, 2);
    assert_eq!(m.state.dyn_count, 2);
    let mut resumed = Machine::with_state(&p, RunConfig::default(), m.state.clone());
    resumed.run(&mut NoHook);
    assert!(resumed.state.same_state(&full.state));
    assert_eq!(resumed.state, full.state);
}
