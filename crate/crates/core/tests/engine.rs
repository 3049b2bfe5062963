use std::sync::OnceLock;

use bitstorm_core::fixtures::{abs_product, dot_product};
use bitstorm_core::inject::{execute_naive, InjectHook};
use bitstorm_core::*;
use bitstorm_forge::{build_model, golden_run, lower, preset, GoldenTrace};
use bitstorm_isa::{
    Dest, Effect, Hook, Instruction, Machine, MemoryLayout, Opcode, Operand, OperatorTag, Program, Region, RunConfig,
    TrapCause, Word32, RZ,
};
use proptest::prelude::*;

struct Fixture {
    program: Program,
    golden: GoldenTrace,
}

impl Fixture {
    fn new(program: Program) -> Self {
        let golden = golden_run(&program).unwrap();
        Fixture { program, golden }
    }

    fn engine(&self) -> Engine<'_> {
        Engine::new(&self.program, &self.golden, Limits::default()).unwrap()
    }

    fn site(&self, dyn_index: u64, target: Target, bit: u8) -> FaultSite {
        let inst = &self.program.decoded()[self.golden.pc_at(dyn_index) as usize];
        FaultSite { dyn_index, target, bit, opcode: inst.opcode, tag: inst.tag }
    }
}

fn nano() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let m = build_model(&preset("nano-gpt2").unwrap()).unwrap();
        Fixture::new(lower(&m, &[3], 1).unwrap())
    })
}

fn same_result(a: &RawTrialResult, b: &RawTrialResult) -> bool {
    a.program_digest == b.program_digest
        && a.trap == b.trap
        && a.output == b.output
        && a.logits == b.logits
        && a.snapshots == b.snapshots
        && a.dyn_count == b.dyn_count
        && a.reached == b.reached
}

#[test]
fn no_fault_reproduces_golden() {
    for f in [Fixture::new(dot_product(8)), Fixture::new(abs_product(8))] {
        let raw = f.engine().execute(&[]);
        let naive = execute_naive(&f.program, &f.golden, &[], Limits::default());
        assert!(same_result(&raw, &naive));
        assert_eq!(raw.trap, None);
        assert_eq!(raw.dyn_count, f.golden.dyn_count);
        let outcome = classify(&raw, &f.golden).unwrap();
        assert_eq!(outcome.kind, OutcomeKind::Masked);
        assert_eq!(outcome.first_inconsistent, None);
    }
}

#[test]
fn rz_destination_flip_is_invisible() {
    let mut mov = Instruction::new(Opcode::Mov);
    mov.dest = Dest::Reg(RZ);
    mov.srcs[0] = Operand::Imm(0x1234);
    let mut store = Instruction::new(Opcode::Stg);
    store.srcs = [Operand::Reg(RZ), Operand::Reg(RZ), Operand::None];
    store.mem_width = Some(bitstorm_isa::MemWidth::W32);
    let layout =
        MemoryLayout { global_size: 16, shared_size: 0, output: Region::global(0, 4), logits: None, kv_cache: None };
    let code = [mov, store, Instruction::new(Opcode::Exit)];
    let f = Fixture::new(Program::from_instructions("rz", &code, vec![], layout, vec![], 4));
    let space = enumerate_sites(&f.program, &f.golden, &FaultSpec::default()).unwrap();
    assert_eq!(space.len(), 32);
    let e = f.engine();
    for bit in 0..32 {
        let site = f.site(0, Target::DestValue, bit);
        let raw = e.execute(&[site]);
        assert_eq!(raw.reached, [true]);
        assert_eq!(raw.output, f.golden.output);
        assert_eq!(classify(&raw, &f.golden).unwrap().kind, OutcomeKind::Masked);
    }
}

#[test]
fn encoding_flip_into_register_out_of_range() {
    let f = Fixture::new(dot_product(8));
    // dyn 2 is MOV R2, 0; dest field bit 4 turns R2 into R18 with a budget of 16
    let site = f.site(2, Target::EncodingWord, 20);
    assert_eq!(site.opcode, Opcode::Mov);
    let raw = f.engine().execute(&[site]);
    let trap = raw.trap.unwrap();
    assert_eq!(trap.cause, TrapCause::RegOob);
    assert_eq!(raw.dyn_count, 2);
    let outcome = classify(&raw, &f.golden).unwrap();
    assert_eq!(outcome.kind, OutcomeKind::Due);
    assert_eq!(outcome.due_cause, Some(TrapCause::RegOob));
}

#[test]
fn exponent_flip_in_load_base_traps() {
    let f = Fixture::new(dot_product(8));
    // dyn 3 is LEA R3, the base of the next LDG
    let site = f.site(3, Target::DestValue, 30);
    assert_eq!(site.opcode, Opcode::Lea);
    let raw = f.engine().execute(&[site]);
    assert_eq!(raw.trap.unwrap().cause, TrapCause::AddrOob);
    assert_eq!(raw.dyn_count, 4);
}

#[test]
fn low_flip_in_store_base_is_an_address_sdc() {
    let f = Fixture::new(abs_product(8));
    // dyn 7 is LEA R9 (the output pointer of element 0); bit 2 moves the store one word on
    let site = f.site(7, Target::DestValue, 2);
    assert_eq!(site.opcode, Opcode::Lea);
    let e = f.engine();
    let (raw, outcome) = evaluate(&e, &[site]).unwrap();
    assert_eq!(raw.trap, None);
    assert_eq!(outcome.kind, OutcomeKind::Sdc);
    assert_eq!(outcome.sdc_cause, Some(SdcCause::Address));
    assert_eq!(&raw.output[..4], &[0, 0, 0, 0]);
}

#[test]
fn mantissa_flip_in_product_is_numeric_sdc() {
    let f = Fixture::new(dot_product(8));
    // dyn 7 is the first FMUL
    let site = f.site(7, Target::DestValue, 22);
    assert_eq!(site.opcode, Opcode::Fmul);
    let (_, outcome) = evaluate(&f.engine(), &[site]).unwrap();
    assert_eq!(outcome.kind, OutcomeKind::Sdc);
    assert_eq!(outcome.sdc_cause, Some(SdcCause::Numeric));
    assert_eq!(outcome.first_inconsistent, Some(OperatorTag::new(bitstorm_isa::OperatorKind::LmHead, None)));
}

#[test]
fn loop_bound_flip_hangs() {
    let f = Fixture::new(dot_product(8));
    // dyn 0 is LDC R0, the loop bound; bit 30 makes it huge, so the loop
    // either runs out of hang budget or walks off the input arrays
    let site = f.site(0, Target::DestValue, 30);
    let raw = f.engine().execute(&[site]);
    let cause = raw.trap.unwrap().cause;
    assert!(matches!(cause, TrapCause::Hang | TrapCause::AddrOob), "{cause:?}");
}

#[test]
fn unreached_fault_is_recorded() {
    let f = Fixture::new(dot_product(8));
    let first = f.site(3, Target::DestValue, 30);
    let later = f.site(40, Target::DestValue, 0);
    let raw = f.engine().execute(&[first, later]);
    assert!(raw.trap.is_some());
    assert_eq!(raw.reached, [true, false]);
}

fn check_against_naive(f: &Fixture, spec: &FaultSpec, n: u32, seed: u64) -> std::result::Result<(), TestCaseError> {
    let space = enumerate_sites(&f.program, &f.golden, spec).unwrap();
    let faults = sample_faults(&space, n, seed).unwrap();
    let raw = f.engine().execute(&faults);
    let naive = execute_naive(&f.program, &f.golden, &faults, Limits::default());
    prop_assert!(same_result(&raw, &naive), "{faults:?}\n{raw:?}\n{naive:?}");
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn engine_matches_naive_on_fixtures(seed in any::<u64>(), n in 1u32..4, enc in any::<bool>()) {
        let spec = FaultSpec { mode: if enc { Mode::Encoding } else { Mode::Value }, n, ..FaultSpec::default() };
        for f in [Fixture::new(dot_product(8)), Fixture::new(abs_product(4))] {
            check_against_naive(&f, &spec, n, seed)?;
        }
    }

    #[test]
    fn engine_matches_naive_on_nano(seed in any::<u64>(), n in 1u32..3, enc in any::<bool>()) {
        let spec = FaultSpec { mode: if enc { Mode::Encoding } else { Mode::Value }, n, ..FaultSpec::default() };
        check_against_naive(nano(), &spec, n, seed)?;
    }

    #[test]
    fn value_flip_changes_exactly_one_bit(seed in any::<u64>()) {
        let f = Fixture::new(dot_product(8));
        let space = enumerate_sites(&f.program, &f.golden, &FaultSpec::default()).unwrap();
        let faults = sample_faults(&space, 1, seed).unwrap();
        let mut probe = Probe { inject: InjectHook::new(&faults), at: faults[0].dyn_index, seen: None };
        let mut m = Machine::new(&f.program, RunConfig::default());
        m.run(&mut probe);
        let (computed, committed) = probe.seen.unwrap();
        prop_assert_eq!((computed ^ committed).count_ones(), 1);
    }
}

/// Forwards to an inject hook and records the computed and committed value
/// at one dynamic index.
struct Probe<'f> {
    inject: InjectHook<'f>,
    at: u64,
    seen: Option<(u32, u32)>,
}

impl Hook for Probe<'_> {
    fn before(&mut self, d: u64, pc: u32, w: Word32) -> Option<Word32> {
        self.inject.before(d, pc, w)
    }

    fn after(&mut self, e: &Effect<'_>) -> Option<u32> {
        let r = self.inject.after(e);
        if e.dyn_index == self.at {
            let v = e.write.unwrap().value;
            self.seen = Some((v, r.unwrap_or(v)));
        }
        r
    }
}
