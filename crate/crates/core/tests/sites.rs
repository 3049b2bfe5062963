use std::collections::{BTreeSet, HashSet};

use bitstorm_core::fixtures::dot_product;
use bitstorm_core::sites::Eligible;
use bitstorm_core::*;
use bitstorm_forge::golden_run;
use bitstorm_isa::{Opcode, OperatorTag};
use proptest::prelude::*;

fn dot8() -> (bitstorm_isa::Program, bitstorm_forge::GoldenTrace) {
    let p = dot_product(8);
    let g = golden_run(&p).unwrap();
    (p, g)
}

#[test]
fn fixed_bit_space_counts_dest_writers() {
    let (p, g) = dot8();
    let space = enumerate_sites(&p, &g, &FaultSpec::value(1, BitPolicy::Fixed(30))).unwrap();
    // count destination writers straight from the trace
    let code = p.decoded();
    let writers = (0..g.dyn_count)
        .filter(|&d| {
            let i = &code[g.pc_at(d) as usize];
            !g.skipped_at(d) && i.opcode.writes_dest()
        })
        .count() as u64;
    // LDC, 2 MOV, 8 per iteration except BRA: 3 + 8 * 8
    assert_eq!(writers, 67);
    assert_eq!(space.len(), writers);
    let random = enumerate_sites(&p, &g, &FaultSpec::value(1, BitPolicy::Random)).unwrap();
    assert_eq!(random.len(), 32 * writers);
    // the 8 ISETP instances each contribute one physical flip
    assert_eq!(random.physical_len(), 32 * (writers - 8) + 8);
}

#[test]
fn exit_filter_is_empty() {
    let (p, g) = dot8();
    let mut spec = FaultSpec::default();
    spec.filters.opcodes = Some(BTreeSet::from([Opcode::Exit]));
    assert!(matches!(enumerate_sites(&p, &g, &spec), Err(CoreError::EmptySiteSpace)));
}

#[test]
fn encoding_space_covers_every_dynamic_instruction() {
    let (p, g) = dot8();
    let spec = FaultSpec { mode: Mode::Encoding, ..FaultSpec::default() };
    let space = enumerate_sites(&p, &g, &spec).unwrap();
    assert_eq!(space.len(), g.dyn_count * 32);
    assert_eq!(space.physical_len(), space.len());
}

#[test]
fn opcode_filter_restricts_space() {
    let (p, g) = dot8();
    let mut spec = FaultSpec::default();
    spec.filters.opcodes = Some(BTreeSet::from([Opcode::Fadd]));
    let space = enumerate_sites(&p, &g, &spec).unwrap();
    assert_eq!(space.len(), 8 * 32);
    assert!(space.eligible.iter().all(|e| e.opcode == Opcode::Fadd));
}

fn synthetic(n: usize, bit: BitPolicy) -> SiteSpace {
    let eligible = (0..n as u64)
        .map(|d| Eligible {
            dyn_index: d,
            pc: 0,
            opcode: Opcode::Fadd,
            tag: OperatorTag::OTHER,
            target: Target::DestValue,
        })
        .collect();
    SiteSpace { mode: Mode::Value, bit, program_digest: 0, eligible }
}

#[test]
fn sampling_is_deterministic_and_distinct() {
    let space = synthetic(10, BitPolicy::Fixed(0));
    let a = sample_faults(&space, 3, 42).unwrap();
    let b = sample_faults(&space, 3, 42).unwrap();
    assert_eq!(a, b);
    let dyns: HashSet<u64> = a.iter().map(|s| s.dyn_index).collect();
    assert_eq!(dyns.len(), 3);
    assert!(matches!(sample_faults(&space, 11, 42), Err(CoreError::NotEnoughSites { wanted: 11, available: 10 })));
    assert_eq!(sample_faults(&space, 10, 7).unwrap().len(), 10);
}

#[test]
fn sampling_is_uniform() {
    let space = synthetic(16, BitPolicy::Fixed(5));
    let draws = 100_000u64;
    let mut freq = [0u64; 16];
    for t in 0..draws {
        let s = sample_faults(&space, 1, bitstorm_core::rng::trial_seed(9, t)).unwrap();
        freq[s[0].dyn_index as usize] += 1;
    }
    let p = 1.0 / 16.0;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    let mut chi2 = 0.0;
    for f in freq {
        let dev = f as f64 - draws as f64 * p;
        assert!(dev.abs() < 5.0 * sigma, "{freq:?}");
        chi2 += dev * dev / (draws as f64 * p);
    }
    // 15 degrees of freedom, p = 0.001 critical value
    assert!(chi2 < 37.7, "chi2 {chi2}");
}

#[test]
fn predicate_slots_collapse_to_one_flip() {
    let (p, g) = dot8();
    let mut spec = FaultSpec::default();
    spec.filters.opcodes = Some(BTreeSet::from([Opcode::Isetp]));
    let space = enumerate_sites(&p, &g, &spec).unwrap();
    assert_eq!(space.physical_len(), 8);
    for i in 0..space.len() {
        let s = space.site(i);
        assert_eq!(s.target, Target::DestPredicate);
        assert_eq!(s.bit, 0);
    }
    // all eight physical flips can be drawn together, never duplicated
    let all = sample_faults(&space, 8, 3).unwrap();
    let dyns: HashSet<u64> = all.iter().map(|s| s.dyn_index).collect();
    assert_eq!(dyns.len(), 8);
    assert!(sample_faults(&space, 9, 3).is_err());
}

proptest! {
    #[test]
    fn samples_are_valid_sorted_and_distinct(seed in any::<u64>(), n in 1u32..20) {
        let (p, g) = dot8();
        let space = enumerate_sites(&p, &g, &FaultSpec::default()).unwrap();
        let faults = sample_faults(&space, n, seed).unwrap();
        prop_assert_eq!(faults.len(), n as usize);
        let code = p.decoded();
        let mut seen = HashSet::new();
        for w in faults.windows(2) {
            prop_assert!((w[0].dyn_index, w[0].bit) < (w[1].dyn_index, w[1].bit));
        }
        for f in &faults {
            prop_assert!(seen.insert((f.dyn_index, f.bit)));
            prop_assert!(f.dyn_index < g.dyn_count);
            prop_assert!(!g.skipped_at(f.dyn_index));
            let inst = &code[g.pc_at(f.dyn_index) as usize];
            prop_assert_eq!(inst.opcode, f.opcode);
            prop_assert!(inst.opcode.writes_dest());
        }
    }
}
