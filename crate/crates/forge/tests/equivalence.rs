use bitstorm_forge::*;
use bitstorm_isa::{fnv1a64, Group, Opcode, OperatorKind};

fn check(name: &str, prompt: &[u32], steps: u32) -> GoldenTrace {
    let m = build_model(&preset(name).unwrap()).unwrap();
    let program = lower(&m, prompt, steps).unwrap();
    let golden = golden_run(&program).unwrap();
    let reference = reference_forward(&m, prompt, steps).unwrap();
    assert_eq!(golden.tokens, reference.tokens, "{name} tokens");
    assert_eq!(golden.logits, reference.logits, "{name} logits");
    assert_eq!(golden.snapshots.len(), reference.activations.len(), "{name} snapshot count");
    for (i, (s, (tag, bytes))) in golden.snapshots.iter().zip(&reference.activations).enumerate() {
        assert_eq!(s.tag, *tag, "{name} snapshot {i}");
        assert_eq!(s.bytes.as_deref(), Some(&bytes[..]), "{name} snapshot {i} ({tag})");
        assert_eq!(s.digest, fnv1a64(bytes));
    }
    golden
}

#[test]
fn lowered_program_matches_reference_bitwise() {
    for name in PRESET_NAMES {
        let g = check(name, &[3, 1, 4], 2);
        assert_eq!(g.tokens.len(), 2);
        assert!(g.logits.iter().flatten().all(|&v| f32::from_bits(v).is_finite()));
        check(name, &[3], 1);
        check(name, &[5, 9], 0);
    }
}

#[test]
fn zero_steps_records_prompt_logits_only() {
    let m = build_model(&preset("nano-gpt2").unwrap()).unwrap();
    let r = reference_forward(&m, &[3, 1, 4], 0).unwrap();
    assert!(r.tokens.is_empty());
    assert_eq!(r.logits.len(), 1);
    assert!(r.logits[0].iter().any(|&v| v != 0));
}

#[test]
fn cached_decode_equals_full_recompute() {
    for name in PRESET_NAMES {
        let m = build_model(&preset(name).unwrap()).unwrap();
        let cached = reference_forward(&m, &[3, 1, 4], 4).unwrap();
        let (tokens, logits) = reference_forward_uncached(&m, &[3, 1, 4], 4).unwrap();
        assert_eq!(cached.tokens, tokens);
        assert_eq!(cached.logits, logits);
    }
}

#[test]
fn golden_accounting() {
    let g = check("nano-gpt2", &[3, 1, 4], 2);
    assert_eq!(g.histogram.iter().sum::<u64>(), g.dyn_count);
    let p: f64 = g.proportions().iter().sum();
    assert!((p - 1.0).abs() < 1e-12);
    let compute: f64 =
        Opcode::all().iter().filter(|o| o.group().is_compute()).map(|o| g.proportions()[o.ordinal() as usize]).sum();
    let largest_other = [Group::MovSel, Group::Mem, Group::Ctrl]
        .iter()
        .map(|grp| {
            Opcode::all()
                .iter()
                .filter(|o| o.group() == *grp)
                .map(|o| g.proportions()[o.ordinal() as usize])
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    assert!(compute > largest_other, "compute share {compute}");
    println!("dyn_count {} compute share {compute:.3}", g.dyn_count);
}

#[test]
fn lowering_is_deterministic() {
    let m = build_model(&preset("nano-rms").unwrap()).unwrap();
    let a = lower(&m, &[3, 1, 4], 2).unwrap();
    let b = lower(&m, &[3, 1, 4], 2).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
}

#[test]
fn every_instruction_is_tagged_within_layer_range() {
    let m = build_model(&preset("nano-gpt2").unwrap()).unwrap();
    let p = lower(&m, &[3, 1, 4], 2).unwrap();
    for i in p.decoded() {
        if let Some(l) = i.tag.layer {
            assert!(l < 2);
        }
        match i.tag.kind {
            OperatorKind::Embedding | OperatorKind::LmHead => assert_eq!(i.tag.layer, None),
            OperatorKind::Attention | OperatorKind::Mlp => assert!(i.tag.layer.is_some()),
            _ => {}
        }
    }
}
