use bitstorm_core::*;
use bitstorm_forge::{build_model, golden_run, lower, preset, GoldenTrace};
use bitstorm_isa::{Program, Trap, TrapCause};

fn nano() -> (Program, GoldenTrace) {
    let m = build_model(&preset("nano-gpt2").unwrap()).unwrap();
    let p = lower(&m, &[3], 1).unwrap();
    let g = golden_run(&p).unwrap();
    (p, g)
}

fn clean(p: &Program, g: &GoldenTrace) -> RawTrialResult {
    Engine::new(p, g, Limits::default()).unwrap().execute(&[])
}

#[test]
fn trap_is_due() {
    let (p, g) = nano();
    let mut raw = clean(&p, &g);
    raw.trap = Some(Trap { cause: TrapCause::AddrOob, pc: 10, detail: 0 });
    let o = classify(&raw, &g).unwrap();
    assert_eq!(o.kind, OutcomeKind::Due);
    assert_eq!(o.due_cause, Some(TrapCause::AddrOob));
    assert_eq!(o.max_logit_dev, None);
    assert!(!o.tokens_equal);
}

#[test]
fn logit_drift_without_token_change_is_masked() {
    let (p, g) = nano();
    let mut raw = clean(&p, &g);
    let x = f32::from_bits(raw.logits[0]);
    raw.logits[0] = (x + 0.01).to_bits();
    let o = classify(&raw, &g).unwrap();
    assert_eq!(o.kind, OutcomeKind::Masked);
    assert!(o.tokens_equal);
    let dev = o.max_logit_dev.unwrap();
    assert!((dev - 0.01).abs() < 1e-6, "{dev}");
}

#[test]
fn token_change_is_sdc() {
    let (p, g) = nano();
    let mut raw = clean(&p, &g);
    raw.output[0] ^= 1;
    let o = classify(&raw, &g).unwrap();
    assert_eq!(o.kind, OutcomeKind::Sdc);
    assert!(!o.tokens_equal);
    assert_eq!(o.sdc_cause, None);
}

#[test]
fn first_inconsistent_is_the_earliest_differing_snapshot() {
    let (p, g) = nano();
    let mut raw = clean(&p, &g);
    assert_eq!(classify(&raw, &g).unwrap().first_inconsistent, None);
    let k = raw.snapshots.len() / 2;
    raw.snapshots[k].1 ^= 1;
    raw.snapshots[k + 1].1 ^= 1;
    let o = classify(&raw, &g).unwrap();
    assert_eq!(o.first_inconsistent, Some(g.snapshots[k].tag));
}

#[test]
fn a_snapshot_never_taken_is_inconsistent() {
    let (p, g) = nano();
    let mut raw = clean(&p, &g);
    let k = raw.snapshots.len() - 3;
    raw.snapshots.truncate(k);
    raw.output[0] ^= 1;
    let o = classify(&raw, &g).unwrap();
    assert_eq!(o.kind, OutcomeKind::Sdc);
    assert_eq!(o.first_inconsistent, Some(g.snapshots[k].tag));
}

#[test]
fn foreign_trace_is_rejected() {
    let (p, g) = nano();
    let mut raw = clean(&p, &g);
    raw.program_digest ^= 1;
    assert!(matches!(classify(&raw, &g), Err(CoreError::MismatchedTrace)));
}
