use bitstorm_core::fixtures::dot_product;
use bitstorm_core::record::{read_jsonl, to_jsonl};
use bitstorm_core::*;
use bitstorm_forge::{build_model, golden_run, lower, preset};
use bitstorm_isa::TrapCause;

#[test]
fn worker_count_does_not_change_the_log() {
    let m = build_model(&preset("nano-gpt2").unwrap()).unwrap();
    let p = lower(&m, &[3], 1).unwrap();
    let g = golden_run(&p).unwrap();
    let engine = Engine::new(&p, &g, Limits::default()).unwrap();
    let spec = FaultSpec::default();
    let run = |workers| {
        let params = CampaignParams { trials: 100, seed: 5, repeats: 10, workers };
        to_jsonl(&run_campaign(&engine, &spec, params).unwrap())
    };
    let one = run(1);
    assert_eq!(one, run(8));
    assert_eq!(one.iter().filter(|&&b| b == b'\n').count(), 100);
}

#[test]
fn records_are_ordered_partitioned_and_round_trip() {
    let p = dot_product(8);
    let g = golden_run(&p).unwrap();
    let engine = Engine::new(&p, &g, Limits::default()).unwrap();
    for spec in [
        FaultSpec::default(),
        FaultSpec { mode: Mode::Encoding, ..FaultSpec::default() },
        FaultSpec::value(3, BitPolicy::Fixed(30)),
    ] {
        let params = CampaignParams { trials: 300, seed: 17, repeats: 3, workers: 2 };
        let records = run_campaign(&engine, &spec, params).unwrap();
        assert_eq!(records.len(), 300);
        let mut counts = bitstorm_core::analytics::Counts::default();
        for (t, r) in records.iter().enumerate() {
            assert_eq!(r.trial, t as u64);
            assert_eq!(r.seed, bitstorm_core::rng::trial_seed(17, t as u64));
            assert_eq!(r.repeat, (t / 100) as u32);
            assert_eq!(r.sites.len(), spec.n as usize);
            counts.add(r.outcome);
            match r.outcome {
                OutcomeKind::Due => {
                    let c = r.due_cause.unwrap();
                    assert!(TrapCause::ALL.contains(&c));
                    assert!(r.sdc_cause.is_none());
                }
                OutcomeKind::Sdc => {
                    assert!(r.sdc_cause.is_some());
                    assert!(r.first_inconsistent.is_some());
                    assert!(r.due_cause.is_none());
                }
                OutcomeKind::Masked => assert!(r.due_cause.is_none() && r.sdc_cause.is_none()),
            }
        }
        assert_eq!(counts.masked + counts.sdc + counts.due, 300);
        let bytes = to_jsonl(&records);
        assert_eq!(read_jsonl(&bytes[..]).unwrap(), records);
    }
}

#[test]
fn zero_trials_is_empty() {
    let p = dot_product(4);
    let g = golden_run(&p).unwrap();
    let engine = Engine::new(&p, &g, Limits::default()).unwrap();
    let params = CampaignParams { trials: 0, seed: 1, repeats: 10, workers: 1 };
    assert!(run_campaign(&engine, &FaultSpec::default(), params).unwrap().is_empty());
}

#[test]
fn schema_is_checked_on_read() {
    let line = br#"{"schema":"other/9","trial":0}"#;
    assert!(read_jsonl(&line[..]).is_err());
}
