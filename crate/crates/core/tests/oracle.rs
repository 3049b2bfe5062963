use bitstorm_core::analytics::Counts;
use bitstorm_core::fixtures::dot_product;
use bitstorm_core::inject::execute_naive;
use bitstorm_core::oracle::{physical_sites, DEFAULT_CAP};
use bitstorm_core::*;
use bitstorm_forge::{golden_run, GoldenTrace};
use bitstorm_isa::{Opcode, Program};

fn fixture(n: usize) -> (Program, GoldenTrace) {
    let p = dot_product(n);
    let g = golden_run(&p).unwrap();
    (p, g)
}

/// Brute force: every physical site from a fresh machine, no checkpoints.
fn brute_force(p: &Program, g: &GoldenTrace, space: &SiteSpace) -> Vec<(FaultSite, u32, Outcome)> {
    physical_sites(space)
        .into_iter()
        .map(|(site, w)| {
            let raw = execute_naive(p, g, &[site], Limits::default());
            (site, w, classify(&raw, g).unwrap())
        })
        .collect()
}

fn tally(rows: &[(FaultSite, u32, Outcome)]) -> Counts {
    let mut c = Counts::default();
    for (_, w, o) in rows {
        for _ in 0..*w {
            c.add(o.kind);
        }
    }
    c
}

#[test]
fn dot8_exact_matches_brute_force_and_frozen_values() {
    let (p, g) = fixture(8);
    let space = enumerate_sites(&p, &g, &FaultSpec::default()).unwrap();
    let engine = Engine::new(&p, &g, Limits::default()).unwrap();
    let exact = exact_single(&engine, &space, DEFAULT_CAP).unwrap();
    let brute = brute_force(&p, &g, &space);
    assert_eq!(exact.sites.len(), brute.len());
    for (e, (site, w, o)) in exact.sites.iter().zip(&brute) {
        assert_eq!((e.dyn_index, e.bit, e.weight), (site.dyn_index, site.bit, *w));
        assert_eq!(e.kind, o.kind, "{site:?}");
        assert_eq!(e.due_cause, o.due_cause, "{site:?}");
        assert_eq!(e.first_inconsistent, o.first_inconsistent, "{site:?}");
    }
    let c = exact.counts();
    assert_eq!(c, tally(&brute));
    assert_eq!(exact.site_count, space.len());
    assert_eq!(c.trials, space.len());
    // frozen from the brute-force enumeration above
    assert_eq!(c, Counts { trials: 2144, masked: FROZEN_DOT8.0, sdc: FROZEN_DOT8.1, due: FROZEN_DOT8.2 });
    assert_eq!(exact.mvf(), c.mvf());

    // per-opcode marginals sum to the global counts
    let by_op = exact.opcode_counts();
    let sum = by_op.values().fold(Counts::default(), |mut a, b| {
        a.trials += b.trials;
        a.masked += b.masked;
        a.sdc += b.sdc;
        a.due += b.due;
        a
    });
    assert_eq!(sum, c);
}

const FROZEN_DOT8: (u64, u64, u64) = (148, 1557, 439);

#[test]
fn exhaustive_runs_are_deterministic_and_round_trip() {
    let (p, g) = fixture(4);
    let space = enumerate_sites(&p, &g, &FaultSpec::default()).unwrap();
    let engine = Engine::new(&p, &g, Limits::default()).unwrap();
    let a = exact_single(&engine, &space, DEFAULT_CAP).unwrap();
    let b = exact_single(&engine, &space, DEFAULT_CAP).unwrap();
    assert_eq!(a, b);
    let bytes = a.to_bytes();
    assert_eq!(&bytes[..4], b"BFEX");
    assert_eq!(ExactResult::from_bytes(&bytes).unwrap(), a);
    assert!(ExactResult::from_bytes(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn cap_is_enforced() {
    let (p, g) = fixture(4);
    let space = enumerate_sites(&p, &g, &FaultSpec::default()).unwrap();
    let engine = Engine::new(&p, &g, Limits::default()).unwrap();
    assert!(matches!(exact_single(&engine, &space, space.len() - 1), Err(CoreError::SpaceTooLarge { .. })));
    assert!(matches!(exact_pairwise(&engine, &space, 1000), Err(CoreError::SpaceTooLarge { .. })));
}

#[test]
fn sign_bit_sdcs_reach_the_output_through_taint() {
    let (p, g) = fixture(8);
    let space = enumerate_sites(&p, &g, &FaultSpec::value(1, BitPolicy::Fixed(31))).unwrap();
    let engine = Engine::new(&p, &g, Limits::default()).unwrap();
    let exact = exact_single(&engine, &space, DEFAULT_CAP).unwrap();
    let bits = exact.bit_table();
    assert_eq!(bits.len(), 1);
    assert_eq!(bits[0].bit, 31);
    for s in exact.sites.iter().filter(|s| s.kind == OutcomeKind::Sdc) {
        // every sign-bit SDC carries a sub-cause from a taint run that reached the output
        assert!(s.sdc_cause.is_some());
        assert!(s.first_inconsistent.is_some());
    }
}

#[test]
fn pairwise_matches_brute_force() {
    let (p, g) = fixture(4);
    let mut spec = FaultSpec::value(1, BitPolicy::Fixed(30));
    spec.filters.opcodes = Some([Opcode::Fmul, Opcode::Fadd, Opcode::Lea].into());
    let space = enumerate_sites(&p, &g, &spec).unwrap();
    let engine = Engine::new(&p, &g, Limits::default()).unwrap();
    let pair = exact_pairwise(&engine, &space, DEFAULT_CAP).unwrap();
    let sites = physical_sites(&space);
    let mut c = Counts::default();
    for a in 0..sites.len() {
        for b in a + 1..sites.len() {
            let raw = execute_naive(&p, &g, &[sites[a].0, sites[b].0], Limits::default());
            c.add(classify(&raw, &g).unwrap().kind);
        }
    }
    assert_eq!(pair.counts, c);
    assert_eq!(pair.pairs, space.len() * (space.len() - 1) / 2);
}

#[test]
fn compare_verdicts() {
    let (p, g) = fixture(8);
    let space = enumerate_sites(&p, &g, &FaultSpec::default()).unwrap();
    let engine = Engine::new(&p, &g, Limits::default()).unwrap();
    let exact = exact_single(&engine, &space, DEFAULT_CAP).unwrap();
    let params = CampaignParams { trials: 500, seed: 11, repeats: 1, workers: 1 };
    let records = run_campaign(&engine, &FaultSpec::default(), params).unwrap();
    let report = oracle::compare(&records, &exact, 3.0).unwrap();
    assert_eq!(report.rows[0].statistic, "mvf");

    // records whose outcomes equal the exact rates deviate by 0
    let c = exact.counts();
    let mut fake = Vec::new();
    for k in 0..c.trials as usize {
        let mut r = records[k % records.len()].clone();
        r.outcome = if k < c.sdc as usize {
            OutcomeKind::Sdc
        } else if k < (c.sdc + c.due) as usize {
            OutcomeKind::Due
        } else {
            OutcomeKind::Masked
        };
        fake.push(r);
    }
    let r = oracle::compare(&fake, &exact, 3.0).unwrap();
    assert_eq!(r.rows[0].abs_dev, 0.0);
    assert!(r.rows[0].pass);

    // an all-error estimate is far outside 3 SE
    let mut bad = records.clone();
    for r in &mut bad {
        r.outcome = OutcomeKind::Due;
    }
    let r = oracle::compare(&bad, &exact, 3.0).unwrap();
    assert!(!r.rows[0].pass);
    assert!(!r.pass);

    let mut two = records.clone();
    two[0].n_faults = 2;
    assert!(matches!(oracle::compare(&two, &exact, 3.0), Err(CoreError::SpecMismatch(_))));
}
