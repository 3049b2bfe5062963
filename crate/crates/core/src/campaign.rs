//! Campaigns: many independent trials, run in parallel, logged in order.

use rayon::prelude::*;

use crate::classify::{attribute_sdc, classify, Outcome, OutcomeKind};
use crate::error::{CoreError, Result};
use crate::inject::{Engine, InjectHook, RawTrialResult};
use crate::record::TrialRecord;
use crate::rng::trial_seed;
use crate::sites::{enumerate_sites, sample_faults, SiteSpace};
use crate::spec::{FaultSite, FaultSpec};
use crate::taint::TaintHook;

/// Runs `faults`, classifies the result and, for SDC, reruns with taint
/// tracking to attribute the sub-cause.
pub fn evaluate(engine: &Engine<'_>, faults: &[FaultSite]) -> Result<(RawTrialResult, Outcome)> {
    let raw = engine.execute(faults);
    let mut outcome = classify(&raw, engine.golden)?;
    if outcome.kind == OutcomeKind::Sdc {
        let mut hook = TaintHook::new(engine.program, InjectHook::new(faults));
        engine.execute_with(faults, &mut hook);
        outcome.sdc_cause = Some(attribute_sdc(&hook.state));
    }
    Ok((raw, outcome))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CampaignParams {
    pub trials: u64,
    pub seed: u64,
    /// Trials are split into this many contiguous repeat blocks.
    pub repeats: u32,
    pub workers: usize,
}

/// Repeat block of trial `t`.
pub fn repeat_of(t: u64, trials: u64, repeats: u32) -> u32 {
    if trials == 0 {
        return 0;
    }
    (t as u128 * repeats.max(1) as u128 / trials as u128) as u32
}

pub fn run_campaign(engine: &Engine<'_>, spec: &FaultSpec, params: CampaignParams) -> Result<Vec<TrialRecord>> {
    spec.validate()?;
    if params.trials == 0 {
        return Ok(Vec::new());
    }
    let space = enumerate_sites(engine.program, engine.golden, spec)?;
    run_on_space(engine, &space, spec, params)
}

pub fn run_on_space(
    engine: &Engine<'_>,
    space: &SiteSpace,
    spec: &FaultSpec,
    params: CampaignParams,
) -> Result<Vec<TrialRecord>> {
    let wanted = spec.n as u64;
    if wanted > space.physical_len() {
        return Err(CoreError::NotEnoughSites { wanted, available: space.physical_len() });
    }
    let trial = |t: u64| -> Result<TrialRecord> {
        let seed = trial_seed(params.seed, t);
        let faults = sample_faults(space, spec.n, seed)?;
        let (raw, outcome) = evaluate(engine, &faults)?;
        let repeat = repeat_of(t, params.trials, params.repeats);
        Ok(TrialRecord::new(t, seed, repeat, spec, &faults, &raw, &outcome))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(params.workers.max(1))
        .build()
        .map_err(|e| CoreError::InvalidSpec(format!("thread pool: {e}")))?;
    pool.install(|| (0..params.trials).into_par_iter().map(trial).collect())
}
