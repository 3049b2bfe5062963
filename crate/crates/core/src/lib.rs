//! Fault injection on top of the interpreter: site enumeration and
//! sampling, trial execution, outcome classification with taint-based SDC
//! attribution, vulnerability analytics and an exhaustive oracle.

pub mod analytics;
pub mod campaign;
pub mod classify;
pub mod config;
pub mod error;
pub mod fixtures;
pub mod inject;
pub mod oracle;
pub mod record;
pub mod report;
pub mod rng;
pub mod sites;
pub mod spec;
pub mod taint;

pub use analytics::{
    approx_mvf, approx_mvf_values, bit_sweep, ivf_table, layer_vulnerability, multi_fault_curve, mvf,
    operator_vulnerability, Counts, IvfEntry, MvfEstimate, MvfSummary,
};
pub use campaign::{evaluate, run_campaign, CampaignParams};
pub use classify::{classify, Outcome, OutcomeKind, SdcCause};
pub use error::{CoreError, Result};
pub use inject::{Engine, Limits, RawTrialResult};
pub use oracle::{compare, exact_pairwise, exact_single, ExactResult};
pub use record::TrialRecord;
pub use sites::{enumerate_sites, sample_faults, SiteSpace};
pub use spec::{BitPolicy, FaultSite, FaultSpec, Filters, Mode, Target};
