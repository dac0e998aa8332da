//! Perplexity, forget-set likelihood, the sensitive-pattern detector,
//! behavioural probes and the capacity comparison.

mod capacity;
mod detect;
mod nll;
mod probe;
mod report;

pub use capacity::{compare_capacity, CapacityReport, CapacityRow};
pub use detect::{detect_sensitive, normalize};
pub use nll::{mean_nll, nll_sum, perplexity};
pub use probe::{
    probe_emission_rate, Probe, ProbeCategory, ProbeOutcome, ProbeSuite, Transcript, MIN_BENIGN, MIN_SENSITIVE,
};
pub use report::{evaluate, EvalInputs, EvalReport};
