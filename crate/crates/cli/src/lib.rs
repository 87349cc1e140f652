//! Experiment drivers behind the `aqf` command: workload generation,
//! adaptation traces with frozen-filter FPR probes, churn, adversarial
//! replay and CSV reporting.

pub mod adversary;
pub mod experiment;
pub mod report;
pub mod workload;

pub use adversary::{run_adversary, AdversaryConfig, AdversaryReport};
pub use experiment::{
    instantaneous_fpr, run_adaptation_trace, run_churn, ChurnConfig, Prefilled, ProbeConfig, TraceConfig,
};
pub use report::TraceRow;
pub use workload::{gen_workload, Dist, KeyGen};
