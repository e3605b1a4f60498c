//! Credit-default mining.
//!
//! Historical (offline) account summaries are scored with an Extremely
//! Randomized Trees ensemble to obtain a per-account default prior. Live
//! (online) transactions are checked against standard rules and mitigated by
//! customer-specific causes; the resulting online risk is fused with the
//! carried offline risk and rolled forward transaction by transaction.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`ingest`] reads the Taiwan-schema source CSV.
//! * [`decompose`] turns it into monthly offline/online batches.
//! * [`extra_trees`] is the classifier and its cross-validation harness.
//! * [`rules`] is the standard/customer-specific rule engine.
//! * [`orchestrator`] keeps per-account risk state and runs the batches.
//! * [`metrics`] and [`bench`] evaluate and time the pipeline.
//! * [`cli`] wires everything behind a single configuration file.

pub mod bench;
pub mod cli;
pub mod decompose;
pub mod exec;
pub mod extra_trees;
pub mod ingest;
pub mod metrics;
pub mod orchestrator;
pub mod rng;
pub mod rules;
pub mod synth;

pub use exec::Execution;
