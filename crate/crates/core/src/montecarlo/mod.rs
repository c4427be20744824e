//! Deterministic Monte Carlo studies over the built-in designs.
//!
//! Replication `r` draws its sample from a stream seeded by
//! `rep_seed(base_seed, r)`, so every replication can be recomputed in
//! isolation and results do not depend on how work is scheduled.

pub mod output;
pub mod rng;
pub mod sample;
mod study;

pub use rng::{rep_seed, NormalStream, SplitMix64};
pub use sample::sample_design;
pub use study::{
    ks_distance, run_replication, run_study, run_study_with, weights_dump, Execution,
    FamilySummary, RepStatus, ReplicationRecord, StudyConfig, StudyFailure, StudySummary,
};
