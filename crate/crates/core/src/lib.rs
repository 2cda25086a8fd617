//! Benchmark harness for deep-feature contactless fingerprint presentation
//! attack detection.
//!
//! The pipeline ingests per-sample embeddings produced by a frozen backbone,
//! trains a linear SVM under a leave-one-out protocol over presentation attack
//! instrument (PAI) species, and scores the held-out species with ISO/IEC
//! 30107-3 metrics (APCER, BPCER, D-EER, BPCER at fixed APCER, DET curves).
//!
//! Module map:
//!
//! * [`manifest`]: sample records, labels and the manifest CSV.
//! * [`embedding`]: backbone catalogue and the `PDBE` embedding file format.
//! * [`svm`]: feature standardization and the dual coordinate-descent SVM.
//! * [`protocol`]: the four leave-one-out cases and per-case runs.
//! * [`metrics`]: APCER/BPCER, DET staircase, D-EER and averages.
//! * [`report`]: benchmark orchestration, rendering and CSV outputs.
//! * [`synthetic`]: seeded Gaussian datasets for tests and demos.
//! * [`exec`]: data-parallel helpers with a sequential fallback.

pub mod embedding;
pub mod error;
pub mod exec;
pub mod fsutil;
pub mod manifest;
pub mod metrics;
pub mod protocol;
pub mod reference;
pub mod report;
pub mod svm;
pub mod synthetic;

pub use error::{Error, Result};
