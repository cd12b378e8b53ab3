//! Adaptive scheduling for heterogeneous dataflow pipelines.
//!
//! The crate is organized around a closed control loop over a simulated
//! cluster: `sim` runs the pipeline and emits windowed metrics, `observe`
//! turns those metrics into sustainable per-instance capacity estimates,
//! `adapt` clusters the workload and tunes operator configurations under a
//! device-memory constraint, and `sched` solves a mixed-integer program for
//! parallelism, placement, flow routing, and rolling configuration updates.
//! `model` holds the shared domain types and `scenario` the on-disk format
//! that describes an experiment.

pub mod adapt;
pub mod gp;
pub mod model;
pub mod observe;
pub mod par;
pub mod scenario;
pub mod sched;
pub mod sim;
