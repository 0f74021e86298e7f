//! Whole-node utilization monitoring for shared HPC clusters.
//!
//! The pipeline has three stages, each usable on its own:
//!
//! 1. [`collect`] parses scheduler-shaped text inputs (node table, job
//!    table, per-node GPU CSV) into a [`collect::ClusterView`].
//! 2. [`cli`] renders a view as one of five reports (per-user, all-users,
//!    top nodes, node detail, machine-readable TSV).
//! 3. [`archive`] + [`analyze`] persist 15-minute TSV snapshots and turn a
//!    week of them into top-10 node-hour reports and notification drafts.
//!
//! [`sim`] generates deterministic synthetic clusters so the whole chain
//! can be exercised without scheduler access.

pub mod analyze;
pub mod archive;
pub mod cli;
pub mod collect;
pub mod model;
pub mod sim;
#[cfg(test)]
pub(crate) mod testutil;
