//! Certified robustness of partition-trained tabular policy ensembles
//! against trajectory poisoning.
//!
//! The pipeline: hash-partition an offline dataset, train one tabular
//! subpolicy per partition, aggregate the subpolicies by voting over the
//! current state or a window of recent states, then certify how many
//! poisoned trajectories each decision (and the cumulative reward) tolerates.

pub mod aggregation;
pub mod certify;
pub mod env;
pub mod error;
pub mod fixtures;
pub mod model;
pub mod oracle;
pub mod partition;
pub mod protocol;
pub mod registry;
pub mod suite;

pub use aggregation::{AggregationResult, Protocol};
pub use error::{CoreError, Result};
pub use model::{
    ActionId, CertificationRecord, Dataset, Ensemble, StateHistory, StateId, TabularSubpolicy, Trajectory, Transition,
};
