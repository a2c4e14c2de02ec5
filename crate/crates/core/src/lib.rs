//! State machines for signature-free optimistic reliable broadcast,
//! erasure-coded broadcast and dispersal, and DAG-based atomic broadcast.
//!
//! Every protocol object here is I/O free: callers feed in messages and
//! collect the messages to send and any outputs. Nothing reads a clock or a
//! random source.

pub mod avid;
pub mod balanced;
pub mod coding;
pub mod quorum;
pub mod rbc;
pub mod sailfish;
pub mod types;

pub use quorum::{avid_thresholds, max_opt_faults, rbc_thresholds, ParamsError, SystemParams, ThresholdSet};
pub use types::{Delivery, Digest, InstanceId, LatencyClass, PartyId, Step, Violation, ViolationKind};
