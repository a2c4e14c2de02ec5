//! Deterministic discrete-event simulator for the optbft protocols.
//!
//! A [`Scenario`] fixes the parameters, delay model, adversary and seed; [`run`]
//! replays it to completion and returns [`Metrics`] plus safety verdicts. The
//! same scenario and seed always produce byte-identical output.

pub mod delay;
pub mod explore;
pub mod metrics;
pub mod monitor;
pub mod scenario;
pub mod sim;
pub mod wire;

pub use delay::{DelayModel, Links};
pub use metrics::{Metrics, Record, Summary};
pub use scenario::{Behavior, Protocol, Scenario, ScenarioError, World};
pub use sim::{run, run_with, RunOptions, RunOutput};
