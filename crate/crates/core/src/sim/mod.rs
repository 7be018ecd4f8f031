//! Deterministic discrete-event simulation of two peers.
//!
//! Each peer talks to the other only through encoded bytes carried by two
//! simulated links per direction: a lossy datagram channel for pointer
//! updates and a reliable ordered stream for everything else. Time is
//! virtual, every random draw comes from a seeded stream, and the event
//! queue breaks ties by insertion order, so a run is a pure function of the
//! scenario, its seed and the options.

mod channel;
mod queue;
mod runner;
mod scenario;

use thiserror::Error;

pub use channel::{
    inject_loss_pattern, ms_to_us, ChannelConfig, DatagramFate, DropRule, ReliableChannel, UnreliableChannel,
};
pub use queue::EventQueue;
pub use runner::{run, run_with, AssertionFailure, RunOptions, SimOutcome};
pub use scenario::{
    Action, Assertion, KindSpec, MeshSpec, NetworkSpec, PeerName, PoseSpec, PropertiesSpec, Scenario, ShapeName,
    TimedAction,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("unknown {kind} label {label:?}")]
    UnknownLabel { kind: &'static str, label: String },
    #[error("{} assertion(s) failed", .0.len())]
    AssertionFailed(Vec<AssertionFailure>),
}
