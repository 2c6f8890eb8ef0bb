//! Simulator and experiment harness for the contact-tracing race on trees.
//!
//! An infection spreads over a randomly growing tree while a single tracer
//! queries one exposed node per step. The crate provides the process itself
//! ([`contagion`], [`policy`], [`engine`]), closed-form thresholds
//! ([`bounds`]), Chernoff-style confidence procedures ([`stats`]), grid
//! experiments ([`harness`], [`report`]) and tabular Q-learning over
//! truncated partial states ([`qlearn`]).

pub mod bounds;
pub mod contagion;
pub mod engine;
pub mod error;
pub mod harness;
pub mod policy;
pub mod qlearn;
pub mod report;
pub mod rng;
pub mod stats;

pub use contagion::{Instance, InfectionTree, NodeId, NodeParams, ParamDistribution};
pub use engine::{run_batch, run_trial, BatchSummary, Thresholds, Trial, TrialConfig, TrialOutcome, TrialState};
pub use error::{Error, Result};
pub use policy::{Frontier, FrontierEntry, PolicyKind};
