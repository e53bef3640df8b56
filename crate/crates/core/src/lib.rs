//! Safeguarded stochastic Polyak step sizes for nonsmooth convex finite sums.
//!
//! The crate provides the two benchmark losses ([`problems`]), the family of
//! adaptive step-size rules ([`step_rules`]), the subgradient and momentum
//! optimizers they drive ([`optimizers`]), reference solutions and bound
//! checks ([`analysis`]), and a seeded experiment harness ([`harness`]) with a
//! command-line front end ([`cli`]).

pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod optimizers;
pub mod problems;
pub mod step_rules;
pub mod verify;

pub use error::{Error, Result};
pub use optimizers::{ImaState, LambdaSchedule, OptimizerKind, SsmState};
pub use problems::{Dataset, LossKind, LowerBounds, Problem};
pub use step_rules::{RuleConfig, RuleKind, RuleState, StepInput};
