//! Deterministic policy gradient with least-squares output-layer updates.
//!
//! The crate holds the networks and their gradient and least-squares updates, the bounded
//! quasi-Newton action search, the replay stores, two small control environments, and a
//! training harness with checkpoints.

pub mod agent;
pub mod bounded_qn;
pub mod envs;
pub mod error;
pub mod harness;
pub mod ls_update;
pub mod network;
pub mod numerics;
pub mod replay;

pub use agent::{ActionMode, AgentState};
pub use bounded_qn::{BoxBounds, QnConfig};
pub use envs::{EnvKind, Environment};
pub use error::{Error, Result};
pub use harness::{Checkpoint, LearningCurve, Profile, Trainer, TrainConfig};
