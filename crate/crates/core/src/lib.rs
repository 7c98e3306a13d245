//! Budget-conscious Deep Dyna-Q for act-level task-oriented dialogue.
//!
//! A fixed budget of real interactions is scheduled over training epochs,
//! spent on actively sampled user goals, and routed between expert
//! demonstrations, agent-user dialogues, and world-model simulation.

pub mod agent;
pub mod artifacts;
pub mod bcs;
pub mod domain;
pub mod env;
pub mod error;
pub mod expert;
pub mod harness;
pub mod kb;
pub mod nn;
pub mod render;
pub mod schema;
pub mod simulator;
pub mod transcript;
pub mod world_model;

pub use error::{Error, Result};
