//! Backward-built sampling graphs that store an approximate cost-to-go for
//! terminal-state optimal control problems, with cheap re-planning when
//! obstacles or control limits change and a value-driven feedback controller.

pub mod builder;
pub mod cli;
pub mod controller;
pub mod dynamics;
pub mod error;
pub mod graph;
pub mod rewire;
pub mod systems;

pub use error::{Error, Result};
