//! Public Investment Game engine with imitation-learned participant models
//! and a graph-network redistribution mechanism trained in self-play to win
//! participant votes.

pub mod cohort;
pub mod config;
pub mod dataset;
pub mod error;
pub mod game;
pub mod mechanism;
pub mod metagame;
pub mod participant;
pub mod pipeline;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod selfplay;

pub use error::{Error, Result};
