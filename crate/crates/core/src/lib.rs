//! Head-movement prediction for panoramic video with a deep reinforcement
//! learning agent that imitates viewer scanpaths.
//!
//! The pipeline: [`pandata`] renders viewports and heat maps, [`net`] is the
//! conv-LSTM actor-critic, [`agent`] runs one workflow, [`train`] learns
//! from many, [`offline`] turns workflows into HM maps, [`online`] adapts
//! to one viewer frame by frame, and [`metrics`] scores the results.

pub mod agent;
pub mod config;
pub mod error;
pub mod metrics;
pub mod net;
pub mod offline;
pub mod online;
pub mod pandata;
pub mod reward;
pub mod rng;
pub mod sphere;
pub mod train;

pub use error::{Error, Result};
