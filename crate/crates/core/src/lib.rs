//! Coupled dictionary learning for MIMO radar array extrapolation.
//!
//! A dictionary pair learned on coupled measurements of a small and a large
//! uniform linear array predicts the large array's snapshots from the small
//! array alone; MUSIC on the prediction then resolves targets the small array
//! cannot.

pub mod coupled_dict;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod music;
pub mod prediction;
pub mod radar_model;
pub mod rng;
pub mod sparse_coding;

pub use error::{Error, Result};
