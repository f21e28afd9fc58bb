pub mod adversary;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod offline;
pub mod online;
pub mod par;
pub mod robust_stats;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
