//! Approximate master equations for multistate contact processes on networks,
//! their lumped reductions, and a Gillespie simulator for ground truth.

pub mod cells;
pub mod cli;
pub mod clustering;
pub mod error;
pub mod lumped;
pub mod full;
pub mod model;
pub mod neighborhood;
pub mod netsim;
pub mod numeric;
pub mod ode;
pub mod rate;
pub mod solve;
pub mod trajectory;

pub use error::{Error, Result};
