//! Ground-truth stochastic simulation on sampled networks.

pub mod gillespie;
pub mod network;
pub mod sum_tree;

pub use gillespie::{average_runs, simulate_gillespie, MonteCarlo, Simulation};
pub use network::{generate_configuration_network, Network};
