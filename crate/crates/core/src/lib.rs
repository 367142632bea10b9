pub mod cli;
pub mod consistency;
pub mod eval;
pub mod features;
pub mod signal;
pub mod solver;
pub mod tracker;
