//! Data-driven replacements for the analytical substructure.

pub mod lr;
pub mod rnn;
