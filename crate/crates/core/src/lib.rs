//! Virtual real-time hybrid simulation of a braced single-storey frame.
//!
//! The analytical substructure (frame mass, stiffness and damping) is
//! integrated explicitly, or replaced by a regression or recurrent
//! surrogate. The experimental substructure is a virtual actuator driving
//! a linear-elastic brace, with optional adaptive delay compensation.

pub mod compensation;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod evaluation;
pub mod history;
pub mod integrator;
pub mod lstsq;
pub mod output;
pub mod par;
pub mod plant;
pub mod runner;
pub mod scenario;
pub mod signal;
pub mod surrogate;

pub use error::{Error, Result};
