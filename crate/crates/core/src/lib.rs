//! Model-predictive control synthesised from a converter netlist.
//!
//! The pipeline: parse a netlist and compile it into a switched state-space
//! model ([`netlist`]), turn phase-shift commands into switching timelines
//! ([`modulation`]), integrate with reference solvers ([`solver`]), learn a
//! residual-corrected Euler predictor ([`surrogate`]), score predicted cycles
//! with a priority-gated cost ([`objectives`]) and search commands with a
//! sufficient-decrease simplex method ([`optimizer`]) inside a closed loop
//! ([`control`]).

pub mod control;
pub mod dab;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod modulation;
pub mod netlist;
pub mod objectives;
pub mod optimizer;
pub mod solver;
pub mod surrogate;
pub mod switch_state;

pub use error::{Error, Result};
pub use switch_state::SwitchState;
