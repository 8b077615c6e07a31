//! Voltage-stability analysis for DER controllers on radial distribution feeders.
//!
//! The pipeline runs feeder -> LinDistFlow sensitivities -> placement
//! selectors -> open-loop and reduced state space -> closed loop, then
//! assesses stability with eigenvalues and Gershgorin discs, derives a
//! polytope of stabilizing gains with its Chebyshev ball, and checks the
//! result with quasi-steady-state simulation.

pub mod error;
pub mod lp;
pub mod netmodel;
pub mod placement;
pub mod powerflow;
pub mod region;
pub mod sim;
pub mod stability;
pub mod sysbuild;

pub use error::{Error, Result};
