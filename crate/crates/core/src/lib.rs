//! Distributed adaptive output consensus for heterogeneous nonlinear agents
//! whose control directions are unknown and may differ in sign.
//!
//! - [`graph`]: communication digraphs, Laplacians and topology checks
//! - [`agents`]: passive-like SISO plant models
//! - [`control`]: Nussbaum gains and the consensus protocols
//! - [`sim`]: closed-loop RK4 simulation and convergence metrics
//! - [`cli`]: scenario files, assumption checks and run artifacts

pub mod agents;
pub mod cli;
pub mod control;
pub mod graph;
pub mod sim;
