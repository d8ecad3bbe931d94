//! Feasible-region identification of task parameters in multirobot systems
//! driven by control-barrier-function quadratic programs.

pub mod cli;
pub mod controller;
pub mod linalg;
pub mod observer;
pub mod polytope;
pub mod sim;
pub mod ukf;
