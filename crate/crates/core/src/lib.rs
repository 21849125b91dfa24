//! Two-stage scheduling of operating rooms and anesthesiologists under
//! uncertain surgery durations.

pub mod dro_solver;
pub mod evaluation;
pub mod instance;
pub mod milp_adapter;
pub mod model_core;
pub mod scenario;
pub mod sp_solver;
