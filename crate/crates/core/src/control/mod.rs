//! Discrete-time models and integral feedback on node capacity.
//!
//! Plants are identified from simulator logs as ARX models, realised in
//! state space, checked for closed-loop stability via the spectral radius and
//! scored with a cost that trades tracking error against resource usage.

mod arx;
mod closed_loop;
mod controller;
mod model;

pub use arx::{controllable_canonical, fit_model, ArxFit, IoSample};
pub use closed_loop::{
    identify_plant, run_closed_loop, write_control_csv, ControlStepRecord, ControlTrace, Identification,
    IdentificationPlan,
};
pub use controller::{
    closed_loop_matrix, closed_loop_spectral_radius, is_stable, simulate_linear, spectral_radius, step_controller,
    tune_gain_grid, CandidateScore, ControllerConfig, ControllerStep, LinearRun, Output, TuneResult, TuneScenario,
};
pub use model::LinearModel;
