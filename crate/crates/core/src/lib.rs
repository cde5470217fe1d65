//! Simulation and closed-form gait prediction for a planar kneed biped whose
//! links all balance about the hip.
//!
//! * [`biped`]: exact six-coordinate constrained dynamics and impact map.
//! * [`controller`]: target output trajectories and output-tracking torques.
//! * [`sim`]: fixed-step hybrid simulation of the nonlinear model.
//! * [`clred`]: the controlled linearized reduced model and walkability
//!   determination without numerical integration.

pub mod biped;
pub mod clred;
pub mod controller;
pub mod error;
pub mod params;
pub mod record;
pub mod sim;

pub use biped::{ConstraintForces, FullState};
pub use clred::{
    build_state_space, walkability, ClredPredictor, ImpactState, LinearizationConfig, LinearizedSystem,
    ReducedState, WalkabilityReport,
};
pub use controller::{compute_coeffs, desired_output, TrajectoryCoeffs};
pub use error::{GaitError, Result};
pub use params::{GaitParams, PhysicalParams};
pub use record::{steady_descriptors, FailureKind, SettlingSchedule, StepFailure, StepRecord, TerrainProfile};
pub use sim::{run_gait, GaitRun, GaitTrace, SimConfig};
