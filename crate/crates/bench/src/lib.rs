//! Shared fixtures for the benchmarks.

use gaitlab_core::{GaitParams, LinearizationConfig, PhysicalParams};
use nalgebra::Vector6;

pub struct Fixture {
    pub physical: PhysicalParams,
    pub gait: GaitParams,
    pub linearization: LinearizationConfig,
    pub theta1_dot: f64,
}

/// Reference robot walking the default gait, linearized at `kappa = -0.5`.
pub fn reference() -> Fixture {
    let gait = GaitParams::reference();
    Fixture {
        physical: PhysicalParams::reference(),
        linearization: LinearizationConfig::from_kappa(-0.5, gait.beta),
        gait,
        theta1_dot: 0.8,
    }
}

/// A representative reduced state for propagation benchmarks.
pub fn sample_state() -> Vector6<f64> {
    Vector6::new(0.05, -0.05, 0.4, 0.8, -0.6, 1.2)
}
