//! Output-tracking controller: target trajectories for the hip and swing-knee
//! relative angles and the torques that impose `y'' = v`.
//!
//! The hip output follows a quintic that starts at `-alpha` with the actual
//! post-impact relative velocity, so no feedback terms are needed; the swing
//! knee flexes by `gamma` along a `sin^3` bump.

use std::f64::consts::PI;

use nalgebra::{Matrix2, SMatrix, Vector2, Vector3, Vector6};

use crate::biped::{ConstrainedDynamics, ConstraintForces};
use crate::clred::LinearizedSystem;
use crate::error::{invalid, GaitError, Result};
use crate::params::{GaitParams, PhysicalParams};

/// Selects `y = (th2 - th3, th3 - th4)` from the full coordinates.
pub fn output_map() -> SMatrix<f64, 2, 6> {
    SMatrix::<f64, 2, 6>::from_row_slice(&[
        0.0, 0.0, 0.0, 1.0, -1.0, 0.0, //
        0.0, 0.0, 0.0, 0.0, 1.0, -1.0,
    ])
}

pub fn output(q: &Vector6<f64>) -> Vector2<f64> {
    output_map() * q
}

/// Quintic coefficients of one step's hip trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryCoeffs {
    /// `a[k]` multiplies `t^k`.
    pub a: [f64; 6],
    /// Pre-impact angular velocity the coefficients were built from [rad/s].
    pub theta1_minus: f64,
    /// Settling time the coefficients reach the target at [s].
    pub t_set: f64,
}

pub fn compute_coeffs(gait: &GaitParams, xi: f64, theta1_minus: f64) -> Result<TrajectoryCoeffs> {
    let t = gait.settling_time();
    if !(t.is_finite() && t > 0.0) {
        return Err(invalid("t_set", format!("must be > 0, got {t}")));
    }
    let alpha = gait.alpha;
    let c = (xi - 1.0) * theta1_minus;
    let a5 = (12.0 * alpha - 3.0 * c * t) / t.powi(5);
    let a4 = (-30.0 * alpha + 8.0 * c * t) / t.powi(4);
    let a3 = (20.0 * alpha - 6.0 * c * t) / t.powi(3);
    Ok(TrajectoryCoeffs {
        a: [-alpha, c, 0.0, a3, a4, a5],
        theta1_minus,
        t_set: t,
    })
}

impl TrajectoryCoeffs {
    /// Hip output value, rate and acceleration of the quintic at `t`.
    pub fn quintic(&self, t: f64) -> (f64, f64, f64) {
        let a = &self.a;
        let y = a[0] + t * (a[1] + t * (a[2] + t * (a[3] + t * (a[4] + t * a[5]))));
        let yd = a[1] + t * (2.0 * a[2] + t * (3.0 * a[3] + t * (4.0 * a[4] + t * 5.0 * a[5])));
        let ydd = 2.0 * a[2] + t * (6.0 * a[3] + t * (12.0 * a[4] + t * 20.0 * a[5]));
        (y, yd, ydd)
    }
}

/// Desired output with its first two time derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesiredOutput {
    pub y: Vector2<f64>,
    pub ydot: Vector2<f64>,
    pub yddot: Vector2<f64>,
}

pub fn desired_output(gait: &GaitParams, coeffs: &TrajectoryCoeffs, t: f64) -> DesiredOutput {
    let tset = coeffs.t_set;
    if t > tset {
        return DesiredOutput {
            y: Vector2::new(gait.alpha, -gait.beta),
            ydot: Vector2::zeros(),
            yddot: Vector2::zeros(),
        };
    }
    let (h, hd, hdd) = coeffs.quintic(t);
    let w = PI / tset;
    let (s, c) = (w * t).sin_cos();
    let k = -gait.beta - gait.gamma * s * s * s;
    let kd = -3.0 * gait.gamma * w * s * s * c;
    let kdd = -3.0 * gait.gamma * w * w * s * (2.0 * c * c - s * s);
    DesiredOutput {
        y: Vector2::new(h, k),
        ydot: Vector2::new(hd, kd),
        yddot: Vector2::new(hdd, kdd),
    }
}

/// Torques of the full model that produce `y'' = v`, with the locked stance
/// knee's `u1` held at zero. Returns the torques together with the resulting
/// accelerations and contact forces.
///
/// The constrained dynamics are affine in `u`, so the map is recovered from
/// the drift and two unit probes on the hip and swing-knee torques.
pub fn control_input_full_with_response(
    dynamics: &ConstrainedDynamics,
    v: &Vector2<f64>,
) -> Result<(Vector3<f64>, Vector6<f64>, ConstraintForces)> {
    let sel = output_map();
    let (drift, _) = dynamics.solve(&Vector3::zeros());
    let (hip, _) = dynamics.solve(&Vector3::new(0.0, 1.0, 0.0));
    let (knee, _) = dynamics.solve(&Vector3::new(0.0, 0.0, 1.0));
    let y0 = sel * drift;
    let decoupling = Matrix2::from_columns(&[sel * hip - y0, sel * knee - y0]);
    let det = decoupling.determinant();
    if !det.is_finite() || det.abs() < 1e-12 {
        return Err(GaitError::Degenerate(format!(
            "output decoupling matrix is singular (det = {det:e})"
        )));
    }
    let w = decoupling
        .lu()
        .solve(&(v - y0))
        .ok_or_else(|| GaitError::Degenerate("output decoupling matrix is singular".into()))?;
    let u = Vector3::new(0.0, w[0], w[1]);
    let (qddot, forces) = dynamics.solve(&u);
    Ok((u, qddot, forces))
}

pub fn control_input_full(
    p: &PhysicalParams,
    q: &Vector6<f64>,
    qdot: &Vector6<f64>,
    v: &Vector2<f64>,
) -> Result<Vector3<f64>> {
    let dynamics = ConstrainedDynamics::new(p, q, qdot)?;
    control_input_full_with_response(&dynamics, v).map(|(u, _, _)| u)
}

/// Hip and swing-knee torques of the linearized reduced model achieving
/// `y'' = v` at reduced configuration `qbar = (th2, th3, th4)`.
pub fn control_input_reduced(
    linsys: &LinearizedSystem,
    qbar: &Vector3<f64>,
    v: &Vector2<f64>,
) -> Vector2<f64> {
    let s = linsys.actuation;
    let minv = linsys.mass_inverse;
    let w = s.transpose() * minv * s;
    let rhs = v + s.transpose() * minv * (linsys.gravity_gradient * qbar + linsys.gravity_offset);
    w.lu().solve(&rhs).expect("S^T M^-1 S is positive definite")
}
