//! Exact nonlinear model of the planar six-coordinate kneed biped.
//!
//! Generalized coordinates are `q = (x, z, th1, th2, th3, th4)`: the stance
//! foot position followed by the absolute link angles (stance lower leg,
//! stance thigh, swing thigh, swing lower leg), all measured from the upward
//! vertical.

use nalgebra::{SMatrix, SVector, Vector2, Vector3, Vector6, LU, U9};

use crate::error::{GaitError, Result};
use crate::params::{GaitParams, PhysicalParams};

pub type Matrix6 = SMatrix<f64, 6, 6>;

/// Tolerance on the knee-lock and foot-height preconditions of [`impact_map`].
pub const IMPACT_TOLERANCE: f64 = 1e-6;

/// Position, velocity and phase time of the full model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullState {
    pub q: Vector6<f64>,
    pub qdot: Vector6<f64>,
    /// Time since the last impact [s].
    pub t: f64,
}

impl FullState {
    pub fn new(q: Vector6<f64>, qdot: Vector6<f64>) -> Self {
        Self { q, qdot, t: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qdot.iter()).all(|v| v.is_finite()) && self.t.is_finite()
    }
}

/// Stance-foot reaction forces and the stance-knee lock force, in the order of
/// the contact multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConstraintForces {
    pub fx: f64,
    pub fz: f64,
    pub knee_force: f64,
}

impl ConstraintForces {
    fn from_multipliers(l: &Vector3<f64>) -> Self {
        Self {
            fx: l[0],
            fz: l[1],
            knee_force: l[2],
        }
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.fx, self.fz, self.knee_force)
    }
}

pub fn mass_matrix(p: &PhysicalParams, q: &Vector6<f64>) -> Matrix6 {
    let m = p.total_mass();
    let (s1, c1) = q[2].sin_cos();
    let (s2, c2) = q[3].sin_cos();
    let c12 = (q[2] - q[3]).cos();
    let l2sq = p.l2 * p.l2;

    let mut mm = Matrix6::zeros();
    mm[(0, 0)] = m;
    mm[(1, 1)] = m;
    mm[(0, 2)] = m * p.l1 * c1;
    mm[(0, 3)] = m * p.l2 * c2;
    mm[(1, 2)] = -m * p.l1 * s1;
    mm[(1, 3)] = -m * p.l2 * s2;
    mm[(2, 2)] = m * p.l1 * p.l1 + p.i1;
    mm[(2, 3)] = m * p.l1 * p.l2 * c12;
    mm[(3, 3)] = (p.m1 + 2.0 * p.m2) * m * l2sq / (2.0 * p.m2) + p.i2;
    mm[(4, 4)] = p.m1 * m * l2sq / (2.0 * p.m2) + p.i2;
    mm[(5, 5)] = p.i1;
    for i in 0..6 {
        for j in 0..i {
            mm[(i, j)] = mm[(j, i)];
        }
    }
    mm
}

/// Velocity-product matrix `C(q, qdot)`; only the stance-leg angles couple.
pub fn velocity_matrix(p: &PhysicalParams, q: &Vector6<f64>, qdot: &Vector6<f64>) -> Matrix6 {
    let m = p.total_mass();
    let (s1, c1) = q[2].sin_cos();
    let (s2, c2) = q[3].sin_cos();
    let s12 = (q[2] - q[3]).sin();
    let (w1, w2) = (qdot[2], qdot[3]);

    let mut c = Matrix6::zeros();
    c[(0, 2)] = -m * p.l1 * w1 * s1;
    c[(0, 3)] = -m * p.l2 * w2 * s2;
    c[(1, 2)] = -m * p.l1 * w1 * c1;
    c[(1, 3)] = -m * p.l2 * w2 * c2;
    c[(2, 3)] = m * p.l1 * p.l2 * w2 * s12;
    c[(3, 2)] = -m * p.l1 * p.l2 * w1 * s12;
    c
}

pub fn gravity_vector(p: &PhysicalParams, q: &Vector6<f64>) -> Vector6<f64> {
    let mg = p.total_mass() * p.g;
    Vector6::new(0.0, mg, -mg * p.l1 * q[2].sin(), -mg * p.l2 * q[3].sin(), 0.0, 0.0)
}

/// Maps the joint torques `(u1, u2, u3)` (stance knee, hip, swing knee) to
/// generalized forces.
pub fn actuation_matrix() -> SMatrix<f64, 6, 3> {
    SMatrix::<f64, 6, 3>::from_row_slice(&[
        0.0, 0.0, 0.0, //
        0.0, 0.0, 0.0, //
        1.0, 0.0, 0.0, //
        -1.0, 1.0, 0.0, //
        0.0, -1.0, 1.0, //
        0.0, 0.0, -1.0,
    ])
}

/// Stance contact and stance-knee lock: `xdot = zdot = 0`, `th1dot = th2dot`.
pub fn constraint_jacobian() -> SMatrix<f64, 3, 6> {
    SMatrix::<f64, 3, 6>::from_row_slice(&[
        1.0, 0.0, 0.0, 0.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, 0.0, 0.0, 0.0, //
        0.0, 0.0, 1.0, -1.0, 0.0, 0.0,
    ])
}

/// Contact and knee-lock Jacobian of the landing foot, evaluated before the
/// legs are relabeled.
pub fn impact_jacobian(p: &PhysicalParams, q: &Vector6<f64>) -> SMatrix<f64, 4, 6> {
    let (s1, c1) = q[2].sin_cos();
    let (s2, c2) = q[3].sin_cos();
    let (s3, c3) = q[4].sin_cos();
    let (s4, c4) = q[5].sin_cos();
    let (l1, l2) = (p.l1, p.l2);
    SMatrix::<f64, 4, 6>::from_row_slice(&[
        1.0, 0.0, l1 * c1, l2 * c2, -l2 * c3, -l1 * c4, //
        0.0, 1.0, -l1 * s1, -l2 * s2, l2 * s3, l1 * s4, //
        0.0, 0.0, 1.0, -1.0, 0.0, 0.0, //
        0.0, 0.0, 0.0, 0.0, 1.0, -1.0,
    ])
}

/// Factorized constrained dynamics at one `(q, qdot)`.
///
/// The KKT matrix depends only on `q`, so one factorization serves every
/// torque input; this is what makes the affine torque map cheap to probe.
pub struct ConstrainedDynamics {
    kkt: LU<f64, U9, U9>,
    bias: Vector6<f64>,
}

impl ConstrainedDynamics {
    pub fn new(p: &PhysicalParams, q: &Vector6<f64>, qdot: &Vector6<f64>) -> Result<Self> {
        let mm = mass_matrix(p, q);
        let jc = constraint_jacobian();
        let mut kkt = SMatrix::<f64, 9, 9>::zeros();
        kkt.fixed_view_mut::<6, 6>(0, 0).copy_from(&mm);
        kkt.fixed_view_mut::<6, 3>(0, 6).copy_from(&(-jc.transpose()));
        kkt.fixed_view_mut::<3, 6>(6, 0).copy_from(&jc);
        let kkt = kkt.lu();
        if !kkt.is_invertible() {
            return Err(GaitError::Degenerate("singular contact KKT system".into()));
        }
        let bias = velocity_matrix(p, q, qdot) * qdot + gravity_vector(p, q);
        Ok(Self { kkt, bias })
    }

    /// Accelerations and contact multipliers under joint torques `u`.
    pub fn solve(&self, u: &Vector3<f64>) -> (Vector6<f64>, ConstraintForces) {
        let rhs6 = actuation_matrix() * u - self.bias;
        let mut rhs = SVector::<f64, 9>::zeros();
        rhs.fixed_rows_mut::<6>(0).copy_from(&rhs6);
        let sol = self
            .kkt
            .solve(&rhs)
            .expect("factorization checked invertible at construction");
        let qddot = sol.fixed_rows::<6>(0).into_owned();
        let lambda = sol.fixed_rows::<3>(6).into_owned();
        (qddot, ConstraintForces::from_multipliers(&lambda))
    }
}

/// Accelerations and contact forces of the model with the stance foot pinned
/// and the stance knee locked.
pub fn constrained_accel(
    p: &PhysicalParams,
    q: &Vector6<f64>,
    qdot: &Vector6<f64>,
    u: &Vector3<f64>,
) -> Result<(Vector6<f64>, ConstraintForces)> {
    Ok(ConstrainedDynamics::new(p, q, qdot)?.solve(u))
}

/// Swing-foot position `(xbar, zbar)` in world coordinates.
pub fn swing_foot_position(p: &PhysicalParams, q: &Vector6<f64>) -> Vector2<f64> {
    let (s1, c1) = q[2].sin_cos();
    let (s2, c2) = q[3].sin_cos();
    let (s3, c3) = q[4].sin_cos();
    let (s4, c4) = q[5].sin_cos();
    Vector2::new(
        q[0] + p.l1 * s1 + p.l2 * s2 - p.l2 * s3 - p.l1 * s4,
        q[1] + p.l1 * c1 + p.l2 * c2 - p.l2 * c3 - p.l1 * c4,
    )
}

/// Hip position; it coincides with the whole-body center of mass.
pub fn hip_position(p: &PhysicalParams, q: &Vector6<f64>) -> Vector2<f64> {
    Vector2::new(
        q[0] + p.l1 * q[2].sin() + p.l2 * q[3].sin(),
        q[1] + p.l1 * q[2].cos() + p.l2 * q[3].cos(),
    )
}

pub fn kinetic_energy(p: &PhysicalParams, q: &Vector6<f64>, qdot: &Vector6<f64>) -> f64 {
    0.5 * qdot.dot(&(mass_matrix(p, q) * qdot))
}

pub fn potential_energy(p: &PhysicalParams, q: &Vector6<f64>) -> f64 {
    p.total_mass() * p.g * hip_position(p, q)[1]
}

/// Velocity ratio across impact, `N1 / D1`.
pub fn xi_coefficient(p: &PhysicalParams, gait: &GaitParams) -> f64 {
    let m = p.total_mass();
    let (m1, m2, l1, l2) = (p.m1, p.m2, p.l1, p.l2);
    let cb = gait.beta.cos();
    let n1 = m1 * (m1 + m2) * l2 * l2
        + m2 * (p.i1 + p.i2)
        + m2 * m * gait.alpha.cos() * (l1 * l1 + l2 * l2 + 2.0 * l1 * l2 * cb);
    let d1 = (m1 + m2) * (m1 + 2.0 * m2) * l2 * l2
        + m2 * (m * l1 * l1 + p.i1 + p.i2)
        + 2.0 * m2 * m * l1 * l2 * cb;
    n1 / d1
}

/// Velocities right after a perfectly inelastic landing, before relabeling.
///
/// Solves the momentum balance together with the four post-impact velocity
/// constraints (landing foot pinned, both knees locked).
pub fn impact_velocities(
    p: &PhysicalParams,
    q: &Vector6<f64>,
    qdot: &Vector6<f64>,
) -> Result<(Vector6<f64>, nalgebra::Vector4<f64>)> {
    let mm = mass_matrix(p, q);
    let ji = impact_jacobian(p, q);
    let mut sys = SMatrix::<f64, 10, 10>::zeros();
    sys.fixed_view_mut::<6, 6>(0, 0).copy_from(&mm);
    sys.fixed_view_mut::<6, 4>(0, 6).copy_from(&(-ji.transpose()));
    sys.fixed_view_mut::<4, 6>(6, 0).copy_from(&ji);
    let mut rhs = SVector::<f64, 10>::zeros();
    rhs.fixed_rows_mut::<6>(0).copy_from(&(mm * qdot));
    let sol = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| GaitError::Degenerate("singular impact system".into()))?;
    Ok((
        sol.fixed_rows::<6>(0).into_owned(),
        sol.fixed_rows::<4>(6).into_owned(),
    ))
}

/// Exchanges stance and swing legs: the landing foot becomes the new stance
/// foot and `(th1, th2, th3, th4)` becomes `(th4, th3, th2, th1)`.
pub fn relabel(p: &PhysicalParams, q: &Vector6<f64>, qdot: &Vector6<f64>) -> FullState {
    let foot = swing_foot_position(p, q);
    FullState::new(
        Vector6::new(foot[0], foot[1], q[5], q[4], q[3], q[2]),
        Vector6::new(0.0, 0.0, qdot[5], qdot[4], qdot[3], qdot[2]),
    )
}

/// Inelastic impact followed by the stance/swing exchange.
///
/// `ground` is the world height of the surface the swing foot lands on.
pub fn impact_map(
    p: &PhysicalParams,
    gait: &GaitParams,
    q: &Vector6<f64>,
    qdot: &Vector6<f64>,
    ground: f64,
) -> Result<FullState> {
    let stance_knee = q[2] - q[3] - gait.beta;
    let swing_knee = q[4] - q[5] + gait.beta;
    if stance_knee.abs() > IMPACT_TOLERANCE || swing_knee.abs() > IMPACT_TOLERANCE {
        return Err(GaitError::InvalidImpact(format!(
            "knees not locked at beta (stance residual {stance_knee:.3e}, swing residual {swing_knee:.3e})"
        )));
    }
    let height = swing_foot_position(p, q)[1] - ground;
    if height.abs() > IMPACT_TOLERANCE {
        return Err(GaitError::InvalidImpact(format!(
            "swing foot is {height:.3e} m from the ground"
        )));
    }
    let (qdot_plus, _) = impact_velocities(p, q, qdot)?;
    Ok(relabel(p, q, &qdot_plus))
}

/// Post-impact velocity vector for a rigid pre-impact fall at `theta1_minus`.
pub fn post_impact_velocity(xi: f64, theta1_minus: f64) -> Vector6<f64> {
    Vector6::new(
        0.0,
        0.0,
        xi * theta1_minus,
        xi * theta1_minus,
        theta1_minus,
        theta1_minus,
    )
}
