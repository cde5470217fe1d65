//! Controlled linearized reduced model.
//!
//! With the stance foot pinned and the stance knee locked, the full model
//! reduces exactly to three coordinates `qbar = (th2, th3, th4)` with a
//! constant mass matrix. Linearizing the single gravity term about
//! `th2 = th2*` and substituting the output-tracking input yields an LTI
//! system whose step-to-step evolution is available in closed form: matrix
//! exponentials for the controlled phase, a hyperbolic solution for the rigid
//! fall, and a bisection for the landing instant.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix2, Matrix3, SMatrix, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::biped::{post_impact_velocity, xi_coefficient, FullState, Matrix6};
use crate::error::{invalid, GaitError, Result};
use crate::params::{GaitParams, PhysicalParams};
use crate::record::{FailureKind, SettlingSchedule, StepFailure, StepRecord, TerrainProfile};

/// Panels of the composite Gauss-Legendre rule over the settling interval.
/// Panel ends double as the sample times of the controlled-phase landing check.
pub const QUADRATURE_PANELS: usize = 64;
/// Gauss-Legendre nodes per panel.
pub const QUADRATURE_NODES: usize = 2 * GL_NODES.len();
/// Swing-foot height above the landing surface that arms landing detection [m].
pub const ARMING_THRESHOLD: f64 = 1e-3;
/// Longest rigid fall searched for a landing [s].
pub const FALL_HORIZON: f64 = 10.0;

#[allow(clippy::excessive_precision)]
const GL_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
#[allow(clippy::excessive_precision)]
const GL_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Reduced configuration and velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedState {
    pub q: Vector3<f64>,
    pub qdot: Vector3<f64>,
}

impl ReducedState {
    pub fn from_vector(x: &Vector6<f64>) -> Self {
        Self {
            q: x.fixed_rows::<3>(0).into_owned(),
            qdot: x.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.q[0], self.q[1], self.q[2], self.qdot[0], self.qdot[1], self.qdot[2])
    }

    pub fn from_full(s: &FullState) -> Self {
        Self {
            q: s.q.fixed_rows::<3>(3).into_owned(),
            qdot: s.qdot.fixed_rows::<3>(3).into_owned(),
        }
    }

    /// Full state with the stance foot at `(x, z)` and the stance knee at `beta`.
    pub fn to_full(&self, beta: f64, x: f64, z: f64) -> FullState {
        FullState::new(
            Vector6::new(x, z, self.q[0] + beta, self.q[0], self.q[1], self.q[2]),
            reduction_matrix() * self.qdot,
        )
    }
}

/// Expansion point of the gravity linearization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearizationConfig {
    /// Thigh angle the gravity term is expanded about [rad].
    pub theta2_star: f64,
    /// Ratio `theta2_star / beta` when constructed from one.
    pub kappa: Option<f64>,
}

impl LinearizationConfig {
    pub fn from_kappa(kappa: f64, beta: f64) -> Self {
        Self {
            theta2_star: kappa * beta,
            kappa: Some(kappa),
        }
    }

    pub fn at(theta2_star: f64) -> Self {
        Self {
            theta2_star,
            kappa: None,
        }
    }

    /// Expansion point for a gait; a kappa-based config tracks the gait's beta.
    pub fn expansion_point(&self, gait: &GaitParams) -> f64 {
        match self.kappa {
            Some(k) => k * gait.beta,
            None => self.theta2_star,
        }
    }
}

/// Maps reduced velocities to full velocities.
pub fn reduction_matrix() -> SMatrix<f64, 6, 3> {
    SMatrix::<f64, 6, 3>::from_row_slice(&[
        0.0, 0.0, 0.0, //
        0.0, 0.0, 0.0, //
        1.0, 0.0, 0.0, //
        1.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, //
        0.0, 0.0, 1.0,
    ])
}

/// Hip and swing-knee torque map of the reduced model.
pub fn reduced_actuation() -> SMatrix<f64, 3, 2> {
    SMatrix::<f64, 3, 2>::from_row_slice(&[1.0, 0.0, -1.0, 1.0, 0.0, -1.0])
}

/// Exact three-coordinate model: constant mass matrix plus one gravity term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedModel {
    pub mass: Matrix3<f64>,
    pub actuation: SMatrix<f64, 3, 2>,
    beta: f64,
    mgl1: f64,
    mgl2: f64,
}

pub fn reduce(p: &PhysicalParams, gait: &GaitParams) -> ReducedModel {
    let m = p.total_mass();
    let l2sq = p.l2 * p.l2;
    let m11 = m * p.l1 * p.l1
        + (p.m1 + 2.0 * p.m2) * m * l2sq / (2.0 * p.m2)
        + 2.0 * m * p.l1 * p.l2 * gait.beta.cos()
        + p.i1
        + p.i2;
    let m22 = p.m1 * m * l2sq / (2.0 * p.m2) + p.i2;
    ReducedModel {
        mass: Matrix3::from_diagonal(&Vector3::new(m11, m22, p.i1)),
        actuation: reduced_actuation(),
        beta: gait.beta,
        mgl1: m * p.g * p.l1,
        mgl2: m * p.g * p.l2,
    }
}

impl ReducedModel {
    /// First gravity component as a function of the stance thigh angle.
    pub fn gravity_component(&self, theta2: f64) -> f64 {
        -(self.mgl1 * (theta2 + self.beta).sin() + self.mgl2 * theta2.sin())
    }

    /// Derivative of [`Self::gravity_component`] with respect to `theta2`.
    pub fn gravity_slope(&self, theta2: f64) -> f64 {
        -(self.mgl1 * (theta2 + self.beta).cos() + self.mgl2 * theta2.cos())
    }

    pub fn gravity(&self, q: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(self.gravity_component(q[0]), 0.0, 0.0)
    }

    /// Reduced accelerations under hip and swing-knee torques.
    pub fn accel(&self, q: &Vector3<f64>, u: &Vector2<f64>) -> Vector3<f64> {
        let rhs = self.actuation * u - self.gravity(q);
        Vector3::new(rhs[0] / self.mass[(0, 0)], rhs[1] / self.mass[(1, 1)], rhs[2] / self.mass[(2, 2)])
    }
}

/// Gravity gradient `G` and affine offset `g_beta` of the tangent model.
pub fn linearize_gravity(
    p: &PhysicalParams,
    gait: &GaitParams,
    cfg: &LinearizationConfig,
) -> (Matrix3<f64>, Vector3<f64>) {
    let model = reduce(p, gait);
    let star = cfg.expansion_point(gait);
    let slope = model.gravity_slope(star);
    let mut gradient = Matrix3::zeros();
    gradient[(0, 0)] = slope;
    let offset = Vector3::new(model.gravity_component(star) - slope * star, 0.0, 0.0);
    (gradient, offset)
}

/// Convolution integrals of the exponential kernel over one settling interval.
///
/// The hip command is affine in the pre-impact velocity, so its integral is
/// stored as `eta2a + theta1_minus * eta2b`. Cumulative sums at each panel
/// end give the same integrals over `(0, k T / 64]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaIntegrals {
    pub t_set: f64,
    pub eta1: Vector6<f64>,
    pub eta2a: Vector6<f64>,
    pub eta2b: Vector6<f64>,
    pub eta3: Vector6<f64>,
    /// `partial[k]` integrates over `(0, (k + 1) T / QUADRATURE_PANELS]`,
    /// stored as `[eta1, eta2a, eta2b, eta3]`.
    pub partial: Vec<[Vector6<f64>; 4]>,
}

impl EtaIntegrals {
    pub fn eta2(&self, theta1_minus: f64) -> Vector6<f64> {
        self.eta2a + self.eta2b * theta1_minus
    }

    fn total(&self, theta1_minus: f64) -> Vector6<f64> {
        self.eta1 + self.eta2(theta1_minus) + self.eta3
    }
}

/// LTI realization of the controlled linearized reduced model for one gait
/// and expansion point, with its settling-interval integrals.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedSystem {
    pub gait: GaitParams,
    pub theta2_star: f64,
    pub mass: Matrix3<f64>,
    pub mass_inverse: Matrix3<f64>,
    pub actuation: SMatrix<f64, 3, 2>,
    pub gravity_gradient: Matrix3<f64>,
    pub gravity_offset: Vector3<f64>,
    pub a: Matrix6,
    pub b1: Vector6<f64>,
    pub b2: Vector6<f64>,
    pub b3: Vector6<f64>,
    /// Squared rigid-fall frequency `N2 / D2` [1/s^2].
    pub omega_sq: f64,
    pub omega: f64,
    /// Rigid-fall forcing `N3 / D2` [rad/s^2].
    pub b1_scalar: f64,
    pub xi: f64,
    pub etas: EtaIntegrals,
    structured: bool,
}

/// Closed forms of the fall frequency and forcing.
fn fall_coefficients(p: &PhysicalParams, beta: f64, star: f64) -> (f64, f64, f64) {
    let (m1, m2, l1, l2) = (p.m1, p.m2, p.l1, p.l2);
    let m = p.total_mass();
    let lean_cos = l1 * (star + beta).cos() + l2 * star.cos();
    let lean_sin = l1 * (star + beta).sin() + l2 * star.sin();
    let n2 = m2 * (m1 + m2) * p.g * lean_cos;
    let n3 = m2 * (m1 + m2) * p.g * lean_sin - m2 * (m1 + m2) * p.g * star * lean_cos;
    let d2 = (m1 + m2).powi(2) * l2 * l2 + m2 * ((m1 + m2) * l1 * l1 + p.i1 + p.i2) + m2 * m * l1 * l2 * beta.cos();
    (n2, n3, d2)
}

pub fn build_state_space(
    p: &PhysicalParams,
    gait: &GaitParams,
    cfg: &LinearizationConfig,
) -> Result<LinearizedSystem> {
    p.validate()?;
    gait.validate()?;
    let model = reduce(p, gait);
    let star = cfg.expansion_point(gait);
    let (gradient, offset) = linearize_gravity(p, gait, cfg);
    let minv = model
        .mass
        .try_inverse()
        .ok_or_else(|| GaitError::Degenerate("reduced mass matrix is singular".into()))?;
    let s = model.actuation;
    let w_inv = (s.transpose() * minv * s)
        .try_inverse()
        .ok_or_else(|| GaitError::Degenerate("S^T M^-1 S is singular".into()))?;
    let closed_loop = minv * (s * w_inv * s.transpose() * minv - Matrix3::identity());
    let input = minv * s * w_inv;

    let mut a = Matrix6::zeros();
    a.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
    a.fixed_view_mut::<3, 3>(3, 0).copy_from(&(closed_loop * gradient));
    let mut b1 = Vector6::zeros();
    b1.fixed_rows_mut::<3>(3).copy_from(&(closed_loop * offset));
    let mut b2 = Vector6::zeros();
    b2.fixed_rows_mut::<3>(3).copy_from(&input.column(0));
    let mut b3 = Vector6::zeros();
    b3.fixed_rows_mut::<3>(3).copy_from(&input.column(1));

    let (n2, n3, d2) = fall_coefficients(p, gait.beta, star);
    let omega_sq = n2 / d2;
    if !(omega_sq.is_finite() && omega_sq > 0.0) {
        return Err(GaitError::InvalidLinearization { omega_sq });
    }
    let b1_scalar = n3 / d2;
    let structured = has_fall_structure(&a, &b1, omega_sq, b1_scalar);

    let mut sys = LinearizedSystem {
        gait: *gait,
        theta2_star: star,
        mass: model.mass,
        mass_inverse: minv,
        actuation: s,
        gravity_gradient: gradient,
        gravity_offset: offset,
        a,
        b1,
        b2,
        b3,
        omega_sq,
        omega: omega_sq.sqrt(),
        b1_scalar,
        xi: xi_coefficient(p, gait),
        etas: EtaIntegrals {
            t_set: 0.0,
            eta1: Vector6::zeros(),
            eta2a: Vector6::zeros(),
            eta2b: Vector6::zeros(),
            eta3: Vector6::zeros(),
            partial: Vec::new(),
        },
        structured,
    };
    sys.etas = precompute_etas(&sys, gait.settling_time())?;
    Ok(sys)
}

/// `A` has identity in the upper-right block, a single column `omega^2 (1,1,1)`
/// in the lower-left block, and `b1` is `b1_scalar (0,0,0,1,1,1)`.
fn has_fall_structure(a: &Matrix6, b1: &Vector6<f64>, omega_sq: f64, b1_scalar: f64) -> bool {
    let scale = omega_sq.abs().max(1.0);
    let tol = 1e-12 * scale;
    for i in 0..6 {
        for j in 0..6 {
            let expected = match (i, j) {
                (0, 3) | (1, 4) | (2, 5) => 1.0,
                (3..=5, 0) => omega_sq,
                _ => 0.0,
            };
            if (a[(i, j)] - expected).abs() > tol {
                return false;
            }
        }
    }
    let expected_b = Vector6::new(0.0, 0.0, 0.0, b1_scalar, b1_scalar, b1_scalar);
    (b1 - expected_b).amax() <= 1e-12 * b1_scalar.abs().max(1.0)
}

/// Hip command split into the part fixed by `alpha` and the part per unit of
/// pre-impact velocity.
fn hip_command_parts(gait: &GaitParams, xi: f64, t_set: f64, tau: f64) -> (f64, f64) {
    let t = t_set;
    let alpha = gait.alpha;
    let (a3, a4, a5) = (20.0 * alpha / t.powi(3), -30.0 * alpha / t.powi(4), 12.0 * alpha / t.powi(5));
    let c = xi - 1.0;
    let (b3, b4, b5) = (-6.0 * c / t.powi(2), 8.0 * c / t.powi(3), -3.0 * c / t.powi(4));
    let acc = |k3: f64, k4: f64, k5: f64| tau * (6.0 * k3 + tau * (12.0 * k4 + tau * 20.0 * k5));
    (acc(a3, a4, a5), acc(b3, b4, b5))
}

fn knee_command(gait: &GaitParams, t_set: f64, tau: f64) -> f64 {
    let w = PI / t_set;
    let (s, c) = (w * tau).sin_cos();
    -3.0 * gait.gamma * w * w * s * (2.0 * c * c - s * s)
}

/// Convolution integrals for settling time `t_set`, by composite 8-point
/// Gauss-Legendre quadrature on [`QUADRATURE_PANELS`] equal panels.
pub fn precompute_etas(linsys: &LinearizedSystem, t_set: f64) -> Result<EtaIntegrals> {
    if !(t_set.is_finite() && t_set > 0.0) {
        return Err(invalid("t_set", format!("must be > 0, got {t_set}")));
    }
    let h = t_set / QUADRATURE_PANELS as f64;
    let half = 0.5 * h;
    let mut acc = [Vector6::zeros(); 4];
    let mut partial = Vec::with_capacity(QUADRATURE_PANELS);
    for k in 0..QUADRATURE_PANELS {
        let mid = (k as f64 + 0.5) * h;
        for (node, weight) in GL_NODES.iter().zip(GL_WEIGHTS) {
            for tau in [mid - half * node, mid + half * node] {
                let w = half * weight;
                let (v2a, v2b) = hip_command_parts(&linsys.gait, linsys.xi, t_set, tau);
                let v3 = knee_command(&linsys.gait, t_set, tau);
                let k1 = linsys.exp_apply(-tau, &linsys.b1);
                let k2 = linsys.exp_apply(-tau, &linsys.b2);
                let k3 = linsys.exp_apply(-tau, &linsys.b3);
                acc[0] += k1 * w;
                acc[1] += k2 * (w * v2a);
                acc[2] += k2 * (w * v2b);
                acc[3] += k3 * (w * v3);
            }
        }
        partial.push(acc);
    }
    Ok(EtaIntegrals {
        t_set,
        eta1: acc[0],
        eta2a: acc[1],
        eta2b: acc[2],
        eta3: acc[3],
        partial,
    })
}

impl LinearizedSystem {
    /// Whether the closed-form exponential applies (otherwise the generic
    /// matrix exponential is used).
    pub fn uses_closed_form(&self) -> bool {
        self.structured
    }

    /// `exp(A t)` from the sparse structure of `A`.
    pub fn exp_closed_form(&self, t: f64) -> Matrix6 {
        let w = self.omega;
        let (ch, sh) = ((w * t).cosh(), (w * t).sinh());
        let mut e = Matrix6::identity();
        for i in 0..3 {
            e[(i, 3 + i)] = t;
            e[(i, 0)] += ch - 1.0;
            e[(i, 3)] += (sh - w * t) / w;
            e[(3 + i, 0)] += w * sh;
            e[(3 + i, 3)] += ch - 1.0;
        }
        e
    }

    /// `exp(A t)` by the generic scaling-and-squaring Pade route.
    pub fn exp_generic(&self, t: f64) -> Matrix6 {
        (self.a * t).exp()
    }

    pub fn exp(&self, t: f64) -> Matrix6 {
        if self.structured {
            self.exp_closed_form(t)
        } else {
            self.exp_generic(t)
        }
    }

    /// `exp(A t) x` without forming the matrix.
    pub fn exp_apply(&self, t: f64, x: &Vector6<f64>) -> Vector6<f64> {
        if !self.structured {
            return self.exp_generic(t) * x;
        }
        let w = self.omega;
        let (ch, sh) = ((w * t).cosh(), (w * t).sinh());
        let (p0, w0) = (x[0], x[3]);
        let top = (ch - 1.0) * p0 + (sh - w * t) / w * w0;
        let bottom = w * sh * p0 + (ch - 1.0) * w0;
        Vector6::new(
            x[0] + t * x[3] + top,
            x[1] + t * x[4] + top,
            x[2] + t * x[5] + top,
            x[3] + bottom,
            x[4] + bottom,
            x[5] + bottom,
        )
    }

    /// State at the settling time from the post-impact state.
    pub fn propagate_controlled(&self, x_plus: &Vector6<f64>, theta1_minus: f64) -> Vector6<f64> {
        self.exp_apply(self.etas.t_set, &(x_plus + self.etas.total(theta1_minus)))
    }

    /// State at the end of panel `k`, time `(k + 1) T / QUADRATURE_PANELS`.
    pub fn propagate_to_panel(&self, k: usize, x_plus: &Vector6<f64>, theta1_minus: f64) -> Vector6<f64> {
        let [e1, e2a, e2b, e3] = &self.etas.partial[k];
        let t = (k + 1) as f64 * self.etas.t_set / QUADRATURE_PANELS as f64;
        self.exp_apply(t, &(x_plus + e1 + e2a + e2b * theta1_minus + e3))
    }

    /// Rigid fall of `(th2, th2dot)` over `dt`.
    pub fn propagate_fall(&self, xbar: &Vector2<f64>, dt: f64) -> Vector2<f64> {
        let w = self.omega;
        let shift = self.b1_scalar / self.omega_sq;
        let (ch, sh) = ((w * dt).cosh(), (w * dt).sinh());
        let p = xbar[0] + shift;
        Vector2::new(ch * p + sh / w * xbar[1] - shift, w * sh * p + ch * xbar[1])
    }

    /// Rigid-fall system matrix and forcing.
    pub fn fall_system(&self) -> (Matrix2<f64>, Vector2<f64>) {
        (
            Matrix2::new(0.0, 1.0, self.omega_sq, 0.0),
            Vector2::new(0.0, self.b1_scalar),
        )
    }

    /// Right-hand side of the controlled LTI system at time `t` of a step.
    pub fn derivative(&self, x: &Vector6<f64>, v2: f64, v3: f64) -> Vector6<f64> {
        self.a * x + self.b1 + self.b2 * v2 + self.b3 * v3
    }
}

pub fn propagate_controlled(linsys: &LinearizedSystem, x_plus: &Vector6<f64>, theta1_minus: f64) -> Vector6<f64> {
    linsys.propagate_controlled(x_plus, theta1_minus)
}

pub fn propagate_fall(linsys: &LinearizedSystem, xbar: &Vector2<f64>, dt: f64) -> Vector2<f64> {
    linsys.propagate_fall(xbar, dt)
}

/// Swing-foot height relative to the stance foot for a reduced configuration.
pub fn swing_height(p: &PhysicalParams, beta: f64, q: &Vector3<f64>) -> f64 {
    p.l1 * (q[0] + beta).cos() + p.l2 * q[0].cos() - p.l2 * q[1].cos() - p.l1 * q[2].cos()
}

/// Swing-foot height in the impact posture as a function of the thigh angle.
pub fn fall_swing_height(p: &PhysicalParams, gait: &GaitParams, theta2: f64) -> f64 {
    let (a, b) = (gait.alpha, gait.beta);
    p.l1 * (theta2 + b).cos() + p.l2 * theta2.cos() - p.l2 * (theta2 - a).cos() - p.l1 * (theta2 - a + b).cos()
}

/// Leg chord geometry: `|hip - foot|` and its angle offset from the thigh.
fn leg_chord(p: &PhysicalParams, beta: f64) -> (f64, f64) {
    let (s, c) = beta.sin_cos();
    let r = (p.l1 * p.l1 + p.l2 * p.l2 + 2.0 * p.l1 * p.l2 * c).sqrt();
    (r, (p.l1 * s).atan2(p.l2 + p.l1 * c))
}

/// Thigh angle at which the impact posture puts the swing foot at height
/// `dh` relative to the stance foot (the landing root).
pub fn impact_posture_angle(p: &PhysicalParams, gait: &GaitParams, dh: f64) -> f64 {
    let (r, delta) = leg_chord(p, gait.beta);
    let half = 0.5 * gait.alpha;
    let ratio = (-dh / (2.0 * half.sin() * r)).clamp(-1.0, 1.0);
    half - delta + ratio.asin()
}

/// Full configuration of the impact posture with the stance foot at the origin.
pub fn impact_configuration(gait: &GaitParams, theta2: f64) -> Vector6<f64> {
    Vector6::new(
        0.0,
        0.0,
        theta2 + gait.beta,
        theta2,
        theta2 - gait.alpha,
        theta2 - gait.alpha + gait.beta,
    )
}

/// Horizontal stance-foot travel when landing with thigh angle `theta2`.
pub fn step_length(p: &PhysicalParams, gait: &GaitParams, theta2: f64) -> f64 {
    let (a, b) = (gait.alpha, gait.beta);
    p.l1 * (theta2 + b).sin() + p.l2 * theta2.sin() - p.l2 * (theta2 - a).sin() - p.l1 * (theta2 - a + b).sin()
}

/// Landing found by [`impact_time`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FallSolution {
    /// Fall duration after the settling time [s].
    pub dt: f64,
    pub theta2: f64,
    pub theta2_dot: f64,
}

/// Duration of the rigid fall until the swing foot reaches `dh`.
///
/// The bracket grows by doubling from `T_set / 8` up to [`FALL_HORIZON`];
/// the landing instant is then bisected to the resolution of `f64`.
pub fn impact_time(
    p: &PhysicalParams,
    gait: &GaitParams,
    linsys: &LinearizedSystem,
    xbar: &Vector2<f64>,
    dh: f64,
) -> std::result::Result<FallSolution, (FailureKind, String)> {
    let height = |th: f64| fall_swing_height(p, gait, th) - dh;
    if height(xbar[0]) <= 0.0 {
        return Err((
            FailureKind::ControlIncomplete,
            "swing foot at or below the landing surface at the settling time".into(),
        ));
    }
    // Past this thigh angle the posture has certainly crossed the surface.
    let overrun = impact_posture_angle(p, gait, dh) + FRAC_PI_2;
    let backward = xbar[0] - FRAC_PI_2;
    let landed = |dt: f64| {
        let th = linsys.propagate_fall(xbar, dt)[0];
        th >= overrun || height(th) <= 0.0
    };

    let mut lo = 0.0;
    let mut hi = linsys.etas.t_set / 8.0;
    loop {
        let th = linsys.propagate_fall(xbar, hi)[0];
        if th <= backward {
            return Err((FailureKind::NoImpact, "fell backward".into()));
        }
        if landed(hi) {
            break;
        }
        if hi >= FALL_HORIZON {
            return Err((FailureKind::NoImpact, format!("no landing within {FALL_HORIZON} s")));
        }
        lo = hi;
        hi = (2.0 * hi).min(FALL_HORIZON);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if landed(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let end = linsys.propagate_fall(xbar, hi);
    Ok(FallSolution {
        dt: hi,
        theta2: end[0],
        theta2_dot: end[1],
    })
}

/// Landing posture and velocity that start a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpactState {
    /// Stance thigh angle just before the impact [rad].
    pub theta2: f64,
    /// Common angular velocity just before the impact [rad/s].
    pub theta1_dot: f64,
}

impl ImpactState {
    /// Impact posture on flat ground.
    pub fn flat(p: &PhysicalParams, gait: &GaitParams, theta1_dot: f64) -> Self {
        Self {
            theta2: impact_posture_angle(p, gait, 0.0),
            theta1_dot,
        }
    }

    /// Reduced state right after the impact and the leg exchange.
    pub fn post_impact(&self, gait: &GaitParams, xi: f64) -> Vector6<f64> {
        let v = post_impact_velocity(xi, self.theta1_dot);
        Vector6::new(
            self.theta2 - gait.alpha,
            self.theta2,
            self.theta2 + gait.beta,
            v[3],
            v[4],
            v[5],
        )
    }
}

/// One step of the linearized predictor: impact map, controlled phase, rigid
/// fall and landing. `dh` is the landing-surface offset for this step.
pub fn clred_step_map(
    p: &PhysicalParams,
    linsys: &LinearizedSystem,
    start: ImpactState,
    dh: f64,
    index: usize,
) -> std::result::Result<(ImpactState, StepRecord), StepFailure> {
    let gait = &linsys.gait;
    let x_plus = start.post_impact(gait, linsys.xi);
    let fail = |kind, detail: String| StepFailure::new(index, kind, detail);

    let mut armed = swing_height(p, gait.beta, &x_plus.fixed_rows::<3>(0).into_owned()) - dh > ARMING_THRESHOLD;
    let mut min_clearance = f64::INFINITY;
    let mut last = x_plus;
    for k in 0..QUADRATURE_PANELS {
        last = linsys.propagate_to_panel(k, &x_plus, start.theta1_dot);
        if !last.iter().all(|v| v.is_finite()) {
            return Err(fail(FailureKind::Numeric, "non-finite state in controlled phase".into()));
        }
        let h = swing_height(p, gait.beta, &last.fixed_rows::<3>(0).into_owned()) - dh;
        if armed {
            min_clearance = min_clearance.min(h);
            if h <= 0.0 {
                let t = (k + 1) as f64 * linsys.etas.t_set / QUADRATURE_PANELS as f64;
                return Err(fail(
                    FailureKind::ControlIncomplete,
                    format!("swing foot landed at t = {t:.4} s before the settling time"),
                ));
            }
        } else if h > ARMING_THRESHOLD {
            armed = true;
            min_clearance = h;
        }
    }
    if !min_clearance.is_finite() {
        min_clearance = swing_height(p, gait.beta, &last.fixed_rows::<3>(0).into_owned()) - dh;
    }

    let xbar = Vector2::new(last[0], last[3]);
    let fall = impact_time(p, gait, linsys, &xbar, dh).map_err(|(kind, msg)| fail(kind, msg))?;
    let period = linsys.etas.t_set + fall.dt;
    let length = step_length(p, gait, fall.theta2);
    let record = StepRecord {
        index,
        period,
        theta1_minus: fall.theta2_dot,
        step_length: length,
        speed: length / period,
        min_clearance,
        min_fz: None,
        settled: true,
    };
    Ok((
        ImpactState {
            theta2: fall.theta2,
            theta1_dot: fall.theta2_dot,
        },
        record,
    ))
}

/// Outcome of a multi-step walkability determination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkabilityReport {
    pub walkable: bool,
    pub failure: Option<StepFailure>,
    pub records: Vec<StepRecord>,
}

/// Caches one linearized system per distinct settling time.
pub struct ClredPredictor {
    params: PhysicalParams,
    gait: GaitParams,
    lin: LinearizationConfig,
    systems: Vec<LinearizedSystem>,
}

impl ClredPredictor {
    pub fn new(p: &PhysicalParams, gait: &GaitParams, lin: &LinearizationConfig) -> Result<Self> {
        let base = build_state_space(p, gait, lin)?;
        Ok(Self {
            params: *p,
            gait: *gait,
            lin: *lin,
            systems: vec![base],
        })
    }

    /// System for settling time `t_set`, rebuilt when not cached.
    pub fn system(&mut self, t_set: f64) -> Result<&LinearizedSystem> {
        if let Some(i) = self.systems.iter().position(|s| s.etas.t_set == t_set) {
            return Ok(&self.systems[i]);
        }
        let gait = if t_set == self.gait.t_set {
            self.gait.with_override(None)?
        } else {
            self.gait.with_override(Some(t_set))?
        };
        self.systems.push(build_state_space(&self.params, &gait, &self.lin)?);
        Ok(self.systems.last().expect("just pushed"))
    }

    pub fn run(
        &mut self,
        start: ImpactState,
        terrain: &TerrainProfile,
        schedule: &SettlingSchedule,
        n_steps: usize,
    ) -> Result<WalkabilityReport> {
        self.run_until(start, terrain, schedule, n_steps, None)
    }

    /// Like [`Self::run`], but stops before starting a step once the predicted
    /// time reaches `duration` seconds.
    pub fn run_until(
        &mut self,
        start: ImpactState,
        terrain: &TerrainProfile,
        schedule: &SettlingSchedule,
        n_steps: usize,
        duration: Option<f64>,
    ) -> Result<WalkabilityReport> {
        let p = self.params;
        let mut records = Vec::with_capacity(n_steps.min(1024));
        let mut state = start;
        let mut elapsed = 0.0;
        for i in 0..n_steps {
            if duration.is_some_and(|d| elapsed >= d) {
                break;
            }
            let t_set = schedule.override_for(i).unwrap_or(self.gait.t_set);
            let sys = self.system(t_set)?;
            match clred_step_map(&p, sys, state, terrain.landing_offset(i), i) {
                Ok((next, rec)) => {
                    elapsed += rec.period;
                    records.push(rec);
                    state = next;
                }
                Err(failure) => {
                    return Ok(WalkabilityReport {
                        walkable: false,
                        failure: Some(failure),
                        records,
                    })
                }
            }
        }
        Ok(WalkabilityReport {
            walkable: true,
            failure: None,
            records,
        })
    }
}

/// Iterates the step map over a terrain and settling-time schedule, starting
/// from the flat-ground impact posture with pre-impact velocity
/// `theta1_dot0`.
pub fn walkability(
    p: &PhysicalParams,
    gait: &GaitParams,
    lin: &LinearizationConfig,
    theta1_dot0: f64,
    terrain: &TerrainProfile,
    schedule: &SettlingSchedule,
    n_steps: usize,
) -> Result<WalkabilityReport> {
    schedule.validate()?;
    terrain.validate(p.l1 + p.l2)?;
    let mut predictor = ClredPredictor::new(p, gait, lin)?;
    predictor.run(ImpactState::flat(p, gait, theta1_dot0), terrain, schedule, n_steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn system(beta: f64, kappa: f64) -> LinearizedSystem {
        let p = PhysicalParams::reference();
        let gait = GaitParams::reference().with_beta(beta).unwrap();
        build_state_space(&p, &gait, &LinearizationConfig::from_kappa(kappa, beta)).unwrap()
    }

    #[test]
    fn reduced_mass_reference() {
        let p = PhysicalParams::reference();
        let gait = GaitParams::reference().with_beta(0.0).unwrap();
        let m = reduce(&p, &gait);
        // 4*0.25 + 3*4*0.25/2 + 2*4*0.25 + 0.125
        assert!((m.mass[(0, 0)] - 4.625).abs() < 1e-14);
        let g = m.gravity(&Vector3::new(0.3, 0.1, 0.2));
        assert_eq!((g[1], g[2]), (0.0, 0.0));
    }

    #[test]
    fn propulsive_offset() {
        let p = PhysicalParams::reference();
        let straight = GaitParams::reference().with_beta(0.0).unwrap();
        let (_, off) = linearize_gravity(&p, &straight, &LinearizationConfig::at(0.0));
        assert_eq!(off, Vector3::zeros());
        let bent = GaitParams::reference();
        let (_, off) = linearize_gravity(&p, &bent, &LinearizationConfig::at(0.0));
        let expected = -4.0 * 9.81 * 0.5 * 0.1f64.sin();
        assert!((off[0] - expected).abs() < 1e-14);
        assert!((off[0] + 1.958).abs() < 1e-3);
    }

    #[test]
    fn fall_frequency_reference() {
        let sys = system(0.5, -0.5);
        let d2 = 1.0 + 0.625 + 0.5f64.cos();
        let n2 = 2.0 * 9.81 * 0.25f64.cos();
        assert!((d2 - 2.5026).abs() < 1e-4);
        assert!((n2 - 19.01).abs() < 1e-2);
        assert!((sys.omega_sq - n2 / d2).abs() < 1e-14);
        assert!((sys.omega - 2.756).abs() < 1e-3);
        assert!(sys.uses_closed_form());
    }

    #[test]
    fn state_matrix_structure() {
        for &(b, k) in &[(0.1, 0.0), (0.5, -0.5), (1.2, -0.3)] {
            let sys = system(b, k);
            for i in 3..6 {
                assert!((sys.a[(i, 0)] - sys.omega_sq).abs() < 1e-12);
                assert!((sys.b1[i] - sys.b1_scalar).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_expansion_point_drops_offset_term() {
        let p = PhysicalParams::reference();
        let (_, n3, d2) = fall_coefficients(&p, 0.3, 0.0);
        let sys = system(0.3, 0.0);
        assert!((n3 - 2.0 * 9.81 * 0.5 * 0.3f64.sin()).abs() < 1e-13);
        assert!((sys.b1_scalar - n3 / d2).abs() < 1e-14);
    }

    #[test]
    fn closed_form_exponential_matches_generic() {
        let sys = system(0.5, -0.5);
        for &t in &[-0.7, -0.05, 0.0, 1e-3, 0.3, 0.7, 1.3] {
            let diff = (sys.exp_closed_form(t) - sys.exp_generic(t)).amax();
            let scale = sys.exp_generic(t).amax();
            assert!(diff <= 1e-12 * scale, "t = {t}: {diff:e}");
        }
        let x = Vector6::new(0.1, -0.2, 0.3, 0.4, -0.5, 0.6);
        assert!((sys.exp_apply(0.4, &x) - sys.exp_closed_form(0.4) * x).amax() < 1e-14);
    }

    #[test]
    fn trivial_integrals() {
        let p = PhysicalParams::reference();
        let gait = GaitParams::new(0.5, 0.0, 0.0, 0.7).unwrap();
        let sys = build_state_space(&p, &gait, &LinearizationConfig::at(0.0)).unwrap();
        assert_eq!(sys.etas.eta1, Vector6::zeros());
        assert_eq!(sys.etas.eta3, Vector6::zeros());
        assert_eq!(sys.etas.partial.len(), QUADRATURE_PANELS);
        assert_eq!(sys.etas.partial[QUADRATURE_PANELS - 1][1], sys.etas.eta2a);
    }

    #[test]
    fn fall_fixed_point_and_identity() {
        let sys = system(0.5, -0.5);
        let x = Vector2::new(0.2, 0.7);
        assert_eq!(sys.propagate_fall(&x, 0.0), x);
        let eq = Vector2::new(-sys.b1_scalar / sys.omega_sq, 0.0);
        for dt in [0.1, 0.5, 2.0] {
            assert!((sys.propagate_fall(&eq, dt) - eq).amax() < 1e-14);
        }
    }

    #[test]
    fn landing_root_closed_form() {
        let p = PhysicalParams::reference();
        let gait = GaitParams::reference().with_beta(0.7).unwrap();
        for dh in [0.0, -0.02, 0.01] {
            let th = impact_posture_angle(&p, &gait, dh);
            assert!((fall_swing_height(&p, &gait, th) - dh).abs() < 1e-15);
        }
        assert!(impact_posture_angle(&p, &gait, -0.02) > impact_posture_angle(&p, &gait, 0.0));
        let q = impact_configuration(&gait, impact_posture_angle(&p, &gait, 0.0));
        let foot = crate::biped::swing_foot_position(&p, &q);
        assert!(foot[1].abs() < 1e-15);
        assert!((foot[0] - step_length(&p, &gait, q[3])).abs() < 1e-15);
    }

    #[test]
    fn step_length_vanishes_without_hip_opening() {
        let p = PhysicalParams::reference();
        let mut gait = GaitParams::reference();
        gait.alpha = 0.0;
        assert_eq!(step_length(&p, &gait, 0.2), 0.0);
    }

    #[test]
    fn rejects_nonpositive_fall_frequency() {
        let p = PhysicalParams::reference();
        let gait = GaitParams::reference().with_beta(1.0).unwrap();
        let err = build_state_space(&p, &gait, &LinearizationConfig::at(2.0)).unwrap_err();
        assert!(matches!(err, GaitError::InvalidLinearization { .. }));
    }
}
