//! Fixed-step hybrid simulation of the controlled nonlinear model.
//!
//! Each step is integrated with classical RK4 on the contact-constrained
//! dynamics, the stance coordinates are projected back onto the constraint
//! manifold after every step, and the landing instant is bisected within the
//! integration step where the swing foot crosses the landing surface.

use nalgebra::{Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::biped::{
    impact_map, post_impact_velocity, relabel, swing_foot_position, xi_coefficient, ConstrainedDynamics,
    ConstraintForces, FullState,
};
use crate::clred::{impact_configuration, impact_posture_angle};
use crate::controller::{compute_coeffs, control_input_full_with_response, desired_output, TrajectoryCoeffs};
use crate::error::{invalid, GaitError, Result};
use crate::params::{GaitParams, PhysicalParams};
use crate::record::{FailureKind, SettlingSchedule, StepFailure, StepRecord, TerrainProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Integration step [s].
    pub dt: f64,
    /// Swing-foot height above the landing surface that arms landing detection [m].
    pub arming_threshold: f64,
    /// Landing-time resolution of the bisection [s].
    pub bisection_tol: f64,
    /// Longest allowed step before declaring a fall [s].
    pub max_step_duration: f64,
    pub terrain: TerrainProfile,
    pub settling: SettlingSchedule,
    /// Keep every `trace_stride`-th integration sample; 0 disables tracing.
    pub trace_stride: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-4,
            arming_threshold: 1e-3,
            bisection_tol: 1e-10,
            max_step_duration: 3.0,
            terrain: TerrainProfile::flat(),
            settling: SettlingSchedule::uniform(),
            trace_stride: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(invalid("dt", format!("must be > 0, got {}", self.dt)));
        }
        if !(self.bisection_tol > 0.0 && self.bisection_tol < self.dt) {
            return Err(invalid("bisection_tol", "must lie in (0, dt)"));
        }
        if !(self.arming_threshold.is_finite() && self.arming_threshold > 0.0) {
            return Err(invalid("arming_threshold", "must be > 0"));
        }
        if !(self.max_step_duration.is_finite() && self.max_step_duration > 0.0) {
            return Err(invalid("max_step_duration", "must be > 0"));
        }
        self.settling.validate()
    }
}

/// One sample of the closed-loop motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    /// Time since the start of the run [s].
    pub time: f64,
    pub step: usize,
    pub state: FullState,
    pub torque: Vector3<f64>,
    pub forces: ConstraintForces,
    /// Swing-foot height above the stance foot [m].
    pub swing_height: f64,
    /// Constraint residual removed by the projection that produced this sample.
    pub constraint_drift: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaitTrace {
    pub samples: Vec<TraceSample>,
}

impl GaitTrace {
    pub fn extend(&mut self, other: GaitTrace) {
        self.samples.extend(other.samples);
    }
}

/// Result of integrating one step up to the landing.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// State just before the landing.
    pub state_minus: FullState,
    pub record: StepRecord,
    pub trace: GaitTrace,
    /// Largest constraint residual removed by projection during the step.
    pub max_drift: f64,
}

/// Closed-loop evaluation at one state: accelerations, torques and contact forces.
struct Evaluation {
    qddot: Vector6<f64>,
    torque: Vector3<f64>,
    forces: ConstraintForces,
}

fn evaluate(
    p: &PhysicalParams,
    gait: &GaitParams,
    coeffs: &TrajectoryCoeffs,
    q: &Vector6<f64>,
    qdot: &Vector6<f64>,
    t: f64,
) -> Result<Evaluation> {
    let v = desired_output(gait, coeffs, t).yddot;
    let dynamics = ConstrainedDynamics::new(p, q, qdot)?;
    let (torque, qddot, forces) = control_input_full_with_response(&dynamics, &v)?;
    Ok(Evaluation { qddot, torque, forces })
}

/// Restores the stance contact and knee lock removed by roundoff and returns
/// the largest residual it removed.
fn project(s: &mut FullState, foot: Vector2<f64>, beta: f64) -> f64 {
    let drift = [
        s.q[0] - foot[0],
        s.q[1] - foot[1],
        s.q[2] - s.q[3] - beta,
        s.qdot[0],
        s.qdot[1],
        s.qdot[2] - s.qdot[3],
    ]
    .iter()
    .fold(0.0f64, |m, r| m.max(r.abs()));
    s.q[0] = foot[0];
    s.q[1] = foot[1];
    s.q[2] = s.q[3] + beta;
    s.qdot[0] = 0.0;
    s.qdot[1] = 0.0;
    s.qdot[2] = s.qdot[3];
    drift
}

struct StepIntegrator<'a> {
    p: &'a PhysicalParams,
    gait: &'a GaitParams,
    coeffs: TrajectoryCoeffs,
    foot: Vector2<f64>,
}

impl StepIntegrator<'_> {
    /// One RK4 step followed by projection; also returns the projected-out drift.
    fn rk4(&self, s: &FullState, k1: &Vector6<f64>, h: f64) -> Result<(FullState, f64)> {
        let (p, g, c) = (self.p, self.gait, &self.coeffs);
        let (q, v, t) = (s.q, s.qdot, s.t);
        let q2 = q + v * (0.5 * h);
        let v2 = v + k1 * (0.5 * h);
        let k2 = evaluate(p, g, c, &q2, &v2, t + 0.5 * h)?.qddot;
        let q3 = q + v2 * (0.5 * h);
        let v3 = v + k2 * (0.5 * h);
        let k3 = evaluate(p, g, c, &q3, &v3, t + 0.5 * h)?.qddot;
        let q4 = q + v3 * h;
        let v4 = v + k3 * h;
        let k4 = evaluate(p, g, c, &q4, &v4, t + h)?.qddot;
        let mut next = FullState {
            q: q + (v + v2 * 2.0 + v3 * 2.0 + v4) * (h / 6.0),
            qdot: v + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0),
            t: t + h,
        };
        let drift = project(&mut next, self.foot, g.beta);
        Ok((next, drift))
    }

    fn height(&self, s: &FullState) -> f64 {
        swing_foot_position(self.p, &s.q)[1] - self.foot[1]
    }
}

/// Integrates one step from the post-impact state `start` until the swing
/// foot lands `dh` below (negative) or above the stance foot.
///
/// `theta1_minus` is the pre-impact velocity of the impact that started the
/// step; it fixes the hip trajectory coefficients. A landing before the
/// settling time is returned with `settled == false`.
#[allow(clippy::too_many_arguments)]
pub fn integrate_step(
    p: &PhysicalParams,
    gait: &GaitParams,
    cfg: &SimConfig,
    start: &FullState,
    theta1_minus: f64,
    dh: f64,
    index: usize,
    time_offset: f64,
) -> std::result::Result<StepOutcome, StepFailure> {
    let fail = |kind, detail: String| StepFailure::new(index, kind, detail);
    let numeric = |e: GaitError| StepFailure::new(index, FailureKind::Numeric, e.to_string());
    let xi = xi_coefficient(p, gait);
    let coeffs = compute_coeffs(gait, xi, theta1_minus).map_err(numeric)?;
    let stepper = StepIntegrator {
        p,
        gait,
        coeffs,
        foot: Vector2::new(start.q[0], start.q[1]),
    };
    let t_set = coeffs.t_set;

    let mut s = *start;
    s.t = 0.0;
    project(&mut s, stepper.foot, gait.beta);
    let mut drift = 0.0;
    let mut max_drift = 0.0f64;
    let mut trace = GaitTrace::default();
    let mut h = stepper.height(&s) - dh;
    let mut armed = h > cfg.arming_threshold;
    let mut min_clearance = f64::INFINITY;
    let mut min_fz = f64::INFINITY;
    let mut n = 0usize;

    loop {
        let eval = evaluate(p, gait, &coeffs, &s.q, &s.qdot, s.t).map_err(numeric)?;
        // Written so that a NaN reaction also counts as contact loss.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(eval.forces.fz > 0.0) {
            return Err(fail(
                FailureKind::ContactLoss,
                format!("vertical reaction {:.4e} N at t = {:.4} s", eval.forces.fz, s.t),
            ));
        }
        min_fz = min_fz.min(eval.forces.fz);
        if cfg.trace_stride > 0 && n.is_multiple_of(cfg.trace_stride) {
            trace.samples.push(TraceSample {
                time: time_offset + s.t,
                step: index,
                state: s,
                torque: eval.torque,
                forces: eval.forces,
                swing_height: h + dh,
                constraint_drift: drift,
            });
        }
        if s.t > cfg.max_step_duration {
            return Err(fail(
                FailureKind::NoImpact,
                format!("no landing within {} s", cfg.max_step_duration),
            ));
        }

        let (next, next_drift) = stepper.rk4(&s, &eval.qddot, cfg.dt).map_err(numeric)?;
        if !next.is_finite() {
            return Err(fail(FailureKind::Numeric, "non-finite state".into()));
        }
        let h_next = stepper.height(&next) - dh;
        if armed && h_next <= 0.0 {
            // Bisect the sub-step length at which the swing foot reaches the surface.
            let (mut lo, mut hi) = (0.0, cfg.dt);
            while hi - lo > cfg.bisection_tol {
                let mid = 0.5 * (lo + hi);
                let (trial, _) = stepper.rk4(&s, &eval.qddot, mid).map_err(numeric)?;
                if stepper.height(&trial) - dh <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let (landing, landing_drift) = stepper.rk4(&s, &eval.qddot, hi).map_err(numeric)?;
            max_drift = max_drift.max(landing_drift);
            let last = evaluate(p, gait, &coeffs, &landing.q, &landing.qdot, landing.t).map_err(numeric)?;
            min_fz = min_fz.min(last.forces.fz);
            if cfg.trace_stride > 0 {
                trace.samples.push(TraceSample {
                    time: time_offset + landing.t,
                    step: index,
                    state: landing,
                    torque: last.torque,
                    forces: last.forces,
                    swing_height: stepper.height(&landing),
                    constraint_drift: landing_drift,
                });
            }
            if !min_clearance.is_finite() {
                min_clearance = stepper.height(&landing) - dh;
            }
            let length = swing_foot_position(p, &landing.q)[0] - stepper.foot[0];
            let record = StepRecord {
                index,
                period: landing.t,
                theta1_minus: landing.qdot[2],
                step_length: length,
                speed: length / landing.t,
                min_clearance,
                min_fz: Some(min_fz),
                settled: landing.t >= t_set,
            };
            return Ok(StepOutcome {
                state_minus: landing,
                record,
                trace,
                max_drift,
            });
        }
        if !armed && h_next > cfg.arming_threshold {
            armed = true;
        }
        if armed && next.t <= t_set {
            min_clearance = min_clearance.min(h_next);
        }
        s = next;
        h = h_next;
        drift = next_drift;
        max_drift = max_drift.max(next_drift);
        n += 1;
    }
}

/// Records of a multi-step run; `failure` is set when a step could not be
/// completed, and `records` then holds the completed steps only.
#[derive(Debug, Clone)]
pub struct GaitRun {
    pub records: Vec<StepRecord>,
    pub failure: Option<StepFailure>,
    pub trace: GaitTrace,
    /// Post-impact state after the last completed step.
    pub final_state: FullState,
    /// Total simulated time [s].
    pub elapsed: f64,
    /// Largest constraint residual removed by projection over the run.
    pub max_constraint_drift: f64,
}

/// Post-impact state that starts a run: the flat-ground impact posture after
/// the leg exchange, with the stance foot at the origin.
pub fn initial_state(p: &PhysicalParams, gait: &GaitParams, theta1_minus: f64) -> FullState {
    let q_minus = impact_configuration(gait, impact_posture_angle(p, gait, 0.0));
    let mut s = relabel(p, &q_minus, &Vector6::zeros());
    s.q[0] = 0.0;
    s.q[1] = 0.0;
    s.qdot = post_impact_velocity(xi_coefficient(p, gait), theta1_minus);
    s
}

/// Simulates up to `n_steps` steps, stopping early once `duration` seconds
/// have elapsed (when given) or a step fails.
pub fn run_gait_until(
    p: &PhysicalParams,
    gait: &GaitParams,
    cfg: &SimConfig,
    theta1_minus: f64,
    n_steps: usize,
    duration: Option<f64>,
) -> Result<GaitRun> {
    p.validate()?;
    gait.validate()?;
    cfg.validate()?;
    cfg.terrain.validate(p.l1 + p.l2)?;
    let mut state = initial_state(p, gait, theta1_minus);
    let mut run = GaitRun {
        records: Vec::with_capacity(n_steps.min(1024)),
        failure: None,
        trace: GaitTrace::default(),
        final_state: state,
        elapsed: 0.0,
        max_constraint_drift: 0.0,
    };
    let mut theta1_minus = theta1_minus;
    for i in 0..n_steps {
        if duration.is_some_and(|d| run.elapsed >= d) {
            break;
        }
        let step_gait = gait.with_override(cfg.settling.override_for(i))?;
        let dh = cfg.terrain.landing_offset(i);
        let outcome = match integrate_step(p, &step_gait, cfg, &state, theta1_minus, dh, i, run.elapsed) {
            Ok(o) => o,
            Err(f) => {
                run.failure = Some(f);
                break;
            }
        };
        run.trace.extend(outcome.trace);
        run.max_constraint_drift = run.max_constraint_drift.max(outcome.max_drift);
        if !outcome.record.settled {
            run.failure = Some(StepFailure::new(
                i,
                FailureKind::ControlIncomplete,
                format!(
                    "landed at t = {:.4} s before the settling time {:.4} s",
                    outcome.record.period,
                    step_gait.settling_time()
                ),
            ));
            break;
        }
        let minus = outcome.state_minus;
        let ground = state.q[1] + dh;
        state = match impact_map(p, &step_gait, &minus.q, &minus.qdot, ground) {
            Ok(s) => s,
            Err(e) => {
                run.failure = Some(StepFailure::new(i, FailureKind::Numeric, e.to_string()));
                break;
            }
        };
        theta1_minus = minus.qdot[2];
        run.elapsed += outcome.record.period;
        run.records.push(outcome.record);
        run.final_state = state;
    }
    Ok(run)
}

/// Simulates `n_steps` steps from the flat impact posture with pre-impact
/// velocity `theta1_minus`, recomputing the trajectory coefficients at every
/// impact.
pub fn run_gait(
    p: &PhysicalParams,
    gait: &GaitParams,
    cfg: &SimConfig,
    theta1_minus: f64,
    n_steps: usize,
) -> Result<GaitRun> {
    run_gait_until(p, gait, cfg, theta1_minus, n_steps, None)
}
