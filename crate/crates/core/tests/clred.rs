use gaitlab_core::biped::constrained_accel;
use gaitlab_core::clred::{
    build_state_space, clred_step_map, fall_swing_height, impact_posture_angle, impact_time, reduce,
    reduction_matrix, step_length, ImpactState, QUADRATURE_PANELS,
};
use gaitlab_core::{
    compute_coeffs, desired_output, walkability, GaitParams, LinearizationConfig, LinearizedSystem, PhysicalParams,
    SettlingSchedule, TerrainProfile,
};
use nalgebra::{Matrix6, Vector2, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn system(beta: f64, kappa: f64, t_set: f64) -> (PhysicalParams, LinearizedSystem) {
    let p = PhysicalParams::reference();
    let gait = GaitParams::new(std::f64::consts::FRAC_PI_6, beta, 0.3, t_set).unwrap();
    let sys = build_state_space(&p, &gait, &LinearizationConfig::from_kappa(kappa, beta)).unwrap();
    (p, sys)
}

/// Hip and knee commands from the controller's own trajectory definitions.
fn commands(sys: &LinearizedSystem, w: f64, t: f64) -> (f64, f64) {
    let c = compute_coeffs(&sys.gait, sys.xi, w).unwrap();
    let d = desired_output(&sys.gait, &c, t);
    (d.yddot[0], d.yddot[1])
}

fn rk4_controlled(sys: &LinearizedSystem, x0: &Vector6<f64>, w: f64, t_end: f64, n: usize) -> Vector6<f64> {
    let h = t_end / n as f64;
    let f = |t: f64, x: &Vector6<f64>| {
        let (v2, v3) = commands(sys, w, t);
        sys.a * x + sys.b1 + sys.b2 * v2 + sys.b3 * v3
    };
    let mut x = *x0;
    for i in 0..n {
        let t = i as f64 * h;
        let k1 = f(t, &x);
        let k2 = f(t + 0.5 * h, &(x + k1 * (0.5 * h)));
        let k3 = f(t + 0.5 * h, &(x + k2 * (0.5 * h)));
        let k4 = f(t + h, &(x + k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    x
}

fn rk4_fall(sys: &LinearizedSystem, x0: &Vector2<f64>, t_end: f64, n: usize) -> Vector2<f64> {
    let (a, b) = sys.fall_system();
    let h = t_end / n as f64;
    let f = |x: &Vector2<f64>| a * x + b;
    let mut x = *x0;
    for _ in 0..n {
        let k1 = f(&x);
        let k2 = f(&(x + k1 * (0.5 * h)));
        let k3 = f(&(x + k2 * (0.5 * h)));
        let k4 = f(&(x + k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    x
}

#[test]
fn reduced_model_matches_full_dynamics() {
    let p = PhysicalParams::reference();
    let v = reduction_matrix();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let beta = rng.gen_range(0.0..1.2);
        let gait = GaitParams::reference().with_beta(beta).unwrap();
        let model = reduce(&p, &gait);
        let qbar = Vector3::new(rng.gen_range(-0.7..0.7), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let wbar = Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let u = nalgebra::Vector2::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0));
        let q = Vector6::new(0.0, 0.0, qbar[0] + beta, qbar[0], qbar[1], qbar[2]);
        let qd = v * wbar;
        let (qdd, _) = constrained_accel(&p, &q, &qd, &Vector3::new(0.0, u[0], u[1])).unwrap();
        let reduced = model.accel(&qbar, &u);
        assert!((v * reduced - qdd).amax() < 1e-9, "{}", (v * reduced - qdd).amax());
    }
}

#[test]
fn gravity_tangent_is_second_order() {
    let p = PhysicalParams::reference();
    let gait = GaitParams::reference().with_beta(0.5).unwrap();
    // At kappa = -0.5 the curvature vanishes for equal link lengths, so use
    // an expansion point where the error is genuinely quadratic.
    let cfg = LinearizationConfig::from_kappa(-0.3, 0.5);
    let model = reduce(&p, &gait);
    let sys = build_state_space(&p, &gait, &cfg).unwrap();
    let star = sys.theta2_star;
    let err = |d: f64| {
        let th = star + d;
        (model.gravity_component(th) - (sys.gravity_gradient[(0, 0)] * th + sys.gravity_offset[0])).abs()
    };
    // Halving the offset quarters the error.
    for d in [0.01, 0.005, 0.002] {
        let ratio = err(d) / err(0.5 * d);
        assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio} at {d}");
    }
}

/// Composite Simpson rule on `n` (even) intervals.
fn simpson(n: usize, t_end: f64, f: impl Fn(f64) -> Vector6<f64>) -> Vector6<f64> {
    let h = t_end / n as f64;
    let mut acc = f(0.0) + f(t_end);
    for i in 1..n {
        acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * (h / 3.0)
}

#[test]
fn eta_decomposition_matches_direct_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for (beta, kappa, t_set) in [(0.5, -0.5, 0.7), (0.9, -0.3, 0.45), (0.2, 0.0, 1.0)] {
        let (_, sys) = system(beta, kappa, t_set);
        let kernel = |tau: f64, b: &Vector6<f64>| (sys.a * -tau).exp() * b;
        let eta1 = simpson(4000, t_set, |tau| kernel(tau, &sys.b1));
        let eta3 = simpson(4000, t_set, |tau| kernel(tau, &sys.b3) * commands(&sys, 0.0, tau).1);
        assert!((eta1 - sys.etas.eta1).amax() < 1e-10);
        assert!((eta3 - sys.etas.eta3).amax() < 1e-10);
        for _ in 0..3 {
            let w = rng.gen_range(0.3..1.5);
            let direct = simpson(4000, t_set, |tau| kernel(tau, &sys.b2) * commands(&sys, w, tau).0);
            let err = (direct - sys.etas.eta2(w)).amax();
            assert!(err < 1e-10, "beta={beta} kappa={kappa} w={w}: {err:e}");
        }
    }
}

#[test]
fn closed_form_propagation_matches_dense_integration() {
    for (beta, kappa, t_set) in [(0.1, 0.0, 0.7), (0.5, -0.5, 0.7), (0.7, -0.5, 0.45), (1.2, -0.6, 0.9)] {
        let (p, sys) = system(beta, kappa, t_set);
        let start = ImpactState::flat(&p, &sys.gait, 0.8);
        let x_plus = start.post_impact(&sys.gait, sys.xi);
        let closed = sys.propagate_controlled(&x_plus, 0.8);
        let dense = rk4_controlled(&sys, &x_plus, 0.8, t_set, 4000);
        assert!((closed - dense).amax() < 1e-8, "beta={beta}: {:e}", (closed - dense).amax());
        let k = QUADRATURE_PANELS / 2 - 1;
        let mid = sys.propagate_to_panel(k, &x_plus, 0.8);
        let dense_mid = rk4_controlled(&sys, &x_plus, 0.8, 0.5 * t_set, 2000);
        assert!((mid - dense_mid).amax() < 1e-8);

        let xbar = Vector2::new(closed[0], closed[3]);
        for dt in [0.0, 0.1, 0.37, 1.0] {
            let fall = sys.propagate_fall(&xbar, dt);
            let dense = rk4_fall(&sys, &xbar, dt, 2000);
            assert!((fall - dense).amax() < 1e-10, "dt={dt}: {:e}", (fall - dense).amax());
        }
    }
}

#[test]
fn short_interval_matches_taylor_series() {
    let (_, sys) = system(0.5, -0.5, 0.7);
    let t = 1e-3;
    let x = Vector6::new(0.1, -0.2, 0.3, 0.8, 0.7, -0.4);
    let mut term = x;
    let mut series = x;
    for k in 1..8 {
        term = sys.a * term * (t / k as f64);
        series += term;
    }
    assert!((sys.exp_apply(t, &x) - series).amax() < 1e-15);
    assert!((sys.exp_closed_form(t) - Matrix6::identity()).amax() > 0.0);
}

#[test]
fn fall_conserves_energy_like_quantity() {
    let (_, sys) = system(0.5, -0.5, 0.7);
    let shift = sys.b1_scalar / sys.omega_sq;
    let e = |x: &Vector2<f64>| 0.5 * (x[1] * x[1] - sys.omega_sq * (x[0] + shift).powi(2));
    let x0 = Vector2::new(0.05, 0.9);
    let e0 = e(&x0);
    for k in 0..=50 {
        let x = sys.propagate_fall(&x0, k as f64 * 0.02);
        assert!((e(&x) - e0).abs() < 1e-10);
    }
    let eq = Vector2::new(-shift, 0.0);
    assert!((sys.propagate_fall(&eq, 0.8) - eq).amax() < 1e-14);
}

/// Grid-scan oracle: repeatedly zooms a uniform grid around the sample
/// closest to the landing surface.
fn scan_landing(p: &PhysicalParams, sys: &LinearizedSystem, xbar: &Vector2<f64>, dh: f64, hi: f64) -> f64 {
    let height = |dt: f64| (fall_swing_height(p, &sys.gait, sys.propagate_fall(xbar, dt)[0]) - dh).abs();
    let (mut lo, mut hi) = (0.0, hi);
    while hi - lo > 1e-13 {
        let n = 1000;
        let step = (hi - lo) / n as f64;
        let best = (0..=n)
            .map(|i| lo + i as f64 * step)
            .min_by(|a, b| height(*a).total_cmp(&height(*b)))
            .unwrap();
        lo = (best - 2.0 * step).max(0.0);
        hi = best + 2.0 * step;
    }
    0.5 * (lo + hi)
}

#[test]
fn impact_time_matches_grid_scan() {
    for dh in [0.0, -0.02, 0.01] {
        let (p, sys) = system(0.5, -0.5, 0.7);
        let start = ImpactState::flat(&p, &sys.gait, 0.8);
        let x = sys.propagate_controlled(&start.post_impact(&sys.gait, sys.xi), 0.8);
        let xbar = Vector2::new(x[0], x[3]);
        let sol = impact_time(&p, &sys.gait, &sys, &xbar, dh).unwrap();
        let scanned = scan_landing(&p, &sys, &xbar, dh, 2.0 * sol.dt);
        assert!((sol.dt - scanned).abs() < 1e-9, "dh={dh}: {} vs {}", sol.dt, scanned);
        assert!((fall_swing_height(&p, &sys.gait, sol.theta2) - dh).abs() < 1e-12);
    }
}

#[test]
fn landing_root_geometry() {
    let p = PhysicalParams::reference();
    let gait = GaitParams::new(0.5, 0.7, 0.3, 0.7).unwrap();
    let flat = impact_posture_angle(&p, &gait, 0.0);
    let lower = impact_posture_angle(&p, &gait, -0.02);
    assert!(lower > flat);
    let q = gaitlab_core::clred::impact_configuration(&gait, flat);
    let foot = gaitlab_core::biped::swing_foot_position(&p, &q);
    assert!(foot[1].abs() < 1e-12);
    assert!((foot[0] - step_length(&p, &gait, flat)).abs() < 1e-12);
    let zero = GaitParams {
        alpha: 0.0,
        ..gait
    };
    assert_eq!(step_length(&p, &zero, 0.2), 0.0);
}

#[test]
fn step_length_decreases_with_knee_angle() {
    let p = PhysicalParams::reference();
    let mut last = f64::INFINITY;
    for i in 0..=100 {
        let gait = GaitParams::reference().with_beta(i as f64 * 0.01).unwrap();
        let l = step_length(&p, &gait, impact_posture_angle(&p, &gait, 0.0));
        assert!(l < last);
        last = l;
    }
}

#[test]
fn fixed_point_attracts() {
    let (p, sys) = system(0.5, -0.5, 0.7);
    let mut limits = Vec::new();
    // Slower starts fall back on the first step; faster ones land before the
    // settling time. Both models share this basin.
    for w0 in [0.66, 0.72, 0.8, 0.88] {
        let mut s = ImpactState::flat(&p, &sys.gait, w0);
        let mut residual = f64::INFINITY;
        for i in 0..50 {
            let (next, _) = clred_step_map(&p, &sys, s, 0.0, i).unwrap();
            residual = (next.theta1_dot - s.theta1_dot).abs();
            s = next;
        }
        assert!(residual < 1e-10, "start {w0}: residual {residual:e}");
        limits.push(s.theta1_dot);
    }
    for w in &limits {
        assert!((w - limits[0]).abs() < 1e-9);
    }
}

#[test]
fn straight_expansion_point_orderings() {
    let p = PhysicalParams::reference();
    let gait = GaitParams::reference().with_beta(0.5).unwrap();
    let steady = |kappa: f64| {
        let report = walkability(
            &p,
            &gait,
            &LinearizationConfig::from_kappa(kappa, 0.5),
            0.8,
            &TerrainProfile::flat(),
            &SettlingSchedule::uniform(),
            200,
        )
        .unwrap();
        assert!(report.walkable);
        *report.records.last().unwrap()
    };
    let (lean, straight) = (steady(-0.5), steady(0.0));
    assert!(straight.period < lean.period);
    assert!(straight.theta1_minus > lean.theta1_minus);
}

#[test]
fn zero_steps_is_vacuously_walkable() {
    let p = PhysicalParams::reference();
    let gait = GaitParams::reference();
    let report = walkability(
        &p,
        &gait,
        &LinearizationConfig::from_kappa(-0.5, gait.beta),
        0.8,
        &TerrainProfile::flat(),
        &SettlingSchedule::uniform(),
        0,
    )
    .unwrap();
    assert!(report.walkable && report.records.is_empty());
}
