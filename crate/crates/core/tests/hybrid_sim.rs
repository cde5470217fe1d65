use gaitlab_core::biped::{kinetic_energy, potential_energy};
use gaitlab_core::clred::step_length;
use gaitlab_core::sim::{initial_state, integrate_step, run_gait_until};
use gaitlab_core::{run_gait, FailureKind, GaitParams, PhysicalParams, SettlingSchedule, SimConfig, TerrainProfile};

#[test]
fn step_period_converges_under_dt_halving() {
    let p = PhysicalParams::reference();
    let gait = GaitParams::reference().with_beta(0.5).unwrap();
    let start = initial_state(&p, &gait, 0.8);
    let period = |dt: f64| {
        let cfg = SimConfig {
            dt,
            ..SimConfig::default()
        };
        integrate_step(&p, &gait, &cfg, &start, 0.8, 0.0, 0, 0.0).unwrap().record.period
    };
    let (coarse, fine) = (period(1e-4), period(5e-5));
    assert!((coarse - fine).abs() < 1e-6, "{coarse} vs {fine}");
}

#[test]
fn runs_are_deterministic() {
    let p = PhysicalParams::reference();
    let gait = GaitParams::reference();
    let cfg = SimConfig::default();
    let a = run_gait(&p, &gait, &cfg, 0.8, 3).unwrap();
    let b = run_gait(&p, &gait, &cfg, 0.8, 3).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.final_state, b.final_state);
}

#[test]
fn rigid_fall_conserves_energy_and_lands_at_theoretical_length() {
    let p = PhysicalParams::reference();
    let gait = GaitParams::reference().with_beta(0.5).unwrap();
    let cfg = SimConfig {
        trace_stride: 1,
        ..SimConfig::default()
    };
    let start = initial_state(&p, &gait, 0.8);
    let out = integrate_step(&p, &gait, &cfg, &start, 0.8, 0.0, 0, 0.0).unwrap();
    let energy = |s: &gaitlab_core::FullState| kinetic_energy(&p, &s.q, &s.qdot) + potential_energy(&p, &s.q);
    let fall: Vec<f64> = out
        .trace
        .samples
        .iter()
        .filter(|x| x.state.t > gait.t_set)
        .map(|x| energy(&x.state))
        .collect();
    assert!(fall.len() > 100);
    let drift = fall.iter().map(|e| (e - fall[0]).abs()).fold(0.0, f64::max);
    assert!(drift < 1e-6, "energy drift {drift:e} J");

    let theta2 = out.state_minus.q[3];
    let expected = step_length(&p, &gait, theta2);
    assert!((out.record.step_length - expected).abs() < 1e-6);
    assert!(out.max_drift < 1e-9);
}

#[test]
fn duration_limit_stops_early() {
    let p = PhysicalParams::reference();
    let gait = GaitParams::reference();
    let run = run_gait_until(&p, &gait, &SimConfig::default(), 0.8, 100, Some(2.0)).unwrap();
    assert!(run.failure.is_none());
    assert!(run.elapsed >= 2.0 && run.records.len() < 100);
    let last = run.records.last().unwrap();
    assert!(run.elapsed - last.period < 2.0);
}

#[test]
fn early_override_is_reported_as_control_incomplete() {
    let p = PhysicalParams::reference();
    let gait = GaitParams::reference().with_beta(0.7).unwrap();
    // Step 0 lands on the lower surface; the faster step that follows lands
    // before its posture is reached.
    let cfg = SimConfig {
        terrain: TerrainProfile::single_step(1, -0.02),
        settling: SettlingSchedule::uniform(),
        ..SimConfig::default()
    };
    let run = run_gait(&p, &gait, &cfg, 0.8, 3).unwrap();
    let f = run.failure.as_ref().expect("descent with full settling time fails");
    assert_eq!((f.step, f.kind), (1, FailureKind::ControlIncomplete));
    assert_eq!(run.records.len(), 1);
    for r in &run.records {
        assert!(r.min_fz.unwrap() > 0.0);
        assert!(r.min_clearance > 0.0);
    }
}
