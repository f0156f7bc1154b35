//! Integration checks of the driver-level statistics: moment-bound scaling
//! of the rescaled lifts, Hölder-norm stability, convergence-study plumbing
//! and the wire formats.

use thermostat_lab::io;
use thermostat_lab::micro::{self, uniform_grid, ModelParams};
use thermostat_lab::rng::RngStream;
use thermostat_lab::rough::RoughPathGrid;
use thermostat_lab::sde::PathSample;
use thermostat_lab::stats::converge::{weak_convergence_study, ConvergenceStudyConfig};
use thermostat_lab::stats::moments::{driver_lift_ensemble, moment_scaling_fit, LiftLevel};

#[test]
fn moment_scaling_slopes_near_the_diffusive_exponents() {
    // gaps must sit in the diffusive regime (gap >> eps^2, where collisions
    // have mixed the slope) while spanning two decades
    let gaps = [0.1, 0.316, 1.0, 3.16, 10.0];
    let lifts = driver_lift_ensemble(2, 2, 1.0, 0.1, 20.0, 401, 600, 0x40).unwrap();
    let level1 = moment_scaling_fit(&lifts, &gaps, 4.0, LiftLevel::Path).unwrap();
    assert!(
        (0.4..=0.6).contains(&level1.slope),
        "level-1 slope {}",
        level1.slope
    );
    let level2 = moment_scaling_fit(&lifts, &gaps, 4.0, LiftLevel::Area).unwrap();
    assert!(
        (0.8..=1.2).contains(&level2.slope),
        "level-2 slope {}",
        level2.slope
    );
}

#[test]
fn moment_fit_validates_inputs() {
    let lifts = driver_lift_ensemble(1, 2, 1.0, 0.3, 1.0, 101, 4, 0x41).unwrap();
    // q must exceed 3
    assert!(
        moment_scaling_fit(&lifts, &[0.01, 0.05, 0.1, 0.5, 1.0], 2.0, LiftLevel::Path).is_err()
    );
    // gaps must span two decades and offer five sizes
    assert!(moment_scaling_fit(&lifts, &[0.1, 0.2, 0.4, 0.6, 0.8], 4.0, LiftLevel::Path).is_err());
    assert!(moment_scaling_fit(&lifts, &[0.01, 1.0], 4.0, LiftLevel::Path).is_err());

    // a non-uniform grid is rejected rather than silently misread
    let path = micro::DriverPath::from_points(
        1,
        vec![0.0, 0.3, 1.0, 2.0, 4.0, 8.0],
        vec![0.0, 0.3, 0.9, 1.2, 2.0, 3.1],
    )
    .unwrap();
    let skewed = RoughPathGrid::canonical_lift(&path, &[0.0, 0.5, 0.7, 3.0, 8.0]).unwrap();
    assert!(moment_scaling_fit(
        &[skewed],
        &[0.01, 0.1, 0.5, 0.9, 1.0, 7.0],
        4.0,
        LiftLevel::Path
    )
    .is_err());
}

#[test]
fn holder_norms_stable_under_grid_refinement_for_brownian_like_drivers() {
    // one rescaled driver, lifted on 1e3 and 1e4 point grids (both within
    // the exhaustive pair-scan cap)
    let lifts_coarse = driver_lift_ensemble(2, 2, 1.0, 0.1, 1.0, 1_000, 1, 0x42).unwrap();
    let lifts_fine = driver_lift_ensemble(2, 2, 1.0, 0.1, 1.0, 10_000, 1, 0x42).unwrap();
    let rc = lifts_coarse[0].holder_report(0.4).unwrap();
    let rf = lifts_fine[0].holder_report(0.4).unwrap();
    assert!(rc.exhaustive_pairs && rf.exhaustive_pairs);
    assert!(rc.seminorm_w.is_finite() && rf.seminorm_w.is_finite());
    let ratio = rf.seminorm_w / rc.seminorm_w;
    assert!(
        (0.5..2.0).contains(&ratio),
        "refinement changed |W|_a by {ratio}"
    );
    let ratio2 = rf.seminorm_ww / rc.seminorm_ww;
    assert!(
        (0.5..2.0).contains(&ratio2),
        "refinement changed |WW|_2a by {ratio2}"
    );
}

#[test]
fn convergence_study_smoke() {
    let cfg = ConvergenceStudyConfig {
        n_particles: 2,
        dim: 2,
        collision_rate: 1.0,
        total_energy: 2.0,
        eps_schedule: vec![0.5, 0.35],
        obs_times: vec![0.5],
        paths: 300,
        micro_ode_step: 0.02,
        sde_step: 0.005,
        seed: 0x43,
        max_micro_horizon: None,
    };
    let report = weak_convergence_study(&cfg).unwrap();
    assert_eq!(report.comparisons.len(), 4); // 2 eps x 1 time x 2 coordinates
    assert_eq!(report.trends.len(), 2);
    for c in &report.comparisons {
        assert!(c.ks.statistic.is_finite());
        assert!(c.micro_moments[0] > 0.0 && c.limit_moments[0] > 0.0);
    }
    // the eps schedule must decrease
    let mut bad = cfg.clone();
    bad.eps_schedule = vec![0.2, 0.4];
    assert!(weak_convergence_study(&bad).is_err());

    // a horizon budget omits the too-expensive eps values but keeps going
    let mut capped = cfg.clone();
    capped.max_micro_horizon = Some(3.0);
    let partial = weak_convergence_study(&capped).unwrap();
    assert_eq!(partial.omitted.len(), 1);
    assert_eq!(partial.omitted[0].0, 0.35);
    assert_eq!(partial.comparisons.len(), 2); // only eps = 0.5 ran

    // a budget below every eps is an error
    capped.max_micro_horizon = Some(0.5);
    assert!(weak_convergence_study(&capped).is_err());
}

#[test]
fn trajectory_csv_round_trips_the_driver() {
    let params = ModelParams::new(2, 2, 1.0, 0.2, 2.0, 5.0, 0.01);
    let mut rng = RngStream::new(0x44, 0);
    let traj = micro::simulate_trajectory(&params, 21, &mut rng).unwrap();
    let mut buf = Vec::new();
    io::write_trajectory_csv(&traj, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("t,p_1,p_2,p_3,p_4,u_1,u_2,u_3,u_4,Phi_1,Phi_2,Phi_3,Phi_4"));

    let driver = io::read_driver_from_trajectory_csv(&text).unwrap();
    assert_eq!(driver.dim(), 4);
    // grid samples of the parsed polyline agree with the exact driver
    for &t in &traj.grid {
        let exact = traj.driver.value_at(t).unwrap();
        let parsed = driver.value_at(t).unwrap();
        for (a, b) in exact.iter().zip(&parsed) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    // malformed rows carry their line number
    let broken = text.replace("\n0.25,", "\n0.25;");
    match io::read_driver_from_trajectory_csv(&broken) {
        Err(thermostat_lab::Error::MalformedInput { line, .. }) => assert!(line > 1),
        other => panic!("expected MalformedInput, got {other:?}"),
    }
}

#[test]
fn lift_and_path_sample_csv_headers() {
    let path = micro::DriverPath::from_points(2, vec![0.0, 1.0], vec![0.0, 0.0, 1.0, 2.0]).unwrap();
    let lift = RoughPathGrid::canonical_lift(&path, &uniform_grid(0.0, 1.0, 3)).unwrap();
    let mut buf = Vec::new();
    io::write_lift_csv(&lift, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("t,W_1,W_2,WW_1_1,WW_1_2,WW_2_1,WW_2_2"));
    assert_eq!(text.lines().count(), 4);

    let sample = PathSample {
        times: vec![0.0, 0.5],
        states: vec![1.0, 2.0, 3.0, 4.0],
        dim: 2,
        seed: (1, 2),
        rejected_steps: 0,
    };
    let mut buf = Vec::new();
    io::write_path_sample_csv(&sample, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text, "t,x_1,x_2\n0,1,2\n0.5,3,4\n");
}
