use isac_coop::harness::{run_experiment, run_trial, symbol_source, ExperimentPlan, Scenario};
use isac_coop::otfs::{ChannelEngine, OtfsParams};
use isac_coop::scene::Vec2;
use isac_coop::Error;

fn small_scenario(pixel: f64) -> Scenario {
    let p = OtfsParams::new(16, 8, 1e6, 1e-6, 60e9, 16, 8, 1.0, 4e-20, 1.0).unwrap();
    let mut sc = Scenario::table_one().unwrap().with_params(p, pixel).unwrap();
    sc.roi = isac_coop::estimator::RoiGrid::centered(Vec2::new(0.0, 0.0), 1.0, 1.0, pixel, pixel).unwrap();
    sc
}

fn plan(sc: Scenario, n_trials: usize, add_noise: bool) -> ExperimentPlan {
    ExperimentPlan {
        scenario: sc,
        waypoints: vec![Vec2::new(30.0, 30.0), Vec2::new(48.3, 48.3)],
        n_trials,
        subsets: vec![vec![0], vec![0, 1], vec![0, 1, 2]],
        seed: 11,
        add_noise,
    }
}

#[test]
fn noiseless_error_is_within_gridding() {
    // stationary target: f_D = 0 lies on the coarse Doppler grid as well
    let mut sc = small_scenario(0.02);
    sc.target.velocity = Vec2::new(0.0, 0.0);
    let engine = ChannelEngine::exact(&sc.params);
    let res = run_experiment(&engine, &plan(sc, 1, false)).unwrap();
    assert_eq!(res.rows.len(), 6);
    for row in &res.rows {
        assert!(row.rmse_pos_m <= 2f64.sqrt() * 0.02 / 2.0, "{row:?}");
        assert_eq!((row.n_trials, row.n_failed), (1, 0));
        assert!(row.peb_m > 0.0 && row.crb_range_m > 0.0 && row.crb_angle_rad > 0.0);
    }
}

#[test]
fn experiments_are_reproducible_across_thread_counts() {
    let sc = small_scenario(0.05);
    let engine = ChannelEngine::exact(&sc.params);
    let pl = plan(sc, 4, true);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_experiment(&engine, &pl).unwrap().rows)
    };
    let a = run(1);
    assert_eq!(a, run(4));
    assert_eq!(a, run(1));
    assert!(a.iter().all(|r| r.rmse_pos_m > 0.0 && r.rmse_pos_m.is_finite()));
}

#[test]
fn failing_trials_abort_the_experiment() {
    let sc = small_scenario(0.05);
    let engine = ChannelEngine::exact(&sc.params);
    let mut pl = plan(sc, 3, true);
    // a 4 m RoI around this waypoint contains BS 1 itself
    pl.scenario.roi = isac_coop::estimator::RoiGrid::centered(Vec2::new(0.0, 0.0), 4.0, 4.0, 0.5, 0.5).unwrap();
    pl.waypoints = vec![Vec2::new(1.0, 1.0)];
    match run_experiment(&engine, &pl) {
        Err(Error::Experiment(msg)) => assert!(msg.contains("3 of 3 trials failed"), "{msg}"),
        other => panic!("expected abort, got {other:?}"),
    }
}

#[test]
fn invalid_plans_are_rejected() {
    let sc = small_scenario(0.05);
    let engine = ChannelEngine::exact(&sc.params);
    let mut pl = plan(sc, 1, true);
    pl.subsets = vec![vec![0, 3]];
    assert!(matches!(run_experiment(&engine, &pl), Err(Error::Config(_))));
    pl.subsets = vec![vec![0]];
    pl.waypoints = vec![Vec2::new(-5.0, 1.0)];
    assert!(matches!(run_experiment(&engine, &pl), Err(Error::Config(_))));
    pl.waypoints = vec![Vec2::new(30.0, 30.0)];
    pl.n_trials = 0;
    assert!(matches!(run_experiment(&engine, &pl), Err(Error::Config(_))));
}

#[test]
fn trials_are_keyed_not_sequenced() {
    let sc = small_scenario(0.05);
    let engine = ChannelEngine::exact(&sc.params);
    let wp = Vec2::new(30.0, 30.0);
    let target = sc.target_at(wp).unwrap();
    let roi = sc.roi_around(wp).unwrap();
    let a = run_trial(&engine, &sc, &target, &roi, &[0, 2], 5, &[0, 0, 7], true).unwrap();
    let _ = run_trial(&engine, &sc, &target, &roi, &[0, 2], 5, &[0, 0, 6], true).unwrap();
    let b = run_trial(&engine, &sc, &target, &roi, &[0, 2], 5, &[0, 0, 7], true).unwrap();
    assert_eq!(a.fusion.fused.values, b.fusion.fused.values);
    assert_eq!(a.receptions[1].y, b.receptions[1].y);
    let p = &sc.params;
    assert_eq!(a.frames[0], symbol_source(isac_coop::harness::bs_seed(5, &[0, 0, 7], 0), p.m, p.n));
}

#[test]
fn coarse_stage_lands_within_one_step_at_high_snr() {
    let p = OtfsParams::new(32, 16, 1e6, 1e-6, 60e9, 16, 8, 1.0, 4e-20, 1.0).unwrap();
    let sc = Scenario::table_one().unwrap().with_params(p.clone(), 0.05).unwrap();
    let engine = ChannelEngine::exact(&p);
    let wp = Vec2::new(15.0, 15.0);
    let target = sc.target_at(wp).unwrap();
    let roi = sc.roi_around(wp).unwrap();
    let steps = (
        sc.coarse.c_fd * p.doppler_resolution(),
        sc.coarse.c_tau * p.delay_resolution(),
        sc.coarse.c_phi * sc.coarse.beamwidth,
    );
    let mut hits = 0;
    for t in 0..100u64 {
        let rep = run_trial(&engine, &sc, &target, &roi, &[0], 3, &[t], true).unwrap();
        let (est, truth) = (&rep.record.per_bs[0], &rep.receptions[0].radial);
        if (est.f_d - truth.f_d).abs() <= steps.0
            && (est.tau - truth.tau).abs() <= steps.1
            && (est.phi - truth.phi).abs() <= steps.2
        {
            hits += 1;
        }
    }
    assert!(hits >= 95, "{hits} of 100");
}
