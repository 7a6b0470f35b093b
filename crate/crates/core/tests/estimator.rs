use isac_coop::estimator::{
    channel_coeff_ml, coarse_estimate, fuse_position_ml, radar_map, single_bs_objective, CoarseGrid,
    CoarseSettings, Correlator, RoiGrid,
};
use isac_coop::otfs::{
    build_psi_dense, kron_steering, ChannelEngine, ChannelOperator, DelayDopplerFrame, OtfsParams,
    DEFAULT_DENSE_CAP,
};
use isac_coop::scene::{radial_params, to_local, to_polar, BsSite, TargetState, Vec2};
use isac_coop::{Complex64, SPEED_OF_LIGHT};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn params(m: usize, n: usize, n_rx: usize) -> OtfsParams {
    OtfsParams::new(m, n, 1e6, 1e-6, 60e9, 4, n_rx, 1.0, 4e-20, 1.0).unwrap()
}

fn cn(rng: &mut impl Rng) -> Complex64 {
    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

fn random_frame(p: &OtfsParams, rng: &mut impl Rng) -> DelayDopplerFrame {
    DelayDopplerFrame::from_vec(p.m, p.n, (0..p.m * p.n).map(|_| cn(rng)).collect()).unwrap()
}

fn random_op(p: &OtfsParams, rng: &mut impl Rng) -> ChannelOperator {
    ChannelOperator::new(
        p,
        rng.random_range(-2.0..2.0) * p.doppler_resolution(),
        rng.random_range(0.0..0.95) * p.t_slot,
        rng.random_range(-1.3..1.3),
    )
    .unwrap()
}

fn scaled(v: &[Complex64], h: Complex64) -> Vec<Complex64> {
    v.iter().map(|z| h * z).collect()
}

#[test]
fn noiseless_coefficient_is_recovered() {
    let p = params(8, 4, 2);
    let engine = ChannelEngine::exact(&p);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let op = random_op(&p, &mut rng);
        let x = random_frame(&p, &mut rng);
        let h = cn(&mut rng) * 1e-6;
        let y = scaled(&engine.g_x(&op, &x).unwrap(), h);
        let h_hat = channel_coeff_ml(&engine, &y, &op, &x).unwrap();
        assert!((h_hat - h).norm() / h.norm() < 1e-12);
    }
}

#[test]
fn orthogonal_reception_gives_zero() {
    let p = params(8, 4, 2);
    let engine = ChannelEngine::exact(&p);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let op = random_op(&p, &mut rng);
    let x = random_frame(&p, &mut rng);
    let gx = engine.g_x(&op, &x).unwrap();
    let mut y: Vec<Complex64> = (0..gx.len()).map(|_| cn(&mut rng)).collect();
    // Gram-Schmidt against Gx
    let proj: Complex64 = gx.iter().zip(&y).map(|(g, v)| g.conj() * v).sum::<Complex64>()
        / gx.iter().map(|g| g.norm_sqr()).sum::<f64>();
    for (v, g) in y.iter_mut().zip(&gx) {
        *v -= proj * g;
    }
    let ynorm: f64 = y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    assert!(channel_coeff_ml(&engine, &y, &op, &x).unwrap().norm() < 1e-12 * ynorm);
    assert!(single_bs_objective(&engine, &y, &op, &x).unwrap() < 1e-24 * ynorm * ynorm);
}

#[test]
fn zero_frame_is_undefined() {
    let p = params(8, 4, 2);
    let engine = ChannelEngine::exact(&p);
    let op = ChannelOperator::new(&p, 0.0, 0.0, 0.0).unwrap();
    let y = vec![Complex64::new(1.0, 0.0); p.frame_len() * p.n_rx];
    let x = DelayDopplerFrame::zeros(p.m, p.n);
    assert_eq!(
        channel_coeff_ml(&engine, &y, &op, &x),
        Err(isac_coop::Error::UndefinedCoefficient)
    );
}

#[test]
fn coefficient_matches_dense_least_squares() {
    let p = params(8, 4, 2);
    let engine = ChannelEngine::exact(&p);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let op = ChannelOperator::with_support(
            &p,
            rng.random_range(-2.0..2.0) * p.doppler_resolution(),
            rng.random_range(0.0..0.95) * p.t_slot,
            rng.random_range(-1.3..1.3),
            p.m,
        )
        .unwrap();
        let x = random_frame(&p, &mut rng);
        let psi = build_psi_dense(&op, DEFAULT_DENSE_CAP).unwrap();
        let psi_x = psi * DMatrix::from_column_slice(p.frame_len(), 1, x.as_slice());
        let gx = kron_steering(&op.steering(), psi_x.as_slice());
        let h = cn(&mut rng);
        let y: Vec<Complex64> = gx.iter().map(|g| h * g + 0.3 * cn(&mut rng)).collect();
        let a = DMatrix::from_column_slice(gx.len(), 1, &gx);
        let b = DMatrix::from_column_slice(y.len(), 1, &y);
        let oracle = a.svd(true, true).solve(&b, 1e-14).unwrap()[(0, 0)];
        let got = channel_coeff_ml(&engine, &y, &op, &x).unwrap();
        assert!((got - oracle).norm() / oracle.norm() < 1e-10, "{got} vs {oracle}");
    }
}

#[test]
fn objective_equals_energy_for_matched_input() {
    let p = params(8, 4, 3);
    let engine = ChannelEngine::exact(&p);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let op = random_op(&p, &mut rng);
    let x = random_frame(&p, &mut rng);
    let y = engine.g_x(&op, &x).unwrap();
    let energy: f64 = y.iter().map(|z| z.norm_sqr()).sum();
    let obj = single_bs_objective(&engine, &y, &op, &x).unwrap();
    assert!((obj - energy).abs() / energy < 1e-12);
}

#[test]
fn correlator_route_matches_direct_objective() {
    let p = params(16, 8, 4);
    let engine = ChannelEngine::exact(&p);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_frame(&p, &mut rng);
    let y: Vec<Complex64> = (0..p.frame_len() * p.n_rx).map(|_| cn(&mut rng)).collect();
    let corr = Correlator::new(&engine, &y, &x).unwrap();
    for _ in 0..20 {
        let op = random_op(&p, &mut rng);
        let direct = single_bs_objective(&engine, &y, &op, &x).unwrap();
        let sc = corr.split_correlation(&engine, op.f_d, op.split());
        let c = sc.antenna_correlations(&p, op.tau);
        let fast = sc.objective(&p, &c, op.phi);
        assert!((fast - direct).abs() / direct < 1e-10);
    }
}

/// Grid with `nf x nt x np` tuples whose middle tuple is the truth.
fn grid_around(p: &OtfsParams, f_d: f64, tau: f64, phi: f64, n: (usize, usize, usize)) -> CoarseGrid {
    let mut s = CoarseSettings::standard(p);
    let f_step = s.c_fd * p.doppler_resolution();
    let t_step = s.c_tau * p.delay_resolution();
    let a_step = s.c_phi * s.beamwidth;
    let lo = |c: f64, step: f64, k: usize| c - (k / 2) as f64 * step;
    let hi = |c: f64, step: f64, k: usize| c + (k - 1 - k / 2) as f64 * step;
    s.f_d_range = Some((lo(f_d, f_step, n.0), hi(f_d, f_step, n.0)));
    CoarseGrid::new(
        p,
        &s,
        (lo(tau, t_step, n.1), hi(tau, t_step, n.1)),
        (lo(phi, a_step, n.2), hi(phi, a_step, n.2)),
    )
    .unwrap()
}

#[test]
fn exhaustive_sweep_peaks_at_truth() {
    let p = params(16, 8, 4);
    let engine = ChannelEngine::exact(&p);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..5 {
        let f_d = rng.random_range(-0.5..0.5) * p.doppler_resolution();
        let tau = (rng.random_range(5..10) as f64) * p.delay_resolution();
        let phi = rng.random_range(-0.6..0.6);
        let grid = grid_around(&p, f_d, tau, phi, (5, 5, 5));
        let truth = grid.f_d[2];
        let x = random_frame(&p, &mut rng);
        let op = ChannelOperator::new(&p, truth, grid.tau[2], grid.phi[2]).unwrap();
        let y = scaled(&engine.g_x(&op, &x).unwrap(), Complex64::new(0.0, 2e-5));
        let peak = single_bs_objective(&engine, &y, &op, &x).unwrap();
        for &fi in &grid.f_d {
            for &ti in &grid.tau {
                for &ai in &grid.phi {
                    let other = ChannelOperator::new(&p, fi, ti, ai).unwrap();
                    assert!(single_bs_objective(&engine, &y, &other, &x).unwrap() <= peak * (1.0 + 1e-12));
                }
            }
        }
        let corr = Correlator::new(&engine, &y, &x).unwrap();
        let est = coarse_estimate(&engine, &corr, &grid).unwrap();
        assert_eq!(est.index, (2, 2, 2));
        assert!((est.h - Complex64::new(0.0, 2e-5)).norm() < 1e-12 * 2e-5);
    }
}

#[test]
fn ties_resolve_to_first_tuple() {
    let p = params(8, 4, 2);
    let engine = ChannelEngine::exact(&p);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random_frame(&p, &mut rng);
    // y = 0 makes every tuple score exactly zero
    let y = vec![Complex64::new(0.0, 0.0); p.frame_len() * p.n_rx];
    let corr = Correlator::new(&engine, &y, &x).unwrap();
    let grid = grid_around(&p, 0.0, 3.0 * p.delay_resolution(), 0.0, (3, 3, 3));
    assert_eq!(coarse_estimate(&engine, &corr, &grid).unwrap().index, (0, 0, 0));

}

fn objective_invariance(p: &OtfsParams, seed: u64, c: Complex64) {
    let engine = ChannelEngine::exact(p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let op = random_op(p, &mut rng);
    let x = random_frame(p, &mut rng);
    let y: Vec<Complex64> = (0..p.frame_len() * p.n_rx).map(|_| cn(&mut rng)).collect();
    let base = single_bs_objective(&engine, &y, &op, &x).unwrap();
    let scaled_obj = single_bs_objective(&engine, &scaled(&y, c), &op, &x).unwrap();
    assert!((scaled_obj - c.norm_sqr() * base).abs() <= 1e-10 * scaled_obj.max(1e-300));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn objective_scales_with_modulus_squared(seed in 0u64..1000, mag in 0.01f64..100.0, arg in 0.0f64..std::f64::consts::TAU) {
        objective_invariance(&params(8, 4, 2), seed, Complex64::from_polar(mag, arg));
    }
}

/// Three BSs around a small square; delays stay below one slot.
fn small_scene() -> (Vec<BsSite>, Vec2) {
    let sites = vec![
        BsSite::new(0, Vec2::new(0.0, 0.0), PI / 4.0),
        BsSite::new(1, Vec2::new(60.0, 60.0), 5.0 * PI / 4.0),
        BsSite::new(2, Vec2::new(60.0, 0.0), 3.0 * PI / 4.0),
    ];
    (sites, Vec2::new(31.0, 29.0))
}

fn receptions(
    engine: &ChannelEngine,
    sites: &[BsSite],
    target: &TargetState,
    rng: &mut impl Rng,
) -> (Vec<Correlator>, Vec<f64>) {
    let p = engine.params();
    let mut corrs = Vec::new();
    let mut dopp = Vec::new();
    for site in sites {
        let r = radial_params(target, site, p).unwrap();
        let op = ChannelOperator::new(p, r.f_d, r.tau, r.phi).unwrap();
        let x = random_frame(p, rng);
        let y = scaled(&engine.g_x(&op, &x).unwrap(), cn(rng) * 1e-5);
        corrs.push(Correlator::new(engine, &y, &x).unwrap());
        dopp.push(r.f_d);
    }
    (corrs, dopp)
}

#[test]
fn fusion_recovers_true_pixel_noiseless() {
    let p = params(32, 8, 8);
    let engine = ChannelEngine::exact(&p);
    let (sites, centre) = small_scene();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for k in 0..4 {
        let roi = RoiGrid::centered(centre, 6.0, 6.0, 0.5, 0.5).unwrap();
        let truth = roi.point(3 + 2 * k, 9 - k);
        let target = TargetState::new(truth, Vec2::new(3.0, -4.0), 1.0).unwrap();
        for n_bs in 1..=3 {
            let (corrs, dopp) = receptions(&engine, &sites[..n_bs], &target, &mut rng);
            let res = fuse_position_ml(&engine, &corrs, &sites[..n_bs], &dopp, &roi).unwrap();
            if n_bs == 3 {
                assert!((res.position - truth).norm() < 1e-9, "{:?} vs {truth:?}", res.position);
            }
            for (k, v) in res.fused.values.iter().enumerate() {
                let sum: f64 = res.per_bs.iter().map(|m| m.values[k]).sum();
                assert_eq!(*v, sum);
                if v.is_finite() {
                    assert!(*v >= 0.0);
                    for m in &res.per_bs {
                        assert!(*v >= m.values[k]);
                    }
                }
            }
        }
    }
}

#[test]
fn single_bs_map_matches_direct_objective() {
    let p = params(16, 8, 4);
    let engine = ChannelEngine::exact(&p);
    let (sites, centre) = small_scene();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random_frame(&p, &mut rng);
    let y: Vec<Complex64> = (0..p.frame_len() * p.n_rx).map(|_| cn(&mut rng)).collect();
    let corr = Correlator::new(&engine, &y, &x).unwrap();
    let roi = RoiGrid::centered(centre, 4.0, 4.0, 1.0, 1.0).unwrap();
    let f_d = 1234.0;
    let map = radar_map(&engine, &corr, &sites[0], f_d, &roi);
    for iy in 0..roi.ny {
        for ix in 0..roi.nx {
            let (tau, phi) = to_polar(to_local(roi.point(ix, iy), &sites[0])).unwrap();
            let op = ChannelOperator::new(&p, f_d, tau, phi).unwrap();
            let direct = single_bs_objective(&engine, &y, &op, &x).unwrap();
            assert!((map.value(ix, iy) - direct).abs() / direct < 1e-10);
        }
    }
}

/// Joint search over per-BS `(f_D, tau, phi)` tied together by the position:
/// with Doppler known the joint likelihood reduces to the fused map.
#[test]
fn fused_map_agrees_with_joint_search_oracle() {
    let p = params(16, 4, 4);
    let engine = ChannelEngine::exact(&p);
    let (sites, centre) = small_scene();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let roi = RoiGrid::centered(centre, 4.0, 4.0, 1.0, 1.0).unwrap();
    let target = TargetState::new(roi.point(1, 3), Vec2::new(-2.0, 1.0), 1.0).unwrap();
    let mut ys = Vec::new();
    let mut xs = Vec::new();
    let mut dopp = Vec::new();
    for site in &sites {
        let r = radial_params(&target, site, &p).unwrap();
        let op = ChannelOperator::new(&p, r.f_d, r.tau, r.phi).unwrap();
        let x = random_frame(&p, &mut rng);
        let y: Vec<Complex64> = engine
            .g_x(&op, &x)
            .unwrap()
            .iter()
            .map(|g| 1e-5 * g + 1e-7 * cn(&mut rng))
            .collect();
        ys.push(y);
        xs.push(x);
        dopp.push(r.f_d);
    }
    let corrs: Vec<Correlator> = ys.iter().zip(&xs).map(|(y, x)| Correlator::new(&engine, y, x).unwrap()).collect();
    let res = fuse_position_ml(&engine, &corrs, &sites, &dopp, &roi).unwrap();

    let mut best = (f64::NEG_INFINITY, Vec2::new(0.0, 0.0));
    for ix in 0..roi.nx {
        for iy in 0..roi.ny {
            let pt = roi.point(ix, iy);
            let mut total = 0.0;
            for (k, site) in sites.iter().enumerate() {
                let (tau, phi) = to_polar(to_local(pt, site)).unwrap();
                let op = ChannelOperator::new(&p, dopp[k], tau, phi).unwrap();
                // maximise over h explicitly: ||y||^2 - min_h ||y - h G x||^2
                let h = channel_coeff_ml(&engine, &ys[k], &op, &xs[k]).unwrap();
                let gx = engine.g_x(&op, &xs[k]).unwrap();
                let resid: f64 = ys[k].iter().zip(&gx).map(|(y, g)| (y - h * g).norm_sqr()).sum();
                let ynorm: f64 = ys[k].iter().map(|z| z.norm_sqr()).sum();
                total += ynorm - resid;
            }
            if total > best.0 {
                best = (total, pt);
            }
        }
    }
    assert!((res.position - best.1).norm() < 1e-9);
    assert!((res.peak - best.0).abs() / best.0 < 1e-8);
}

#[test]
fn pixels_behind_an_array_are_excluded() {
    let p = params(16, 4, 4);
    let engine = ChannelEngine::exact(&p);
    let site = BsSite::new(0, Vec2::new(0.0, 0.0), 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random_frame(&p, &mut rng);
    let y: Vec<Complex64> = (0..p.frame_len() * p.n_rx).map(|_| cn(&mut rng)).collect();
    let corr = Correlator::new(&engine, &y, &x).unwrap();
    let roi = RoiGrid::new(-2.0, 2.0, 5.0, 6.0, 1.0, 1.0).unwrap();
    let res = fuse_position_ml(&engine, std::slice::from_ref(&corr), &[site], &[0.0], &roi).unwrap();
    // x <= 0 columns lie at |phi| >= pi/2 for a BS facing +x
    assert_eq!(res.excluded, 3 * roi.ny);
    assert!(res.position.x > 0.0);

    let behind = RoiGrid::new(-6.0, -4.0, -1.0, 1.0, 1.0, 1.0).unwrap();
    assert!(fuse_position_ml(&engine, &[corr], &[site], &[0.0], &behind).is_err());
}

#[test]
fn maps_are_identical_across_thread_counts() {
    let p = params(32, 8, 8);
    let engine = ChannelEngine::exact(&p);
    let (sites, centre) = small_scene();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let target = TargetState::new(centre, Vec2::new(1.0, 1.0), 1.0).unwrap();
    let (corrs, dopp) = receptions(&engine, &sites, &target, &mut rng);
    let roi = RoiGrid::centered(centre, 4.0, 4.0, 0.25, 0.25).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| fuse_position_ml(&engine, &corrs, &sites, &dopp, &roi).unwrap())
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a.fused.values, b.fused.values);
    assert_eq!(a.position, b.position);
}

#[test]
fn local_extent_brackets_every_pixel() {
    let (sites, centre) = small_scene();
    let roi = RoiGrid::centered(centre, 4.0, 4.0, 0.5, 0.5).unwrap();
    for site in &sites {
        let ((t0, t1), (a0, a1)) = roi.local_extent(site).unwrap();
        for k in 0..roi.len() {
            let (t, a) = to_polar(to_local(roi.point(k % roi.nx, k / roi.nx), site)).unwrap();
            assert!(t >= t0 - 1e-18 && t <= t1 + 1e-18);
            assert!(a >= a0 - 1e-12 && a <= a1 + 1e-12);
        }
        assert!(t1 < 2.0 * 100.0 / SPEED_OF_LIGHT);
    }
}
