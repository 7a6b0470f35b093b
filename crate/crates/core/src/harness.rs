//! Seeded Monte Carlo experiments: RMSE of range, angle and position along a
//! list of waypoints, alongside the matching bounds.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::crlb::{peb_at, BoundSetup, PointBound};
use crate::estimator::{two_stage_estimate, CoarseSettings, Correlator, EstimateRecord, FusionResult, RoiGrid};
use crate::otfs::{ChannelEngine, DelayDopplerFrame, OtfsParams};
use crate::rng::{derive_seed, stream, Stream};
use crate::scene::{synthesize_rx, to_local, to_polar, Beamformer, BsSite, Reception, TargetState, Vec2};
use crate::{Error, Result, SPEED_OF_LIGHT};

/// Largest fraction of failed trials tolerated before an experiment aborts.
pub const MAX_FAILURE_FRACTION: f64 = 0.01;

/// Key-path tag for the frames used to evaluate bounds.
const BOUND_FRAME_TAG: u64 = 0xB0_0D;

/// Unit-modulus QPSK frame, `exp(j(pi/4 + k pi/2))`, deterministic per seed.
pub fn symbol_source(seed: u64, m: usize, n: usize) -> DelayDopplerFrame {
    let mut rng = stream(seed, &[], Stream::Symbols);
    let data = (0..m * n)
        .map(|_| Complex64::from_polar(1.0, FRAC_PI_4 + FRAC_PI_2 * rng.random_range(0..4u8) as f64))
        .collect();
    DelayDopplerFrame::from_vec(m, n, data).expect("length is m * n")
}

/// A deployment: waveform, stations, shared transmit beamformer, target and
/// search settings. The RoI extent and pixel size travel with the scenario;
/// experiments re-centre the RoI on each waypoint.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub params: OtfsParams,
    pub sites: Vec<BsSite>,
    pub beamformer: Beamformer,
    pub target: TargetState,
    pub roi: RoiGrid,
    pub coarse: CoarseSettings,
}

impl Scenario {
    /// RoI of the scenario's extent and pixel size, centred on `p`.
    pub fn roi_around(&self, p: Vec2) -> Result<RoiGrid> {
        let r = &self.roi;
        RoiGrid::centered(p, r.x_max() - r.x_min, r.y_max() - r.y_min, r.dx, r.dy)
    }

    pub fn check_subset(&self, subset: &[usize]) -> Result<()> {
        if subset.is_empty() {
            return Err(Error::Config("empty BS subset".into()));
        }
        for (k, &i) in subset.iter().enumerate() {
            if i >= self.sites.len() {
                return Err(Error::Config(format!(
                    "BS subset refers to BS {} but only {} are defined",
                    i + 1,
                    self.sites.len()
                )));
            }
            if subset[..k].contains(&i) {
                return Err(Error::Config(format!("BS {} listed twice in a subset", i + 1)));
            }
        }
        Ok(())
    }

    /// Target moved to `p`, keeping velocity and RCS.
    pub fn target_at(&self, p: Vec2) -> Result<TargetState> {
        TargetState::new(p, self.target.velocity, self.target.rcs)
    }

    /// Bounds with the target at `p`, using one seeded frame per BS.
    pub fn bound_at(&self, engine: &ChannelEngine, subset: &[usize], p: Vec2, seed: u64) -> Result<PointBound> {
        let frames = self.bound_frames(seed);
        let beamformers = vec![self.beamformer.clone(); self.sites.len()];
        let setup = BoundSetup {
            engine,
            sites: &self.sites,
            beamformers: &beamformers,
            frames: &frames,
            velocity: self.target.velocity,
            rcs: self.target.rcs,
        };
        peb_at(&setup, subset, p)
    }

    pub fn bound_frames(&self, seed: u64) -> Vec<DelayDopplerFrame> {
        (0..self.sites.len())
            .map(|i| symbol_source(derive_seed(seed, &[BOUND_FRAME_TAG, i as u64]), self.params.m, self.params.n))
            .collect()
    }
}

impl Scenario {
    /// Table I waveform on the 85 m square: BSs at three corners facing the
    /// centre, 40 deg transmit sector, 4 m x 4 m RoI with 2 cm pixels.
    pub fn table_one() -> Result<Self> {
        let params = OtfsParams::table_one();
        let sites = vec![
            BsSite::new(0, Vec2::new(0.0, 0.0), FRAC_PI_4),
            BsSite::new(1, Vec2::new(85.0, 85.0), 5.0 * FRAC_PI_4),
            BsSite::new(2, Vec2::new(85.0, 0.0), 3.0 * FRAC_PI_4),
        ];
        let beamformer = crate::scene::design_sector_beamformer(&params, 0.0, 40f64.to_radians())?;
        let target = TargetState::new(Vec2::new(48.3, 48.3), Vec2::new(5.0, 5.0), 1.0)?;
        let roi = RoiGrid::centered(target.position, 4.0, 4.0, 0.02, 0.02)?;
        let coarse = CoarseSettings::standard(&params);
        Ok(Self {
            params,
            sites,
            beamformer,
            target,
            roi,
            coarse,
        })
    }

    /// Same geometry with a different waveform; the beamformer, coarse
    /// settings and RoI pixel size are rebuilt for it.
    pub fn with_params(&self, params: OtfsParams, pixel: f64) -> Result<Self> {
        let beamformer =
            crate::scene::design_sector_beamformer(&params, self.beamformer.center, self.beamformer.width)?;
        let mut coarse = self.coarse;
        coarse.beamwidth = params.rx_beamwidth();
        let r = &self.roi;
        let centre = Vec2::new((r.x_min + r.x_max()) / 2.0, (r.y_min + r.y_max()) / 2.0);
        let roi = RoiGrid::centered(centre, r.x_max() - r.x_min, r.y_max() - r.y_min, pixel, pixel)?;
        Ok(Self {
            params,
            beamformer,
            coarse,
            roi,
            ..self.clone()
        })
    }
}

/// Everything one trial produced.
#[derive(Debug, Clone)]
pub struct TrialReport {
    pub receptions: Vec<Reception>,
    pub frames: Vec<DelayDopplerFrame>,
    pub record: EstimateRecord,
    pub fusion: FusionResult,
}

/// Seed of BS `bs` in a trial keyed by `key`.
pub fn bs_seed(master: u64, key: &[u64], bs: usize) -> u64 {
    let mut path = key.to_vec();
    path.push(bs as u64);
    derive_seed(master, &path)
}

/// Synthesise the receptions of `subset` and run the two-stage estimator.
#[allow(clippy::too_many_arguments)]
pub fn run_trial(
    engine: &ChannelEngine,
    scenario: &Scenario,
    target: &TargetState,
    roi: &RoiGrid,
    subset: &[usize],
    master: u64,
    key: &[u64],
    add_noise: bool,
) -> Result<TrialReport> {
    let p = engine.params();
    let mut receptions = Vec::with_capacity(subset.len());
    let mut frames = Vec::with_capacity(subset.len());
    let mut correlators = Vec::with_capacity(subset.len());
    let mut sites = Vec::with_capacity(subset.len());
    for &i in subset {
        let seed = bs_seed(master, key, i);
        let frame = symbol_source(seed, p.m, p.n);
        let rx = synthesize_rx(engine, &scenario.sites[i], target, &scenario.beamformer, &frame, seed, add_noise)?;
        correlators.push(Correlator::new(engine, &rx.y, &frame)?);
        receptions.push(rx);
        frames.push(frame);
        sites.push(scenario.sites[i]);
    }
    let (record, fusion) = two_stage_estimate(engine, &correlators, &sites, &scenario.coarse, roi)?;
    Ok(TrialReport {
        receptions,
        frames,
        record,
        fusion,
    })
}

#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub scenario: Scenario,
    pub waypoints: Vec<Vec2>,
    pub n_trials: usize,
    /// Zero-based BS indices per subset.
    pub subsets: Vec<Vec<usize>>,
    pub seed: u64,
    pub add_noise: bool,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(Error::Config("n_trials must be >= 1".into()));
        }
        if self.waypoints.is_empty() || self.subsets.is_empty() {
            return Err(Error::Config("plan needs at least one waypoint and one BS subset".into()));
        }
        for s in &self.subsets {
            self.scenario.check_subset(s)?;
        }
        for w in &self.waypoints {
            for s in &self.scenario.sites {
                let (tau, _) = to_polar(to_local(*w, s)).map_err(|e| {
                    Error::Config(format!("waypoint ({}, {}) not visible from BS {}: {e}", w.x, w.y, s.index + 1))
                })?;
                if tau >= self.scenario.params.t_slot {
                    return Err(Error::Config(format!(
                        "waypoint ({}, {}) is beyond one slot of delay from BS {}",
                        w.x,
                        w.y,
                        s.index + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One waypoint x subset cell of an experiment.
///
/// Range and angle refer to the first BS of the subset. The `*_m`/`*_rad`
/// values use the range and angle implied by the fused position; the
/// `coarse_*` values use that BS's coarse-stage delay and angle.
#[derive(Debug, Clone, PartialEq)]
pub struct RmseRow {
    pub waypoint: Vec2,
    pub subset: Vec<usize>,
    pub rmse_range_m: f64,
    pub crb_range_m: f64,
    pub rmse_angle_rad: f64,
    pub crb_angle_rad: f64,
    pub rmse_pos_m: f64,
    pub peb_m: f64,
    pub n_trials: usize,
    pub n_failed: usize,
    pub rmse_range_coarse_m: f64,
    pub rmse_angle_coarse_rad: f64,
    /// Standard error of `rmse_pos_m` (delta method).
    pub se_pos_m: f64,
}

#[derive(Debug, Clone)]
pub struct RmseResult {
    pub rows: Vec<RmseRow>,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, Copy)]
struct TrialErrors {
    pos2: f64,
    range2: f64,
    angle2: f64,
    range2_coarse: f64,
    angle2_coarse: f64,
}

fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

fn trial_errors(report: &TrialReport, truth: Vec2, site: &BsSite) -> Result<TrialErrors> {
    let local_true = to_local(truth, site);
    let (tau_true, phi_true) = to_polar(local_true)?;
    let r_true = tau_true * SPEED_OF_LIGHT / 2.0;
    let local_hat = to_local(report.fusion.position, site);
    let r_hat = local_hat.norm();
    let phi_hat = local_hat.y.atan2(local_hat.x);
    let coarse = &report.record.per_bs[0];
    let r_coarse = coarse.tau * SPEED_OF_LIGHT / 2.0;
    Ok(TrialErrors {
        pos2: (report.fusion.position - truth).dot(report.fusion.position - truth),
        range2: (r_hat - r_true).powi(2),
        angle2: wrap_angle(phi_hat - phi_true).powi(2),
        range2_coarse: (r_coarse - r_true).powi(2),
        angle2_coarse: wrap_angle(coarse.phi - phi_true).powi(2),
    })
}

/// Run every `(waypoint, subset, trial)` of the plan.
///
/// Trials are keyed by `(seed, waypoint, subset, trial)` and reduced in
/// index order, so the result does not depend on scheduling.
pub fn run_experiment(engine: &ChannelEngine, plan: &ExperimentPlan) -> Result<RmseResult> {
    plan.validate()?;
    let start = Instant::now();
    let sc = &plan.scenario;
    let mut rows = Vec::with_capacity(plan.waypoints.len() * plan.subsets.len());
    for (iw, &wp) in plan.waypoints.iter().enumerate() {
        let target = sc.target_at(wp)?;
        let roi = sc.roi_around(wp)?;
        for (is, subset) in plan.subsets.iter().enumerate() {
            let lead = sc.sites[subset[0]];
            let outcomes: Vec<Result<TrialErrors>> = (0..plan.n_trials)
                .into_par_iter()
                .map(|t| {
                    let key = [iw as u64, is as u64, t as u64];
                    let report = run_trial(engine, sc, &target, &roi, subset, plan.seed, &key, plan.add_noise)?;
                    trial_errors(&report, wp, &lead)
                })
                .collect();
            let mut ok = Vec::with_capacity(outcomes.len());
            let mut failures = Vec::new();
            for o in outcomes {
                match o {
                    Ok(e) => ok.push(e),
                    Err(e) => failures.push(e),
                }
            }
            let n_failed = failures.len();
            if n_failed as f64 > MAX_FAILURE_FRACTION * plan.n_trials as f64 {
                return Err(Error::Experiment(format!(
                    "{n_failed} of {} trials failed at waypoint ({}, {}) with BS subset {:?}; first failure: {}",
                    plan.n_trials,
                    wp.x,
                    wp.y,
                    subset.iter().map(|i| i + 1).collect::<Vec<_>>(),
                    failures[0]
                )));
            }
            let bound = sc.bound_at(engine, subset, wp, derive_seed(plan.seed, &[iw as u64]))?;
            let n = ok.len() as f64;
            let mean = |f: fn(&TrialErrors) -> f64| ok.iter().map(f).sum::<f64>() / n;
            let rmse_pos = mean(|e| e.pos2).sqrt();
            let mse_pos = rmse_pos * rmse_pos;
            let var_sq = ok.iter().map(|e| (e.pos2 - mse_pos).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            let se_pos = if rmse_pos > 0.0 {
                (var_sq / n).sqrt() / (2.0 * rmse_pos)
            } else {
                0.0
            };
            rows.push(RmseRow {
                waypoint: wp,
                subset: subset.clone(),
                rmse_range_m: mean(|e| e.range2).sqrt(),
                crb_range_m: bound.per_bs[0].range_efim,
                rmse_angle_rad: mean(|e| e.angle2).sqrt(),
                crb_angle_rad: bound.per_bs[0].angle_efim,
                rmse_pos_m: rmse_pos,
                peb_m: bound.peb,
                n_trials: plan.n_trials,
                n_failed,
                rmse_range_coarse_m: mean(|e| e.range2_coarse).sqrt(),
                rmse_angle_coarse_rad: mean(|e| e.angle2_coarse).sqrt(),
                se_pos_m: se_pos,
            });
        }
    }
    Ok(RmseResult {
        rows,
        wall_time: start.elapsed(),
    })
}
