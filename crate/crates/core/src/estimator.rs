//! Maximum-likelihood estimation: closed-form channel coefficient, reduced
//! single-BS objective, coarse per-BS grid search and fused radar maps.
//!
//! All objective evaluations go through [`Correlator`], which keeps the
//! received signal and the transmitted frame in the time-frequency domain.
//! Because the symplectic transform is unitary, `y_j^H (Psi x)` equals the
//! same inner product taken between TF grids, and since the delay enters
//! `Psi x` only through a per-subcarrier phase ramp and the integer delay
//! split, one mixing per `(f_D, split)` serves every delay and angle that
//! share it.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::otfs::{
    array_response, delay_split, ChannelEngine, ChannelOperator, DelayDopplerFrame, OtfsParams,
};
use crate::scene::{to_local, to_polar, BsSite, Vec2};
use crate::{Error, Result, SPEED_OF_LIGHT};

/// `x^H G^H y / ||G x||^2`, computed through the operator without forming `G`.
pub fn channel_coeff_ml(
    engine: &ChannelEngine,
    y: &[Complex64],
    op: &ChannelOperator,
    x: &DelayDopplerFrame,
) -> Result<Complex64> {
    let (corr, energy) = steered_correlation(engine, y, op, x)?;
    Ok(corr.conj() / energy)
}

/// Reduced likelihood `|y^H G x|^2 / ||G x||^2`.
pub fn single_bs_objective(
    engine: &ChannelEngine,
    y: &[Complex64],
    op: &ChannelOperator,
    x: &DelayDopplerFrame,
) -> Result<f64> {
    let (corr, energy) = steered_correlation(engine, y, op, x)?;
    Ok(corr.norm_sqr() / energy)
}

/// `(y^H G x, ||G x||^2)` using `y^H G x = sum_j b_j(phi) y_j^H (Psi x)`.
fn steered_correlation(
    engine: &ChannelEngine,
    y: &[Complex64],
    op: &ChannelOperator,
    x: &DelayDopplerFrame,
) -> Result<(Complex64, f64)> {
    let p = engine.params();
    let len = p.frame_len();
    if y.len() != len * p.n_rx {
        return Err(Error::Config(format!(
            "received vector has {} samples, expected M N N_R = {}",
            y.len(),
            len * p.n_rx
        )));
    }
    let psi = engine.psi_x(op, x)?;
    let psi_energy: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
    let energy = p.n_rx as f64 * psi_energy;
    if energy == 0.0 {
        return Err(Error::UndefinedCoefficient);
    }
    let b = op.steering();
    let corr = y
        .chunks_exact(len)
        .zip(&b)
        .map(|(yj, bj)| bj * yj.iter().zip(&psi).map(|(a, s)| a.conj() * s).sum::<Complex64>())
        .sum();
    Ok((corr, energy))
}

/// Received signal and transmitted frame of one BS, held in the TF domain.
#[derive(Debug, Clone)]
pub struct Correlator {
    params: OtfsParams,
    /// `conj(Y_j[n, m])`, antenna-major.
    y_tf_conj: Vec<Complex64>,
    x_tf: Vec<Complex64>,
}

/// Everything needed to score any `(tau, phi)` sharing one `(f_D, split)`.
#[derive(Debug, Clone)]
pub struct SplitCorrelation {
    /// `u_j[m] = sum_n conj(Y_j[n,m]) Z0[n,m]`, antenna-major `N_R x M`.
    u: Vec<Complex64>,
    /// `||Psi x||^2`.
    psi_energy: f64,
}

impl Correlator {
    pub fn new(engine: &ChannelEngine, y: &[Complex64], x: &DelayDopplerFrame) -> Result<Self> {
        let p = engine.params();
        let len = p.frame_len();
        if y.len() != len * p.n_rx {
            return Err(Error::Config(format!(
                "received vector has {} samples, expected M N N_R = {}",
                y.len(),
                len * p.n_rx
            )));
        }
        let mut y_tf = y.to_vec();
        for block in y_tf.chunks_exact_mut(len) {
            engine.fft().isfft_in_place(block);
        }
        y_tf.iter_mut().for_each(|z| *z = z.conj());
        let x_tf = engine.fft().isfft(x)?.into_vec();
        Ok(Self {
            params: p.clone(),
            y_tf_conj: y_tf,
            x_tf,
        })
    }

    pub fn params(&self) -> &OtfsParams {
        &self.params
    }

    pub fn split_correlation(&self, engine: &ChannelEngine, f_d: f64, split: usize) -> SplitCorrelation {
        let (m, len) = (self.params.m, self.params.frame_len());
        let z0 = engine.mix(&self.x_tf, f_d, split);
        let psi_energy = z0.iter().map(|z| z.norm_sqr()).sum();
        let mut u = vec![Complex64::new(0.0, 0.0); self.params.n_rx * m];
        for (yj, uj) in self.y_tf_conj.chunks_exact(len).zip(u.chunks_exact_mut(m)) {
            for (yrow, zrow) in yj.chunks_exact(m).zip(z0.chunks_exact(m)) {
                for ((acc, a), b) in uj.iter_mut().zip(yrow).zip(zrow) {
                    *acc += a * b;
                }
            }
        }
        SplitCorrelation { u, psi_energy }
    }
}

impl SplitCorrelation {
    /// Per-antenna `c_j = y_j^H Psi x` at delay `tau`.
    pub fn antenna_correlations(&self, params: &OtfsParams, tau: f64) -> Vec<Complex64> {
        let m = params.m;
        let ramp = ramp_recursive(params, tau);
        self.u
            .chunks_exact(m)
            .map(|uj| uj.iter().zip(&ramp).map(|(a, r)| a * r).sum())
            .collect()
    }

    pub fn psi_energy(&self) -> f64 {
        self.psi_energy
    }

    /// `(y^H G x, ||G x||^2)` at `phi` from precomputed antenna correlations.
    pub fn steer(&self, params: &OtfsParams, c: &[Complex64], phi: f64) -> (Complex64, f64) {
        let b = array_response(phi, params.n_rx);
        let corr = b.iter().zip(c).map(|(bj, cj)| bj * cj).sum();
        (corr, params.n_rx as f64 * self.psi_energy)
    }

    pub fn objective(&self, params: &OtfsParams, c: &[Complex64], phi: f64) -> f64 {
        let (corr, energy) = self.steer(params, c, phi);
        if energy == 0.0 {
            0.0
        } else {
            corr.norm_sqr() / energy
        }
    }
}

fn ramp_recursive(params: &OtfsParams, tau: f64) -> Vec<Complex64> {
    let step = Complex64::from_polar(1.0, -2.0 * PI * params.delta_f * tau);
    let mut out = Vec::with_capacity(params.m);
    let mut cur = Complex64::new(1.0, 0.0);
    for _ in 0..params.m {
        out.push(cur);
        cur *= step;
    }
    out
}

/// Inclusive arithmetic grid `start, start + step, ...` not exceeding `end`.
fn arange(start: f64, end: f64, step: f64) -> Vec<f64> {
    let count = ((end - start) / step + 1e-9).floor() as usize + 1;
    (0..count).map(|i| start + i as f64 * step).collect()
}

/// Search factors and ranges of the coarse `(f_D, tau, phi)` grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseSettings {
    pub c_fd: f64,
    pub c_tau: f64,
    pub c_phi: f64,
    /// Angular resolution used for the angle step (rad).
    pub beamwidth: f64,
    /// Doppler search interval (Hz); `None` means `+-2` Doppler bins.
    pub f_d_range: Option<(f64, f64)>,
}

impl CoarseSettings {
    /// Delay at full resolution, Doppler and angle at a quarter of theirs.
    pub fn standard(params: &OtfsParams) -> Self {
        Self {
            c_fd: 0.25,
            c_tau: 1.0,
            c_phi: 0.25,
            beamwidth: params.rx_beamwidth(),
            f_d_range: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, c) in [("c_fdopp", self.c_fd), ("c_tau", self.c_tau), ("c_phi", self.c_phi)] {
            if !(c > 0.0 && c <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {c}")));
            }
        }
        if !(self.beamwidth > 0.0 && self.beamwidth.is_finite()) {
            return Err(Error::Config(format!("beamwidth must be > 0, got {}", self.beamwidth)));
        }
        if let Some((lo, hi)) = self.f_d_range {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(Error::Config(format!("empty Doppler range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// Discrete tuple set for the per-BS coarse search.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseGrid {
    pub f_d: Vec<f64>,
    pub tau: Vec<f64>,
    pub phi: Vec<f64>,
    pub f_d_step: f64,
    pub tau_step: f64,
    pub phi_step: f64,
}

impl CoarseGrid {
    pub fn new(
        params: &OtfsParams,
        settings: &CoarseSettings,
        tau_range: (f64, f64),
        phi_range: (f64, f64),
    ) -> Result<Self> {
        settings.validate()?;
        let f_d_step = settings.c_fd * params.doppler_resolution();
        let tau_step = settings.c_tau * params.delay_resolution();
        let phi_step = settings.c_phi * settings.beamwidth;
        let (f_lo, f_hi) = settings.f_d_range.unwrap_or_else(|| {
            let span = 2.0 * params.doppler_resolution();
            (-span, span)
        });
        let ordered = |r: (f64, f64)| r.0 <= r.1;
        if !ordered(tau_range) || !ordered(phi_range) {
            return Err(Error::Config("coarse grid ranges must be non-empty".into()));
        }
        if tau_range.0 < 0.0 || tau_range.1 >= params.t_slot {
            return Err(Error::Config(format!(
                "coarse delay range [{:e}, {:e}] s must lie in [0, T)",
                tau_range.0, tau_range.1
            )));
        }
        Ok(Self {
            f_d: arange(f_lo, f_hi, f_d_step),
            tau: arange(tau_range.0, tau_range.1, tau_step),
            phi: arange(phi_range.0, phi_range.1, phi_step),
            f_d_step,
            tau_step,
            phi_step,
        })
    }

    /// Delay and angle ranges spanned by the RoI corners as seen from `site`.
    pub fn for_roi(params: &OtfsParams, settings: &CoarseSettings, site: &BsSite, roi: &RoiGrid) -> Result<Self> {
        let (tau_range, phi_range) = roi.local_extent(site)?;
        Self::new(params, settings, tau_range, phi_range)
    }

    pub fn len(&self) -> usize {
        self.f_d.len() * self.tau.len() * self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseEstimate {
    pub f_d: f64,
    pub tau: f64,
    pub phi: f64,
    pub h: Complex64,
    pub objective: f64,
    /// `(f_D, tau, phi)` grid indices of the maximiser.
    pub index: (usize, usize, usize),
}

/// Exhaustive maximisation of the reduced objective over `grid`.
///
/// Ties resolve to the lexicographically smallest `(f_D, tau, phi)` index.
pub fn coarse_estimate(engine: &ChannelEngine, corr: &Correlator, grid: &CoarseGrid) -> Result<CoarseEstimate> {
    if grid.is_empty() {
        return Err(Error::Config("empty coarse grid".into()));
    }
    let p = engine.params();
    let (nt, np) = (grid.tau.len(), grid.phi.len());
    let splits: Vec<usize> = grid.tau.iter().map(|&t| delay_split(p, t)).collect();
    let per_fd: Vec<(Vec<f64>, Vec<Complex64>)> = grid
        .f_d
        .par_iter()
        .map(|&f_d| {
            let mut values = vec![0.0; nt * np];
            let mut coeffs = vec![Complex64::new(0.0, 0.0); nt * np];
            let mut cache: BTreeMap<usize, SplitCorrelation> = BTreeMap::new();
            for (it, &tau) in grid.tau.iter().enumerate() {
                let sc = cache
                    .entry(splits[it])
                    .or_insert_with(|| corr.split_correlation(engine, f_d, splits[it]));
                let c = sc.antenna_correlations(p, tau);
                for (ip, &phi) in grid.phi.iter().enumerate() {
                    let (cr, energy) = sc.steer(p, &c, phi);
                    let k = it * np + ip;
                    if energy > 0.0 {
                        values[k] = cr.norm_sqr() / energy;
                        coeffs[k] = cr.conj() / energy;
                    }
                }
            }
            (values, coeffs)
        })
        .collect();

    let mut best: Option<(f64, usize, usize, usize)> = None;
    for (iff, (values, _)) in per_fd.iter().enumerate() {
        for it in 0..nt {
            for ip in 0..np {
                let v = values[it * np + ip];
                if best.is_none_or(|(b, ..)| v > b) {
                    best = Some((v, iff, it, ip));
                }
            }
        }
    }
    let (objective, iff, it, ip) = best.expect("grid is non-empty");
    Ok(CoarseEstimate {
        f_d: grid.f_d[iff],
        tau: grid.tau[it],
        phi: grid.phi[ip],
        h: per_fd[iff].1[it * np + ip],
        objective,
        index: (iff, it, ip),
    })
}

/// Pixel grid over the region of interest, common frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiGrid {
    pub x_min: f64,
    pub y_min: f64,
    pub dx: f64,
    pub dy: f64,
    pub nx: usize,
    pub ny: usize,
}

impl RoiGrid {
    /// Pixels at `x_min + i dx` up to `x_max` (inclusive within rounding).
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, dx: f64, dy: f64) -> Result<Self> {
        if !(dx > 0.0 && dy > 0.0) {
            return Err(Error::Config(format!("RoI steps must be > 0, got dx={dx}, dy={dy}")));
        }
        if !(x_max >= x_min && y_max >= y_min) {
            return Err(Error::Config("RoI bounds are inverted".into()));
        }
        let nx = ((x_max - x_min) / dx + 1e-9).floor() as usize + 1;
        let ny = ((y_max - y_min) / dy + 1e-9).floor() as usize + 1;
        Ok(Self {
            x_min,
            y_min,
            dx,
            dy,
            nx,
            ny,
        })
    }

    /// Square-pixel grid of the given extent whose centre pixel sits on `center`.
    pub fn centered(center: Vec2, width: f64, height: f64, dx: f64, dy: f64) -> Result<Self> {
        let hx = ((width / 2.0) / dx + 1e-9).floor() * dx;
        let hy = ((height / 2.0) / dy + 1e-9).floor() * dy;
        Self::new(center.x - hx, center.x + hx, center.y - hy, center.y + hy, dx, dy)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x_max(&self) -> f64 {
        self.x_min + (self.nx - 1) as f64 * self.dx
    }

    pub fn y_max(&self) -> f64 {
        self.y_min + (self.ny - 1) as f64 * self.dy
    }

    /// Pixel centre; row-major storage is `iy * nx + ix`.
    pub fn point(&self, ix: usize, iy: usize) -> Vec2 {
        Vec2::new(self.x_min + ix as f64 * self.dx, self.y_min + iy as f64 * self.dy)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let tol = 1e-9;
        p.x >= self.x_min - tol && p.x <= self.x_max() + tol && p.y >= self.y_min - tol && p.y <= self.y_max() + tol
    }

    /// `((tau_min, tau_max), (phi_min, phi_max))` over the RoI rectangle seen from `site`.
    pub fn local_extent(&self, site: &BsSite) -> Result<((f64, f64), (f64, f64))> {
        let corners = [
            Vec2::new(self.x_min, self.y_min),
            Vec2::new(self.x_max(), self.y_min),
            Vec2::new(self.x_min, self.y_max()),
            Vec2::new(self.x_max(), self.y_max()),
        ];
        let mut phi = (f64::INFINITY, f64::NEG_INFINITY);
        let mut tau = (f64::INFINITY, f64::NEG_INFINITY);
        for c in corners {
            let (t, a) = to_polar(to_local(c, site))?;
            phi = (phi.0.min(a), phi.1.max(a));
            tau = (tau.0.min(t), tau.1.max(t));
        }
        // nearest point of the rectangle may be on an edge rather than a corner
        let o = site.origin;
        let nearest = Vec2::new(o.x.clamp(self.x_min, self.x_max()), o.y.clamp(self.y_min, self.y_max()));
        let r_near = (nearest - o).norm();
        if r_near == 0.0 {
            return Err(Error::DegenerateGeometry(format!("RoI contains BS {}", site.index + 1)));
        }
        tau.0 = tau.0.min(2.0 * r_near / SPEED_OF_LIGHT);
        Ok((tau, phi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapLabel {
    Bs(usize),
    Fused,
}

/// Scalar field over the RoI, row-major with `y` outer and `x` inner.
/// Excluded pixels hold `f64::NEG_INFINITY`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarMap {
    pub grid: RoiGrid,
    pub values: Vec<f64>,
    pub label: MapLabel,
}

impl RadarMap {
    pub fn value(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.grid.nx + ix]
    }

    pub fn excluded_count(&self) -> usize {
        self.values.iter().filter(|v| **v == f64::NEG_INFINITY).count()
    }

    /// Maximum pixel; ties go to the smallest `x`, then the smallest `y`.
    pub fn argmax(&self) -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for ix in 0..self.grid.nx {
            for iy in 0..self.grid.ny {
                let v = self.value(ix, iy);
                if v == f64::NEG_INFINITY {
                    continue;
                }
                if best.is_none_or(|(.., b)| v > b) {
                    best = Some((ix, iy, v));
                }
            }
        }
        best
    }
}

/// Local `(tau, phi)` of a common-frame point, or `None` if the pixel is
/// unusable by this BS (behind the array, on the array, or beyond one slot).
pub fn pixel_delay_angle(params: &OtfsParams, site: &BsSite, p: Vec2) -> Option<(f64, f64)> {
    match to_polar(to_local(p, site)) {
        Ok((tau, phi)) if tau < params.t_slot => Some((tau, phi)),
        _ => None,
    }
}

/// Single-BS radar map with the Doppler shift fixed at `f_d`.
pub fn radar_map(
    engine: &ChannelEngine,
    corr: &Correlator,
    site: &BsSite,
    f_d: f64,
    roi: &RoiGrid,
) -> RadarMap {
    let p = engine.params();
    let geometry: Vec<Option<(f64, f64, usize)>> = (0..roi.len())
        .map(|k| {
            let pt = roi.point(k % roi.nx, k / roi.nx);
            pixel_delay_angle(p, site, pt).map(|(tau, phi)| (tau, phi, delay_split(p, tau)))
        })
        .collect();
    let mut splits: Vec<usize> = geometry.iter().flatten().map(|g| g.2).collect();
    splits.sort_unstable();
    splits.dedup();
    let cache: BTreeMap<usize, SplitCorrelation> = splits
        .par_iter()
        .map(|&s| (s, corr.split_correlation(engine, f_d, s)))
        .collect();
    let values: Vec<f64> = geometry
        .par_iter()
        .map(|g| match g {
            Some((tau, phi, split)) => {
                let sc = &cache[split];
                let c = sc.antenna_correlations(p, *tau);
                sc.objective(p, &c, *phi)
            }
            None => f64::NEG_INFINITY,
        })
        .collect();
    RadarMap {
        grid: *roi,
        values,
        label: MapLabel::Bs(site.index),
    }
}

#[derive(Debug, Clone)]
pub struct FusionResult {
    pub position: Vec2,
    pub peak: f64,
    pub fused: RadarMap,
    pub per_bs: Vec<RadarMap>,
    /// Pixels excluded from the fused map by any BS.
    pub excluded: usize,
}

/// Cooperative position estimate: sum of per-BS radar maps, each with its
/// own Doppler estimate, maximised over the RoI pixels.
pub fn fuse_position_ml(
    engine: &ChannelEngine,
    correlators: &[Correlator],
    sites: &[BsSite],
    doppler: &[f64],
    roi: &RoiGrid,
) -> Result<FusionResult> {
    if correlators.is_empty() || correlators.len() != sites.len() || sites.len() != doppler.len() {
        return Err(Error::Config(format!(
            "fusion needs one correlator, site and Doppler estimate per BS (got {}, {}, {})",
            correlators.len(),
            sites.len(),
            doppler.len()
        )));
    }
    if roi.is_empty() {
        return Err(Error::Config("empty RoI grid".into()));
    }
    let per_bs: Vec<RadarMap> = correlators
        .iter()
        .zip(sites)
        .zip(doppler)
        .map(|((c, s), &f)| radar_map(engine, c, s, f, roi))
        .collect();
    let mut fused = vec![0.0; roi.len()];
    for map in &per_bs {
        for (acc, v) in fused.iter_mut().zip(&map.values) {
            *acc += *v;
        }
    }
    let fused = RadarMap {
        grid: *roi,
        values: fused,
        label: MapLabel::Fused,
    };
    let excluded = fused.excluded_count();
    let (ix, iy, peak) = fused
        .argmax()
        .ok_or_else(|| Error::Geometry("every RoI pixel is behind at least one array".into()))?;
    Ok(FusionResult {
        position: roi.point(ix, iy),
        peak,
        fused,
        per_bs,
        excluded,
    })
}

/// Per-BS coarse result plus the fused position.
#[derive(Debug, Clone)]
pub struct EstimateRecord {
    pub per_bs: Vec<CoarseEstimate>,
    pub position: Vec2,
    pub objective: f64,
}

/// Full two-stage procedure: coarse `(f_D, tau, phi)` per BS, then fusion
/// over the RoI with each BS's Doppler estimate.
pub fn two_stage_estimate(
    engine: &ChannelEngine,
    correlators: &[Correlator],
    sites: &[BsSite],
    settings: &CoarseSettings,
    roi: &RoiGrid,
) -> Result<(EstimateRecord, FusionResult)> {
    let per_bs = correlators
        .iter()
        .zip(sites)
        .map(|(c, s)| {
            let grid = CoarseGrid::for_roi(engine.params(), settings, s, roi)?;
            coarse_estimate(engine, c, &grid)
        })
        .collect::<Result<Vec<_>>>()?;
    let doppler: Vec<f64> = per_bs.iter().map(|e| e.f_d).collect();
    let fusion = fuse_position_ml(engine, correlators, sites, &doppler, roi)?;
    Ok((
        EstimateRecord {
            per_bs,
            position: fusion.position,
            objective: fusion.peak,
        },
        fusion,
    ))
}
