//! Fisher information of `theta_i = [beta, phase, f_D, tau, phi]` at each BS,
//! nuisance elimination, and the position error bound in the common frame.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix3, Matrix5, SMatrix};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::estimator::{pixel_delay_angle, RoiGrid};
use crate::otfs::{centered_index, kron_steering, ChannelEngine, ChannelOperator, DelayDopplerFrame};
use crate::scene::{radial_params, to_local, to_polar, Beamformer, BsSite, LinkBudget, TargetState, Vec2};
use crate::{Error, Result, SPEED_OF_LIGHT};

/// Finite-difference step as a fraction of the Doppler / delay resolution.
pub const FD_STEP_FRACTION: f64 = 1e-4;
/// Largest relative change of a derivative allowed when the step is halved.
pub const RICHARDSON_LIMIT: f64 = 1e-4;
/// Largest scaled condition number accepted for the nuisance block.
pub const CONDITION_LIMIT: f64 = 1e12;
/// Eigenvalues of a FIM may dip to `-PSD_TOL * lambda_max`.
pub const PSD_TOL: f64 = 1e-8;
pub const SYMMETRY_TOL: f64 = 1e-10;

pub const BETA: usize = 0;
pub const PHASE: usize = 1;
pub const DOPPLER: usize = 2;
pub const DELAY: usize = 3;
pub const ANGLE: usize = 4;

/// 5x5 FIM over `[beta, phase, f_D, tau, phi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerBsFim(pub Matrix5<f64>);

/// Equivalent FIM of `(tau, phi)` after eliminating the nuisance block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Efim2 {
    pub matrix: Matrix2<f64>,
    /// Condition number of the diagonally scaled nuisance block.
    pub nuisance_condition: f64,
}

/// Position FIM in the common frame (1/m^2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoopPosFim(pub Matrix2<f64>);

/// `mu[k, l, j] = h b_j(phi) (Psi x)[k, l]`, antenna-major like the received vector.
pub fn mu_elements(
    engine: &ChannelEngine,
    op: &ChannelOperator,
    h: Complex64,
    x: &DelayDopplerFrame,
) -> Result<Vec<Complex64>> {
    let b: Vec<Complex64> = op.steering().iter().map(|bj| h * bj).collect();
    Ok(kron_steering(&b, &engine.psi_x(op, x)?))
}

fn vec_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(u, v)| u.conj() * v).sum()
}

/// Central difference with a step-halving check; returns the Richardson
/// extrapolation of the two estimates.
fn central_difference(
    param: &'static str,
    x0: f64,
    step: f64,
    f: impl Fn(f64) -> Vec<Complex64>,
) -> Result<Vec<Complex64>> {
    let diff = |h: f64| -> Vec<Complex64> {
        let (p, m) = (f(x0 + h), f(x0 - h));
        p.iter().zip(&m).map(|(a, b)| (a - b) / (2.0 * h)).collect()
    };
    let coarse = diff(step);
    let fine = diff(step / 2.0);
    let delta: Vec<Complex64> = fine.iter().zip(&coarse).map(|(a, b)| a - b).collect();
    let scale = vec_norm(&fine);
    let rel_change = if scale == 0.0 { vec_norm(&delta) } else { vec_norm(&delta) / scale };
    if rel_change.is_nan() || rel_change >= RICHARDSON_LIMIT {
        return Err(Error::NumericalDerivative {
            param,
            rel_change,
            limit: RICHARDSON_LIMIT,
            step,
        });
    }
    Ok(fine.iter().zip(&coarse).map(|(a, b)| (4.0 * a - b) / 3.0).collect())
}

/// `Psi x` and its derivatives with respect to `f_D` and `tau`.
///
/// The delay window is frozen at the split of `op.tau`, so the stencil never
/// straddles the jump where one more sample spills into the next slot.
fn psi_partials(
    engine: &ChannelEngine,
    op: &ChannelOperator,
    x: &DelayDopplerFrame,
) -> Result<[Vec<Complex64>; 3]> {
    let p = engine.params();
    let x_tf = engine.fft().isfft(x)?.into_vec();
    let split = op.split();
    let psi = engine.psi_dd_split(&x_tf, op.f_d, op.tau, split);
    let d_fd = central_difference("f_D", op.f_d, FD_STEP_FRACTION * p.doppler_resolution(), |f| {
        engine.psi_dd_split(&x_tf, f, op.tau, split)
    })?;
    let d_tau = central_difference("tau", op.tau, FD_STEP_FRACTION * p.delay_resolution(), |t| {
        engine.psi_dd_split(&x_tf, op.f_d, t, split)
    })?;
    Ok([psi, d_fd, d_tau])
}

/// Per-BS FIM `(2 / sigma^2) Re{ sum conj(d mu / d theta_q) (d mu / d theta_p) }`.
///
/// Every partial of `mu` factors as `c (b_q kron psi_q)`, so each entry is a
/// product of an antenna inner product and a delay-Doppler inner product.
pub fn fim_per_bs(
    engine: &ChannelEngine,
    op: &ChannelOperator,
    h: Complex64,
    x: &DelayDopplerFrame,
) -> Result<PerBsFim> {
    let p = engine.params();
    let sigma2 = p.noise_var();
    let [psi, d_fd, d_tau] = psi_partials(engine, op, x)?;
    let b = op.steering();
    let cos_phi = op.phi.cos();
    let db: Vec<Complex64> = b
        .iter()
        .enumerate()
        .map(|(q, bj)| Complex64::new(0.0, PI * centered_index(q, p.n_rx) * cos_phi) * bj)
        .collect();
    let unit = if h.norm() > 0.0 { h / h.norm() } else { Complex64::new(1.0, 0.0) };
    let j = Complex64::new(0.0, 1.0);

    // (coefficient, antenna factor index, delay-Doppler factor index)
    let factors = [(unit, 0, 0), (j * h, 0, 0), (h, 0, 1), (h, 0, 2), (h, 1, 0)];
    let ant = [&b, &db];
    let dd = [&psi, &d_fd, &d_tau];
    let mut ant_gram = [[Complex64::new(0.0, 0.0); 2]; 2];
    let mut dd_gram = [[Complex64::new(0.0, 0.0); 3]; 3];
    for (a, row) in ant_gram.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = inner(ant[a], ant[c]);
        }
    }
    for (a, row) in dd_gram.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = inner(dd[a], dd[c]);
        }
    }
    let mut fim = Matrix5::zeros();
    for q in 0..5 {
        for r in q..5 {
            let (cq, aq, dq) = factors[q];
            let (cr, ar, dr) = factors[r];
            let v = 2.0 / sigma2 * (cq.conj() * cr * ant_gram[aq][ar] * dd_gram[dq][dr]).re;
            fim[(q, r)] = v;
            fim[(r, q)] = v;
        }
    }
    check_fim(&fim)?;
    Ok(PerBsFim(fim))
}

/// `D A D` with `D = diag(A)^(-1/2)`; zero diagonals are left unscaled.
fn diag_scaled<const K: usize>(a: &SMatrix<f64, K, K>) -> (SMatrix<f64, K, K>, SMatrix<f64, K, K>) {
    let d = SMatrix::<f64, K, K>::from_diagonal(&a.diagonal().map(|v| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 }));
    (d * a * d, d)
}

/// Symmetry and PSD of a Fisher matrix, judged on its correlation form since
/// raw entries mix units spanning many orders of magnitude.
pub fn check_fim<const K: usize>(m: &SMatrix<f64, K, K>) -> Result<()>
where
    nalgebra::Const<K>: nalgebra::DimMin<nalgebra::Const<K>, Output = nalgebra::Const<K>>
        + nalgebra::DimSub<nalgebra::U1>,
    nalgebra::DefaultAllocator: nalgebra::allocator::Allocator<<nalgebra::Const<K> as nalgebra::DimSub<nalgebra::U1>>::Output>,
{
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Unobservable("non-finite Fisher information".into()));
    }
    let asym = (m - m.transpose()).abs().max();
    if asym > SYMMETRY_TOL * m.abs().max() {
        return Err(Error::Unobservable(format!("Fisher matrix asymmetric by {asym:e}")));
    }
    let (s, _) = diag_scaled(m);
    let eig = s.symmetric_eigen().eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if lo < -PSD_TOL * hi.max(0.0) {
        return Err(Error::Unobservable(format!(
            "Fisher matrix not PSD (scaled eigenvalues {lo:e}..{hi:e})"
        )));
    }
    Ok(())
}

/// Condition number of the diagonally scaled symmetric matrix.
pub fn scaled_condition<const K: usize>(m: &SMatrix<f64, K, K>) -> f64
where
    nalgebra::Const<K>: nalgebra::DimSub<nalgebra::U1>,
    nalgebra::DefaultAllocator: nalgebra::allocator::Allocator<<nalgebra::Const<K> as nalgebra::DimSub<nalgebra::U1>>::Output>,
{
    let (s, _) = diag_scaled(m);
    let eig = s.symmetric_eigen().eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// `EFIM = C - B^T A^-1 B` with `A` the `(beta, phase, f_D)` block.
pub fn efim_reduce(fim: &PerBsFim) -> Result<Efim2> {
    let m = &fim.0;
    let a: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
    let b = m.fixed_view::<3, 2>(0, 3).into_owned();
    let c: Matrix2<f64> = m.fixed_view::<2, 2>(3, 3).into_owned();
    let condition = scaled_condition(&a);
    if condition.is_nan() || condition > CONDITION_LIMIT {
        return Err(Error::NuisanceDegenerate {
            condition,
            limit: CONDITION_LIMIT,
        });
    }
    let (s, d) = diag_scaled(&a);
    let s_inv = s
        .cholesky()
        .ok_or(Error::NuisanceDegenerate {
            condition,
            limit: CONDITION_LIMIT,
        })?
        .inverse();
    let a_inv = d * s_inv * d;
    let e = c - b.transpose() * a_inv * b;
    let e = (e + e.transpose()) * 0.5;
    Ok(Efim2 {
        matrix: e,
        nuisance_condition: condition,
    })
}

/// `d(tau, phi) / d(x_i, y_i)` at a local position.
pub fn jacobian_m(p_local: Vec2) -> Result<Matrix2<f64>> {
    let r2 = p_local.dot(p_local);
    if r2 == 0.0 {
        return Err(Error::DegenerateGeometry("Jacobian at the array origin".into()));
    }
    let r = r2.sqrt();
    let (x, y) = (p_local.x, p_local.y);
    Ok(Matrix2::new(
        2.0 * x / (SPEED_OF_LIGHT * r),
        2.0 * y / (SPEED_OF_LIGHT * r),
        -y / r2,
        x / r2,
    ))
}

/// `d(x_i, y_i) / d(x, y)` for a BS rotated by `theta`.
pub fn jacobian_n(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, s, -s, c)
}

/// `sum_i J_n^T J_m^T EFIM_i J_m J_n` at common-frame point `p`.
pub fn coop_fim(efims: &[Efim2], sites: &[BsSite], p: Vec2) -> Result<CoopPosFim> {
    if efims.is_empty() || efims.len() != sites.len() {
        return Err(Error::Config(format!(
            "need one EFIM per BS (got {} EFIMs, {} sites)",
            efims.len(),
            sites.len()
        )));
    }
    let mut total = Matrix2::zeros();
    for (e, site) in efims.iter().zip(sites) {
        let local = to_local(p, site);
        to_polar(local)?;
        let j = jacobian_m(local)? * jacobian_n(site.rotation());
        total += j.transpose() * e.matrix * j;
    }
    Ok(CoopPosFim(total))
}

/// `sqrt(trace(I_e^-1))` in metres.
pub fn peb(fim: &CoopPosFim) -> Result<f64> {
    let m = fim.0;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Unobservable("non-finite position FIM".into()));
    }
    let condition = scaled_condition(&m);
    if condition.is_nan() || condition > CONDITION_LIMIT {
        return Err(Error::Unobservable(format!(
            "position FIM singular (scaled condition {condition:.3e})"
        )));
    }
    let inv = m
        .try_inverse()
        .ok_or_else(|| Error::Unobservable("position FIM not invertible".into()))?;
    let tr = inv.trace();
    if !(tr > 0.0 && tr.is_finite()) {
        return Err(Error::Unobservable(format!("trace of inverse is {tr:e}")));
    }
    Ok(tr.sqrt())
}

/// Square-root CRBs of range (m) and angle (rad), from the EFIM and from the
/// inverse of the full 5x5 FIM. The two agree up to round-off.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamBounds {
    pub range_efim: f64,
    pub angle_efim: f64,
    pub range_full: f64,
    pub angle_full: f64,
}

pub fn range_angle_bounds(fim: &PerBsFim, efim: &Efim2) -> Result<ParamBounds> {
    let e_inv = efim
        .matrix
        .try_inverse()
        .ok_or_else(|| Error::Unobservable("EFIM not invertible".into()))?;
    let (s, d) = diag_scaled(&fim.0);
    let full_inv = d
        * s.try_inverse()
            .ok_or_else(|| Error::Unobservable("FIM not invertible".into()))?
        * d;
    let half_c = SPEED_OF_LIGHT / 2.0;
    Ok(ParamBounds {
        range_efim: half_c * e_inv[(0, 0)].sqrt(),
        angle_efim: e_inv[(1, 1)].sqrt(),
        range_full: half_c * full_inv[(DELAY, DELAY)].sqrt(),
        angle_full: full_inv[(ANGLE, ANGLE)].sqrt(),
    })
}

/// What the bound needs to know about a deployment: per-BS sites,
/// beamformers and transmitted frames, and the target's motion and RCS.
#[derive(Debug, Clone, Copy)]
pub struct BoundSetup<'a> {
    pub engine: &'a ChannelEngine,
    pub sites: &'a [BsSite],
    pub beamformers: &'a [Beamformer],
    pub frames: &'a [DelayDopplerFrame],
    pub velocity: Vec2,
    pub rcs: f64,
}

/// Bound at one point: PEB plus per-BS range/angle bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct PointBound {
    pub peb: f64,
    pub per_bs: Vec<ParamBounds>,
    pub fim: CoopPosFim,
}

/// PEB for the BS subset `subset` (indices into `setup.sites`) with the
/// target at `p`.
pub fn peb_at(setup: &BoundSetup<'_>, subset: &[usize], p: Vec2) -> Result<PointBound> {
    let params = setup.engine.params();
    let target = TargetState::new(p, setup.velocity, setup.rcs)?;
    let mut efims = Vec::with_capacity(subset.len());
    let mut sites = Vec::with_capacity(subset.len());
    let mut per_bs = Vec::with_capacity(subset.len());
    for &i in subset {
        let site = setup
            .sites
            .get(i)
            .ok_or_else(|| Error::Config(format!("BS index {i} out of range")))?;
        let radial = radial_params(&target, site, params)?;
        let link = LinkBudget::new(params, &radial, setup.rcs, &setup.beamformers[i], 0.0);
        let op = ChannelOperator::new(params, radial.f_d, radial.tau, radial.phi)?;
        let fim = fim_per_bs(setup.engine, &op, link.h, &setup.frames[i])?;
        let efim = efim_reduce(&fim)?;
        per_bs.push(range_angle_bounds(&fim, &efim)?);
        efims.push(efim);
        sites.push(*site);
    }
    let fim = coop_fim(&efims, &sites, p)?;
    Ok(PointBound {
        peb: peb(&fim)?,
        per_bs,
        fim,
    })
}

/// PEB over the RoI. Pixels any BS of the subset cannot see (same rule as
/// the radar maps) and unobservable pixels hold `f64::INFINITY`.
#[derive(Debug, Clone, PartialEq)]
pub struct PebMap {
    pub grid: RoiGrid,
    pub values: Vec<f64>,
    pub subset: Vec<usize>,
    pub excluded: usize,
    pub unobservable: usize,
}

pub fn peb_map(setup: &BoundSetup<'_>, subset: &[usize], roi: &RoiGrid) -> Result<PebMap> {
    let params = setup.engine.params();
    let outcomes: Vec<Result<Option<f64>>> = (0..roi.len())
        .into_par_iter()
        .map(|k| {
            let pt = roi.point(k % roi.nx, k / roi.nx);
            if subset
                .iter()
                .any(|&i| pixel_delay_angle(params, &setup.sites[i], pt).is_none())
            {
                return Ok(None);
            }
            match peb_at(setup, subset, pt) {
                Ok(b) => Ok(Some(b.peb)),
                Err(Error::Unobservable(_)) => Ok(Some(f64::INFINITY)),
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut values = Vec::with_capacity(roi.len());
    let (mut excluded, mut unobservable) = (0, 0);
    for o in outcomes {
        match o? {
            None => {
                excluded += 1;
                values.push(f64::INFINITY);
            }
            Some(v) => {
                if v.is_infinite() {
                    unobservable += 1;
                }
                values.push(v);
            }
        }
    }
    Ok(PebMap {
        grid: *roi,
        values,
        subset: subset.to_vec(),
        excluded,
        unobservable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_jacobian() {
        assert_eq!(jacobian_n(0.0), Matrix2::identity());
        for t in [0.3, 1.7, -2.2, 5.0] {
            assert!((jacobian_n(t).determinant() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn diagonal_peb_closed_form() {
        let a = 4.0e3;
        let v = peb(&CoopPosFim(Matrix2::new(a, 0.0, 0.0, a))).unwrap();
        assert!((v - (2.0 / a).sqrt()).abs() < 1e-15);
        assert!(peb(&CoopPosFim(Matrix2::new(1.0, 1.0, 1.0, 1.0))).is_err());
    }

    #[test]
    fn block_diagonal_efim_is_c() {
        let mut m = Matrix5::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::new(4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0));
        m.fixed_view_mut::<2, 2>(3, 3).copy_from(&Matrix2::new(7.0, 1.0, 1.0, 5.0));
        let e = efim_reduce(&PerBsFim(m)).unwrap();
        assert_eq!(e.matrix, Matrix2::new(7.0, 1.0, 1.0, 5.0));
    }

    #[test]
    fn singular_nuisance_block_fails() {
        let mut m = Matrix5::identity();
        m[(2, 2)] = 0.0;
        assert!(matches!(efim_reduce(&PerBsFim(m)), Err(Error::NuisanceDegenerate { .. })));
    }

    #[test]
    fn origin_jacobian_is_degenerate() {
        assert!(jacobian_m(Vec2::new(0.0, 0.0)).is_err());
    }
}
