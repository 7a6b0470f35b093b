use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;

use super::backend::{BackendOptions, BackendRegistry, ChannelBackend, TruncatedBackend};
use super::{array_response, DelayDopplerFrame, OtfsParams, SymplecticFft};
use crate::{Error, Result};

/// Default truncation radius of the ambiguity support for the truncated backend.
pub const DEFAULT_SUPPORT_HALFWIDTH: usize = 5;

/// Number of receive samples `i` of slot `n` still fed by transmit slot `n`,
/// i.e. `#{i : i T/M + tau < T}`. Lies in `[1, M]` for `0 <= tau < T`.
pub fn delay_split(params: &OtfsParams, tau: f64) -> usize {
    let m = params.m;
    let t = params.t_slot;
    let fits = |i: usize| i as f64 * t / m as f64 + tau < t;
    let guess = (((t - tau) / t) * m as f64).ceil().clamp(0.0, m as f64) as usize;
    let mut s = guess;
    while s > 0 && !fits(s - 1) {
        s -= 1;
    }
    while s < m && fits(s) {
        s += 1;
    }
    s
}

/// Per-subcarrier delay phase `exp(-j2pi m delta_f tau)`.
pub fn delay_ramp(params: &OtfsParams, tau: f64) -> Vec<Complex64> {
    (0..params.m)
        .map(|m| Complex64::from_polar(1.0, -2.0 * PI * m as f64 * params.delta_f * tau))
        .collect()
}

/// Single-target channel `(f_D, tau, phi)` at one base station.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelOperator {
    pub params: OtfsParams,
    pub f_d: f64,
    pub tau: f64,
    pub phi: f64,
    pub support_halfwidth: usize,
}

impl ChannelOperator {
    pub fn new(params: &OtfsParams, f_d: f64, tau: f64, phi: f64) -> Result<Self> {
        Self::with_support(params, f_d, tau, phi, DEFAULT_SUPPORT_HALFWIDTH.min(params.m))
    }

    pub fn with_support(
        params: &OtfsParams,
        f_d: f64,
        tau: f64,
        phi: f64,
        support_halfwidth: usize,
    ) -> Result<Self> {
        if !(0.0..params.t_slot).contains(&tau) {
            return Err(Error::Config(format!(
                "delay {tau:e} s outside [0, T={:e}) (echo must arrive within one slot)",
                params.t_slot
            )));
        }
        if !f_d.is_finite() || !phi.is_finite() {
            return Err(Error::Config("non-finite channel parameter".into()));
        }
        if support_halfwidth < 1 || support_halfwidth > params.m {
            return Err(Error::Config(format!(
                "support_halfwidth must lie in [1, M={}], got {support_halfwidth}",
                params.m
            )));
        }
        Ok(Self {
            params: params.clone(),
            f_d,
            tau,
            phi,
            support_halfwidth,
        })
    }

    pub fn split(&self) -> usize {
        delay_split(&self.params, self.tau)
    }

    pub fn steering(&self) -> Vec<Complex64> {
        array_response(self.phi, self.params.n_rx)
    }
}

/// Parameter-independent machinery for applying `Psi` and `G` repeatedly:
/// the planned transforms and the selected backend.
#[derive(Clone)]
pub struct ChannelEngine {
    params: OtfsParams,
    fft: SymplecticFft,
    backend: Arc<dyn ChannelBackend>,
}

impl std::fmt::Debug for ChannelEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChannelEngine")
            .field("m", &self.params.m)
            .field("n", &self.params.n)
            .field("backend", &self.backend.name())
            .finish()
    }
}

impl ChannelEngine {
    pub fn new(params: &OtfsParams, backend: Arc<dyn ChannelBackend>) -> Self {
        Self {
            params: params.clone(),
            fft: SymplecticFft::new(params.m, params.n),
            backend,
        }
    }

    /// Engine with the registry's default (exact) backend.
    pub fn exact(params: &OtfsParams) -> Self {
        let backend = BackendRegistry::default()
            .create(super::DEFAULT_BACKEND, params, &BackendOptions::default())
            .expect("default backend is registered");
        Self::new(params, backend)
    }

    pub fn from_registry(
        registry: &BackendRegistry,
        name: &str,
        params: &OtfsParams,
        opts: &BackendOptions,
    ) -> Result<Self> {
        Ok(Self::new(params, registry.create(name, params, opts)?))
    }

    pub fn params(&self) -> &OtfsParams {
        &self.params
    }

    pub fn fft(&self) -> &SymplecticFft {
        &self.fft
    }

    pub fn backend(&self) -> &dyn ChannelBackend {
        self.backend.as_ref()
    }

    /// Delay-ramp-free TF mixing (see [`ChannelBackend::mix`]).
    pub fn mix(&self, tf: &[Complex64], f_d: f64, split: usize) -> Vec<Complex64> {
        self.backend.mix(tf, f_d, split)
    }

    /// `Psi x` in the TF domain, with the delay window frozen at `split`.
    pub fn psi_tf_split(&self, x_tf: &[Complex64], f_d: f64, tau: f64, split: usize) -> Vec<Complex64> {
        let mut z = self.backend.mix(x_tf, f_d, split);
        let ramp = delay_ramp(&self.params, tau);
        for row in z.chunks_exact_mut(self.params.m) {
            for (v, r) in row.iter_mut().zip(&ramp) {
                *v *= r;
            }
        }
        z
    }

    /// `Psi x` in the delay-Doppler domain, delay window frozen at `split`.
    pub fn psi_dd_split(&self, x_tf: &[Complex64], f_d: f64, tau: f64, split: usize) -> Vec<Complex64> {
        let mut z = self.psi_tf_split(x_tf, f_d, tau, split);
        self.fft.sfft_in_place(&mut z);
        z
    }

    /// `Psi x` (delay-Doppler vector of length `M N`).
    pub fn psi_x(&self, op: &ChannelOperator, x: &DelayDopplerFrame) -> Result<Vec<Complex64>> {
        let x_tf = self.fft.isfft(x)?;
        Ok(self.psi_dd_split(x_tf.as_slice(), op.f_d, op.tau, op.split()))
    }

    /// `G x = b(phi) kron (Psi x)`, antenna-major (length `M N N_R`).
    pub fn g_x(&self, op: &ChannelOperator, x: &DelayDopplerFrame) -> Result<Vec<Complex64>> {
        let psi = self.psi_x(op, x)?;
        Ok(kron_steering(&op.steering(), &psi))
    }
}

/// `b kron v`: `N_R` scaled copies of `v`.
pub fn kron_steering(b: &[Complex64], v: &[Complex64]) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(b.len() * v.len());
    for bj in b {
        out.extend(v.iter().map(|z| bj * z));
    }
    out
}

/// `Psi x` with the ambiguity support truncated to `op.support_halfwidth`.
pub fn apply_channel_fast(op: &ChannelOperator, x: &DelayDopplerFrame) -> Result<Vec<Complex64>> {
    let backend = TruncatedBackend::new(&op.params, op.support_halfwidth)?;
    ChannelEngine::new(&op.params, Arc::new(backend)).psi_x(op, x)
}

/// `G x` built from [`apply_channel_fast`]; `G` is never materialised.
pub fn apply_g(op: &ChannelOperator, x: &DelayDopplerFrame) -> Result<Vec<Complex64>> {
    let psi = apply_channel_fast(op, x)?;
    Ok(kron_steering(&op.steering(), &psi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_counts_overlapping_samples() {
        let p = OtfsParams::new(8, 4, 1e6, 1e-6, 60e9, 4, 2, 1.0, 4e-20, 1.0).unwrap();
        assert_eq!(delay_split(&p, 0.0), 8);
        assert_eq!(delay_split(&p, 0.01e-6), 8);
        assert_eq!(delay_split(&p, 0.2e-6), 7);
        assert_eq!(delay_split(&p, 0.99e-6), 1);
        for k in 0..200 {
            let tau = k as f64 * 0.005e-6;
            let brute = (0..p.m)
                .filter(|&i| i as f64 * p.t_slot / p.m as f64 + tau < p.t_slot)
                .count();
            assert_eq!(delay_split(&p, tau), brute, "tau = {tau:e}");
        }
    }

    #[test]
    fn operator_rejects_out_of_slot_delay() {
        let p = OtfsParams::new(8, 4, 1e6, 1e-6, 60e9, 4, 2, 1.0, 4e-20, 1.0).unwrap();
        assert!(ChannelOperator::new(&p, 0.0, 1e-6, 0.0).is_err());
        assert!(ChannelOperator::new(&p, 0.0, -1e-9, 0.0).is_err());
        assert!(ChannelOperator::with_support(&p, 0.0, 0.0, 0.0, 0).is_err());
        assert!(ChannelOperator::with_support(&p, 0.0, 0.0, 0.0, 9).is_err());
    }
}
