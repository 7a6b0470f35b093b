//! Interchangeable implementations of the time-frequency channel mixing.
//!
//! Every backend computes the same map: for a TF grid `X`, a Doppler shift
//! `f_D` and a delay split `s` (the number of receive samples of a slot
//! that still overlap the current transmit slot),
//!
//! ```text
//! Z0[n,m] = sum_{d in {0,1}} e^{j2pi (n-d) T f_D} sum_{m'} X[n-d, m'] A_d(m - m')
//! A_d(q)  = (1/M) sum_{i in W_d} e^{-j2pi q i / M} e^{j2pi f_D i T / M}
//! ```
//!
//! with `W_0 = {i < s}` and `W_1 = {i >= s}`. The per-subcarrier delay ramp
//! `e^{-j2pi m delta_f tau}` is applied by the caller, which lets the
//! estimator reuse one mixing result across every delay sharing a split.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::OtfsParams;
use crate::{Error, Result};

/// Name of the backend used when none is requested.
pub const DEFAULT_BACKEND: &str = "windowed";

pub trait ChannelBackend: Send + Sync {
    fn name(&self) -> &'static str;

    /// Delay-ramp-free TF mixing of a slot-major `M*N` grid.
    fn mix(&self, tf: &[Complex64], f_d: f64, split: usize) -> Vec<Complex64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackendOptions {
    /// Truncation radius in the subcarrier-offset index for `truncated`.
    pub support_halfwidth: usize,
}

impl Default for BackendOptions {
    fn default() -> Self {
        Self {
            support_halfwidth: super::DEFAULT_SUPPORT_HALFWIDTH,
        }
    }
}

pub type BackendFactory = fn(&OtfsParams, &BackendOptions) -> Result<Arc<dyn ChannelBackend>>;

/// Name-keyed factories for channel backends.
#[derive(Clone)]
pub struct BackendRegistry {
    factories: BTreeMap<&'static str, BackendFactory>,
}

impl Default for BackendRegistry {
    fn default() -> Self {
        let mut reg = Self {
            factories: BTreeMap::new(),
        };
        reg.register("windowed", |p, _| Ok(Arc::new(WindowedBackend::new(p))));
        reg.register("truncated", |p, o| {
            Ok(Arc::new(TruncatedBackend::new(p, o.support_halfwidth)?))
        });
        reg.register("direct", |p, _| Ok(Arc::new(DenseBackend::new(p))));
        reg
    }
}

impl BackendRegistry {
    pub fn register(&mut self, name: &'static str, factory: BackendFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.factories.keys().copied()
    }

    pub fn create(
        &self,
        name: &str,
        params: &OtfsParams,
        opts: &BackendOptions,
    ) -> Result<Arc<dyn ChannelBackend>> {
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| Error::UnknownBackend(name.to_string()))?;
        factory(params, opts)
    }
}

fn slot_phases(params: &OtfsParams, f_d: f64) -> Vec<Complex64> {
    (0..params.n)
        .map(|n| Complex64::from_polar(1.0, 2.0 * PI * n as f64 * params.t_slot * f_d))
        .collect()
}

fn sample_phases(m: usize, f_d: f64, t_slot: f64) -> Vec<Complex64> {
    (0..m)
        .map(|i| Complex64::from_polar(1.0, 2.0 * PI * f_d * i as f64 * t_slot / m as f64))
        .collect()
}

/// `A_0(q)`, `A_1(q)` for `q` in `-(M-1)..=M-1`, index `q + M - 1`.
fn ambiguity_kernels(m: usize, t_slot: f64, f_d: f64, split: usize) -> (Vec<Complex64>, Vec<Complex64>) {
    let doppler = sample_phases(m, f_d, t_slot);
    let width = 2 * m - 1;
    let mut a0 = vec![Complex64::new(0.0, 0.0); width];
    let mut a1 = vec![Complex64::new(0.0, 0.0); width];
    let inv_m = 1.0 / m as f64;
    for (idx, (k0, k1)) in a0.iter_mut().zip(a1.iter_mut()).enumerate() {
        let q = idx as i64 - (m as i64 - 1);
        let mut s0 = Complex64::new(0.0, 0.0);
        let mut s1 = Complex64::new(0.0, 0.0);
        for (i, dph) in doppler.iter().enumerate() {
            let turns = (q * i as i64).rem_euclid(m as i64) as f64 * inv_m;
            let e = Complex64::from_polar(1.0, -2.0 * PI * turns) * dph;
            if i < split {
                s0 += e;
            } else {
                s1 += e;
            }
        }
        *k0 = s0 * inv_m;
        *k1 = s1 * inv_m;
    }
    (a0, a1)
}

/// Kernel-periodic offset distance: the sampled ambiguity repeats every `M`
/// subcarriers, so its lobes sit around `q = 0` and `q = +-M`.
fn circular_offset(q: i64, m: usize) -> usize {
    let a = q.unsigned_abs() as usize;
    a.min(m - a)
}

/// Offsets `q = m - m'` kept for a given truncation radius.
fn kept_offsets(m: usize, radius: usize) -> Vec<i64> {
    (-(m as i64 - 1)..=(m as i64 - 1))
        .filter(|&q| circular_offset(q, m) <= radius)
        .collect()
}

fn banded_mix(
    params: &OtfsParams,
    tf: &[Complex64],
    f_d: f64,
    split: usize,
    radius: usize,
) -> Vec<Complex64> {
    let (m, n) = (params.m, params.n);
    let (a0, a1) = ambiguity_kernels(m, params.t_slot, f_d, split);
    let offsets = kept_offsets(m, radius);
    let ph = slot_phases(params, f_d);
    let mut out = vec![Complex64::new(0.0, 0.0); m * n];
    let centre = m as i64 - 1;
    for nn in 0..n {
        let row = &mut out[nn * m..(nn + 1) * m];
        for (delta, kernel) in [(0usize, &a0), (1usize, &a1)] {
            if nn < delta {
                continue;
            }
            let src_slot = nn - delta;
            let src = &tf[src_slot * m..(src_slot + 1) * m];
            let p = ph[src_slot];
            for (mm, acc) in row.iter_mut().enumerate() {
                let mut s = Complex64::new(0.0, 0.0);
                for &q in &offsets {
                    let mp = mm as i64 - q;
                    if (0..m as i64).contains(&mp) {
                        s += kernel[(q + centre) as usize] * src[mp as usize];
                    }
                }
                *acc += s * p;
            }
        }
    }
    out
}

/// Direct evaluation of the mixing sum with the ambiguity support truncated
/// to offsets within `support_halfwidth` of a kernel lobe (circular distance
/// of `m - m'` modulo `M`). `support_halfwidth >= M/2` is exact.
#[derive(Debug, Clone)]
pub struct TruncatedBackend {
    params: OtfsParams,
    support_halfwidth: usize,
}

impl TruncatedBackend {
    pub fn new(params: &OtfsParams, support_halfwidth: usize) -> Result<Self> {
        if support_halfwidth < 1 || support_halfwidth > params.m {
            return Err(Error::Config(format!(
                "support_halfwidth must lie in [1, M={}], got {support_halfwidth}",
                params.m
            )));
        }
        Ok(Self {
            params: params.clone(),
            support_halfwidth,
        })
    }

    pub fn support_halfwidth(&self) -> usize {
        self.support_halfwidth
    }
}

impl ChannelBackend for TruncatedBackend {
    fn name(&self) -> &'static str {
        "truncated"
    }

    fn mix(&self, tf: &[Complex64], f_d: f64, split: usize) -> Vec<Complex64> {
        banded_mix(&self.params, tf, f_d, split, self.support_halfwidth)
    }
}

/// Untruncated direct sum, `O(M^2 N)` per application.
#[derive(Debug, Clone)]
pub struct DenseBackend {
    params: OtfsParams,
}

impl DenseBackend {
    pub fn new(params: &OtfsParams) -> Self {
        Self {
            params: params.clone(),
        }
    }
}

impl ChannelBackend for DenseBackend {
    fn name(&self) -> &'static str {
        "direct"
    }

    fn mix(&self, tf: &[Complex64], f_d: f64, split: usize) -> Vec<Complex64> {
        banded_mix(&self.params, tf, f_d, split, self.params.m)
    }
}

/// Exact mixing through the sampled time domain.
///
/// Each slot is taken back to its `M` time samples, the receive window keeps
/// the first `split` samples from the current slot and the rest from the
/// previous one, the within-slot Doppler rotation is applied, and the result
/// is transformed forward again. `O(M N log M)` per application.
#[derive(Clone)]
pub struct WindowedBackend {
    params: OtfsParams,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for WindowedBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WindowedBackend")
            .field("m", &self.params.m)
            .field("n", &self.params.n)
            .finish()
    }
}

impl WindowedBackend {
    pub fn new(params: &OtfsParams) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            params: params.clone(),
            fwd: planner.plan_fft_forward(params.m),
            inv: planner.plan_fft_inverse(params.m),
        }
    }
}

impl ChannelBackend for WindowedBackend {
    fn name(&self) -> &'static str {
        "windowed"
    }

    fn mix(&self, tf: &[Complex64], f_d: f64, split: usize) -> Vec<Complex64> {
        let (m, n) = (self.params.m, self.params.n);
        let doppler = sample_phases(m, f_d, self.params.t_slot);
        let ph = slot_phases(&self.params, f_d);
        let mut time = tf.to_vec();
        for (slot, p) in time.chunks_exact_mut(m).zip(&ph) {
            self.inv.process(slot);
            for (z, d) in slot.iter_mut().zip(&doppler) {
                *z *= d * p;
            }
        }
        let inv_m = 1.0 / m as f64;
        let mut out = vec![Complex64::new(0.0, 0.0); m * n];
        for nn in 0..n {
            let row = &mut out[nn * m..(nn + 1) * m];
            row[..split].copy_from_slice(&time[nn * m..nn * m + split]);
            if nn > 0 {
                row[split..].copy_from_slice(&time[(nn - 1) * m + split..nn * m]);
            }
            self.fwd.process(row);
            for z in row.iter_mut() {
                *z *= inv_m;
            }
        }
        out
    }
}
