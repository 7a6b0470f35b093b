use std::f64::consts::PI;

use num_complex::Complex64;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PulseKind {
    Rectangular,
}

/// A transmit or receive pulse sampled at `t = i T / M`, `i = 0..M`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pulse {
    kind: PulseKind,
    duration: f64,
    samples: Vec<Complex64>,
}

impl Pulse {
    /// Unit-energy rectangular pulse of length `duration`: amplitude `1/sqrt(T)` on `[0, T)`.
    pub fn rectangular(duration: f64, m: usize) -> Result<Self> {
        if !(duration > 0.0 && duration.is_finite()) || m == 0 {
            return Err(Error::Config(format!(
                "pulse needs positive duration and samples (got T={duration}, M={m})"
            )));
        }
        let amp = 1.0 / duration.sqrt();
        Ok(Self {
            kind: PulseKind::Rectangular,
            duration,
            samples: vec![Complex64::new(amp, 0.0); m],
        })
    }

    pub fn kind(&self) -> PulseKind {
        self.kind
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    /// Continuous-time value; zero outside `[0, T)`.
    pub fn eval(&self, t: f64) -> Complex64 {
        match self.kind {
            PulseKind::Rectangular => {
                if (0.0..self.duration).contains(&t) {
                    self.samples[0]
                } else {
                    Complex64::new(0.0, 0.0)
                }
            }
        }
    }

    /// Discrete energy `(T/M) sum |g(iT/M)|^2`.
    pub fn energy(&self) -> f64 {
        let dt = self.duration / self.samples.len() as f64;
        dt * self.samples.iter().map(|z| z.norm_sqr()).sum::<f64>()
    }
}

/// M-sample cross-ambiguity `(T/M) sum_i g_rx(iT/M) g_tx*(iT/M - tau) exp(-j2pi f_D iT/M)`.
///
/// Any real `tau`, `f_d` is accepted; lags outside the transmit pulse support give zero.
pub fn cross_ambiguity(g_rx: &Pulse, g_tx: &Pulse, tau: f64, f_d: f64) -> Complex64 {
    debug_assert_eq!(g_rx.sample_count(), g_tx.sample_count());
    let m = g_rx.sample_count();
    let t = g_rx.duration();
    let dt = t / m as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for (i, grx) in g_rx.samples().iter().enumerate() {
        let ti = i as f64 * t / m as f64;
        let gtx = g_tx.eval(ti - tau);
        if gtx == Complex64::new(0.0, 0.0) {
            continue;
        }
        acc += grx * gtx.conj() * Complex64::from_polar(1.0, -2.0 * PI * f_d * ti);
    }
    acc * dt
}
