use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::{Error, Result};

/// Delay-Doppler symbol grid `x[k, l]`, `k` in `[0, M)` (delay), `l` in `[0, N)` (Doppler).
///
/// Stored column-major with delay fastest: `data[l * M + k]`. This is also the
/// vectorisation order used by the channel operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayDopplerFrame {
    m: usize,
    n: usize,
    data: Vec<Complex64>,
}

/// Time-frequency symbol grid `X[n, m]`, slot-major with subcarrier fastest: `data[n * M + m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeFrequencyFrame {
    m: usize,
    n: usize,
    data: Vec<Complex64>,
}

macro_rules! grid_common {
    ($ty:ident) => {
        impl $ty {
            pub fn zeros(m: usize, n: usize) -> Self {
                Self {
                    m,
                    n,
                    data: vec![Complex64::new(0.0, 0.0); m * n],
                }
            }

            pub fn from_vec(m: usize, n: usize, data: Vec<Complex64>) -> Result<Self> {
                if data.len() != m * n {
                    return Err(Error::Config(format!(
                        "frame holds {} symbols, expected M*N = {}",
                        data.len(),
                        m * n
                    )));
                }
                Ok(Self { m, n, data })
            }

            pub fn m(&self) -> usize {
                self.m
            }

            pub fn n(&self) -> usize {
                self.n
            }

            pub fn as_slice(&self) -> &[Complex64] {
                &self.data
            }

            pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
                &mut self.data
            }

            pub fn into_vec(self) -> Vec<Complex64> {
                self.data
            }

            pub fn energy(&self) -> f64 {
                self.data.iter().map(|z| z.norm_sqr()).sum()
            }
        }
    };
}

grid_common!(DelayDopplerFrame);
grid_common!(TimeFrequencyFrame);

impl DelayDopplerFrame {
    pub fn get(&self, k: usize, l: usize) -> Complex64 {
        self.data[l * self.m + k]
    }

    pub fn set(&mut self, k: usize, l: usize, v: Complex64) {
        self.data[l * self.m + k] = v;
    }
}

impl TimeFrequencyFrame {
    pub fn get(&self, n: usize, m: usize) -> Complex64 {
        self.data[n * self.m + m]
    }

    pub fn set(&mut self, n: usize, m: usize, v: Complex64) {
        self.data[n * self.m + m] = v;
    }

    /// Symbols of slot `n` across all subcarriers.
    pub fn slot(&self, n: usize) -> &[Complex64] {
        &self.data[n * self.m..(n + 1) * self.m]
    }
}

/// Planned FFTs for one `(M, N)` grid; cheap to clone and share across threads.
#[derive(Clone)]
pub struct SymplecticFft {
    m: usize,
    n: usize,
    fwd_m: Arc<dyn Fft<f64>>,
    inv_m: Arc<dyn Fft<f64>>,
    fwd_n: Arc<dyn Fft<f64>>,
    inv_n: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SymplecticFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SymplecticFft")
            .field("m", &self.m)
            .field("n", &self.n)
            .finish()
    }
}

impl SymplecticFft {
    pub fn new(m: usize, n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            m,
            n,
            fwd_m: planner.plan_fft_forward(m),
            inv_m: planner.plan_fft_inverse(m),
            fwd_n: planner.plan_fft_forward(n),
            inv_n: planner.plan_fft_inverse(n),
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Forward M-point FFT, planned for this grid.
    pub fn fft_m(&self) -> &Arc<dyn Fft<f64>> {
        &self.fwd_m
    }

    /// Inverse (unnormalised) M-point FFT.
    pub fn ifft_m(&self) -> &Arc<dyn Fft<f64>> {
        &self.inv_m
    }

    fn check(&self, m: usize, n: usize) -> Result<()> {
        if m != self.m || n != self.n {
            return Err(Error::Config(format!(
                "frame is {m}x{n}, transform planned for {}x{}",
                self.m, self.n
            )));
        }
        Ok(())
    }

    /// `X[n,m] = 1/sqrt(NM) sum_k sum_l x[k,l] exp(-j2pi(mk/M - nl/N))`.
    pub fn isfft(&self, frame: &DelayDopplerFrame) -> Result<TimeFrequencyFrame> {
        self.check(frame.m, frame.n)?;
        let mut data = frame.data.clone();
        self.isfft_in_place(&mut data);
        Ok(TimeFrequencyFrame {
            m: self.m,
            n: self.n,
            data,
        })
    }

    /// Inverse of [`SymplecticFft::isfft`].
    pub fn sfft(&self, frame: &TimeFrequencyFrame) -> Result<DelayDopplerFrame> {
        self.check(frame.m, frame.n)?;
        let mut data = frame.data.clone();
        self.sfft_in_place(&mut data);
        Ok(DelayDopplerFrame {
            m: self.m,
            n: self.n,
            data,
        })
    }

    /// In-place delay-Doppler -> time-frequency on an `M*N` buffer.
    pub fn isfft_in_place(&self, data: &mut [Complex64]) {
        // delay axis k -> subcarrier m (forward), Doppler axis l -> slot n (inverse)
        self.transform(data, &self.fwd_m, &self.inv_n);
    }

    /// In-place time-frequency -> delay-Doppler on an `M*N` buffer.
    pub fn sfft_in_place(&self, data: &mut [Complex64]) {
        self.transform(data, &self.inv_m, &self.fwd_n);
    }

    fn transform(&self, data: &mut [Complex64], inner: &Arc<dyn Fft<f64>>, outer: &Arc<dyn Fft<f64>>) {
        let (m, n) = (self.m, self.n);
        assert_eq!(data.len(), m * n, "buffer length must be M*N");
        inner.process(data);
        let mut col = vec![Complex64::new(0.0, 0.0); n];
        for k in 0..m {
            for (l, c) in col.iter_mut().enumerate() {
                *c = data[l * m + k];
            }
            outer.process(&mut col);
            for (l, c) in col.iter().enumerate() {
                data[l * m + k] = *c;
            }
        }
        let scale = 1.0 / ((m * n) as f64).sqrt();
        for z in data.iter_mut() {
            *z *= scale;
        }
    }
}

/// One-shot DD -> TF transform. Plans FFTs on every call; prefer [`SymplecticFft`] in loops.
pub fn isfft_to_tf(frame: &DelayDopplerFrame) -> TimeFrequencyFrame {
    SymplecticFft::new(frame.m, frame.n)
        .isfft(frame)
        .expect("plan matches frame")
}

/// One-shot TF -> DD transform.
pub fn sfft_to_dd(frame: &TimeFrequencyFrame) -> DelayDopplerFrame {
    SymplecticFft::new(frame.m, frame.n)
        .sfft(frame)
        .expect("plan matches frame")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_dd(m: usize, n: usize, seed: u64) -> DelayDopplerFrame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..m * n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        DelayDopplerFrame::from_vec(m, n, data).unwrap()
    }

    // O((MN)^2) direct double sums, independent of the FFT path.
    fn brute_isfft(x: &DelayDopplerFrame) -> TimeFrequencyFrame {
        let (m, n) = (x.m(), x.n());
        let mut out = TimeFrequencyFrame::zeros(m, n);
        let s = 1.0 / ((m * n) as f64).sqrt();
        for nn in 0..n {
            for mm in 0..m {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..m {
                    for l in 0..n {
                        let ph = -2.0 * PI * ((mm * k) as f64 / m as f64 - (nn * l) as f64 / n as f64);
                        acc += x.get(k, l) * Complex64::from_polar(1.0, ph);
                    }
                }
                out.set(nn, mm, acc * s);
            }
        }
        out
    }

    fn brute_sfft(xt: &TimeFrequencyFrame) -> DelayDopplerFrame {
        let (m, n) = (xt.m(), xt.n());
        let mut out = DelayDopplerFrame::zeros(m, n);
        let s = 1.0 / ((m * n) as f64).sqrt();
        for k in 0..m {
            for l in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for nn in 0..n {
                    for mm in 0..m {
                        let ph = 2.0 * PI * ((mm * k) as f64 / m as f64 - (nn * l) as f64 / n as f64);
                        acc += xt.get(nn, mm) * Complex64::from_polar(1.0, ph);
                    }
                }
                out.set(k, l, acc * s);
            }
        }
        out
    }

    fn max_abs_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn impulse_maps_to_flat_grid() {
        let (m, n) = (8, 4);
        let mut x = DelayDopplerFrame::zeros(m, n);
        x.set(0, 0, Complex64::new(1.0, 0.0));
        let xt = isfft_to_tf(&x);
        let expect = 1.0 / ((m * n) as f64).sqrt();
        for z in xt.as_slice() {
            assert!((z - Complex64::new(expect, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn all_ones_maps_to_scaled_impulse() {
        let (m, n) = (8, 4);
        let x = DelayDopplerFrame::from_vec(m, n, vec![Complex64::new(1.0, 0.0); m * n]).unwrap();
        let xt = isfft_to_tf(&x);
        let peak = ((m * n) as f64).sqrt();
        for nn in 0..n {
            for mm in 0..m {
                let want = if nn == 0 && mm == 0 { peak } else { 0.0 };
                assert!((xt.get(nn, mm) - Complex64::new(want, 0.0)).norm() < 1e-12);
            }
        }
        let back = sfft_to_dd(&xt);
        assert!(max_abs_diff(back.as_slice(), x.as_slice()) < 1e-12);
    }

    #[test]
    fn matches_brute_force_double_sums() {
        let x = random_dd(8, 4, 11);
        let fast = isfft_to_tf(&x);
        let slow = brute_isfft(&x);
        assert!(max_abs_diff(fast.as_slice(), slow.as_slice()) < 1e-12);

        let xt = TimeFrequencyFrame::from_vec(8, 4, random_dd(8, 4, 12).into_vec()).unwrap();
        let fast = sfft_to_dd(&xt);
        let slow = brute_sfft(&xt);
        assert!(max_abs_diff(fast.as_slice(), slow.as_slice()) < 1e-12);
    }

    #[test]
    fn non_power_of_two_grid_matches_brute_force() {
        let x = random_dd(6, 5, 3);
        assert!(max_abs_diff(isfft_to_tf(&x).as_slice(), brute_isfft(&x).as_slice()) < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let plan = SymplecticFft::new(8, 4);
        let x = DelayDopplerFrame::zeros(4, 8);
        assert!(matches!(plan.isfft(&x), Err(Error::Config(_))));
        assert!(DelayDopplerFrame::from_vec(8, 4, vec![Complex64::new(0.0, 0.0); 31]).is_err());
    }
}
