use crate::{Error, Result};

/// Waveform and array scalars shared by every base station.
///
/// Construct through [`OtfsParams::new`] (or [`OtfsParams::table_one`]) so
/// that the invariants hold for everything downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct OtfsParams {
    /// Subcarrier count.
    pub m: usize,
    /// Time-slot count.
    pub n: usize,
    /// Subcarrier spacing (Hz).
    pub delta_f: f64,
    /// Slot duration (s).
    pub t_slot: f64,
    /// Carrier frequency (Hz).
    pub f_c: f64,
    pub n_tx: usize,
    pub n_rx: usize,
    /// Total sensing transmit power (W).
    pub p_t: f64,
    /// Noise power spectral density (W/Hz).
    pub n0: f64,
    /// Single-element antenna gain G (linear).
    pub antenna_gain: f64,
}

impl OtfsParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        m: usize,
        n: usize,
        delta_f: f64,
        t_slot: f64,
        f_c: f64,
        n_tx: usize,
        n_rx: usize,
        p_t: f64,
        n0: f64,
        antenna_gain: f64,
    ) -> Result<Self> {
        let p = Self {
            m,
            n,
            delta_f,
            t_slot,
            f_c,
            n_tx,
            n_rx,
            p_t,
            n0,
            antenna_gain,
        };
        p.validate()?;
        Ok(p)
    }

    /// 60 GHz network: 16+16 antennas, 30 dBm, 96 subcarriers at 1 MHz, 50 slots.
    pub fn table_one() -> Self {
        Self::new(96, 50, 1e6, 1e-6, 60e9, 16, 16, 1.0, 4e-20, 1.0)
            .expect("built-in parameters are valid")
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("M", self.m), ("N", self.n), ("N_T", self.n_tx), ("N_R", self.n_rx)] {
            if v < 1 {
                return Err(Error::Config(format!("{name} must be >= 1, got {v}")));
            }
        }
        for (name, v) in [
            ("delta_f", self.delta_f),
            ("T", self.t_slot),
            ("f_c", self.f_c),
            ("P_T", self.p_t),
            ("N0", self.n0),
            ("antenna gain", self.antenna_gain),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        let ortho = self.t_slot * self.delta_f;
        if (ortho - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "orthogonality invariant violated: T*delta_f = {ortho} (must equal 1 within 1e-12)"
            )));
        }
        let frac = self.bandwidth() / self.f_c;
        if frac >= 0.01 {
            return Err(Error::Config(format!(
                "narrowband invariant violated: M*delta_f/f_c = {frac:.4} (must be < 0.01)"
            )));
        }
        Ok(())
    }

    pub fn bandwidth(&self) -> f64 {
        self.m as f64 * self.delta_f
    }

    /// Power per subcarrier, P_T / M.
    pub fn p_avg(&self) -> f64 {
        self.p_t / self.m as f64
    }

    /// Per-sample complex noise variance, N0 * delta_f.
    pub fn noise_var(&self) -> f64 {
        self.n0 * self.delta_f
    }

    /// Doppler resolution 1/(N T).
    pub fn doppler_resolution(&self) -> f64 {
        1.0 / (self.n as f64 * self.t_slot)
    }

    /// Delay resolution 1/(M delta_f).
    pub fn delay_resolution(&self) -> f64 {
        1.0 / (self.m as f64 * self.delta_f)
    }

    pub fn frame_len(&self) -> usize {
        self.m * self.n
    }

    pub fn wavelength(&self) -> f64 {
        crate::SPEED_OF_LIGHT / self.f_c
    }

    /// 3 dB receive beamwidth at broadside for a half-wavelength ULA, 0.886 * 2 / N_R.
    pub fn rx_beamwidth(&self) -> f64 {
        0.886 * 2.0 / self.n_rx as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_one_derived_values() {
        let p = OtfsParams::table_one();
        assert!((p.delay_resolution() - 1.0 / 96e6).abs() < 1e-20);
        assert!((p.doppler_resolution() - 20e3).abs() < 1e-9);
        assert!((p.noise_var() - 4e-14).abs() < 1e-28);
        assert!((p.p_avg() - 1.0 / 96.0).abs() < 1e-15);
        assert!((p.rx_beamwidth() - 0.1108).abs() < 1e-4);
    }

    #[test]
    fn rejects_non_orthogonal_grid() {
        let err = OtfsParams::new(96, 50, 1e6, 1.1e-6, 60e9, 16, 16, 1.0, 4e-20, 1.0).unwrap_err();
        assert!(err.to_string().contains("orthogonality"));
    }

    #[test]
    fn rejects_wideband_and_zero_counts() {
        assert!(OtfsParams::new(96, 50, 1e6, 1e-6, 5e9, 16, 16, 1.0, 4e-20, 1.0).is_err());
        assert!(OtfsParams::new(0, 50, 1e6, 1e-6, 60e9, 16, 16, 1.0, 4e-20, 1.0).is_err());
        assert!(OtfsParams::new(96, 50, 1e6, 1e-6, 60e9, 16, 16, -1.0, 4e-20, 1.0).is_err());
    }
}
