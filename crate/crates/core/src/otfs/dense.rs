//! Materialised channel matrices for small instances; the reference the
//! fast operators are checked against.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{cross_ambiguity, ChannelOperator, Pulse, SymplecticFft};
use crate::{Error, Result};

/// Largest `M N` for which [`build_psi_dense`] will materialise `Psi`.
pub const DEFAULT_DENSE_CAP: usize = 4096;

/// TF-domain mixing matrix `H` (row `n M + m`, column `n' M + m'`):
///
/// `H = e^{j2pi n' T f_D} e^{-j2pi m delta_f tau} A((n-n')T - tau, (m-m') delta_f - f_D)`
/// for `n - n'` in `{0, 1}` and zero otherwise. The ambiguity values come from
/// [`cross_ambiguity`] on unit-energy rectangular pulses.
pub fn build_tf_mixing_dense(op: &ChannelOperator, cap: usize) -> Result<DMatrix<Complex64>> {
    let p = &op.params;
    let (m, n) = (p.m, p.n);
    let size = m * n;
    if size > cap {
        return Err(Error::DenseCapExceeded { size, cap });
    }
    let pulse = Pulse::rectangular(p.t_slot, m)?;
    // A depends on (n - n', m - m') only
    let offsets = 2 * m - 1;
    let mut table = [vec![Complex64::new(0.0, 0.0); offsets], vec![Complex64::new(0.0, 0.0); offsets]];
    for (delta, row) in table.iter_mut().enumerate() {
        for (idx, a) in row.iter_mut().enumerate() {
            let dm = idx as f64 - (m as f64 - 1.0);
            *a = cross_ambiguity(
                &pulse,
                &pulse,
                delta as f64 * p.t_slot - op.tau,
                dm * p.delta_f - op.f_d,
            );
        }
    }
    let mut h = DMatrix::from_element(size, size, Complex64::new(0.0, 0.0));
    for nn in 0..n {
        for mm in 0..m {
            let ramp = Complex64::from_polar(1.0, -2.0 * PI * mm as f64 * p.delta_f * op.tau);
            for (delta, kernel) in table.iter().enumerate() {
                if nn < delta {
                    continue;
                }
                let np = nn - delta;
                let slot = Complex64::from_polar(1.0, 2.0 * PI * np as f64 * p.t_slot * op.f_d);
                for mp in 0..m {
                    let a = kernel[mm + m - 1 - mp];
                    h[(nn * m + mm, np * m + mp)] = slot * ramp * a;
                }
            }
        }
    }
    Ok(h)
}

/// Dense `Psi` (`M N x M N`) as `SFFT . H . ISFFT`, built column by column.
///
/// Refuses instances above `cap`; large problems must go through the fast
/// channel operator instead.
pub fn build_psi_dense(op: &ChannelOperator, cap: usize) -> Result<DMatrix<Complex64>> {
    let h = build_tf_mixing_dense(op, cap)?;
    let p = &op.params;
    let size = p.m * p.n;
    let fft = SymplecticFft::new(p.m, p.n);
    let mut psi = DMatrix::from_element(size, size, Complex64::new(0.0, 0.0));
    let mut col = vec![Complex64::new(0.0, 0.0); size];
    for r in 0..size {
        col.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        col[r] = Complex64::new(1.0, 0.0);
        fft.isfft_in_place(&mut col);
        let mut mixed = vec![Complex64::new(0.0, 0.0); size];
        for (i, out) in mixed.iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, c) in col.iter().enumerate() {
                acc += h[(i, j)] * c;
            }
            *out = acc;
        }
        fft.sfft_in_place(&mut mixed);
        for (i, v) in mixed.into_iter().enumerate() {
            psi[(i, r)] = v;
        }
    }
    Ok(psi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::otfs::OtfsParams;

    #[test]
    fn zero_delay_zero_doppler_is_identity() {
        let p = OtfsParams::new(8, 4, 1e6, 1e-6, 60e9, 4, 2, 1.0, 4e-20, 1.0).unwrap();
        let op = ChannelOperator::new(&p, 0.0, 0.0, 0.0).unwrap();
        let psi = build_psi_dense(&op, DEFAULT_DENSE_CAP).unwrap();
        for r in 0..32 {
            assert!((psi[(r, r)] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn tf_mixing_is_causal() {
        let p = OtfsParams::new(8, 4, 1e6, 1e-6, 60e9, 4, 2, 1.0, 4e-20, 1.0).unwrap();
        let op = ChannelOperator::new(&p, 2_000.0, 0.37e-6, 0.1).unwrap();
        let h = build_tf_mixing_dense(&op, DEFAULT_DENSE_CAP).unwrap();
        for nn in 0..4 {
            for np in 0..4 {
                if np > nn || nn - np > 1 {
                    for mm in 0..8 {
                        for mp in 0..8 {
                            assert_eq!(h[(nn * 8 + mm, np * 8 + mp)], Complex64::new(0.0, 0.0));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn refuses_above_cap() {
        let p = OtfsParams::table_one();
        let op = ChannelOperator::new(&p, 0.0, 0.0, 0.0).unwrap();
        assert!(matches!(
            build_psi_dense(&op, DEFAULT_DENSE_CAP),
            Err(Error::DenseCapExceeded { size: 4800, cap: 4096 })
        ));
    }
}
