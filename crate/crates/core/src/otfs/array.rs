use std::f64::consts::PI;

use num_complex::Complex64;

/// Centered element index `q - (n - 1)/2` of element `q` in an `n`-element ULA.
pub fn centered_index(q: usize, n_elems: usize) -> f64 {
    q as f64 - (n_elems as f64 - 1.0) / 2.0
}

/// Half-wavelength ULA response: element `q` is `exp(j pi (q - (n-1)/2) sin(phi))`.
pub fn array_response(phi: f64, n_elems: usize) -> Vec<Complex64> {
    let s = phi.sin();
    (0..n_elems)
        .map(|q| Complex64::from_polar(1.0, PI * centered_index(q, n_elems) * s))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadside_is_all_ones() {
        for z in array_response(0.0, 4) {
            assert!((z - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn endfire_two_elements() {
        let a = array_response(PI / 2.0, 2);
        assert!((a[0] - Complex64::from_polar(1.0, -PI / 2.0)).norm() < 1e-15);
        assert!((a[1] - Complex64::from_polar(1.0, PI / 2.0)).norm() < 1e-15);
    }

    #[test]
    fn norm_squared_equals_element_count() {
        let a = array_response(0.3, 16);
        let n2: f64 = a.iter().map(|z| z.norm_sqr()).sum();
        assert!((n2 - 16.0).abs() < 1e-12);
    }
}
