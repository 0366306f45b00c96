//! Standard normal density, distribution function and the truncated-Gaussian
//! moment functions used by the win update.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

pub fn pdf(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * PI).sqrt()
}

pub fn cdf(t: f64) -> f64 {
    0.5 * libm::erfc(-t * FRAC_1_SQRT_2)
}

/// Below this the direct ratio is replaced by the Mills-ratio continued fraction.
const TAIL: f64 = -8.0;

/// Φ(−x)/φ(x) for x > 0 via its continued fraction, evaluated bottom-up.
fn mills_ratio(x: f64) -> f64 {
    let mut acc = x;
    for k in (1..=60).rev() {
        acc = x + k as f64 / acc;
    }
    1.0 / acc
}

/// Mean shift of a standard normal truncated to `(−t, ∞)`: φ(t)/Φ(t).
pub fn v_exceeds(t: f64) -> f64 {
    if t >= TAIL {
        pdf(t) / cdf(t)
    } else {
        1.0 / mills_ratio(-t)
    }
}

/// Variance reduction factor: `v(t)·(v(t) + t)`, always in (0, 1).
pub fn w_exceeds(t: f64) -> f64 {
    if t >= TAIL {
        let v = v_exceeds(t);
        v * (v + t)
    } else {
        // v + t = 1/R(x) − x loses everything to cancellation; use the
        // continued fraction tail directly: 1/R(x) = x + 1/(x + 2/(x + …)).
        let x = -t;
        let mut acc = x;
        for k in (2..=60).rev() {
            acc = x + k as f64 / acc;
        }
        let v_plus_t = 1.0 / acc;
        (x + v_plus_t) * v_plus_t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_at_zero() {
        assert!((v_exceeds(0.0) - (2.0 / PI).sqrt()).abs() < 1e-15);
        assert!((w_exceeds(0.0) - 2.0 / PI).abs() < 1e-15);
    }

    #[test]
    fn values_at_one() {
        assert!((v_exceeds(1.0) - 0.287_599_970_9).abs() < 1e-9);
        assert!((w_exceeds(1.0) - 0.370_313_714_1).abs() < 1e-9);
    }

    #[test]
    fn tail_switch_is_continuous() {
        let a = v_exceeds(TAIL);
        let b = 1.0 / mills_ratio(-TAIL);
        assert!((a - b).abs() / a < 1e-12, "{a} vs {b}");
        assert!((w_exceeds(TAIL - 1e-12) - a * (a + TAIL)).abs() < 1e-8);
    }

    #[test]
    fn stable_and_bounded_over_wide_range() {
        let mut t = -30.0;
        while t <= 30.0 {
            let v = v_exceeds(t);
            let w = w_exceeds(t);
            assert!(v.is_finite() && v > 0.0, "v({t}) = {v}");
            assert!(w > 0.0 && w < 1.0, "w({t}) = {w}");
            t += 0.01;
        }
        // Large negative arguments: v(t) ≈ −t, w(t) → 1.
        // Reference values from 40-digit arithmetic.
        assert!((v_exceeds(-30.0) - 30.033_259_667_433_677).abs() < 1e-10);
        assert!((w_exceeds(-30.0) - 0.998_896_228_488_110).abs() < 1e-10);
    }
}
