//! Gamma function family on the real line.
//!
//! Lanczos approximation (g = 7, 9 coefficients) with the reflection formula
//! for arguments below 1/2. Relative accuracy is around 1e-15 away from poles.

use std::f64::consts::PI;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `sin(pi x)` with the argument reduced first so that integers give exact zeros.
pub fn sin_pi(x: f64) -> f64 {
    let n = x.round();
    let r = x - n;
    let s = (PI * r).sin();
    if (n as i64) % 2 == 0 {
        s
    } else {
        -s
    }
}

fn is_nonpositive_integer(x: f64) -> bool {
    x <= 0.0 && x == x.floor()
}

fn lanczos_sum(x: f64) -> f64 {
    let mut a = LANCZOS_COEFFS[0];
    for (i, c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    a
}

/// Euler Gamma. Returns `f64::INFINITY` at the poles (non-positive integers).
pub fn gamma(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if is_nonpositive_integer(x) {
        return f64::INFINITY;
    }
    if x < 0.5 {
        return PI / (sin_pi(x) * gamma(1.0 - x));
    }
    if x > 171.7 {
        return f64::INFINITY;
    }
    if x == x.floor() && x <= 23.0 {
        // exact factorials below 2^53
        return (2..x as u64).fold(1.0, |acc, k| acc * k as f64);
    }
    let xm = x - 1.0;
    let t = xm + LANCZOS_G + 0.5;
    // split the power to avoid premature overflow near the top of the range
    let half = t.powf(0.5 * (xm + 0.5));
    (2.0 * PI).sqrt() * half * (half * (-t).exp()) * lanczos_sum(xm)
}

/// Natural log of |Gamma(x)|.
pub fn ln_gamma(x: f64) -> f64 {
    if is_nonpositive_integer(x) {
        return f64::INFINITY;
    }
    if x < 0.5 {
        return (PI / sin_pi(x).abs()).ln() - ln_gamma(1.0 - x);
    }
    let xm = x - 1.0;
    let t = xm + LANCZOS_G + 0.5;
    LN_SQRT_2PI + (xm + 0.5) * t.ln() - t + lanczos_sum(xm).ln()
}

/// Reciprocal Gamma, entire: zero at the poles of Gamma.
pub fn rgamma(x: f64) -> f64 {
    if is_nonpositive_integer(x) {
        return 0.0;
    }
    if x > 170.0 {
        return (-ln_gamma(x)).exp();
    }
    if x < -170.0 {
        // reflection: 1/Gamma(x) = sin(pi x) Gamma(1 - x) / pi
        let sign = sin_pi(x).signum();
        return sign * (ln_gamma(1.0 - x) + sin_pi(x).abs().ln() - PI.ln()).exp();
    }
    1.0 / gamma(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_factorials() {
        let mut f = 1.0;
        for n in 1..20 {
            assert!((gamma(n as f64) - f).abs() <= 1e-14 * f, "n = {n}");
            f *= n as f64;
        }
    }

    #[test]
    fn half_integers() {
        assert!((gamma(0.5) - PI.sqrt()).abs() < 1e-14);
        assert!((gamma(1.5) - 0.5 * PI.sqrt()).abs() < 1e-14);
        assert!((gamma(-0.5) + 2.0 * PI.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn poles_and_reciprocal() {
        assert_eq!(rgamma(0.0), 0.0);
        assert_eq!(rgamma(-3.0), 0.0);
        assert!(gamma(-2.0).is_infinite());
        assert!((rgamma(1.0) - 1.0).abs() < 1e-15);
        assert!((rgamma(200.0) - (-ln_gamma(200.0)).exp()).abs() < 1e-300);
    }

    #[test]
    fn ln_gamma_matches_gamma() {
        for &x in &[0.1, 0.7, 2.5, 10.3, 50.0, -1.5, -2.7] {
            let g: f64 = gamma(x);
            assert!((ln_gamma(x) - g.abs().ln()).abs() < 1e-12, "x = {x}");
        }
    }
}
