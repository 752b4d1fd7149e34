//! Special functions used by the variational updates: the exponential
//! integral `E1`, its exponentially scaled form `e^x E1(x)`, the digamma
//! function and `ln Γ`.
//!
//! `E1` uses the power series below [`E1_SERIES_CUTOFF`] and a modified
//! Lentz evaluation of the continued fraction above it. Relative accuracy is
//! better than `1e-12` on `[1e-8, 700]`.

use crate::error::{Error, Result};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Arguments at or below this use the series, above it the continued fraction.
pub const E1_SERIES_CUTOFF: f64 = 1.0;

const MAX_TERMS: usize = 500;

fn check_positive(func: &'static str, x: f64) -> Result<()> {
    if x > 0.0 && !x.is_nan() {
        Ok(())
    } else {
        Err(Error::Domain { func, x })
    }
}

/// `E1(x) = ∫_x^∞ e^{-t}/t dt`.
pub fn e1(x: f64) -> Result<f64> {
    check_positive("e1", x)?;
    if x <= E1_SERIES_CUTOFF {
        Ok(e1_series(x))
    } else {
        Ok(scaled_e1_fraction(x) * (-x).exp())
    }
}

/// `e^x E1(x)`, finite for every positive argument including ones where
/// `e^x` alone overflows.
pub fn scaled_e1(x: f64) -> Result<f64> {
    check_positive("scaled_e1", x)?;
    if x <= E1_SERIES_CUTOFF {
        Ok(x.exp() * e1_series(x))
    } else if x.is_infinite() {
        Ok(0.0)
    } else {
        Ok(scaled_e1_fraction(x))
    }
}

/// `ln E1(x)`, computed as `ln(e^x E1(x)) - x` so that it stays finite for
/// large arguments.
pub fn ln_e1(x: f64) -> Result<f64> {
    Ok(scaled_e1(x)?.ln() - x)
}

// E1(x) = -γ - ln x - Σ_{k≥1} (-x)^k / (k·k!)
fn e1_series(x: f64) -> f64 {
    let mut sum = 0.0;
    let mut term = 1.0;
    for k in 1..MAX_TERMS {
        let kf = k as f64;
        term *= -x / kf;
        let contrib = term / kf;
        sum += contrib;
        if contrib.abs() < sum.abs() * f64::EPSILON * 0.25 {
            break;
        }
    }
    -EULER_GAMMA - x.ln() - sum
}

// e^x E1(x) = 1/(x+1- 1/(x+3- 4/(x+5- ...))), evaluated with modified Lentz.
fn scaled_e1_fraction(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_TERMS {
        let a = -((i * i) as f64);
        b += 2.0;
        d = 1.0 / (a * d + b);
        c = b + a / c;
        let delta = c * d;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Digamma `Ψ(x) = d/dx ln Γ(x)`.
pub fn digamma(x: f64) -> Result<f64> {
    check_positive("digamma", x)?;
    let mut shift = 0.0;
    let mut z = x;
    while z < 10.0 {
        shift -= 1.0 / z;
        z += 1.0;
    }
    // Asymptotic series with Bernoulli numbers B2..B14.
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let tail = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    Ok(shift + z.ln() - 0.5 * inv - tail)
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
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

/// `ln Γ(x)` for positive `x` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> Result<f64> {
    check_positive("ln_gamma", x)?;
    if x < 0.5 {
        // Γ(x) = Γ(x+1)/x keeps the Lanczos sum in its accurate range.
        return Ok(ln_gamma(x + 1.0)? - x.ln());
    }
    let z = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (k, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (z + k as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    Ok(0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + acc.ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    // Reference values from a 40-digit evaluation of the defining integral.
    const E1_TABLE: [(f64, f64); 10] = [
        (1e-8, 17.843_465_089_050_832),
        (1e-6, 13.238_295_893_062_491),
        (1e-3, 6.331_539_364_136_149),
        (0.1, 1.822_923_958_419_390_6),
        (1.0, 0.219_383_934_395_520_27),
        (5.0, 0.001_148_295_591_275_325_8),
        (10.0, 4.156_968_929_685_324e-6),
        (20.0, 9.835_525_290_649_882e-11),
        (50.0, 3.783_264_029_550_459e-24),
        (700.0, 1.406_518_766_234_033e-307),
    ];

    #[test]
    fn e1_matches_reference_table() {
        for &(x, want) in &E1_TABLE {
            let got = e1(x).unwrap();
            assert!(rel(got, want) < 1e-12, "x={x}: got {got}, want {want}");
        }
    }

    #[test]
    fn e1_small_argument_expansion() {
        let x = 1e-6;
        let ratio = e1(x).unwrap() / (-EULER_GAMMA - x.ln());
        assert!((ratio - 1.0).abs() < 1e-6);
    }

    #[test]
    fn scaled_e1_values() {
        assert!(rel(scaled_e1(1.0).unwrap(), 0.596_347_362_323_194_1) < 1e-12);
        let x = 1e6;
        let v = scaled_e1(x).unwrap();
        assert!(rel(v, 1.0 / x - 1.0 / (x * x) + 2.0 / x.powi(3)) < 1e-12);
        assert!(rel(v * x, 1.0) < 1e-5);
        let x = 50.0;
        assert!(rel(scaled_e1(x).unwrap(), x.exp() * e1(x).unwrap()) < 1e-12);
        assert!(scaled_e1(1e8).unwrap().is_finite());
        assert!(scaled_e1(1e300).unwrap() > 0.0);
    }

    #[test]
    fn scaled_e1_continuous_at_cutoff() {
        let lo = scaled_e1(E1_SERIES_CUTOFF).unwrap();
        let hi = scaled_e1(E1_SERIES_CUTOFF * (1.0 + 1e-12)).unwrap();
        assert!(rel(lo, hi) < 1e-11);
    }

    #[test]
    fn scaled_e1_strictly_decreasing() {
        let mut prev = f64::INFINITY;
        let mut x = 1e-8;
        while x < 1e7 {
            let v = scaled_e1(x).unwrap();
            assert!(v > 0.0 && v < prev, "x={x}");
            prev = v;
            x *= 1.37;
        }
    }

    #[test]
    fn digamma_identities() {
        assert!((digamma(1.0).unwrap() + EULER_GAMMA).abs() < 1e-10);
        assert!((digamma(2.0).unwrap() - (1.0 - EULER_GAMMA)).abs() < 1e-10);
        let half = -EULER_GAMMA - 2.0 * std::f64::consts::LN_2;
        assert!((digamma(0.5).unwrap() - half).abs() < 1e-10);
        assert!((digamma(1e-3).unwrap() + 1_000.575_571_931_810_3).abs() < 1e-10);
        assert!((digamma(7.3).unwrap() - 1.917_820_335_637_986).abs() < 1e-10);
    }

    #[test]
    fn ln_gamma_values() {
        assert!(ln_gamma(1.0).unwrap().abs() < 1e-13);
        assert!(ln_gamma(2.0).unwrap().abs() < 1e-13);
        assert!((ln_gamma(0.5).unwrap() - 0.5 * std::f64::consts::PI.ln()).abs() < 1e-13);
        assert!(rel(ln_gamma(1e-3).unwrap(), 6.907_178_885_383_854) < 1e-13);
        assert!(rel(ln_gamma(7.001).unwrap(), 6.581_124_073_113_868) < 1e-13);
        assert!(rel(ln_gamma(101.0).unwrap(), 363.739_375_555_563_5) < 1e-13);
    }

    #[test]
    fn rejects_nonpositive() {
        for f in [e1, scaled_e1, digamma, ln_gamma] {
            assert!(matches!(f(0.0), Err(Error::Domain { .. })));
            assert!(matches!(f(-1.0), Err(Error::Domain { .. })));
            assert!(f(f64::NAN).is_err());
        }
    }
}
