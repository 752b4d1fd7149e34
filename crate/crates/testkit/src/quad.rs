//! Double-exponential quadrature oracles.

use quadrature::double_exponential;

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// `∫_a^b f`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    double_exponential::integrate(f, a, b, 1e-14).integral
}

/// `∫_{e^lo}^{e^hi} f(t) dt` evaluated in `u = log t`, which spreads
/// integrands living on many scales evenly over the interval.
pub fn integrate_log<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64) -> f64 {
    // Split so each panel covers a moderate range of scales.
    let panels = ((hi - lo) / 4.0).ceil().max(1.0) as usize;
    let w = (hi - lo) / panels as f64;
    (0..panels)
        .map(|k| {
            let a = lo + k as f64 * w;
            integrate(|u| {
                let t = u.exp();
                f(t) * t
            }, a, a + w)
        })
        .sum()
}

/// `E1(x) = ∫_x^∞ e^{-t}/t dt`.
pub fn e1(x: f64) -> f64 {
    if x >= 1.0 {
        // t = x + s keeps the integrand of order one; the tolerance is absolute.
        return (-x).exp() * scaled_e1(x);
    }
    // In u = log t the integrand is exp(−e^u); past t = 750 it underflows.
    integrate(|u| (-u.exp()).exp(), x.ln(), 750f64.ln())
}

/// `e^x E1(x) = ∫_0^∞ e^{-s}/(x+s) ds`, evaluated without forming `e^x`.
pub fn scaled_e1(x: f64) -> f64 {
    integrate_log(|s| (-s).exp() / (x + s), -40.0, 750f64.ln())
}

/// `Ψ(x) = −γ + ∫_0^1 (1 − t^{x−1})/(1 − t) dt`, shifted with
/// `Ψ(x) = Ψ(x+1) − 1/x` so the integrand stays bounded.
pub fn digamma(x: f64) -> f64 {
    assert!(x > 0.0);
    if x < 1.0 {
        return digamma(x + 1.0) - 1.0 / x;
    }
    let f = |t: f64| {
        if t >= 1.0 {
            x - 1.0
        } else {
            (1.0 - t.powf(x - 1.0)) / (1.0 - t)
        }
    };
    -EULER_GAMMA + integrate(f, 0.0, 1.0)
}

/// Standard normal CDF from the integral of the density.
pub fn normal_cdf(z: f64) -> f64 {
    let phi = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    0.5 + integrate(phi, 0.0, z)
}

/// Standard normal quantile by bisection on [`normal_cdf`].
pub fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0);
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Unnormalised density of the local-scale marginal,
/// `λ ↦ e^{−l/λ²} / (λ(1+λ²))`.
pub fn local_scale_kernel(l: f64, lambda: f64) -> f64 {
    (-l / (lambda * lambda)).exp() / (lambda * (1.0 + lambda * lambda))
}

/// `(∫ kernel, ∫ λ⁻² kernel)` over `λ > 0`.
pub fn local_scale_moments(l: f64) -> (f64, f64) {
    let mass = integrate_log(|lam| local_scale_kernel(l, lam), -30.0, 30.0);
    let inv_sq = integrate_log(|lam| local_scale_kernel(l, lam) / (lam * lam), -30.0, 30.0);
    (mass, inv_sq)
}

/// `log p(y)` for a one-column model
/// `y | β,σ² ~ N(xβ, σ²I)`, `β ~ N(0, σ²τ²λ²)`, `λ ~ C⁺(0,1)`,
/// `τ⁻² ~ Γ(a,b)`, `σ⁻² ~ Γ(c,d)`.
///
/// `β` and `σ⁻²` are integrated in closed form (Gaussian, then a
/// multivariate t); `λ` and `τ⁻²` by nested quadrature.
pub fn log_marginal_one_column(y: &[f64], x: &[f64], hyper: [f64; 4]) -> f64 {
    let [a, b, c, d] = hyper;
    let n = y.len() as f64;
    let xx: f64 = x.iter().map(|v| v * v).sum();
    let yy: f64 = y.iter().map(|v| v * v).sum();
    let xy: f64 = x.iter().zip(y).map(|(u, v)| u * v).sum();
    let ln_gamma = |z: f64| lgamma(z);
    // y | v ~ t with scale matrix I + v x xᵀ after integrating σ⁻².
    let log_t = |v: f64| {
        let det = 1.0 + v * xx;
        let quad = yy - v * xy * xy / det;
        ln_gamma(c + n / 2.0) - ln_gamma(c) + c * d.ln() - 0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln()
            - (c + n / 2.0) * (d + 0.5 * quad).ln()
    };
    let log_norm_gamma = a * b.ln() - ln_gamma(a);
    let inner = |w: f64| {
        // ∫ over λ of C⁺ density times the t likelihood at v = λ²/w.
        integrate_log(
            |lam| 2.0 / (std::f64::consts::PI * (1.0 + lam * lam)) * (log_t(lam * lam / w)).exp(),
            -25.0,
            25.0,
        )
    };
    let outer = integrate_log(
        |w| (log_norm_gamma + (a - 1.0) * w.ln() - b * w).exp() * inner(w),
        -25.0,
        8.0,
    );
    outer.ln()
}

/// Lanczos log-gamma (g = 7, n = 9), accurate to about 1e-15 for `z > 0`.
pub fn lgamma(z: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
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
    if z < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * z).sin()).ln() - lgamma(1.0 - z);
    }
    let z = z - 1.0;
    let mut x = C[0];
    for (i, c) in C.iter().enumerate().skip(1) {
        x += c / (z + i as f64);
    }
    let t = z + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + x.ln()
}
