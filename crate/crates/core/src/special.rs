//! Special functions: gamma family, normal tails in log space, incomplete gamma.
//!
//! `ln_gamma` and `digamma` come from `statrs` and `erfc` from `libm`, whose
//! tail is accurate to a few ulps; the rest is here
//! because it either does not exist there (trigamma) or has to work in log
//! space far beyond the range where the plain functions underflow.

use std::f64::consts::{PI, SQRT_2};

pub use libm::erfc;
pub use statrs::function::gamma::{digamma, ln_gamma};

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Trigamma function ψ′(x) for x > 0.
pub fn trigamma(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    let mut acc = 0.0;
    let mut z = x;
    while z < 10.0 {
        acc += 1.0 / (z * z);
        z += 1.0;
    }
    let r = 1.0 / z;
    let r2 = r * r;
    // Asymptotic expansion with Bernoulli numbers B2..B12.
    let tail = r
        + 0.5 * r2
        + r * r2
            * (1.0 / 6.0
                - r2 * (1.0 / 30.0
                    - r2 * (1.0 / 42.0 - r2 * (1.0 / 30.0 - r2 * (5.0 / 66.0 - r2 * 691.0 / 2730.0)))));
    acc + tail
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// Standard normal CDF Φ(x).
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Upper tail 1 − Φ(x), accurate for large positive x.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * erfc(x / SQRT_2)
}

/// Mill's ratio (1 − Φ(x)) / φ(x) by continued fraction, for x ≥ 0.
///
/// Converges quickly for x ≳ 2 and never touches the underflowing tail.
pub fn mills_ratio_cf(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = if x == 0.0 { TINY } else { x };
    let mut c = f;
    let mut d = 0.0;
    for k in 1..2000 {
        let a = k as f64;
        d = x + a * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = x + a / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 / f
}

/// log(1 − Φ(x)), finite for every finite x.
pub fn log_normal_sf(x: f64) -> f64 {
    if x < 3.0 {
        normal_sf(x).ln()
    } else {
        -0.5 * x * x - LN_SQRT_2PI + mills_ratio_cf(x).ln()
    }
}

/// log(e^a + e^b) without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// log Σ e^{xᵢ}.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, log_add_exp)
}

/// log(1 − e^{x}) for x ≤ 0.
pub fn log1m_exp(x: f64) -> f64 {
    if x > -std::f64::consts::LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

/// softplus(x) = log(1 + eˣ), stable for all x.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for y > 0: log(eʸ − 1).
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

/// Log of the regularized lower incomplete gamma function, ln P(a, x).
pub fn ln_gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if x < a + 1.0 {
        ln_gamma_series(a, x)
    } else {
        log1m_exp(ln_gamma_cf(a, x))
    }
}

/// Log of the regularized upper incomplete gamma function, ln Q(a, x).
pub fn ln_gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        log1m_exp(ln_gamma_series(a, x))
    } else {
        ln_gamma_cf(a, x)
    }
}

fn ln_gamma_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..10_000 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-17 {
            break;
        }
    }
    sum.ln() + a * x.ln() - x - ln_gamma(a)
}

fn ln_gamma_cf(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h.ln() + a * x.ln() - x - ln_gamma(a)
}

/// Logistic sigmoid 1/(1 + e^{−u}), using the branch that cannot overflow.
pub fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// √(2π).
pub fn sqrt_2pi() -> f64 {
    (2.0 * PI).sqrt()
}
