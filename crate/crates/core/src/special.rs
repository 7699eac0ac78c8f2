//! Regularized incomplete gamma and beta functions and the tail
//! probabilities built on them.
//!
//! The gamma function uses the series expansion below `a + 1` and a
//! modified-Lentz continued fraction above; the beta function uses the
//! standard continued fraction with the reflection
//! `I_x(a, b) = 1 - I_{1-x}(b, a)` for fast convergence. Both iterate to a
//! relative step of 1e-16, which keeps tail probabilities on `[1e-8, 0.5]`
//! accurate to roughly 1e-13 absolute.

#[allow(unused_imports)] // only needed when std is absent from the build
use num_traits::Float;

const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;
const MAX_ITER: usize = 100_000;

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        gamma_series(a, x)
    } else {
        1.0 - gamma_cont_frac(a, x)
    }
}

/// Regularized upper incomplete gamma `Q(a, x) = 1 - P(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_series(a, x)
    } else {
        gamma_cont_frac(a, x)
    }
}

fn gamma_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut del = 1.0 / a;
    let mut sum = del;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_cont_frac(a: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
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
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn beta_inc(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front = (a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b)).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cont_frac(a, b, x) / a
    } else {
        1.0 - front * beta_cont_frac(b, a, 1.0 - x) / b
    }
}

/// Complement `1 - I_x(a, b)` without cancellation in the upper tail.
fn beta_inc_complement(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x >= 1.0 {
        return 0.0;
    }
    let front = (a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b)).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        1.0 - front * beta_cont_frac(a, b, x) / a
    } else {
        front * beta_cont_frac(b, a, 1.0 - x) / b
    }
}

fn beta_cont_frac(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Upper tail of the chi-square distribution with `df` degrees of freedom.
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_q(df / 2.0, x / 2.0)
}

/// Upper tail of the F distribution.
pub fn f_sf(x: f64, df1: f64, df2: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if !x.is_finite() {
        return 0.0;
    }
    // P(F > x) = I_{d2/(d2 + d1 x)}(d2/2, d1/2)
    beta_inc(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * x))
}

/// Upper tail `P(T > t)` of Student's t.
pub fn t_sf(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    let x = df / (df + t * t);
    let half_tail = 0.5 * beta_inc(df / 2.0, 0.5, x);
    if t >= 0.0 {
        half_tail
    } else {
        0.5 + 0.5 * beta_inc_complement(df / 2.0, 0.5, x)
    }
}

/// Two-sided p-value for a t statistic.
pub fn t_two_sided(t: f64, df: f64) -> f64 {
    (2.0 * t_sf(t.abs(), df)).min(1.0)
}

pub fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / core::f64::consts::SQRT_2)
}

pub fn normal_cdf(z: f64) -> f64 {
    normal_sf(-z)
}

/// Inverse standard normal CDF (Acklam's rational approximation polished
/// by one Halley step against `erfc`).
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let plow = 0.02425;
    let x = if p < plow {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - plow {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = normal_cdf(x) - p;
    let u = e * (2.0 * core::f64::consts::PI).sqrt() * (x * x / 2.0).exp();
    x - u / (1.0 + x * u / 2.0)
}

/// Quantile of Student's t: the `t` with `P(T <= t) = p`.
pub fn t_quantile(p: f64, df: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p < 0.5 {
        return -t_quantile(1.0 - p, df);
    }
    let target = 1.0 - p;
    let mut lo = 0.0;
    let mut hi = normal_quantile(p).max(1.0);
    while t_sf(hi, df) > target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if t_sf(mid, df) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi.max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values computed with mpmath / scipy.stats at high precision.
    #[test]
    fn incomplete_gamma_reference() {
        assert!((gamma_q(2.5, 3.0) - 0.306_218_918_413_278_4).abs() < 1e-13);
        assert!((gamma_p(2.5, 3.0) + gamma_q(2.5, 3.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn incomplete_beta_reference() {
        assert!((beta_inc(2.0, 3.0, 0.4) - 0.5248).abs() < 1e-13);
        assert!((beta_inc(0.5, 10.5, 0.05) - 0.694_937_996_942_589_7).abs() < 1e-13);
    }

    #[test]
    fn tail_reference_values() {
        let cases = [
            (t_sf(2.0, 5.0), 0.050_969_739_414_929_14),
            (t_sf(0.5, 30.0), 0.310_361_502_442_563_66),
            (normal_sf(1.96), 0.024_997_895_148_220_435),
            (normal_sf(-0.3), 0.617_911_422_188_952_6),
            (chi2_sf(0.001, 1.0), 0.974_772_879_369_960_4),
            (chi2_sf(40.0, 10.0), 1.694_474_393_006_737e-5),
            (f_sf(3.0, 4.0, 20.0), 0.043_200_998_334_214_06),
            (f_sf(0.2, 7.0, 3.0), 0.963_326_645_781_813_5),
        ];
        for (got, want) in cases {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn chi2_df2_closed_form() {
        for x in [0.01, 0.5, 1.0, 3.7, 12.0, 40.0] {
            assert!((chi2_sf(x, 2.0) - (-x / 2.0).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn chi2_at_zero_is_one() {
        for k in [1.0, 2.0, 3.0, 10.0] {
            assert_eq!(chi2_sf(0.0, k), 1.0);
        }
    }

    #[test]
    fn t_negative_side() {
        assert!((t_sf(-2.0, 5.0) - (1.0 - 0.050_969_739_414_929_14)).abs() < 1e-13);
    }

    #[test]
    fn quantiles_invert() {
        for p in [1e-6, 0.025, 0.3, 0.5, 0.9, 0.975] {
            assert!((normal_cdf(normal_quantile(p)) - p).abs() < 1e-14 * p.max(1e-2) * 100.0);
            let t = t_quantile(p, 12.0);
            assert!((1.0 - t_sf(t, 12.0) - p).abs() < 1e-12);
        }
    }
}
