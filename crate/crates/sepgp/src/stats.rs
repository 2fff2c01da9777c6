//! Scalar Gaussian special functions.
//!
//! Everything here is driven by the probit likelihood: site updates and
//! predictions need `log Φ` and the ratio `N(z)/Φ(z)` far into the left
//! tail, where naive `Φ(z).ln()` underflows long before the math does.

use std::f64::consts::{FRAC_2_SQRT_PI, PI, SQRT_2};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Maclaurin series for erf, accurate for |x| <= ~1.7.
fn erf_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    for n in 1..200 {
        term *= -x2 / n as f64;
        let add = term / (2 * n + 1) as f64;
        sum += add;
        if add.abs() <= 1e-18 * sum.abs() {
            break;
        }
    }
    sum * FRAC_2_SQRT_PI
}

/// Gauss continued fraction for erfc, evaluated with the modified Lentz
/// algorithm. Returns `f` such that `erfc(x) = exp(-x^2) / (sqrt(pi) * f)`.
/// Converges for x > 0; fast once x is above ~1.5.
fn erfc_cf_denominator(x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut f = x.max(TINY);
    let mut c = f;
    let mut d = 0.0;
    for k in 1..400 {
        let a = k as f64 / 2.0;
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
        if (delta - 1.0).abs() < 1e-17 {
            break;
        }
    }
    f
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        2.0 - erfc(-x)
    } else if x < 1.7 {
        1.0 - erf_series(x)
    } else {
        (-x * x).exp() / (PI.sqrt() * erfc_cf_denominator(x))
    }
}

/// Standard normal cdf Φ(z).
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// log N(z | 0, 1).
pub fn log_normal_pdf(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * LN_2PI
}

/// log Φ(z), stable over the whole real line.
///
/// For z >= 0 the complement is tiny, so `ln_1p` keeps absolute accuracy.
/// For moderately negative z the erfc route is exact. Below -6 we switch to
/// the scaled complementary-error continued fraction, which never touches
/// the underflowing cdf value itself.
pub fn log_phi(z: f64) -> f64 {
    if z >= 0.0 {
        let q = 0.5 * erfc(z / SQRT_2);
        (-q).ln_1p()
    } else if z > -6.0 {
        (0.5 * erfc(-z / SQRT_2)).ln()
    } else {
        let x = -z / SQRT_2;
        -x * x - 0.5 * PI.ln() - (2.0 * erfc_cf_denominator(x)).ln()
    }
}

/// The hazard-like ratio N(z|0,1) / Φ(z), stable in the left tail where both
/// numerator and denominator underflow (the ratio grows like -z).
pub fn gauss_over_cdf(z: f64) -> f64 {
    (log_normal_pdf(z) - log_phi(z)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    // log Φ(z) references computed with 60-digit arithmetic.
    #[allow(clippy::approx_constant, clippy::excessive_precision)]
    const LOG_PHI_REFS: &[(f64, f64)] = &[
        (-30.0, -454.3212439563431971074),
        (-25.0, -316.6394080080202589352),
        (-20.0, -203.9171553710972639368),
        (-15.0, -116.1313848457116952359),
        (-10.0, -53.23128515051247057835),
        (-8.0, -35.0134371599145498955),
        (-6.0, -20.73676894997470565497),
        (-4.0, -10.36010148652729082786),
        (-2.0, -3.783184333682031948836),
        (-1.0, -1.841021645009263505771),
        (-0.5, -1.17591176159361860888),
        (0.0, -0.6931471805599453094172),
        (0.5, -0.3689464152886563930656),
        (1.0, -0.1727537790234498895265),
        (2.0, -0.02301290932896348846534),
        (4.0, -0.00003167174337748926386027),
        (6.0, -9.865876455243757316915e-10),
    ];

    #[test]
    fn log_phi_matches_high_precision_references() {
        for &(z, expected) in LOG_PHI_REFS {
            let got = log_phi(z);
            assert_relative_eq!(got, expected, max_relative = 1e-13);
        }
        // Φ(30) is 1 up to ~5e-198; the log is zero at double precision.
        assert!(log_phi(30.0).abs() < 1e-190);
    }

    #[test]
    fn cdf_basics() {
        assert_relative_eq!(normal_cdf(0.0), 0.5, max_relative = 1e-15);
        assert_relative_eq!(normal_cdf(1.0), 0.8413447460685429, max_relative = 1e-14);
        assert_relative_eq!(
            normal_cdf(1.0) + normal_cdf(-1.0),
            1.0,
            max_relative = 1e-14
        );
    }

    #[test]
    fn erfc_reflection() {
        for &x in &[0.1, 0.7, 1.3, 1.9, 2.5, 4.0] {
            assert_relative_eq!(erfc(-x), 2.0 - erfc(x), max_relative = 1e-14);
        }
    }

    #[test]
    fn ratio_tail_behaves_like_negative_z() {
        // N(z)/Φ(z) → -z + 1/|z| - ... as z → -∞.
        for &z in &[-10.0, -20.0, -30.0] {
            let r = gauss_over_cdf(z);
            assert!(r.is_finite());
            assert!(r > -z && r < -z + 2.0 / -z, "ratio {r} at z={z}");
        }
        assert_relative_eq!(
            gauss_over_cdf(0.0),
            2.0 * (1.0 / (2.0 * PI).sqrt()),
            max_relative = 1e-14
        );
    }

    #[test]
    fn log_phi_is_monotone() {
        let mut prev = f64::NEG_INFINITY;
        let mut z = -40.0;
        while z <= 12.0 {
            let v = log_phi(z);
            assert!(v.is_finite());
            assert!(v >= prev);
            prev = v;
            z += 0.25;
        }
    }
}
