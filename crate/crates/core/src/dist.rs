//! Distribution functions needed by the fitting code.
//!
//! Everything here is built on `libm` so the crate stays `no_std`.

use core::f64::consts::FRAC_1_SQRT_2;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn normal_pdf(x: f64) -> f64 {
    libm::exp(-0.5 * x * x - LN_SQRT_2PI)
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// `ln Φ(x)`, accurate far into the lower tail.
pub fn ln_normal_cdf(x: f64) -> f64 {
    if x > -30.0 {
        libm::log(normal_cdf(x))
    } else {
        // Asymptotic expansion of the lower tail.
        let z2 = x * x;
        -0.5 * z2 - LN_SQRT_2PI - libm::log(-x) + libm::log1p(-1.0 / z2 + 3.0 / (z2 * z2))
    }
}

/// Inverse Mills ratio `φ(x) / Φ(x)`.
pub fn mills_ratio(x: f64) -> f64 {
    if x > -30.0 {
        normal_pdf(x) / normal_cdf(x)
    } else {
        let z2 = x * x;
        -x / (1.0 - 1.0 / z2 + 3.0 / (z2 * z2))
    }
}

/// Upper-tail probability `P(T > t)` for Student-t with `dof` degrees of freedom.
pub fn student_t_sf(t: f64, dof: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return if t > 0.0 { 0.0 } else { 1.0 };
    }
    let x = dof / (dof + t * t);
    let tail = 0.5 * regularized_incomplete_beta(0.5 * dof, 0.5, x);
    if t > 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

/// Regularized incomplete beta `I_x(a, b)` via Lentz's continued fraction.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b)
        + a * libm::log(x)
        + b * libm::log1p(-x);
    let front = libm::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
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
    for m in 1..=500 {
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

pub fn gamma(x: f64) -> f64 {
    libm::tgamma(x)
}

/// Logistic function, computed without overflow for large `|x|`.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        libm::exp(x)
    } else {
        libm::log1p(libm::exp(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

    #[test]
    fn student_t_matches_statrs() {
        for &dof in &[1.0, 2.0, 3.0, 7.5, 18.0, 58.0, 400.0] {
            let reference = StudentsT::new(0.0, 1.0, dof).unwrap();
            for i in -40..=40 {
                let t = i as f64 * 0.25;
                let got = student_t_sf(t, dof);
                let want = 1.0 - reference.cdf(t);
                assert!((got - want).abs() < 1e-12, "dof={dof} t={t}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn normal_cdf_matches_statrs() {
        let n = Normal::new(0.0, 1.0).unwrap();
        for i in -80..=80 {
            let x = i as f64 * 0.1;
            let (a, b) = (normal_cdf(x), n.cdf(x));
            assert!((a - b).abs() <= 1e-9 * b, "{x}: {a} vs {b}");
        }
    }

    #[test]
    fn normal_cdf_deep_tail_reference_values() {
        // scipy.stats.norm.cdf
        assert!((normal_cdf(-8.0) / 6.22096057427174e-16 - 1.0).abs() < 1e-12);
        assert!((normal_cdf(-3.0) / 0.0013498980316300933 - 1.0).abs() < 1e-13);
    }

    #[test]
    fn tail_helpers_are_continuous_at_switch() {
        let a = ln_normal_cdf(-29.999_999);
        let b = ln_normal_cdf(-30.000_001);
        assert!((a - b).abs() < 1e-4, "{a} {b}");
        let a = mills_ratio(-29.999_999);
        let b = mills_ratio(-30.000_001);
        assert!((a - b).abs() < 1e-4, "{a} {b}");
    }

    #[test]
    fn student_sf_symmetry() {
        for &t in &[0.3, 1.7, 4.2] {
            let s = student_t_sf(t, 9.0) + student_t_sf(-t, 9.0);
            assert!((s - 1.0).abs() < 1e-14);
        }
        assert_eq!(student_t_sf(0.0, 5.0), 0.5);
    }
}
