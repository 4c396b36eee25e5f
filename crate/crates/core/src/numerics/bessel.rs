//! Bessel functions of the first kind for integer and half-integer orders.
//!
//! The power series is used for `z <= SPLIT` and Hankel's asymptotic expansion
//! beyond it. Both branches hold an absolute error below 1e-10 at the split for
//! orders up to 5/2.

use crate::{Error, Result};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

/// Argument at which evaluation switches from the series to the asymptotic expansion.
pub const SPLIT: f64 = 12.0;

/// Largest supported order.
pub const MAX_ORDER: f64 = 2.5;

fn check_order(nu: f64) -> Result<()> {
    let twice = 2.0 * nu;
    if !nu.is_finite() || nu < 0.0 || (twice - twice.round()).abs() > 1e-12 {
        return Err(Error::Domain(format!("Bessel order {nu} is not a nonnegative integer or half-integer")));
    }
    if nu > MAX_ORDER + 1e-12 {
        return Err(Error::Domain(format!("Bessel order {nu} exceeds the supported maximum {MAX_ORDER}")));
    }
    Ok(())
}

/// Gamma(nu + 1) for integer or half-integer nu.
fn gamma_shifted(nu: f64) -> f64 {
    let twice = (2.0 * nu).round() as i64;
    if twice % 2 == 0 {
        (1..=twice / 2).fold(1.0, |acc, k| acc * k as f64)
    } else {
        // Gamma(1/2) = sqrt(pi), Gamma(x + 1) = x Gamma(x)
        let mut g = PI.sqrt();
        let mut x = 0.5;
        while x < nu + 1.0 - 1e-9 {
            g *= x;
            x += 1.0;
        }
        g
    }
}

fn series(nu: f64, z: f64) -> f64 {
    let h = 0.5 * z;
    let h2 = h * h;
    let mut term = if nu == 0.0 { 1.0 } else { h.powf(nu) } / gamma_shifted(nu);
    let mut sum = term;
    for k in 1..200 {
        let k = k as f64;
        term *= -h2 / (k * (k + nu));
        sum += term;
        if term.abs() <= 1e-17 * sum.abs().max(1e-300) && k > h {
            break;
        }
    }
    sum
}

/// Coefficients a_k(nu) of Hankel's expansion, generated until they stop
/// decreasing in size relative to z^k.
fn hankel_pq(nu: f64, z: f64) -> (f64, f64) {
    let mu = 4.0 * nu * nu;
    let mut p = 1.0;
    let mut q = 0.0;
    let mut a = 1.0;
    let mut last = f64::INFINITY;
    for k in 1..60 {
        let kf = k as f64;
        let odd = 2.0 * kf - 1.0;
        a *= (mu - odd * odd) / (kf * 8.0 * z);
        if a == 0.0 {
            break;
        }
        if a.abs() >= last {
            break;
        }
        last = a.abs();
        let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
        if k % 2 == 1 {
            q += sign * a;
        } else {
            p += sign * a;
        }
        if a.abs() < 1e-17 {
            break;
        }
    }
    (p, q)
}

fn phase(nu: f64, z: f64) -> f64 {
    z - (0.5 * nu + 0.25) * PI
}

/// J_nu(z) for z >= 0 and nu in {0, 1/2, 1, ..., 5/2}.
pub fn bessel_j(nu: f64, z: f64) -> Result<f64> {
    check_order(nu)?;
    if !z.is_finite() || z < 0.0 {
        return Err(Error::Domain(format!("Bessel argument {z} must be finite and >= 0")));
    }
    Ok(bessel_j_unchecked(nu, z))
}

pub(crate) fn bessel_j_unchecked(nu: f64, z: f64) -> f64 {
    if z == 0.0 {
        return if nu == 0.0 { 1.0 } else { 0.0 };
    }
    if z <= SPLIT {
        series(nu, z)
    } else {
        let (p, q) = hankel_pq(nu, z);
        let chi = phase(nu, z);
        (2.0 / (PI * z)).sqrt() * (p * chi.cos() - q * chi.sin())
    }
}

/// Leading asymptotic term sqrt(2 / (pi z)) cos(z - nu pi / 2 - pi / 4).
pub fn bessel_j_leading(nu: f64, z: f64) -> Result<f64> {
    check_order(nu)?;
    if !z.is_finite() || z <= 0.0 {
        return Err(Error::Domain(format!("argument {z} must be finite and > 0")));
    }
    Ok((2.0 / (PI * z)).sqrt() * (z - nu * FRAC_PI_2 - FRAC_PI_4).cos())
}

/// Constant M with |J_nu(z) - leading(z)| <= M z^{-3/2} for all z >= z_min.
///
/// Sums the magnitudes of the correction terms of Hankel's expansion at
/// `z_min`; for half-integer orders the expansion terminates and the bound is
/// exact in form.
pub fn asymptotic_remainder_bound(nu: f64, z_min: f64) -> Result<f64> {
    check_order(nu)?;
    if !(z_min >= 1.0) {
        return Err(Error::Domain(format!("z_min {z_min} must be >= 1")));
    }
    let mu = 4.0 * nu * nu;
    let mut a = 1.0;
    let mut total = 0.0;
    for k in 1..40 {
        let kf = k as f64;
        let odd = 2.0 * kf - 1.0;
        a *= (mu - odd * odd) / (kf * 8.0);
        let term = a.abs() / z_min.powi(k - 1);
        if term == 0.0 {
            break;
        }
        total += term;
        if term < 1e-12 {
            break;
        }
    }
    // margin for the truncated tail
    Ok((2.0 / PI).sqrt() * total * 1.05)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// J_n(z) = (1/2pi) * integral over a full period of cos(n t - z sin t),
    /// evaluated with the periodic trapezoid rule.
    fn integer_order_oracle(n: u32, z: f64) -> f64 {
        let m = (2.0 * z) as usize + 200;
        let h = 2.0 * PI / m as f64;
        (0..m)
            .map(|i| {
                let t = i as f64 * h;
                (n as f64 * t - z * t.sin()).cos()
            })
            .sum::<f64>()
            / m as f64
    }

    fn half_order_oracle(nu: f64, z: f64) -> f64 {
        let c = (2.0 / (PI * z)).sqrt();
        let (s, co) = z.sin_cos();
        match (2.0 * nu) as u32 {
            1 => c * s,
            3 => c * (s / z - co),
            5 => c * ((3.0 / (z * z) - 1.0) * s - 3.0 * co / z),
            _ => unreachable!(),
        }
    }

    #[test]
    fn integer_orders_match_integral_representation() {
        for n in 0..=2u32 {
            for &z in &[0.01, 0.5, 1.0, 2.5, 7.0, 11.9, 12.0, 12.1, 20.0, 55.5, 300.0, 1000.0] {
                let got = bessel_j(n as f64, z).unwrap();
                let want = integer_order_oracle(n, z);
                assert!((got - want).abs() < 1e-10, "J_{n}({z}) = {got}, oracle {want}");
            }
        }
    }

    #[test]
    fn half_orders_match_closed_forms() {
        for &nu in &[0.5, 1.5, 2.5] {
            for &z in &[0.2, 1.0, 3.3, 11.99, 12.0, 12.01, 40.0, 999.0] {
                let got = bessel_j(nu, z).unwrap();
                let want = half_order_oracle(nu, z);
                assert!((got - want).abs() < 1e-10, "J_{nu}({z}) = {got}, oracle {want}");
            }
        }
    }

    #[test]
    fn both_branches_agree_at_split() {
        for &nu in &[0.0, 0.5, 1.0, 1.5, 2.0, 2.5] {
            let s = series(nu, SPLIT);
            let (p, q) = hankel_pq(nu, SPLIT);
            let chi = phase(nu, SPLIT);
            let a = (2.0 / (PI * SPLIT)).sqrt() * (p * chi.cos() - q * chi.sin());
            assert!((s - a).abs() < 1e-10, "nu={nu}: series {s} asymptotic {a}");
        }
    }

    #[test]
    fn known_values() {
        assert!((bessel_j(0.0, 0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((bessel_j(1.0, 2.0).unwrap() - 0.576_724_807_756_873_4).abs() < 1e-12);
        assert_eq!(bessel_j(2.5, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_orders_and_arguments() {
        assert!(matches!(bessel_j(-0.5, 1.0), Err(Error::Domain(_))));
        assert!(matches!(bessel_j(0.3, 1.0), Err(Error::Domain(_))));
        assert!(matches!(bessel_j(3.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(bessel_j(1.0, -1.0), Err(Error::Domain(_))));
        assert!(matches!(bessel_j(1.0, f64::NAN), Err(Error::Domain(_))));
    }

    #[test]
    fn remainder_bound_holds() {
        let m = asymptotic_remainder_bound(1.0, 10.0).unwrap();
        let z: f64 = 50.0;
        let diff = (bessel_j(1.0, z).unwrap() - bessel_j_leading(1.0, z).unwrap()).abs();
        assert!(diff <= m / z.powf(1.5));
        let m32 = asymptotic_remainder_bound(1.5, 10.0).unwrap();
        assert!(m32 <= 1.0, "M(3/2) = {m32}");
    }
}
