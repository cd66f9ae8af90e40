//! Complex-plane primitives for the two-center problem.
//!
//! The primaries sit at `-1` (mass `1 - mu`) and `+1` (mass `mu`). The
//! Birkhoff map `B(z) = (z + 1/z) / 2` is a double cover of the plane
//! branched over both primaries; the conformal weight `w` is the density
//! that converts the regularized loop parameter into physical time.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// A point of the (physical or regularized) plane.
pub type ComplexPoint = Complex64;

/// Default clearance for winding-number evaluation.
pub const WINDING_CLEARANCE: f64 = 1e-8;

pub const MINUS_ONE: ComplexPoint = Complex64::new(-1.0, 0.0);
pub const PLUS_ONE: ComplexPoint = Complex64::new(1.0, 0.0);

fn check_nonzero(z: ComplexPoint, what: &str) -> Result<()> {
    if !z.re.is_finite() || !z.im.is_finite() {
        return domain(format!("{what}: non-finite input {z}"));
    }
    if z.re == 0.0 && z.im == 0.0 {
        return domain(format!("{what} undefined at origin"));
    }
    Ok(())
}

/// `B(z) = (z + 1/z) / 2`.
pub fn birkhoff_map(z: ComplexPoint) -> Result<ComplexPoint> {
    check_nonzero(z, "Birkhoff map")?;
    Ok(birkhoff_unchecked(z))
}

/// `B'(z) = (1 - 1/z²) / 2`, vanishing exactly at the branch points ±1.
pub fn birkhoff_derivative(z: ComplexPoint) -> Result<ComplexPoint> {
    check_nonzero(z, "Birkhoff derivative")?;
    Ok(birkhoff_derivative_unchecked(z))
}

/// `w(z) = |z - 1|² |z + 1|² / (4 |z|²)`.
pub fn conformal_weight(z: ComplexPoint) -> Result<f64> {
    check_nonzero(z, "conformal weight")?;
    Ok(weight_unchecked(z))
}

/// The deck involution `z ↦ 1/z` of the Birkhoff cover.
pub fn involution(z: ComplexPoint) -> Result<ComplexPoint> {
    check_nonzero(z, "involution")?;
    Ok(z.inv())
}

#[inline]
pub(crate) fn birkhoff_unchecked(z: ComplexPoint) -> ComplexPoint {
    0.5 * (z + z.inv())
}

#[inline]
pub(crate) fn birkhoff_derivative_unchecked(z: ComplexPoint) -> ComplexPoint {
    let zi = z.inv();
    0.5 * (1.0 - zi * zi)
}

#[inline]
pub(crate) fn weight_unchecked(z: ComplexPoint) -> f64 {
    (z - 1.0).norm_sqr() * (z + 1.0).norm_sqr() / (4.0 * z.norm_sqr())
}

/// Real gradient of `w`, packed as `∂w/∂x + i ∂w/∂y`:
/// `z (z² - 1)(z̄² + 1) / (2 |z|⁴)`.
#[inline]
pub(crate) fn weight_gradient(z: ComplexPoint) -> ComplexPoint {
    let r2 = z.norm_sqr();
    let zb = z.conj();
    z * (z * z - 1.0) * (zb * zb + 1.0) / (2.0 * r2 * r2)
}

/// Winding numbers of a closed curve about the two primaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindingReport {
    #[serde(rename = "minus")]
    pub around_minus_one: i64,
    #[serde(rename = "plus")]
    pub around_plus_one: i64,
    pub total: i64,
}

impl WindingReport {
    pub fn new(around_minus_one: i64, around_plus_one: i64) -> Self {
        Self {
            around_minus_one,
            around_plus_one,
            total: around_minus_one + around_plus_one,
        }
    }

    /// Winding of a closed polyline about both primaries.
    pub fn of(points: &[ComplexPoint]) -> Result<Self> {
        Ok(Self::new(
            winding(points, MINUS_ONE)?,
            winding(points, PLUS_ONE)?,
        ))
    }

    pub fn is_odd(&self) -> bool {
        self.total.rem_euclid(2) == 1
    }
}

/// Winding number of a closed polyline (last sample joins the first) about
/// `center`, using the default clearance.
pub fn winding(points: &[ComplexPoint], center: ComplexPoint) -> Result<i64> {
    winding_with_clearance(points, center, WINDING_CLEARANCE)
}

/// Sums principal-branch angle increments. Every consecutive increment must
/// be strictly below π in magnitude, otherwise the curve is considered
/// undersampled.
pub fn winding_with_clearance(
    points: &[ComplexPoint],
    center: ComplexPoint,
    clearance: f64,
) -> Result<i64> {
    if points.is_empty() {
        return Err(Error::InvalidLoop("empty loop".into()));
    }
    if let Some(p) = points
        .iter()
        .find(|p| !p.re.is_finite() || !p.im.is_finite())
    {
        return domain(format!("winding: non-finite sample {p}"));
    }
    if points.iter().any(|p| (p - center).norm() <= clearance) {
        return Err(Error::WindingTouchesCenter);
    }
    let n = points.len();
    let mut total = 0.0;
    for j in 0..n {
        let a = points[j] - center;
        let b = points[(j + 1) % n] - center;
        let increment = (b / a).arg();
        if increment.abs() >= PI {
            return Err(Error::UndersampledLoop {
                index: j,
                increment,
            });
        }
        total += increment;
    }
    Ok((total / (2.0 * PI)).round() as i64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> ComplexPoint {
        Complex64::new(re, im)
    }

    fn circle(center: ComplexPoint, r: f64, n: usize) -> Vec<ComplexPoint> {
        (0..n)
            .map(|j| center + r * Complex64::cis(2.0 * PI * j as f64 / n as f64))
            .collect()
    }

    #[test]
    fn birkhoff_examples() {
        assert_eq!(birkhoff_map(c(1.0, 0.0)).unwrap(), c(1.0, 0.0));
        assert!(birkhoff_map(c(0.0, 1.0)).unwrap().norm() < 1e-16);
        assert_eq!(birkhoff_map(c(2.0, 0.0)).unwrap(), c(1.25, 0.0));
        let err = birkhoff_map(c(0.0, 0.0)).unwrap_err();
        assert_eq!(err.to_string(), "Birkhoff map undefined at origin");
    }

    #[test]
    fn derivative_examples() {
        assert_eq!(birkhoff_derivative(c(1.0, 0.0)).unwrap(), c(0.0, 0.0));
        assert_eq!(birkhoff_derivative(c(-1.0, 0.0)).unwrap(), c(0.0, 0.0));
        assert!((birkhoff_derivative(c(0.0, 1.0)).unwrap() - 1.0).norm() < 1e-16);
        assert_eq!(birkhoff_derivative(c(2.0, 0.0)).unwrap(), c(0.375, 0.0));
        assert!(birkhoff_derivative(c(0.0, 0.0)).is_err());
    }

    #[test]
    fn weight_examples() {
        assert_eq!(conformal_weight(c(1.0, 0.0)).unwrap(), 0.0);
        assert_eq!(conformal_weight(c(-1.0, 0.0)).unwrap(), 0.0);
        assert!((conformal_weight(c(0.0, 1.0)).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(conformal_weight(c(2.0, 0.0)).unwrap(), 0.5625);
        assert!(conformal_weight(c(0.0, 0.0)).is_err());
        assert!(conformal_weight(c(f64::NAN, 0.0)).is_err());
    }

    #[test]
    fn involution_examples() {
        assert_eq!(involution(c(2.0, 0.0)).unwrap(), c(0.5, 0.0));
        assert!((involution(c(0.0, 1.0)).unwrap() - c(0.0, -1.0)).norm() < 1e-16);
        let theta = 0.7;
        let u = Complex64::cis(theta);
        assert!((involution(u).unwrap() - u.conj()).norm() < 1e-15);
        assert!(involution(c(0.0, 0.0)).is_err());
    }

    #[test]
    fn weight_gradient_matches_central_differences() {
        for &z in &[c(0.3, 0.8), c(-1.7, 0.2), c(2.0, -1.0), c(0.05, -0.4)] {
            let h = 1e-6;
            let gx = (weight_unchecked(z + h) - weight_unchecked(z - h)) / (2.0 * h);
            let gy = (weight_unchecked(z + c(0.0, h)) - weight_unchecked(z - c(0.0, h)))
                / (2.0 * h);
            let g = weight_gradient(z);
            assert!((g - c(gx, gy)).norm() < 1e-6 * (1.0 + g.norm()), "{z}");
        }
    }

    #[test]
    fn winding_examples() {
        assert_eq!(winding(&circle(c(0.0, 0.0), 1.0, 64), c(0.0, 0.0)).unwrap(), 1);
        let big = circle(c(0.0, 0.0), 2.0, 64);
        let report = WindingReport::of(&big).unwrap();
        assert_eq!(report, WindingReport::new(1, 1));
        assert_eq!(report.total, 2);
    }

    #[test]
    fn birkhoff_image_of_small_loop_winds_twice() {
        let small = circle(PLUS_ONE, 0.1, 256);
        let image: Vec<_> = small.iter().map(|&z| birkhoff_unchecked(z)).collect();
        assert_eq!(winding(&image, PLUS_ONE).unwrap(), 2);
        assert_eq!(winding(&image, MINUS_ONE).unwrap(), 0);
    }

    #[test]
    fn winding_errors() {
        let touching = circle(c(0.0, 0.0), 1.0, 64);
        assert!(matches!(
            winding(&touching, PLUS_ONE),
            Err(Error::WindingTouchesCenter)
        ));
        let coarse = vec![c(1.0, 0.0), c(-1.0, 0.0), c(0.0, -1.0)];
        assert!(matches!(
            winding(&coarse, c(0.0, 0.0)),
            Err(Error::UndersampledLoop { .. })
        ));
    }

    fn nonzero() -> impl Strategy<Value = ComplexPoint> {
        (-5.0f64..5.0, -5.0f64..5.0)
            .prop_filter("away from origin", |(x, y)| x.hypot(*y) > 1e-3)
            .prop_map(|(x, y)| c(x, y))
    }

    proptest! {
        #[test]
        fn inversion_invariance(z in nonzero()) {
            let zi = involution(z).unwrap();
            let w = conformal_weight(z).unwrap();
            let wi = conformal_weight(zi).unwrap();
            prop_assert!((w - wi).abs() <= 8.0 * f64::EPSILON * w.max(1.0));
            let b = birkhoff_map(z).unwrap();
            let bi = birkhoff_map(zi).unwrap();
            prop_assert!((b - bi).norm() <= 8.0 * f64::EPSILON * b.norm().max(1.0));
        }

        #[test]
        fn derivative_norm_identity(z in nonzero()) {
            let w = conformal_weight(z).unwrap();
            prop_assume!(w > 1e-6);
            let d = birkhoff_derivative(z).unwrap();
            let ratio = d.norm_sqr() * z.norm_sqr() / w;
            prop_assert!((ratio - 1.0).abs() < 1e-12);
        }

        #[test]
        fn winding_reverses_and_adds(
            cx in -0.5f64..0.5, cy in -0.5f64..0.5, r in 0.8f64..2.0, n in 8usize..64,
            turns in 1usize..3
        ) {
            let center = c(cx, cy);
            let base = circle(center, r, n);
            let origin = c(0.0, 0.0);
            let w = winding(&base, origin).unwrap();
            prop_assert_eq!(w, 1);
            let reversed: Vec<_> = base.iter().rev().cloned().collect();
            prop_assert_eq!(winding(&reversed, origin).unwrap(), -w);
            // concatenating loops based at the same point adds windings
            let mut concat = Vec::new();
            for _ in 0..turns {
                concat.extend_from_slice(&base);
            }
            prop_assert_eq!(winding(&concat, origin).unwrap(), turns as i64 * w);
            let rotated: Vec<_> = base.iter().cycle().skip(n / 3).take(n).cloned().collect();
            prop_assert_eq!(winding(&rotated, origin).unwrap(), w);
        }
    }
}
