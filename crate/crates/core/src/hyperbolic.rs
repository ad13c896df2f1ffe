//! The semi-metric `γ(g, h) = |g − h|² / (Im g · Im h)` on the upper half
//! plane and the scalar constants of the perturbation and Jensen estimates.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// A point of the open upper half plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperbolicPoint(Complex64);

impl HyperbolicPoint {
    pub fn new(value: Complex64) -> Result<Self> {
        if value.im > 0.0 && value.re.is_finite() && value.im.is_finite() {
            Ok(Self(value))
        } else {
            Err(Error::InvalidZ(value.im))
        }
    }

    pub fn value(self) -> Complex64 {
        self.0
    }
}

/// `γ(g, h)`. Symmetric, zero iff `g = h`; not a metric.
pub fn gamma(g: Complex64, h: Complex64) -> f64 {
    (g - h).norm_sqr() / (g.im * h.im)
}

/// Hyperbolic distance `cosh⁻¹(γ/2 + 1)`.
pub fn hyperbolic_distance(g: Complex64, h: Complex64) -> f64 {
    (0.5 * gamma(g, h) + 1.0).acosh()
}

/// Constant `c₀` such that `γ((1+λa)g + λb, h) ≤ (1+c₀)γ(g,h) + c₀` for all
/// `g` in the upper half plane.
pub fn c0_bound(lambda: f64, a: f64, b: f64, h: Complex64) -> f64 {
    let growth = 1.0 + 2.0 * lambda * (2.0 * a.abs() * h.norm() + b.abs()) / h.im;
    -1.0 + (1.0 + lambda * a.abs()) * growth * growth
}

/// Like [`c0_bound`] with the prefactor `1 + λ|a|` replaced by
/// `1 / (1 − λ|a|)`, which also covers `1 + λa` close to zero.
pub fn c0_bound_inverse_scale(lambda: f64, a: f64, b: f64, h: Complex64) -> f64 {
    let growth = 1.0 + 2.0 * lambda * (2.0 * a.abs() * h.norm() + b.abs()) / h.im;
    -1.0 + growth * growth / (1.0 - lambda * a.abs())
}

/// Jensen gap `δ_p(λ, s/r)` with
/// `(λr + (1−λ)s)^p ≤ (1 − δ_p)(λr^p + (1−λ)s^p)` for `r > s ≥ 0`.
pub fn jensen_delta(p: f64, lam: f64, ratio: f64) -> f64 {
    if p <= 1.0 || lam <= 0.0 || lam >= 1.0 {
        return 0.0;
    }
    let spread = (1.0 - ratio) * (1.0 - ratio);
    let shape = if p < 2.0 {
        p * (p - 1.0) * lam * (1.0 - lam) / 2.0
    } else {
        lam * (1.0 - lam.powf(p - 1.0))
    };
    spread * shape
}

/// Smallest imaginary part among the samples.
pub fn eps1<I>(samples: I) -> Result<f64>
where
    I: IntoIterator<Item = Complex64>,
{
    let mut min = f64::INFINITY;
    let mut any = false;
    for s in samples {
        if s.im <= 0.0 || s.im.is_nan() {
            return Err(Error::Degenerate(format!(
                "sample {s} has nonpositive imaginary part"
            )));
        }
        min = min.min(s.im);
        any = true;
    }
    if !any {
        return Err(Error::Degenerate("no samples".into()));
    }
    Ok(min)
}

/// `s² / ((ε₁ − s) ε₁)`, the inverse of the ball radius function.
pub fn eta1_inverse(s: f64, eps1: f64) -> Result<f64> {
    if !(0.0..eps1).contains(&s) {
        return Err(Error::OutOfRange {
            value: s,
            bound: eps1,
        });
    }
    Ok(s * s / ((eps1 - s) * eps1))
}

/// The Möbius step `ζ ↦ −1/(z + ζ)`, a γ-contraction for `z` in the closed
/// upper half plane.
pub fn mobius_step(z: Complex64, zeta: Complex64) -> Complex64 {
    -1.0 / (z + zeta)
}
