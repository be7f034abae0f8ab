//! Closed-form optical depth of a ray through a Gaussian mixture and the
//! opacity→absorption calibration.
//!
//! A ray o + t·d through a Gaussian with precision A gives the quadratic
//! exponent ½(a t² + 2b t + c); the segment integral has an erf primitive.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::splat::Covariance3;

/// Per-Gaussian quadratic along a ray: a = dᵀAd, b = dᵀA(o−μ), c = (o−μ)ᵀA(o−μ).
#[derive(Clone, Copy, Debug)]
pub struct RayQuadratic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AbsorptionKind {
    Simple,
    TraceAvg,
    Mass,
    Diag,
}

#[derive(Clone, Copy, Debug)]
pub struct AbsorptionMode {
    pub kind: AbsorptionKind,
    /// Global strength knob, > 0.
    pub kappa: f64,
}

impl Default for AbsorptionMode {
    fn default() -> Self {
        AbsorptionMode {
            kind: AbsorptionKind::TraceAvg,
            kappa: 1.0,
        }
    }
}

pub fn ray_quadratic(
    precision: &Matrix3<f64>,
    mean: &Vector3<f64>,
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
) -> RayQuadratic {
    let delta = origin - mean;
    let ad = precision * dir;
    let adelta = precision * delta;
    RayQuadratic {
        a: dir.dot(&ad),
        b: dir.dot(&adelta),
        c: delta.dot(&adelta),
    }
}

/// Optical depth β·∫_{t0}^{t1} exp(−½(a s² + 2b s + c)) ds in closed form.
pub fn segment_depth(q: &RayQuadratic, beta: f64, t0: f64, t1: f64) -> Result<f64> {
    if q.a <= 0.0 {
        return Err(Error::Numerical(format!(
            "ray quadratic requires a > 0, got {}",
            q.a
        )));
    }
    if beta == 0.0 {
        return Ok(0.0);
    }
    // completed square: exponent −½(c − b²/a) times erf difference
    let residual = q.c - q.b * q.b / q.a;
    let exponent = -0.5 * residual;
    if exponent < -60.0 {
        return Ok(0.0);
    }
    let s = (q.a / 2.0).sqrt();
    let u0 = s * (t0 + q.b / q.a);
    let u1 = s * (t1 + q.b / q.a);
    // both erf arguments large with equal sign: difference below f64 precision
    if u0.abs() > 6.0 && u1.abs() > 6.0 && u0.signum() == u1.signum() {
        return Ok(0.0);
    }
    let erf_diff = libm::erf(u1) - libm::erf(u0);
    let depth = beta * (std::f64::consts::PI / (2.0 * q.a)).sqrt() * exponent.exp() * erf_diff;
    Ok(depth.max(0.0))
}

/// Σ_i segment_depth over the mixture, from the ray origin to distance t.
pub fn mixture_depth(
    gaussians: &[(Covariance3, Vector3<f64>, f64)],
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    t: f64,
) -> Result<f64> {
    let mut tau = 0.0;
    for (cov, mean, beta) in gaussians {
        let q = ray_quadratic(&cov.precision, mean, origin, dir);
        tau += segment_depth(&q, *beta, 0.0, t)?;
    }
    Ok(tau)
}

pub fn transmittance(tau: f64) -> f64 {
    (-tau).exp()
}

/// Per-splat absorption amplitude β from opacity and covariance.
pub fn opacity_to_absorption(alpha: f64, cov: &Covariance3, mode: &AbsorptionMode) -> Result<f64> {
    if !(0.0..1.0).contains(&alpha) || alpha == 0.0 {
        return Err(Error::Domain(format!("opacity {alpha} outside (0,1)")));
    }
    let tau_star = -(1.0 - alpha).ln();
    let two_pi = 2.0 * std::f64::consts::PI;
    let beta = match mode.kind {
        AbsorptionKind::Simple => tau_star,
        AbsorptionKind::TraceAvg => {
            let tr_a = cov.precision.trace();
            tau_star * (tr_a / 3.0).sqrt() / two_pi.sqrt()
        }
        // unit-mass reading: β·∫Gaussian dV = τ*, so the normalizer uses √(det Σ)
        AbsorptionKind::Mass => tau_star / (two_pi.powf(1.5) * cov.sqrt_det),
        AbsorptionKind::Diag => {
            let s = cov.eigenvalues;
            tau_star / (two_pi.powf(1.5) * (s.x * s.y * s.z).sqrt())
        }
    };
    Ok(mode.kappa * beta)
}
