//! Reference implementations used by the self-check command and by tests:
//! adaptive quadrature of ray integrals and sphere sampling helpers. These
//! share no code with the closed-form paths they validate.

use nalgebra::Vector3;

use crate::splat::Covariance3;
use crate::transmittance::RayQuadratic;

/// Adaptive Simpson integration of f over [a,b].
pub fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(a, fa, m, fm, flm);
        let right = simpson(m, fm, b, fb, frm);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            left + right + (left + right - whole) / 15.0
        } else {
            recurse(f, a, fa, m, fm, flm, left, tol / 2.0, depth - 1)
                + recurse(f, m, fm, b, fb, frm, right, tol / 2.0, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, fa, b, fb, fm);
    recurse(&f, a, fa, b, fb, fm, whole, tol, 48)
}

/// Quadrature of β·∫ exp(−½(a s² + 2bs + c)) ds over [t0,t1], split at the
/// exponent minimum so the integrand peak is resolved.
pub fn quadrature_segment_depth(q: &RayQuadratic, beta: f64, t0: f64, t1: f64) -> f64 {
    let f = |s: f64| (-0.5 * (q.a * s * s + 2.0 * q.b * s + q.c)).exp();
    let peak = (-q.b / q.a).clamp(t0, t1);
    let tol = 1e-12;
    beta * (adaptive_simpson(&f, t0, f64::min(peak, t1), tol)
        + adaptive_simpson(&f, f64::min(peak, t1), t1, tol))
}

/// Quadrature of the full mixture absorption field along a ray.
pub fn quadrature_mixture_depth(
    gaussians: &[(Covariance3, Vector3<f64>, f64)],
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    t: f64,
) -> f64 {
    gaussians
        .iter()
        .map(|(cov, mean, beta)| {
            let delta = origin - mean;
            let ad = cov.precision * dir;
            let adelta = cov.precision * delta;
            let q = RayQuadratic {
                a: dir.dot(&ad),
                b: dir.dot(&adelta),
                c: delta.dot(&adelta),
            };
            quadrature_segment_depth(&q, *beta, 0.0, t)
        })
        .sum()
}

/// Deterministic, roughly uniform unit directions (golden-spiral lattice).
pub fn fibonacci_sphere(n: usize, seed: u64) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    let offset = (seed as f64 * 0.618_033_988_749) % 1.0;
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64 + offset * 2.0 * std::f64::consts::PI;
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Lat-long quadrature grid over the sphere: (direction, solid-angle weight),
/// with Σw = 4π exactly in the limit.
pub fn sphere_quadrature_grid(n_theta: usize, n_phi: usize) -> Vec<(Vector3<f64>, f64)> {
    let mut out = Vec::with_capacity(n_theta * n_phi);
    let dtheta = std::f64::consts::PI / n_theta as f64;
    let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
    for i in 0..n_theta {
        let theta = (i as f64 + 0.5) * dtheta;
        // exact band solid angle so the weights telescope to 4π
        let w = ((i as f64 * dtheta).cos() - ((i + 1) as f64 * dtheta).cos()) * dphi;
        for j in 0..n_phi {
            let phi = (j as f64 + 0.5) * dphi;
            out.push((
                Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()),
                w,
            ));
        }
    }
    out
}
