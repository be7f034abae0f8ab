//! Real spherical-harmonic basis up to degree 3, in the cartesian form and
//! sign convention used by stock 3DGS splat files. The basis is orthonormal
//! (∫ Y_k Y_l dΩ = δ_kl); signs follow the splatting convention so that
//! third-party splat files evaluate identically.

use nalgebra::Vector3;

pub const MAX_DEGREE: usize = 3;
pub const MAX_COEFFS: usize = 16;

const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Number of coefficients per channel for a given degree.
pub fn coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Evaluates the basis at a unit direction, writing `coeff_count(degree)`
/// values into `out`.
pub fn basis_into(dir: &Vector3<f64>, degree: usize, out: &mut [f64]) {
    debug_assert!(degree <= MAX_DEGREE);
    debug_assert!(out.len() >= coeff_count(degree));
    let (x, y, z) = (dir.x, dir.y, dir.z);
    out[0] = C0;
    if degree == 0 {
        return;
    }
    out[1] = -C1 * y;
    out[2] = C1 * z;
    out[3] = -C1 * x;
    if degree == 1 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    out[4] = C2[0] * xy;
    out[5] = C2[1] * yz;
    out[6] = C2[2] * (2.0 * zz - xx - yy);
    out[7] = C2[3] * xz;
    out[8] = C2[4] * (xx - yy);
    if degree == 2 {
        return;
    }
    out[9] = C3[0] * y * (3.0 * xx - yy);
    out[10] = C3[1] * xy * z;
    out[11] = C3[2] * y * (4.0 * zz - xx - yy);
    out[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    out[13] = C3[4] * x * (4.0 * zz - xx - yy);
    out[14] = C3[5] * z * (xx - yy);
    out[15] = C3[6] * x * (xx - 3.0 * yy);
}

pub fn basis(dir: &Vector3<f64>, degree: usize) -> Vec<f64> {
    let mut out = vec![0.0; coeff_count(degree)];
    basis_into(dir, degree, &mut out);
    out
}

/// Band-0 constant 1/(2√π).
pub fn y00() -> f64 {
    C0
}
