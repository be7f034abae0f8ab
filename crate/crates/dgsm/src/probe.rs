//! Environment probe at the avatar: render the surrounding radiance into a
//! cubemap, fit a low-order spherical-harmonic expansion, and derive
//! per-splat relighting scales against pseudo-normals.

use nalgebra::{DMatrix, DVector, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::build::cube_dir;
use crate::error::{Error, Result};
use crate::oracle::sphere_quadrature_grid;
use crate::sample::scale_splat_color;
use crate::sh::{basis_into, coeff_count, MAX_COEFFS};
use crate::splat::{eval_sh_color, GaussianSplat, SplatGroup, SplatScene};

/// Radiance cubemap rendered from a probe position.
#[derive(Clone, Debug)]
pub struct ProbeCube {
    pub res: usize,
    pub center: Vector3<f64>,
    /// 6×res×res RGB pixels, face-major row-major.
    pub data: Vec<[f64; 3]>,
}

impl ProbeCube {
    pub fn dir_of(&self, face: usize, row: usize, col: usize) -> Vector3<f64> {
        let s = (col as f64 + 0.5) * 2.0 / self.res as f64 - 1.0;
        let t = (row as f64 + 0.5) * 2.0 / self.res as f64 - 1.0;
        cube_dir(face, s, t)
    }

    /// Solid angle subtended by a pixel at face coordinates (s,t).
    pub fn solid_angle(&self, row: usize, col: usize) -> f64 {
        let s = (col as f64 + 0.5) * 2.0 / self.res as f64 - 1.0;
        let t = (row as f64 + 0.5) * 2.0 / self.res as f64 - 1.0;
        let w = 2.0 / self.res as f64;
        w * w * (1.0 + s * s + t * t).powf(-1.5)
    }

    /// Fills a cubemap by evaluating an analytic radiance function at every
    /// pixel direction.
    pub fn analytic(res: usize, f: impl Fn(&Vector3<f64>) -> [f64; 3]) -> ProbeCube {
        let mut cube = ProbeCube {
            res,
            center: Vector3::zeros(),
            data: vec![[0.0; 3]; 6 * res * res],
        };
        for face in 0..6 {
            for row in 0..res {
                for col in 0..res {
                    let dir = cube.dir_of(face, row, col);
                    cube.data[(face * res + row) * res + col] = f(&dir);
                }
            }
        }
        cube
    }
}

const PEAK_ALPHA_CUTOFF: f64 = 1e-4;
const OPACITY_EARLY_EXIT: f64 = 0.999;

/// Renders the radiance field around `center` into a cubemap, compositing
/// splats front-to-back at their peak response along each ray. Splats in
/// `excluded` groups (the avatar itself) do not contribute; missed rays are
/// black.
pub fn render_cubemap(
    scene: &SplatScene,
    center: &Vector3<f64>,
    res: usize,
    excluded: &[SplatGroup],
) -> ProbeCube {
    struct Prep {
        mean: Vector3<f64>,
        precision: nalgebra::Matrix3<f64>,
        opacity: f64,
        index: usize,
    }
    let prepared: Vec<Prep> = scene
        .splats
        .iter()
        .enumerate()
        .filter(|(i, _)| !excluded.contains(&scene.groups[*i]))
        .map(|(i, s)| Prep {
            mean: s.mean,
            precision: s.covariance().precision,
            opacity: s.opacity,
            index: i,
        })
        .collect();

    let data: Vec<[f64; 3]> = (0..6 * res * res)
        .into_par_iter()
        .map(|pix| {
            let face = pix / (res * res);
            let row = (pix / res) % res;
            let col = pix % res;
            let s = (col as f64 + 0.5) * 2.0 / res as f64 - 1.0;
            let t = (row as f64 + 0.5) * 2.0 / res as f64 - 1.0;
            let dir = cube_dir(face, s, t);

            let mut hits: Vec<(f64, f64, usize)> = prepared
                .iter()
                .filter_map(|p| {
                    let delta = center - p.mean;
                    let ad = p.precision * dir;
                    let adelta = p.precision * delta;
                    let a = dir.dot(&ad);
                    if a <= 0.0 {
                        return None;
                    }
                    let b = dir.dot(&adelta);
                    let c = delta.dot(&adelta);
                    let t_peak = -b / a;
                    if t_peak <= 0.0 {
                        return None;
                    }
                    let alpha = p.opacity * (-0.5 * (c - b * b / a)).exp();
                    (alpha >= PEAK_ALPHA_CUTOFF).then_some((t_peak, alpha, p.index))
                })
                .collect();
            hits.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.2.cmp(&y.2)));

            let mut rgb = [0.0f64; 3];
            let mut transmit = 1.0f64;
            for (_, alpha, idx) in hits {
                let color = eval_sh_color(&scene.splats[idx], &dir);
                for ch in 0..3 {
                    rgb[ch] += transmit * alpha * color[ch];
                }
                transmit *= 1.0 - alpha;
                if 1.0 - transmit >= OPACITY_EARLY_EXIT {
                    break;
                }
            }
            rgb
        })
        .collect();

    ProbeCube {
        res,
        center: *center,
        data,
    }
}

/// Probe position: avatar centroid lifted toward the top of the avatar.
pub fn probe_position(avatar: &[GaussianSplat]) -> Result<Vector3<f64>> {
    let c = crate::splat::alpha_weighted_centroid(avatar)?;
    let z_max = avatar
        .iter()
        .map(|s| s.mean.z)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(Vector3::new(c.x, c.y, c.z + 0.4 * (z_max - c.z)))
}

/// Fitted spherical-harmonic environment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvProbe {
    pub degree: usize,
    pub lambda: f64,
    pub coeffs: [Vec<f64>; 3],
}

impl EnvProbe {
    pub fn eval(&self, dir: &Vector3<f64>) -> [f64; 3] {
        let mut basis = [0.0; MAX_COEFFS];
        basis_into(dir, self.degree, &mut basis);
        let k = coeff_count(self.degree);
        let mut out = [0.0; 3];
        for ch in 0..3 {
            out[ch] = (0..k).map(|i| self.coeffs[ch][i] * basis[i]).sum();
        }
        out
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<EnvProbe> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let probe: EnvProbe =
            serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        if probe.degree > crate::sh::MAX_DEGREE {
            return Err(Error::Format(format!(
                "probe degree {} exceeds maximum {}",
                probe.degree,
                crate::sh::MAX_DEGREE
            )));
        }
        let k = coeff_count(probe.degree);
        for c in &probe.coeffs {
            if c.len() != k {
                return Err(Error::Format(format!(
                    "probe has {} coefficients per channel, expected {k}",
                    c.len()
                )));
            }
        }
        Ok(probe)
    }
}

/// Weighted ridge least-squares SH fit: (BᵀWB + λI) A = BᵀW Y per channel.
/// `lambda = None` picks 1e-6·tr(BᵀWB)/K; an explicit `Some(0.0)` demands a
/// full-rank system and errors otherwise.
pub fn fit_sh(
    samples: &[(Vector3<f64>, f64, [f64; 3])],
    degree: usize,
    lambda: Option<f64>,
) -> Result<EnvProbe> {
    if degree > crate::sh::MAX_DEGREE {
        return Err(Error::Config(format!(
            "SH degree {degree} exceeds maximum {}",
            crate::sh::MAX_DEGREE
        )));
    }
    let k = coeff_count(degree);
    if samples.len() < k {
        return Err(Error::Degenerate(format!(
            "{} samples cannot constrain {k} coefficients",
            samples.len()
        )));
    }
    let mut gram = DMatrix::<f64>::zeros(k, k);
    let mut rhs = [
        DVector::<f64>::zeros(k),
        DVector::<f64>::zeros(k),
        DVector::<f64>::zeros(k),
    ];
    let mut basis = [0.0; MAX_COEFFS];
    for (dir, weight, rgb) in samples {
        basis_into(dir, degree, &mut basis);
        for i in 0..k {
            let wi = weight * basis[i];
            for j in 0..k {
                gram[(i, j)] += wi * basis[j];
            }
            for ch in 0..3 {
                rhs[ch][i] += wi * rgb[ch];
            }
        }
    }
    let lambda = lambda.unwrap_or_else(|| 1e-6 * gram.trace() / k as f64);
    for i in 0..k {
        gram[(i, i)] += lambda;
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Numerical("SH normal equations are rank-deficient".into()))?;
    let mut coeffs: [Vec<f64>; 3] = Default::default();
    for ch in 0..3 {
        coeffs[ch] = chol.solve(&rhs[ch]).iter().copied().collect();
    }
    Ok(EnvProbe {
        degree,
        lambda,
        coeffs,
    })
}

/// Cubemap pixels as weighted fit samples.
pub fn cube_samples(cube: &ProbeCube) -> Vec<(Vector3<f64>, f64, [f64; 3])> {
    let mut out = Vec::with_capacity(cube.data.len());
    for face in 0..6 {
        for row in 0..cube.res {
            for col in 0..cube.res {
                let dir = cube.dir_of(face, row, col);
                let w = cube.solid_angle(row, col);
                out.push((dir, w, cube.data[(face * cube.res + row) * cube.res + col]));
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct RelightParams {
    /// Cosine-lobe sharpness exponent.
    pub q: f64,
    /// Upper clip for the per-channel scales.
    pub s_max: f64,
    /// Global gain applied after the lobe average.
    pub gamma: f64,
}

impl Default for RelightParams {
    fn default() -> Self {
        RelightParams {
            q: 1.0,
            s_max: 4.0,
            gamma: 1.0,
        }
    }
}

/// Per-splat relight scales: the probe radiance (negatives clamped) averaged
/// over a normalized cosine lobe around each normal,
/// s_c = ∫ max(L_c,0)·S dω / ∫ S dω with S = max(⟨ω,n⟩,0)^q,
/// evaluated on a lat-long quadrature grid. A constant-white probe yields
/// scales of exactly 1 before the gamma gain.
pub fn relight_scales(
    probe: &EnvProbe,
    normals: &[Vector3<f64>],
    params: &RelightParams,
) -> Vec<[f64; 3]> {
    let grid = sphere_quadrature_grid(64, 128);
    let radiance: Vec<[f64; 3]> = grid
        .iter()
        .map(|(dir, _)| {
            let l = probe.eval(dir);
            [l[0].max(0.0), l[1].max(0.0), l[2].max(0.0)]
        })
        .collect();
    normals
        .par_iter()
        .map(|n| {
            let mut num = [0.0f64; 3];
            let mut den = 0.0f64;
            for ((dir, w), l) in grid.iter().zip(&radiance) {
                let cos = dir.dot(n).max(0.0);
                if cos <= 0.0 {
                    continue;
                }
                let s = w * cos.powf(params.q);
                den += s;
                for ch in 0..3 {
                    num[ch] += s * l[ch];
                }
            }
            let mut out = [0.0f64; 3];
            for ch in 0..3 {
                out[ch] = (params.gamma * num[ch] / den.max(1e-12)).clamp(0.0, params.s_max);
            }
            out
        })
        .collect()
}

/// Rescales every avatar splat's color by its relight factors.
pub fn apply_relight(
    scene: &mut SplatScene,
    probe: &EnvProbe,
    params: &RelightParams,
    orient_ref: &Vector3<f64>,
) -> Result<Vec<[f64; 3]>> {
    let ids = scene.group_indices(SplatGroup::Avatar);
    if ids.is_empty() {
        return Err(Error::Degenerate("no avatar splats to relight".into()));
    }
    let avatar: Vec<GaussianSplat> = ids.iter().map(|&i| scene.splats[i].clone()).collect();
    let avatar_scene = SplatScene::from_splats(avatar, SplatGroup::Avatar);
    let normals = crate::splat::estimate_pseudo_normals(&avatar_scene, 16, orient_ref);
    let scales = relight_scales(probe, &normals, params);
    for (&i, factor) in ids.iter().zip(&scales) {
        scale_splat_color(&mut scene.splats[i], *factor);
    }
    Ok(scales)
}
