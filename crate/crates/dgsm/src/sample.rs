//! Receiver-side shadow lookup: footprint sampling over each receiver splat
//! and baking the per-light transmittance product into the splat colors.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::atlas::DgsmAtlas;
use crate::error::Result;
use crate::sh::y00;
use crate::splat::{GaussianSplat, SplatGroup, SplatScene};

/// How a receiver splat's spatial extent is sampled when looking up
/// transmittance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FootprintMode {
    /// Single lookup at the splat mean.
    Center,
    /// Mean plus ±δσ along each principal axis, Gaussian-weighted.
    Stencil7 { delta: f64 },
    /// n standard-normal draws in the splat frame, equal weights.
    MonteCarlo { samples: usize, seed: u64 },
}

impl Default for FootprintMode {
    fn default() -> Self {
        FootprintMode::Stencil7 { delta: 1.0 }
    }
}

/// Weighted world-space sample points for one splat: x = μ + R(s ⊙ z).
pub fn footprint_points(splat: &GaussianSplat, mode: &FootprintMode) -> Vec<(Vector3<f64>, f64)> {
    let to_world = |z: Vector3<f64>| splat.mean + splat.rotation * z.component_mul(&splat.scales);
    match mode {
        FootprintMode::Center => vec![(splat.mean, 1.0)],
        FootprintMode::Stencil7 { delta } => {
            let mut zs = vec![Vector3::zeros()];
            for axis in 0..3 {
                for sign in [1.0, -1.0] {
                    let mut z = Vector3::zeros();
                    z[axis] = sign * delta;
                    zs.push(z);
                }
            }
            let raw: Vec<f64> = zs.iter().map(|z| (-0.5 * z.norm_squared()).exp()).collect();
            let total: f64 = raw.iter().sum();
            zs.into_iter()
                .zip(raw)
                .map(|(z, w)| (to_world(z), w / total))
                .collect()
        }
        FootprintMode::MonteCarlo { samples, seed } => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(*seed);
            let n = (*samples).max(1);
            let w = 1.0 / n as f64;
            (0..n)
                .map(|_| {
                    let z = Vector3::new(
                        StandardNormal.sample(&mut rng),
                        StandardNormal.sample(&mut rng),
                        StandardNormal.sample(&mut rng),
                    );
                    (to_world(z), w)
                })
                .collect()
        }
    }
}

/// Footprint-averaged transmittance of one receiver under one light's atlas.
pub fn receiver_transmittance(
    splat: &GaussianSplat,
    atlas: &DgsmAtlas,
    mode: &FootprintMode,
) -> f64 {
    let mut acc = 0.0;
    for (point, weight) in footprint_points(splat, mode) {
        let delta = point - atlas.light.position;
        let dist = delta.norm();
        if dist < 1e-9 {
            acc += weight; // a point at the light is unshadowed
            continue;
        }
        acc += weight * atlas.sample(&(delta / dist), dist);
    }
    acc.clamp(0.0, 1.0)
}

/// Scales a splat's color by `factor` through its harmonic coefficients:
/// the DC term absorbs the 0.5 offset of the color decode, higher bands
/// scale directly.
pub fn scale_splat_color(splat: &mut GaussianSplat, factor: [f64; 3]) {
    for ch in 0..3 {
        let f = factor[ch];
        let coeffs = &mut splat.sh_coeffs[ch];
        if !coeffs.is_empty() {
            coeffs[0] = f * coeffs[0] + (f - 1.0) * 0.5 / y00();
        }
        for c in coeffs.iter_mut().skip(1) {
            *c *= f;
        }
    }
}

/// Attenuates every scene-group receiver by the product of its per-light
/// transmittances; avatar and object splats are left untouched. Each
/// MonteCarlo receiver derives its stream from the base seed and its index
/// so results are order- and thread-independent.
pub fn apply_shadows(
    scene: &mut SplatScene,
    atlases: &[DgsmAtlas],
    mode: &FootprintMode,
) -> Result<Vec<f64>> {
    let receiver_ids = scene.group_indices(SplatGroup::Scene);
    let transmittances: Vec<(usize, f64)> = receiver_ids
        .par_iter()
        .map(|&i| {
            let per_splat_mode = match mode {
                FootprintMode::MonteCarlo { samples, seed } => FootprintMode::MonteCarlo {
                    samples: *samples,
                    seed: seed.wrapping_add(i as u64),
                },
                m => *m,
            };
            let mut t = 1.0;
            for atlas in atlases {
                t *= receiver_transmittance(&scene.splats[i], atlas, &per_splat_mode);
            }
            (i, t)
        })
        .collect();
    let mut out = Vec::with_capacity(transmittances.len());
    for (i, t) in transmittances {
        scale_splat_color(&mut scene.splats[i], [t, t, t]);
        out.push(t);
    }
    Ok(out)
}
