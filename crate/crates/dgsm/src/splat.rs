//! Core splat types: anisotropic 3D Gaussians with opacity and SH color,
//! scenes with group tags, and the cached covariance/precision pair used by
//! every downstream module.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::sh;

/// Opacity is clamped into this open interval at load so τ* = −ln(1−α)
/// stays finite.
pub const ALPHA_MIN: f64 = 1e-4;
pub const ALPHA_MAX: f64 = 1.0 - 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplatGroup {
    Scene,
    Avatar,
    Object,
}

#[derive(Clone, Debug)]
pub struct GaussianSplat {
    pub mean: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    /// Per-axis standard deviations, strictly positive (meters).
    pub scales: Vector3<f64>,
    /// α ∈ (0,1).
    pub opacity: f64,
    /// Per-channel SH coefficients, `(deg+1)²` entries per channel.
    pub sh_coeffs: [Vec<f64>; 3],
}

impl GaussianSplat {
    pub fn sh_degree(&self) -> usize {
        match self.sh_coeffs[0].len() {
            1 => 0,
            4 => 1,
            9 => 2,
            16 => 3,
            n => panic!("unsupported SH coefficient count {n}"),
        }
    }

    /// Σ = R diag(s²) Rᵀ.
    pub fn covariance(&self) -> Covariance3 {
        Covariance3::from_rotation_scales(&self.rotation, &self.scales)
    }

    pub fn isotropic(
        mean: Vector3<f64>,
        scale: f64,
        opacity: f64,
        rgb: [f64; 3],
    ) -> GaussianSplat {
        // DC-only splat whose eval_sh_color equals rgb from any direction
        let dc = rgb.map(|c| (c - 0.5) / sh::y00());
        GaussianSplat {
            mean,
            rotation: UnitQuaternion::identity(),
            scales: Vector3::new(scale, scale, scale),
            opacity: opacity.clamp(ALPHA_MIN, ALPHA_MAX),
            sh_coeffs: [vec![dc[0]], vec![dc[1]], vec![dc[2]]],
        }
    }
}

/// SPD covariance with cached precision, eigenvalues, and √det.
#[derive(Clone, Debug)]
pub struct Covariance3 {
    pub sigma: Matrix3<f64>,
    pub precision: Matrix3<f64>,
    pub eigenvalues: Vector3<f64>,
    pub sqrt_det: f64,
}

impl Covariance3 {
    pub fn from_rotation_scales(
        rotation: &UnitQuaternion<f64>,
        scales: &Vector3<f64>,
    ) -> Covariance3 {
        let r = rotation.to_rotation_matrix();
        let s2 = Vector3::new(
            scales.x * scales.x,
            scales.y * scales.y,
            scales.z * scales.z,
        );
        let sigma = r.matrix() * Matrix3::from_diagonal(&s2) * r.matrix().transpose();
        let inv_s2 = Vector3::new(1.0 / s2.x, 1.0 / s2.y, 1.0 / s2.z);
        let precision = r.matrix() * Matrix3::from_diagonal(&inv_s2) * r.matrix().transpose();
        Covariance3 {
            sigma,
            precision,
            eigenvalues: s2,
            sqrt_det: scales.x * scales.y * scales.z,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn empty() -> Aabb {
        Aabb {
            min: Vector3::repeat(f64::INFINITY),
            max: Vector3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn insert(&mut self, p: &Vector3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }
}

#[derive(Clone, Debug)]
pub struct SplatScene {
    pub splats: Vec<GaussianSplat>,
    pub groups: Vec<SplatGroup>,
    pub sh_degree: usize,
    pub bounds: Aabb,
}

impl SplatScene {
    pub fn from_splats(splats: Vec<GaussianSplat>, group: SplatGroup) -> SplatScene {
        let sh_degree = splats.first().map(|s| s.sh_degree()).unwrap_or(0);
        let mut bounds = Aabb::empty();
        for s in &splats {
            bounds.insert(&s.mean);
        }
        let groups = vec![group; splats.len()];
        SplatScene {
            splats,
            groups,
            sh_degree,
            bounds,
        }
    }

    pub fn merge(mut self, other: SplatScene) -> SplatScene {
        for s in &other.splats {
            self.bounds.insert(&s.mean);
        }
        self.sh_degree = self.sh_degree.max(other.sh_degree);
        self.splats.extend(other.splats);
        self.groups.extend(other.groups);
        self
    }

    pub fn group_indices(&self, group: SplatGroup) -> Vec<usize> {
        (0..self.splats.len())
            .filter(|&i| self.groups[i] == group)
            .collect()
    }

    pub fn group_splats(&self, group: SplatGroup) -> Vec<GaussianSplat> {
        self.group_indices(group)
            .into_iter()
            .map(|i| self.splats[i].clone())
            .collect()
    }
}

/// SH color evaluation with the 3DGS 0.5 offset, clamped at 0.
pub fn eval_sh_color(splat: &GaussianSplat, view_dir: &Vector3<f64>) -> [f64; 3] {
    let deg = splat.sh_degree();
    let mut basis = [0.0; sh::MAX_COEFFS];
    sh::basis_into(view_dir, deg, &mut basis);
    let n = sh::coeff_count(deg);
    let mut rgb = [0.0; 3];
    for c in 0..3 {
        let mut v = 0.5;
        for k in 0..n {
            v += splat.sh_coeffs[c][k] * basis[k];
        }
        rgb[c] = v.max(0.0);
    }
    rgb
}

/// Rec.709 luminance of a linear rgb color.
pub fn luminance(rgb: [f64; 3]) -> f64 {
    0.2126 * rgb[0] + 0.7152 * rgb[1] + 0.0722 * rgb[2]
}

/// Σ αᵢμᵢ / Σ αᵢ.
pub fn alpha_weighted_centroid(splats: &[GaussianSplat]) -> Result<Vector3<f64>> {
    let mut num = Vector3::zeros();
    let mut den = 0.0;
    for s in splats {
        num += s.opacity * s.mean;
        den += s.opacity;
    }
    if splats.is_empty() || den <= 0.0 {
        return Err(Error::Degenerate(
            "alpha_weighted_centroid needs splats with positive total opacity".into(),
        ));
    }
    Ok(num / den)
}

/// Per-splat pseudo-normals from α/distance-weighted local PCA of splat
/// centers, falling back to the smallest-scale rotation axis for isolated
/// splats. Signs point away from `orient_ref`.
pub fn estimate_pseudo_normals(
    scene: &SplatScene,
    neighbors: usize,
    orient_ref: &Vector3<f64>,
) -> Vec<Vector3<f64>> {
    let n = scene.splats.len();
    let mut normals = Vec::with_capacity(n);
    for i in 0..n {
        let mu = scene.splats[i].mean;
        let mut dists: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| ((scene.splats[j].mean - mu).norm(), j))
            .collect();
        dists.sort_by(|a, b| a.0.total_cmp(&b.0));
        dists.truncate(neighbors);

        let mut normal = if dists.len() < 4 {
            smallest_axis(&scene.splats[i])
        } else {
            let h = dists[dists.len() / 2].0.max(1e-9);
            let mut wsum = 0.0;
            let mut mean = Vector3::zeros();
            let weights: Vec<f64> = dists
                .iter()
                .map(|&(d, j)| scene.splats[j].opacity * (-d * d / (2.0 * h * h)).exp())
                .collect();
            for (&(_, j), &w) in dists.iter().zip(&weights) {
                mean += w * scene.splats[j].mean;
                wsum += w;
            }
            if wsum <= 1e-12 {
                smallest_axis(&scene.splats[i])
            } else {
                mean /= wsum;
                let mut cov = Matrix3::zeros();
                for (&(_, j), &w) in dists.iter().zip(&weights) {
                    let d = scene.splats[j].mean - mean;
                    cov += w * d * d.transpose();
                }
                cov /= wsum;
                let eig = nalgebra::SymmetricEigen::new(cov);
                let mut k_min = 0;
                for k in 1..3 {
                    if eig.eigenvalues[k] < eig.eigenvalues[k_min] {
                        k_min = k;
                    }
                }
                eig.eigenvectors.column(k_min).into_owned()
            }
        };
        if normal.dot(&(mu - orient_ref)) < 0.0 {
            normal = -normal;
        }
        normals.push(normal.normalize());
    }
    normals
}

fn smallest_axis(splat: &GaussianSplat) -> Vector3<f64> {
    let mut k_min = 0;
    for k in 1..3 {
        if splat.scales[k] < splat.scales[k_min] {
            k_min = k;
        }
    }
    let r = splat.rotation.to_rotation_matrix();
    r.matrix().column(k_min).into_owned()
}
