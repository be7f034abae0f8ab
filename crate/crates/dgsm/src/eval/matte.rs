//! Shadow mattes: the receivers-only Gaussian compositing pass scored
//! against a binary pseudo-ground-truth matte ray-traced from a matched
//! triangle mesh, plus image and mesh file formats.

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::atlas::DgsmAtlas;
use crate::error::{Error, Result};
use crate::lights::PointLight;
use crate::sample::{receiver_transmittance, FootprintMode};
use crate::splat::{SplatGroup, SplatScene};

/// Pinhole camera; image rows scan top-down from the up direction.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct Camera {
    pub position: Vector3<f64>,
    pub look_at: Vector3<f64>,
    pub up: Vector3<f64>,
    pub fov_y_deg: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// World ray through image coordinates (x right, y down, in pixels).
    pub fn ray(&self, x: f64, y: f64) -> (Vector3<f64>, Vector3<f64>) {
        let forward = (self.look_at - self.position).normalize();
        let right = forward.cross(&self.up).normalize();
        let up = right.cross(&forward);
        let tan = (self.fov_y_deg.to_radians() * 0.5).tan();
        let aspect = self.width as f64 / self.height as f64;
        let px = (2.0 * x / self.width as f64 - 1.0) * tan * aspect;
        let py = (1.0 - 2.0 * y / self.height as f64) * tan;
        (
            self.position,
            (forward + px * right + py * up).normalize(),
        )
    }
}

/// H×W map of accumulated shadow strength S(p) ∈ [0,1].
#[derive(Clone, Debug)]
pub struct ShadowImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl ShadowImage {
    pub fn new(width: usize, height: usize) -> ShadowImage {
        ShadowImage {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// 16-bit grayscale PNG.
    pub fn save_png(&self, path: &std::path::Path) -> Result<()> {
        let pixels: Vec<u16> = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
            .collect();
        let img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(
            self.width as u32,
            self.height as u32,
            pixels,
        )
        .ok_or_else(|| Error::Format("shadow image buffer mismatch".into()))?;
        img.save(path)
            .map_err(|e| Error::Format(format!("writing {}: {e}", path.display())))
    }

    /// Grayscale PFM (little-endian, bottom-up row order per the format).
    pub fn save_pfm(&self, path: &std::path::Path) -> Result<()> {
        let mut out = format!("Pf\n{} {}\n-1.0\n", self.width, self.height).into_bytes();
        for row in (0..self.height).rev() {
            for col in 0..self.width {
                out.extend_from_slice(&(self.at(row, col) as f32).to_le_bytes());
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

const PEAK_ALPHA_CUTOFF: f64 = 1e-4;
const OPACITY_EARLY_EXIT: f64 = 0.999;

/// Receivers-only pass: composites scene-group splats along camera rays with
/// their colors replaced by per-splat shadow strength 1−T (T = product of
/// footprint-averaged atlas transmittances).
pub fn render_shadow_matte_gaussian(
    scene: &SplatScene,
    atlases: &[DgsmAtlas],
    camera: &Camera,
    mode: &FootprintMode,
) -> ShadowImage {
    let ids = scene.group_indices(SplatGroup::Scene);
    struct Prep {
        mean: Vector3<f64>,
        precision: nalgebra::Matrix3<f64>,
        opacity: f64,
        shadow: f64,
    }
    let prepared: Vec<Prep> = ids
        .par_iter()
        .map(|&i| {
            let splat = &scene.splats[i];
            let per_splat_mode = match mode {
                FootprintMode::MonteCarlo { samples, seed } => FootprintMode::MonteCarlo {
                    samples: *samples,
                    seed: seed.wrapping_add(i as u64),
                },
                m => *m,
            };
            let mut t = 1.0;
            for atlas in atlases {
                t *= receiver_transmittance(splat, atlas, &per_splat_mode);
            }
            Prep {
                mean: splat.mean,
                precision: splat.covariance().precision,
                opacity: splat.opacity,
                shadow: 1.0 - t,
            }
        })
        .collect();

    let data: Vec<f64> = (0..camera.width * camera.height)
        .into_par_iter()
        .map(|pix| {
            let row = pix / camera.width;
            let col = pix % camera.width;
            let (origin, dir) = camera.ray(col as f64 + 0.5, row as f64 + 0.5);
            let mut hits: Vec<(f64, f64, f64)> = prepared
                .iter()
                .filter_map(|p| {
                    let delta = origin - p.mean;
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
                    (alpha >= PEAK_ALPHA_CUTOFF).then_some((t_peak, alpha, p.shadow))
                })
                .collect();
            hits.sort_by(|x, y| x.0.total_cmp(&y.0));
            let mut strength = 0.0;
            let mut transmit = 1.0;
            for (_, alpha, shadow) in hits {
                strength += transmit * alpha * shadow;
                transmit *= 1.0 - alpha;
                if 1.0 - transmit >= OPACITY_EARLY_EXIT {
                    break;
                }
            }
            strength.clamp(0.0, 1.0)
        })
        .collect();

    ShadowImage {
        width: camera.width,
        height: camera.height,
        data,
    }
}

/// Infinite receiver plane through `point` with unit `normal`.
#[derive(Clone, Debug)]
pub struct ReceiverPlane {
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
}

pub type Triangle = [Vector3<f64>; 3];

/// Watertight-enough segment/triangle test (Möller–Trumbore with symmetric
/// epsilon handling); hits at the very end points do not count.
fn segment_hits_triangle(p0: &Vector3<f64>, p1: &Vector3<f64>, tri: &Triangle) -> bool {
    let dir = p1 - p0;
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-14 {
        return false;
    }
    let inv = 1.0 / det;
    let tvec = p0 - tri[0];
    let u = tvec.dot(&pvec) * inv;
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return false;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv;
    if v < -1e-12 || u + v > 1.0 + 1e-12 {
        return false;
    }
    let t = e2.dot(&qvec) * inv;
    t > 1e-9 && t < 1.0 - 1e-9
}

/// Pseudo-ground-truth matte: per camera pixel, intersect with the receiver
/// plane and test the point→light segment against every triangle. With
/// `supersample`, each pixel averages a 2×2 subgrid.
pub fn render_shadow_matte_mesh(
    triangles: &[Triangle],
    light: &PointLight,
    plane: &ReceiverPlane,
    camera: &Camera,
    supersample: bool,
) -> ShadowImage {
    let offsets: Vec<(f64, f64)> = if supersample {
        vec![(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)]
    } else {
        vec![(0.5, 0.5)]
    };
    let data: Vec<f64> = (0..camera.width * camera.height)
        .into_par_iter()
        .map(|pix| {
            let row = pix / camera.width;
            let col = pix % camera.width;
            let mut acc = 0.0;
            for &(dx, dy) in &offsets {
                let (origin, dir) = camera.ray(col as f64 + dx, row as f64 + dy);
                let denom = dir.dot(&plane.normal);
                if denom.abs() < 1e-12 {
                    continue;
                }
                let t = (plane.point - origin).dot(&plane.normal) / denom;
                if t <= 0.0 {
                    continue;
                }
                let hit = origin + t * dir;
                let blocked = triangles
                    .iter()
                    .any(|tri| segment_hits_triangle(&hit, &light.position, tri));
                if blocked {
                    acc += 1.0;
                }
            }
            acc / offsets.len() as f64
        })
        .collect();
    ShadowImage {
        width: camera.width,
        height: camera.height,
        data,
    }
}

/// Minimal ASCII OBJ reader: `v` and triangular `f` records only; faces with
/// more than three vertices are an error.
pub fn load_obj(path: &std::path::Path) -> Result<Vec<Triangle>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text)
}

pub fn parse_obj(text: &str) -> Result<Vec<Triangle>> {
    let mut verts: Vec<Vector3<f64>> = Vec::new();
    let mut tris = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let mut p = [0.0; 3];
                for slot in &mut p {
                    *slot = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| {
                            Error::Format(format!("OBJ line {}: bad vertex", lineno + 1))
                        })?;
                }
                verts.push(Vector3::new(p[0], p[1], p[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = parts
                    .map(|tok| {
                        let first = tok.split('/').next().unwrap_or("");
                        first.parse::<usize>().map_err(|_| {
                            Error::Format(format!("OBJ line {}: bad face index", lineno + 1))
                        })
                    })
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(Error::Format(format!(
                        "OBJ line {}: only triangles supported, got {} vertices",
                        lineno + 1,
                        idx.len()
                    )));
                }
                let mut tri = [Vector3::zeros(); 3];
                for (slot, &i) in tri.iter_mut().zip(&idx) {
                    if i == 0 || i > verts.len() {
                        return Err(Error::Format(format!(
                            "OBJ line {}: vertex index {i} out of range",
                            lineno + 1
                        )));
                    }
                    *slot = verts[i - 1];
                }
                tris.push(tri);
            }
            _ => {}
        }
    }
    Ok(tris)
}

pub fn write_obj(path: &std::path::Path, triangles: &[Triangle]) -> Result<()> {
    let mut out = String::new();
    for tri in triangles {
        for v in tri {
            out.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
        }
    }
    for i in 0..triangles.len() {
        out.push_str(&format!("f {} {} {}\n", 3 * i + 1, 3 * i + 2, 3 * i + 3));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atlas::AtlasLayout;
    use crate::splat::GaussianSplat;
    use approx::assert_relative_eq;

    fn camera_above() -> Camera {
        Camera {
            position: Vector3::new(0.0, 0.0, 3.0),
            look_at: Vector3::zeros(),
            up: Vector3::y(),
            fov_y_deg: 60.0,
            width: 64,
            height: 64,
        }
    }

    fn light() -> PointLight {
        PointLight {
            position: Vector3::new(0.0, 0.0, 5.0),
            intensity: 1.0,
            color: [1.0; 3],
        }
    }

    #[test]
    fn camera_center_ray_points_forward() {
        let cam = camera_above();
        let (o, d) = cam.ray(32.0, 32.0);
        assert_relative_eq!(o, cam.position);
        assert_relative_eq!(d, Vector3::new(0.0, 0.0, -1.0), epsilon = 1e-12);
        // image right for a -z view with +y up is world +x
        let (_, dr) = cam.ray(64.0, 32.0);
        assert!(dr.x > 0.0, "image right should be +x: {dr:?}");
        // image up is world +y
        let (_, du) = cam.ray(32.0, 0.0);
        assert!(du.y > 0.0, "image top should be +y: {du:?}");
    }

    #[test]
    fn all_ones_atlases_give_zero_matte() {
        let splats = vec![GaussianSplat::isotropic(
            Vector3::zeros(),
            0.3,
            0.9,
            [0.5; 3],
        )];
        let scene = SplatScene::from_splats(splats, SplatGroup::Scene);
        let atlas = DgsmAtlas::new(AtlasLayout::Octahedral, 16, 16, 4, 10.0, light());
        let matte =
            render_shadow_matte_gaussian(&scene, &[atlas], &camera_above(), &FootprintMode::Center);
        assert!(matte.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn opaque_shadowed_receiver_reaches_full_strength() {
        // near-opaque receiver under a black (all-zero transmittance) atlas
        let splats = vec![GaussianSplat {
            opacity: crate::splat::ALPHA_MAX,
            ..GaussianSplat::isotropic(Vector3::zeros(), 0.5, 0.99, [0.5; 3])
        }];
        let scene = SplatScene::from_splats(splats, SplatGroup::Scene);
        let mut atlas = DgsmAtlas::new(AtlasLayout::Octahedral, 16, 16, 4, 10.0, light());
        atlas.data.fill(0.0);
        let matte =
            render_shadow_matte_gaussian(&scene, &[atlas], &camera_above(), &FootprintMode::Center);
        let center = matte.at(32, 32);
        assert!(center > 0.95, "center {center}");
        for &v in &matte.data {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn matte_monotone_in_shadow_depth() {
        let splats = vec![GaussianSplat::isotropic(
            Vector3::zeros(),
            0.4,
            0.9,
            [0.5; 3],
        )];
        let scene = SplatScene::from_splats(splats, SplatGroup::Scene);
        let mk = |t: f32| {
            let mut a = DgsmAtlas::new(AtlasLayout::Octahedral, 16, 16, 4, 10.0, light());
            a.data.fill(t);
            a
        };
        let dark = render_shadow_matte_gaussian(
            &scene,
            &[mk(0.2)],
            &camera_above(),
            &FootprintMode::Center,
        );
        let lit = render_shadow_matte_gaussian(
            &scene,
            &[mk(0.8)],
            &camera_above(),
            &FootprintMode::Center,
        );
        for (d, l) in dark.data.iter().zip(&lit.data) {
            assert!(d >= l);
        }
    }

    #[test]
    fn segment_triangle_cases() {
        let tri: Triangle = [
            Vector3::new(-1.0, -1.0, 1.0),
            Vector3::new(1.0, -1.0, 1.0),
            Vector3::new(0.0, 1.0, 1.0),
        ];
        let below = Vector3::new(0.0, 0.0, 0.0);
        let above = Vector3::new(0.0, 0.0, 2.0);
        assert!(segment_hits_triangle(&below, &above, &tri));
        // segment stops short of the triangle
        assert!(!segment_hits_triangle(
            &below,
            &Vector3::new(0.0, 0.0, 0.5),
            &tri
        ));
        // misses sideways
        assert!(!segment_hits_triangle(
            &Vector3::new(5.0, 0.0, 0.0),
            &Vector3::new(5.0, 0.0, 2.0),
            &tri
        ));
        // parallel segment in the triangle plane
        assert!(!segment_hits_triangle(
            &Vector3::new(-2.0, 0.0, 1.0),
            &Vector3::new(2.0, 0.0, 1.0),
            &tri
        ));
    }

    fn big_quad(z: f64) -> Vec<Triangle> {
        let a = Vector3::new(-5.0, -5.0, z);
        let b = Vector3::new(5.0, -5.0, z);
        let c = Vector3::new(5.0, 5.0, z);
        let d = Vector3::new(-5.0, 5.0, z);
        vec![[a, b, c], [a, c, d]]
    }

    #[test]
    fn mesh_matte_trivial_cases() {
        let plane = ReceiverPlane {
            point: Vector3::zeros(),
            normal: Vector3::z(),
        };
        let cam = camera_above();
        // no triangles → all zero
        let empty = render_shadow_matte_mesh(&[], &light(), &plane, &cam, false);
        assert!(empty.data.iter().all(|&v| v == 0.0));
        // a big quad between plane and light → all one
        let full = render_shadow_matte_mesh(&big_quad(2.0), &light(), &plane, &cam, false);
        assert!(full.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn half_quad_umbra_line_and_supersampling() {
        // quad covering x < 0 only, directly under the light: the umbra edge
        // projects to x = 0 on the plane
        let a = Vector3::new(-5.0, -5.0, 2.0);
        let b = Vector3::new(0.0, -5.0, 2.0);
        let c = Vector3::new(0.0, 5.0, 2.0);
        let d = Vector3::new(-5.0, 5.0, 2.0);
        let tris = vec![[a, b, c], [a, c, d]];
        let plane = ReceiverPlane {
            point: Vector3::zeros(),
            normal: Vector3::z(),
        };
        let cam = camera_above();
        let matte = render_shadow_matte_mesh(&tris, &light(), &plane, &cam, false);
        // binary values only
        assert!(matte.data.iter().all(|&v| v == 0.0 || v == 1.0));
        // every row flips from shadow to light within a pixel of the center
        for row in 0..cam.height {
            for col in 0..cam.width {
                let v = matte.at(row, col);
                let (o, dir) = cam.ray(col as f64 + 0.5, row as f64 + 0.5);
                let t = -o.z / dir.z;
                let x = o.x + t * dir.x;
                if x < -0.05 {
                    assert_eq!(v, 1.0, "row {row} col {col} x {x}");
                } else if x > 0.05 {
                    assert_eq!(v, 0.0, "row {row} col {col} x {x}");
                }
            }
        }
        let ss = render_shadow_matte_mesh(&tris, &light(), &plane, &cam, true);
        for &v in &ss.data {
            let scaled = v * 4.0;
            assert!(
                (scaled - scaled.round()).abs() < 1e-12,
                "supersampled values live in quarters: {v}"
            );
        }
    }

    #[test]
    fn obj_round_trip_and_errors() {
        let tris = big_quad(1.5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mesh.obj");
        write_obj(&path, &tris).unwrap();
        let loaded = load_obj(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        for (a, b) in loaded.iter().zip(&tris) {
            for (p, q) in a.iter().zip(b) {
                assert_relative_eq!(p, q, epsilon = 1e-12);
            }
        }
        assert!(parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3 4\n").is_err());
        assert!(parse_obj("f 1 2 3\n").is_err());
        assert!(parse_obj("v 0 0\n").is_err());
    }

    #[test]
    fn image_exports() {
        let mut img = ShadowImage::new(8, 4);
        img.data[9] = 0.5;
        let dir = tempfile::tempdir().unwrap();
        let png = dir.path().join("m.png");
        let pfm = dir.path().join("m.pfm");
        img.save_png(&png).unwrap();
        img.save_pfm(&pfm).unwrap();
        let back = image::open(&png).unwrap().to_luma16();
        assert_eq!(back.get_pixel(1, 1).0[0], (0.5f64 * 65535.0).round() as u16);
        let bytes = std::fs::read(&pfm).unwrap();
        assert!(bytes.starts_with(b"Pf\n8 4\n"));
        assert_eq!(bytes.len(), b"Pf\n8 4\n-1.0\n".len() + 8 * 4 * 4);
    }
}
