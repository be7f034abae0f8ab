//! Bundled synthetic scenes: splat approximations of analytic occluders
//! (sphere shells, boxes, panels) paired with matched triangle meshes, a
//! receiver plane of splats, and a Cornell-box-like demo room, so every test
//! and example runs without external data.

use nalgebra::{UnitQuaternion, Vector3};

use crate::eval::matte::{Camera, ReceiverPlane, Triangle};
use crate::lights::PointLight;
use crate::oracle::fibonacci_sphere;
use crate::splat::{GaussianSplat, SplatGroup, SplatScene};

/// One occluder-vs-mesh evaluation scene.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub name: String,
    /// Receivers in the scene group, occluders in the avatar group.
    pub scene: SplatScene,
    pub mesh: Vec<Triangle>,
    pub light: PointLight,
    pub plane: ReceiverPlane,
    pub camera: Camera,
}

fn gray(pos: Vector3<f64>, scale: f64, alpha: f64) -> GaussianSplat {
    GaussianSplat::isotropic(pos, scale, alpha, [0.6, 0.6, 0.6])
}

/// Receiver plane at height z: n×n isotropic splats over [−half, half]².
pub fn splat_plane(n: usize, half: f64, z: f64, alpha: f64) -> Vec<GaussianSplat> {
    let spacing = 2.0 * half / n as f64;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let x = -half + (i as f64 + 0.5) * spacing;
            let y = -half + (j as f64 + 0.5) * spacing;
            out.push(gray(Vector3::new(x, y, z), 0.75 * spacing, alpha));
        }
    }
    out
}

/// Sphere approximated by n isotropic surface splats.
pub fn sphere_shell(
    center: Vector3<f64>,
    radius: f64,
    n: usize,
    alpha: f64,
) -> Vec<GaussianSplat> {
    let spacing = radius * (4.0 * std::f64::consts::PI / n as f64).sqrt();
    fibonacci_sphere(n, 0)
        .into_iter()
        .map(|d| gray(center + radius * d, 0.6 * spacing, alpha))
        .collect()
}

/// Matched UV-sphere triangle mesh.
pub fn sphere_mesh(center: Vector3<f64>, radius: f64, stacks: usize, slices: usize) -> Vec<Triangle> {
    let vertex = |i: usize, j: usize| {
        let theta = std::f64::consts::PI * i as f64 / stacks as f64;
        let phi = 2.0 * std::f64::consts::PI * j as f64 / slices as f64;
        center
            + radius
                * Vector3::new(
                    theta.sin() * phi.cos(),
                    theta.sin() * phi.sin(),
                    theta.cos(),
                )
    };
    let mut tris = Vec::new();
    for i in 0..stacks {
        for j in 0..slices {
            let (a, b, c, d) = (
                vertex(i, j),
                vertex(i + 1, j),
                vertex(i + 1, j + 1),
                vertex(i, j + 1),
            );
            if i > 0 {
                tris.push([a, b, d]);
            }
            if i + 1 < stacks {
                tris.push([b, c, d]);
            }
        }
    }
    tris
}

/// Axis-aligned box as surface splats on all six faces.
pub fn box_splats(
    center: Vector3<f64>,
    half: Vector3<f64>,
    per_edge: usize,
    alpha: f64,
) -> Vec<GaussianSplat> {
    let mut out = Vec::new();
    let n = per_edge;
    let scale = 0.75 * 2.0 * half.max() / n as f64;
    for axis in 0..3 {
        for sign in [-1.0, 1.0] {
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            for i in 0..n {
                for j in 0..n {
                    let mut p = center;
                    p[axis] += sign * half[axis];
                    p[u] += -half[u] + (i as f64 + 0.5) * 2.0 * half[u] / n as f64;
                    p[v] += -half[v] + (j as f64 + 0.5) * 2.0 * half[v] / n as f64;
                    out.push(gray(p, scale, alpha));
                }
            }
        }
    }
    out
}

/// Matched box mesh: 12 triangles.
pub fn box_mesh(center: Vector3<f64>, half: Vector3<f64>) -> Vec<Triangle> {
    let corner = |sx: f64, sy: f64, sz: f64| {
        center + Vector3::new(sx * half.x, sy * half.y, sz * half.z)
    };
    let quads: [[Vector3<f64>; 4]; 6] = [
        [corner(-1.0, -1.0, -1.0), corner(1.0, -1.0, -1.0), corner(1.0, 1.0, -1.0), corner(-1.0, 1.0, -1.0)],
        [corner(-1.0, -1.0, 1.0), corner(1.0, -1.0, 1.0), corner(1.0, 1.0, 1.0), corner(-1.0, 1.0, 1.0)],
        [corner(-1.0, -1.0, -1.0), corner(1.0, -1.0, -1.0), corner(1.0, -1.0, 1.0), corner(-1.0, -1.0, 1.0)],
        [corner(-1.0, 1.0, -1.0), corner(1.0, 1.0, -1.0), corner(1.0, 1.0, 1.0), corner(-1.0, 1.0, 1.0)],
        [corner(-1.0, -1.0, -1.0), corner(-1.0, 1.0, -1.0), corner(-1.0, 1.0, 1.0), corner(-1.0, -1.0, 1.0)],
        [corner(1.0, -1.0, -1.0), corner(1.0, 1.0, -1.0), corner(1.0, 1.0, 1.0), corner(1.0, -1.0, 1.0)],
    ];
    let mut tris = Vec::with_capacity(12);
    for q in quads {
        tris.push([q[0], q[1], q[2]]);
        tris.push([q[0], q[2], q[3]]);
    }
    tris
}

/// Thin vertical panel (normal +y) as splats plus its two-triangle mesh.
pub fn panel(
    center: Vector3<f64>,
    half_x: f64,
    half_z: f64,
    per_edge: usize,
    alpha: f64,
) -> (Vec<GaussianSplat>, Vec<Triangle>) {
    let mut splats = Vec::new();
    let scale = 0.75 * 2.0 * half_x.max(half_z) / per_edge as f64;
    for i in 0..per_edge {
        for j in 0..per_edge {
            let x = center.x - half_x + (i as f64 + 0.5) * 2.0 * half_x / per_edge as f64;
            let z = center.z - half_z + (j as f64 + 0.5) * 2.0 * half_z / per_edge as f64;
            splats.push(gray(Vector3::new(x, center.y, z), scale, alpha));
        }
    }
    let a = center + Vector3::new(-half_x, 0.0, -half_z);
    let b = center + Vector3::new(half_x, 0.0, -half_z);
    let c = center + Vector3::new(half_x, 0.0, half_z);
    let d = center + Vector3::new(-half_x, 0.0, half_z);
    (splats, vec![[a, b, c], [a, c, d]])
}

fn default_light() -> PointLight {
    PointLight {
        position: Vector3::new(0.0, 0.0, 3.0),
        intensity: 1.0,
        color: [1.0, 1.0, 1.0],
    }
}

/// Square downward-looking camera 2.6 m above `target`.
pub fn overhead_camera(target: Vector3<f64>, res: usize) -> Camera {
    Camera {
        position: target + Vector3::new(0.0, 0.0, 2.6),
        look_at: target,
        up: Vector3::y(),
        fov_y_deg: 55.0,
        width: res,
        height: res,
    }
}

fn assemble(
    name: &str,
    receivers: Vec<GaussianSplat>,
    occluders: Vec<GaussianSplat>,
    mesh: Vec<Triangle>,
    res: usize,
) -> SyntheticScene {
    let mut scene = SplatScene::from_splats(receivers, SplatGroup::Scene);
    scene = scene.merge(SplatScene::from_splats(occluders, SplatGroup::Avatar));
    SyntheticScene {
        name: name.to_string(),
        scene,
        mesh,
        light: default_light(),
        plane: ReceiverPlane {
            point: Vector3::zeros(),
            normal: Vector3::z(),
        },
        camera: overhead_camera(Vector3::zeros(), res),
    }
}

/// The sphere-occluder scene at selectable receiver/camera resolution: a 2k
/// splat shell against an analytic sphere, point light above, plane receiver.
pub fn sphere_scene(plane_n: usize, shell_n: usize, res: usize) -> SyntheticScene {
    let center = Vector3::new(0.0, 0.0, 1.0);
    let radius = 0.35;
    assemble(
        "sphere",
        splat_plane(plane_n, 1.2, 0.0, 0.9),
        sphere_shell(center, radius, shell_n, 0.9),
        sphere_mesh(center, radius, 48, 96),
        res,
    )
}

/// Five-scene ablation suite with distinct occluder geometry.
pub fn ablation_suite(plane_n: usize, res: usize) -> Vec<SyntheticScene> {
    let mut scenes = vec![sphere_scene(plane_n, 1200, res)];

    let box_c = Vector3::new(0.15, -0.1, 0.9);
    let box_h = Vector3::new(0.3, 0.2, 0.25);
    scenes.push(assemble(
        "box",
        splat_plane(plane_n, 1.2, 0.0, 0.9),
        box_splats(box_c, box_h, 14, 0.9),
        box_mesh(box_c, box_h),
        res,
    ));

    let c1 = Vector3::new(-0.35, 0.0, 1.0);
    let c2 = Vector3::new(0.35, 0.1, 1.1);
    let mut pair = sphere_shell(c1, 0.22, 700, 0.9);
    pair.extend(sphere_shell(c2, 0.28, 900, 0.9));
    let mut pair_mesh = sphere_mesh(c1, 0.22, 40, 80);
    pair_mesh.extend(sphere_mesh(c2, 0.28, 40, 80));
    scenes.push(assemble(
        "pair",
        splat_plane(plane_n, 1.2, 0.0, 0.9),
        pair,
        pair_mesh,
        res,
    ));

    let (panel_splats, panel_mesh) = panel(Vector3::new(0.0, 0.2, 1.0), 0.45, 0.3, 22, 0.9);
    scenes.push(assemble(
        "panel",
        splat_plane(plane_n, 1.2, 0.0, 0.9),
        panel_splats,
        panel_mesh,
        res,
    ));

    let mix_sphere_c = Vector3::new(-0.3, -0.2, 1.05);
    let mix_box_c = Vector3::new(0.35, 0.25, 0.85);
    let mix_box_h = Vector3::new(0.2, 0.15, 0.2);
    let mut mixed = sphere_shell(mix_sphere_c, 0.25, 800, 0.9);
    mixed.extend(box_splats(mix_box_c, mix_box_h, 12, 0.9));
    let mut mixed_mesh = sphere_mesh(mix_sphere_c, 0.25, 40, 80);
    mixed_mesh.extend(box_mesh(mix_box_c, mix_box_h));
    scenes.push(assemble(
        "mixed",
        splat_plane(plane_n, 1.2, 0.0, 0.9),
        mixed,
        mixed_mesh,
        res,
    ));

    scenes
}

/// Cornell-box-like demo room: gray floor/walls/ceiling, a bright emitter
/// splat near the ceiling, and a sphere avatar standing on the floor. Used
/// by the pipeline examples and the end-to-end tests.
pub fn demo_room() -> SplatScene {
    let half = 1.5;
    let n = 24;
    let mut splats = Vec::new();
    // floor and ceiling
    for &(z, _up) in &[(0.0, true), (3.0, false)] {
        for s in splat_plane(n, half, z, 0.85) {
            splats.push(s);
        }
    }
    // four walls
    let spacing = 2.0 * half / n as f64;
    for i in 0..n {
        for j in 0..n {
            let a = -half + (i as f64 + 0.5) * spacing;
            let z = (j as f64 + 0.5) * 3.0 / n as f64;
            let scale = 0.75 * spacing;
            // tint two walls for some chromatic variety
            let mk = |p: Vector3<f64>, rgb: [f64; 3]| GaussianSplat {
                rotation: UnitQuaternion::identity(),
                ..GaussianSplat::isotropic(p, scale, 0.85, rgb)
            };
            splats.push(mk(Vector3::new(a, -half, z), [0.7, 0.3, 0.3]));
            splats.push(mk(Vector3::new(a, half, z), [0.3, 0.7, 0.3]));
            splats.push(mk(Vector3::new(-half, a, z), [0.6, 0.6, 0.6]));
            splats.push(mk(Vector3::new(half, a, z), [0.6, 0.6, 0.6]));
        }
    }
    // emitter near the ceiling
    splats.push(GaussianSplat::isotropic(
        Vector3::new(0.0, 0.0, 2.7),
        0.12,
        0.95,
        [8.0, 7.6, 7.0],
    ));
    let mut scene = SplatScene::from_splats(splats, SplatGroup::Scene);
    scene = scene.merge(SplatScene::from_splats(
        sphere_shell(Vector3::new(0.3, -0.2, 0.9), 0.35, 1500, 0.9),
        SplatGroup::Avatar,
    ));
    scene
}
