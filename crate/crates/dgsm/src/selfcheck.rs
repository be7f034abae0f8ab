//! Built-in consistency suites: each check exercises one pipeline component
//! against a brute-force reference or an exact invariant and prints a
//! PASS/FAIL line. Intended for quick installation sanity checks.

use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::atlas::{oct_decode, oct_encode};
use crate::build::{build_dgsm, compute_roi, BuildConfig};
use crate::config::PipelineConfig;
use crate::error::Result;
use crate::lights::PointLight;
use crate::oracle::{fibonacci_sphere, quadrature_segment_depth, sphere_quadrature_grid};
use crate::probe::{cube_samples, fit_sh, render_cubemap, EnvProbe, RelightParams};
use crate::sample::{footprint_points, FootprintMode};
use crate::sh;
use crate::splat::{Covariance3, GaussianSplat, SplatGroup, SplatScene};
use crate::transmittance::{
    opacity_to_absorption, ray_quadratic, segment_depth, AbsorptionKind, AbsorptionMode,
};

struct Suite {
    name: &'static str,
    run: fn(u64) -> Result<()>,
}

fn fail(name: &str, detail: String) -> crate::Error {
    crate::Error::Numerical(format!("{name}: {detail}"))
}

fn random_splat(rng: &mut ChaCha8Rng) -> GaussianSplat {
    let axis = Vector3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    let rotation = UnitQuaternion::from_scaled_axis(axis);
    GaussianSplat {
        mean: Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ),
        rotation,
        scales: Vector3::new(
            rng.gen_range(0.05..0.4),
            rng.gen_range(0.05..0.4),
            rng.gen_range(0.05..0.4),
        ),
        opacity: rng.gen_range(0.2..0.9),
        sh_coeffs: [vec![0.5], vec![0.5], vec![0.5]],
    }
}

/// Closed-form segment optical depth vs adaptive quadrature.
fn check_segment_depth(seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..50 {
        let splat = random_splat(&mut rng);
        let cov = splat.covariance();
        let o = Vector3::new(
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
        );
        let d = {
            let v = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            if v.norm() < 1e-6 {
                Vector3::z()
            } else {
                v.normalize()
            }
        };
        let q = ray_quadratic(&cov.precision, &splat.mean, &o, &d);
        let closed = segment_depth(&q, 1.0, 0.0, 4.0)?;
        let quad = quadrature_segment_depth(&q, 1.0, 0.0, 4.0);
        let err = (closed - quad).abs();
        if err > 1e-8 * (1.0 + quad) {
            return Err(fail("segment-depth", format!("error {err:.3e}")));
        }
    }
    Ok(())
}

/// TraceAvg absorption is invariant to uniform spatial rescaling.
fn check_traceavg_scale_invariance(seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mode = AbsorptionMode {
        kind: AbsorptionKind::TraceAvg,
        kappa: 1.3,
    };
    for _ in 0..20 {
        let splat = random_splat(&mut rng);
        let base_cov = splat.covariance();
        let base_depth = {
            let beta = opacity_to_absorption(splat.opacity, &base_cov, &mode)?;
            let o = splat.mean + Vector3::new(0.0, 0.0, -2.0);
            let q = ray_quadratic(&base_cov.precision, &splat.mean, &o, &Vector3::z());
            segment_depth(&q, beta, 0.0, 4.0)?
        };
        for s in [0.01, 0.1, 10.0] {
            let cov = Covariance3::from_rotation_scales(&splat.rotation, &(splat.scales * s));
            let beta = opacity_to_absorption(splat.opacity, &cov, &mode)?;
            let o = splat.mean * s + Vector3::new(0.0, 0.0, -2.0 * s);
            let q = ray_quadratic(&cov.precision, &(splat.mean * s), &o, &Vector3::z());
            let depth = segment_depth(&q, beta, 0.0, 4.0 * s)?;
            let err = (depth - base_depth).abs() / base_depth.max(1e-12);
            if err > 1e-9 {
                return Err(fail("traceavg-invariance", format!("rel error {err:.3e} at s={s}")));
            }
        }
    }
    Ok(())
}

/// Octahedral encode/decode round trip.
fn check_oct_round_trip(seed: u64) -> Result<()> {
    for dir in fibonacci_sphere(5000, seed) {
        let (u, v) = oct_encode(&dir)?;
        let back = oct_decode(u, v);
        // atan2 of cross/dot stays accurate for tiny angles where acos
        // saturates at its ~1e-8 precision floor
        let angle = dir.cross(&back).norm().atan2(dir.dot(&back));
        if angle > 1e-12 {
            return Err(fail("oct-round-trip", format!("angle {angle:.3e}")));
        }
    }
    Ok(())
}

/// Bilinear atlas sampling is continuous across the octahedral seam.
fn check_seam_continuity(_seed: u64) -> Result<()> {
    let light = PointLight {
        position: Vector3::new(0.0, 0.0, 2.0),
        intensity: 1.0,
        color: [1.0; 3],
    };
    let occluder = GaussianSplat::isotropic(
        Vector3::new(0.0, 0.0, 1.0),
        0.15,
        0.8,
        [0.5; 3],
    );
    let receivers = SplatScene::from_splats(
        crate::synth::splat_plane(12, 1.0, 0.0, 0.8),
        SplatGroup::Scene,
    );
    let roi = compute_roi(std::slice::from_ref(&occluder), 1.2, Some(&receivers))?;
    let config = BuildConfig {
        h: 64,
        w: 64,
        bins: 16,
        roi_cull: false,
        tile_cull: false,
        ..BuildConfig::default()
    };
    let atlas = build_dgsm(&light, &[occluder], &receivers, &roi, &config)?;
    // walk across the seam (z sign flip near the equator of the map)
    for i in 0..200 {
        let x = -1.0 + 2.0 * i as f64 / 199.0;
        let d_a = Vector3::new(x, 1.0 - x.abs() + 1e-4, 0.0).normalize();
        let d_b = Vector3::new(x, 1.0 - x.abs() - 1e-4, 0.0).normalize();
        let t_a = atlas.sample(&d_a, 2.0);
        let t_b = atlas.sample(&d_b, 2.0);
        if (t_a - t_b).abs() > 1e-3 {
            return Err(fail("seam-continuity", format!("jump {:.3e}", (t_a - t_b).abs())));
        }
    }
    Ok(())
}

/// Slab-culled and full atlases agree on receiver directions; tile culling
/// changes nothing beyond tolerance.
fn check_culling_equivalence(_seed: u64) -> Result<()> {
    let light = PointLight {
        position: Vector3::new(0.2, -0.1, 2.0),
        intensity: 1.0,
        color: [1.0; 3],
    };
    let occluders = crate::synth::sphere_shell(Vector3::new(0.0, 0.0, 1.0), 0.3, 200, 0.8);
    let receivers = SplatScene::from_splats(
        crate::synth::splat_plane(16, 1.2, 0.0, 0.8),
        SplatGroup::Scene,
    );
    let roi = compute_roi(&occluders, 1.4, Some(&receivers))?;
    let fast = BuildConfig {
        h: 128,
        w: 128,
        bins: 16,
        ..BuildConfig::default()
    };
    let full = BuildConfig {
        roi_cull: false,
        tile_cull: false,
        ..fast.clone()
    };
    let a_fast = build_dgsm(&light, &occluders, &receivers, &roi, &fast)?;
    let a_full = build_dgsm(&light, &occluders, &receivers, &roi, &full)?;
    let mut worst = 0.0f64;
    for s in &receivers.splats {
        let dir = (s.mean - light.position).normalize();
        let t = (s.mean - light.position).norm();
        worst = worst.max((a_fast.sample(&dir, t) - a_full.sample(&dir, t)).abs());
    }
    if worst > 1e-3 {
        return Err(fail("culling-equivalence", format!("worst gap {worst:.3e}")));
    }
    Ok(())
}

/// Atlas builds are bit-for-bit deterministic across runs.
fn check_deterministic_build(_seed: u64) -> Result<()> {
    let light = PointLight {
        position: Vector3::new(0.0, 0.0, 2.0),
        intensity: 1.0,
        color: [1.0; 3],
    };
    let occluders = crate::synth::sphere_shell(Vector3::new(0.1, 0.0, 1.0), 0.3, 150, 0.8);
    let receivers = SplatScene::from_splats(
        crate::synth::splat_plane(10, 1.0, 0.0, 0.8),
        SplatGroup::Scene,
    );
    let roi = compute_roi(&occluders, 1.2, Some(&receivers))?;
    let config = BuildConfig {
        h: 96,
        w: 96,
        bins: 12,
        ..BuildConfig::default()
    };
    let a = build_dgsm(&light, &occluders, &receivers, &roi, &config)?;
    let b = build_dgsm(&light, &occluders, &receivers, &roi, &config)?;
    if a.data != b.data {
        return Err(fail("deterministic-build", "payloads differ between runs".into()));
    }
    Ok(())
}

/// Stencil footprint weights sum to one and sit at the right offsets.
fn check_footprint_stencil(seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..20 {
        let splat = random_splat(&mut rng);
        let pts = footprint_points(&splat, &FootprintMode::Stencil7 { delta: 1.0 });
        if pts.len() != 7 {
            return Err(fail("footprint-stencil", format!("{} points", pts.len())));
        }
        let total: f64 = pts.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(fail("footprint-stencil", format!("weight sum {total}")));
        }
        if (pts[0].0 - splat.mean).norm() > 1e-12 {
            return Err(fail("footprint-stencil", "center point off the mean".into()));
        }
    }
    Ok(())
}

/// Spherical harmonics are orthonormal under quadrature.
fn check_sh_orthonormality(_seed: u64) -> Result<()> {
    let grid = sphere_quadrature_grid(128, 256);
    let n = sh::coeff_count(3);
    let mut gram = vec![0.0f64; n * n];
    for (dir, w) in &grid {
        let basis = sh::basis(dir, 3);
        for i in 0..n {
            for j in 0..n {
                gram[i * n + j] += w * basis[i] * basis[j];
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            let want = if i == j { 1.0 } else { 0.0 };
            let err = (gram[i * n + j] - want).abs();
            if err > 1e-3 {
                return Err(fail("sh-orthonormality", format!("G[{i},{j}] err {err:.3e}")));
            }
        }
    }
    Ok(())
}

/// SH probe fitting recovers known coefficients from a rendered cubemap of
/// the analytic field.
fn check_probe_fit_recovery(seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth: Vec<f64> = (0..9).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let cube = crate::probe::ProbeCube::analytic(48, |dir| {
        let b = sh::basis(dir, 2);
        let v: f64 = truth.iter().zip(&b).map(|(c, y)| c * y).sum();
        [v, v, v]
    });
    let probe = fit_sh(&cube_samples(&cube), 2, Some(1e-9))?;
    for (i, c) in truth.iter().enumerate() {
        let err = (probe.coeffs[0][i] - c).abs();
        if err > 1e-3 {
            return Err(fail("probe-fit", format!("coeff {i} err {err:.3e}")));
        }
    }
    Ok(())
}

/// A constant-white environment relights every normal with unit scales.
fn check_white_relight_unity(_seed: u64) -> Result<()> {
    let mut probe = EnvProbe {
        degree: 0,
        lambda: 0.0,
        coeffs: [vec![0.0], vec![0.0], vec![0.0]],
    };
    // c00 = 2√π gives radiance exactly 1 in every direction
    let c00 = 2.0 * std::f64::consts::PI.sqrt();
    for ch in &mut probe.coeffs {
        ch[0] = c00;
    }
    let normals = fibonacci_sphere(64, 3);
    let scales = crate::probe::relight_scales(&probe, &normals, &RelightParams::default());
    for s in &scales {
        for c in s {
            if (c - 1.0).abs() > 1e-9 {
                return Err(fail("white-relight", format!("scale {c}")));
            }
        }
    }
    Ok(())
}

/// Identical mattes score perfect; disjoint mattes score zero overlap.
fn check_metric_identities(seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = crate::eval::ShadowImage::new(32, 32);
    for v in &mut img.data {
        *v = if rng.gen_bool(0.3) { rng.gen_range(0.2..1.0) } else { 0.0 };
    }
    let report = crate::eval::shadow_metrics(&img, &img, 0.1, 2)?;
    let sae = report.sae.unwrap_or(0.0);
    if sae.abs() > 1e-12 || (report.sm_iou - 1.0).abs() > 1e-12 || (report.bf - 1.0).abs() > 1e-12 {
        return Err(fail("metric-identities", format!("{report:?}")));
    }
    Ok(())
}

/// The exact assignment metric matches brute force on small inputs.
fn check_assignment_metric(seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<[f64; 3]> = (0..5)
        .map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)])
        .collect();
    let d_self = crate::eval::ncm_ab(&a, &a, 100, seed)?;
    if d_self > 1e-9 {
        return Err(fail("assignment-metric", format!("self distance {d_self:.3e}")));
    }
    let shifted: Vec<[f64; 3]> = a.iter().map(|c| [c[0] + 0.2, c[1], c[2]]).collect();
    let d_shift = crate::eval::ncm_ab(&a, &shifted, 100, seed)?;
    if d_shift <= 0.0 {
        return Err(fail("assignment-metric", "shifted distance not positive".into()));
    }
    Ok(())
}

/// PLY round trip preserves the scene bit for bit.
fn check_ply_round_trip(seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let splats: Vec<GaussianSplat> = (0..20).map(|_| random_splat(&mut rng)).collect();
    let scene = SplatScene::from_splats(splats, SplatGroup::Scene);
    let mut buf = Vec::new();
    crate::ply::write_splat_ply(&scene, &mut buf)
        .map_err(|e| fail("ply-round-trip", e.to_string()))?;
    let back = crate::ply::parse_splat_ply(&buf, SplatGroup::Scene)?;
    if back.splats.len() != scene.splats.len() {
        return Err(fail("ply-round-trip", "splat count changed".into()));
    }
    for (a, b) in scene.splats.iter().zip(&back.splats) {
        let dm = (a.mean - b.mean).norm();
        if dm > 1e-6 || (a.opacity - b.opacity).abs() > 1e-6 {
            return Err(fail("ply-round-trip", format!("drift {dm:.3e}")));
        }
    }
    Ok(())
}

/// Invalid configuration (negative absorption strength) is rejected.
fn check_config_validation(_seed: u64) -> Result<()> {
    let text = "[absorption]\nkappa = -1.0\n";
    match PipelineConfig::parse(text) {
        Err(crate::Error::Config(_)) => Ok(()),
        Err(e) => Err(fail("config-validation", format!("wrong error class: {e}"))),
        Ok(_) => Err(fail("config-validation", "kappa = -1 was accepted".into())),
    }
}

/// Cubemap probe rendering sees an isolated emitter in the right direction.
fn check_probe_direction(_seed: u64) -> Result<()> {
    let emitter = GaussianSplat::isotropic(
        Vector3::new(0.0, 0.0, 1.0),
        0.1,
        0.95,
        [4.0, 4.0, 4.0],
    );
    let scene = SplatScene::from_splats(vec![emitter], SplatGroup::Scene);
    let cube = render_cubemap(&scene, &Vector3::zeros(), 16, &[]);
    let mut best = (0, 0.0f64);
    for (face, _) in cube.data.chunks(16 * 16).enumerate() {
        let sum: f64 = cube.data[face * 256..(face + 1) * 256]
            .iter()
            .map(|c| c[0])
            .sum();
        if sum > best.1 {
            best = (face, sum);
        }
    }
    // +z is face index 4
    if best.0 != 4 {
        return Err(fail("probe-direction", format!("brightest face {}", best.0)));
    }
    Ok(())
}

fn suites() -> Vec<Suite> {
    vec![
        Suite { name: "segment-depth-vs-quadrature", run: check_segment_depth },
        Suite { name: "traceavg-scale-invariance", run: check_traceavg_scale_invariance },
        Suite { name: "oct-round-trip", run: check_oct_round_trip },
        Suite { name: "oct-seam-continuity", run: check_seam_continuity },
        Suite { name: "culling-equivalence", run: check_culling_equivalence },
        Suite { name: "deterministic-build", run: check_deterministic_build },
        Suite { name: "footprint-stencil", run: check_footprint_stencil },
        Suite { name: "sh-orthonormality", run: check_sh_orthonormality },
        Suite { name: "probe-fit-recovery", run: check_probe_fit_recovery },
        Suite { name: "probe-direction", run: check_probe_direction },
        Suite { name: "white-relight-unity", run: check_white_relight_unity },
        Suite { name: "metric-identities", run: check_metric_identities },
        Suite { name: "assignment-metric", run: check_assignment_metric },
        Suite { name: "ply-round-trip", run: check_ply_round_trip },
        Suite { name: "config-validation", run: check_config_validation },
    ]
}

/// Runs every suite, printing one PASS/FAIL line each; returns the number of
/// failures.
pub fn run_all(seed: u64) -> usize {
    let mut failures = 0;
    for suite in suites() {
        match (suite.run)(seed) {
            Ok(()) => println!("PASS {}", suite.name),
            Err(e) => {
                println!("FAIL {} ({e})", suite.name);
                failures += 1;
            }
        }
    }
    let total = suites().len();
    println!("{}/{} suites passed", total - failures, total);
    failures
}
