use dgsm::build::{build_dgsm, compute_roi, BuildConfig};
use dgsm::eval::{render_shadow_matte_gaussian, render_shadow_matte_mesh, shadow_metrics};
use dgsm::sample::FootprintMode;
use dgsm::splat::SplatGroup;

fn main() {
    let sc = dgsm::synth::sphere_scene(48, 2000, 256);
    let occ = sc.scene.group_splats(SplatGroup::Avatar);
    let roi = compute_roi(&occ, 1.5, Some(&sc.scene)).unwrap();
    let config = BuildConfig { h: 512, w: 512, bins: 64, ..BuildConfig::default() };
    let atlas = build_dgsm(&sc.light, &occ, &sc.scene, &roi, &config).unwrap();
    let mode = FootprintMode::MonteCarlo { samples: 32, seed: 7 };
    let m = render_shadow_matte_gaussian(&sc.scene, &[atlas], &sc.camera, &mode);
    let r = render_shadow_matte_mesh(&sc.mesh, &sc.light, &sc.plane, &sc.camera, true);
    let rep = shadow_metrics(&m, &r, 0.1, 2).unwrap();
    println!("{:?}", rep);
    m.save_png(std::path::Path::new("/tmp/m.png")).unwrap();
    r.save_png(std::path::Path::new("/tmp/r.png")).unwrap();
}
