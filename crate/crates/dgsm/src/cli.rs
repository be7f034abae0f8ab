//! Command-line front end: one subcommand per pipeline stage plus an
//! end-to-end `pipeline` driver, a `selfcheck`, and the ablation runner.
//!
//! Exit codes: 0 success, 2 invalid configuration or input format, 3
//! runtime failure.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;

use crate::atlas::{AtlasLayout, DgsmAtlas};
use crate::build::{build_dgsm, compute_roi, BuildConfig};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::{
    lighting_metrics, render_shadow_matte_gaussian, render_shadow_matte_mesh, run_ablation,
    shadow_metrics, AblationConfig, LightingReport, ReceiverPlane,
};
use crate::lights::{estimate_lights, LightParams, PointLight};
use crate::ply::{load_splat_ply, save_splat_ply};
use crate::probe::{
    apply_relight, cube_samples, fit_sh, probe_position, render_cubemap, EnvProbe, RelightParams,
};
use crate::sample::{apply_shadows, FootprintMode};
use crate::splat::{alpha_weighted_centroid, estimate_pseudo_normals, SplatGroup, SplatScene};
use crate::transmittance::{AbsorptionKind, AbsorptionMode};

#[derive(Parser)]
#[command(
    name = "dgsm",
    about = "Volumetric shadows and relighting for Gaussian-splat scenes",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate emissive point lights from scene splat colors.
    EstimateLights(EstimateLightsArgs),
    /// Build one deep transmittance atlas per estimated light.
    BuildDgsm(BuildDgsmArgs),
    /// Attenuate scene receivers through the atlases.
    Apply(ApplyArgs),
    /// Render a cubemap at the avatar and fit a spherical-harmonic probe.
    RenderProbe(RenderProbeArgs),
    /// Rescale avatar colors against a fitted environment probe.
    Relight(RelightArgs),
    /// Score shadow mattes against a mesh reference.
    Eval(EvalArgs),
    /// Run the footprint/absorption/layout/culling ablation grid.
    Ablate(AblateArgs),
    /// Run built-in consistency suites against brute-force references.
    Selfcheck(SelfcheckArgs),
    /// Run the full pipeline end to end and write a manifest.
    Pipeline(PipelineArgs),
}

#[derive(Args, Clone)]
struct SceneInputs {
    /// Scene (receiver) splat PLY.
    #[arg(long)]
    scene: PathBuf,
    /// Avatar (occluder) splat PLY.
    #[arg(long)]
    avatar: Option<PathBuf>,
    /// Optional extra occluder splat PLY.
    #[arg(long)]
    object: Option<PathBuf>,
}

impl SceneInputs {
    fn load(&self) -> Result<SplatScene> {
        let mut scene = load_splat_ply(&self.scene, SplatGroup::Scene)?;
        if let Some(path) = &self.avatar {
            scene = scene.merge(load_splat_ply(path, SplatGroup::Avatar)?);
        }
        if let Some(path) = &self.object {
            scene = scene.merge(load_splat_ply(path, SplatGroup::Object)?);
        }
        Ok(scene)
    }
}

#[derive(Args)]
struct EstimateLightsArgs {
    #[command(flatten)]
    inputs: SceneInputs,
    /// Output JSON file for the light list.
    #[arg(long)]
    out: PathBuf,
    /// Number of lights to keep.
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Minimum distance between the selected lights, in meters.
    #[arg(long, default_value_t = 0.5)]
    min_separation: f64,
}

#[derive(Args, Clone)]
struct AtlasFlags {
    /// Square atlas resolution (octahedral H=W; cubemap uses the matched
    /// per-face budget).
    #[arg(long, default_value_t = 512)]
    atlas_res: usize,
    /// Number of depth bins.
    #[arg(long, default_value_t = 64)]
    bins: usize,
    /// Maximum binned distance; auto from the ROI when omitted.
    #[arg(long)]
    tmax: Option<f64>,
    /// Footprint extent in Mahalanobis sigmas.
    #[arg(long, default_value_t = 3.0)]
    ksigma: f64,
    /// Absorption model: simple, traceavg, mass, or diag.
    #[arg(long, default_value = "traceavg")]
    absorption: String,
    /// Absorption strength multiplier.
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    /// Atlas layout: oct or cube.
    #[arg(long, default_value = "oct")]
    layout: String,
    /// Disable receiver-driven slab restriction.
    #[arg(long)]
    no_roi_cull: bool,
    /// Disable per-tile occluder bucketing.
    #[arg(long)]
    no_tile_cull: bool,
    /// Receiver ROI half-extent around the avatar, in meters.
    #[arg(long, default_value_t = 2.0)]
    roi_radius: f64,
}

impl AtlasFlags {
    fn absorption_mode(&self) -> Result<AbsorptionMode> {
        let kind = match self.absorption.as_str() {
            "simple" => AbsorptionKind::Simple,
            "traceavg" => AbsorptionKind::TraceAvg,
            "mass" => AbsorptionKind::Mass,
            "diag" => AbsorptionKind::Diag,
            other => {
                return Err(Error::Config(format!(
                    "unknown absorption kind '{other}' (expected simple, traceavg, mass, or diag)"
                )))
            }
        };
        if self.kappa <= 0.0 {
            return Err(Error::Config("kappa must be positive".into()));
        }
        Ok(AbsorptionMode {
            kind,
            kappa: self.kappa,
        })
    }

    fn build_config(&self) -> Result<BuildConfig> {
        let layout = match self.layout.as_str() {
            "oct" => AtlasLayout::Octahedral,
            "cube" => AtlasLayout::Cubemap,
            other => {
                return Err(Error::Config(format!(
                    "unknown layout '{other}' (expected oct or cube)"
                )))
            }
        };
        let (h, w) = match layout {
            AtlasLayout::Octahedral => (self.atlas_res, self.atlas_res),
            AtlasLayout::Cubemap => {
                let f = ((self.atlas_res as f64).powi(2) / 6.0).sqrt().round() as usize;
                (f.max(4), f.max(4))
            }
        };
        Ok(BuildConfig {
            h,
            w,
            bins: self.bins,
            t_max: self.tmax,
            layout,
            absorption: self.absorption_mode()?,
            k_sigma: self.ksigma,
            roi_cull: !self.no_roi_cull,
            tile_cull: !self.no_tile_cull,
        })
    }
}

#[derive(Args, Clone)]
struct FootprintFlags {
    /// Receiver footprint sampling: center, stencil7, or mc.
    #[arg(long, default_value = "stencil7")]
    footprint: String,
    /// Stencil offset in sigmas.
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    /// Monte Carlo sample count.
    #[arg(long, default_value_t = 32)]
    samples: usize,
    /// Base RNG seed.
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

impl FootprintFlags {
    fn mode(&self) -> Result<FootprintMode> {
        crate::config::FootprintConfig {
            mode: self.footprint.clone(),
            delta: self.delta,
            samples: self.samples,
        }
        .resolve(self.seed)
    }
}

#[derive(Args)]
struct BuildDgsmArgs {
    #[command(flatten)]
    inputs: SceneInputs,
    /// Light list JSON produced by estimate-lights.
    #[arg(long)]
    lights: PathBuf,
    /// Output directory; one light_<i>.dgsm file per light.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    atlas: AtlasFlags,
}

#[derive(Args)]
struct ApplyArgs {
    #[command(flatten)]
    inputs: SceneInputs,
    /// Atlas files to attenuate through (repeatable).
    #[arg(long, required = true, num_args = 1..)]
    atlas: Vec<PathBuf>,
    /// Output PLY with shadow-attenuated receivers.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    footprint: FootprintFlags,
}

#[derive(Args)]
struct RenderProbeArgs {
    #[command(flatten)]
    inputs: SceneInputs,
    /// Output probe JSON.
    #[arg(long)]
    out: PathBuf,
    /// Cubemap face resolution.
    #[arg(long, default_value_t = 64)]
    face_res: usize,
    /// Spherical-harmonic degree, at most 3.
    #[arg(long, default_value_t = 3)]
    degree: usize,
    /// Ridge strength; auto when omitted.
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args)]
struct RelightArgs {
    /// Avatar splat PLY to relight.
    #[arg(long)]
    avatar: PathBuf,
    /// Probe JSON from render-probe.
    #[arg(long)]
    probe: PathBuf,
    /// Output PLY.
    #[arg(long)]
    out: PathBuf,
    /// Cosine-lobe sharpness.
    #[arg(long, default_value_t = 1.0)]
    q: f64,
    /// Upper clip for relight scales.
    #[arg(long, default_value_t = 4.0)]
    smax: f64,
    /// Global gain.
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
}

#[derive(Args)]
struct EvalArgs {
    /// Scene splat PLY; omitted → bundled synthetic sphere scene.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Avatar splat PLY (required with --scene).
    #[arg(long)]
    avatar: Option<PathBuf>,
    /// Atlas files for the rendered matte (required with --scene).
    #[arg(long, num_args = 1..)]
    atlas: Vec<PathBuf>,
    /// Occluder mesh OBJ for the reference matte (required with --scene).
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Light list JSON; the first light casts the reference shadow.
    #[arg(long)]
    lights: Option<PathBuf>,
    /// Receiver plane height for the reference matte.
    #[arg(long, default_value_t = 0.0)]
    plane_z: f64,
    /// Output report JSON.
    #[arg(long)]
    out: PathBuf,
    /// Shadow threshold for the region metrics.
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    /// Boundary tolerance in pixels.
    #[arg(long, default_value_t = 2)]
    boundary_px: usize,
    /// Matte resolution (square).
    #[arg(long, default_value_t = 256)]
    res: usize,
    /// Directory for matte PNG/PFM dumps.
    #[arg(long)]
    dump: Option<PathBuf>,
    #[command(flatten)]
    footprint: FootprintFlags,
}

#[derive(Args)]
struct AblateArgs {
    /// Output directory for ablation.json and ablation.csv.
    #[arg(long)]
    out: PathBuf,
    /// Receiver plane resolution per synthetic scene.
    #[arg(long, default_value_t = 24)]
    plane_n: usize,
    /// Matte resolution.
    #[arg(long, default_value_t = 96)]
    res: usize,
    /// Atlas resolution.
    #[arg(long, default_value_t = 160)]
    atlas_res: usize,
    /// Depth bins.
    #[arg(long, default_value_t = 24)]
    bins: usize,
    /// Base RNG seed.
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct SelfcheckArgs {
    /// Base RNG seed for the randomized suites.
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct PipelineArgs {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for all artifacts and the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_config: bool,
}

/// Parses the process arguments, runs the selected command, and returns the
/// process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    run_command(cli)
}

pub fn run_command(cli: Cli) -> i32 {
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src: &dyn std::error::Error = &e;
            while let Some(next) = src.source() {
                eprintln!("  caused by: {next}");
                src = next;
            }
            exit_code(&e)
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Format(_) | Error::Domain(_) => 2,
        Error::Stage { source, .. } => exit_code(source),
        _ => 3,
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::EstimateLights(a) => cmd_estimate_lights(a),
        Command::BuildDgsm(a) => cmd_build_dgsm(a),
        Command::Apply(a) => cmd_apply(a),
        Command::RenderProbe(a) => cmd_render_probe(a),
        Command::Relight(a) => cmd_relight(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Selfcheck(a) => cmd_selfcheck(a),
        Command::Pipeline(a) => cmd_pipeline(a),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("serialize {}: {e}", path.display())))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn load_lights(path: &Path) -> Result<Vec<PointLight>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lights: Vec<PointLight> = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if lights.is_empty() {
        return Err(Error::Degenerate(format!(
            "{}: light list is empty",
            path.display()
        )));
    }
    Ok(lights)
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn occluder_splats(scene: &SplatScene) -> Vec<crate::splat::GaussianSplat> {
    let mut out = scene.group_splats(SplatGroup::Avatar);
    out.extend(scene.group_splats(SplatGroup::Object));
    out
}

fn cmd_estimate_lights(a: EstimateLightsArgs) -> Result<()> {
    let scene = a.inputs.load()?;
    let receivers = scene.group_splats(SplatGroup::Scene);
    let center = alpha_weighted_centroid(&receivers)?;
    let params = LightParams {
        k: a.k,
        min_separation: a.min_separation,
        ..LightParams::default()
    };
    let lights = estimate_lights(&scene, &center, &params)?;
    write_json(&a.out, &lights)?;
    for (i, l) in lights.iter().enumerate() {
        println!(
            "light {i}: position ({:.3}, {:.3}, {:.3}) intensity {:.3}",
            l.position.x, l.position.y, l.position.z, l.intensity
        );
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_build_dgsm(a: BuildDgsmArgs) -> Result<()> {
    let scene = a.inputs.load()?;
    let occluders = occluder_splats(&scene);
    if occluders.is_empty() {
        return Err(Error::Degenerate(
            "no occluder splats: pass --avatar and/or --object".into(),
        ));
    }
    let lights = load_lights(&a.lights)?;
    let config = a.atlas.build_config()?;
    let roi = compute_roi(&occluders, a.atlas.roi_radius, Some(&scene))?;
    ensure_dir(&a.out)?;
    for (i, light) in lights.iter().enumerate() {
        let start = Instant::now();
        let atlas = build_dgsm(light, &occluders, &scene, &roi, &config)?;
        let path = a.out.join(format!("light_{i}.dgsm"));
        atlas.serialize(&path)?;
        println!(
            "light {i}: {}×{}×{} {:?} atlas in {:.2}s -> {}",
            atlas.bins,
            atlas.h,
            atlas.w,
            atlas.layout,
            start.elapsed().as_secs_f64(),
            path.display()
        );
    }
    Ok(())
}

fn cmd_apply(a: ApplyArgs) -> Result<()> {
    let mut scene = a.inputs.load()?;
    let atlases: Vec<DgsmAtlas> = a
        .atlas
        .iter()
        .map(|p| DgsmAtlas::deserialize(p))
        .collect::<Result<_>>()?;
    let mode = a.footprint.mode()?;
    let transmittances = apply_shadows(&mut scene, &atlases, &mode)?;
    save_splat_ply(&scene, &a.out)?;
    let mean = transmittances.iter().sum::<f64>() / transmittances.len().max(1) as f64;
    let min = transmittances.iter().cloned().fold(1.0, f64::min);
    println!(
        "attenuated {} receivers (mean T {:.4}, min T {:.4}) -> {}",
        transmittances.len(),
        mean,
        min,
        a.out.display()
    );
    Ok(())
}

fn cmd_render_probe(a: RenderProbeArgs) -> Result<()> {
    let scene = a.inputs.load()?;
    let avatar = scene.group_splats(SplatGroup::Avatar);
    if avatar.is_empty() {
        return Err(Error::Degenerate(
            "no avatar splats: probe position is undefined".into(),
        ));
    }
    let center = probe_position(&avatar)?;
    let cube = render_cubemap(&scene, &center, a.face_res, &[SplatGroup::Avatar]);
    let samples = cube_samples(&cube);
    let probe = fit_sh(&samples, a.degree, a.lambda)?;
    probe.save(&a.out)?;
    println!(
        "probe at ({:.3}, {:.3}, {:.3}), degree {}, dc ({:.4}, {:.4}, {:.4}) -> {}",
        center.x,
        center.y,
        center.z,
        probe.degree,
        probe.coeffs[0][0],
        probe.coeffs[1][0],
        probe.coeffs[2][0],
        a.out.display()
    );
    Ok(())
}

fn cmd_relight(a: RelightArgs) -> Result<()> {
    let mut scene = load_splat_ply(&a.avatar, SplatGroup::Avatar)?;
    let probe = EnvProbe::load(&a.probe)?;
    let params = RelightParams {
        q: a.q,
        s_max: a.smax,
        gamma: a.gamma,
    };
    if params.q <= 0.0 || params.s_max <= 0.0 || params.gamma <= 0.0 {
        return Err(Error::Config(
            "q, smax, and gamma must all be positive".into(),
        ));
    }
    let avatar = scene.group_splats(SplatGroup::Avatar);
    let center = alpha_weighted_centroid(&avatar)?;
    let scales = apply_relight(&mut scene, &probe, &params, &center)?;
    save_splat_ply(&scene, &a.out)?;
    let mean: f64 = scales
        .iter()
        .map(|s| (s[0] + s[1] + s[2]) / 3.0)
        .sum::<f64>()
        / scales.len() as f64;
    println!(
        "relit {} splats (mean scale {:.4}) -> {}",
        scales.len(),
        mean,
        a.out.display()
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct EvalOutput {
    scene: String,
    shadow: crate::eval::ShadowReport,
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let mode = a.footprint.mode()?;
    let output = match &a.scene {
        None => {
            // Bundled reference scene: build the atlas here so the command is
            // self-contained.
            let sc = crate::synth::sphere_scene(32, 600, a.res);
            let occluders = sc.scene.group_splats(SplatGroup::Avatar);
            let roi = compute_roi(&occluders, 1.5, Some(&sc.scene))?;
            let config = BuildConfig {
                h: 256,
                w: 256,
                bins: 32,
                ..BuildConfig::default()
            };
            let atlas = build_dgsm(&sc.light, &occluders, &sc.scene, &roi, &config)?;
            let matte = render_shadow_matte_gaussian(&sc.scene, &[atlas], &sc.camera, &mode);
            let matte_ref =
                render_shadow_matte_mesh(&sc.mesh, &sc.light, &sc.plane, &sc.camera, true);
            if let Some(dir) = &a.dump {
                ensure_dir(dir)?;
                matte.save_png(&dir.join("matte.png"))?;
                matte_ref.save_png(&dir.join("matte_ref.png"))?;
                matte.save_pfm(&dir.join("matte.pfm"))?;
            }
            EvalOutput {
                scene: sc.name.clone(),
                shadow: shadow_metrics(&matte, &matte_ref, a.tau, a.boundary_px)?,
            }
        }
        Some(scene_path) => {
            let (avatar, mesh, lights) = match (&a.avatar, &a.mesh, &a.lights) {
                (Some(av), Some(me), Some(li)) => (av, me, li),
                _ => {
                    return Err(Error::Config(
                        "--scene requires --avatar, --mesh, --lights, and --atlas".into(),
                    ))
                }
            };
            if a.atlas.is_empty() {
                return Err(Error::Config("--scene requires at least one --atlas".into()));
            }
            let scene = SceneInputs {
                scene: scene_path.clone(),
                avatar: Some(avatar.clone()),
                object: None,
            }
            .load()?;
            let atlases: Vec<DgsmAtlas> = a
                .atlas
                .iter()
                .map(|p| DgsmAtlas::deserialize(p))
                .collect::<Result<_>>()?;
            let triangles = crate::eval::load_obj(mesh)?;
            let light = load_lights(lights)?.remove(0);
            let receivers = scene.group_splats(SplatGroup::Scene);
            let center = alpha_weighted_centroid(&receivers)?;
            let camera = crate::synth::overhead_camera(
                Vector3::new(center.x, center.y, a.plane_z),
                a.res,
            );
            let plane = ReceiverPlane {
                point: Vector3::new(center.x, center.y, a.plane_z),
                normal: Vector3::new(0.0, 0.0, 1.0),
            };
            let matte = render_shadow_matte_gaussian(&scene, &atlases, &camera, &mode);
            let matte_ref = render_shadow_matte_mesh(&triangles, &light, &plane, &camera, true);
            if let Some(dir) = &a.dump {
                ensure_dir(dir)?;
                matte.save_png(&dir.join("matte.png"))?;
                matte_ref.save_png(&dir.join("matte_ref.png"))?;
            }
            EvalOutput {
                scene: scene_path.display().to_string(),
                shadow: shadow_metrics(&matte, &matte_ref, a.tau, a.boundary_px)?,
            }
        }
    };
    write_json(&a.out, &output)?;
    let s = &output.shadow;
    println!(
        "{}: SAE {} | SM-IoU {:.4} | BF {:.4}",
        output.scene,
        s.sae.map_or("n/a".into(), |v| format!("{v:.4}")),
        s.sm_iou,
        s.bf
    );
    println!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    ensure_dir(&a.out)?;
    let suite = crate::synth::ablation_suite(a.plane_n, a.res);
    let config = AblationConfig {
        atlas_res: a.atlas_res,
        bins: a.bins,
        seed: a.seed,
        ..AblationConfig::default()
    };
    let start = Instant::now();
    let report = run_ablation(&suite, &config)?;
    write_json(&a.out.join("ablation.json"), &report)?;
    let csv_path = a.out.join("ablation.csv");
    std::fs::write(&csv_path, report.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
    println!(
        "{:<10} {:<8} {:<10} {:>8} {:>8} {:>8}",
        "ablation", "scene", "variant", "SAE", "SM-IoU", "BF"
    );
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    for r in &report.rows {
        println!(
            "{:<10} {:<8} {:<10} {:>8} {:>8} {:>8}",
            r.ablation,
            r.scene,
            r.variant,
            fmt(r.sae),
            fmt(r.sm_iou),
            fmt(r.bf)
        );
    }
    println!(
        "{} rows in {:.1}s -> {}",
        report.rows.len(),
        start.elapsed().as_secs_f64(),
        a.out.display()
    );
    Ok(())
}

fn cmd_selfcheck(a: SelfcheckArgs) -> Result<()> {
    let failures = crate::selfcheck::run_all(a.seed);
    if failures == 0 {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{failures} selfcheck suite(s) failed")))
    }
}

#[derive(serde::Serialize)]
struct Manifest {
    config_hash: String,
    seed: u64,
    artifacts: Vec<String>,
    lights: usize,
    receivers: usize,
    avatar_splats: usize,
}

fn fnv1a(text: &str) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}

fn cmd_pipeline(a: PipelineArgs) -> Result<()> {
    let config = match &a.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if a.print_config {
        print!("{}", config.emit());
        return Ok(());
    }
    let out = a
        .out
        .clone()
        .ok_or_else(|| Error::Config("--out is required unless --print-config".into()))?;
    ensure_dir(&out)?;
    run_pipeline(&config, &out)
}

/// Full pipeline: load → lights → roi → atlas → shadows → probe → relight →
/// eval → manifest. Every stage failure names its stage.
pub fn run_pipeline(config: &PipelineConfig, out: &Path) -> Result<()> {
    let seed = config.seed();
    let mut artifacts: Vec<String> = Vec::new();
    let mut record = |path: PathBuf| {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        artifacts.push(name);
        path
    };
    let total = Instant::now();

    // load
    let scene = (|| -> Result<SplatScene> {
        match (&config.inputs.scene, &config.inputs.avatar) {
            (None, None) => Ok(crate::synth::demo_room()),
            (Some(_), None) | (None, Some(_)) => Err(Error::Config(
                "inputs.scene and inputs.avatar must be given together".into(),
            )),
            (Some(s), Some(av)) => SceneInputs {
                scene: s.clone(),
                avatar: Some(av.clone()),
                object: config.inputs.object.clone(),
            }
            .load(),
        }
    })()
    .map_err(|e| e.in_stage("load"))?;
    println!("[load] {} splats", scene.splats.len());

    let avatar = scene.group_splats(SplatGroup::Avatar);
    if avatar.is_empty() {
        return Err(Error::Degenerate("no avatar splats in the inputs".into()).in_stage("avatar"));
    }
    save_splat_ply(&scene, &record(out.join("input.ply"))).map_err(|e| e.in_stage("load"))?;

    // lights
    let receivers = scene.group_splats(SplatGroup::Scene);
    let lights = (|| -> Result<Vec<PointLight>> {
        let center = alpha_weighted_centroid(&receivers)?;
        let params = LightParams {
            k: config.lights.k,
            min_separation: config.lights.min_separation,
            peakness_radius: config.lights.peakness_radius,
            roi_radius: config.lights.roi_radius,
            ..LightParams::default()
        };
        estimate_lights(&scene, &center, &params)
    })()
    .map_err(|e| e.in_stage("lights"))?;
    write_json(&record(out.join("lights.json")), &lights).map_err(|e| e.in_stage("lights"))?;
    println!("[lights] {} light(s)", lights.len());

    // atlas
    let occluders = occluder_splats(&scene);
    let roi = compute_roi(&occluders, 2.0, Some(&scene)).map_err(|e| e.in_stage("atlas"))?;
    let build_config = BuildConfig {
        h: config.atlas.h,
        w: config.atlas.w,
        bins: config.atlas.bins,
        t_max: config.atlas.t_max,
        layout: config.atlas.layout,
        absorption: config.absorption_mode(),
        k_sigma: config.atlas.k_sigma,
        roi_cull: config.atlas.roi_cull,
        tile_cull: config.atlas.tile_cull,
    };
    let mut atlases = Vec::new();
    for (i, light) in lights.iter().enumerate() {
        let start = Instant::now();
        let atlas = build_dgsm(light, &occluders, &scene, &roi, &build_config)
            .map_err(|e| e.in_stage("atlas"))?;
        atlas
            .serialize(&record(out.join(format!("light_{i}.dgsm"))))
            .map_err(|e| e.in_stage("atlas"))?;
        atlas
            .slice_png(atlas.bins / 2, &record(out.join(format!("light_{i}_mid.png"))))
            .map_err(|e| e.in_stage("atlas"))?;
        println!(
            "[atlas] light {i}: {:.2}s",
            start.elapsed().as_secs_f64()
        );
        atlases.push(atlas);
    }

    // shadows
    let mode = config
        .footprint
        .resolve(seed)
        .map_err(|e| e.in_stage("shadows"))?;
    let mut shadowed = scene.clone();
    let transmittances =
        apply_shadows(&mut shadowed, &atlases, &mode).map_err(|e| e.in_stage("shadows"))?;
    save_splat_ply(&shadowed, &record(out.join("shadowed.ply")))
        .map_err(|e| e.in_stage("shadows"))?;
    let min_t = transmittances.iter().cloned().fold(1.0, f64::min);
    println!(
        "[shadows] {} receivers, min T {:.4}",
        transmittances.len(),
        min_t
    );

    // probe
    let probe = (|| -> Result<EnvProbe> {
        let center = probe_position(&avatar)?;
        let cube = render_cubemap(
            &shadowed,
            &center,
            config.probe.face_res,
            &[SplatGroup::Avatar],
        );
        fit_sh(&cube_samples(&cube), config.probe.degree, config.probe.lambda)
    })()
    .map_err(|e| e.in_stage("probe"))?;
    probe
        .save(&record(out.join("probe.json")))
        .map_err(|e| e.in_stage("probe"))?;
    println!(
        "[probe] degree {}, dc ({:.4}, {:.4}, {:.4})",
        probe.degree, probe.coeffs[0][0], probe.coeffs[1][0], probe.coeffs[2][0]
    );

    // relight
    let relight_params = RelightParams {
        q: config.probe.q,
        s_max: config.probe.s_max,
        gamma: config.probe.gamma,
    };
    let mut relit = shadowed.clone();
    let avatar_center = alpha_weighted_centroid(&avatar).map_err(|e| e.in_stage("relight"))?;
    let scales = apply_relight(&mut relit, &probe, &relight_params, &avatar_center)
        .map_err(|e| e.in_stage("relight"))?;
    save_splat_ply(&relit, &record(out.join("relit.ply"))).map_err(|e| e.in_stage("relight"))?;
    let mean_scale: f64 = scales
        .iter()
        .map(|s| (s[0] + s[1] + s[2]) / 3.0)
        .sum::<f64>()
        / scales.len() as f64;
    println!("[relight] {} splats, mean scale {:.4}", scales.len(), mean_scale);

    // eval: scene-vs-avatar lighting agreement before and after relighting
    let report = (|| -> Result<LightingReport> {
        let near: Vec<crate::splat::GaussianSplat> = receivers
            .iter()
            .filter(|s| (s.mean - roi.center).norm() <= config.eval.radius)
            .cloned()
            .collect();
        let scene_part = SplatScene::from_splats(near, SplatGroup::Scene);
        let scene_normals = estimate_pseudo_normals(&scene_part, 16, &avatar_center);
        let avatar_scene = SplatScene::from_splats(avatar.clone(), SplatGroup::Avatar);
        let avatar_normals = estimate_pseudo_normals(&avatar_scene, 16, &avatar_center);
        let relit_avatar = relit.group_splats(SplatGroup::Avatar);
        let orig = lighting_metrics(
            &scene_part.splats,
            &scene_normals,
            &avatar,
            &avatar_normals,
            2,
            seed,
        )?;
        let after = lighting_metrics(
            &scene_part.splats,
            &scene_normals,
            &relit_avatar,
            &avatar_normals,
            2,
            seed,
        )?;
        Ok(LightingReport::new(orig, after))
    })()
    .map_err(|e| e.in_stage("eval"))?;
    write_json(&record(out.join("lighting_report.json")), &report)
        .map_err(|e| e.in_stage("eval"))?;
    println!(
        "[eval] PAA {:.4} -> {:.4} | APF {:.4} -> {:.4} | NCM {:.4} -> {:.4}",
        report.orig.paa_y,
        report.relit.paa_y,
        report.orig.apf_y,
        report.relit.apf_y,
        report.orig.ncm_ab,
        report.relit.ncm_ab
    );

    // manifest
    let manifest = Manifest {
        config_hash: fnv1a(&config.emit()),
        seed,
        artifacts,
        lights: lights.len(),
        receivers: receivers.len(),
        avatar_splats: avatar.len(),
    };
    write_json(&out.join("manifest.json"), &manifest).map_err(|e| e.in_stage("report"))?;
    println!(
        "pipeline done in {:.1}s -> {}",
        total.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_error_class() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Format("x".into())), 2);
        assert_eq!(exit_code(&Error::Numerical("x".into())), 3);
        assert_eq!(
            exit_code(&Error::Degenerate("x".into()).in_stage("avatar")),
            3
        );
        assert_eq!(exit_code(&Error::Config("x".into()).in_stage("load")), 2);
    }

    #[test]
    fn atlas_flags_resolve() {
        let flags = AtlasFlags {
            atlas_res: 256,
            bins: 32,
            tmax: None,
            ksigma: 3.0,
            absorption: "mass".into(),
            kappa: 2.0,
            layout: "cube".into(),
            no_roi_cull: true,
            no_tile_cull: false,
            roi_radius: 2.0,
        };
        let config = flags.build_config().unwrap();
        assert_eq!(config.layout, AtlasLayout::Cubemap);
        // matched pixel budget: round(sqrt(256² / 6)) = 105
        assert_eq!(config.h, 105);
        assert!(!config.roi_cull);
        assert!(matches!(config.absorption.kind, AbsorptionKind::Mass));

        let bad = AtlasFlags {
            absorption: "nope".into(),
            ..flags
        };
        assert!(matches!(bad.build_config(), Err(Error::Config(_))));
    }

    #[test]
    fn fnv_hash_is_stable() {
        assert_eq!(fnv1a(""), "cbf29ce484222325");
        assert_eq!(fnv1a("a"), fnv1a("a"));
        assert_ne!(fnv1a("a"), fnv1a("b"));
    }
}
