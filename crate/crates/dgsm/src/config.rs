//! Pipeline configuration: TOML sections with strict key checking, full
//! defaults, and range validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::atlas::AtlasLayout;
use crate::error::{Error, Result};
use crate::sample::FootprintMode;
use crate::transmittance::{AbsorptionKind, AbsorptionMode};

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InputsConfig {
    /// Scene (receiver) splats; the bundled demo room when absent.
    pub scene: Option<PathBuf>,
    /// Avatar (occluder) splats; the bundled sphere shell when absent.
    pub avatar: Option<PathBuf>,
    /// Optional extra occluder splats.
    pub object: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LightsConfig {
    pub k: usize,
    pub min_separation: f64,
    pub peakness_radius: f64,
    pub roi_radius: f64,
}

impl Default for LightsConfig {
    fn default() -> Self {
        let p = crate::lights::LightParams::default();
        LightsConfig {
            k: p.k,
            min_separation: p.min_separation,
            peakness_radius: p.peakness_radius,
            roi_radius: p.roi_radius,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AtlasConfig {
    pub h: usize,
    pub w: usize,
    pub bins: usize,
    /// Auto from the ROI when absent.
    pub t_max: Option<f64>,
    pub layout: AtlasLayout,
    pub k_sigma: f64,
    pub roi_cull: bool,
    pub tile_cull: bool,
}

impl Default for AtlasConfig {
    fn default() -> Self {
        AtlasConfig {
            h: 512,
            w: 512,
            bins: 64,
            t_max: None,
            layout: AtlasLayout::Octahedral,
            k_sigma: 3.0,
            roi_cull: true,
            tile_cull: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AbsorptionConfig {
    pub kind: AbsorptionKind,
    pub kappa: f64,
}

impl Default for AbsorptionConfig {
    fn default() -> Self {
        AbsorptionConfig {
            kind: AbsorptionKind::TraceAvg,
            kappa: 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FootprintConfig {
    /// "center", "stencil7", or "mc".
    pub mode: String,
    pub delta: f64,
    pub samples: usize,
}

impl Default for FootprintConfig {
    fn default() -> Self {
        FootprintConfig {
            mode: "stencil7".into(),
            delta: 1.0,
            samples: 32,
        }
    }
}

impl FootprintConfig {
    pub fn resolve(&self, seed: u64) -> Result<FootprintMode> {
        match self.mode.as_str() {
            "center" => Ok(FootprintMode::Center),
            "stencil7" => Ok(FootprintMode::Stencil7 { delta: self.delta }),
            "mc" => Ok(FootprintMode::MonteCarlo {
                samples: self.samples,
                seed,
            }),
            other => Err(Error::Config(format!(
                "unknown footprint mode '{other}' (expected center, stencil7, or mc)"
            ))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub face_res: usize,
    pub degree: usize,
    /// Auto ridge when absent.
    pub lambda: Option<f64>,
    pub q: f64,
    pub s_max: f64,
    pub gamma: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            face_res: 64,
            degree: 3,
            lambda: None,
            q: 1.0,
            s_max: 4.0,
            gamma: 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub tau: f64,
    pub boundary_px: usize,
    /// Neighborhood radius in meters for scene-side lighting fits.
    pub radius: f64,
    pub camera_res: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tau: 0.1,
            boundary_px: 2,
            radius: 1.5,
            camera_res: 256,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub inputs: InputsConfig,
    pub lights: LightsConfig,
    pub atlas: AtlasConfig,
    pub absorption: AbsorptionConfig,
    pub footprint: FootprintConfig,
    pub probe: ProbeConfig,
    pub eval: EvalConfig,
}

impl PipelineConfig {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(7)
    }

    pub fn parse(text: &str) -> Result<PipelineConfig> {
        let config: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<PipelineConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn emit(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn absorption_mode(&self) -> AbsorptionMode {
        AbsorptionMode {
            kind: self.absorption.kind,
            kappa: self.absorption.kappa,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(what.to_string()))
            }
        };
        check(self.lights.k >= 1, "lights.k must be at least 1")?;
        check(
            self.lights.min_separation > 0.0,
            "lights.min_separation must be positive",
        )?;
        check(
            self.lights.roi_radius > 0.0,
            "lights.roi_radius must be positive",
        )?;
        check(
            (8..=4096).contains(&self.atlas.h) && (8..=4096).contains(&self.atlas.w),
            "atlas resolution must be within 8..=4096",
        )?;
        check(
            (2..=1024).contains(&self.atlas.bins),
            "atlas.bins must be within 2..=1024",
        )?;
        if let Some(t) = self.atlas.t_max {
            check(t > 0.0, "atlas.t_max must be positive")?;
        }
        check(self.atlas.k_sigma > 0.0, "atlas.k_sigma must be positive")?;
        check(self.absorption.kappa > 0.0, "absorption.kappa must be positive")?;
        self.footprint.resolve(0)?;
        check(self.footprint.delta > 0.0, "footprint.delta must be positive")?;
        check(
            self.footprint.samples >= 1,
            "footprint.samples must be at least 1",
        )?;
        check(
            (4..=1024).contains(&self.probe.face_res),
            "probe.face_res must be within 4..=1024",
        )?;
        check(
            self.probe.degree <= crate::sh::MAX_DEGREE,
            "probe.degree must be at most 3",
        )?;
        if let Some(l) = self.probe.lambda {
            check(l >= 0.0, "probe.lambda must be non-negative")?;
        }
        check(self.probe.q > 0.0, "probe.q must be positive")?;
        check(self.probe.s_max > 0.0, "probe.s_max must be positive")?;
        check(self.probe.gamma > 0.0, "probe.gamma must be positive")?;
        check(
            (0.0..1.0).contains(&self.eval.tau),
            "eval.tau must be within [0,1)",
        )?;
        check(self.eval.radius > 0.0, "eval.radius must be positive")?;
        check(
            (16..=4096).contains(&self.eval.camera_res),
            "eval.camera_res must be within 16..=4096",
        )?;
        Ok(())
    }
}
