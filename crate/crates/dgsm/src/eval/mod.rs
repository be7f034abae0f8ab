//! Evaluation suite: lighting-consistency metrics, shadow mattes against
//! mesh pseudo-ground-truth, pixel-space shadow metrics, and the ablation
//! harness.

pub mod ablate;
pub mod lighting;
pub mod matte;
pub mod metrics;

pub use ablate::{run_ablation, AblationConfig, AblationReport, AblationRow};
pub use lighting::{
    apf_y, fit_factorized_sh, lighting_metrics, linear_rgb_to_lab, ncm_ab, paa_y,
    LightingMetrics, LightingReport,
};
pub use matte::{
    load_obj, render_shadow_matte_gaussian, render_shadow_matte_mesh, write_obj, Camera,
    ReceiverPlane, ShadowImage, Triangle,
};
pub use metrics::{shadow_metrics, ShadowReport};
