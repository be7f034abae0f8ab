//! Volumetric shadows and relighting for 3D Gaussian-splat scenes.
//!
//! The pipeline: estimate emissive point lights from splat colors, build a
//! deep transmittance atlas per light in closed form, attenuate receiver
//! splats through footprint-averaged lookups, fit a spherical-harmonic
//! environment probe at the avatar, and relight the avatar against it. An
//! evaluation module scores the results against brute-force references.

pub mod atlas;
pub mod build;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod lights;
pub mod oracle;
pub mod probe;
pub mod ply;
pub mod sample;
pub mod selfcheck;
pub mod sh;
pub mod splat;
pub mod synth;
pub mod transmittance;

pub use error::{Error, Result};
