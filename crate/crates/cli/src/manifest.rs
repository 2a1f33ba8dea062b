//! The `manifest.json` written by `gen` and read by `eval`.

use std::path::{Path, PathBuf};

use ic_align::geometry::{AffineParams, RigidTransform};
use ic_align::io::FramePaths;
use ic_align::solver::{Family, Frame};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub family: Family,
    pub seed: u64,
    /// Raw depth units per meter of the depth PNGs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_scale: Option<f64>,
    /// Generator settings, kept for provenance of the data.
    pub generator: serde_json::Value,
    pub pairs: Vec<PairEntry>,
}

/// One pair; paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub name: String,
    pub seed: u64,
    pub template: PathBuf,
    pub image: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_depth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_depth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi_gt: Option<AffineParams>,
    /// Maps template-frame points into the image frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_gt: Option<RigidTransform>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read manifest {}: {e}", path.display())))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("invalid manifest {}: {e}", path.display())))?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(CliError::Usage(format!(
                "{}: unsupported schema_version {}",
                path.display(),
                m.schema_version
            )));
        }
        for p in &m.pairs {
            let ok = match m.family {
                Family::Affine => p.xi_gt.is_some(),
                Family::Rigid => p.t_gt.is_some() && p.template_depth.is_some() && p.intrinsics.is_some(),
            };
            if !ok {
                return Err(CliError::Usage(format!(
                    "{}: pair `{}` lacks the ground truth or inputs of a {} pair",
                    path.display(),
                    p.name,
                    m.family
                )));
            }
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}

impl PairEntry {
    /// Loads template and image frames, resolving paths against `dir`.
    pub fn load(&self, dir: &Path, depth_scale: f64) -> ic_align::Result<(Frame, Frame)> {
        let join = |p: &Option<PathBuf>| p.as_ref().map(|p| dir.join(p));
        let template = FramePaths {
            intensity: dir.join(&self.template),
            depth: join(&self.template_depth),
            intrinsics: join(&self.intrinsics),
        }
        .load(depth_scale)?;
        let image = FramePaths {
            intensity: dir.join(&self.image),
            depth: join(&self.image_depth),
            intrinsics: join(&self.intrinsics),
        }
        .load(depth_scale)?;
        Ok((template, image))
    }
}
