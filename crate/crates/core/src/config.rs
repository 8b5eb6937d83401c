//! Run configuration: every tunable parameter of the pipeline in one
//! document, with defaults matching the reference operating point
//! (alpha = 0.5, lambda = 1500, one million hypotheses, 10 rays per camera,
//! the three-camera rig).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::error::{Error, Result};
use crate::likelihood::{ScanLikelihoodParams, VisionLikelihoodParams};
use crate::visibility::{CameraRig, OcclusionMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Hypotheses sampled per localization query.
    pub hypothesis_count: usize,
    pub occlusion: OcclusionMode,
    pub vision: VisionLikelihoodParams,
    pub scan: ScanLikelihoodParams,
    pub rig: CameraRig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            hypothesis_count: 1_000_000,
            occlusion: OcclusionMode::None,
            vision: VisionLikelihoodParams::default(),
            scan: ScanLikelihoodParams::default(),
            rig: CameraRig::default_three_camera(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hypothesis_count == 0 {
            return Err(Error::Validation("hypothesis_count must be >= 1".into()));
        }
        self.vision.validate()?;
        self.scan.validate()?;
        for cam in &self.rig.cameras {
            cam.validate()?;
        }
        Ok(())
    }

    /// Short content hash of the canonical JSON form, stamped into benchmark
    /// summaries so results are traceable to their configuration.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config is always serializable");
        let hash = Sha256::digest(canonical.as_bytes());
        hash.iter()
            .take(6)
            .map(|b| format!("{b:02x}"))
            .collect::<String>()
    }
}

pub fn load_run_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display(), e))?;
    let cfg: RunConfig =
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display(), e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn save_run_config(cfg: &RunConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(cfg)
        .map_err(|e| Error::Validation(format!("config serialization: {e}")))?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display(), e))
}
