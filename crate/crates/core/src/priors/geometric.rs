use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::GeometricPrior;
use crate::error::{Error, Result};
use crate::tensor::LatentVideo;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometricMode {
    /// Always returns the clean target.
    Oracle,
    /// `z - sigma (z - z*) / (sigma + softness)`: trusts the current state
    /// more as the noise level falls.
    Shrinkage { softness: f64 },
}

impl Default for GeometricMode {
    fn default() -> Self {
        GeometricMode::Shrinkage { softness: 0.05 }
    }
}

/// Geometric prior that knows the clean latent `z*` of the target-view video.
#[derive(Clone, Debug)]
pub struct LinearGeometricPrior {
    target: LatentVideo,
    mode: GeometricMode,
}

impl LinearGeometricPrior {
    pub fn new(target: LatentVideo, mode: GeometricMode) -> Result<Self> {
        if let GeometricMode::Shrinkage { softness } = mode {
            if !(softness > 0.0) {
                return Err(Error::config(format!("shrinkage softness {softness} must be > 0")));
            }
        }
        Ok(Self { target, mode })
    }

    pub fn oracle(target: LatentVideo) -> Self {
        Self {
            target,
            mode: GeometricMode::Oracle,
        }
    }

    pub fn target(&self) -> &LatentVideo {
        &self.target
    }

    pub fn mode(&self) -> GeometricMode {
        self.mode
    }
}

impl GeometricPrior for LinearGeometricPrior {
    fn estimate_clean(&self, z: &LatentVideo, sigma: f64) -> Result<LatentVideo> {
        z.expect_shape(self.target.shape())?;
        if !(sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!("noise level {sigma} must be >= 0")));
        }
        match self.mode {
            GeometricMode::Oracle => Ok(self.target.clone()),
            GeometricMode::Shrinkage { softness } => {
                let w = sigma / (sigma + softness);
                let mut out = z.clone();
                out.data_mut()
                    .par_iter_mut()
                    .zip(self.target.data().par_iter())
                    .for_each(|(v, t)| *v -= w * (*v - t));
                Ok(out)
            }
        }
    }
}
