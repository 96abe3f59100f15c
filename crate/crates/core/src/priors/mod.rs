//! Prior interfaces driven by the solver and their analytic implementations.

mod codec;
mod geometric;
mod relight;

pub use codec::{IdentityCodec, PoolCodec};
pub use geometric::{GeometricMode, LinearGeometricPrior};
pub use relight::{lambert_shade, LambertianRelightPrior, RelightParams, SceneBuffers};

use crate::coherence::NoiseSource;
use crate::error::Result;
use crate::lighting::LightingSpec;
use crate::tca::TcaConfig;
use crate::tensor::{LatentVideo, Shape, VideoTensor};

/// Clean-latent estimator standing in for a pretrained geometry-aware flow model.
pub trait GeometricPrior: Send + Sync {
    /// Estimate of the clean latent given the current state and noise level.
    fn estimate_clean(&self, z: &LatentVideo, sigma: f64) -> Result<LatentVideo>;
}

/// Per-frame relighting model.
pub trait RelightingPrior: Send + Sync {
    /// Relights `x` under `light`. `tca` switches the internal attention
    /// stage to its temporally consistent form.
    fn relight(
        &self,
        x: &VideoTensor,
        light: &LightingSpec,
        noise: &NoiseSource,
        tca: Option<&TcaConfig>,
    ) -> Result<VideoTensor>;
}

pub trait LatentCodec: Send + Sync {
    fn encode(&self, x: &VideoTensor) -> Result<LatentVideo>;
    fn decode(&self, z: &LatentVideo) -> Result<VideoTensor>;
    /// Latent shape for a video of shape `video`.
    fn latent_shape(&self, video: Shape) -> Result<Shape>;
}

/// The three models injected into the solver.
pub struct PriorBundle {
    pub geometric: Box<dyn GeometricPrior>,
    pub relight: Box<dyn RelightingPrior>,
    pub codec: Box<dyn LatentCodec>,
}

pub fn estimate_clean(prior: &dyn GeometricPrior, z: &LatentVideo, sigma: f64) -> Result<LatentVideo> {
    prior.estimate_clean(z, sigma)
}

pub fn relight(
    prior: &dyn RelightingPrior,
    x: &VideoTensor,
    light: &LightingSpec,
    noise: &NoiseSource,
) -> Result<VideoTensor> {
    prior.relight(x, light, noise, None)
}

pub fn encode(codec: &dyn LatentCodec, x: &VideoTensor) -> Result<LatentVideo> {
    codec.encode(x)
}

pub fn decode(codec: &dyn LatentCodec, z: &LatentVideo) -> Result<VideoTensor> {
    codec.decode(z)
}
