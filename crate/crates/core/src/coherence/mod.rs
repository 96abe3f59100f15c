//! Deterministic coherence regularizers applied to the relit prediction
//! before it is fused into the flow target, plus the final temporal
//! post-smoother.

mod noise;

pub use noise::{canonical_noise, normal_map, CanonicalNoise, FrameNoise, NoiseSource};

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{blur_spatial, box_kernel, convolve_temporal, gaussian_kernel};
use crate::tensor::VideoTensor;

/// Population mean and standard deviation of one channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentStats {
    pub mean: f64,
    pub std: f64,
}

fn channel_stats(frame: &[f64], channels: usize) -> Vec<MomentStats> {
    let n = (frame.len() / channels) as f64;
    (0..channels)
        .map(|c| {
            let vals = frame.iter().skip(c).step_by(channels);
            let mean = vals.clone().sum::<f64>() / n;
            let var = vals.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            MomentStats {
                mean,
                std: var.sqrt(),
            }
        })
        .collect()
}

/// Per-channel statistics of every frame.
pub fn frame_moments(x: &VideoTensor) -> Vec<Vec<MomentStats>> {
    let c = x.shape().channels;
    x.frames().map(|fr| channel_stats(fr, c)).collect()
}

/// Reference statistics: per-channel mean of the temporal-mean frame and the
/// temporal average of the per-frame standard deviations.
///
/// Averaging the spreads rather than measuring the spread of the mean frame
/// keeps the rescaling idempotent; the mean frame of decorrelated frames is
/// flatter than any of them.
pub fn reference_moments(x: &VideoTensor) -> Vec<MomentStats> {
    let s = x.shape();
    let per_frame = frame_moments(x);
    let inv = 1.0 / s.frames as f64;
    (0..s.channels)
        .map(|c| MomentStats {
            mean: per_frame.iter().map(|st| st[c].mean).sum::<f64>() * inv,
            std: per_frame.iter().map(|st| st[c].std).sum::<f64>() * inv,
        })
        .collect()
}

fn is_flat(st: &MomentStats) -> bool {
    st.std <= 1e-12 * st.mean.abs().max(1.0)
}

/// Rescales each frame so its per-channel mean and standard deviation match
/// the sequence reference from [`reference_moments`]. Channels with zero spread pass
/// through unchanged.
pub fn global_moment_match(x: &VideoTensor) -> VideoTensor {
    let s = x.shape();
    let reference = reference_moments(x);
    let mut out = x.clone();
    out.par_frames_mut().enumerate().for_each(|(f, fr)| {
        let stats = channel_stats(fr, s.channels);
        for (c, (st, rf)) in stats.iter().zip(&reference).enumerate() {
            if is_flat(st) {
                debug!("moment match: frame {f} channel {c} has zero variance, passing through");
                continue;
            }
            let gain = rf.std / st.std;
            for v in fr.iter_mut().skip(c).step_by(s.channels) {
                *v = rf.mean + gain * (*v - st.mean);
            }
        }
    });
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TemporalOperator {
    Identity,
    MovingAverage { window: usize },
    Gaussian { window: usize, sigma: f64 },
}

impl TemporalOperator {
    /// Normalized kernel, or `None` for the identity.
    pub fn kernel(&self) -> Option<Vec<f64>> {
        match *self {
            TemporalOperator::Identity => None,
            TemporalOperator::MovingAverage { window } => Some(box_kernel(window)),
            TemporalOperator::Gaussian { window, sigma } => Some(gaussian_kernel(window, sigma)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TemporalOperator::Identity => Ok(()),
            TemporalOperator::MovingAverage { window } | TemporalOperator::Gaussian { window, .. }
                if window % 2 == 0 =>
            {
                Err(Error::config(format!("temporal window {window} must be odd")))
            }
            TemporalOperator::Gaussian { sigma, .. } if !(sigma > 0.0) => {
                Err(Error::config(format!("temporal sigma {sigma} must be > 0")))
            }
            _ => Ok(()),
        }
    }

    pub fn apply(&self, x: &crate::tensor::Tensor4) -> crate::tensor::Tensor4 {
        match self.kernel() {
            None => x.clone(),
            Some(k) => convolve_temporal(x, &k),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FdiConfig {
    /// Spatial Gaussian sigma in pixels separating illumination from texture.
    pub blur_sigma: f64,
    pub temporal: TemporalOperator,
}

impl Default for FdiConfig {
    fn default() -> Self {
        Self {
            blur_sigma: 3.0,
            temporal: TemporalOperator::Gaussian {
                window: 9,
                sigma: 2.0,
            },
        }
    }
}

impl FdiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.blur_sigma > 0.0) {
            return Err(Error::config(format!("fdi blur_sigma {} must be > 0", self.blur_sigma)));
        }
        self.temporal.validate()
    }
}

/// Low band, high band and temporally smoothed low band of a video.
pub struct FdiBands {
    pub low: VideoTensor,
    pub high: VideoTensor,
    pub smoothed_low: VideoTensor,
}

pub fn fdi_decompose(x: &VideoTensor, cfg: &FdiConfig) -> Result<FdiBands> {
    cfg.validate()?;
    let low = VideoTensor::new(blur_spatial(x, cfg.blur_sigma))?;
    let high = x.zip_values(&low, |a, b| a - b)?;
    let smoothed_low = VideoTensor::new(cfg.temporal.apply(&low))?;
    Ok(FdiBands {
        low,
        high,
        smoothed_low,
    })
}

/// Temporally smooths only the spatial low band: `T(x * G) + (x - x * G)`.
///
/// Evaluated as `x + (T(low) - low)` so an identity operator returns `x`
/// bit-exactly.
pub fn fdi_regularize(x: &VideoTensor, cfg: &FdiConfig) -> Result<VideoTensor> {
    if matches!(cfg.temporal, TemporalOperator::Identity) {
        cfg.validate()?;
        return Ok(x.clone());
    }
    let bands = fdi_decompose(x, cfg)?;
    let mut out = x.clone();
    out.data_mut()
        .par_iter_mut()
        .zip(bands.smoothed_low.data().par_iter().zip(bands.low.data()))
        .for_each(|(o, (s, l))| *o += s - l);
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostSmoothConfig {
    pub enabled: bool,
    pub window: usize,
    pub sigma: f64,
    pub gate_threshold: f64,
}

impl Default for PostSmoothConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            window: 9,
            sigma: 25.0,
            gate_threshold: 1e-4,
        }
    }
}

impl PostSmoothConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window % 2 == 0 {
            return Err(Error::config(format!("post-smooth window {} must be odd", self.window)));
        }
        if !(self.sigma > 0.0) || self.gate_threshold < 0.0 {
            return Err(Error::config("post-smooth sigma must be > 0 and gate_threshold >= 0"));
        }
        Ok(())
    }
}

/// Per-pixel temporal Gaussian smoothing blended in proportion to the local
/// temporal variance: `blend = clamp(var / gate_threshold, 0, 1)`, full
/// strength everywhere when `gate_threshold == 0`.
pub fn adaptive_temporal_smooth(x: &VideoTensor, window: usize, sigma: f64, gate_threshold: f64) -> Result<VideoTensor> {
    PostSmoothConfig {
        enabled: true,
        window,
        sigma,
        gate_threshold,
    }
    .validate()?;
    let k = gaussian_kernel(window, sigma);
    let mean = convolve_temporal(x, &k);
    let sq = convolve_temporal(&x.map(|v| v * v), &k);
    let mut out = x.clone();
    out.data_mut()
        .par_iter_mut()
        .zip(mean.data().par_iter().zip(sq.data()))
        .for_each(|(o, (&m, &s2))| {
            let var = (s2 - m * m).max(0.0);
            let blend = if gate_threshold == 0.0 {
                1.0
            } else {
                (var / gate_threshold).clamp(0.0, 1.0)
            };
            *o += blend * (m - *o);
        });
    Ok(out)
}
