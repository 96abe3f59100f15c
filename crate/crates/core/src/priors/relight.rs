use std::hash::{DefaultHasher, Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::RelightingPrior;
use crate::coherence::{normal_map, NoiseSource};
use crate::error::{Error, Result};
use crate::filter::blur_spatial;
use crate::lighting::LightingSpec;
use crate::tca::{tca_forward, TcaConfig};
use crate::tensor::{FeatureSequence, Shape, Tensor4, VideoTensor};

/// Per-pixel scene data of the target views.
#[derive(Clone, Debug)]
pub struct SceneBuffers {
    pub shape: Shape,
    /// World-space unit normals, `[f][y][x]`. Zero outside the mask.
    pub normals: Vec<[f64; 3]>,
    /// Surface reflectance, same layout as the video.
    pub albedo: Tensor4,
    pub mask: Vec<bool>,
    /// Object surface coordinates in [0, 1)², `[f][y][x]`.
    pub uv: Vec<[f64; 2]>,
    pub background: f64,
}

impl SceneBuffers {
    pub fn validate(&self) -> Result<()> {
        let n = self.shape.frames * self.shape.pixels();
        if self.normals.len() != n || self.mask.len() != n || self.uv.len() != n {
            return Err(Error::shape(format!("{n} per-pixel entries"), self.normals.len()));
        }
        self.albedo.expect_shape(self.shape)
    }
}

/// Lambertian shading of the buffers under `light`, clamped to [0, 1].
pub fn lambert_shade(buffers: &SceneBuffers, light: &LightingSpec) -> Result<VideoTensor> {
    buffers.validate()?;
    let s = buffers.shape;
    let d = light.direction();
    let (intensity, ambient) = (light.intensity(), light.ambient());
    let mut out = VideoTensor::zeros(s)?;
    let px = s.pixels();
    out.par_frames_mut().enumerate().for_each(|(f, dst)| {
        let albedo = buffers.albedo.frame(f);
        for p in 0..px {
            let i = f * px + p;
            for c in 0..s.channels {
                let k = p * s.channels + c;
                dst[k] = if buffers.mask[i] {
                    let n = buffers.normals[i];
                    let cos = (n[0] * d[0] + n[1] * d[1] + n[2] * d[2]).max(0.0);
                    (albedo[k] * cos * intensity + albedo[k] * ambient).clamp(0.0, 1.0)
                } else {
                    buffers.background
                };
            }
        }
    });
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RelightParams {
    /// Weight of the analytic shading against the tone-mapped input.
    pub beta: f64,
    /// Overall stochastic perturbation gain.
    pub eta: f64,
    /// Patch side of the attention tokens.
    pub patch: usize,
    pub feature_dim: usize,
    /// Scale of the query/key projections; larger is sharper attention.
    pub feature_scale: f64,
    /// Share of the perturbation drawn from the supplied noise map.
    pub anchored_share: f64,
    /// Share drawn from a stream keyed on the frame content.
    pub chaos_share: f64,
    /// Correlation length, in texels, of the surface-anchored part of the
    /// field. The map is blurred, rescaled to unit spread and sampled
    /// bilinearly at the surface coordinates.
    pub anchored_sigma: f64,
    pub gain_scale: f64,
    pub ramp_scale: f64,
    /// Loss of fine detail per unit of `eta`: the shaded frame is pulled
    /// towards its blur by `min(1, eta * detail_loss)`.
    pub detail_loss: f64,
    pub detail_sigma: f64,
    pub projection_seed: u64,
}

impl Default for RelightParams {
    fn default() -> Self {
        Self {
            beta: 0.8,
            eta: 0.05,
            patch: 4,
            feature_dim: 16,
            feature_scale: 8.0,
            anchored_share: 1.0,
            chaos_share: 2.0,
            anchored_sigma: 1.5,
            gain_scale: 1.0,
            ramp_scale: 1.0,
            detail_loss: 12.0,
            detail_sigma: 1.0,
            projection_seed: 0x5eed,
        }
    }
}

impl RelightParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::config(format!("relight beta {} outside (0, 1]", self.beta)));
        }
        if !(self.eta >= 0.0) || self.patch == 0 || self.feature_dim == 0 {
            return Err(Error::config("relight eta must be >= 0, patch and feature_dim >= 1"));
        }
        if !(self.anchored_sigma >= 0.0) {
            return Err(Error::config("relight anchored_sigma must be >= 0"));
        }
        if !(self.detail_loss >= 0.0 && self.detail_sigma > 0.0) {
            return Err(Error::config("relight detail_loss must be >= 0 and detail_sigma > 0"));
        }
        Ok(())
    }
}

/// Analytic relighting prior: Lambertian shading of known scene buffers,
/// blended with the input and perturbed by a noise-driven term routed
/// through a patch-attention stage.
pub struct LambertianRelightPrior {
    buffers: SceneBuffers,
    params: RelightParams,
    w_q: Vec<f64>,
    w_k: Vec<f64>,
}

impl LambertianRelightPrior {
    pub fn new(buffers: SceneBuffers, params: RelightParams) -> Result<Self> {
        buffers.validate()?;
        params.validate()?;
        let s = buffers.shape;
        let p = params.patch;
        if s.height % p != 0 || s.width % p != 0 {
            return Err(Error::config(format!(
                "frame {}x{} is not divisible into {p}x{p} patches",
                s.height, s.width
            )));
        }
        let token_dim = p * p * s.channels;
        let scale = params.feature_scale / (token_dim as f64).sqrt();
        let mut proj = normal_map(params.projection_seed, 2 * token_dim * params.feature_dim);
        proj.iter_mut().for_each(|v| *v *= scale);
        let w_k = proj.split_off(token_dim * params.feature_dim);
        Ok(Self {
            buffers,
            params,
            w_q: proj,
            w_k,
        })
    }

    pub fn buffers(&self) -> &SceneBuffers {
        &self.buffers
    }

    pub fn params(&self) -> &RelightParams {
        &self.params
    }

    fn patchify(&self, frame: &[f64]) -> Vec<f64> {
        let s = self.buffers.shape;
        let p = self.params.patch;
        let (ty, tx) = (s.height / p, s.width / p);
        let mut out = Vec::with_capacity(frame.len());
        for by in 0..ty {
            for bx in 0..tx {
                for dy in 0..p {
                    let row = ((by * p + dy) * s.width + bx * p) * s.channels;
                    out.extend_from_slice(&frame[row..row + p * s.channels]);
                }
            }
        }
        out
    }

    fn unpatchify(&self, tokens: &[f64], dst: &mut [f64]) {
        let s = self.buffers.shape;
        let p = self.params.patch;
        let tx = s.width / p;
        let row_len = p * s.channels;
        for (t, tok) in tokens.chunks(p * row_len).enumerate() {
            let (by, bx) = (t / tx, t % tx);
            for dy in 0..p {
                let row = ((by * p + dy) * s.width + bx * p) * s.channels;
                dst[row..row + row_len].copy_from_slice(&tok[dy * row_len..(dy + 1) * row_len]);
            }
        }
    }

    fn project(&self, patches: &[f64], w: &[f64]) -> Vec<f64> {
        let token_dim = w.len() / self.params.feature_dim;
        let d = self.params.feature_dim;
        patches
            .chunks(token_dim)
            .flat_map(|tok| {
                (0..d).map(move |j| tok.iter().enumerate().map(|(i, v)| v * w[i * d + j]).sum::<f64>())
            })
            .collect()
    }
}

struct FrameDraw {
    gain: f64,
    ramp: [f64; 3],
    field: Vec<f64>,
}

/// Noise map smoothed over `sigma` texels and rescaled to unit spread.
fn anchored_texture(map: &[f64], h: usize, w: usize, c: usize, sigma: f64) -> Result<Vec<f64>> {
    if sigma == 0.0 {
        return Ok(map.to_vec());
    }
    let t = blur_spatial(&Tensor4::from_vec(Shape::new(1, h, w, c), map.to_vec())?, sigma).into_vec();
    let rms = (t.iter().map(|v| v * v).sum::<f64>() / t.len() as f64).sqrt();
    Ok(if rms > 0.0 { t.iter().map(|v| v / rms).collect() } else { t })
}

/// Bilinear lookup at surface coordinates, wrapping in `u` and clamping in `v`.
fn sample_texture(tex: &[f64], h: usize, w: usize, c: usize, uv: [f64; 2], out: &mut [f64]) {
    let x = uv[0] * w as f64 - 0.5;
    let y = (uv[1] * h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let xa = (x0 as i64).rem_euclid(w as i64) as usize;
    let xb = (xa + 1) % w;
    let ya = y0 as usize;
    let yb = (ya + 1).min(h - 1);
    for (ch, o) in out.iter_mut().enumerate().take(c) {
        let at = |yy: usize, xx: usize| tex[(yy * w + xx) * c + ch];
        *o = (1.0 - fy) * ((1.0 - fx) * at(ya, xa) + fx * at(ya, xb)) + fy * ((1.0 - fx) * at(yb, xa) + fx * at(yb, xb));
    }
}

fn content_key(frame: &[f64], tag: u64) -> u64 {
    let mut h = DefaultHasher::new();
    tag.hash(&mut h);
    for v in frame {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

impl RelightingPrior for LambertianRelightPrior {
    fn relight(
        &self,
        x: &VideoTensor,
        light: &LightingSpec,
        noise: &NoiseSource,
        tca: Option<&TcaConfig>,
    ) -> Result<VideoTensor> {
        let s = self.buffers.shape;
        x.expect_shape(s)?;
        let shading = lambert_shade(&self.buffers, light)?;
        let beta = self.params.beta;
        let base = if beta == 1.0 {
            shading
        } else {
            shading.zip_values(x, |l, v| beta * l + (1.0 - beta) * v.clamp(0.0, 1.0))?
        };
        let eta = self.params.eta;
        if eta == 0.0 {
            return Ok(base);
        }
        if noise.dims() != (s.height, s.width, s.channels) {
            return Err(Error::shape(
                format!("{}x{}x{} noise", s.height, s.width, s.channels),
                format!("{:?}", noise.dims()),
            ));
        }

        let loss = (eta * self.params.detail_loss).min(1.0);
        let base = if loss > 0.0 {
            let blurred = blur_spatial(&base, self.params.detail_sigma);
            base.zip_values(&VideoTensor::new(blurred)?, |b, l| b + loss * (l - b))?
        } else {
            base
        };

        let realized = noise.realize(s.frames);
        let (a_share, c_share) = (self.params.anchored_share, self.params.chaos_share);
        let (h, w, ch) = (s.height, s.width, s.channels);
        let px = s.pixels();
        let draws: Vec<FrameDraw> = (0..s.frames)
            .into_par_iter()
            .map(|f| -> Result<FrameDraw> {
                let (map, tag) = realized.get(f);
                let tex = anchored_texture(map, h, w, ch, self.params.anchored_sigma)?;
                let mut rng = ChaCha8Rng::seed_from_u64(content_key(base.frame(f), tag));
                let mut chaos = || rng.sample::<f64, _>(StandardNormal);
                let gain = 1.0 + eta * self.params.gain_scale * (a_share * map[0] + c_share * chaos());
                let mut ramp = [0.0; 3];
                for (i, r) in ramp.iter_mut().enumerate() {
                    *r = eta * self.params.ramp_scale * (a_share * map[1 + i] + c_share * chaos());
                }
                let mut field = vec![0.0; s.frame_len()];
                let mut texel = vec![0.0; ch];
                for p in 0..px {
                    let i = f * px + p;
                    if self.buffers.mask[i] {
                        sample_texture(&tex, h, w, ch, self.buffers.uv[i], &mut texel);
                    } else {
                        texel.copy_from_slice(&tex[p * ch..(p + 1) * ch]);
                    }
                    for c in 0..ch {
                        field[p * ch + c] = eta * (a_share * texel[c] + c_share * chaos());
                    }
                }
                Ok(FrameDraw { gain, ramp, field })
            })
            .collect::<Result<_>>()?;

        let token_dim = self.params.patch * self.params.patch * s.channels;
        let tokens = px / (self.params.patch * self.params.patch);
        let base_patches: Vec<Vec<f64>> = (0..s.frames).into_par_iter().map(|f| self.patchify(base.frame(f))).collect();
        let q = FeatureSequence::from_frames(
            base_patches.par_iter().map(|b| self.project(b, &self.w_q)).collect(),
            tokens,
            self.params.feature_dim,
        )?;
        let k = FeatureSequence::from_frames(
            base_patches.par_iter().map(|b| self.project(b, &self.w_k)).collect(),
            tokens,
            self.params.feature_dim,
        )?;
        let v = FeatureSequence::from_frames(
            draws.par_iter().map(|d| self.patchify(&d.field)).collect(),
            tokens,
            token_dim,
        )?;
        let cfg = tca.copied().unwrap_or(TcaConfig {
            gamma: 0.0,
            ..TcaConfig::default()
        });
        let attended = tca_forward(&q, &k, &v, &cfg)?.h_out;

        let mut out = base;
        out.par_frames_mut().enumerate().for_each(|(f, dst)| {
            let mut pert = vec![0.0; dst.len()];
            self.unpatchify(attended.frame(f), &mut pert);
            let d = &draws[f];
            for y in 0..h {
                let vy = if h > 1 { y as f64 / (h - 1) as f64 - 0.5 } else { 0.0 };
                for x in 0..w {
                    let ux = if w > 1 { x as f64 / (w - 1) as f64 - 0.5 } else { 0.0 };
                    let ramp = d.ramp[0] * ux + d.ramp[1] * vy + d.ramp[2];
                    for c in 0..s.channels {
                        let k = (y * w + x) * s.channels + c;
                        dst[k] = (d.gain * dst[k] + ramp + pert[k]).clamp(0.0, 1.0);
                    }
                }
            }
        });
        out.assert_finite()?;
        Ok(out)
    }
}
