use rayon::prelude::*;

use super::LatentCodec;
use crate::error::{Error, Result};
use crate::tensor::{LatentVideo, Shape, Tensor4, VideoTensor};

/// Latent space equal to pixel space.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityCodec;

impl LatentCodec for IdentityCodec {
    fn encode(&self, x: &VideoTensor) -> Result<LatentVideo> {
        LatentVideo::new(x.as_tensor().clone())
    }

    fn decode(&self, z: &LatentVideo) -> Result<VideoTensor> {
        VideoTensor::new(z.as_tensor().clone())
    }

    fn latent_shape(&self, video: Shape) -> Result<Shape> {
        Ok(video)
    }
}

/// Average-pool encoder with nearest-neighbour decoder. The latent carries
/// one extra channel holding the mean over colour channels, mirroring the
/// wider latent of a learned autoencoder.
#[derive(Clone, Copy, Debug)]
pub struct PoolCodec {
    factor: usize,
    video_channels: usize,
}

impl PoolCodec {
    pub fn new(factor: usize, video_channels: usize) -> Result<Self> {
        if factor == 0 || !(video_channels == 1 || video_channels == 3) {
            return Err(Error::InvalidArgument(format!(
                "pool codec needs factor >= 1 and 1 or 3 channels, got {factor}, {video_channels}"
            )));
        }
        Ok(Self {
            factor,
            video_channels,
        })
    }

    pub fn factor(&self) -> usize {
        self.factor
    }
}

impl LatentCodec for PoolCodec {
    fn latent_shape(&self, video: Shape) -> Result<Shape> {
        if video.height % self.factor != 0 || video.width % self.factor != 0 || video.channels != self.video_channels {
            return Err(Error::shape(
                format!("multiple of {} pixels with {} channels", self.factor, self.video_channels),
                video,
            ));
        }
        Ok(Shape::new(
            video.frames,
            video.height / self.factor,
            video.width / self.factor,
            self.video_channels + 1,
        ))
    }

    fn encode(&self, x: &VideoTensor) -> Result<LatentVideo> {
        let ls = self.latent_shape(x.shape())?;
        let vs = x.shape();
        let (p, vc, lc) = (self.factor, vs.channels, ls.channels);
        let inv = 1.0 / (p * p) as f64;
        let mut out = Tensor4::zeros(ls);
        out.par_frames_mut().enumerate().for_each(|(f, dst)| {
            for ly in 0..ls.height {
                for lx in 0..ls.width {
                    let base = (ly * ls.width + lx) * lc;
                    for dy in 0..p {
                        for dx in 0..p {
                            for c in 0..vc {
                                dst[base + c] += x.get(f, ly * p + dy, lx * p + dx, c);
                            }
                        }
                    }
                    let mut mean = 0.0;
                    for c in 0..vc {
                        dst[base + c] *= inv;
                        mean += dst[base + c];
                    }
                    dst[base + vc] = mean / vc as f64;
                }
            }
        });
        LatentVideo::new(out)
    }

    fn decode(&self, z: &LatentVideo) -> Result<VideoTensor> {
        let ls = z.shape();
        if ls.channels != self.video_channels + 1 {
            return Err(Error::shape(format!("{} latent channels", self.video_channels + 1), ls));
        }
        let p = self.factor;
        let vs = Shape::new(ls.frames, ls.height * p, ls.width * p, self.video_channels);
        VideoTensor::from_fn(vs, |f, y, x, c| z.get(f, y / p, x / p, c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_round_trip_is_exact() {
        let x = VideoTensor::from_fn(Shape::new(2, 5, 3, 3), |f, y, x, c| (f + y * x + c) as f64 * 0.013).unwrap();
        let c = IdentityCodec;
        assert_eq!(c.decode(&c.encode(&x).unwrap()).unwrap(), x);
    }

    #[test]
    fn pool_constant_round_trip() {
        let x = VideoTensor::filled(Shape::new(2, 16, 24, 3), 0.37).unwrap();
        let c = PoolCodec::new(8, 3).unwrap();
        let z = c.encode(&x).unwrap();
        assert_eq!(z.shape(), Shape::new(2, 2, 3, 4));
        assert!(z.data().iter().all(|v| (v - 0.37).abs() < 1e-15));
        assert!(c.decode(&z).unwrap().max_abs_diff(&x).unwrap() < 1e-15);
    }

    #[test]
    fn pool_checker_loss_matches_brute_force() {
        // 16x16 checker of 3x3 cells: pooling over 8x8 blocks loses the
        // within-block variance; compute the expected error independently.
        let cell = |y: usize, x: usize| if (y / 3 + x / 3) % 2 == 0 { 1.0 } else { 0.0 };
        let x = VideoTensor::from_fn(Shape::new(1, 16, 16, 1), |_, y, x, _| cell(y, x)).unwrap();
        let c = PoolCodec::new(8, 1).unwrap();
        let back = c.decode(&c.encode(&x).unwrap()).unwrap();
        let mut expected = 0.0;
        for by in 0..2 {
            for bx in 0..2 {
                let vals: Vec<f64> = (0..64).map(|i| cell(by * 8 + i / 8, bx * 8 + i % 8)).collect();
                let m = vals.iter().sum::<f64>() / 64.0;
                expected += vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
            }
        }
        let got: f64 = back.data().iter().zip(x.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        assert!((got - expected).abs() < 1e-12);
        assert!(expected > 0.0);
    }

    #[test]
    fn pool_rejects_bad_shapes() {
        let c = PoolCodec::new(8, 3).unwrap();
        assert!(c.encode(&VideoTensor::zeros(Shape::new(1, 12, 16, 3)).unwrap()).is_err());
        assert!(c.decode(&LatentVideo::zeros(Shape::new(1, 2, 2, 3)).unwrap()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn pool_encode_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0, seed in 0u64..1000) {
            let s = Shape::new(2, 8, 16, 3);
            let gen = |k: u64| VideoTensor::from_fn(s, |f, y, x, c| {
                (((seed + k) as usize * 7919 + f * 131 + y * 31 + x * 7 + c) % 97) as f64 / 97.0
            }).unwrap();
            let (x, y) = (gen(1), gen(2));
            let c = PoolCodec::new(8, 3).unwrap();
            let lhs = c.encode(&x.zip_values(&y, |p, q| a * p + b * q).unwrap()).unwrap();
            let rhs = c.encode(&x).unwrap().zip_values(&c.encode(&y).unwrap(), |p, q| a * p + b * q).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
        }
    }
}
