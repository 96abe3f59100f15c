use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// One standard-normal noise map shared by every frame of a sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalNoise {
    seed: u64,
    height: usize,
    width: usize,
    channels: usize,
    frames: usize,
    map: Vec<f64>,
}

pub fn normal_map(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

impl CanonicalNoise {
    pub fn new(seed: u64, height: usize, width: usize, channels: usize, frames: usize) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 || frames == 0 {
            return Err(Error::InvalidArgument(format!(
                "canonical noise needs positive dims, got {height}x{width}x{channels} over {frames} frames"
            )));
        }
        Ok(Self {
            seed,
            height,
            width,
            channels,
            frames,
            map: normal_map(seed, height * width * channels),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Noise seen by frame `f`; the same map for every frame.
    pub fn frame(&self, f: usize) -> &[f64] {
        debug_assert!(f < self.frames);
        &self.map
    }

    pub fn map(&self) -> &[f64] {
        &self.map
    }
}

pub fn canonical_noise(seed: u64, height: usize, width: usize, channels: usize, frames: usize) -> Result<CanonicalNoise> {
    CanonicalNoise::new(seed, height, width, channels, frames)
}

/// Where the relighting prior's stochastic input comes from.
#[derive(Clone, Debug)]
pub enum NoiseSource {
    /// Every frame sees the same seeded map.
    Canonical(CanonicalNoise),
    /// A fresh map per frame on every call, drawn from OS entropy.
    Independent {
        height: usize,
        width: usize,
        channels: usize,
    },
}

/// Noise realized for one relighting call.
pub enum FrameNoise<'a> {
    Shared { map: &'a [f64], tag: u64 },
    PerFrame { maps: Vec<Vec<f64>>, tags: Vec<u64> },
}

impl FrameNoise<'_> {
    /// Map for frame `f` and a tag identifying it (used to seed derived streams).
    pub fn get(&self, f: usize) -> (&[f64], u64) {
        match self {
            FrameNoise::Shared { map, tag } => (map, *tag),
            FrameNoise::PerFrame { maps, tags } => (&maps[f], tags[f]),
        }
    }
}

impl NoiseSource {
    pub fn dims(&self) -> (usize, usize, usize) {
        match self {
            NoiseSource::Canonical(n) => n.dims(),
            NoiseSource::Independent {
                height,
                width,
                channels,
            } => (*height, *width, *channels),
        }
    }

    pub fn is_canonical(&self) -> bool {
        matches!(self, NoiseSource::Canonical(_))
    }

    pub fn realize(&self, frames: usize) -> FrameNoise<'_> {
        match self {
            NoiseSource::Canonical(n) => FrameNoise::Shared {
                map: n.map(),
                tag: n.seed(),
            },
            NoiseSource::Independent {
                height,
                width,
                channels,
            } => {
                let mut entropy = rand::rng();
                let tags: Vec<u64> = (0..frames).map(|_| entropy.random()).collect();
                let maps = tags
                    .iter()
                    .map(|&t| normal_map(t, height * width * channels))
                    .collect();
                FrameNoise::PerFrame { maps, tags }
            }
        }
    }
}
