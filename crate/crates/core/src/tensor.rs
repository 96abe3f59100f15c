//! Dense frame-major tensors shared by every stage of the pipeline.
//!
//! Layout is `[frame][row][column][channel]`, row-major within a frame, so a
//! whole frame is one contiguous slice and temporal operators stride by
//! [`Shape::frame_len`].

use std::fmt;
use std::ops::{Deref, DerefMut};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(frames: usize, height: usize, width: usize, channels: usize) -> Self {
        Self {
            frames,
            height,
            width,
            channels,
        }
    }

    pub const fn len(&self) -> usize {
        self.frames * self.frame_len()
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub const fn pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub const fn index(&self, f: usize, y: usize, x: usize, c: usize) -> usize {
        ((f * self.height + y) * self.width + x) * self.channels + c
    }

    /// Inverse of [`Shape::index`].
    pub const fn coords(&self, i: usize) -> (usize, usize, usize, usize) {
        let c = i % self.channels;
        let p = i / self.channels;
        let x = p % self.width;
        let p = p / self.width;
        let y = p % self.height;
        (p / self.height, y, x, c)
    }

    pub const fn with_frames(self, frames: usize) -> Self {
        Self { frames, ..self }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}",
            self.frames, self.height, self.width, self.channels
        )
    }
}

/// Untyped 4-D buffer. [`VideoTensor`] and [`LatentVideo`] wrap it so the two
/// domains cannot be mixed up at call sites.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(
                format!("{} values for {shape}", shape.len()),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let data = (0..shape.len())
            .map(|i| {
                let (fr, y, x, c) = shape.coords(i);
                f(fr, y, x, c)
            })
            .collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, f: usize, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.shape.index(f, y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, f: usize, y: usize, x: usize, c: usize, v: f64) {
        let i = self.shape.index(f, y, x, c);
        self.data[i] = v;
    }

    pub fn frame(&self, f: usize) -> &[f64] {
        let n = self.shape.frame_len();
        &self.data[f * n..(f + 1) * n]
    }

    pub fn frame_mut(&mut self, f: usize) -> &mut [f64] {
        let n = self.shape.frame_len();
        &mut self.data[f * n..(f + 1) * n]
    }

    pub fn frames(&self) -> std::slice::Chunks<'_, f64> {
        self.data.chunks(self.shape.frame_len())
    }

    pub fn par_frames_mut(&mut self) -> rayon::slice::ChunksMut<'_, f64> {
        let n = self.shape.frame_len();
        self.data.par_chunks_mut(n)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> Self {
        Self {
            shape: self.shape,
            data: self.data.par_iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64 + Sync) -> Result<Self> {
        self.expect_shape(other.shape)?;
        Ok(Self {
            shape: self.shape,
            data: self
                .data
                .par_iter()
                .zip(other.data.par_iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn expect_shape(&self, shape: Shape) -> Result<()> {
        if self.shape != shape {
            return Err(Error::shape(shape, self.shape));
        }
        Ok(())
    }

    /// Euclidean norm over every entry.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &Self) -> Result<f64> {
        self.expect_shape(other.shape)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.expect_shape(other.shape)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn assert_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => {
                let (frame, y, x, channel) = self.shape.coords(i);
                Err(Error::NonFinite {
                    frame,
                    y,
                    x,
                    channel,
                })
            }
        }
    }

    /// Mean of each channel over one frame.
    pub fn frame_channel_means(&self, f: usize) -> Vec<f64> {
        let c = self.shape.channels;
        let mut sums = vec![0.0; c];
        for px in self.frame(f).chunks(c) {
            for (s, v) in sums.iter_mut().zip(px) {
                *s += v;
            }
        }
        let n = self.shape.pixels() as f64;
        sums.into_iter().map(|s| s / n).collect()
    }
}

macro_rules! tensor_newtype {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name(Tensor4);

        impl $name {
            pub fn zeros(shape: Shape) -> Result<Self> {
                Self::new(Tensor4::zeros(shape))
            }

            pub fn filled(shape: Shape, value: f64) -> Result<Self> {
                Self::new(Tensor4::filled(shape, value))
            }

            pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
                Self::new(Tensor4::from_vec(shape, data)?)
            }

            pub fn from_fn(
                shape: Shape,
                f: impl FnMut(usize, usize, usize, usize) -> f64,
            ) -> Result<Self> {
                Self::new(Tensor4::from_fn(shape, f))
            }

            pub fn as_tensor(&self) -> &Tensor4 {
                &self.0
            }

            pub fn into_tensor(self) -> Tensor4 {
                self.0
            }

            /// Elementwise map that keeps the wrapper type.
            pub fn map_values(&self, f: impl Fn(f64) -> f64 + Sync) -> Self {
                Self(self.0.map(f))
            }

            pub fn zip_values(
                &self,
                other: &Self,
                f: impl Fn(f64, f64) -> f64 + Sync,
            ) -> Result<Self> {
                Ok(Self(self.0.zip_map(&other.0, f)?))
            }
        }

        impl Deref for $name {
            type Target = Tensor4;
            fn deref(&self) -> &Tensor4 {
                &self.0
            }
        }

        impl DerefMut for $name {
            fn deref_mut(&mut self) -> &mut Tensor4 {
                &mut self.0
            }
        }
    };
}

tensor_newtype!(
    /// Pixel-space frame sequence. One or three channels, nominal range [0, 1].
    VideoTensor
);

tensor_newtype!(
    /// Latent state traversed by the flow solver.
    LatentVideo
);

impl VideoTensor {
    pub fn new(t: Tensor4) -> Result<Self> {
        let s = t.shape();
        if s.frames == 0 || s.height == 0 || s.width == 0 {
            return Err(Error::shape("non-empty video", s));
        }
        if s.channels != 1 && s.channels != 3 {
            return Err(Error::shape("1 or 3 channels", s));
        }
        Ok(Self(t))
    }

    pub fn clamp01(&self) -> Self {
        self.map_values(|v| v.clamp(0.0, 1.0))
    }

    /// Rec. 601 luma of frame `f` (identity for single-channel video).
    pub fn luma(&self, f: usize) -> Vec<f64> {
        let frame = self.frame(f);
        match self.shape().channels {
            1 => frame.to_vec(),
            _ => frame
                .chunks(3)
                .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
                .collect(),
        }
    }

    /// Copy of frames `range`.
    pub fn slice_frames(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let s = self.shape();
        if range.start >= range.end || range.end > s.frames {
            return Err(Error::InvalidArgument(format!(
                "frame range {range:?} out of 0..{}",
                s.frames
            )));
        }
        let n = s.frame_len();
        Self::from_vec(
            s.with_frames(range.len()),
            self.data()[range.start * n..range.end * n].to_vec(),
        )
    }
}

impl LatentVideo {
    pub fn new(t: Tensor4) -> Result<Self> {
        let s = t.shape();
        if s.is_empty() {
            return Err(Error::shape("non-empty latent", s));
        }
        Ok(Self(t))
    }
}

/// `reference`-shaped video with every entry equal to `fill`.
pub fn video_like(reference: &VideoTensor, fill: f64) -> VideoTensor {
    VideoTensor(Tensor4::filled(reference.shape(), fill))
}

/// Per-frame token features `[frame][token][dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    frames: usize,
    tokens: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureSequence {
    pub fn zeros(frames: usize, tokens: usize, dim: usize) -> Self {
        Self {
            frames,
            tokens,
            dim,
            data: vec![0.0; frames * tokens * dim],
        }
    }

    pub fn from_vec(frames: usize, tokens: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * tokens * dim {
            return Err(Error::shape(
                format!("{frames}x{tokens}x{dim}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Self {
            frames,
            tokens,
            dim,
            data,
        })
    }

    pub fn from_frames(frames: Vec<Vec<f64>>, tokens: usize, dim: usize) -> Result<Self> {
        let n = frames.len();
        if let Some(bad) = frames.iter().find(|f| f.len() != tokens * dim) {
            return Err(Error::shape(
                format!("{} values per frame", tokens * dim),
                bad.len(),
            ));
        }
        Self::from_vec(n, tokens, dim, frames.concat())
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn frame_len(&self) -> usize {
        self.tokens * self.dim
    }

    pub fn frame(&self, f: usize) -> &[f64] {
        let n = self.frame_len();
        &self.data[f * n..(f + 1) * n]
    }

    pub fn frame_mut(&mut self, f: usize) -> &mut [f64] {
        let n = self.frame_len();
        &mut self.data[f * n..(f + 1) * n]
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.frames == other.frames && self.tokens == other.tokens && self.dim == other.dim
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
