//! Separable Gaussian blur and temporal convolution over [`Tensor4`] data.

use rayon::prelude::*;

use crate::tensor::Tensor4;

/// Unnormalized Gaussian weights `exp(-d^2 / 2 sigma^2)` for `d = -radius..=radius`.
pub fn gaussian_weights(radius: usize, sigma: f64) -> Vec<f64> {
    let r = radius as isize;
    (-r..=r)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect()
}

/// Gaussian kernel of `window` taps (odd) normalized to sum 1.
pub fn gaussian_kernel(window: usize, sigma: f64) -> Vec<f64> {
    debug_assert!(window % 2 == 1);
    normalize(gaussian_weights(window / 2, sigma))
}

pub fn box_kernel(window: usize) -> Vec<f64> {
    vec![1.0 / window as f64; window]
}

pub fn normalize(mut w: Vec<f64>) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Mirror index into `0..n` without repeating the edge sample (`dcb|abcd|cba`).
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Spatial Gaussian blur of every frame and channel, kernel truncated at
/// `3 sigma`, reflected borders.
pub fn blur_spatial(t: &Tensor4, sigma: f64) -> Tensor4 {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let k = normalize(gaussian_weights(radius, sigma));
    let s = t.shape();
    let (h, w, c) = (s.height, s.width, s.channels);
    let mut out = t.clone();
    out.par_frames_mut().enumerate().for_each(|(f, dst)| {
        let src = t.frame(f);
        let mut tmp = vec![0.0; src.len()];
        let r = radius as isize;
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for (j, kw) in k.iter().enumerate() {
                        let xx = reflect(x as isize + j as isize - r, w);
                        acc += kw * src[(y * w + xx) * c + ch];
                    }
                    tmp[(y * w + x) * c + ch] = acc;
                }
            }
        }
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for (j, kw) in k.iter().enumerate() {
                        let yy = reflect(y as isize + j as isize - r, h);
                        acc += kw * tmp[(yy * w + x) * c + ch];
                    }
                    dst[(y * w + x) * c + ch] = acc;
                }
            }
        }
    });
    out
}

/// Convolves every pixel's time series with the centred kernel `k` (odd
/// length). Taps falling outside the sequence are dropped and the remaining
/// weights renormalized, so constant sequences are fixed points.
pub fn convolve_temporal(t: &Tensor4, k: &[f64]) -> Tensor4 {
    let s = t.shape();
    let n = s.frame_len();
    let r = (k.len() / 2) as isize;
    let frames = s.frames as isize;
    let mut out = t.clone();
    out.par_frames_mut().enumerate().for_each(|(f, dst)| {
        let taps: Vec<(usize, f64)> = k
            .iter()
            .enumerate()
            .filter_map(|(j, &w)| {
                let g = f as isize + j as isize - r;
                (0..frames).contains(&g).then_some((g as usize, w))
            })
            .collect();
        let total: f64 = taps.iter().map(|(_, w)| w).sum();
        for (i, d) in dst.iter_mut().enumerate() {
            let mut acc = 0.0;
            for &(g, w) in &taps {
                acc += w * t.data()[g * n + i];
            }
            *d = acc / total;
        }
    });
    out
}
