//! Horn–Schunck optical flow with a coarse-to-fine pyramid, and backward
//! bilinear warping.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::blur_spatial;
use crate::tensor::{Shape, Tensor4, VideoTensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub alpha: f64,
    pub iterations: usize,
    pub levels: usize,
    /// Frames are standardized per frame and multiplied by this, which puts
    /// `alpha` on the usual 8-bit intensity scale.
    pub intensity_scale: f64,
    /// Gaussian presmoothing sigma in pixels at every level; 0 disables it.
    pub presmooth: f64,
    /// Re-linearizations per pyramid level.
    pub warps: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            iterations: 200,
            levels: 3,
            intensity_scale: 64.0,
            presmooth: 1.0,
            warps: 3,
        }
    }
}

/// Dense displacement per consecutive frame pair, `u` along x, `v` along y:
/// pixel `(x, y)` of frame `f` corresponds to `(x + u, y + v)` of frame `f + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub pairs: usize,
    pub height: usize,
    pub width: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FlowField {
    pub fn zeros(pairs: usize, height: usize, width: usize) -> Self {
        let n = pairs * height * width;
        Self {
            pairs,
            height,
            width,
            u: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn pair(&self, p: usize) -> (&[f64], &[f64]) {
        let n = self.height * self.width;
        (&self.u[p * n..(p + 1) * n], &self.v[p * n..(p + 1) * n])
    }
}

/// Plain 2-D single-channel image.
#[derive(Clone, Debug)]
pub(crate) struct Plane {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Plane {
    fn at(&self, y: isize, x: isize) -> f64 {
        let yy = y.clamp(0, self.h as isize - 1) as usize;
        let xx = x.clamp(0, self.w as isize - 1) as usize;
        self.data[yy * self.w + xx]
    }

    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.w - 1) as f64);
        let y = y.clamp(0.0, (self.h - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.w - 1), (y0 + 1).min(self.h - 1));
        let (ax, ay) = (x - x0 as f64, y - y0 as f64);
        let d = &self.data;
        let top = d[y0 * self.w + x0] * (1.0 - ax) + d[y0 * self.w + x1] * ax;
        let bot = d[y1 * self.w + x0] * (1.0 - ax) + d[y1 * self.w + x1] * ax;
        top * (1.0 - ay) + bot * ay
    }

    fn downsample(&self) -> Plane {
        let (h, w) = (self.h / 2, self.w / 2);
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let s = self.data[2 * y * self.w + 2 * x]
                    + self.data[2 * y * self.w + 2 * x + 1]
                    + self.data[(2 * y + 1) * self.w + 2 * x]
                    + self.data[(2 * y + 1) * self.w + 2 * x + 1];
                data.push(0.25 * s);
            }
        }
        Plane { h, w, data }
    }

    fn blurred(&self, sigma: f64) -> Plane {
        if sigma <= 0.0 {
            return self.clone();
        }
        let t = Tensor4::from_vec(Shape::new(1, self.h, self.w, 1), self.data.clone()).expect("plane layout");
        Plane {
            h: self.h,
            w: self.w,
            data: blur_spatial(&t, sigma).into_vec(),
        }
    }

    fn warped(&self, u: &[f64], v: &[f64]) -> Plane {
        let data = (0..self.h * self.w)
            .map(|i| self.sample((i % self.w) as f64 + u[i], (i / self.w) as f64 + v[i]))
            .collect();
        Plane {
            h: self.h,
            w: self.w,
            data,
        }
    }
}

fn standardized_luma(x: &VideoTensor, f: usize, scale: f64) -> Plane {
    let s = x.shape();
    let mut data = x.luma(f);
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let std = (data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let k = if std > 1e-12 { scale / std } else { 0.0 };
    data.iter_mut().for_each(|v| *v = (*v - mean) * k);
    Plane {
        h: s.height,
        w: s.width,
        data,
    }
}

fn smooth_avg(p: &[f64], h: usize, w: usize, y: usize, x: usize) -> f64 {
    let at = |dy: isize, dx: isize| {
        let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
        let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
        p[yy * w + xx]
    };
    (at(-1, 0) + at(1, 0) + at(0, -1) + at(0, 1)) / 6.0
        + (at(-1, -1) + at(-1, 1) + at(1, -1) + at(1, 1)) / 12.0
}

/// Horn–Schunck increment on one level, linearized around the current flow.
fn hs_level(i1: &Plane, i2: &Plane, u0: &[f64], v0: &[f64], cfg: &FlowConfig) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = (i1.h, i1.w);
    let i2w = i2.warped(u0, v0);
    let n = h * w;
    let (mut ix, mut iy, mut it) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for y in 0..h {
        for x in 0..w {
            let (yi, xi) = (y as isize, x as isize);
            let gx = |p: &Plane| 0.5 * (p.at(yi, xi + 1) - p.at(yi, xi - 1));
            let gy = |p: &Plane| 0.5 * (p.at(yi + 1, xi) - p.at(yi - 1, xi));
            let i = y * w + x;
            ix[i] = 0.5 * (gx(i1) + gx(&i2w));
            iy[i] = 0.5 * (gy(i1) + gy(&i2w));
            it[i] = i2w.data[i] - i1.data[i];
        }
    }
    let a2 = cfg.alpha * cfg.alpha;
    // Iterate on the total flow so the smoothness term acts on it.
    let mut u = u0.to_vec();
    let mut v = v0.to_vec();
    let mut nu = vec![0.0; n];
    let mut nv = vec![0.0; n];
    for _ in 0..cfg.iterations {
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let ub = smooth_avg(&u, h, w, y, x);
                let vb = smooth_avg(&v, h, w, y, x);
                let r = ix[i] * (ub - u0[i]) + iy[i] * (vb - v0[i]) + it[i];
                let k = r / (a2 + ix[i] * ix[i] + iy[i] * iy[i]);
                nu[i] = ub - ix[i] * k;
                nv[i] = vb - iy[i] * k;
            }
        }
        std::mem::swap(&mut u, &mut nu);
        std::mem::swap(&mut v, &mut nv);
    }
    (u, v)
}

fn upsample_flow(f: &[f64], h: usize, w: usize, nh: usize, nw: usize) -> Vec<f64> {
    let p = Plane {
        h,
        w,
        data: f.to_vec(),
    };
    let mut out = Vec::with_capacity(nh * nw);
    for y in 0..nh {
        for x in 0..nw {
            let sx = (x as f64 + 0.5) / 2.0 - 0.5;
            let sy = (y as f64 + 0.5) / 2.0 - 0.5;
            out.push(2.0 * p.sample(sx, sy));
        }
    }
    out
}

pub(crate) fn flow_planes(i1: &Plane, i2: &Plane, cfg: &FlowConfig) -> (Vec<f64>, Vec<f64>) {
    let mut pyr = vec![(i1.blurred(cfg.presmooth), i2.blurred(cfg.presmooth))];
    for _ in 1..cfg.levels.max(1) {
        let (a, b) = pyr.last().unwrap();
        if a.h < 16 || a.w < 16 {
            break;
        }
        pyr.push((a.downsample().blurred(cfg.presmooth), b.downsample().blurred(cfg.presmooth)));
    }
    let top = pyr.last().unwrap();
    let (mut u, mut v) = (vec![0.0; top.0.h * top.0.w], vec![0.0; top.0.h * top.0.w]);
    let (mut h, mut w) = (top.0.h, top.0.w);
    for (lvl, (a, b)) in pyr.iter().enumerate().rev() {
        if lvl + 1 < pyr.len() {
            u = upsample_flow(&u, h, w, a.h, a.w);
            v = upsample_flow(&v, h, w, a.h, a.w);
            h = a.h;
            w = a.w;
        }
        for _ in 0..cfg.warps.max(1) {
            let (nu, nv) = hs_level(a, b, &u, &v, cfg);
            u = nu;
            v = nv;
        }
    }
    (u, v)
}

/// Flow between every pair of consecutive frames.
pub fn estimate_flow(x: &VideoTensor, cfg: &FlowConfig) -> Result<FlowField> {
    let s = x.shape();
    if s.frames < 2 {
        return Err(Error::TooFewFrames {
            needed: 2,
            got: s.frames,
        });
    }
    let planes: Vec<Plane> = (0..s.frames)
        .into_par_iter()
        .map(|f| standardized_luma(x, f, cfg.intensity_scale))
        .collect();
    let flows: Vec<(Vec<f64>, Vec<f64>)> = (0..s.frames - 1)
        .into_par_iter()
        .map(|p| flow_planes(&planes[p], &planes[p + 1], cfg))
        .collect();
    let mut out = FlowField::zeros(s.frames - 1, s.height, s.width);
    let n = s.pixels();
    for (p, (u, v)) in flows.into_iter().enumerate() {
        out.u[p * n..(p + 1) * n].copy_from_slice(&u);
        out.v[p * n..(p + 1) * n].copy_from_slice(&v);
    }
    Ok(out)
}

/// Samples `frame` (single channel, `h x w`) at `(x + u, y + v)` bilinearly,
/// clamping at the border.
pub fn warp_backward(frame: &[f64], h: usize, w: usize, u: &[f64], v: &[f64]) -> Vec<f64> {
    Plane {
        h,
        w,
        data: frame.to_vec(),
    }
    .warped(u, v)
    .data
}

/// Mean `|u_a - u_b| + |v_a - v_b|` between the flows of two videos.
pub fn motion_flow_l1(a: &VideoTensor, b: &VideoTensor, cfg: &FlowConfig) -> Result<f64> {
    a.expect_shape(b.shape())?;
    if a == b {
        return Ok(0.0);
    }
    let (fa, fb) = (estimate_flow(a, cfg)?, estimate_flow(b, cfg)?);
    Ok(flow_l1_series(&fa, &fb).iter().sum::<f64>() / fa.pairs as f64)
}

/// Per-pair mean L1 flow difference.
pub fn flow_l1_series(a: &FlowField, b: &FlowField) -> Vec<f64> {
    let n = (a.height * a.width) as f64;
    (0..a.pairs)
        .map(|p| {
            let ((ua, va), (ub, vb)) = (a.pair(p), b.pair(p));
            ua.iter()
                .zip(ub)
                .zip(va.iter().zip(vb))
                .map(|((x, y), (s, t))| (x - y).abs() + (s - t).abs())
                .sum::<f64>()
                / n
        })
        .collect()
}
