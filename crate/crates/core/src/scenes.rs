//! Procedural orthographic scenes with analytic buffers and ground truth.
//!
//! World space is the camera frame at yaw 0: x right, y up, z towards the
//! viewer. A camera at yaw θ orbits the vertical axis, so camera-space
//! vectors are `R_y(-θ) v_world`. Lights are fixed in world space.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CameraTrajectory;
use crate::error::{Error, Result};
use crate::io::{save_dump, write_frames, FrameFormat};
use crate::lighting::LightingSpec;
use crate::priors::SceneBuffers;
use crate::tensor::{Shape, Tensor4, VideoTensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    Sphere,
    TexturedPlane,
    TwoSpheres,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlbedoPattern {
    Constant,
    Checker,
    Gradient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub yaw_start: f64,
    pub yaw_end: f64,
    pub albedo: AlbedoPattern,
    /// Peak horizontal object translation in pixels (one sine period over the clip).
    pub motion_amplitude: f64,
    pub background: f64,
    pub color: bool,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            kind: SceneKind::Sphere,
            height: 64,
            width: 64,
            frames: 16,
            yaw_start: -15.0,
            yaw_end: 15.0,
            albedo: AlbedoPattern::Checker,
            motion_amplitude: 3.0,
            background: 0.1,
            color: true,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.frames == 0 {
            return Err(Error::config("scene needs positive resolution and frame count"));
        }
        if self.yaw_start.abs() > 90.0 || self.yaw_end.abs() > 90.0 {
            return Err(Error::config(format!(
                "scene yaw {}..{} leaves [-90, 90]",
                self.yaw_start, self.yaw_end
            )));
        }
        if !(0.0..=1.0).contains(&self.background) {
            return Err(Error::config("scene background must be in [0, 1]"));
        }
        Ok(())
    }

    pub fn trajectory(&self) -> Result<CameraTrajectory> {
        CameraTrajectory::linear(self.yaw_start, self.yaw_end, self.frames)
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.frames, self.height, self.width, if self.color { 3 } else { 1 })
    }

    pub fn sphere_radius(&self) -> f64 {
        0.375 * self.height.min(self.width) as f64
    }

    /// Object translation along world x at frame `f`.
    pub fn offset(&self, f: usize) -> f64 {
        self.motion_amplitude * (2.0 * std::f64::consts::PI * f as f64 / self.frames as f64).sin()
    }
}

const TINT: [f64; 3] = [1.0, 0.85, 0.7];

fn albedo_at(pattern: AlbedoPattern, uv: [f64; 2], channel: usize, color: bool) -> f64 {
    let a = match pattern {
        AlbedoPattern::Constant => 0.7,
        AlbedoPattern::Checker => {
            let cell = (uv[0] * 8.0).floor() as i64 + (uv[1] * 4.0).floor() as i64;
            if cell.rem_euclid(2) == 0 {
                0.85
            } else {
                0.35
            }
        }
        AlbedoPattern::Gradient => 0.3 + 0.6 * uv[0],
    };
    if color {
        a * TINT[channel]
    } else {
        a
    }
}

fn rot_y(a: f64, v: [f64; 3]) -> [f64; 3] {
    let (s, c) = a.sin_cos();
    [c * v[0] + s * v[2], v[1], -s * v[0] + c * v[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Per-pixel rasterization result.
#[derive(Clone, Copy, Debug, Default)]
struct Hit {
    normal_cam: [f64; 3],
    normal_world: [f64; 3],
    point_world: [f64; 3],
    depth: f64,
    uv: [f64; 2],
}

fn sphere_uv(n_obj: [f64; 3]) -> [f64; 2] {
    let u = n_obj[0].atan2(n_obj[2]) / (2.0 * std::f64::consts::PI) + 0.5;
    let v = n_obj[1].clamp(-1.0, 1.0).acos() / std::f64::consts::PI;
    [u.rem_euclid(1.0), v.min(1.0 - 1e-12)]
}

fn hit_sphere(center_w: [f64; 3], radius: f64, yaw: f64, p: [f64; 2], u_shift: f64) -> Option<Hit> {
    let c = rot_y(-yaw, center_w);
    let (dx, dy) = ((p[0] - c[0]) / radius, (p[1] - c[1]) / radius);
    let r2 = dx * dx + dy * dy;
    if r2 >= 1.0 {
        return None;
    }
    let nz = (1.0 - r2).sqrt();
    let normal_cam = [dx, dy, nz];
    let normal_world = rot_y(yaw, normal_cam);
    let depth = c[2] + radius * nz;
    let point_cam = [p[0], p[1], depth];
    let mut uv = sphere_uv(normal_world);
    uv[0] = (uv[0] + u_shift).rem_euclid(1.0);
    Some(Hit {
        normal_cam,
        normal_world,
        point_world: rot_y(yaw, point_cam),
        depth,
        uv,
    })
}

fn hit_plane(half: f64, offset: f64, yaw: f64, p: [f64; 2]) -> Option<Hit> {
    let cos = yaw.cos();
    if cos < 1e-6 {
        return None;
    }
    // Plane z = 0 in world; camera x = X cos θ, depth = X sin θ.
    let xw = p[0] / cos;
    let (xo, yo) = (xw - offset, p[1]);
    if xo.abs() >= half || yo.abs() >= half {
        return None;
    }
    let point_world = [xw, p[1], 0.0];
    let point_cam = rot_y(-yaw, point_world);
    Some(Hit {
        normal_cam: rot_y(-yaw, [0.0, 0.0, 1.0]),
        normal_world: [0.0, 0.0, 1.0],
        point_world,
        depth: point_cam[2],
        uv: [(xo / half + 1.0) * 0.5, (1.0 - yo / half) * 0.5],
    })
}

fn rasterize(spec: &SceneSpec, yaw: f64, f: usize, y: usize, x: usize) -> Option<Hit> {
    let p = [
        x as f64 + 0.5 - spec.width as f64 / 2.0,
        spec.height as f64 / 2.0 - (y as f64 + 0.5),
    ];
    let off = spec.offset(f);
    let m = spec.height.min(spec.width) as f64;
    match spec.kind {
        SceneKind::Sphere => hit_sphere([off, 0.0, 0.0], spec.sphere_radius(), yaw, p, 0.0),
        SceneKind::TexturedPlane => hit_plane(0.4 * m, off, yaw, p),
        SceneKind::TwoSpheres => {
            let r = 0.2 * m;
            let a = hit_sphere([-0.24 * m + off, 0.05 * m, 0.0], r, yaw, p, 0.0);
            let b = hit_sphere([0.24 * m - off, -0.05 * m, -0.1 * m], r, yaw, p, 0.5);
            match (a, b) {
                (Some(a), Some(b)) => Some(if a.depth >= b.depth { a } else { b }),
                (a, b) => a.or(b),
            }
        }
    }
}

/// Rendered sequence with the buffers it was shaded from.
#[derive(Clone, Debug)]
pub struct RenderedScene {
    pub spec: SceneSpec,
    pub trajectory: CameraTrajectory,
    pub light: LightingSpec,
    pub video: VideoTensor,
    pub buffers: SceneBuffers,
    /// Camera-space unit normals, `[f][y][x]`.
    pub normals_camera: Vec<[f64; 3]>,
    /// World-space surface points, `[f][y][x]`.
    pub points: Vec<[f64; 3]>,
    /// Camera-space depth (towards the viewer), `[f][y][x]`.
    pub depth: Vec<f64>,
}

/// Renders `spec` along its own yaw sweep.
pub fn render(spec: &SceneSpec, light: &LightingSpec) -> Result<RenderedScene> {
    render_with(spec, &spec.trajectory()?, light)
}

/// Renders `spec` along an explicit trajectory.
pub fn render_with(spec: &SceneSpec, trajectory: &CameraTrajectory, light: &LightingSpec) -> Result<RenderedScene> {
    spec.validate()?;
    if trajectory.frames() != spec.frames {
        return Err(Error::FrameCountMismatch {
            left: spec.frames,
            right: trajectory.frames(),
        });
    }
    let shape = spec.shape();
    let px = shape.pixels();
    let hits: Vec<Option<Hit>> = (0..spec.frames * px)
        .into_par_iter()
        .map(|i| {
            let (f, p) = (i / px, i % px);
            rasterize(spec, trajectory.yaw_rad(f), f, p / spec.width, p % spec.width)
        })
        .collect();

    let mask: Vec<bool> = hits.iter().map(Option::is_some).collect();
    let get = |g: fn(&Hit) -> [f64; 3]| -> Vec<[f64; 3]> { hits.iter().map(|h| h.as_ref().map(g).unwrap_or_default()).collect() };
    let normals_world = get(|h| h.normal_world);
    let normals_camera = get(|h| h.normal_cam);
    let points = get(|h| h.point_world);
    let uv: Vec<[f64; 2]> = hits.iter().map(|h| h.map(|h| h.uv).unwrap_or_default()).collect();
    let depth: Vec<f64> = hits.iter().map(|h| h.map(|h| h.depth).unwrap_or(f64::NEG_INFINITY)).collect();
    let albedo = Tensor4::from_fn(shape, |f, y, x, c| {
        let i = f * px + y * spec.width + x;
        if mask[i] {
            albedo_at(spec.albedo, uv[i], c, spec.color)
        } else {
            0.0
        }
    });

    let mut scene = RenderedScene {
        spec: spec.clone(),
        trajectory: trajectory.clone(),
        light: light.clone(),
        video: VideoTensor::zeros(shape)?,
        buffers: SceneBuffers {
            shape,
            normals: normals_world,
            albedo,
            mask,
            uv,
            background: spec.background,
        },
        normals_camera,
        points,
        depth,
    };
    scene.video = scene.relit(light)?;
    Ok(scene)
}

impl RenderedScene {
    /// Ground-truth render under `light`, shaded in camera space.
    pub fn relit(&self, light: &LightingSpec) -> Result<VideoTensor> {
        let shape = self.buffers.shape;
        let px = shape.pixels();
        let (intensity, ambient) = (light.intensity(), light.ambient());
        VideoTensor::from_fn(shape, |f, y, x, c| {
            let i = f * px + y * shape.width + x;
            if !self.buffers.mask[i] {
                return self.buffers.background;
            }
            let l_cam = rot_y(-self.trajectory.yaw_rad(f), light.direction());
            let a = self.buffers.albedo.get(f, y, x, c);
            let lit = a * (dot(self.normals_camera[i], l_cam).max(0.0) * intensity + ambient);
            lit.clamp(0.0, 1.0)
        })
    }

    pub fn shape(&self) -> Shape {
        self.buffers.shape
    }

    /// Writes frames plus tensor dumps of the normals, albedo, mask and depth.
    pub fn export(&self, dir: &Path, format: FrameFormat) -> Result<()> {
        write_frames(&dir.join("frames"), &self.video, format)?;
        let s = self.shape();
        let per_pixel = |ch: usize, f: &dyn Fn(usize) -> Vec<f64>| -> Result<Tensor4> {
            Tensor4::from_vec(
                Shape::new(s.frames, s.height, s.width, ch),
                (0..s.frames * s.pixels()).flat_map(f).collect(),
            )
        };
        save_dump(&dir.join("normals.l4dt"), &per_pixel(3, &|i| self.buffers.normals[i].to_vec())?)?;
        save_dump(&dir.join("albedo.l4dt"), &self.buffers.albedo)?;
        save_dump(
            &dir.join("mask.l4dt"),
            &per_pixel(1, &|i| vec![if self.buffers.mask[i] { 1.0 } else { 0.0 }])?,
        )?;
        save_dump(
            &dir.join("depth.l4dt"),
            &per_pixel(1, &|i| vec![if self.buffers.mask[i] { self.depth[i] } else { 0.0 }])?,
        )?;
        Ok(())
    }
}

/// Resamples `source` into the views of `target` through the known scene
/// geometry: each target pixel's surface point is projected into the source
/// camera of the same frame and sampled bilinearly. Pixels not visible in the
/// source keep the source value at the same image position. Returns the warped
/// video and the co-visibility mask.
pub fn reproject(source: &RenderedScene, target: &RenderedScene) -> Result<(VideoTensor, Vec<bool>)> {
    let s = target.shape();
    source.video.expect_shape(s)?;
    let px = s.pixels();
    let (h, w) = (s.height as f64, s.width as f64);
    let covisible: Vec<bool> = (0..s.frames * px)
        .map(|i| {
            if !target.buffers.mask[i] {
                return false;
            }
            let f = i / px;
            let p = rot_y(-source.trajectory.yaw_rad(f), target.points[i]);
            let (sx, sy) = (p[0] + w / 2.0 - 0.5, h / 2.0 - p[1] - 0.5);
            let (nx, ny) = (sx.round(), sy.round());
            if nx < 0.0 || ny < 0.0 || nx >= w || ny >= h {
                return false;
            }
            let j = f * px + ny as usize * s.width + nx as usize;
            source.buffers.mask[j] && (source.depth[j] - p[2]).abs() < 1.5
        })
        .collect();
    let out = VideoTensor::from_fn(s, |f, y, x, c| {
        let i = f * px + y * s.width + x;
        if !covisible[i] {
            return source.video.get(f, y, x, c);
        }
        let p = rot_y(-source.trajectory.yaw_rad(f), target.points[i]);
        let (sx, sy) = (p[0] + w / 2.0 - 0.5, h / 2.0 - p[1] - 0.5);
        bilinear(&source.video, f, sx, sy, c)
    })?;
    Ok((out, covisible))
}

fn bilinear(v: &Tensor4, f: usize, x: f64, y: f64, c: usize) -> f64 {
    let s = v.shape();
    let x = x.clamp(0.0, (s.width - 1) as f64);
    let y = y.clamp(0.0, (s.height - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(s.width - 1), (y0 + 1).min(s.height - 1));
    let (ax, ay) = (x - x0 as f64, y - y0 as f64);
    let top = v.get(f, y0, x0, c) * (1.0 - ax) + v.get(f, y0, x1, c) * ax;
    let bot = v.get(f, y1, x0, c) * (1.0 - ax) + v.get(f, y1, x1, c) * ax;
    top * (1.0 - ay) + bot * ay
}
