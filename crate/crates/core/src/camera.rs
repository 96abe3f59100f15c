use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sweep ranges the benchmark presets use, in degrees.
pub const SUPPORTED_RANGES: [u32; 3] = [30, 90, 180];

/// Per-frame camera yaw about the vertical axis, in degrees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraTrajectory {
    yaw_deg: Vec<f64>,
}

impl CameraTrajectory {
    pub fn new(yaw_deg: Vec<f64>) -> Result<Self> {
        if yaw_deg.is_empty() {
            return Err(Error::InvalidArgument("trajectory needs at least one frame".into()));
        }
        if let Some(bad) = yaw_deg.iter().find(|y| !(y.abs() <= 90.0)) {
            return Err(Error::InvalidArgument(format!("yaw {bad} outside [-90, 90]")));
        }
        Ok(Self { yaw_deg })
    }

    /// Every frame at yaw 0.
    pub fn fixed(frames: usize) -> Result<Self> {
        Self::new(vec![0.0; frames])
    }

    /// Linear yaw from `start` to `end` across `frames` frames.
    pub fn linear(start: f64, end: f64, frames: usize) -> Result<Self> {
        if frames == 1 {
            return Self::new(vec![start]);
        }
        let step = (end - start) / (frames - 1) as f64;
        let mut yaws: Vec<f64> = (0..frames).map(|i| start + step * i as f64).collect();
        // Land exactly on the endpoint.
        if let Some(last) = yaws.last_mut() {
            *last = end;
        }
        Self::new(yaws)
    }

    pub fn frames(&self) -> usize {
        self.yaw_deg.len()
    }

    pub fn yaw_deg(&self) -> &[f64] {
        &self.yaw_deg
    }

    pub fn yaw_rad(&self, f: usize) -> f64 {
        self.yaw_deg[f].to_radians()
    }

    /// World-to-camera `[R | 0]` for frame `f`.
    pub fn pose(&self, f: usize) -> [[f64; 4]; 3] {
        let (s, c) = self.yaw_rad(f).sin_cos();
        // Camera rotated by +yaw sees the world rotated by -yaw.
        [[c, 0.0, -s, 0.0], [0.0, 1.0, 0.0, 0.0], [s, 0.0, c, 0.0]]
    }

    pub fn is_monotone(&self) -> bool {
        let w = &self.yaw_deg;
        w.windows(2).all(|p| p[0] <= p[1]) || w.windows(2).all(|p| p[0] >= p[1])
    }
}

/// Symmetric linear sweep covering `range_deg` degrees.
pub fn camera_sweep(range_deg: u32, frames: usize) -> Result<CameraTrajectory> {
    if !SUPPORTED_RANGES.contains(&range_deg) {
        return Err(Error::InvalidArgument(format!(
            "sweep range {range_deg} not in {SUPPORTED_RANGES:?}"
        )));
    }
    if frames < 2 {
        return Err(Error::TooFewFrames {
            needed: 2,
            got: frames,
        });
    }
    let half = f64::from(range_deg) / 2.0;
    CameraTrajectory::linear(-half, half, frames)
}
