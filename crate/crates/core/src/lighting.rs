use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Directional light plus ambient term.
///
/// `direction` is expressed in the reference camera frame (yaw 0), so the
/// light stays fixed in the world while the camera sweeps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightingSpec {
    direction: [f64; 3],
    intensity: f64,
    ambient: f64,
    label: String,
}

/// Prompt label to direction table. Directions are normalized on use.
const LABELS: &[(&str, [f64; 3])] = &[
    ("Left", [-1.0, 0.0, 0.3]),
    ("Right", [1.0, 0.0, 0.3]),
    ("Top", [0.0, 1.0, 0.3]),
    ("Bottom", [0.0, -1.0, 0.3]),
    ("Front", [0.0, 0.0, 1.0]),
    ("Sunlight", [0.4, 0.8, 0.45]),
];

impl LightingSpec {
    pub fn new(direction: [f64; 3], intensity: f64, ambient: f64, label: impl Into<String>) -> Result<Self> {
        let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::config(format!("light direction {direction:?} has no length")));
        }
        if !(intensity.is_finite() && intensity >= 0.0) {
            return Err(Error::config(format!("light intensity {intensity} must be >= 0")));
        }
        if !(0.0..=1.0).contains(&ambient) {
            return Err(Error::config(format!("ambient {ambient} outside [0, 1]")));
        }
        Ok(Self {
            direction: direction.map(|v| v / norm),
            intensity,
            ambient,
            label: label.into(),
        })
    }

    /// Looks `label` up in the fixed prompt table (case-insensitive).
    pub fn from_label(label: &str, intensity: f64, ambient: f64) -> Result<Self> {
        let (name, dir) = LABELS
            .iter()
            .find(|(name, _)| name.eq_ignore_ascii_case(label))
            .ok_or_else(|| {
                let known: Vec<_> = LABELS.iter().map(|(n, _)| *n).collect();
                Error::config(format!("unknown lighting label {label:?}; known: {known:?}"))
            })?;
        Self::new(*dir, intensity, ambient, *name)
    }

    pub fn known_labels() -> impl Iterator<Item = &'static str> {
        LABELS.iter().map(|(n, _)| *n)
    }

    pub fn direction(&self) -> [f64; 3] {
        self.direction
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    pub fn ambient(&self) -> f64 {
        self.ambient
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}
