//! Run configuration: one TOML document covering the scene, lights, solver
//! and every regularizer. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coherence::{FdiConfig, PostSmoothConfig};
use crate::error::{Error, Result};
use crate::guidance::Toggles;
use crate::io::FrameFormat;
use crate::lighting::LightingSpec;
use crate::metrics::FlowConfig;
use crate::priors::{GeometricMode, IdentityCodec, LatentCodec, PoolCodec, RelightParams};
use crate::scenes::SceneSpec;
use crate::schedule::{FusionSchedule, SigmaForm, StepPlan};
use crate::tca::TcaConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightConfig {
    /// Named direction; ignored when `direction` is given.
    #[serde(default)]
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<[f64; 3]>,
    pub intensity: f64,
    pub ambient: f64,
}

impl LightConfig {
    pub fn named(label: &str, intensity: f64, ambient: f64) -> Self {
        Self {
            label: label.into(),
            direction: None,
            intensity,
            ambient,
        }
    }

    pub fn to_spec(&self) -> Result<LightingSpec> {
        match self.direction {
            Some(d) => LightingSpec::new(d, self.intensity, self.ambient, self.label.clone()),
            None => LightingSpec::from_label(&self.label, self.intensity, self.ambient),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    #[default]
    FourPhase,
    /// Zero for the first 60% of the steps, then linear to `lambda_max`.
    TwoPhase,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub tau_g: f64,
    pub tau_r: f64,
    pub tau_s: f64,
    pub lambda_max: f64,
    pub lambda_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::FourPhase,
            tau_g: 0.7,
            tau_r: 0.5,
            tau_s: 0.2,
            lambda_max: 0.5,
            lambda_end: 0.25,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CodecConfig {
    #[default]
    Identity,
    Pool { factor: usize },
}

impl CodecConfig {
    pub fn build(&self, video_channels: usize) -> Result<Box<dyn LatentCodec>> {
        Ok(match *self {
            CodecConfig::Identity => Box::new(IdentityCodec),
            CodecConfig::Pool { factor } => Box::new(PoolCodec::new(factor, video_channels)?),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub steps: usize,
    pub sigma_form: SigmaForm,
    pub delta: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            steps: 25,
            sigma_form: SigmaForm::Linear,
            delta: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub frame_format: FrameFormat,
    pub scene: SceneSpec,
    pub source_light: LightConfig,
    pub target_light: LightConfig,
    pub schedule: ScheduleConfig,
    pub solver: SolverConfig,
    pub geometric: GeometricMode,
    pub codec: CodecConfig,
    pub relight: RelightParams,
    pub tca: TcaConfig,
    pub fdi: FdiConfig,
    pub post_smooth: PostSmoothConfig,
    pub flow: FlowConfig,
    pub toggles: Toggles,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: None,
            frame_format: FrameFormat::Png,
            scene: SceneSpec::default(),
            source_light: LightConfig::named("Front", 0.8, 0.2),
            target_light: LightConfig::named("Left", 1.0, 0.1),
            schedule: ScheduleConfig::default(),
            solver: SolverConfig::default(),
            geometric: GeometricMode::default(),
            codec: CodecConfig::default(),
            relight: RelightParams::default(),
            tca: TcaConfig::default(),
            fdi: FdiConfig::default(),
            post_smooth: PostSmoothConfig::default(),
            flow: FlowConfig::default(),
            toggles: Toggles::default(),
        }
    }
}

const PRESET_30: &str = include_str!("../presets/preset_30.toml");
const PRESET_90: &str = include_str!("../presets/preset_90.toml");
const PRESET_180: &str = include_str!("../presets/preset_180.toml");

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Built-in configuration for a camera sweep of `range_deg` degrees.
    pub fn preset(range_deg: u32) -> Result<Self> {
        let text = match range_deg {
            30 => PRESET_30,
            90 => PRESET_90,
            180 => PRESET_180,
            other => {
                return Err(Error::config(format!("no preset for a {other} degree sweep; use 30, 90 or 180")));
            }
        };
        Self::from_toml_str(text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn fusion_schedule(&self) -> Result<FusionSchedule> {
        let s = &self.schedule;
        match s.kind {
            ScheduleKind::FourPhase => FusionSchedule::four_phase(s.tau_g, s.tau_r, s.tau_s, s.lambda_max, s.lambda_end),
            ScheduleKind::TwoPhase => FusionSchedule::two_phase(self.solver.steps, s.lambda_max),
        }
    }

    pub fn step_plan(&self) -> Result<StepPlan> {
        StepPlan::new(self.solver.steps, self.solver.sigma_form, self.solver.delta)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.source_light.to_spec()?;
        self.target_light.to_spec()?;
        self.fusion_schedule()?;
        self.step_plan()?;
        self.relight.validate()?;
        self.tca.validate()?;
        self.fdi.validate()?;
        self.post_smooth.validate()?;
        if let GeometricMode::Shrinkage { softness } = self.geometric {
            if !(softness > 0.0) {
                return Err(Error::config("geometric softness must be > 0"));
            }
        }
        let shape = self.scene.shape();
        let p = self.relight.patch;
        if shape.height % p != 0 || shape.width % p != 0 {
            return Err(Error::config(format!(
                "scene {}x{} is not divisible into {p}x{p} relight patches",
                shape.height, shape.width
            )));
        }
        self.codec.build(shape.channels)?.latent_shape(shape)?;
        if shape.frames < 3 {
            return Err(Error::config("runs need at least 3 frames for the temporal metrics"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_with_expected_sweeps() {
        for (range, half) in [(30, 15.0), (90, 45.0), (180, 90.0)] {
            let cfg = RunConfig::preset(range).unwrap();
            assert_eq!(cfg.scene.yaw_start, -half);
            assert_eq!(cfg.scene.yaw_end, half);
        }
        assert!(RunConfig::preset(45).is_err());
    }

    #[test]
    fn full_scale_preset_parses() {
        let cfg = RunConfig::from_toml_str(include_str!("../presets/full_scale.toml")).unwrap();
        assert_eq!((cfg.scene.height, cfg.scene.frames), (384, 49));
    }

    #[test]
    fn default_matches_small_preset() {
        assert_eq!(RunConfig::preset(30).unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trip_through_toml() {
        let mut cfg = RunConfig::preset(90).unwrap();
        cfg.output_dir = Some("somewhere".into());
        cfg.toggles.disable_fdi = true;
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml_str("seed = 1\nbogus = 2\n").is_err());
        assert!(RunConfig::from_toml_str("[schedule]\ntau_q = 0.3\n").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml_str("[schedule]\ntau_g = 0.4\n").is_err());
        assert!(RunConfig::from_toml_str("[scene]\nheight = 62\n").is_err());
        assert!(RunConfig::from_toml_str("[target_light]\nlabel = \"Nowhere\"\nintensity = 1.0\nambient = 0.1\n").is_err());
    }
}
