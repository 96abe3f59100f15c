//! End-to-end orchestration: scene preparation, solver execution, reports,
//! artifact export and the ablation drivers built on top of them.

use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};

use crate::camera::CameraTrajectory;
use crate::coherence::adaptive_temporal_smooth;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::guidance::{init_latent, run_inference, GuidanceRun, StepTrace};
use crate::io::write_frames;
use crate::metrics::{compute_report_with, estimate_flow, FlowField, MetricReport};
use crate::priors::{LambertianRelightPrior, LinearGeometricPrior, PriorBundle};
use crate::scenes::{render_with, reproject, RenderedScene};
use crate::tensor::VideoTensor;

/// Everything derived from the scene before the solver runs.
pub struct Prepared {
    /// Static camera at yaw 0 under the source light.
    pub source: RenderedScene,
    /// Target trajectory under the source light.
    pub geometry: RenderedScene,
    /// Target trajectory under the target light.
    pub truth: VideoTensor,
    /// Source resampled into the target views.
    pub warped: VideoTensor,
    pub covisible: Vec<bool>,
    pub geometry_flow: FlowField,
    pub truth_flow: FlowField,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let spec = &cfg.scene;
    let source_light = cfg.source_light.to_spec()?;
    let source = render_with(spec, &CameraTrajectory::fixed(spec.frames)?, &source_light)?;
    let geometry = render_with(spec, &spec.trajectory()?, &source_light)?;
    let truth = geometry.relit(&cfg.target_light.to_spec()?)?;
    let (warped, covisible) = reproject(&source, &geometry)?;
    let geometry_flow = estimate_flow(&geometry.video, &cfg.flow)?;
    let truth_flow = estimate_flow(&truth, &cfg.flow)?;
    Ok(Prepared {
        source,
        geometry,
        truth,
        warped,
        covisible,
        geometry_flow,
        truth_flow,
    })
}

pub fn build_run(cfg: &RunConfig, prepared: &Prepared) -> Result<GuidanceRun> {
    cfg.validate()?;
    let shape = prepared.geometry.shape();
    let codec = cfg.codec.build(shape.channels)?;
    let target = codec.encode(&prepared.geometry.video)?;
    let geometric = LinearGeometricPrior::new(target, cfg.geometric)?;
    let relight = LambertianRelightPrior::new(prepared.geometry.buffers.clone(), cfg.relight.clone())?;
    Ok(GuidanceRun {
        priors: PriorBundle {
            geometric: Box::new(geometric),
            relight: Box::new(relight),
            codec,
        },
        schedule: cfg.fusion_schedule()?,
        plan: cfg.step_plan()?,
        lighting: cfg.target_light.to_spec()?,
        tca: cfg.tca,
        fdi: cfg.fdi,
        toggles: cfg.toggles,
        video_shape: shape,
        seed: cfg.seed,
    })
}

pub struct RunOutcome {
    pub video: VideoTensor,
    pub trace: StepTrace,
    /// Against the source appearance rendered along the target trajectory.
    pub report_source: MetricReport,
    /// Against the analytic relit render.
    pub report_truth: MetricReport,
}

pub fn execute(cfg: &RunConfig) -> Result<RunOutcome> {
    let prepared = prepare(cfg)?;
    execute_prepared(cfg, &prepared)
}

pub fn execute_prepared(cfg: &RunConfig, prepared: &Prepared) -> Result<RunOutcome> {
    let run = build_run(cfg, prepared)?;
    let z_init = init_latent(&prepared.warped, run.priors.codec.as_ref(), run.plan.sigma(0), cfg.seed)?;
    let (mut video, trace) = run_inference(&run, &z_init)?;
    let ps = &cfg.post_smooth;
    if ps.enabled {
        video = adaptive_temporal_smooth(&video, ps.window, ps.sigma, ps.gate_threshold)?.clamp01();
    }
    video.assert_finite()?;
    let flow = estimate_flow(&video, &cfg.flow)?;
    let report_source = compute_report_with(&video, &prepared.geometry.video, &flow, &prepared.geometry_flow)?;
    let report_truth = compute_report_with(&video, &prepared.truth, &flow, &prepared.truth_flow)?;
    info!(
        "run seed {}: flicker {:.3e}, hfpr {:.3}, flow l1 {:.3}, psnr vs truth {:.2}",
        cfg.seed, report_source.flicker_energy, report_source.hfpr, report_source.motion_flow_l1, report_truth.frame_psnr
    );
    Ok(RunOutcome {
        video,
        trace,
        report_source,
        report_truth,
    })
}

/// Writes frames, the step trace, both reports and the effective config.
pub fn write_artifacts(cfg: &RunConfig, outcome: &RunOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_frames(&dir.join("frames"), &outcome.video, cfg.frame_format)?;
    outcome.trace.write_csv(&dir.join("trace.csv"))?;
    outcome.report_source.write_json(&dir.join("report_source.json"))?;
    outcome.report_source.write_series_csv(&dir.join("series_source.csv"))?;
    outcome.report_truth.write_json(&dir.join("report_truth.json"))?;
    outcome.report_truth.write_series_csv(&dir.join("series_truth.csv"))?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml_string()?)?;
    Ok(())
}

/// Ablation arms: the full method and each single removal, plus all
/// coherence components removed together.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationArm {
    Full,
    WithoutCla,
    WithoutDga,
    WithoutFdi,
    WithoutCni,
    WithoutGmm,
    WithoutAll,
}

impl AblationArm {
    pub const ALL: [AblationArm; 7] = [
        AblationArm::Full,
        AblationArm::WithoutCla,
        AblationArm::WithoutDga,
        AblationArm::WithoutFdi,
        AblationArm::WithoutCni,
        AblationArm::WithoutGmm,
        AblationArm::WithoutAll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationArm::Full => "full",
            AblationArm::WithoutCla => "w/o CLA",
            AblationArm::WithoutDga => "w/o DGA",
            AblationArm::WithoutFdi => "w/o FDI",
            AblationArm::WithoutCni => "w/o CNI",
            AblationArm::WithoutGmm => "w/o GMM",
            AblationArm::WithoutAll => "w/o All",
        }
    }

    pub fn apply(self, cfg: &RunConfig) -> RunConfig {
        let mut out = cfg.clone();
        let t = &mut out.toggles;
        match self {
            AblationArm::Full => {}
            AblationArm::WithoutCla => t.disable_tca = true,
            AblationArm::WithoutDga => t.disable_dfg = true,
            AblationArm::WithoutFdi => t.disable_fdi = true,
            AblationArm::WithoutCni => t.disable_cni = true,
            AblationArm::WithoutGmm => t.disable_gmm = true,
            AblationArm::WithoutAll => {
                t.disable_tca = true;
                t.disable_cni = true;
                t.disable_gmm = true;
                t.disable_fdi = true;
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauRow {
    pub tau_g: f64,
    pub hfpr: f64,
    pub flicker_energy: f64,
    pub motion_flow_l1: f64,
    /// Against the analytic relit render.
    pub psnr: f64,
}

/// One run per `tau_g`; every value must exceed the configured `tau_r`.
pub fn tau_g_sweep(cfg: &RunConfig, taus: &[f64]) -> Result<Vec<TauRow>> {
    if taus.is_empty() {
        return Err(Error::config("tau_g sweep needs at least one value"));
    }
    let mut configs = Vec::with_capacity(taus.len());
    for &tau in taus {
        if !(tau > cfg.schedule.tau_r && tau <= 1.0) {
            return Err(Error::config(format!(
                "tau_g {tau} must lie in (tau_r = {}, 1]",
                cfg.schedule.tau_r
            )));
        }
        let mut c = cfg.clone();
        c.schedule.tau_g = tau;
        c.validate()?;
        configs.push(c);
    }
    let prepared = prepare(cfg)?;
    configs
        .iter()
        .map(|c| {
            let out = execute_prepared(c, &prepared)?;
            Ok(TauRow {
                tau_g: c.schedule.tau_g,
                hfpr: out.report_source.hfpr,
                flicker_energy: out.report_source.flicker_energy,
                motion_flow_l1: out.report_source.motion_flow_l1,
                psnr: out.report_truth.frame_psnr,
            })
        })
        .collect()
}

pub fn write_tau_csv(rows: &[TauRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
