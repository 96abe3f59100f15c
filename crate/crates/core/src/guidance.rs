//! Time-aware fusion solver: geometric estimation, conditional relighting,
//! hybrid target construction and first-order Euler updates.

use std::path::Path;

use log::{debug, info};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coherence::{canonical_noise, fdi_regularize, global_moment_match, normal_map, FdiConfig, NoiseSource};
use crate::error::{Error, Result};
use crate::lighting::LightingSpec;
use crate::priors::{LatentCodec, PriorBundle};
use crate::schedule::{FusionSchedule, StepPlan};
use crate::tca::TcaConfig;
use crate::tensor::{LatentVideo, Shape, VideoTensor};

/// Feature switches mirroring the ablation arms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Toggles {
    pub disable_tca: bool,
    pub disable_cni: bool,
    pub disable_gmm: bool,
    pub disable_fdi: bool,
    pub disable_dfg: bool,
}

pub struct GuidanceRun {
    pub priors: PriorBundle,
    pub schedule: FusionSchedule,
    pub plan: StepPlan,
    pub lighting: LightingSpec,
    pub tca: TcaConfig,
    pub fdi: FdiConfig,
    pub toggles: Toggles,
    /// Pixel-space shape the codec decodes to.
    pub video_shape: Shape,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    GeometricIsolation,
    Fused,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub t: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub branch: Branch,
    pub relight_calls: usize,
    pub z_norm: f64,
    pub residual_norm: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepTrace {
    pub records: Vec<StepRecord>,
}

impl StepTrace {
    pub fn relight_calls(&self) -> usize {
        self.records.iter().map(|r| r.relight_calls).sum()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Named seed streams so that independent random draws never share a state.
pub mod streams {
    pub const CANONICAL_NOISE: u64 = 0x434e49;
    pub const INIT: u64 = 0x494e4954;
}

/// SplitMix64 finalizer applied to `seed ^ stream`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = (seed ^ stream).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl GuidanceRun {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.tca.validate()?;
        self.fdi.validate()
    }

    pub fn lambda(&self, t: f64) -> Result<f64> {
        if self.toggles.disable_dfg {
            Ok(self.schedule.lambda_max())
        } else {
            self.schedule.lambda_at(t)
        }
    }

    /// Noise fed to the relighting prior for the whole run.
    pub fn noise_source(&self) -> Result<NoiseSource> {
        let s = self.video_shape;
        Ok(if self.toggles.disable_cni {
            NoiseSource::Independent {
                height: s.height,
                width: s.width,
                channels: s.channels,
            }
        } else {
            NoiseSource::Canonical(canonical_noise(
                derive_seed(self.seed, streams::CANONICAL_NOISE),
                s.height,
                s.width,
                s.channels,
                s.frames,
            )?)
        })
    }
}

/// Fused flow target at time `t`. Returns the target and the number of
/// relighting calls made (0 or 1).
pub fn hybrid_target(z0_geo: &LatentVideo, run: &GuidanceRun, t: f64, noise: &NoiseSource) -> Result<(LatentVideo, usize)> {
    let lambda = run.lambda(t)?;
    if lambda == 0.0 {
        return Ok((z0_geo.clone(), 0));
    }
    let codec = run.priors.codec.as_ref();
    let x_geo = codec.decode(z0_geo)?;
    let tca = (!run.toggles.disable_tca).then_some(&run.tca);
    let mut x_light = run.priors.relight.relight(&x_geo, &run.lighting, noise, tca)?;
    if !run.toggles.disable_gmm {
        x_light = global_moment_match(&x_light);
    }
    if !run.toggles.disable_fdi {
        x_light = fdi_regularize(&x_light, &run.fdi)?;
    }
    x_light.assert_finite()?;
    let fused = x_geo.zip_values(&x_light, |g, l| (1.0 - lambda) * g + lambda * l)?;
    Ok((codec.encode(&fused)?, 1))
}

/// `z + (sigma_next - sigma) (z - z_target) / (sigma + delta)`.
pub fn euler_step(z: &LatentVideo, z_target: &LatentVideo, sigma: f64, sigma_next: f64, delta: f64) -> Result<LatentVideo> {
    if !(sigma >= sigma_next && sigma_next >= 0.0) || !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "Euler step needs sigma >= sigma_next >= 0 and delta > 0, got {sigma}, {sigma_next}, {delta}"
        )));
    }
    z.expect_shape(z_target.shape())?;
    let h = (sigma_next - sigma) / (sigma + delta);
    let mut out = z.clone();
    out.data_mut()
        .par_iter_mut()
        .zip(z_target.data().par_iter())
        .for_each(|(v, t)| *v += h * (*v - t));
    Ok(out)
}

/// Runs the full solver from `z_init` and decodes the result, clamped to [0, 1].
pub fn run_inference(run: &GuidanceRun, z_init: &LatentVideo) -> Result<(VideoTensor, StepTrace)> {
    run.validate()?;
    let noise = run.noise_source()?;
    let mut z = z_init.clone();
    let mut trace = StepTrace::default();
    for k in 0..run.plan.steps() {
        let (t, sigma, sigma_next) = (run.plan.t(k), run.plan.sigma(k), run.plan.sigma_next(k));
        let step = || -> Result<(LatentVideo, StepRecord)> {
            let z0 = run.priors.geometric.estimate_clean(&z, sigma)?;
            let (target, calls) = hybrid_target(&z0, run, t, &noise)?;
            let lambda = run.lambda(t)?;
            let record = StepRecord {
                k,
                t,
                sigma,
                lambda,
                branch: if calls == 0 { Branch::GeometricIsolation } else { Branch::Fused },
                relight_calls: calls,
                z_norm: z.norm(),
                residual_norm: z.distance(&target)?,
            };
            let next = euler_step(&z, &target, sigma, sigma_next, run.plan.delta())?;
            next.assert_finite()?;
            Ok((next, record))
        };
        let (next, record) = step().map_err(|e| Error::Diverged {
            step: k,
            source: Box::new(e),
        })?;
        debug!(
            "step {k}: t={t:.3} lambda={:.3} {:?} residual={:.4e}",
            record.lambda, record.branch, record.residual_norm
        );
        z = next;
        trace.records.push(record);
    }
    info!("solver finished: {} steps, {} relight calls", trace.records.len(), trace.relight_calls());
    let out = run.priors.codec.decode(&z)?;
    out.assert_finite()?;
    Ok((out.clamp01(), trace))
}

/// Starting latent: the source resampled into the target views, encoded,
/// plus `sigma_start` times seeded Gaussian noise.
pub fn init_latent(warped_source: &VideoTensor, codec: &dyn LatentCodec, sigma_start: f64, seed: u64) -> Result<LatentVideo> {
    let z = codec.encode(warped_source)?;
    if sigma_start == 0.0 {
        return Ok(z);
    }
    let eps = normal_map(derive_seed(seed, streams::INIT), z.shape().len());
    let mut out = z;
    out.data_mut()
        .iter_mut()
        .zip(eps)
        .for_each(|(v, e)| *v += sigma_start * e);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coherence::TemporalOperator;
    use crate::priors::{GeometricMode, IdentityCodec, LinearGeometricPrior, RelightingPrior};
    use crate::schedule::SigmaForm;
    use proptest::prelude::*;

    struct ConstantRelight(f64);

    impl RelightingPrior for ConstantRelight {
        fn relight(&self, x: &VideoTensor, _: &LightingSpec, _: &NoiseSource, _: Option<&TcaConfig>) -> Result<VideoTensor> {
            VideoTensor::filled(x.shape(), self.0)
        }
    }

    fn shape() -> Shape {
        Shape::new(3, 8, 8, 3)
    }

    fn geometry() -> VideoTensor {
        VideoTensor::from_fn(shape(), |f, y, x, c| ((f * 3 + y * 5 + x * 7 + c) % 11) as f64 / 11.0).unwrap()
    }

    fn make_run(schedule: FusionSchedule, steps: usize, relit: f64, mode: GeometricMode, toggles: Toggles) -> GuidanceRun {
        let target = LatentVideo::new(geometry().into_tensor()).unwrap();
        GuidanceRun {
            priors: PriorBundle {
                geometric: Box::new(LinearGeometricPrior::new(target, mode).unwrap()),
                relight: Box::new(ConstantRelight(relit)),
                codec: Box::new(IdentityCodec),
            },
            schedule,
            plan: StepPlan::new(steps, SigmaForm::Linear, 1e-8).unwrap(),
            lighting: LightingSpec::from_label("Left", 1.0, 0.1).unwrap(),
            tca: TcaConfig::default(),
            fdi: FdiConfig::default(),
            toggles,
            video_shape: shape(),
            seed: 5,
        }
    }

    fn zero_schedule() -> FusionSchedule {
        FusionSchedule::four_phase(0.7, 0.5, 0.2, 0.0, 0.0).unwrap()
    }

    fn bypass() -> Toggles {
        Toggles {
            disable_gmm: true,
            disable_fdi: true,
            ..Toggles::default()
        }
    }

    fn noisy_start(seed: u64) -> LatentVideo {
        init_latent(&VideoTensor::filled(shape(), 0.5).unwrap(), &IdentityCodec, 1.0, seed).unwrap()
    }

    #[test]
    fn euler_identities() {
        let z = LatentVideo::new(geometry().into_tensor()).unwrap();
        assert_eq!(euler_step(&z, &z, 0.8, 0.5, 1e-8).unwrap(), z);
        let target = z.map_values(|v| 1.0 - v);
        assert_eq!(euler_step(&z, &target, 0.6, 0.6, 1e-8).unwrap(), z);
        let landed = euler_step(&z, &target, 1.0, 0.0, 1e-8).unwrap();
        assert!(landed.distance(&target).unwrap() <= 1e-7 * target.norm());
        assert!(euler_step(&z, &target, 0.2, 0.5, 1e-8).is_err());
        assert!(euler_step(&z, &target, 0.5, 0.2, 0.0).is_err());
    }

    #[test]
    fn isolation_returns_geometry_without_decoding() {
        let run = make_run(FusionSchedule::default(), 4, 0.6, GeometricMode::Oracle, bypass());
        let noise = run.noise_source().unwrap();
        let z0 = LatentVideo::new(geometry().into_tensor()).unwrap();
        let (out, calls) = hybrid_target(&z0, &run, 0.9, &noise).unwrap();
        assert_eq!(out, z0);
        assert_eq!(calls, 0);
    }

    #[test]
    fn full_light_gives_encoded_relight() {
        let sched = FusionSchedule::four_phase(0.7, 0.5, 0.2, 1.0, 1.0).unwrap();
        let run = make_run(sched, 4, 0.6, GeometricMode::Oracle, bypass());
        let noise = run.noise_source().unwrap();
        let z0 = LatentVideo::new(geometry().into_tensor()).unwrap();
        let (out, calls) = hybrid_target(&z0, &run, 0.3, &noise).unwrap();
        assert_eq!(calls, 1);
        assert!(out.data().iter().all(|&v| v == 0.6));
    }

    #[test]
    fn half_fusion_of_constants() {
        let sched = FusionSchedule::four_phase(0.7, 0.5, 0.2, 0.5, 0.5).unwrap();
        let mut run = make_run(sched, 4, 0.6, GeometricMode::Oracle, bypass());
        run.priors.geometric = Box::new(LinearGeometricPrior::oracle(LatentVideo::filled(shape(), 0.2).unwrap()));
        let noise = run.noise_source().unwrap();
        let z0 = LatentVideo::filled(shape(), 0.2).unwrap();
        let (out, _) = hybrid_target(&z0, &run, 0.3, &noise).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.4).abs() < 1e-15));
    }

    #[test]
    fn zero_schedule_single_step_recovers_geometry() {
        let run = make_run(zero_schedule(), 1, 0.6, GeometricMode::Oracle, bypass());
        let (out, trace) = run_inference(&run, &noisy_start(1)).unwrap();
        assert!(out.max_abs_diff(&geometry()).unwrap() < 1e-7);
        assert_eq!(trace.records.len(), 1);
        for k in [2, 5, 25] {
            let run_k = make_run(zero_schedule(), k, 0.6, GeometricMode::Oracle, bypass());
            let (out_k, trace_k) = run_inference(&run_k, &noisy_start(1)).unwrap();
            assert!(out_k.max_abs_diff(&out).unwrap() < 1e-6);
            assert_eq!(trace_k.relight_calls(), 0);
        }
    }

    #[test]
    fn trace_matches_schedule_and_isolation() {
        let sched = FusionSchedule::default();
        let run = make_run(sched, 25, 0.6, GeometricMode::Shrinkage { softness: 0.1 }, Toggles::default());
        let (_, trace) = run_inference(&run, &noisy_start(2)).unwrap();
        assert_eq!(trace.records.len(), 25);
        for r in &trace.records {
            assert!((r.lambda - sched.lambda_at(r.t).unwrap()).abs() < 1e-12);
            if r.t > sched.tau_g() {
                assert_eq!(r.relight_calls, 0);
                assert_eq!(r.branch, Branch::GeometricIsolation);
            }
        }
        let dfg_off = make_run(sched, 25, 0.6, GeometricMode::Oracle, Toggles { disable_dfg: true, ..Toggles::default() });
        let (_, t2) = run_inference(&dfg_off, &noisy_start(2)).unwrap();
        assert_eq!(t2.relight_calls(), 25);
        assert!(t2.records.iter().all(|r| r.lambda == 0.5));
    }

    #[test]
    fn deterministic_runs() {
        let run = make_run(FusionSchedule::default(), 10, 0.6, GeometricMode::Shrinkage { softness: 0.1 }, Toggles::default());
        let a = run_inference(&run, &noisy_start(3)).unwrap();
        let b = run_inference(&run, &noisy_start(3)).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_ne!(noisy_start(3), noisy_start(4));
    }

    #[test]
    fn convergence_bound_with_oracle() {
        let run = make_run(zero_schedule(), 8, 0.6, GeometricMode::Oracle, bypass());
        let z_init = noisy_start(6);
        let target = LatentVideo::new(geometry().into_tensor()).unwrap();
        let (out, trace) = run_inference(&run, &z_init).unwrap();
        let max_res = trace.records.iter().map(|r| r.residual_norm).fold(0.0, f64::max);
        let final_dist = out.as_tensor().distance(target.as_tensor()).unwrap();
        assert!(final_dist <= 1e-8 * 8.0 * max_res + 1e-12);
    }

    #[test]
    fn init_without_noise_is_encoded_source() {
        let src = geometry();
        let z = init_latent(&src, &IdentityCodec, 0.0, 9).unwrap();
        assert_eq!(z.as_tensor(), src.as_tensor());
    }

    #[test]
    fn fdi_and_gmm_run_inside_target() {
        let sched = FusionSchedule::four_phase(0.7, 0.5, 0.2, 0.5, 0.5).unwrap();
        let mut run = make_run(sched, 4, 0.6, GeometricMode::Oracle, Toggles::default());
        run.fdi.temporal = TemporalOperator::MovingAverage { window: 3 };
        let noise = run.noise_source().unwrap();
        let z0 = LatentVideo::new(geometry().into_tensor()).unwrap();
        let (out, calls) = hybrid_target(&z0, &run, 0.3, &noise).unwrap();
        assert_eq!(calls, 1);
        // Constant relight survives moment matching and smoothing unchanged.
        let expected = geometry().map_values(|g| 0.5 * g + 0.3);
        assert!(out.as_tensor().max_abs_diff(expected.as_tensor()).unwrap() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn stronger_fusion_pulls_closer_to_relight(lo in 0.05f64..0.45, gap in 0.05f64..0.5, seed in 0u64..50) {
            let hi = (lo + gap).min(1.0);
            let dist = |lmax: f64| {
                let sched = FusionSchedule::four_phase(0.7, 0.5, 0.2, lmax, lmax * 0.5).unwrap();
                let run = make_run(sched, 10, 0.6, GeometricMode::Shrinkage { softness: 0.1 }, bypass());
                let (out, _) = run_inference(&run, &noisy_start(seed)).unwrap();
                out.distance(&VideoTensor::filled(shape(), 0.6).unwrap()).unwrap()
            };
            prop_assert!(dist(hi) < dist(lo));
        }
    }
}
