//! Non-learned video quality metrics and the report built from them.

mod flow;
mod ssim;

pub use flow::{estimate_flow, flow_l1_series, motion_flow_l1, warp_backward, FlowConfig, FlowField};
pub use ssim::{ssim_plane, C1, C2, SSIM_SIGMA, SSIM_WINDOW};

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::VideoTensor;

pub const PSNR_CAP: f64 = 99.0;

/// Per-frame PSNR over [0, 1] data, capped at [`PSNR_CAP`].
pub fn frame_psnr(a: &VideoTensor, b: &VideoTensor) -> Result<Vec<f64>> {
    a.expect_shape(b.shape())?;
    Ok(a.frames()
        .zip(b.frames())
        .map(|(x, y)| {
            let mse = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / x.len() as f64;
            if mse == 0.0 {
                PSNR_CAP
            } else {
                (10.0 * (1.0 / mse).log10()).clamp(0.0, PSNR_CAP)
            }
        })
        .collect())
}

/// SSIM between each frame of `a` and the matching frame of `b` warped
/// backwards along `flow` (one flow per frame).
pub fn warp_aligned_ssim(a: &VideoTensor, b: &VideoTensor, flow: &FlowField) -> Result<f64> {
    let series = warp_aligned_ssim_series(a, b, flow)?;
    Ok(series.iter().sum::<f64>() / series.len() as f64)
}

pub fn warp_aligned_ssim_series(a: &VideoTensor, b: &VideoTensor, flow: &FlowField) -> Result<Vec<f64>> {
    a.expect_shape(b.shape())?;
    let s = a.shape();
    if flow.pairs != s.frames || flow.height != s.height || flow.width != s.width {
        return Err(Error::shape(
            format!("{} flows of {}x{}", s.frames, s.height, s.width),
            format!("{} flows of {}x{}", flow.pairs, flow.height, flow.width),
        ));
    }
    (0..s.frames)
        .into_par_iter()
        .map(|f| {
            let (u, v) = flow.pair(f);
            let warped = warp_backward(&b.luma(f), s.height, s.width, u, v);
            ssim_plane(&a.luma(f), &warped, s.height, s.width)
        })
        .collect()
}

/// Temporal coherence: SSIM between each frame and the next frame warped
/// back onto it along the estimated flow.
pub fn temporal_warp_ssim(x: &VideoTensor, cfg: &FlowConfig) -> Result<Vec<f64>> {
    temporal_warp_ssim_with(x, &estimate_flow(x, cfg)?)
}

/// As [`temporal_warp_ssim`] with the consecutive-pair flow of `x` given.
pub fn temporal_warp_ssim_with(x: &VideoTensor, flow: &FlowField) -> Result<Vec<f64>> {
    let s = x.shape();
    let pairs = s.frames - 1;
    let cur = x.slice_frames(0..pairs)?;
    let next = x.slice_frames(1..s.frames)?;
    warp_aligned_ssim_series(&cur, &next, flow)
}

fn laplacian_energy(x: &VideoTensor) -> f64 {
    let s = x.shape();
    let (h, w, c) = (s.height, s.width, s.channels);
    x.frames()
        .map(|fr| {
            let mut e = 0.0;
            for y in 1..h.saturating_sub(1) {
                for xx in 1..w.saturating_sub(1) {
                    for ch in 0..c {
                        let at = |yy: usize, xc: usize| fr[(yy * w + xc) * c + ch];
                        let l = at(y - 1, xx) + at(y + 1, xx) + at(y, xx - 1) + at(y, xx + 1) - 4.0 * at(y, xx);
                        e += l * l;
                    }
                }
            }
            e
        })
        .sum()
}

/// Ratio of 4-neighbour Laplacian energy of `relit` to that of `source`,
/// summed over interior pixels of every frame. Unclipped.
pub fn hfpr(relit: &VideoTensor, source: &VideoTensor) -> Result<f64> {
    relit.expect_shape(source.shape())?;
    let den = laplacian_energy(source);
    if den == 0.0 {
        return Err(Error::ZeroSourceEnergy);
    }
    Ok(laplacian_energy(relit) / den)
}

/// Mean squared second temporal difference.
pub fn flicker_energy(x: &VideoTensor) -> Result<f64> {
    let series = flicker_series(x)?;
    Ok(series.iter().sum::<f64>() / series.len() as f64)
}

/// Mean squared second difference centred on each interior frame.
pub fn flicker_series(x: &VideoTensor) -> Result<Vec<f64>> {
    let s = x.shape();
    if s.frames < 3 {
        return Err(Error::TooFewFrames {
            needed: 3,
            got: s.frames,
        });
    }
    Ok((1..s.frames - 1)
        .map(|f| {
            let (p, c, n) = (x.frame(f - 1), x.frame(f), x.frame(f + 1));
            p.iter()
                .zip(c)
                .zip(n)
                .map(|((a, b), d)| (d - 2.0 * b + a).powi(2))
                .sum::<f64>()
                / c.len() as f64
        })
        .collect())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub frame_psnr: Vec<f64>,
    /// Per consecutive pair of the evaluated video.
    pub warp_ssim: Vec<f64>,
    /// Per consecutive pair.
    pub motion_flow_l1: Vec<f64>,
    /// Per interior frame.
    pub flicker_energy: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub frame_psnr: f64,
    pub warp_ssim: f64,
    /// Clipped to [0, 2].
    pub hfpr: f64,
    pub hfpr_raw: f64,
    pub motion_flow_l1: f64,
    pub flicker_energy: f64,
    pub series: MetricSeries,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Full report for `video` against `reference`. Temporal metrics need at
/// least three frames.
pub fn compute_report(video: &VideoTensor, reference: &VideoTensor, cfg: &FlowConfig) -> Result<MetricReport> {
    video.expect_shape(reference.shape())?;
    let video_flow = estimate_flow(video, cfg)?;
    let reference_flow = if video == reference {
        video_flow.clone()
    } else {
        estimate_flow(reference, cfg)?
    };
    compute_report_with(video, reference, &video_flow, &reference_flow)
}

/// As [`compute_report`] with both consecutive-pair flows precomputed.
pub fn compute_report_with(
    video: &VideoTensor,
    reference: &VideoTensor,
    video_flow: &FlowField,
    reference_flow: &FlowField,
) -> Result<MetricReport> {
    video.expect_shape(reference.shape())?;
    let s = video.shape();
    for flow in [video_flow, reference_flow] {
        if flow.pairs + 1 != s.frames || flow.height != s.height || flow.width != s.width {
            return Err(Error::shape(
                format!("{} flows of {}x{}", s.frames - 1, s.height, s.width),
                format!("{} flows of {}x{}", flow.pairs, flow.height, flow.width),
            ));
        }
    }
    let psnr = frame_psnr(video, reference)?;
    let flicker = flicker_series(video)?;
    let warp_ssim = temporal_warp_ssim_with(video, video_flow)?;
    let flow_series = flow_l1_series(video_flow, reference_flow);
    let hfpr_raw = hfpr(video, reference)?;
    Ok(MetricReport {
        frame_psnr: mean(&psnr),
        warp_ssim: mean(&warp_ssim),
        hfpr: hfpr_raw.clamp(0.0, 2.0),
        hfpr_raw,
        motion_flow_l1: mean(&flow_series),
        flicker_energy: mean(&flicker),
        series: MetricSeries {
            frame_psnr: psnr,
            warp_ssim,
            motion_flow_l1: flow_series,
            flicker_energy: flicker,
        },
    })
}

impl MetricReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// One row per frame; pairwise series are indexed by their first frame
    /// and flicker by its centre frame, blank where undefined.
    pub fn write_series_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["frame", "frame_psnr", "warp_ssim", "motion_flow_l1", "flicker_energy"])?;
        let cell = |v: Option<&f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for f in 0..self.series.frame_psnr.len() {
            w.write_record([
                f.to_string(),
                cell(self.series.frame_psnr.get(f)),
                cell(self.series.warp_ssim.get(f)),
                cell(self.series.motion_flow_l1.get(f)),
                cell(f.checked_sub(1).and_then(|i| self.series.flicker_energy.get(i))),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn textured(frames: usize) -> VideoTensor {
        VideoTensor::from_fn(Shape::new(frames, 16, 16, 3), |f, y, x, c| {
            (((x * 7 + y * 13 + c * 5 + f) % 17) as f64) / 17.0
        })
        .unwrap()
    }

    #[test]
    fn psnr_cases() {
        let a = textured(2);
        assert_eq!(frame_psnr(&a, &a).unwrap(), vec![PSNR_CAP; 2]);
        let zero = VideoTensor::zeros(Shape::new(1, 4, 4, 1)).unwrap();
        let one = VideoTensor::filled(Shape::new(1, 4, 4, 1), 1.0).unwrap();
        assert_eq!(frame_psnr(&zero, &one).unwrap(), vec![0.0]);
        let shifted = VideoTensor::filled(Shape::new(1, 4, 4, 1), 0.1).unwrap();
        assert!((frame_psnr(&zero, &shifted).unwrap()[0] - 20.0).abs() < 1e-9);
        assert!(frame_psnr(&zero, &textured(1)).is_err());
    }

    #[test]
    fn hfpr_cases() {
        let a = textured(3);
        assert_eq!(hfpr(&a, &a).unwrap(), 1.0);
        for c in [0.5, 2.0] {
            let scaled = a.map_values(|v| c * v);
            assert!((hfpr(&scaled, &a).unwrap() - c * c).abs() < 1e-9);
        }
        let lifted = a.map_values(|v| v + 0.25);
        assert!((hfpr(&lifted, &a).unwrap() - 1.0).abs() < 1e-12);
        let flat = VideoTensor::filled(a.shape(), 0.3).unwrap();
        assert!(matches!(hfpr(&a, &flat), Err(Error::ZeroSourceEnergy)));
    }

    #[test]
    fn flicker_cases() {
        let a = textured(1);
        let still = VideoTensor::from_vec(Shape::new(4, 16, 16, 3), a.data().repeat(4)).unwrap();
        assert_eq!(flicker_energy(&still).unwrap(), 0.0);
        let ramp = VideoTensor::from_fn(Shape::new(5, 4, 4, 1), |f, y, x, _| 0.1 * f as f64 + 0.01 * (x + y) as f64).unwrap();
        assert!(flicker_energy(&ramp).unwrap() < 1e-24);
        let amp = 0.2;
        let alt = VideoTensor::from_fn(Shape::new(6, 4, 4, 1), |f, _, _, _| if f % 2 == 0 { amp } else { -amp }).unwrap();
        assert!((flicker_energy(&alt).unwrap() - 16.0 * amp * amp).abs() < 1e-12);
        assert!(flicker_energy(&a).is_err());
    }

    #[test]
    fn flicker_ignores_linear_trends() {
        let x = textured(6);
        let trend = x.zip_values(
            &VideoTensor::from_fn(x.shape(), |f, y, xx, c| (0.01 * (y + xx + c) as f64) * f as f64 - 0.3).unwrap(),
            |a, b| a + b,
        )
        .unwrap();
        assert!((flicker_energy(&x).unwrap() - flicker_energy(&trend).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn warp_ssim_identity() {
        let a = textured(2);
        let flow = FlowField::zeros(2, 16, 16);
        assert!((warp_aligned_ssim(&a, &a, &flow).unwrap() - 1.0).abs() < 1e-9);
        assert!(warp_aligned_ssim(&a, &a, &FlowField::zeros(1, 16, 16)).is_err());
    }

    #[test]
    fn report_round_trips_through_json() {
        let a = textured(4);
        let r = compute_report(&a, &a, &FlowConfig::default()).unwrap();
        assert_eq!(r.frame_psnr, PSNR_CAP);
        assert_eq!(r.hfpr, 1.0);
        assert_eq!(r.motion_flow_l1, 0.0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        r.write_json(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        for key in ["frame_psnr", "warp_ssim", "hfpr", "motion_flow_l1", "flicker_energy"] {
            assert!(text.contains(&format!("\"{key}\"")));
        }
        let back: MetricReport = serde_json::from_str(&text).unwrap();
        assert!((back.warp_ssim - r.warp_ssim).abs() < 1e-12);
        assert_eq!(back.series.frame_psnr.len(), 4);
        r.write_series_csv(&dir.path().join("s.csv")).unwrap();
    }
}
