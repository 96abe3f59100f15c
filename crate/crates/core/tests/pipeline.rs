use light4d_core::config::RunConfig;
use light4d_core::guidance::Branch;
use light4d_core::io::{load_dump, read_frames, save_dump, write_frames, FrameFormat};
use light4d_core::pipeline::{execute, execute_prepared, prepare, tau_g_sweep};

fn small() -> RunConfig {
    RunConfig::from_toml_str(
        "seed = 5\n[scene]\nheight = 24\nwidth = 24\nframes = 5\n[solver]\nsteps = 8\n",
    )
    .unwrap()
}

#[test]
fn run_is_bounded_and_traced() {
    let cfg = small();
    let out = execute(&cfg).unwrap();
    assert!(out.video.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(out.trace.records.len(), 8);
    let ks: Vec<usize> = out.trace.records.iter().map(|r| r.k).collect();
    assert_eq!(ks, (0..8).collect::<Vec<_>>());
    for r in &out.trace.records {
        assert_eq!(r.branch == Branch::GeometricIsolation, r.relight_calls == 0);
        assert!(r.z_norm.is_finite() && r.residual_norm.is_finite());
    }
    assert!(out.trace.relight_calls() > 0);
    assert!(out.report_truth.frame_psnr.is_finite());
}

#[test]
fn prepared_scene_is_reusable() {
    let cfg = small();
    let prepared = prepare(&cfg).unwrap();
    let a = execute_prepared(&cfg, &prepared).unwrap();
    let b = execute_prepared(&cfg, &prepared).unwrap();
    assert_eq!(a.video.data(), b.video.data());
    assert_eq!(a.video.shape(), prepared.truth.shape());
}

#[test]
fn frames_and_dumps_round_trip() {
    let cfg = small();
    let prepared = prepare(&cfg).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    for format in [FrameFormat::Png, FrameFormat::Ppm] {
        let dir = tmp.path().join(format!("{format:?}"));
        write_frames(&dir, &prepared.truth, format).unwrap();
        let back = read_frames(&dir).unwrap();
        assert!(back.max_abs_diff(&prepared.truth).unwrap() <= 0.5 / 255.0 + 1e-12);
    }
    let path = tmp.path().join("normals.l4dt");
    save_dump(&path, prepared.geometry.video.as_tensor()).unwrap();
    let back = load_dump(&path).unwrap();
    assert!(back.max_abs_diff(prepared.geometry.video.as_tensor()).unwrap() < 1e-6);
}

#[test]
fn sweep_rows_follow_requested_taus() {
    let mut cfg = small();
    cfg.schedule.tau_r = 0.2;
    cfg.schedule.tau_s = 0.1;
    let rows = tau_g_sweep(&cfg, &[0.5, 0.9]).unwrap();
    assert_eq!(rows.iter().map(|r| r.tau_g).collect::<Vec<_>>(), [0.5, 0.9]);
    assert!(rows.iter().all(|r| r.hfpr.is_finite() && r.psnr.is_finite()));
    assert!(tau_g_sweep(&cfg, &[0.1]).is_err());
}
