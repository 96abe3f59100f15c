//! Temporally consistent attention.
//!
//! Queries stay frame-local while keys and values are replaced by a
//! Gaussian-weighted average over neighbouring frames. The output blends the
//! ordinary per-frame attention with the smoothed-context attention:
//!
//! ```text
//! K̄_f = Σ_{|f-j|<=r} w(|f-j|) K_j,   w(d) = exp(-d² / 2σ²)
//! H_orig = softmax(Q_f K_fᵀ / √d) V_f
//! H_cons = softmax(Q_f K̄_fᵀ / √d) V̄_f
//! H_out  = (1-γ) H_orig + γ H_cons
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::gaussian_weights;
use crate::tensor::FeatureSequence;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TcaConfig {
    pub radius: usize,
    pub sigma: f64,
    pub gamma: f64,
    /// Renormalize the window weights to sum to one (truncated at the edges).
    pub normalize_weights: bool,
}

impl Default for TcaConfig {
    fn default() -> Self {
        Self {
            radius: 2,
            sigma: 1.0,
            gamma: 0.7,
            normalize_weights: true,
        }
    }
}

impl TcaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config(format!("tca gamma {} outside [0, 1]", self.gamma)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config(format!("tca sigma {} must be > 0", self.sigma)));
        }
        Ok(())
    }

    /// Weights applied to frames `lo..=hi` around `f`.
    fn window(&self, f: usize, frames: usize) -> (usize, Vec<f64>) {
        let full = gaussian_weights(self.radius, self.sigma);
        let lo = f.saturating_sub(self.radius);
        let hi = (f + self.radius).min(frames - 1);
        let mut w: Vec<f64> = (lo..=hi).map(|j| full[j + self.radius - f]).collect();
        if self.normalize_weights {
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= s);
        }
        (lo, w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionOutput {
    pub h_out: FeatureSequence,
    pub h_orig: FeatureSequence,
    pub h_cons: FeatureSequence,
}

fn temporal_average(x: &FeatureSequence, cfg: &TcaConfig) -> FeatureSequence {
    let frames = x.frames();
    let n = x.frame_len();
    let mut out = FeatureSequence::zeros(frames, x.tokens(), x.dim());
    out.data_mut()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(f, dst)| {
            let (lo, w) = cfg.window(f, frames);
            for (j, wj) in w.iter().enumerate() {
                for (d, s) in dst.iter_mut().zip(x.frame(lo + j)) {
                    *d += wj * s;
                }
            }
        });
    out
}

/// Gaussian sliding-window average of keys and values over time.
pub fn smooth_context(
    k: &FeatureSequence,
    v: &FeatureSequence,
    cfg: &TcaConfig,
) -> Result<(FeatureSequence, FeatureSequence)> {
    if k.frames() != v.frames() || k.tokens() != v.tokens() {
        return Err(Error::shape(
            format!("{}x{}", k.frames(), k.tokens()),
            format!("{}x{}", v.frames(), v.tokens()),
        ));
    }
    if cfg.radius == 0 {
        return Ok((k.clone(), v.clone()));
    }
    Ok((temporal_average(k, cfg), temporal_average(v, cfg)))
}

/// Softmax attention for one frame: `q` is `n_q x d`, `k` is `n_k x d`,
/// `v` is `n_k x d_v`. Returns `n_q x d_v`.
pub fn attention(q: &[f64], k: &[f64], v: &[f64], d: usize, d_v: usize) -> Result<Vec<f64>> {
    if d == 0 || d_v == 0 {
        return Err(Error::InvalidArgument("attention feature dimension is zero".into()));
    }
    if q.len() % d != 0 || k.len() % d != 0 || v.len() % d_v != 0 || k.len() / d != v.len() / d_v {
        return Err(Error::shape(
            format!("q, k multiples of {d}, v multiple of {d_v} with matching tokens"),
            format!("q {} k {} v {}", q.len(), k.len(), v.len()),
        ));
    }
    let n_k = k.len() / d;
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = vec![0.0; (q.len() / d) * d_v];
    let mut logits = vec![0.0; n_k];
    for (qi, o) in q.chunks(d).zip(out.chunks_mut(d_v)) {
        let mut max = f64::NEG_INFINITY;
        for (l, kj) in logits.iter_mut().zip(k.chunks(d)) {
            *l = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
            max = max.max(*l);
        }
        let mut total = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            total += *l;
        }
        for (l, vj) in logits.iter().zip(v.chunks(d_v)) {
            let p = l / total;
            for (oo, vv) in o.iter_mut().zip(vj) {
                *oo += p * vv;
            }
        }
    }
    Ok(out)
}

fn per_frame_attention(q: &FeatureSequence, k: &FeatureSequence, v: &FeatureSequence) -> Result<FeatureSequence> {
    let frames: Result<Vec<Vec<f64>>> = (0..q.frames())
        .into_par_iter()
        .map(|f| attention(q.frame(f), k.frame(f), v.frame(f), q.dim(), v.dim()))
        .collect();
    FeatureSequence::from_frames(frames?, q.tokens(), v.dim())
}

/// Dual-path attention: ordinary per-frame attention blended with attention
/// over the temporally smoothed context.
pub fn tca_forward(
    q: &FeatureSequence,
    k: &FeatureSequence,
    v: &FeatureSequence,
    cfg: &TcaConfig,
) -> Result<AttentionOutput> {
    cfg.validate()?;
    if !q.same_layout(k) || q.frames() != v.frames() || k.tokens() != v.tokens() {
        return Err(Error::shape(
            format!("{}x{}x{}", q.frames(), q.tokens(), q.dim()),
            format!("k {}x{}x{} v {}x{}", k.frames(), k.tokens(), k.dim(), v.frames(), v.tokens()),
        ));
    }
    let h_orig = per_frame_attention(q, k, v)?;
    let h_cons = if cfg.gamma == 0.0 {
        h_orig.clone()
    } else {
        let (k_bar, v_bar) = smooth_context(k, v, cfg)?;
        per_frame_attention(q, &k_bar, &v_bar)?
    };
    let h_out = mix(&h_orig, &h_cons, cfg.gamma);
    Ok(AttentionOutput {
        h_out,
        h_orig,
        h_cons,
    })
}

/// `(1-γ) a + γ b`, returning `a` untouched at γ = 0.
pub fn mix(a: &FeatureSequence, b: &FeatureSequence, gamma: f64) -> FeatureSequence {
    if gamma == 0.0 {
        return a.clone();
    }
    let mut out = a.clone();
    out.data_mut()
        .iter_mut()
        .zip(b.data())
        .for_each(|(x, y)| *x = (1.0 - gamma) * *x + gamma * y);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_seq(rng: &mut ChaCha8Rng, f: usize, n: usize, d: usize) -> FeatureSequence {
        FeatureSequence::from_vec(f, n, d, (0..f * n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn radius_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = random_seq(&mut rng, 4, 3, 2);
        let v = random_seq(&mut rng, 4, 3, 2);
        let cfg = TcaConfig {
            radius: 0,
            ..TcaConfig::default()
        };
        let (kb, vb) = smooth_context(&k, &v, &cfg).unwrap();
        assert_eq!(kb, k);
        assert_eq!(vb, v);
    }

    #[test]
    fn three_frame_window_by_hand() {
        let k = FeatureSequence::from_vec(3, 1, 1, vec![0.0, 1.0, 0.0]).unwrap();
        let cfg = TcaConfig {
            radius: 1,
            sigma: 1.0,
            gamma: 1.0,
            normalize_weights: true,
        };
        let (kb, _) = smooth_context(&k, &k, &cfg).unwrap();
        let e = (-0.5f64).exp();
        let expected = 1.0 / (1.0 + 2.0 * e);
        assert!((kb.data()[1] - expected).abs() < 1e-15);
        assert!((expected - 0.4519).abs() < 1e-4);
        // Edge frame: truncated window {0, 1}, weights {1, e}.
        assert!((kb.data()[0] - e / (1.0 + e)).abs() < 1e-15);
    }

    #[test]
    fn unnormalized_window_sums_raw_weights() {
        let k = FeatureSequence::from_vec(3, 1, 1, vec![1.0, 1.0, 1.0]).unwrap();
        let cfg = TcaConfig {
            radius: 1,
            sigma: 1.0,
            gamma: 1.0,
            normalize_weights: false,
        };
        let (kb, _) = smooth_context(&k, &k, &cfg).unwrap();
        let e = (-0.5f64).exp();
        assert!((kb.data()[1] - (1.0 + 2.0 * e)).abs() < 1e-15);
    }

    #[test]
    fn attention_single_token_returns_value() {
        let out = attention(&[0.3, -2.0], &[5.0, 1.0], &[0.7, 0.1, 9.0], 2, 3).unwrap();
        assert_eq!(out, vec![0.7, 0.1, 9.0]);
    }

    #[test]
    fn attention_uniform_logits_average_values() {
        let q = [0.0, 1.0];
        let k = [1.0, 0.0, -3.0, 0.0, 2.0, 0.0];
        let v = [1.0, 2.0, 3.0];
        let out = attention(&q, &k, &v, 2, 1).unwrap();
        assert!((out[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn attention_saturated_softmax() {
        let out = attention(&[10.0], &[10.0, -10.0], &[1.0, 0.0], 1, 1).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-12);
        assert!(attention(&[], &[], &[], 0, 1).is_err());
    }

    #[test]
    fn gamma_zero_is_standard_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (q, k, v) = (
            random_seq(&mut rng, 5, 4, 3),
            random_seq(&mut rng, 5, 4, 3),
            random_seq(&mut rng, 5, 4, 2),
        );
        let cfg = TcaConfig {
            gamma: 0.0,
            ..TcaConfig::default()
        };
        let out = tca_forward(&q, &k, &v, &cfg).unwrap();
        assert_eq!(out.h_out, per_frame_attention(&q, &k, &v).unwrap());
    }

    #[test]
    fn gamma_one_radius_zero_is_standard_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (q, k, v) = (
            random_seq(&mut rng, 4, 4, 3),
            random_seq(&mut rng, 4, 4, 3),
            random_seq(&mut rng, 4, 4, 3),
        );
        let cfg = TcaConfig {
            gamma: 1.0,
            radius: 0,
            ..TcaConfig::default()
        };
        let out = tca_forward(&q, &k, &v, &cfg).unwrap();
        assert_eq!(out.h_out, out.h_orig);
    }

    #[test]
    fn constant_context_leaves_output_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = random_seq(&mut rng, 6, 5, 4);
        let k0 = random_seq(&mut rng, 1, 5, 4);
        let v0 = random_seq(&mut rng, 1, 5, 4);
        let rep = |s: &FeatureSequence| FeatureSequence::from_frames(vec![s.frame(0).to_vec(); 6], 5, 4).unwrap();
        let out = tca_forward(&q, &rep(&k0), &rep(&v0), &TcaConfig::default()).unwrap();
        assert!(out.h_cons.max_abs_diff(&out.h_orig) < 1e-9);
        assert!(out.h_out.max_abs_diff(&out.h_orig) < 1e-9);
    }

    #[test]
    fn alternating_values_are_damped() {
        let f = 8;
        let q = FeatureSequence::from_frames(vec![vec![0.2, -0.1, 0.4, 0.3]; f], 2, 2).unwrap();
        let k = q.clone();
        let v = FeatureSequence::from_frames(
            (0..f).map(|i| if i % 2 == 0 { vec![1.0, -0.5, 0.3, 0.8] } else { vec![-1.0, 0.5, -0.3, -0.8] }).collect(),
            2,
            2,
        )
        .unwrap();
        let out = tca_forward(&q, &k, &v, &TcaConfig::default()).unwrap();
        let var = |s: &FeatureSequence| temporal_variance(s);
        assert!(var(&out.h_cons) < var(&out.h_orig));
    }

    fn temporal_variance(s: &FeatureSequence) -> f64 {
        let n = s.frame_len();
        let f = s.frames() as f64;
        (0..n)
            .map(|i| {
                let xs: Vec<f64> = (0..s.frames()).map(|fr| s.frame(fr)[i]).collect();
                let m = xs.iter().sum::<f64>() / f;
                xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / f
            })
            .sum::<f64>()
            / n as f64
    }

    proptest! {
        #[test]
        fn output_is_linear_in_gamma(seed in any::<u64>(), g1 in 0.0f64..=1.0, g2 in 0.0f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (q, k, v) = (random_seq(&mut rng, 4, 3, 2), random_seq(&mut rng, 4, 3, 2), random_seq(&mut rng, 4, 3, 2));
            let a = tca_forward(&q, &k, &v, &TcaConfig { gamma: g1, ..TcaConfig::default() }).unwrap();
            let b = tca_forward(&q, &k, &v, &TcaConfig { gamma: g2, ..TcaConfig::default() }).unwrap();
            for i in 0..a.h_out.data().len() {
                let lhs = a.h_out.data()[i] - b.h_out.data()[i];
                let rhs = (g1 - g2) * (a.h_cons.data()[i] - a.h_orig.data()[i]);
                prop_assert!((lhs - rhs).abs() < 1e-12);
            }
        }

        #[test]
        fn softmax_rows_are_convex(seed in any::<u64>()) {
            // With one-hot values the output row equals the attention row.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 5;
            let q: Vec<f64> = (0..3 * n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let k: Vec<f64> = (0..3 * n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let eye: Vec<f64> = (0..n * n).map(|i| if i / n == i % n { 1.0 } else { 0.0 }).collect();
            let rows = attention(&q, &k, &eye, 3, n).unwrap();
            for row in rows.chunks(n) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                prop_assert!(row.iter().all(|&p| p >= 0.0));
            }
        }

        #[test]
        fn edge_windows_sum_to_one(frames in 1usize..12, radius in 0usize..5, f in 0usize..12) {
            prop_assume!(f < frames);
            let cfg = TcaConfig { radius, ..TcaConfig::default() };
            let (_, w) = cfg.window(f, frames);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
