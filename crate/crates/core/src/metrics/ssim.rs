use crate::error::{Error, Result};
use crate::filter::gaussian_kernel;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const C1: f64 = 1e-4;
pub const C2: f64 = 9e-4;

/// Weighted sums over every valid window position of a separable kernel.
fn filter_valid(img: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = k.iter().enumerate().map(|(j, kw)| kw * img[y * w + x + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(j, kw)| kw * rows[(y + j) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM of two single-channel images on [0, 1] data, Gaussian 11x11
/// window with sigma 1.5 over valid positions only.
pub fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> Result<f64> {
    if a.len() != h * w || b.len() != h * w {
        return Err(Error::shape(format!("{h}x{w}"), format!("{} and {}", a.len(), b.len())));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect() };
    let mu_a = filter_valid(a, h, w, &k);
    let mu_b = filter_valid(b, h, w, &k);
    let aa = filter_valid(&prod(&|x, _| x * x), h, w, &k);
    let bb = filter_valid(&prod(&|_, y| y * y), h, w, &k);
    let ab = filter_valid(&prod(&|x, y| x * y), h, w, &k);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2))
        })
        .sum();
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct per-window evaluation with two-pass moments.
    pub(crate) fn brute_ssim(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
        let r = 5isize;
        let mut g = vec![0.0; 121];
        let mut s = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                let v = (-((dy * dy + dx * dx) as f64) / (2.0 * 1.5 * 1.5)).exp();
                g[((dy + r) * 11 + dx + r) as usize] = v;
                s += v;
            }
        }
        g.iter_mut().for_each(|v| *v /= s);
        let mut total = 0.0;
        let mut count = 0;
        for cy in 5..h - 5 {
            for cx in 5..w - 5 {
                let at = |img: &[f64], j: usize| img[(cy - 5 + j / 11) * w + cx - 5 + j % 11];
                let ma: f64 = (0..121).map(|j| g[j] * at(a, j)).sum();
                let mb: f64 = (0..121).map(|j| g[j] * at(b, j)).sum();
                let va: f64 = (0..121).map(|j| g[j] * (at(a, j) - ma).powi(2)).sum();
                let vb: f64 = (0..121).map(|j| g[j] * (at(b, j) - mb).powi(2)).sum();
                let cov: f64 = (0..121).map(|j| g[j] * (at(a, j) - ma) * (at(b, j) - mb)).sum();
                total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
                count += 1;
            }
        }
        total / count as f64
    }

    fn random_plane(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = random_plane(&mut rng, 32 * 32);
            let b: Vec<f64> = a.iter().map(|v| (0.6 * v + 0.4 * rng.random::<f64>()).clamp(0.0, 1.0)).collect();
            let fast = ssim_plane(&a, &b, 32, 32).unwrap();
            assert!((fast - brute_ssim(&a, &b, 32, 32)).abs() < 1e-6);
        }
    }

    #[test]
    fn identical_is_one_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = random_plane(&mut rng, 24 * 20);
        let b = random_plane(&mut rng, 24 * 20);
        assert!((ssim_plane(&a, &a, 24, 20).unwrap() - 1.0).abs() < 1e-9);
        let ab = ssim_plane(&a, &b, 24, 20).unwrap();
        assert!((ab - ssim_plane(&b, &a, 24, 20).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn inverted_checker_is_negative() {
        let a: Vec<f64> = (0..256).map(|i| if (i / 16 / 2 + i % 16 / 2) % 2 == 0 { 0.75 } else { 0.25 }).collect();
        let inv: Vec<f64> = a.iter().map(|v| 1.0 - v).collect();
        assert!(ssim_plane(&a, &inv, 16, 16).unwrap() < 0.0);
        assert!(brute_ssim(&a, &inv, 16, 16) < 0.0);
    }

    #[test]
    fn constants_reduce_to_luminance_term() {
        let a = vec![0.3; 144];
        let b = vec![0.6; 144];
        let expected = (2.0 * 0.3 * 0.6 + C1) / (0.09 + 0.36 + C1);
        assert!((ssim_plane(&a, &b, 12, 12).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn too_small_rejected() {
        assert!(ssim_plane(&[0.0; 100], &[0.0; 100], 10, 10).is_err());
    }
}
