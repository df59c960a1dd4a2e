//! Utility and privacy metrics: theoretical/realized noise variance, PSNR,
//! global SSIM, and the false negative rate of the two matchers.

use crate::budget::NoiseScales;
use crate::eigen::{matches, matches_euclidean, FeatureVector};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::mechanism::SanitizeResult;

/// Theoretical noise variance for a realized prefix: 2 sum_{k<=K} b_k^2.
pub fn theoretical_variance(scales: &NoiseScales, k_drawn: usize) -> f64 {
    2.0 * scales.0[..k_drawn.min(scales.len())]
        .iter()
        .map(|b| b * b)
        .sum::<f64>()
}

/// Realized variance: the sum (not mean) of squared pixel deviations.
pub fn real_variance(orig: &GrayImage, noisy: &GrayImage) -> Result<f64> {
    orig.squared_deviation(noisy)
}

/// PSNR flavors. Both use max of the noisy vector as the peak, as reported;
/// `Mse` divides the deviation sum by the pixel count, `PaperSum` uses the
/// raw sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsnrMode {
    Mse,
    PaperSum,
}

/// PSNR in dB; +infinity when the images are identical.
pub fn psnr(orig: &GrayImage, noisy: &GrayImage, mode: PsnrMode) -> Result<f64> {
    let sigma_r = real_variance(orig, noisy)?;
    if sigma_r == 0.0 {
        return Ok(f64::INFINITY);
    }
    let peak = noisy.pixels().iter().cloned().fold(f64::MIN, f64::max);
    let denom = match mode {
        PsnrMode::Mse => sigma_r / orig.pixel_count() as f64,
        PsnrMode::PaperSum => sigma_r,
    };
    Ok(10.0 * (peak * peak / denom).log10())
}

const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// Global single-window SSIM from image means, variances and covariance.
pub fn ssim(orig: &GrayImage, noisy: &GrayImage) -> Result<f64> {
    if orig.side() != noisy.side() {
        return Err(Error::DimensionMismatch(format!(
            "sides {} vs {}",
            orig.side(),
            noisy.side()
        )));
    }
    let n = orig.pixel_count() as f64;
    let mu_x = orig.pixels().iter().sum::<f64>() / n;
    let mu_y = noisy.pixels().iter().sum::<f64>() / n;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    let mut cov = 0.0;
    for (&x, &y) in orig.pixels().iter().zip(noisy.pixels()) {
        let dx = x - mu_x;
        let dy = y - mu_y;
        var_x += dx * dx;
        var_y += dy * dy;
        cov += dx * dy;
    }
    var_x /= n;
    var_y /= n;
    cov /= n;
    Ok(((2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2)))
}

/// Matcher used by the false-negative-rate evaluation.
#[derive(Debug, Clone)]
pub enum Matcher {
    /// Element-wise identification radii.
    Radius(Vec<f64>),
    /// Euclidean distance on unit-normalized features with a threshold.
    Euclidean(f64),
}

/// Fraction of sanitized subject results whose noisy features fail the
/// matcher against the standard features.
pub fn fnr(
    results: &[SanitizeResult],
    standard: &FeatureVector,
    matcher: &Matcher,
) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::EmptyClass("fnr over an empty result set".into()));
    }
    let mut failures = 0usize;
    for r in results {
        let ok = match matcher {
            Matcher::Radius(radii) => matches(&r.noisy_features, standard, radii)?,
            Matcher::Euclidean(thr) => matches_euclidean(&r.noisy_features, standard, *thr)?,
        };
        if !ok {
            failures += 1;
        }
    }
    Ok(failures as f64 / results.len() as f64)
}

/// Per-draw metric row. `norm_var_dev` is defined as 0 for zero-noise draws
/// (sigma_t = 0).
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub sigma_t_sq: f64,
    pub sigma_r_sq: f64,
    pub norm_var_dev: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub matched: bool,
}

pub fn report(
    orig: &GrayImage,
    result: &SanitizeResult,
    standard: &FeatureVector,
    radii: &[f64],
) -> Result<MetricReport> {
    let sigma_t_sq = theoretical_variance(&result.scales_used, result.k_drawn);
    let sigma_r_sq = real_variance(orig, &result.noisy_image)?;
    let norm_var_dev = if sigma_t_sq > 0.0 {
        (sigma_r_sq - sigma_t_sq).abs() / sigma_t_sq
    } else {
        0.0
    };
    Ok(MetricReport {
        sigma_t_sq,
        sigma_r_sq,
        norm_var_dev,
        psnr_db: psnr(orig, &result.noisy_image, PsnrMode::Mse)?,
        ssim: ssim(orig, &result.noisy_image)?,
        matched: matches(&result.noisy_features, standard, radii)?,
    })
}

/// Batch-normalized deviation between realized and theoretical variance:
/// |mean sigma_r^2 - mean sigma_t^2| / mean sigma_t^2 over a batch of draws.
pub fn batch_variance_deviation(sigma_r: &[f64], sigma_t: &[f64]) -> f64 {
    let sr: f64 = sigma_r.iter().sum();
    let st: f64 = sigma_t.iter().sum();
    if st == 0.0 {
        return 0.0;
    }
    (sr - st).abs() / st
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn theoretical_variance_cases() {
        assert_eq!(theoretical_variance(&NoiseScales(vec![1.0, 1.0]), 2), 4.0);
        assert_eq!(theoretical_variance(&NoiseScales(vec![3.0, 1.0]), 1), 18.0);
        assert_eq!(theoretical_variance(&NoiseScales(vec![3.0]), 0), 0.0);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let b: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..2.0)).collect();
        let k = 6;
        let oracle: f64 = (0..k).map(|i| 2.0 * b[i] * b[i]).sum();
        assert!((theoretical_variance(&NoiseScales(b), k) - oracle).abs() < 1e-12);
    }

    #[test]
    fn real_variance_cases() {
        let a = GrayImage::constant(4, 5.0).unwrap();
        assert_eq!(real_variance(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.set(1, 2, 7.0);
        assert_eq!(real_variance(&a, &b).unwrap(), 4.0);
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let x = GrayImage::from_pixels(4, (0..16).map(|_| rng.gen_range(0.0..9.0)).collect())
            .unwrap();
        let y = GrayImage::from_pixels(4, (0..16).map(|_| rng.gen_range(0.0..9.0)).collect())
            .unwrap();
        let oracle: f64 = (0..16)
            .map(|i| (x.pixels()[i] - y.pixels()[i]).powi(2))
            .sum();
        assert!((real_variance(&x, &y).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn psnr_modes() {
        let a = GrayImage::constant(4, 100.0).unwrap();
        assert_eq!(psnr(&a, &a, PsnrMode::Mse).unwrap(), f64::INFINITY);

        // every pixel off by the noisy max: mse mode gives exactly 0 dB
        let orig = GrayImage::constant(4, 0.0).unwrap();
        let noisy = GrayImage::constant(4, 100.0).unwrap();
        assert!(psnr(&orig, &noisy, PsnrMode::Mse).unwrap().abs() < 1e-12);

        // two-line oracle on a random pair in both modes
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let x = GrayImage::from_pixels(4, (0..16).map(|_| rng.gen_range(0.0..255.0)).collect())
            .unwrap();
        let y = GrayImage::from_pixels(4, (0..16).map(|_| rng.gen_range(0.0..255.0)).collect())
            .unwrap();
        let sr: f64 = (0..16)
            .map(|i| (x.pixels()[i] - y.pixels()[i]).powi(2))
            .sum();
        let mx = y.pixels().iter().cloned().fold(f64::MIN, f64::max);
        let want_mse = 10.0 * (mx * mx / (sr / 16.0)).log10();
        let want_sum = 10.0 * (mx * mx / sr).log10();
        assert!((psnr(&x, &y, PsnrMode::Mse).unwrap() - want_mse).abs() < 1e-12);
        assert!((psnr(&x, &y, PsnrMode::PaperSum).unwrap() - want_sum).abs() < 1e-12);
    }

    #[test]
    fn ssim_identity_symmetry_and_closed_form() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let x = GrayImage::from_pixels(8, (0..64).map(|_| rng.gen_range(0.0..255.0)).collect())
            .unwrap();
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let y = GrayImage::from_pixels(8, (0..64).map(|_| rng.gen_range(0.0..255.0)).collect())
            .unwrap();
        assert!((ssim(&x, &y).unwrap() - ssim(&y, &x).unwrap()).abs() < 1e-15);

        // constant 0 vs constant 255: closed-form degenerate case
        let zero = GrayImage::constant(4, 0.0).unwrap();
        let bright = GrayImage::constant(4, 255.0).unwrap();
        let want = (SSIM_C1 * SSIM_C2) / ((255.0f64 * 255.0 + SSIM_C1) * SSIM_C2);
        assert!((ssim(&zero, &bright).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn batch_deviation() {
        assert_eq!(batch_variance_deviation(&[1.0, 3.0], &[2.0, 2.0]), 0.0);
        assert!((batch_variance_deviation(&[3.0, 3.0], &[2.0, 2.0]) - 0.5).abs() < 1e-15);
        assert_eq!(batch_variance_deviation(&[0.0], &[0.0]), 0.0);
    }
}
