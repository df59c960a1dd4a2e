//! Sanitization mechanisms: ranked Laplace noise under a geometric prefix,
//! plus the uniform-scale wavelet, pixel-domain and DCT-domain baselines.
//!
//! Randomness comes from ChaCha12, a counter-based generator with explicit
//! stream splitting: batch runs give each (image, repeat) cell its own stream
//! so results are reproducible and independent of evaluation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::budget::{
    epsilon_with_envelope, envelope, GeomEnvelope, MechanismParams, NoiseScales,
};
use crate::eigen::{project, EigenBasis, FeatureVector};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::influence::{jacobian, rank_coefficients, InfluenceWeights, RankingKey};
use crate::transform::{forward, inverse, TransformKind, WaveletPlan};

/// Sanitization mechanism label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    RdpNa,
    RdpLmgd,
    RdpUniform,
    PixelDp,
    DctDp,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::RdpNa => "rdp_na",
            Method::RdpLmgd => "rdp_lmgd",
            Method::RdpUniform => "rdp_uniform",
            Method::PixelDp => "pixel_dp",
            Method::DctDp => "dct_dp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rdp_na" => Some(Method::RdpNa),
            "rdp_lmgd" => Some(Method::RdpLmgd),
            "rdp_uniform" => Some(Method::RdpUniform),
            "pixel_dp" => Some(Method::PixelDp),
            "dct_dp" => Some(Method::DctDp),
            _ => None,
        }
    }

    pub fn all() -> [Method; 5] {
        [
            Method::RdpNa,
            Method::RdpLmgd,
            Method::RdpUniform,
            Method::PixelDp,
            Method::DctDp,
        ]
    }
}

/// Output of one sanitization. The noisy image is kept unclamped; clamping
/// happens only when the image is written to disk.
#[derive(Debug, Clone)]
pub struct SanitizeResult {
    pub noisy_image: GrayImage,
    pub noisy_features: FeatureVector,
    /// Realized geometric prefix; 0 means the draw added no noise.
    pub k_drawn: usize,
    pub scales_used: NoiseScales,
    pub method: Method,
    pub seed: u64,
    pub stream: u64,
}

/// One independent randomness stream of the counter-based generator.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws the geometric prefix length K in [0, m_p] with survival function
/// P(K >= k) = g_k, i.e. pmf p(1-p)^k on [1, m_p] and the leftover mass
/// p + (1-p)^(m_p+1) at K = 0. This matches the exposure envelope exactly,
/// so the variance algebra of the budget module holds with no truncation
/// error. Mean is sum_k g_k, about (1-p)/p.
pub fn sample_geometric(p: f64, m_p: usize, rng: &mut ChaCha12Rng) -> Result<usize> {
    if !(0.0 < p && p < 1.0) {
        return Err(Error::BadProbability(p));
    }
    let u: f64 = rng.gen();
    let log_q = f64::ln_1p(-p);
    let tail = ((m_p + 1) as f64 * log_q).exp();
    // largest k with (1-p)^k > u + (1-p)^(m_p+1)
    let mut k = ((u + tail).ln() / log_q).floor() as i64;
    if k < 0 {
        k = 0;
    }
    let mut k = (k as usize).min(m_p);
    let g = |k: usize| -> f64 {
        (k as f64 * log_q).exp() * (-f64::exp_m1((m_p + 1 - k) as f64 * log_q))
    };
    // exact boundary correction against the envelope
    while k < m_p && g(k + 1) > u {
        k += 1;
    }
    while k > 0 && g(k) <= u {
        k -= 1;
    }
    Ok(k)
}

/// Zero-mean Laplace draw via inverse CDF; scale 0 returns exactly 0.
pub fn sample_laplace(scale: f64, rng: &mut ChaCha12Rng) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    scale * unit_laplace(rng)
}

/// Standard (unit-scale) Laplace draw.
pub fn unit_laplace(rng: &mut ChaCha12Rng) -> f64 {
    let u: f64 = rng.gen::<f64>() - 0.5;
    let inner = (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE);
    -u.signum() * inner.ln()
}

/// Shared randomness for one sanitization: the geometric prefix and a vector
/// of unit Laplace variates. Drawing these once per (image, repeat) cell and
/// reusing them across methods pairs the comparisons in the harness.
#[derive(Debug, Clone)]
pub struct NoiseDraws {
    pub k: usize,
    pub unit: Vec<f64>,
}

impl NoiseDraws {
    pub fn draw(p: f64, m_p: usize, rng: &mut ChaCha12Rng) -> Result<Self> {
        let k = sample_geometric(p, m_p, rng)?;
        let unit = (0..k).map(|_| unit_laplace(rng)).collect();
        Ok(Self { k, unit })
    }
}

/// Core of every mechanism: add xi_k = b_k * unit_k to the top-K ranked
/// coefficients, leave the rest untouched bit-exactly, synthesize and
/// re-project.
pub fn sanitize_with_draws(
    img: &GrayImage,
    basis: &EigenBasis,
    plan: &WaveletPlan,
    kind: TransformKind,
    perm: &[usize],
    scales: &NoiseScales,
    draws: &NoiseDraws,
    method: Method,
    seed: u64,
    stream: u64,
) -> Result<SanitizeResult> {
    let m_p = plan.coeff_len();
    if scales.len() != m_p || perm.len() != m_p {
        return Err(Error::CalibrationMismatch(format!(
            "scales/permutation length vs plan ({} / {} vs {})",
            scales.len(),
            perm.len(),
            m_p
        )));
    }
    if basis.side != plan.side || img.side() != plan.side {
        return Err(Error::CalibrationMismatch(
            "basis/image side vs plan".into(),
        ));
    }
    if draws.unit.len() < draws.k {
        return Err(Error::CalibrationMismatch(
            "noise draws shorter than the prefix".into(),
        ));
    }
    let mut coeffs = forward(img, plan, kind)?;
    for r in 0..draws.k {
        coeffs[perm[r]] += scales.0[r] * draws.unit[r];
    }
    let noisy_image = inverse(&coeffs, plan, kind)?;
    let noisy_features = project(basis, &noisy_image)?;
    Ok(SanitizeResult {
        noisy_image,
        noisy_features,
        k_drawn: draws.k,
        scales_used: scales.clone(),
        method,
        seed,
        stream,
    })
}

/// Ranked mechanism with precalibrated per-coefficient scales (the optimized
/// variants). `weights` carries the ranking permutation the scales were
/// calibrated for; determinism is (params.seed, stream)-keyed.
pub fn sanitize_rdp(
    img: &GrayImage,
    basis: &EigenBasis,
    plan: &WaveletPlan,
    scales: &NoiseScales,
    weights: &InfluenceWeights,
    params: &MechanismParams,
    method: Method,
    stream: u64,
) -> Result<SanitizeResult> {
    params.validate()?;
    let mut rng = stream_rng(params.seed, stream);
    let draws = NoiseDraws::draw(params.p, plan.coeff_len(), &mut rng)?;
    sanitize_with_draws(
        img,
        basis,
        plan,
        TransformKind::Haar,
        &weights.perm,
        scales,
        &draws,
        method,
        params.seed,
        stream,
    )
}

/// Closed-form uniform-scale calibration: by 1/b homogeneity of the budget,
/// eps(c . 1) = eps(1)/c, so the shared scale hitting eps0 exactly is
/// eps(1)/eps0.
pub fn calibrate_uniform_scale(
    w: &InfluenceWeights,
    deltas: &[f64],
    env: &GeomEnvelope,
    epsilon0: f64,
) -> Result<f64> {
    let ones = NoiseScales(vec![1.0; w.m_p()]);
    let (e1, _) = epsilon_with_envelope(w, deltas, &ones, env)?;
    Ok(e1 / epsilon0)
}

/// One uniform-scale baseline sanitization: rank by coefficient amplitude in
/// the mechanism's own domain, calibrate the shared scale through that
/// ranking, then run the common machinery.
fn sanitize_uniform_baseline(
    img: &GrayImage,
    basis: &EigenBasis,
    plan: &WaveletPlan,
    kind: TransformKind,
    deltas: &[f64],
    params: &MechanismParams,
    method: Method,
    stream: u64,
    draws: Option<&NoiseDraws>,
) -> Result<SanitizeResult> {
    params.validate()?;
    let jac = jacobian(basis, plan, kind)?;
    let coeffs = forward(img, plan, kind)?;
    let (_, weights) = rank_coefficients(&jac, &coeffs, RankingKey::Amplitude)?;
    let env = envelope(plan.coeff_len(), params.p)?;
    let b = calibrate_uniform_scale(&weights, deltas, &env, params.epsilon0)?;
    let scales = NoiseScales(vec![b; plan.coeff_len()]);
    let owned;
    let draws = match draws {
        Some(d) => d,
        None => {
            let mut rng = stream_rng(params.seed, stream);
            owned = NoiseDraws::draw(params.p, plan.coeff_len(), &mut rng)?;
            &owned
        }
    };
    sanitize_with_draws(
        img, basis, plan, kind, &weights.perm, &scales, draws, method, params.seed, stream,
    )
}

/// Uniform-scale ranked-wavelet baseline.
pub fn sanitize_rdp_uniform(
    img: &GrayImage,
    basis: &EigenBasis,
    plan: &WaveletPlan,
    deltas: &[f64],
    params: &MechanismParams,
    stream: u64,
) -> Result<SanitizeResult> {
    sanitize_uniform_baseline(
        img,
        basis,
        plan,
        TransformKind::Haar,
        deltas,
        params,
        Method::RdpUniform,
        stream,
        None,
    )
}

/// Pixel-domain baseline: identity transform, shared scale.
pub fn sanitize_pixel_dp(
    img: &GrayImage,
    basis: &EigenBasis,
    plan: &WaveletPlan,
    deltas: &[f64],
    params: &MechanismParams,
    stream: u64,
) -> Result<SanitizeResult> {
    sanitize_uniform_baseline(
        img,
        basis,
        plan,
        TransformKind::Identity,
        deltas,
        params,
        Method::PixelDp,
        stream,
        None,
    )
}

/// Frequency-domain baseline: 2D DCT, shared scale.
pub fn sanitize_dct_dp(
    img: &GrayImage,
    basis: &EigenBasis,
    plan: &WaveletPlan,
    deltas: &[f64],
    params: &MechanismParams,
    stream: u64,
) -> Result<SanitizeResult> {
    sanitize_uniform_baseline(
        img,
        basis,
        plan,
        TransformKind::Dct,
        deltas,
        params,
        Method::DctDp,
        stream,
        None,
    )
}

/// Baseline entry point with externally supplied draws (paired-comparison
/// harness).
pub fn sanitize_baseline_with_draws(
    img: &GrayImage,
    basis: &EigenBasis,
    plan: &WaveletPlan,
    method: Method,
    deltas: &[f64],
    params: &MechanismParams,
    stream: u64,
    draws: &NoiseDraws,
) -> Result<SanitizeResult> {
    let kind = match method {
        Method::RdpUniform => TransformKind::Haar,
        Method::PixelDp => TransformKind::Identity,
        Method::DctDp => TransformKind::Dct,
        _ => {
            return Err(Error::CalibrationMismatch(
                "not a uniform-scale baseline".into(),
            ))
        }
    };
    sanitize_uniform_baseline(
        img,
        basis,
        plan,
        kind,
        deltas,
        params,
        method,
        stream,
        Some(draws),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::budget::{cost_with_envelope, epsilon_of_scales};
    use crate::eigen::fit_eigenbasis;
    use rand::Rng;

    fn fitted(side: usize, m_f: usize, seed: u64) -> EigenBasis {
        let mut rng = stream_rng(seed, 0);
        let imgs: Vec<GrayImage> = (0..12)
            .map(|_| {
                GrayImage::from_pixels(
                    side,
                    (0..side * side).map(|_| rng.gen_range(0.0..255.0)).collect(),
                )
                .unwrap()
            })
            .collect();
        let refs: Vec<&GrayImage> = imgs.iter().collect();
        fit_eigenbasis(&refs, m_f).unwrap()
    }

    #[test]
    fn geometric_law_small_case() {
        // p = 0.5, m_p = 2 under the envelope-matched law:
        // P(0) = 0.625, P(1) = 0.25, P(2) = 0.125
        let mut rng = stream_rng(1, 0);
        let n = 200_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sample_geometric(0.5, 2, &mut rng).unwrap()] += 1;
        }
        let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        assert!((freq[0] - 0.625).abs() < 5e-3, "{:?}", freq);
        assert!((freq[1] - 0.25).abs() < 5e-3);
        assert!((freq[2] - 0.125).abs() < 5e-3);
    }

    #[test]
    fn geometric_survival_matches_envelope() {
        let m_p = 64;
        let p = 0.13;
        let env = envelope(m_p, p).unwrap();
        let mut rng = stream_rng(2, 0);
        let n = 200_000;
        let mut at_least = vec![0usize; m_p + 1];
        for _ in 0..n {
            let k = sample_geometric(p, m_p, &mut rng).unwrap();
            for ge in at_least.iter_mut().take(k + 1) {
                *ge += 1;
            }
        }
        for k in [1usize, 2, 5, 10, 20] {
            let emp = at_least[k] as f64 / n as f64;
            assert!(
                (emp - env.at(k)).abs() < 6e-3,
                "k={} emp {} vs g {}",
                k,
                emp,
                env.at(k)
            );
        }
    }

    #[test]
    fn geometric_mean_matches_envelope_mass() {
        let p = 0.02;
        let m_p = 4096;
        let env = envelope(m_p, p).unwrap();
        let expect = env.total_mass(); // ~ (1-p)/p = 49
        let mut rng = stream_rng(3, 0);
        let n = 500_000;
        let mean = (0..n)
            .map(|_| sample_geometric(p, m_p, &mut rng).unwrap() as f64)
            .sum::<f64>()
            / n as f64;
        assert!((mean - expect).abs() / expect < 0.01, "mean {mean} vs {expect}");
    }

    #[test]
    fn laplace_moments() {
        let mut rng = stream_rng(4, 0);
        assert_eq!(sample_laplace(0.0, &mut rng), 0.0);
        let b = 2.5;
        let n = 1_000_000;
        let mut draws: Vec<f64> = (0..n).map(|_| sample_laplace(b, &mut rng)).collect();
        let var = draws.iter().map(|x| x * x).sum::<f64>() / n as f64;
        assert!((var - 2.0 * b * b).abs() / (2.0 * b * b) < 0.02, "var {var}");
        draws.sort_by(|a, c| a.partial_cmp(c).unwrap());
        let median = draws[n / 2];
        assert!(median.abs() < 0.01 * b, "median {median}");
    }

    #[test]
    fn zero_scales_are_identity() {
        let basis = fitted(8, 3, 5);
        let plan = WaveletPlan::new(8, 3).unwrap();
        let img = GrayImage::from_pixels(8, (0..64).map(|i| i as f64).collect()).unwrap();
        let m_p = 64;
        let weights = InfluenceWeights {
            w: basis.basis.clone(),
            perm: (0..m_p).collect(),
        };
        let params = MechanismParams {
            epsilon0: 1.0,
            p: 0.3,
            ..Default::default()
        };
        let res = sanitize_rdp(
            &img,
            &basis,
            &plan,
            &NoiseScales(vec![0.0; m_p]),
            &weights,
            &params,
            Method::RdpNa,
            0,
        )
        .unwrap();
        let max_err = img
            .pixels()
            .iter()
            .zip(res.noisy_image.pixels())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-9);
        let f0 = project(&basis, &img).unwrap();
        for (a, b) in res.noisy_features.0.iter().zip(&f0.0) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_given_seed_and_stream() {
        let basis = fitted(8, 3, 6);
        let plan = WaveletPlan::new(8, 3).unwrap();
        let img = GrayImage::constant(8, 128.0).unwrap();
        let weights = InfluenceWeights {
            w: basis.basis.clone(),
            perm: (0..64).collect(),
        };
        let scales = NoiseScales(vec![1.5; 64]);
        let params = MechanismParams {
            epsilon0: 1.0,
            p: 0.2,
            seed: 99,
            ..Default::default()
        };
        let a = sanitize_rdp(&img, &basis, &plan, &scales, &weights, &params, Method::RdpNa, 7)
            .unwrap();
        let b = sanitize_rdp(&img, &basis, &plan, &scales, &weights, &params, Method::RdpNa, 7)
            .unwrap();
        assert_eq!(a.noisy_image.pixels(), b.noisy_image.pixels());
        assert_eq!(a.k_drawn, b.k_drawn);
        let c = sanitize_rdp(&img, &basis, &plan, &scales, &weights, &params, Method::RdpNa, 8)
            .unwrap();
        assert!(a.k_drawn != c.k_drawn || a.noisy_image.pixels() != c.noisy_image.pixels());
    }

    #[test]
    fn untouched_beyond_prefix_and_hand_composition() {
        let basis = fitted(8, 2, 7);
        let plan = WaveletPlan::new(8, 3).unwrap();
        let mut rng = stream_rng(8, 0);
        let img = GrayImage::from_pixels(
            8,
            (0..64).map(|_| rng.gen_range(0.0..255.0)).collect(),
        )
        .unwrap();
        let m_p = 64;
        let perm: Vec<usize> = (0..m_p).rev().collect(); // any fixed permutation
        let scales = NoiseScales((0..m_p).map(|k| 0.1 + k as f64 * 0.01).collect());
        let draws = NoiseDraws {
            k: 5,
            unit: vec![1.0, -2.0, 0.5, 3.0, -0.25],
        };
        let res = sanitize_with_draws(
            &img,
            &basis,
            &plan,
            TransformKind::Haar,
            &perm,
            &scales,
            &draws,
            Method::RdpNa,
            0,
            0,
        )
        .unwrap();
        // hand-compose the reference path
        let mut coeffs = forward(&img, &plan, TransformKind::Haar).unwrap();
        let before = coeffs.clone();
        for r in 0..5 {
            coeffs[perm[r]] += scales.0[r] * draws.unit[r];
        }
        let expect = inverse(&coeffs, &plan, TransformKind::Haar).unwrap();
        assert_eq!(res.noisy_image.pixels(), expect.pixels());
        // coefficients beyond the prefix unchanged bit-exactly
        let after = forward(&res.noisy_image, &plan, TransformKind::Haar).unwrap();
        for r in 5..m_p {
            let orig = before[perm[r]];
            assert!((after[perm[r]] - orig).abs() < 1e-9);
        }
        // reported features equal re-projection
        let reproj = project(&basis, &res.noisy_image).unwrap();
        for (a, b) in res.noisy_features.0.iter().zip(&reproj.0) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_baselines_calibrate_to_epsilon0() {
        let basis = fitted(8, 3, 9);
        let plan = WaveletPlan::new(8, 3).unwrap();
        let deltas = vec![40.0, 25.0, 10.0];
        let params = MechanismParams {
            epsilon0: 0.7,
            p: 0.1,
            seed: 5,
            ..Default::default()
        };
        let mut rng = stream_rng(10, 0);
        let img = GrayImage::from_pixels(
            8,
            (0..64).map(|_| rng.gen_range(0.0..255.0)).collect(),
        )
        .unwrap();
        for (kind, method) in [
            (TransformKind::Haar, Method::RdpUniform),
            (TransformKind::Identity, Method::PixelDp),
            (TransformKind::Dct, Method::DctDp),
        ] {
            let jac = jacobian(&basis, &plan, kind).unwrap();
            let coeffs = forward(&img, &plan, kind).unwrap();
            let (_, weights) = rank_coefficients(&jac, &coeffs, RankingKey::Amplitude).unwrap();
            let env = envelope(64, params.p).unwrap();
            let b = calibrate_uniform_scale(&weights, &deltas, &env, params.epsilon0).unwrap();
            let scales = NoiseScales(vec![b; 64]);
            let (eps, _) = epsilon_of_scales(&weights, &deltas, &scales, params.p).unwrap();
            assert!(
                (eps - params.epsilon0).abs() < 1e-9,
                "{:?}: {eps}",
                method
            );

            // independent bisection oracle, monotone by homogeneity
            let eval = |s: f64| {
                let (e, _) = epsilon_of_scales(
                    &weights,
                    &deltas,
                    &NoiseScales(vec![s; 64]),
                    params.p,
                )
                .unwrap();
                e
            };
            let (mut lo, mut hi) = (b / 16.0, b * 16.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if eval(mid) > params.epsilon0 {
                    lo = mid; // too little noise: eps too large
                } else {
                    hi = mid;
                }
            }
            let bis = 0.5 * (lo + hi);
            assert!(
                (eval(bis) - params.epsilon0).abs() < 1e-6,
                "bisection oracle failed for {:?}",
                method
            );
            assert!(((bis - b) / b).abs() < 1e-6);
        }
    }

    #[test]
    fn baseline_zero_noise_when_k_zero() {
        let basis = fitted(8, 2, 11);
        let plan = WaveletPlan::new(8, 3).unwrap();
        let img = GrayImage::constant(8, 100.0).unwrap();
        let params = MechanismParams {
            epsilon0: 0.5,
            p: 0.3,
            seed: 1,
            ..Default::default()
        };
        let draws = NoiseDraws { k: 0, unit: vec![] };
        let res = sanitize_baseline_with_draws(
            &img,
            &basis,
            &plan,
            Method::PixelDp,
            &[10.0, 5.0],
            &params,
            0,
            &draws,
        )
        .unwrap();
        assert_eq!(res.noisy_image.pixels(), img.pixels());
        assert_eq!(res.k_drawn, 0);
    }

    #[test]
    fn monte_carlo_variance_matches_cost() {
        // empirical squared pixel deviation within 2% of 2 * cost(b, p)
        let basis = fitted(4, 2, 12);
        let plan = WaveletPlan::new(4, 2).unwrap();
        let m_p = 16;
        let mut rng = stream_rng(13, 1);
        let img = GrayImage::from_pixels(
            4,
            (0..16).map(|_| rng.gen_range(0.0..255.0)).collect(),
        )
        .unwrap();
        let perm: Vec<usize> = (0..m_p).collect();
        let scales = NoiseScales((0..m_p).map(|_| rng.gen_range(0.5..2.0)).collect());
        let p = 0.3;
        let env = envelope(m_p, p).unwrap();
        let theory = 2.0 * cost_with_envelope(&scales, &env);
        let n = 100_000;
        let mut acc = 0.0;
        for s in 0..n {
            let mut cell = stream_rng(14, s as u64);
            let draws = NoiseDraws::draw(p, m_p, &mut cell).unwrap();
            let res = sanitize_with_draws(
                &img,
                &basis,
                &plan,
                TransformKind::Haar,
                &perm,
                &scales,
                &draws,
                Method::RdpNa,
                14,
                s as u64,
            )
            .unwrap();
            acc += res.noisy_image.squared_deviation(&img).unwrap();
        }
        let emp = acc / n as f64;
        assert!(
            (emp - theory).abs() / theory < 0.02,
            "emp {emp} vs theory {theory}"
        );
    }
}
