//! Calibration and evaluation machinery shared by the subcommands and the
//! acceptance suite.
//!
//! Comparisons are paired: the geometric prefix and the unit Laplace draws
//! come from one stream per (image, repeat) cell and are reused across
//! methods and budget grid points, so ordering checks see common randomness
//! rather than independent noise.

use std::collections::BTreeMap;

use rayon::prelude::*;

use rankdp_core::budget::{
    default_k_active, envelope, epsilon_with_envelope, lambda_zeroing_mean_residual, solve_lmgd,
    solve_na, GeomEnvelope, LmgdSolution, NoiseScales,
};
use rankdp_core::eigen::{project, EigenBasis, FeatureVector, SensitivityProfile};
use rankdp_core::error::{Error, Result};
use rankdp_core::image::GrayImage;
use rankdp_core::influence::{jacobian, rank_coefficients, InfluenceWeights, RankingKey};
use rankdp_core::mechanism::{
    sanitize_with_draws, stream_rng, Method, NoiseDraws, SanitizeResult,
};
use rankdp_core::metrics::{psnr, real_variance, ssim, theoretical_variance, PsnrMode};
use rankdp_core::transform::{forward, TransformKind, WaveletPlan};
use rankdp_core::{matches, matches_euclidean};

use crate::config::{KActive, RunConfig};

pub fn transform_kind_of(method: Method) -> TransformKind {
    match method {
        Method::RdpNa | Method::RdpLmgd | Method::RdpUniform => TransformKind::Haar,
        Method::PixelDp => TransformKind::Identity,
        Method::DctDp => TransformKind::Dct,
    }
}

/// Resolves the configured active-set rule.
pub fn resolve_k_active(cfg: &RunConfig, env: &GeomEnvelope) -> usize {
    match cfg.k_active {
        KActive::Auto => default_k_active(env),
        KActive::Fixed(k) => k.min(env.len()),
    }
}

/// Ranked weights for the optimized mechanisms. Weight-energy ranking is
/// image-independent; the amplitude option ranks by the reference image's
/// coefficients.
pub fn optimized_weights(
    basis: &EigenBasis,
    plan: &WaveletPlan,
    ranking: RankingKey,
    reference: &GrayImage,
) -> Result<InfluenceWeights> {
    let jac = jacobian(basis, plan, TransformKind::Haar)?;
    let coeffs = forward(reference, plan, TransformKind::Haar)?;
    let (_, weights) = rank_coefficients(&jac, &coeffs, ranking)?;
    Ok(weights)
}

/// Calibrated scales for one optimized method at one budget, rescaled by
/// 1/b homogeneity so the achieved budget equals epsilon0 exactly.
pub struct OptimizedCalibration {
    pub scales: NoiseScales,
    pub achieved_before_rescale: f64,
    pub k_active: usize,
    pub lmgd: Option<LmgdSolution>,
}

pub fn calibrate_optimized(
    method: Method,
    cfg: &RunConfig,
    epsilon0: f64,
    weights: &InfluenceWeights,
    deltas: &[f64],
    env: &GeomEnvelope,
) -> Result<OptimizedCalibration> {
    let params = cfg.mechanism_params(epsilon0);
    let k_active = resolve_k_active(cfg, env);
    if !epsilon0.is_finite() {
        // budget sentinel: no noise at all
        return Ok(OptimizedCalibration {
            scales: NoiseScales(vec![0.0; weights.m_p()]),
            achieved_before_rescale: f64::INFINITY,
            k_active,
            lmgd: None,
        });
    }
    let na = solve_na(weights, deltas, &params, k_active, cfg.tau_w)?;
    let (eps_na, _) = epsilon_with_envelope(weights, deltas, &na, env)?;
    let feasible = na.scaled(eps_na / epsilon0);
    match method {
        Method::RdpNa => Ok(OptimizedCalibration {
            scales: feasible,
            achieved_before_rescale: eps_na,
            k_active,
            lmgd: None,
        }),
        Method::RdpLmgd => {
            let lambda0 =
                lambda_zeroing_mean_residual(weights, deltas, &feasible, cfg.p, k_active)?;
            let sol = solve_lmgd(weights, deltas, &params, &feasible, lambda0)?;
            let (eps_lmgd, _) = epsilon_with_envelope(weights, deltas, &sol.scales, env)?;
            let scales = sol.scales.scaled(eps_lmgd / epsilon0);
            Ok(OptimizedCalibration {
                scales,
                achieved_before_rescale: eps_lmgd,
                k_active,
                lmgd: Some(sol),
            })
        }
        _ => Err(Error::CalibrationMismatch(
            "calibrate_optimized expects an optimized method".into(),
        )),
    }
}

/// Per-image uniform-scale baseline calibration: amplitude ranking in the
/// method's own domain, with the shared scale at budget 1 (scale by
/// 1/epsilon0 for other budgets).
pub struct BaselineCalibration {
    pub weights: InfluenceWeights,
    pub unit_scale: f64,
}

pub fn calibrate_baseline(
    method: Method,
    basis: &EigenBasis,
    plan: &WaveletPlan,
    img: &GrayImage,
    deltas: &[f64],
    env: &GeomEnvelope,
) -> Result<BaselineCalibration> {
    let kind = transform_kind_of(method);
    let jac = jacobian(basis, plan, kind)?;
    let coeffs = forward(img, plan, kind)?;
    let (_, weights) = rank_coefficients(&jac, &coeffs, RankingKey::Amplitude)?;
    let ones = NoiseScales(vec![1.0; weights.m_p()]);
    let (e1, _) = epsilon_with_envelope(&weights, deltas, &ones, env)?;
    Ok(BaselineCalibration {
        weights,
        unit_scale: e1,
    })
}

/// One per-draw evaluation row.
#[derive(Debug, Clone)]
pub struct EvalRow {
    pub image_id: String,
    pub is_subject: bool,
    pub method: Method,
    pub epsilon0: f64,
    pub seed: u64,
    pub stream: u64,
    pub k_drawn: usize,
    pub sigma_t_sq: f64,
    pub sigma_r_sq: f64,
    pub norm_var_dev: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub matched_radius: bool,
    pub matched_euclid: bool,
}

/// Aggregate over one (method, epsilon0) cell.
#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub method: Method,
    pub epsilon0: f64,
    pub draws: usize,
    pub mean_sigma_t_sq: f64,
    pub mean_sigma_r_sq: f64,
    pub batch_var_dev: f64,
    /// Mean PSNR over draws that added noise (K >= 1).
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
    pub fnr_radius: f64,
    pub fnr_euclid: f64,
}

pub struct EvaluationInput<'a> {
    pub cfg: &'a RunConfig,
    pub basis: &'a EigenBasis,
    pub profile: &'a SensitivityProfile,
    pub subjects: &'a [GrayImage],
    pub impostors: &'a [GrayImage],
    pub standard: &'a GrayImage,
    pub methods: &'a [Method],
    pub grid: &'a [f64],
    pub repeats: usize,
}

pub struct EvaluationOutput {
    pub rows: Vec<EvalRow>,
    pub summaries: Vec<EvalSummary>,
}

struct MethodPlan {
    method: Method,
    kind: TransformKind,
    // per grid point for optimized methods (shared across images)
    optimized: Option<Vec<NoiseScales>>,
}

fn worker_count() -> usize {
    std::env::var("RANKDP_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

/// Runs the full grid: every method and budget over every image and repeat,
/// with paired draws per (image, repeat) cell.
pub fn evaluate(input: &EvaluationInput<'_>) -> Result<EvaluationOutput> {
    let cfg = input.cfg;
    let plan = WaveletPlan::new(cfg.side, cfg.levels)?;
    let m_p = plan.coeff_len();
    let env = envelope(m_p, cfg.p)?;
    let deltas = &input.profile.deltas;
    let radii = &input.profile.radii;
    let std_features = project(input.basis, input.standard)?;

    let opt_weights = optimized_weights(input.basis, &plan, cfg.ranking, input.standard)?;

    let mut plans = Vec::new();
    for &method in input.methods {
        let optimized = match method {
            Method::RdpNa | Method::RdpLmgd => {
                let mut per_eps = Vec::with_capacity(input.grid.len());
                for &e0 in input.grid {
                    let cal =
                        calibrate_optimized(method, cfg, e0, &opt_weights, deltas, &env)?;
                    per_eps.push(cal.scales);
                }
                Some(per_eps)
            }
            _ => None,
        };
        plans.push(MethodPlan {
            method,
            kind: transform_kind_of(method),
            optimized,
        });
    }

    let images: Vec<(String, bool, &GrayImage)> = input
        .subjects
        .iter()
        .enumerate()
        .map(|(i, img)| (format!("subject_{:02}", i), true, img))
        .chain(
            input
                .impostors
                .iter()
                .enumerate()
                .map(|(i, img)| (format!("impostor_{:02}", i), false, img)),
        )
        .collect();

    let repeats = input.repeats;
    let run_image = |(img_idx, (image_id, is_subject, img)): (
        usize,
        &(String, bool, &GrayImage),
    )|
     -> Result<Vec<EvalRow>> {
        let mut rows = Vec::with_capacity(plans.len() * input.grid.len() * repeats);
        // per-image baseline calibrations, reused across the grid
        let mut baseline: BTreeMap<&'static str, BaselineCalibration> = BTreeMap::new();
        for plan_m in &plans {
            if plan_m.optimized.is_none() {
                baseline.insert(
                    plan_m.method.as_str(),
                    calibrate_baseline(plan_m.method, input.basis, &plan, img, deltas, &env)?,
                );
            }
        }
        for rep in 0..repeats {
            let stream = (img_idx * repeats + rep) as u64;
            let mut rng = stream_rng(cfg.seed, stream);
            let draws = NoiseDraws::draw(cfg.p, m_p, &mut rng)?;
            for plan_m in &plans {
                for (ei, &e0) in input.grid.iter().enumerate() {
                    let result = match &plan_m.optimized {
                        Some(per_eps) => sanitize_with_draws(
                            img,
                            input.basis,
                            &plan,
                            plan_m.kind,
                            &opt_weights.perm,
                            &per_eps[ei],
                            &draws,
                            plan_m.method,
                            cfg.seed,
                            stream,
                        )?,
                        None => {
                            let cal = &baseline[plan_m.method.as_str()];
                            let scales =
                                NoiseScales(vec![cal.unit_scale / e0; m_p]);
                            sanitize_with_draws(
                                img,
                                input.basis,
                                &plan,
                                plan_m.kind,
                                &cal.weights.perm,
                                &scales,
                                &draws,
                                plan_m.method,
                                cfg.seed,
                                stream,
                            )?
                        }
                    };
                    rows.push(eval_row(
                        img,
                        &result,
                        image_id,
                        *is_subject,
                        e0,
                        &std_features,
                        radii,
                        cfg.euclid_threshold,
                    )?);
                }
            }
        }
        Ok(rows)
    };

    let rows: Vec<EvalRow> = if worker_count() > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(worker_count())
            .build()
            .map_err(|e| Error::CalibrationMismatch(format!("thread pool: {e}")))?;
        let chunks: Vec<Result<Vec<EvalRow>>> =
            pool.install(|| images.par_iter().enumerate().map(run_image).collect());
        let mut out = Vec::new();
        for chunk in chunks {
            out.extend(chunk?);
        }
        out
    } else {
        let mut out = Vec::new();
        for pair in images.iter().enumerate() {
            out.extend(run_image(pair)?);
        }
        out
    };

    let summaries = summarize(&rows, input.methods, input.grid);
    Ok(EvaluationOutput { rows, summaries })
}

#[allow(clippy::too_many_arguments)]
fn eval_row(
    orig: &GrayImage,
    result: &SanitizeResult,
    image_id: &str,
    is_subject: bool,
    epsilon0: f64,
    std_features: &FeatureVector,
    radii: &[f64],
    euclid_threshold: f64,
) -> Result<EvalRow> {
    let sigma_t_sq = theoretical_variance(&result.scales_used, result.k_drawn);
    let sigma_r_sq = real_variance(orig, &result.noisy_image)?;
    let norm_var_dev = if sigma_t_sq > 0.0 {
        (sigma_r_sq - sigma_t_sq).abs() / sigma_t_sq
    } else {
        0.0
    };
    Ok(EvalRow {
        image_id: image_id.to_string(),
        is_subject,
        method: result.method,
        epsilon0,
        seed: result.seed,
        stream: result.stream,
        k_drawn: result.k_drawn,
        sigma_t_sq,
        sigma_r_sq,
        norm_var_dev,
        psnr_db: psnr(orig, &result.noisy_image, PsnrMode::Mse)?,
        ssim: ssim(orig, &result.noisy_image)?,
        matched_radius: matches(&result.noisy_features, std_features, radii)?,
        matched_euclid: matches_euclidean(&result.noisy_features, std_features, euclid_threshold)
            .unwrap_or(false),
    })
}

fn summarize(rows: &[EvalRow], methods: &[Method], grid: &[f64]) -> Vec<EvalSummary> {
    let mut out = Vec::new();
    for &method in methods {
        for &e0 in grid {
            let cell: Vec<&EvalRow> = rows
                .iter()
                .filter(|r| r.method == method && r.epsilon0 == e0)
                .collect();
            if cell.is_empty() {
                continue;
            }
            let n = cell.len() as f64;
            let mean_sigma_t = cell.iter().map(|r| r.sigma_t_sq).sum::<f64>() / n;
            let mean_sigma_r = cell.iter().map(|r| r.sigma_r_sq).sum::<f64>() / n;
            let batch_var_dev = if mean_sigma_t > 0.0 {
                (mean_sigma_r - mean_sigma_t).abs() / mean_sigma_t
            } else {
                0.0
            };
            let noisy: Vec<&&EvalRow> = cell
                .iter()
                .filter(|r| r.k_drawn >= 1 && r.psnr_db.is_finite())
                .collect();
            let mean_psnr = if noisy.is_empty() {
                f64::INFINITY
            } else {
                noisy.iter().map(|r| r.psnr_db).sum::<f64>() / noisy.len() as f64
            };
            let mean_ssim = cell.iter().map(|r| r.ssim).sum::<f64>() / n;
            let subj: Vec<&&EvalRow> = cell.iter().filter(|r| r.is_subject).collect();
            let (fnr_radius, fnr_euclid) = if subj.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                let ns = subj.len() as f64;
                (
                    subj.iter().filter(|r| !r.matched_radius).count() as f64 / ns,
                    subj.iter().filter(|r| !r.matched_euclid).count() as f64 / ns,
                )
            };
            out.push(EvalSummary {
                method,
                epsilon0: e0,
                draws: cell.len(),
                mean_sigma_t_sq: mean_sigma_t,
                mean_sigma_r_sq: mean_sigma_r,
                batch_var_dev,
                mean_psnr_db: mean_psnr,
                mean_ssim,
                fnr_radius,
                fnr_euclid,
            });
        }
    }
    out
}

/// Batch deviation per image over its repeats, averaged across the gallery:
/// the statistic gating the optimized methods' variance behaviour.
pub fn gallery_mean_batch_deviation(rows: &[EvalRow], method: Method, epsilon0: f64) -> f64 {
    let mut per_image: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for r in rows
        .iter()
        .filter(|r| r.method == method && r.epsilon0 == epsilon0)
    {
        let e = per_image.entry(r.image_id.as_str()).or_insert((0.0, 0.0));
        e.0 += r.sigma_r_sq;
        e.1 += r.sigma_t_sq;
    }
    let devs: Vec<f64> = per_image
        .values()
        .map(|(sr, st)| if *st > 0.0 { (sr - st).abs() / st } else { 0.0 })
        .collect();
    devs.iter().sum::<f64>() / devs.len().max(1) as f64
}

pub fn format_rows_csv(rows: &[EvalRow], p: f64) -> String {
    let mut out = String::from(
        "image_id,method,epsilon0,p,seed,stream,K,sigma_t_sq,sigma_r_sq,norm_var_dev,psnr_db,ssim,matched\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{:.9e},{:.9e},{:.6},{},{:.6},{}\n",
            r.image_id,
            r.method.as_str(),
            r.epsilon0,
            p,
            r.seed,
            r.stream,
            r.k_drawn,
            r.sigma_t_sq,
            r.sigma_r_sq,
            r.norm_var_dev,
            if r.psnr_db.is_finite() {
                format!("{:.4}", r.psnr_db)
            } else {
                "inf".to_string()
            },
            r.ssim,
            if r.matched_radius { 1 } else { 0 },
        ));
    }
    out
}

pub fn format_summary_csv(summaries: &[EvalSummary], dataset: &str) -> String {
    let mut out = String::from(
        "source,dataset,method,epsilon0,draws,mean_sigma_t_sq,mean_sigma_r_sq,batch_var_dev,mean_psnr_db,mean_ssim,fnr_radius,fnr_euclid\n",
    );
    for s in summaries {
        out.push_str(&format!(
            "desk,{},{},{},{},{:.9e},{:.9e},{:.6},{},{:.6},{},{}\n",
            dataset,
            s.method.as_str(),
            s.epsilon0,
            s.draws,
            s.mean_sigma_t_sq,
            s.mean_sigma_r_sq,
            s.batch_var_dev,
            if s.mean_psnr_db.is_finite() {
                format!("{:.4}", s.mean_psnr_db)
            } else {
                "inf".to_string()
            },
            s.mean_ssim,
            if s.fnr_radius.is_nan() {
                String::new()
            } else {
                format!("{:.6}", s.fnr_radius)
            },
            if s.fnr_euclid.is_nan() {
                String::new()
            } else {
                format!("{:.6}", s.fnr_euclid)
            },
        ));
    }
    for (dataset, method, ssims) in crate::refdata::SSIM_REFERENCE {
        for (e0, ssim) in crate::refdata::SSIM_REFERENCE_GRID.iter().zip(ssims) {
            out.push_str(&format!(
                "paper,{},{},{},,,,,,{:.4},,\n",
                dataset, method, e0, ssim
            ));
        }
    }
    out
}
