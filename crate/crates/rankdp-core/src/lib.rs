//! Ranked differential privacy for grayscale face images.
//!
//! The pipeline decomposes an image into an orthonormal multiscale wavelet
//! subspace, ranks coefficients by their influence on an eigenface feature
//! vector, calibrates per-coefficient Laplace scales under a total privacy
//! budget (closed-form normalization approximation or Lagrange-multiplier
//! gradient descent), sanitizes by adding noise to a geometric prefix of the
//! ranked coefficients, and evaluates privacy/utility against uniform-scale
//! wavelet, pixel-domain and DCT-domain baselines.

pub mod budget;
pub mod eigen;
pub mod error;
pub mod image;
pub mod influence;
pub mod mechanism;
pub mod metrics;
pub mod synth;
pub mod transform;

pub use budget::{
    cost, default_k_active, envelope, epsilon_of_scales, solve_lmgd, solve_na, FeatureScales,
    GeomEnvelope, LmgdSolution, MechanismParams, NoiseScales, DEFAULT_TAU_W,
};
pub use eigen::{
    estimate_sensitivity, fit_eigenbasis, load_basis, matches, matches_euclidean, project,
    save_basis, EigenBasis, FeatureVector, SensitivityOptions, SensitivityProfile,
};
pub use error::{Error, Result};
pub use image::{load_image, save_image, DatasetManifest, GrayImage, ManifestImages};
pub use influence::{jacobian, rank_coefficients, InfluenceWeights, RankedCoeffs, RankingKey};
pub use mechanism::{
    sample_geometric, sample_laplace, sanitize_dct_dp, sanitize_pixel_dp, sanitize_rdp,
    sanitize_rdp_uniform, stream_rng, Method, NoiseDraws, SanitizeResult,
};
pub use metrics::{
    batch_variance_deviation, fnr, psnr, real_variance, ssim, theoretical_variance, Matcher,
    MetricReport, PsnrMode,
};
pub use transform::{
    build_operator, dct_forward, dct_inverse, forward, haar_forward, haar_inverse, inverse,
    TransformKind, WaveletPlan,
};
