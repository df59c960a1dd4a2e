//! Orthonormal 2D transforms: multi-level Haar analysis/synthesis, a type-II
//! DCT for the frequency-domain baseline, and the identity transform used by
//! the pixel-domain baseline.
//!
//! Coefficient vectors use a fixed pyramid layout: the level-N approximation
//! block first (row-major), then for each level from coarsest to finest the
//! three detail bands in LH (top-right), HL (bottom-left), HH (bottom-right)
//! order, each row-major. The layout is deterministic so ranking permutations
//! reproduce across runs.

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Transform families understood by the sanitization machinery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformKind {
    Haar,
    Dct,
    Identity,
}

impl TransformKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TransformKind::Haar => "haar",
            TransformKind::Dct => "dct",
            TransformKind::Identity => "identity",
        }
    }
}

/// Multi-level Haar plan: image side and decomposition depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WaveletPlan {
    pub side: usize,
    pub levels: usize,
}

impl WaveletPlan {
    pub fn new(side: usize, levels: usize) -> Result<Self> {
        if side < 4 || !side.is_power_of_two() {
            return Err(Error::NonPowerOfTwo(side));
        }
        if levels == 0 || (1usize << levels) > side {
            return Err(Error::DimensionMismatch(format!(
                "levels {} invalid for side {}",
                levels, side
            )));
        }
        Ok(Self { side, levels })
    }

    /// Default depth: coarsest approximation block is 2x2.
    pub fn with_default_levels(side: usize) -> Result<Self> {
        let levels = side.trailing_zeros().saturating_sub(1).max(1) as usize;
        Self::new(side, levels)
    }

    pub fn coeff_len(&self) -> usize {
        self.side * self.side
    }

    fn check_image(&self, img: &GrayImage) -> Result<()> {
        if img.side() != self.side {
            return Err(Error::PlanMismatch {
                plan: self.side,
                data: img.side(),
            });
        }
        Ok(())
    }

    fn check_coeffs(&self, coeffs: &[f64]) -> Result<()> {
        if coeffs.len() != self.coeff_len() {
            return Err(Error::PlanMismatch {
                plan: self.coeff_len(),
                data: coeffs.len(),
            });
        }
        Ok(())
    }
}

const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

fn haar_rows_step(mat: &mut [f64], side: usize, size: usize, scratch: &mut [f64]) {
    let half = size / 2;
    for r in 0..size {
        let row = &mat[r * side..r * side + size];
        for j in 0..half {
            scratch[j] = (row[2 * j] + row[2 * j + 1]) * SQRT_HALF;
            scratch[half + j] = (row[2 * j] - row[2 * j + 1]) * SQRT_HALF;
        }
        mat[r * side..r * side + size].copy_from_slice(&scratch[..size]);
    }
}

fn haar_cols_step(mat: &mut [f64], side: usize, size: usize, scratch: &mut [f64]) {
    let half = size / 2;
    for c in 0..size {
        for i in 0..half {
            let a = mat[(2 * i) * side + c];
            let b = mat[(2 * i + 1) * side + c];
            scratch[i] = (a + b) * SQRT_HALF;
            scratch[half + i] = (a - b) * SQRT_HALF;
        }
        for i in 0..size {
            mat[i * side + c] = scratch[i];
        }
    }
}

fn inv_haar_cols_step(mat: &mut [f64], side: usize, size: usize, scratch: &mut [f64]) {
    let half = size / 2;
    for c in 0..size {
        for i in 0..half {
            let lo = mat[i * side + c];
            let hi = mat[(half + i) * side + c];
            scratch[2 * i] = (lo + hi) * SQRT_HALF;
            scratch[2 * i + 1] = (lo - hi) * SQRT_HALF;
        }
        for i in 0..size {
            mat[i * side + c] = scratch[i];
        }
    }
}

fn inv_haar_rows_step(mat: &mut [f64], side: usize, size: usize, scratch: &mut [f64]) {
    let half = size / 2;
    for r in 0..size {
        let row = &mat[r * side..r * side + size];
        for j in 0..half {
            let lo = row[j];
            let hi = row[half + j];
            scratch[2 * j] = (lo + hi) * SQRT_HALF;
            scratch[2 * j + 1] = (lo - hi) * SQRT_HALF;
        }
        mat[r * side..r * side + size].copy_from_slice(&scratch[..size]);
    }
}

/// Serializes the in-place pyramid matrix into the documented layout.
fn pyramid_to_vec(mat: &[f64], side: usize, levels: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(side * side);
    let a = side >> levels;
    for r in 0..a {
        out.extend_from_slice(&mat[r * side..r * side + a]);
    }
    for lev in (1..=levels).rev() {
        let h = side >> lev;
        for r in 0..h {
            out.extend_from_slice(&mat[r * side + h..r * side + 2 * h]); // LH
        }
        for r in h..2 * h {
            out.extend_from_slice(&mat[r * side..r * side + h]); // HL
        }
        for r in h..2 * h {
            out.extend_from_slice(&mat[r * side + h..r * side + 2 * h]); // HH
        }
    }
    out
}

fn vec_to_pyramid(vec: &[f64], side: usize, levels: usize) -> Vec<f64> {
    let mut mat = vec![0.0; side * side];
    let a = side >> levels;
    let mut pos = 0;
    for r in 0..a {
        mat[r * side..r * side + a].copy_from_slice(&vec[pos..pos + a]);
        pos += a;
    }
    for lev in (1..=levels).rev() {
        let h = side >> lev;
        for r in 0..h {
            mat[r * side + h..r * side + 2 * h].copy_from_slice(&vec[pos..pos + h]);
            pos += h;
        }
        for r in h..2 * h {
            mat[r * side..r * side + h].copy_from_slice(&vec[pos..pos + h]);
            pos += h;
        }
        for r in h..2 * h {
            mat[r * side + h..r * side + 2 * h].copy_from_slice(&vec[pos..pos + h]);
            pos += h;
        }
    }
    mat
}

/// Orthonormal multi-level Haar analysis. Energy is preserved exactly up to
/// rounding: ||coeffs||^2 == ||pixels||^2.
pub fn haar_forward(img: &GrayImage, plan: &WaveletPlan) -> Result<Vec<f64>> {
    plan.check_image(img)?;
    let side = plan.side;
    let mut mat = img.flatten();
    let mut scratch = vec![0.0; side];
    let mut size = side;
    for _ in 0..plan.levels {
        haar_rows_step(&mut mat, side, size, &mut scratch);
        haar_cols_step(&mut mat, side, size, &mut scratch);
        size /= 2;
    }
    Ok(pyramid_to_vec(&mat, side, plan.levels))
}

/// Inverse of [`haar_forward`].
pub fn haar_inverse(coeffs: &[f64], plan: &WaveletPlan) -> Result<GrayImage> {
    plan.check_coeffs(coeffs)?;
    let side = plan.side;
    let mut mat = vec_to_pyramid(coeffs, side, plan.levels);
    let mut scratch = vec![0.0; side];
    let mut size = side >> plan.levels;
    for _ in 0..plan.levels {
        size *= 2;
        inv_haar_cols_step(&mut mat, side, size, &mut scratch);
        inv_haar_rows_step(&mut mat, side, size, &mut scratch);
    }
    GrayImage::from_pixels(side, mat)
}

/// Orthonormal DCT-II matrix of order n.
fn dct_matrix(n: usize) -> Vec<f64> {
    let mut d = vec![0.0; n * n];
    let norm0 = (1.0 / n as f64).sqrt();
    let norm = (2.0 / n as f64).sqrt();
    for u in 0..n {
        let a = if u == 0 { norm0 } else { norm };
        for x in 0..n {
            d[u * n + x] =
                a * (std::f64::consts::PI * (2.0 * x as f64 + 1.0) * u as f64 / (2.0 * n as f64))
                    .cos();
        }
    }
    d
}

fn mat_mul(a: &[f64], b: &[f64], n: usize, bt: bool) -> Vec<f64> {
    // c = a * b (or a * b^T when bt), all n x n row-major
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                let bv = if bt { b[j * n + k] } else { b[k * n + j] };
                acc += a[i * n + k] * bv;
            }
            c[i * n + j] = acc;
        }
    }
    c
}

/// Orthonormal 2D type-II DCT, coefficients in row-major frequency order.
/// C = D . X . D^T with D the orthonormal DCT-II matrix.
pub fn dct_forward(img: &GrayImage, plan: &WaveletPlan) -> Result<Vec<f64>> {
    plan.check_image(img)?;
    let n = plan.side;
    let d = dct_matrix(n);
    let dx = mat_mul(&d, &img.flatten(), n, false);
    Ok(mat_mul(&dx, &d, n, true))
}

/// Inverse 2D DCT.
pub fn dct_inverse(coeffs: &[f64], plan: &WaveletPlan) -> Result<GrayImage> {
    plan.check_coeffs(coeffs)?;
    let n = plan.side;
    let d = dct_matrix(n);
    // X = D^T * C * D
    let dt_c = {
        let mut c = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += d[k * n + i] * coeffs[k * n + j];
                }
                c[i * n + j] = acc;
            }
        }
        c
    };
    let x = mat_mul(&dt_c, &d, n, false);
    GrayImage::from_pixels(n, x)
}

/// Analysis in the given domain.
pub fn forward(img: &GrayImage, plan: &WaveletPlan, kind: TransformKind) -> Result<Vec<f64>> {
    match kind {
        TransformKind::Haar => haar_forward(img, plan),
        TransformKind::Dct => dct_forward(img, plan),
        TransformKind::Identity => {
            plan.check_image(img)?;
            Ok(img.flatten())
        }
    }
}

/// Synthesis in the given domain.
pub fn inverse(coeffs: &[f64], plan: &WaveletPlan, kind: TransformKind) -> Result<GrayImage> {
    match kind {
        TransformKind::Haar => haar_inverse(coeffs, plan),
        TransformKind::Dct => dct_inverse(coeffs, plan),
        TransformKind::Identity => {
            plan.check_coeffs(coeffs)?;
            GrayImage::from_pixels(plan.side, coeffs.to_vec())
        }
    }
}

/// Largest side for which the dense synthesis operator may be materialized.
pub const OPERATOR_SIDE_LIMIT: usize = 64;

/// Materializes the orthogonal synthesis operator G (M_P x M_P, row-major)
/// with flatten(inverse(c)) == G. c. Exists for verification and the
/// influence-weight oracle, not for production-scale use.
pub fn build_operator(plan: &WaveletPlan, kind: TransformKind) -> Result<Vec<f64>> {
    if plan.side > OPERATOR_SIDE_LIMIT {
        return Err(Error::OperatorTooLarge {
            side: plan.side,
            limit: OPERATOR_SIDE_LIMIT,
        });
    }
    let m = plan.coeff_len();
    let mut g = vec![0.0; m * m];
    let mut unit = vec![0.0; m];
    for col in 0..m {
        unit[col] = 1.0;
        let img = inverse(&unit, plan, kind)?;
        unit[col] = 0.0;
        for (row, &v) in img.pixels().iter().enumerate() {
            g[row * m + col] = v;
        }
    }
    Ok(g)
}
