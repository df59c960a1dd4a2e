//! Eigenface feature extraction: basis fitting by SVD of the centered
//! gallery, projections, empirical sensitivities and identification radii,
//! and the two matchers used by the evaluation harness.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Eigenface projection operator. `basis` holds `m_f` orthonormal rows of
/// length `side*side`; `singular_values` are non-increasing and positive.
#[derive(Debug, Clone)]
pub struct EigenBasis {
    pub side: usize,
    pub mean_face: Vec<f64>,
    pub basis: Vec<Vec<f64>>,
    pub singular_values: Vec<f64>,
}

impl EigenBasis {
    pub fn m_f(&self) -> usize {
        self.basis.len()
    }

    pub fn pixel_len(&self) -> usize {
        self.side * self.side
    }
}

/// Feature vector of one image under a fitted basis.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Per-element feature sensitivities and identification radii.
#[derive(Debug, Clone)]
pub struct SensitivityProfile {
    pub deltas: Vec<f64>,
    pub radii: Vec<f64>,
}

/// Knobs for the empirical sensitivity estimate.
#[derive(Debug, Clone, Copy)]
pub struct SensitivityOptions {
    /// Multiplier on the empirical max pair deviation.
    pub sensitivity_slack: f64,
    /// Multiplier on the empirical subject-vs-standard radius.
    pub radius_slack: f64,
}

impl Default for SensitivityOptions {
    fn default() -> Self {
        Self {
            sensitivity_slack: 1.0,
            radius_slack: 1.1,
        }
    }
}

/// One-sided Jacobi SVD, column-orthogonalization form. `a` holds `ncols`
/// columns of length `nrows` (column-major); on return its columns are
/// mutually orthogonal and their norms are the singular values.
fn jacobi_orthogonalize(a: &mut [Vec<f64>], tol: f64, max_sweeps: usize) {
    let ncols = a.len();
    if ncols < 2 {
        return;
    }
    for _ in 0..max_sweeps {
        let mut off = 0.0f64;
        for p in 0..ncols - 1 {
            for q in p + 1..ncols {
                let (mut app, mut aqq, mut apq) = (0.0, 0.0, 0.0);
                for i in 0..a[p].len() {
                    app += a[p][i] * a[p][i];
                    aqq += a[q][i] * a[q][i];
                    apq += a[p][i] * a[q][i];
                }
                let denom = (app * aqq).sqrt();
                if denom <= 0.0 {
                    continue;
                }
                let rel = apq.abs() / denom;
                off = off.max(rel);
                if rel <= tol {
                    continue;
                }
                // Givens rotation zeroing the (p,q) inner product
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..a[p].len() {
                    let vp = a[p][i];
                    let vq = a[q][i];
                    a[p][i] = c * vp - s * vq;
                    a[q][i] = s * vp + c * vq;
                }
            }
        }
        if off <= tol {
            break;
        }
    }
}

const SVD_TOL: f64 = 1e-10;
const SVD_MAX_SWEEPS: usize = 100;

/// Fits the eigenbasis: mean face plus the top `m_f` right singular vectors
/// of the mean-centered gallery matrix (rows = images).
pub fn fit_eigenbasis(gallery: &[&GrayImage], m_f: usize) -> Result<EigenBasis> {
    let n = gallery.len();
    if n < 2 {
        return Err(Error::GalleryTooSmall(n));
    }
    let side = gallery[0].side();
    let m_p = side * side;
    for img in gallery {
        if img.side() != side {
            return Err(Error::DimensionMismatch("gallery images differ in side".into()));
        }
    }
    if m_f == 0 || m_f > (n - 1).min(m_p) {
        return Err(Error::DimensionMismatch(format!(
            "m_f {} outside [1, min(gallery-1, M_P)] = [1, {}]",
            m_f,
            (n - 1).min(m_p)
        )));
    }
    let mut mean_face = vec![0.0; m_p];
    for img in gallery {
        for (m, &v) in mean_face.iter_mut().zip(img.pixels()) {
            *m += v;
        }
    }
    for m in &mut mean_face {
        *m /= n as f64;
    }
    // columns of the transposed centered matrix: one centered image each
    let mut cols: Vec<Vec<f64>> = gallery
        .iter()
        .map(|img| {
            img.pixels()
                .iter()
                .zip(&mean_face)
                .map(|(&v, &m)| v - m)
                .collect()
        })
        .collect();
    jacobi_orthogonalize(&mut cols, SVD_TOL, SVD_MAX_SWEEPS);

    let mut with_norms: Vec<(f64, Vec<f64>)> = cols
        .into_iter()
        .map(|c| {
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            (norm, c)
        })
        .collect();
    with_norms.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());

    let scale = with_norms[0].0.max(1.0);
    let significant = with_norms
        .iter()
        .take_while(|(s, _)| *s > 1e-9 * scale && *s > 0.0)
        .count();
    if significant < m_f {
        return Err(Error::RankDeficient {
            found: significant,
            requested: m_f,
        });
    }
    let mut basis = Vec::with_capacity(m_f);
    let mut singular_values = Vec::with_capacity(m_f);
    for (sv, col) in with_norms.into_iter().take(m_f) {
        basis.push(col.into_iter().map(|v| v / sv).collect());
        singular_values.push(sv);
    }
    Ok(EigenBasis {
        side,
        mean_face,
        basis,
        singular_values,
    })
}

/// Projects an image onto the basis: F = B . (flatten(img) - mean).
pub fn project(basis: &EigenBasis, img: &GrayImage) -> Result<FeatureVector> {
    if img.side() != basis.side {
        return Err(Error::DimensionMismatch(format!(
            "image side {} vs basis side {}",
            img.side(),
            basis.side
        )));
    }
    Ok(project_flat(basis, img.pixels()))
}

/// Projection of an already-flattened pixel vector.
pub fn project_flat(basis: &EigenBasis, pixels: &[f64]) -> FeatureVector {
    let values = basis
        .basis
        .iter()
        .map(|row| {
            row.iter()
                .zip(pixels.iter().zip(&basis.mean_face))
                .map(|(&w, (&p, &m))| w * (p - m))
                .sum()
        })
        .collect();
    FeatureVector(values)
}

/// Empirical per-element sensitivities (max subject-vs-impostor deviation)
/// and identification radii (max subject-vs-standard deviation, with slack).
pub fn estimate_sensitivity(
    basis: &EigenBasis,
    subjects: &[GrayImage],
    impostors: &[GrayImage],
    standard: &GrayImage,
    opts: SensitivityOptions,
) -> Result<SensitivityProfile> {
    if subjects.is_empty() {
        return Err(Error::EmptyClass("no subject images".into()));
    }
    if impostors.is_empty() {
        return Err(Error::EmptyClass("no impostor images".into()));
    }
    let m_f = basis.m_f();
    let subj_feats: Vec<FeatureVector> = subjects
        .iter()
        .map(|img| project(basis, img))
        .collect::<Result<_>>()?;
    let imp_feats: Vec<FeatureVector> = impostors
        .iter()
        .map(|img| project(basis, img))
        .collect::<Result<_>>()?;
    let std_feat = project(basis, standard)?;

    let mut deltas = vec![0.0f64; m_f];
    for fs in &subj_feats {
        for fi in &imp_feats {
            for i in 0..m_f {
                deltas[i] = deltas[i].max((fs.0[i] - fi.0[i]).abs());
            }
        }
    }
    let mut radii = vec![0.0f64; m_f];
    for fs in &subj_feats {
        for i in 0..m_f {
            radii[i] = radii[i].max((fs.0[i] - std_feat.0[i]).abs());
        }
    }
    for i in 0..m_f {
        deltas[i] *= opts.sensitivity_slack;
        radii[i] *= opts.radius_slack;
        if !(deltas[i] > 0.0) {
            return Err(Error::DegenerateSensitivity(i));
        }
        if !(radii[i] > 0.0) {
            return Err(Error::DegenerateRadius(i));
        }
    }
    Ok(SensitivityProfile { deltas, radii })
}

/// Element-wise identification: every |F_i - F_i(standard)| <= R_i.
pub fn matches(f: &FeatureVector, standard: &FeatureVector, radii: &[f64]) -> Result<bool> {
    if f.len() != standard.len() || f.len() != radii.len() {
        return Err(Error::DimensionMismatch("matcher length mismatch".into()));
    }
    Ok(f.0
        .iter()
        .zip(&standard.0)
        .zip(radii)
        .all(|((a, b), r)| (a - b).abs() <= *r))
}

/// Euclidean matcher on unit-normalized features: ||f/|f| - s/|s||| < threshold.
pub fn matches_euclidean(
    f: &FeatureVector,
    standard: &FeatureVector,
    threshold: f64,
) -> Result<bool> {
    if f.len() != standard.len() {
        return Err(Error::DimensionMismatch("matcher length mismatch".into()));
    }
    let nf = f.norm();
    let ns = standard.norm();
    if nf == 0.0 || ns == 0.0 {
        return Err(Error::ZeroVector);
    }
    let dist: f64 = f
        .0
        .iter()
        .zip(&standard.0)
        .map(|(a, b)| {
            let d = a / nf - b / ns;
            d * d
        })
        .sum::<f64>()
        .sqrt();
    Ok(dist < threshold)
}

const BASIS_MAGIC: &[u8; 8] = b"EIGBAS01";

/// Persists the basis as a little-endian binary file:
/// magic "EIGBAS01", u32 side, u32 m_f, then mean (side^2 f64), singular
/// values (m_f f64), and the basis rows (m_f x side^2 f64).
pub fn save_basis(basis: &EigenBasis, path: &Path) -> Result<()> {
    let m_p = basis.pixel_len();
    let mut out = Vec::with_capacity(16 + 8 * (m_p + basis.m_f() * (m_p + 1)));
    out.extend_from_slice(BASIS_MAGIC);
    out.extend_from_slice(&(basis.side as u32).to_le_bytes());
    out.extend_from_slice(&(basis.m_f() as u32).to_le_bytes());
    let mut push = |vals: &[f64]| {
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
    };
    push(&basis.mean_face);
    push(&basis.singular_values);
    for row in &basis.basis {
        push(row);
    }
    fs::write(path, out).map_err(|e| Error::IoFailure {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn load_basis(path: &Path) -> Result<EigenBasis> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::CalibrationMissing(path.to_path_buf()))
        }
        Err(e) => {
            return Err(Error::IoFailure {
                path: path.to_path_buf(),
                source: e,
            })
        }
    };
    let bad = |reason: &str| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 16 || &bytes[..8] != BASIS_MAGIC {
        return Err(bad("missing eigenbasis magic"));
    }
    let side = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let m_f = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let m_p = side * side;
    let expect = 16 + 8 * (m_p + m_f + m_f * m_p);
    if bytes.len() != expect {
        return Err(bad("eigenbasis payload length mismatch"));
    }
    let mut pos = 16;
    let mut take = |n: usize| -> Vec<f64> {
        let v = bytes[pos..pos + 8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        pos += 8 * n;
        v
    };
    let mean_face = take(m_p);
    let singular_values = take(m_f);
    let basis = (0..m_f).map(|_| take(m_p)).collect();
    Ok(EigenBasis {
        side,
        mean_face,
        basis,
        singular_values,
    })
}
