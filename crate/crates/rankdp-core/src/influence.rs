//! Influence weights linking transform coefficients to feature elements, and
//! the coefficient ranking that orders the noise budget.
//!
//! Because feature extraction and synthesis are both linear, the Jacobian
//! d(feature i)/d(coefficient k) is exact: it equals basis . G with G the
//! synthesis operator. It is computed operator-free, one forward transform
//! per basis row, which keeps the cost at O(M_F . M_P).

use crate::eigen::EigenBasis;
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::transform::{forward, TransformKind, WaveletPlan};

/// Which scalar orders the coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankingKey {
    /// Descending column energy of the Jacobian (sum_i w_ik^2). Depends only
    /// on the basis and transform, not on image content.
    WeightEnergy,
    /// Descending |C_k| of a concrete coefficient vector.
    Amplitude,
}

impl RankingKey {
    pub fn as_str(&self) -> &'static str {
        match self {
            RankingKey::WeightEnergy => "weight_energy",
            RankingKey::Amplitude => "amplitude",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "weight_energy" => Some(RankingKey::WeightEnergy),
            "amplitude" => Some(RankingKey::Amplitude),
            _ => None,
        }
    }
}

/// Jacobian in ranked-coefficient order plus the ranking permutation.
/// `perm[k]` is the original index of the k-th ranked coefficient.
#[derive(Debug, Clone)]
pub struct InfluenceWeights {
    pub w: Vec<Vec<f64>>,
    pub perm: Vec<usize>,
}

impl InfluenceWeights {
    pub fn m_f(&self) -> usize {
        self.w.len()
    }

    pub fn m_p(&self) -> usize {
        self.perm.len()
    }

    /// |w_ik| at ranked column k.
    pub fn abs_column(&self, k: usize) -> impl Iterator<Item = f64> + '_ {
        self.w.iter().map(move |row| row[k].abs())
    }
}

/// Coefficient vector reordered by the ranking permutation.
#[derive(Debug, Clone)]
pub struct RankedCoeffs {
    pub values: Vec<f64>,
    pub perm: Vec<usize>,
}

impl RankedCoeffs {
    /// Restores the original coefficient order bit-exactly.
    pub fn derank(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.values.len()];
        for (ranked, &orig) in self.perm.iter().enumerate() {
            out[orig] = self.values[ranked];
        }
        out
    }
}

/// Exact Jacobian in original coefficient order: row i is the forward
/// transform of basis row i viewed as an image.
pub fn jacobian(
    basis: &EigenBasis,
    plan: &WaveletPlan,
    kind: TransformKind,
) -> Result<Vec<Vec<f64>>> {
    if basis.side != plan.side {
        return Err(Error::DimensionMismatch(format!(
            "basis side {} vs plan side {}",
            basis.side, plan.side
        )));
    }
    basis
        .basis
        .iter()
        .map(|row| {
            let img = GrayImage::from_pixels(plan.side, row.clone())?;
            forward(&img, plan, kind)
        })
        .collect()
}

fn sort_perm(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    // descending score, ties broken by lower original index
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

/// Ranks coefficients and reorders the Jacobian columns by the same
/// permutation.
pub fn rank_coefficients(
    jac: &[Vec<f64>],
    coeffs: &[f64],
    key: RankingKey,
) -> Result<(RankedCoeffs, InfluenceWeights)> {
    let m_p = coeffs.len();
    if jac.iter().any(|row| row.len() != m_p) {
        return Err(Error::DimensionMismatch(
            "jacobian column count vs coefficient length".into(),
        ));
    }
    let scores: Vec<f64> = match key {
        RankingKey::WeightEnergy => (0..m_p)
            .map(|k| jac.iter().map(|row| row[k] * row[k]).sum())
            .collect(),
        RankingKey::Amplitude => coeffs.iter().map(|c| c.abs()).collect(),
    };
    let perm = sort_perm(&scores);
    let values = perm.iter().map(|&k| coeffs[k]).collect();
    let w = jac
        .iter()
        .map(|row| perm.iter().map(|&k| row[k]).collect())
        .collect();
    Ok((
        RankedCoeffs {
            values,
            perm: perm.clone(),
        },
        InfluenceWeights { w, perm },
    ))
}
