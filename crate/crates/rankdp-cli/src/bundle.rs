//! Calibration bundle persisted by `calibrate` and consumed by the other
//! subcommands: eigenbasis (binary), sensitivity profile (text), influence
//! weights with their ranking permutation (binary), and noise scales with
//! calibration metadata (text).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rankdp_core::budget::NoiseScales;
use rankdp_core::eigen::{load_basis, save_basis, EigenBasis, SensitivityProfile};
use rankdp_core::error::{Error, Result};
use rankdp_core::influence::InfluenceWeights;
use rankdp_core::mechanism::Method;

pub const BASIS_FILE: &str = "basis.bin";
pub const SENSITIVITY_FILE: &str = "sensitivity.txt";
pub const WEIGHTS_FILE: &str = "weights.bin";
pub const SCALES_FILE: &str = "scales.txt";
pub const TRACE_FILE: &str = "trace.csv";

const WEIGHTS_MAGIC: &[u8; 8] = b"INFLW001";

/// Calibration metadata recorded next to the scales.
#[derive(Debug, Clone)]
pub struct ScalesMeta {
    pub method: Method,
    pub epsilon0: f64,
    pub p: f64,
    pub achieved_epsilon: f64,
    pub cost: f64,
    pub k_active: usize,
    pub tau_w: f64,
    pub ranking: String,
    pub converged: bool,
    pub lambda: f64,
    pub iterations: usize,
}

#[derive(Debug)]
pub struct Bundle {
    pub basis: EigenBasis,
    pub profile: SensitivityProfile,
    pub weights: InfluenceWeights,
    pub scales: NoiseScales,
    pub meta: ScalesMeta,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::IoFailure {
        path: path.to_path_buf(),
        source: e,
    }
}

pub fn save_sensitivity(profile: &SensitivityProfile, path: &Path) -> Result<()> {
    let mut out = String::from("# feature delta radius\n");
    for (i, (d, r)) in profile.deltas.iter().zip(&profile.radii).enumerate() {
        out.push_str(&format!("{} {:.17e} {:.17e}\n", i, d, r));
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn load_sensitivity(path: &Path) -> Result<SensitivityProfile> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut deltas = Vec::new();
    let mut radii = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let _idx = it.next();
        let d: f64 = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::CalibrationMismatch("bad sensitivity line".into()))?;
        let r: f64 = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::CalibrationMismatch("bad sensitivity line".into()))?;
        deltas.push(d);
        radii.push(r);
    }
    Ok(SensitivityProfile { deltas, radii })
}

pub fn save_weights(w: &InfluenceWeights, path: &Path) -> Result<()> {
    let (m_f, m_p) = (w.m_f(), w.m_p());
    let mut out = Vec::with_capacity(16 + 4 * m_p + 8 * m_f * m_p);
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&(m_f as u32).to_le_bytes());
    out.extend_from_slice(&(m_p as u32).to_le_bytes());
    for &p in &w.perm {
        out.extend_from_slice(&(p as u32).to_le_bytes());
    }
    for row in &w.w {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn load_weights(path: &Path) -> Result<InfluenceWeights> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let bad = |r: &str| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: r.to_string(),
    };
    if bytes.len() < 16 || &bytes[..8] != WEIGHTS_MAGIC {
        return Err(bad("missing weights magic"));
    }
    let m_f = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let m_p = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expect = 16 + 4 * m_p + 8 * m_f * m_p;
    if bytes.len() != expect {
        return Err(bad("weights payload length mismatch"));
    }
    let mut pos = 16;
    let mut perm = Vec::with_capacity(m_p);
    for _ in 0..m_p {
        perm.push(u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize);
        pos += 4;
    }
    let mut w = Vec::with_capacity(m_f);
    for _ in 0..m_f {
        let row: Vec<f64> = bytes[pos..pos + 8 * m_p]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        pos += 8 * m_p;
        w.push(row);
    }
    Ok(InfluenceWeights { w, perm })
}

pub fn save_scales(scales: &NoiseScales, meta: &ScalesMeta, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!("method={}\n", meta.method.as_str()));
    out.push_str(&format!("epsilon0={:.17e}\n", meta.epsilon0));
    out.push_str(&format!("p={:.17e}\n", meta.p));
    out.push_str(&format!("achieved_epsilon={:.17e}\n", meta.achieved_epsilon));
    out.push_str(&format!("cost={:.17e}\n", meta.cost));
    out.push_str(&format!("k_active={}\n", meta.k_active));
    out.push_str(&format!("tau_w={:.17e}\n", meta.tau_w));
    out.push_str(&format!("ranking={}\n", meta.ranking));
    out.push_str(&format!("converged={}\n", meta.converged));
    out.push_str(&format!("lambda={:.17e}\n", meta.lambda));
    out.push_str(&format!("iterations={}\n", meta.iterations));
    out.push_str("scales:\n");
    for b in &scales.0 {
        out.push_str(&format!("{:.17e}\n", b));
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn load_scales(path: &Path) -> Result<(NoiseScales, ScalesMeta)> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut meta = ScalesMeta {
        method: Method::RdpNa,
        epsilon0: 0.0,
        p: 0.0,
        achieved_epsilon: 0.0,
        cost: 0.0,
        k_active: 0,
        tau_w: 0.0,
        ranking: String::new(),
        converged: true,
        lambda: 0.0,
        iterations: 0,
    };
    let mut scales = Vec::new();
    let mut in_scales = false;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == "scales:" {
            in_scales = true;
            continue;
        }
        if in_scales {
            scales.push(
                line.parse::<f64>()
                    .map_err(|_| Error::CalibrationMismatch("bad scale entry".into()))?,
            );
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::CalibrationMismatch("bad scales header line".into()))?;
        match k {
            "method" => {
                meta.method = Method::parse(v)
                    .ok_or_else(|| Error::CalibrationMismatch("unknown method".into()))?
            }
            "epsilon0" => meta.epsilon0 = v.parse().unwrap_or(0.0),
            "p" => meta.p = v.parse().unwrap_or(0.0),
            "achieved_epsilon" => meta.achieved_epsilon = v.parse().unwrap_or(0.0),
            "cost" => meta.cost = v.parse().unwrap_or(0.0),
            "k_active" => meta.k_active = v.parse().unwrap_or(0),
            "tau_w" => meta.tau_w = v.parse().unwrap_or(0.0),
            "ranking" => meta.ranking = v.to_string(),
            "converged" => meta.converged = v == "true",
            "lambda" => meta.lambda = v.parse().unwrap_or(0.0),
            "iterations" => meta.iterations = v.parse().unwrap_or(0),
            _ => {}
        }
    }
    Ok((NoiseScales(scales), meta))
}

pub fn save_bundle(dir: &Path, bundle: &Bundle) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    save_basis(&bundle.basis, &dir.join(BASIS_FILE))?;
    save_sensitivity(&bundle.profile, &dir.join(SENSITIVITY_FILE))?;
    save_weights(&bundle.weights, &dir.join(WEIGHTS_FILE))?;
    save_scales(&bundle.scales, &bundle.meta, &dir.join(SCALES_FILE))
}

pub fn load_bundle(dir: &Path) -> Result<Bundle> {
    for f in [BASIS_FILE, SENSITIVITY_FILE, WEIGHTS_FILE, SCALES_FILE] {
        if !dir.join(f).exists() {
            return Err(Error::CalibrationMissing(dir.join(f)));
        }
    }
    let basis = load_basis(&dir.join(BASIS_FILE))?;
    let profile = load_sensitivity(&dir.join(SENSITIVITY_FILE))?;
    let weights = load_weights(&dir.join(WEIGHTS_FILE))?;
    let (scales, meta) = load_scales(&dir.join(SCALES_FILE))?;
    Ok(Bundle {
        basis,
        profile,
        weights,
        scales,
        meta,
    })
}

/// Sidecar written next to every sanitized image.
pub struct Sidecar<'a> {
    pub method: Method,
    pub seed: u64,
    pub stream: u64,
    pub epsilon0: f64,
    pub p: f64,
    pub k_drawn: usize,
    pub achieved_epsilon: f64,
    pub cost: f64,
    pub features: &'a [f64],
}

pub fn write_sidecar(path: &Path, s: &Sidecar<'_>) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "method {}", s.method.as_str()).unwrap();
    writeln!(out, "seed {}", s.seed).unwrap();
    writeln!(out, "stream {}", s.stream).unwrap();
    writeln!(out, "epsilon0 {:.17e}", s.epsilon0).unwrap();
    writeln!(out, "p {:.17e}", s.p).unwrap();
    writeln!(out, "k {}", s.k_drawn).unwrap();
    writeln!(out, "achieved_epsilon {:.17e}", s.achieved_epsilon).unwrap();
    writeln!(out, "cost {:.17e}", s.cost).unwrap();
    for (i, f) in s.features.iter().enumerate() {
        writeln!(out, "feature_{} {:.17e}", i, f).unwrap();
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn sidecar_path(image_out: &Path) -> PathBuf {
    let mut p = image_out.as_os_str().to_owned();
    p.push(".meta.txt");
    PathBuf::from(p)
}
