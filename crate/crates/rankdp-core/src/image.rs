//! Grayscale image carrier, portable graymap I/O and dataset manifests.
//!
//! Images are square with a power-of-two side so multi-level Haar analysis is
//! well defined at every level. Pixels stay in real arithmetic in memory;
//! clamping and rounding to 8-bit happen only when a file is written.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Square grayscale image. `pixels` is row-major, `side * side` long.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    side: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    /// Wraps a row-major pixel buffer. The side must be a power of two >= 4.
    pub fn from_pixels(side: usize, pixels: Vec<f64>) -> Result<Self> {
        if side < 4 || !side.is_power_of_two() {
            return Err(Error::NonPowerOfTwo(side));
        }
        if pixels.len() != side * side {
            return Err(Error::DimensionMismatch(format!(
                "expected {} pixels, got {}",
                side * side,
                pixels.len()
            )));
        }
        Ok(Self { side, pixels })
    }

    pub fn constant(side: usize, value: f64) -> Result<Self> {
        Self::from_pixels(side, vec![value; side * side])
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pixel_count(&self) -> usize {
        self.pixels.len()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.side + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.pixels[row * self.side + col] = value;
    }

    /// Row-major flattening; `unflatten` is its exact inverse.
    pub fn flatten(&self) -> Vec<f64> {
        self.pixels.clone()
    }

    pub fn unflatten(side: usize, flat: Vec<f64>) -> Result<Self> {
        Self::from_pixels(side, flat)
    }

    /// The image as it would round-trip through an 8-bit file: pixels
    /// clamped to [0, 255] and rounded half-to-even.
    pub fn clamped_rounded(&self) -> GrayImage {
        GrayImage {
            side: self.side,
            pixels: self.pixels.iter().map(|&v| clamp_round(v) as f64).collect(),
        }
    }

    /// Sum of squared pixel deviations against another image of the same side.
    pub fn squared_deviation(&self, other: &GrayImage) -> Result<f64> {
        if self.side != other.side {
            return Err(Error::DimensionMismatch(format!(
                "sides {} vs {}",
                self.side, other.side
            )));
        }
        Ok(self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }
}

fn clamp_round(v: f64) -> u8 {
    let c = v.clamp(0.0, 255.0);
    // round half to even, matching the on-disk contract
    let r = c.round_ties_even();
    r as u8
}

/// Loads a P2 (ASCII) or P5 (binary) portable graymap.
pub fn load_image(path: &Path) -> Result<GrayImage> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::NotFound(path.to_path_buf()))
        }
        Err(e) => {
            return Err(Error::IoFailure {
                path: path.to_path_buf(),
                source: e,
            })
        }
    };
    parse_pgm(path, &bytes)
}

fn parse_pgm(path: &Path, bytes: &[u8]) -> Result<GrayImage> {
    let bad = |reason: &str| Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 2 {
        return Err(bad("file shorter than a magic number"));
    }
    let magic = &bytes[..2];
    let binary = match magic {
        b"P5" => true,
        b"P2" => false,
        _ => return Err(bad("magic is neither P2 nor P5")),
    };

    // header tokens: width, height, maxval; '#' comments run to end of line
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("missing numeric header field"));
        }
        let tok = std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-utf8 header"))?;
        *field = tok.parse::<u32>().map_err(|_| bad("unparsable header field"))?;
    }
    let (width, height, maxval) = (fields[0] as usize, fields[1] as usize, fields[2]);
    if maxval > 255 {
        return Err(Error::MaxvalTooLarge(maxval));
    }
    if width != height {
        return Err(Error::NonSquare { width, height });
    }
    if width < 4 || !width.is_power_of_two() {
        return Err(Error::NonPowerOfTwo(width));
    }
    let n = width * height;

    let pixels: Vec<f64> = if binary {
        // exactly one whitespace byte separates header from raster
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(bad("missing raster separator"));
        }
        pos += 1;
        if bytes.len() - pos < n {
            return Err(bad("raster shorter than width*height"));
        }
        bytes[pos..pos + n].iter().map(|&b| b as f64).collect()
    } else {
        let text = std::str::from_utf8(&bytes[pos..]).map_err(|_| bad("non-utf8 raster"))?;
        let vals: Vec<f64> = text
            .split_whitespace()
            .map(|t| t.parse::<u32>().map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("unparsable ascii sample"))?;
        if vals.len() != n {
            return Err(bad("ascii raster sample count mismatch"));
        }
        vals
    };
    if pixels.iter().any(|&v| v > maxval as f64) {
        return Err(bad("sample exceeds maxval"));
    }
    GrayImage::from_pixels(width, pixels)
}

/// Writes a binary P5 graymap: pixels clamped to [0,255] and rounded
/// half-to-even.
pub fn save_image(img: &GrayImage, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(img.pixel_count() + 32);
    write!(out, "P5\n{} {}\n255\n", img.side(), img.side()).expect("vec write");
    out.extend(img.pixels().iter().map(|&v| clamp_round(v)));
    fs::write(path, out).map_err(|e| Error::IoFailure {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Calibration/evaluation dataset: images of the protected subject, images of
/// other identities, and the enrollment face used as the matcher's standard.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub subject_images: Vec<PathBuf>,
    pub impostor_images: Vec<PathBuf>,
    pub standard_image: PathBuf,
}

impl DatasetManifest {
    /// Parses the `role path` line format (roles: subject/impostor/standard,
    /// `#` comments allowed). Paths are resolved relative to the manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::NotFound(path.to_path_buf()))
            }
            Err(e) => {
                return Err(Error::IoFailure {
                    path: path.to_path_buf(),
                    source: e,
                })
            }
        };
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut subject_images = Vec::new();
        let mut impostor_images = Vec::new();
        let mut standard = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (role, rest) = line.split_once(char::is_whitespace).ok_or_else(|| {
                Error::BadManifest(format!("line {}: expected `role path`", lineno + 1))
            })?;
            let p = base.join(rest.trim());
            match role {
                "subject" => subject_images.push(p),
                "impostor" => impostor_images.push(p),
                "standard" => {
                    if standard.replace(p).is_some() {
                        return Err(Error::BadManifest("duplicate standard entry".into()));
                    }
                }
                other => {
                    return Err(Error::BadManifest(format!(
                        "line {}: unknown role `{}`",
                        lineno + 1,
                        other
                    )))
                }
            }
        }
        let standard_image =
            standard.ok_or_else(|| Error::BadManifest("missing standard entry".into()))?;
        let manifest = Self {
            subject_images,
            impostor_images,
            standard_image,
        };
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        if self.subject_images.is_empty() {
            return Err(Error::BadManifest("no subject images".into()));
        }
        if self.impostor_images.contains(&self.standard_image) {
            return Err(Error::BadManifest(
                "standard image listed under impostors".into(),
            ));
        }
        let mut all: Vec<&PathBuf> = self
            .subject_images
            .iter()
            .chain(&self.impostor_images)
            .chain(std::iter::once(&self.standard_image))
            .collect();
        all.sort();
        let len = all.len();
        all.dedup();
        // the standard may coincide with one subject entry; anything else is a duplicate
        if len - all.len() > 1 {
            return Err(Error::BadManifest("duplicate paths in manifest".into()));
        }
        Ok(())
    }

    /// Loads every referenced image; all must share one side.
    pub fn load_images(&self) -> Result<ManifestImages> {
        let load_all = |paths: &[PathBuf]| -> Result<Vec<GrayImage>> {
            paths.iter().map(|p| load_image(p)).collect()
        };
        let subjects = load_all(&self.subject_images)?;
        let impostors = load_all(&self.impostor_images)?;
        let standard = load_image(&self.standard_image)?;
        let side = standard.side();
        for img in subjects.iter().chain(&impostors) {
            if img.side() != side {
                return Err(Error::DimensionMismatch(
                    "manifest images have mixed sides".into(),
                ));
            }
        }
        Ok(ManifestImages {
            subjects,
            impostors,
            standard,
        })
    }
}

/// Manifest contents loaded into memory.
#[derive(Debug, Clone)]
pub struct ManifestImages {
    pub subjects: Vec<GrayImage>,
    pub impostors: Vec<GrayImage>,
    pub standard: GrayImage,
}

impl ManifestImages {
    /// All images, subjects first, then impostors, then the standard if it is
    /// not already a subject entry. Used as the eigenbasis fitting gallery.
    pub fn gallery(&self) -> Vec<&GrayImage> {
        let mut v: Vec<&GrayImage> = self.subjects.iter().chain(&self.impostors).collect();
        if !self.subjects.iter().any(|s| *s == self.standard) {
            v.push(&self.standard);
        }
        v
    }
}
