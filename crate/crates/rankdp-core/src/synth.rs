//! Seeded synthetic face-like gallery generator for desk-scale calibration
//! and evaluation.
//!
//! Every face shares one bold structural layout (box, striped hair band,
//! eyes with pupils, brows, nose, mouth with teeth bars, freckle rows). The
//! identity signal is a field of equal-variance tints on interior wavelet
//! detail atoms, so different identities differ by mid-scale blocky shading
//! spread across the whole face, the way the rest of the pipeline ingests
//! variation. Images of one identity differ by small intensity jitter and a
//! mouth-shade tweak.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::Result;
use crate::image::GrayImage;
use crate::mechanism::stream_rng;
use crate::transform::{inverse, TransformKind, WaveletPlan};

/// Flat indices (pyramid layout) of interior detail atoms with a 4-pixel
/// footprint: the band whose subband grid is side/4 x side/4, skipping atoms
/// that touch the image border. Capped at 64 slots, alternating positions
/// across the LH and HL orientations.
pub fn identity_tint_slots(side: usize, levels: usize) -> Vec<usize> {
    let band = side / 4; // subband grid of the 4-px-footprint level
    // offset of that band in the pyramid layout
    let approx = side >> levels;
    let mut off = approx * approx;
    let mut g = approx;
    while g < band {
        off += 3 * g * g;
        g *= 2;
    }
    let lo = band / 8 + 1;
    let hi = band - band / 8 - 2;
    let mut slots = Vec::new();
    'outer: for orient in 0..2 {
        for r in lo..=hi {
            for c in lo..=hi {
                if (r + c + orient) % 2 == 0 {
                    slots.push(off + orient * band * band + r * band + c);
                    if slots.len() == 64 {
                        break 'outer;
                    }
                }
            }
        }
    }
    slots
}

fn fill(img: &mut GrayImage, r0: usize, r1: usize, c0: usize, c1: usize, delta: f64) {
    for r in r0..r1 {
        for c in c0..c1 {
            let v = img.get(r, c);
            img.set(r, c, v + delta);
        }
    }
}

/// One synthetic face. `ident` drives everything that distinguishes the
/// identity; `jitter` drives within-identity variation.
pub fn synth_face(
    side: usize,
    levels: usize,
    ident: &mut ChaCha12Rng,
    jitter: &mut ChaCha12Rng,
) -> Result<GrayImage> {
    let plan = WaveletPlan::new(side, levels)?;
    let s = (side / 16).max(1);
    let mut img = GrayImage::constant(side, 0.0)?;
    // soft vertical background gradient
    for r in 0..side {
        let add = 16.0 * r as f64 / side as f64;
        for c in 0..side {
            img.set(r, c, add);
        }
    }
    let f0 = 2 * s;
    let f1 = side - 2 * s;
    fill(&mut img, f0, f1, f0, f1, 165.0);

    // identity field: equal-variance tints on interior detail atoms
    let slots = identity_tint_slots(side, levels);
    let amp = ident.gen_range(16.0..26.0);
    let mut coeffs = vec![0.0; side * side];
    for &slot in &slots {
        let sign = if ident.gen_bool(0.5) { 1.0 } else { -1.0 };
        coeffs[slot] = amp * sign * ident.gen_range(0.7..1.3);
    }
    let field = inverse(&coeffs, &plan, TransformKind::Haar)?;
    for (pv, fv) in img.pixels_mut().iter_mut().zip(field.pixels()) {
        *pv += fv;
    }

    // shared bold structure
    let ew = 2 * s;
    let eyy = f0 + 3 * s;
    let exl = f0 + 2 * s;
    let exr = f1 - 2 * s - ew;
    fill(&mut img, eyy, eyy + ew, exl, exl + ew, -120.0);
    fill(&mut img, eyy, eyy + ew, exr, exr + ew, -120.0);
    fill(&mut img, eyy + s / 2, eyy + s, exl + s / 2, exl + s, 90.0);
    fill(&mut img, eyy + s / 2, eyy + s, exr + s / 2, exr + s, 90.0);
    fill(&mut img, eyy - s, eyy, exl, exl + ew, -90.0);
    fill(&mut img, eyy - s, eyy, exr, exr + ew, -90.0);
    let ny = eyy + 3 * s;
    let nx = side / 2 - s / 2;
    fill(&mut img, ny, ny + 3 * s, nx, nx + s.max(1), -55.0);
    let mw = 4 * s;
    let my = ny + 4 * s;
    let mx = side / 2 - mw / 2;
    fill(&mut img, my, my + s, mx, mx + mw, -110.0);
    // teeth bars
    let mut c = mx;
    while c < mx + mw {
        fill(&mut img, my, my + s, c, c + 1, 70.0);
        c += 2;
    }
    // striped hair band above the face box
    for c in (f0 - s)..(f1 + s) {
        let d = if c % 2 == 0 { -65.0 } else { 25.0 };
        fill(&mut img, f0 - s, f0 + s, c, c + 1, d);
    }
    // freckle rows on the cheeks
    let mut r = ny;
    while r < ny + 2 * s {
        fill(&mut img, r, r + 1, f0 + s, f0 + 3 * s, -45.0);
        fill(&mut img, r, r + 1, f1 - 3 * s, f1 - s, -45.0);
        r += 2;
    }
    // identity tweak + jitter, then quantize like the on-disk format
    let tweak = ident.gen_range(-6.0..6.0);
    fill(&mut img, my, my + s, mx, mx + mw, tweak);
    for pv in img.pixels_mut() {
        // cheap approximate normal from the average of uniforms
        let n: f64 = (0..4).map(|_| jitter.gen_range(-1.0f64..1.0)).sum::<f64>() * 0.5;
        *pv = (*pv + 0.6 * n).clamp(0.0, 255.0).round();
    }
    Ok(img)
}

/// A generated gallery: several images of one protected subject plus one
/// image each of the other identities.
#[derive(Debug, Clone)]
pub struct SynthGallery {
    pub subjects: Vec<GrayImage>,
    pub impostors: Vec<GrayImage>,
}

impl SynthGallery {
    pub fn all(&self) -> Vec<&GrayImage> {
        self.subjects.iter().chain(&self.impostors).collect()
    }
}

/// Deterministic gallery from a master seed.
pub fn build_gallery(
    side: usize,
    levels: usize,
    n_identities: usize,
    n_subject_images: usize,
    seed: u64,
) -> Result<SynthGallery> {
    let mut master = stream_rng(seed, 0);
    let mut jitter = stream_rng(seed, 1);
    let subject_seed: u64 = master.gen();
    let mut subjects = Vec::with_capacity(n_subject_images);
    for _ in 0..n_subject_images {
        // identical identity parameters each time, fresh jitter
        let mut ident = ChaCha12Rng::seed_from_u64(subject_seed);
        subjects.push(synth_face(side, levels, &mut ident, &mut jitter)?);
    }
    let mut impostors = Vec::with_capacity(n_identities.saturating_sub(1));
    for _ in 1..n_identities {
        let ident_seed: u64 = master.gen();
        let mut ident = ChaCha12Rng::seed_from_u64(ident_seed);
        impostors.push(synth_face(side, levels, &mut ident, &mut jitter)?);
    }
    Ok(SynthGallery {
        subjects,
        impostors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gallery_is_deterministic_and_in_range() {
        let a = build_gallery(32, 4, 6, 3, 42).unwrap();
        let b = build_gallery(32, 4, 6, 3, 42).unwrap();
        for (x, y) in a.subjects.iter().zip(&b.subjects) {
            assert_eq!(x.pixels(), y.pixels());
        }
        for img in a.all() {
            assert!(img
                .pixels()
                .iter()
                .all(|&v| (0.0..=255.0).contains(&v) && v.fract() == 0.0));
        }
        // subject images share an identity but differ by jitter
        assert_ne!(a.subjects[0].pixels(), a.subjects[1].pixels());
        // impostors differ from the subject
        assert_ne!(a.subjects[0].pixels(), a.impostors[0].pixels());
    }

    #[test]
    fn tint_slots_are_disjoint_and_sized() {
        for (side, levels) in [(64usize, 5usize), (32, 4), (16, 3)] {
            let slots = identity_tint_slots(side, levels);
            assert!(!slots.is_empty());
            assert!(slots.len() <= 64);
            let mut sorted = slots.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), slots.len());
            assert!(sorted.iter().all(|&i| i < side * side));
        }
    }
}
