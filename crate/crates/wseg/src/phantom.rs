//! Synthetic OCT-like phantom generator.
//!
//! Each sample is a tall-FOV grayscale B-scan look-alike: dark noisy
//! background above a smooth tissue surface, speckled tissue with
//! exponential depth attenuation below it, and (for positive samples) a few
//! elliptical adipose blobs drawn as dark cores with bright rims. Bright
//! vertical streak artifacts and small blob-mimicking mottles near the
//! surface reproduce the false-positive bait that boundary masking is meant
//! to remove. Ground truth (mask, surface, image label) is exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{Image, LabelMask};
use crate::io::manifest::ManifestEntry;

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomConfig {
    pub height: usize,
    pub width: usize,
    pub n_images: usize,
    /// Probability that an image contains adipose blobs.
    pub adipose_image_fraction: f64,
    /// Mean adipose pixel fraction among positive images.
    pub adipose_pixel_target: f64,
    pub speckle_strength: f64,
    pub attenuation_coeff: f64,
    pub artifact_probability: f64,
    pub rng_seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            height: 64,
            width: 128,
            n_images: 400,
            adipose_image_fraction: 0.5,
            adipose_pixel_target: 0.05,
            speckle_strength: 0.25,
            attenuation_coeff: 0.02,
            artifact_probability: 0.5,
            rng_seed: 7,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 32 || self.width < 32 {
            return Err(Error::InvalidConfig(format!(
                "phantom images must be at least 32x32, got {}x{}",
                self.height, self.width
            )));
        }
        for (name, v) in [
            ("adipose_image_fraction", self.adipose_image_fraction),
            ("adipose_pixel_target", self.adipose_pixel_target),
            ("artifact_probability", self.artifact_probability),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0,1], got {v}")));
            }
        }
        if self.speckle_strength < 0.0 || self.attenuation_coeff < 0.0 {
            return Err(Error::InvalidConfig(
                "speckle_strength and attenuation_coeff must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Per-subject appearance parameters; samples of one synthetic subject share
/// them so cross-validation folds test inter-subject generalization.
#[derive(Debug, Clone)]
pub struct SubjectStyle {
    pub surface_base: f64,
    pub blob_scale: f64,
    pub speckle_scale: f64,
    pub atten_scale: f64,
    pub rim_strength: f64,
}

impl SubjectStyle {
    pub fn sample(seed: u64) -> SubjectStyle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SubjectStyle {
            surface_base: rng.gen_range(0.10..0.22),
            blob_scale: rng.gen_range(0.8..1.3),
            speckle_scale: rng.gen_range(0.8..1.2),
            atten_scale: rng.gen_range(0.85..1.15),
            rim_strength: rng.gen_range(1.3..1.6),
        }
    }
}

/// One generated sample with exact ground truth.
#[derive(Debug, Clone)]
pub struct PhantomSample {
    pub image: Image,
    pub truth_mask: LabelMask,
    /// Per-column row index of the first tissue pixel.
    pub truth_surface: Vec<usize>,
    pub image_label: u8,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn subject_style_seed(cfg_seed: u64, subject: usize) -> u64 {
    splitmix(cfg_seed ^ 0x5417_0000 ^ (subject as u64))
}

pub fn sample_seed(cfg_seed: u64, index: usize) -> u64 {
    splitmix(cfg_seed ^ 0xA11C_E000_0000 ^ (index as u64))
}

struct Blob {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    rim: f64,
    fade: f64,
}

/// Generates one sample. Pure function of (config, style, rng state).
pub fn generate_sample(cfg: &PhantomConfig, style: &SubjectStyle, rng: &mut ChaCha8Rng) -> PhantomSample {
    let (h, w) = (cfg.height, cfg.width);
    let hf = h as f64;
    let wf = w as f64;

    // smooth random surface: base depth plus two low-frequency sinusoids
    let base = style.surface_base * hf;
    let a1 = rng.gen_range(0.5..hf * 0.04);
    let a2 = rng.gen_range(0.5..hf * 0.025);
    let f1 = rng.gen_range(0.5..1.5);
    let f2 = rng.gen_range(2.0..4.0);
    let p1 = rng.gen_range(0.0..std::f64::consts::TAU);
    let p2 = rng.gen_range(0.0..std::f64::consts::TAU);
    let surface: Vec<usize> = (0..w)
        .map(|c| {
            let x = c as f64 / wf;
            let v = base
                + a1 * (std::f64::consts::TAU * f1 * x + p1).sin()
                + a2 * (std::f64::consts::TAU * f2 * x + p2).sin();
            (v.round().max(2.0) as usize).min(h / 3)
        })
        .collect();

    let amp = 0.80 * rng.gen_range(0.9..1.1);
    let mu = cfg.attenuation_coeff * style.atten_scale;
    let line_gain = rng.gen_range(1.05..1.2);

    // adipose blobs for positive draws
    let positive = rng.gen_bool(cfg.adipose_image_fraction);
    let mut blobs: Vec<Blob> = Vec::new();
    if positive {
        let n_blobs = rng.gen_range(1..=4usize);
        let total_px = cfg.adipose_pixel_target * hf * wf * style.blob_scale * rng.gen_range(0.6..1.5);
        let mut weights: Vec<f64> = (0..n_blobs).map(|_| rng.gen_range(0.5..1.5)).collect();
        let wsum: f64 = weights.iter().sum();
        for wgt in &mut weights {
            *wgt /= wsum;
        }
        for wgt in weights {
            let area = (total_px * wgt).max(20.0);
            let mut r0 = (area / std::f64::consts::PI).sqrt();
            let ecc: f64 = rng.gen_range(0.7..1.4);
            let rim = 1.5;
            // retry with shrinking radius until the blob fits under the surface
            for _ in 0..12 {
                let ry = (r0 * ecc.sqrt()).max(2.0);
                let rx = (r0 / ecc.sqrt()).max(2.0);
                let ext = rx + rim + 1.0;
                if 2.0 * ext + 2.0 >= wf {
                    r0 *= 0.85;
                    continue;
                }
                let cx = rng.gen_range(ext..wf - ext);
                let c0 = (cx - ext).floor().max(0.0) as usize;
                let c1 = ((cx + ext).ceil() as usize).min(w - 1);
                let local_surface = surface[c0..=c1].iter().copied().max().unwrap() as f64;
                let lo = local_surface + 8.0 + ry + rim;
                let hi = (local_surface + 0.65 * (hf - local_surface)).min(hf - 3.0 - ry - rim);
                if lo < hi {
                    let cy = rng.gen_range(lo..hi);
                    let fade = (-1.5 * mu * (cy - local_surface)).exp().max(0.35);
                    blobs.push(Blob {
                        cy,
                        cx,
                        ry,
                        rx,
                        rim,
                        fade,
                    });
                    break;
                }
                r0 *= 0.85;
            }
        }
    }

    // tissue field with attenuation, surface line, blob factors, speckle
    let mut img = Image::zeros(h, w);
    let mut mask = LabelMask::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            let s = surface[c];
            let v = if r < s {
                // background: low intensity + additive noise
                0.03 + rng.gen_range(0.0..0.04)
            } else if r < s + 2 {
                amp * line_gain
            } else {
                let mut t = amp * (-mu * (r - s) as f64).exp();
                for b in &blobs {
                    let dy = (r as f64 - b.cy) / (b.ry + b.rim);
                    let dx = (c as f64 - b.cx) / (b.rx + b.rim);
                    if dy * dy + dx * dx <= 1.0 {
                        mask.set(r, c, 1);
                        let dyc = (r as f64 - b.cy) / b.ry;
                        let dxc = (c as f64 - b.cx) / b.rx;
                        let factor = if dyc * dyc + dxc * dxc <= 1.0 {
                            0.35
                        } else {
                            style.rim_strength
                        };
                        t *= 1.0 + (factor - 1.0) * b.fade;
                    }
                }
                if cfg.speckle_strength > 0.0 {
                    let m = 1.0 + cfg.speckle_strength * style.speckle_scale * rng.gen_range(-1.0..1.0);
                    t *= m.max(0.0);
                }
                t
            };
            img.set(r, c, v);
        }
    }

    // background noise specks: small bright dots above the surface
    let n_specks = rng.gen_range(0..=5usize);
    for _ in 0..n_specks {
        let c = rng.gen_range(0..w);
        if surface[c] < 5 {
            continue;
        }
        let r = rng.gen_range(1..surface[c].saturating_sub(2).max(2));
        let intensity = rng.gen_range(0.25..0.55);
        for (dr, dc) in [(0i64, 0i64), (0, 1), (1, 0), (1, 1)] {
            let (rr, cc) = (r as i64 + dr, c as i64 + dc);
            if rr >= 0 && (rr as usize) < surface[cc.clamp(0, w as i64 - 1) as usize] && (cc as usize) < w {
                img.set(rr as usize, cc as usize, intensity);
            }
        }
    }

    // bright streak artifact with adipose-mimicking mottles near the boundary
    if cfg.artifact_probability > 0.0 && rng.gen_bool(cfg.artifact_probability) {
        let band_w = rng.gen_range(2..=4usize);
        let c0 = rng.gen_range(0..w - band_w);
        let gain = rng.gen_range(1.5..2.0);
        for c in c0..c0 + band_w {
            for r in 0..h {
                img.set(r, c, img.get(r, c) * gain);
            }
        }
        let n_mottles = rng.gen_range(1..=3usize);
        for _ in 0..n_mottles {
            let mc = rng.gen_range(c0..c0 + band_w) as f64;
            let s = surface[mc as usize] as f64;
            let mr = rng.gen_range((s - 6.0).max(2.0)..s + 7.0);
            let rad: f64 = rng.gen_range(1.5..2.5);
            let core = rng.gen_range(0.10..0.15);
            let rim_v = rng.gen_range(0.45..0.65);
            let ext = (rad + 1.0).ceil() as i64;
            for dr in -ext..=ext {
                for dc in -ext..=ext {
                    let (rr, cc) = (mr as i64 + dr, mc as i64 + dc);
                    if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                        continue;
                    }
                    let d = ((dr * dr + dc * dc) as f64).sqrt();
                    if d <= rad {
                        img.set(rr as usize, cc as usize, core);
                    } else if d <= rad + 1.0 {
                        img.set(rr as usize, cc as usize, rim_v);
                    }
                }
            }
        }
    }

    for v in img.pixels_mut() {
        *v = v.clamp(0.0, 1.0);
    }

    let image_label = u8::from(mask.any_positive());
    PhantomSample {
        image: img,
        truth_mask: mask,
        truth_surface: surface,
        image_label,
    }
}

/// Generates the whole dataset; subject of sample `i` is `i % n_subjects`.
/// Samples are independent streams keyed off the config seed, so generation
/// parallelizes without changing the output.
pub fn generate_dataset(cfg: &PhantomConfig, n_subjects: usize) -> Result<Vec<(PhantomSample, usize)>> {
    cfg.validate()?;
    if n_subjects == 0 {
        return Err(Error::InvalidConfig("n_subjects must be positive".into()));
    }
    let styles: Vec<SubjectStyle> = (0..n_subjects)
        .map(|s| SubjectStyle::sample(subject_style_seed(cfg.rng_seed, s)))
        .collect();
    Ok((0..cfg.n_images)
        .into_par_iter()
        .map(|i| {
            let subject = i % n_subjects;
            let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.rng_seed, i));
            (generate_sample(cfg, &styles[subject], &mut rng), subject)
        })
        .collect())
}

/// Manifest plus the subject-level fold assignment.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub fold_of_subject: Vec<usize>,
    pub n_folds: usize,
}

/// Shuffles subjects and deals them round-robin into folds, so fold sizes
/// differ by at most one subject.
pub fn assign_folds(n_subjects: usize, n_folds: usize, seed: u64) -> Result<Vec<usize>> {
    if n_folds == 0 {
        return Err(Error::InvalidConfig("n_folds must be positive".into()));
    }
    if n_subjects < n_folds {
        return Err(Error::InvalidConfig(format!(
            "need at least as many subjects as folds: {n_subjects} < {n_folds}"
        )));
    }
    let mut subjects: Vec<usize> = (0..n_subjects).collect();
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ 0xF01D_5));
    subjects.shuffle(&mut rng);
    let mut fold_of_subject = vec![0usize; n_subjects];
    for (i, &s) in subjects.iter().enumerate() {
        fold_of_subject[s] = i % n_folds;
    }
    Ok(fold_of_subject)
}

/// Builds the manifest for a generated dataset with subject-level folds.
pub fn build_manifest(
    samples: &[(PhantomSample, usize)],
    n_subjects: usize,
    n_folds: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    let fold_of_subject = assign_folds(n_subjects, n_folds, seed)?;
    let entries = samples
        .iter()
        .enumerate()
        .map(|(i, (s, subject))| ManifestEntry {
            path: format!("images/img_{i:04}.pgm"),
            label: s.image_label,
            subject: *subject,
            fold: fold_of_subject[*subject],
        })
        .collect();
    Ok(DatasetManifest {
        entries,
        fold_of_subject,
        n_folds,
    })
}
