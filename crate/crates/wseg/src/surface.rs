//! Tissue–background boundary detection and seed masking.
//!
//! The detector runs a left-to-right dynamic program over a per-pixel cost
//! of minus the vertical intensity gradient (after 3×3 Gaussian smoothing),
//! with row jumps between adjacent columns limited to `max_jump` and larger
//! jumps paying `smoothness_penalty` per row. The minimal-cost path is the
//! surface; seeds above it or within `margin` rows below it are dropped.

use crate::image::{Image, SeedMap};

/// Per-column row index of the tissue top.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SurfaceCurve {
    pub rows: Vec<usize>,
    /// Default masking margin in pixels carried with the curve.
    pub margin: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SurfaceConfig {
    pub smoothness_penalty: f64,
    pub max_jump: usize,
    pub margin: usize,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        SurfaceConfig {
            smoothness_penalty: 0.02,
            max_jump: 2,
            margin: 6,
        }
    }
}

/// 3×3 binomial smoothing with replicated borders.
fn gaussian3x3(image: &Image) -> Image {
    let (h, w) = (image.height(), image.width());
    let clamp_get = |r: isize, c: isize| {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        image.get(r, c)
    };
    Image::from_fn(h, w, |r, c| {
        let (r, c) = (r as isize, c as isize);
        let mut acc = 0.0;
        for (dr, wr) in [(-1isize, 1.0), (0, 2.0), (1, 1.0)] {
            for (dc, wc) in [(-1isize, 1.0), (0, 2.0), (1, 1.0)] {
                acc += wr * wc * clamp_get(r + dr, c + dc);
            }
        }
        acc / 16.0
    })
}

/// Detects the tissue top as the minimal-cost monotone-jump path.
/// Always returns some path.
pub fn detect_surface(image: &Image, cfg: &SurfaceConfig) -> SurfaceCurve {
    let (h, w) = (image.height(), image.width());
    let smoothed = gaussian3x3(image);
    // cost = −(central vertical gradient): bright-below-dark minimizes it
    let cost = |r: usize, c: usize| -> f64 {
        let above = smoothed.get(r.saturating_sub(1), c);
        let below = smoothed.get((r + 1).min(h - 1), c);
        -(below - above) / 2.0
    };
    let mj = cfg.max_jump as isize;
    let mut dp = vec![0.0f64; h];
    let mut next = vec![0.0f64; h];
    // backpointers: chosen predecessor row per (column, row)
    let mut back = vec![0u32; h * w];
    for (r, d) in dp.iter_mut().enumerate() {
        *d = cost(r, 0);
    }
    for c in 1..w {
        for r in 0..h {
            let mut best = f64::INFINITY;
            let mut best_prev = r;
            for dr in -mj..=mj {
                let pr = r as isize + dr;
                if pr < 0 || pr >= h as isize {
                    continue;
                }
                let cand = dp[pr as usize] + cfg.smoothness_penalty * dr.unsigned_abs() as f64;
                if cand < best {
                    best = cand;
                    best_prev = pr as usize;
                }
            }
            next[r] = best + cost(r, c);
            back[c * h + r] = best_prev as u32;
        }
        std::mem::swap(&mut dp, &mut next);
    }
    let mut end = 0usize;
    for r in 1..h {
        if dp[r] < dp[end] {
            end = r;
        }
    }
    let mut rows = vec![0usize; w];
    rows[w - 1] = end;
    for c in (1..w).rev() {
        rows[c - 1] = back[c * h + rows[c]] as usize;
    }
    SurfaceCurve {
        rows,
        margin: cfg.margin,
    }
}

/// Removes seeds above the surface or within `margin` rows below it.
pub fn mask_seeds(seeds: &SeedMap, surface: &SurfaceCurve, margin: usize) -> SeedMap {
    let mut out = seeds.clone();
    for c in 0..seeds.width() {
        let cut = surface.rows[c] + margin;
        for r in 0..cut.min(seeds.height()) {
            out.set(r, c, false);
        }
    }
    out
}
