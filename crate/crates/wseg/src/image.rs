//! Grid types shared across the pipeline: grayscale images, binary masks,
//! and CAM-derived seed maps. All grids are row-major H×W.

use crate::error::{Error, Result};

/// Grayscale intensity field with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(h: usize, w: usize) -> Image {
        Image {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<f64>) -> Result<Image> {
        if data.len() != h * w {
            return Err(Error::shape("Image::from_vec", h * w, data.len()));
        }
        Ok(Image { h, w, data })
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> f64) -> Image {
        let mut data = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                data.push(f(r, c));
            }
        }
        Image { h, w, data }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.w + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.w + c] = v;
    }

    /// Quantizes to the 8-bit grid used by PGM storage, so in-memory pipelines
    /// see exactly what a written-then-loaded image would contain.
    pub fn quantized(&self) -> Image {
        Image {
            h: self.h,
            w: self.w,
            data: self
                .data
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
                .collect(),
        }
    }
}

/// Per-pixel class in {0 = non-adipose, 1 = adipose}. Ground-truth masks and
/// pseudo labels share this shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    h: usize,
    w: usize,
    data: Vec<u8>,
}

/// Machine-generated annotation used in place of pixel-wise ground truth.
pub type PseudoLabel = LabelMask;

impl LabelMask {
    pub fn zeros(h: usize, w: usize) -> LabelMask {
        LabelMask {
            h,
            w,
            data: vec![0; h * w],
        }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<u8>) -> Result<LabelMask> {
        if data.len() != h * w {
            return Err(Error::shape("LabelMask::from_vec", h * w, data.len()));
        }
        if let Some(bad) = data.iter().position(|&v| v > 1) {
            return Err(Error::InvalidConfig(format!(
                "label mask must be binary, found {} at index {bad}",
                data[bad]
            )));
        }
        Ok(LabelMask { h, w, data })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn classes(&self) -> &[u8] {
        &self.data
    }

    pub fn classes_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.data[r * self.w + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: u8) {
        debug_assert!(v <= 1);
        self.data[r * self.w + c] = v;
    }

    pub fn positive_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn any_positive(&self) -> bool {
        self.data.iter().any(|&v| v == 1)
    }
}

/// Sparse per-pixel adipose seed marks derived from a CAM.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedMap {
    h: usize,
    w: usize,
    data: Vec<bool>,
}

impl SeedMap {
    pub fn empty(h: usize, w: usize) -> SeedMap {
        SeedMap {
            h,
            w,
            data: vec![false; h * w],
        }
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn marks(&self) -> &[bool] {
        &self.data
    }

    pub fn marks_mut(&mut self) -> &mut [bool] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.w + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        self.data[r * self.w + c] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// True when every seed present in `self` is also present in `other`.
    pub fn subset_of(&self, other: &SeedMap) -> bool {
        self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }
}

/// Bilinear upsampling with half-pixel centers, used to bring CAMs from
/// feature resolution back to image resolution.
pub fn bilinear_upsample(src: &[f64], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f64> {
    let mut out = vec![0.0; dh * dw];
    let sy = sh as f64 / dh as f64;
    let sx = sw as f64 / dw as f64;
    for dy in 0..dh {
        let fy = ((dy as f64 + 0.5) * sy - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let wy = fy - y0 as f64;
        for dx in 0..dw {
            let fx = ((dx as f64 + 0.5) * sx - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let wx = fx - x0 as f64;
            let v00 = src[y0 * sw + x0];
            let v01 = src[y0 * sw + x1];
            let v10 = src[y1 * sw + x0];
            let v11 = src[y1 * sw + x1];
            out[dy * dw + dx] = v00 * (1.0 - wy) * (1.0 - wx)
                + v01 * (1.0 - wy) * wx
                + v10 * wy * (1.0 - wx)
                + v11 * wy * wx;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_is_idempotent() {
        let img = Image::from_fn(4, 4, |r, c| (r * 4 + c) as f64 / 15.0);
        let q1 = img.quantized();
        let q2 = q1.quantized();
        assert_eq!(q1, q2);
    }

    #[test]
    fn label_mask_rejects_non_binary() {
        assert!(LabelMask::from_vec(1, 2, vec![0, 2]).is_err());
    }

    #[test]
    fn bilinear_preserves_constant_fields() {
        let src = vec![0.7; 6];
        let up = bilinear_upsample(&src, 2, 3, 8, 12);
        assert!(up.iter().all(|&v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn bilinear_interpolates_monotonically() {
        let src = vec![0.0, 1.0];
        let up = bilinear_upsample(&src, 1, 2, 1, 8);
        for pair in up.windows(2) {
            assert!(pair[1] >= pair[0]);
        }
        assert!((up[0] - 0.0).abs() < 1e-12);
        assert!((up[7] - 1.0).abs() < 1e-12);
    }
}
