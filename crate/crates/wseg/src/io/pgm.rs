//! 8-bit binary PGM (P5) and PPM (P6) support.
//!
//! PGM carries images, masks ({0,255}), seed maps, and CAM heatmaps; PPM is
//! used for colored overlay exports.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Image, LabelMask, SeedMap};

fn encode_p5(h: usize, w: usize, bytes: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(bytes);
    out
}

pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    let bytes: Vec<u8> = image
        .pixels()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    fs::write(path, encode_p5(image.height(), image.width(), &bytes)).map_err(|e| Error::io(path, e))
}

pub fn write_mask(path: &Path, mask: &LabelMask) -> Result<()> {
    let bytes: Vec<u8> = mask.classes().iter().map(|&c| if c == 1 { 255 } else { 0 }).collect();
    fs::write(path, encode_p5(mask.height(), mask.width(), &bytes)).map_err(|e| Error::io(path, e))
}

pub fn write_seeds(path: &Path, seeds: &SeedMap) -> Result<()> {
    let bytes: Vec<u8> = seeds.marks().iter().map(|&b| if b { 255 } else { 0 }).collect();
    fs::write(path, encode_p5(seeds.height(), seeds.width(), &bytes)).map_err(|e| Error::io(path, e))
}

/// Writes an arbitrary [0,1] field (e.g. a CAM) as a grayscale heatmap.
pub fn write_field(path: &Path, values: &[f64], h: usize, w: usize) -> Result<()> {
    if values.len() != h * w {
        return Err(Error::shape("write_field", h * w, values.len()));
    }
    let bytes: Vec<u8> = values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    fs::write(path, encode_p5(h, w, &bytes)).map_err(|e| Error::io(path, e))
}

/// RGB overlay writer (P6).
pub fn write_rgb(path: &Path, rgb: &[[u8; 3]], h: usize, w: usize) -> Result<()> {
    if rgb.len() != h * w {
        return Err(Error::shape("write_rgb", h * w, rgb.len()));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for px in rgb {
        out.extend_from_slice(px);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn parse_header<'a>(data: &'a [u8], path: &Path, magic: &str) -> Result<(usize, usize, &'a [u8])> {
    let bad = |reason: String| Error::Malformed {
        path: path.to_path_buf(),
        reason,
    };
    // header tokens may be separated by arbitrary whitespace; comments are not
    // produced by this crate and are rejected for simplicity
    let mut pos = 0usize;
    let mut tokens = Vec::new();
    while tokens.len() < 4 && pos < data.len() {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            break;
        }
        tokens.push(std::str::from_utf8(&data[start..pos]).map_err(|_| bad("non-ascii header".into()))?);
    }
    if tokens.len() < 4 {
        return Err(bad("truncated header".into()));
    }
    if tokens[0] != magic {
        return Err(bad(format!("expected {magic}, found {}", tokens[0])));
    }
    let w: usize = tokens[1].parse().map_err(|_| bad("bad width".into()))?;
    let h: usize = tokens[2].parse().map_err(|_| bad("bad height".into()))?;
    if tokens[3] != "255" {
        return Err(bad(format!("unsupported maxval {}", tokens[3])));
    }
    // exactly one whitespace byte separates the header from the payload
    let payload = &data[pos + 1..];
    Ok((h, w, payload))
}

pub fn read_image(path: &Path) -> Result<Image> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (h, w, payload) = parse_header(&data, path, "P5")?;
    if payload.len() < h * w {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            reason: format!("payload holds {} bytes, need {}", payload.len(), h * w),
        });
    }
    Image::from_vec(h, w, payload[..h * w].iter().map(|&b| b as f64 / 255.0).collect())
}

/// Reads a {0,255} PGM as a binary mask; any non-zero byte counts as class 1.
pub fn read_mask(path: &Path) -> Result<LabelMask> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (h, w, payload) = parse_header(&data, path, "P5")?;
    if payload.len() < h * w {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            reason: format!("payload holds {} bytes, need {}", payload.len(), h * w),
        });
    }
    LabelMask::from_vec(h, w, payload[..h * w].iter().map(|&b| u8::from(b != 0)).collect())
}
