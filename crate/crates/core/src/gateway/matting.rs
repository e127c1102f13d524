//! Built-in background removal for generated images with plain backgrounds.
//!
//! The image is median-filtered (3×3), then flood-filled from each corner
//! over pixels whose every channel lies within `tolerance` of that corner
//! region's mean color. Reached pixels become fully transparent.

use std::collections::VecDeque;

use image::{Rgba, RgbaImage};

use crate::error::{Error, Result};
use crate::idea::ImageAsset;

/// Share of fully transparent pixels above which an image counts as matted.
pub const PREMATTED_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct MattingParams {
    /// Per-channel color distance, in 8-bit levels.
    pub tolerance: u8,
}

impl Default for MattingParams {
    fn default() -> Self {
        // 12/255
        Self { tolerance: 12 }
    }
}

pub fn is_prematted(img: &ImageAsset) -> bool {
    let total = (img.width() as u64 * img.height() as u64).max(1);
    let clear = img.pixels.pixels().filter(|p| p[3] == 0).count() as u64;
    clear as f64 >= PREMATTED_FRACTION * total as f64
}

fn median3x3(img: &RgbaImage) -> Vec<[u8; 3]> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let mut out = Vec::with_capacity((w * h) as usize);
    let mut window = [[0u8; 9]; 3];
    for y in 0..h {
        for x in 0..w {
            let mut n = 0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let sx = (x + dx).clamp(0, w - 1) as u32;
                    let sy = (y + dy).clamp(0, h - 1) as u32;
                    let p = img.get_pixel(sx, sy);
                    for c in 0..3 {
                        window[c][n] = p[c];
                    }
                    n += 1;
                }
            }
            let mut px = [0u8; 3];
            for c in 0..3 {
                // flat neighborhoods are the common case
                if window[c].iter().any(|&v| v != window[c][0]) {
                    window[c].sort_unstable();
                }
                px[c] = window[c][4];
            }
            out.push(px);
        }
    }
    out
}

fn within(a: [u8; 3], mean: [f64; 3], tol: u8) -> bool {
    (0..3).all(|c| (a[c] as f64 - mean[c]).abs() <= tol as f64)
}

/// Foreground mask after flood fill; `true` = keep.
pub fn foreground_mask(img: &RgbaImage, params: &MattingParams) -> Vec<bool> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Vec::new();
    }
    let filtered = median3x3(img);
    let k = (w.min(h) / 16).max(1);
    let mut background = vec![false; w * h];
    let corners = [(0, 0), (w - k, 0), (0, h - k), (w - k, h - k)];
    let seeds = [(0, 0), (w - 1, 0), (0, h - 1), (w - 1, h - 1)];
    for (&(cx, cy), &(sx, sy)) in corners.iter().zip(&seeds) {
        let mut sum = [0.0f64; 3];
        for y in cy..cy + k {
            for x in cx..cx + k {
                let p = filtered[y * w + x];
                for c in 0..3 {
                    sum[c] += p[c] as f64;
                }
            }
        }
        let mean = sum.map(|s| s / (k * k) as f64);
        if background[sy * w + sx] || !within(filtered[sy * w + sx], mean, params.tolerance) {
            continue;
        }
        let mut queue = VecDeque::from([(sx, sy)]);
        background[sy * w + sx] = true;
        while let Some((x, y)) = queue.pop_front() {
            let mut visit = |nx: usize, ny: usize| {
                let i = ny * w + nx;
                if !background[i] && within(filtered[i], mean, params.tolerance) {
                    background[i] = true;
                    queue.push_back((nx, ny));
                }
            };
            if x > 0 {
                visit(x - 1, y);
            }
            if x + 1 < w {
                visit(x + 1, y);
            }
            if y > 0 {
                visit(x, y - 1);
            }
            if y + 1 < h {
                visit(x, y + 1);
            }
        }
    }
    background.into_iter().map(|b| !b).collect()
}

/// Heuristic matte; fails with [`Error::EmptyForeground`] when nothing is
/// left.
pub fn heuristic_matte(img: &ImageAsset, params: &MattingParams) -> Result<ImageAsset> {
    let mask = foreground_mask(&img.pixels, params);
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyForeground);
    }
    let mut out = img.pixels.clone();
    for (p, keep) in out.pixels_mut().zip(mask) {
        if !keep {
            *p = Rgba([p[0], p[1], p[2], 0]);
        }
    }
    Ok(ImageAsset { id: format!("{}-fg", img.id), pixels: out, source_path: None })
}
