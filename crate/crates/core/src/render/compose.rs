use image::{Rgba, RgbaImage};

use crate::error::{Error, Result};
use crate::idea::{DraftModel, ImageAsset};

use super::font::{glyph, GLYPH_H, GLYPH_W};
use super::{ViewName, ViewSet};

/// Height of the label strip above every grid cell and lineup entry.
pub const BANNER_HEIGHT: u32 = 24;

const BANNER_BG: Rgba<u8> = Rgba([32, 32, 32, 255]);
const BANNER_FG: Rgba<u8> = Rgba([255, 255, 255, 255]);
const GLYPH_SCALE: u32 = 2;
const TEXT_X: u32 = 6;
const TEXT_Y: u32 = (BANNER_HEIGHT - GLYPH_H * GLYPH_SCALE) / 2;

/// Copy `src` into `dst` with its top-left corner at (x, y), row by row.
/// `src` must fit inside `dst`.
fn blit(dst: &mut RgbaImage, src: &RgbaImage, x: u32, y: u32) {
    let (dw, sw) = (dst.width() as usize * 4, src.width() as usize * 4);
    let (x, y) = (x as usize * 4, y as usize);
    let out: &mut [u8] = dst;
    for (r, row) in src.as_raw().chunks_exact(sw).enumerate() {
        let start = (y + r) * dw + x;
        out[start..start + sw].copy_from_slice(row);
    }
}

/// Fill a `width × BANNER_HEIGHT` strip at (x, y) and write `label` into it.
/// Text that does not fit is clipped.
pub fn draw_banner(img: &mut RgbaImage, x: u32, y: u32, width: u32, label: &str) {
    for yy in y..(y + BANNER_HEIGHT).min(img.height()) {
        for xx in x..(x + width).min(img.width()) {
            img.put_pixel(xx, yy, BANNER_BG);
        }
    }
    let advance = (GLYPH_W + 1) * GLYPH_SCALE;
    for (i, ch) in label.chars().enumerate() {
        let gx = x + TEXT_X + i as u32 * advance;
        if gx + GLYPH_W * GLYPH_SCALE > x + width {
            break;
        }
        for (row, bits) in glyph(ch).iter().enumerate() {
            for col in 0..GLYPH_W {
                if bits >> (GLYPH_W - 1 - col) & 1 == 0 {
                    continue;
                }
                for dy in 0..GLYPH_SCALE {
                    for dx in 0..GLYPH_SCALE {
                        let px = gx + col * GLYPH_SCALE + dx;
                        let py = y + TEXT_Y + row as u32 * GLYPH_SCALE + dy;
                        if px < img.width() && py < img.height() {
                            img.put_pixel(px, py, BANNER_FG);
                        }
                    }
                }
            }
        }
    }
}

const GRID_ORDER: [[ViewName; 3]; 2] =
    [[ViewName::Front, ViewName::Back, ViewName::Left], [ViewName::Right, ViewName::Top, ViewName::Bottom]];

/// 3×2 grid of the six views, each cell topped by a banner with its name.
/// Output size is `(3w, 2h + 2·BANNER_HEIGHT)`.
pub fn compose_view_grid(views: &ViewSet) -> ImageAsset {
    let (w, h) = views.resolution();
    let cell_h = h + BANNER_HEIGHT;
    let mut out = RgbaImage::new(3 * w, 2 * cell_h);
    for (row, names) in GRID_ORDER.iter().enumerate() {
        for (col, &name) in names.iter().enumerate() {
            let x = col as u32 * w;
            let y = row as u32 * cell_h;
            draw_banner(&mut out, x, y, w, name.as_str());
            blit(&mut out, &views.get(name).pixels, x, y + BANNER_HEIGHT);
        }
    }
    ImageAsset::new("view-grid", out)
}

/// Place same-sized grids side by side, each under a `draft k` banner.
pub fn compose_grid_lineup(grids: &[ImageAsset]) -> Result<ImageAsset> {
    if grids.is_empty() || grids.len() > 8 {
        return Err(Error::Precondition(format!("lineup needs 1..=8 drafts, got {}", grids.len())));
    }
    let (w, h) = (grids[0].width(), grids[0].height());
    if grids.iter().any(|g| g.width() != w || g.height() != h) {
        return Err(Error::ResolutionMismatch);
    }
    let mut out = RgbaImage::new(w * grids.len() as u32, h + BANNER_HEIGHT);
    for (i, g) in grids.iter().enumerate() {
        let x = i as u32 * w;
        draw_banner(&mut out, x, 0, w, &format!("draft {i}"));
        blit(&mut out, &g.pixels, x, BANNER_HEIGHT);
    }
    Ok(ImageAsset::new("draft-lineup", out))
}

/// Lineup of each draft's view grid, annotated with its 0-based index.
pub fn compose_draft_lineup(drafts: &[DraftModel]) -> Result<ImageAsset> {
    if drafts.is_empty() || drafts.len() > 8 {
        return Err(Error::Precondition(format!("lineup needs 1..=8 drafts, got {}", drafts.len())));
    }
    let res = drafts[0].views.resolution();
    if drafts.iter().any(|d| d.views.resolution() != res) {
        return Err(Error::ResolutionMismatch);
    }
    let grids: Vec<ImageAsset> = drafts.iter().map(|d| compose_view_grid(&d.views)).collect();
    compose_grid_lineup(&grids)
}
