use image::{Rgba, RgbaImage};

use crate::error::{Error, Result};
use crate::idea::{MeshAsset, TriMesh};

use super::RenderConfig;

const SUBPIXEL: f64 = 256.0;

/// A signed world axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    PosX,
    NegX,
    PosY,
    NegY,
    PosZ,
    NegZ,
}

impl Axis {
    #[inline]
    pub fn dot(self, p: [f64; 3]) -> f64 {
        match self {
            Axis::PosX => p[0],
            Axis::NegX => -p[0],
            Axis::PosY => p[1],
            Axis::NegY => -p[1],
            Axis::PosZ => p[2],
            Axis::NegZ => -p[2],
        }
    }

    pub fn vector(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        let (k, s) = match self {
            Axis::PosX => (0, 1.0),
            Axis::NegX => (0, -1.0),
            Axis::PosY => (1, 1.0),
            Axis::NegY => (1, -1.0),
            Axis::PosZ => (2, 1.0),
            Axis::NegZ => (2, -1.0),
        };
        v[k] = s;
        v
    }
}

/// Orthographic camera basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Camera {
    pub right: Axis,
    pub up: Axis,
    pub forward: Axis,
}

/// Translate the bounding-box center to the origin and scale the largest
/// extent to 1.
pub fn normalize_positions(g: &TriMesh) -> Result<Vec<[f64; 3]>> {
    let (lo, hi) = g.bounds().ok_or(Error::DegenerateGeometry)?;
    let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0f64, f64::max);
    if !(extent > 0.0) || !extent.is_finite() {
        return Err(Error::DegenerateGeometry);
    }
    let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, (lo[2] + hi[2]) / 2.0];
    Ok(g.positions
        .iter()
        .map(|p| {
            [(p[0] as f64 - center[0]) / extent, (p[1] as f64 - center[1]) / extent, (p[2] as f64 - center[2]) / extent]
        })
        .collect())
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Headlight Lambert factor of a face, clamped to [0.25, 1].
pub(crate) fn face_shade(p0: [f64; 3], p1: [f64; 3], p2: [f64; 3], forward: Axis) -> f64 {
    let n = cross(sub(p1, p0), sub(p2, p0));
    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    if len == 0.0 {
        return 0.25;
    }
    (forward.dot(n) / len).abs().clamp(0.25, 1.0)
}

/// Nearest-texel lookup with wrapping; `v = 0` is the bottom row.
pub(crate) fn sample_texture(tex: &RgbaImage, u: f64, v: f64) -> [u8; 3] {
    let (w, h) = (tex.width(), tex.height());
    let u = u - u.floor();
    let v = v - v.floor();
    let x = ((u * w as f64).floor() as u32).min(w - 1);
    let y = (((1.0 - v) * h as f64).floor() as u32).min(h - 1);
    let p = tex.get_pixel(x, y);
    [p[0], p[1], p[2]]
}

/// Final pixel color of a surface point on triangle `tri` with barycentric
/// weights `bary` (summing to 1).
pub(crate) fn shade_point(mesh: &MeshAsset, tri: [u32; 3], bary: [f64; 3], shade: f64, cfg: &RenderConfig) -> Rgba<u8> {
    let base = match (&mesh.texture, &mesh.geometry.uvs) {
        (Some(tex), Some(uvs)) => {
            let mut u = 0.0;
            let mut v = 0.0;
            for k in 0..3 {
                let t = uvs[tri[k] as usize];
                u += bary[k] * t[0] as f64;
                v += bary[k] * t[1] as f64;
            }
            sample_texture(tex, u, v)
        }
        _ => cfg.base_color,
    };
    let c = |x: u8| (x as f64 * shade).round().clamp(0.0, 255.0) as u8;
    Rgba([c(base[0]), c(base[1]), c(base[2]), 255])
}

const NO_TRI: u32 = u32::MAX;

#[inline]
fn edge(a: (i64, i64), b: (i64, i64), p: (i64, i64)) -> i64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// Rasterize one view. Coverage is inclusive on edges for both windings
/// (no culling); depth test is strict less-than so the lower triangle index
/// wins ties.
pub(crate) fn rasterize(mesh: &MeshAsset, pos: &[[f64; 3]], cam: Camera, cfg: &RenderConfig) -> RgbaImage {
    let (w, h) = (cfg.width as i64, cfg.height as i64);
    let scale = cfg.pixels_per_unit() * SUBPIXEL;
    let cx = w * SUBPIXEL as i64 / 2;
    let cy = h * SUBPIXEL as i64 / 2;
    // Symmetric rounding keeps opposite views exact mirrors.
    let project = |p: [f64; 3]| -> (i64, i64) {
        (cx + (cam.right.dot(p) * scale).round() as i64, cy - (cam.up.dot(p) * scale).round() as i64)
    };
    let screen: Vec<(i64, i64)> = pos.iter().map(|&p| project(p)).collect();
    // depth buffer plus winning triangle; barycentrics are recomputed for
    // the winner only
    let mut depth_buf = vec![f64::INFINITY; (w * h) as usize];
    let mut tri_buf = vec![NO_TRI; (w * h) as usize];
    let sub = SUBPIXEL as i64;

    for (ti, tri) in mesh.geometry.indices.iter().enumerate() {
        let [a, b, c] = tri.map(|i| screen[i as usize]);
        let area = edge(a, b, c);
        if area == 0 {
            continue;
        }
        let min_x = a.0.min(b.0).min(c.0);
        let max_x = a.0.max(b.0).max(c.0);
        let min_y = a.1.min(b.1).min(c.1);
        let max_y = a.1.max(b.1).max(c.1);
        // pixel centers at i*sub + sub/2
        let x0 = ((min_x - sub / 2) as f64 / sub as f64).ceil().max(0.0) as i64;
        let x1 = (((max_x - sub / 2) as f64 / sub as f64).floor() as i64).min(w - 1);
        let y0 = ((min_y - sub / 2) as f64 / sub as f64).ceil().max(0.0) as i64;
        let y1 = (((max_y - sub / 2) as f64 / sub as f64).floor() as i64).min(h - 1);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        let depths = tri.map(|i| cam.forward.dot(pos[i as usize]));
        let inv_area = 1.0 / area as f64;
        // edge functions are affine in the sample position: step them
        let steps = [(b, c), (c, a), (a, b)].map(|(p, q)| (-(q.1 - p.1) * sub, (q.0 - p.0) * sub));
        let first = (x0 * sub + sub / 2, y0 * sub + sub / 2);
        let mut row = [edge(b, c, first), edge(c, a, first), edge(a, b, first)];
        for py in y0..=y1 {
            let mut e = row;
            let base = (py * w) as usize;
            for px in x0..=x1 {
                let [w0, w1, w2] = e;
                let inside = if area > 0 { w0 >= 0 && w1 >= 0 && w2 >= 0 } else { w0 <= 0 && w1 <= 0 && w2 <= 0 };
                if inside {
                    let depth = (w0 as f64 * depths[0] + w1 as f64 * depths[1] + w2 as f64 * depths[2]) * inv_area;
                    let k = base + px as usize;
                    if depth < depth_buf[k] {
                        depth_buf[k] = depth;
                        tri_buf[k] = ti as u32;
                    }
                }
                for i in 0..3 {
                    e[i] += steps[i].0;
                }
            }
            for i in 0..3 {
                row[i] += steps[i].1;
            }
        }
    }

    let shades: Vec<f64> = mesh
        .geometry
        .indices
        .iter()
        .map(|t| face_shade(pos[t[0] as usize], pos[t[1] as usize], pos[t[2] as usize], cam.forward))
        .collect();
    let textured = mesh.texture.is_some() && mesh.geometry.uvs.is_some();
    // untextured faces have one color each
    let mut face_color: Vec<Option<Rgba<u8>>> = vec![None; if textured { 0 } else { shades.len() }];
    let mut img = RgbaImage::from_pixel(cfg.width, cfg.height, Rgba([0, 0, 0, 0]));
    let out: &mut [u8] = &mut img;
    for (i, &ti) in tri_buf.iter().enumerate() {
        if ti == NO_TRI {
            continue;
        }
        let tri = mesh.geometry.indices[ti as usize];
        let color = if textured {
            let (px, py) = (i as i64 % w, i as i64 / w);
            let [a, b, c] = tri.map(|i| screen[i as usize]);
            let p = (px * sub + sub / 2, py * sub + sub / 2);
            let inv_area = 1.0 / edge(a, b, c) as f64;
            let bary =
                [edge(b, c, p) as f64 * inv_area, edge(c, a, p) as f64 * inv_area, edge(a, b, p) as f64 * inv_area];
            shade_point(mesh, tri, bary, shades[ti as usize], cfg)
        } else {
            *face_color[ti as usize]
                .get_or_insert_with(|| shade_point(mesh, tri, [1.0 / 3.0; 3], shades[ti as usize], cfg))
        };
        out[i * 4..i * 4 + 4].copy_from_slice(&color.0);
    }
    img
}
