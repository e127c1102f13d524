use image::{imageops, RgbaImage};

use super::stable_hash;
use crate::error::{Error, Result};
use crate::gateway::{image_hash, I23dBackend};
use crate::idea::{ImageAsset, MeshAsset, TriMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum I23dShape {
    /// Always extrude the alpha silhouette.
    #[default]
    Extrude,
    /// Sphere, box or extrusion, picked from the image hash.
    HashedPrimitive,
}

/// Image-to-3D mock: builds a textured mesh from the foreground of the
/// input image.
#[derive(Debug, Clone)]
pub struct ExtrudeI23d {
    pub shape: I23dShape,
    /// Silhouette sampling grid along the longer image side.
    pub grid: u32,
    /// Extrusion depth relative to the silhouette's larger extent.
    pub depth_ratio: f32,
}

impl Default for ExtrudeI23d {
    fn default() -> Self {
        Self { shape: I23dShape::Extrude, grid: 128, depth_ratio: 0.25 }
    }
}

impl I23dBackend for ExtrudeI23d {
    fn generate(&self, img: &ImageAsset, seed: u64) -> Result<MeshAsset> {
        let pick = match self.shape {
            I23dShape::Extrude => 2,
            I23dShape::HashedPrimitive => stable_hash(&[image_hash(img).as_bytes(), &seed.to_le_bytes()]) % 3,
        };
        let id = format!("{}-mesh", img.id);
        match pick {
            0 => Ok(MeshAsset::new(id, uv_sphere(32, 16)).with_texture(crop_to_foreground(&img.pixels))),
            1 => Ok(MeshAsset::new(id, slab_box()).with_texture(crop_to_foreground(&img.pixels))),
            _ => {
                let geom = extrude_silhouette(&img.pixels, self.grid, self.depth_ratio)?;
                Ok(MeshAsset::new(id, geom).with_texture(img.pixels.clone()))
            }
        }
    }
}

fn crop_to_foreground(img: &RgbaImage) -> RgbaImage {
    let mut bbox: Option<(u32, u32, u32, u32)> = None;
    for (x, y, p) in img.enumerate_pixels() {
        if p[3] > 0 {
            bbox = Some(match bbox {
                None => (x, y, x, y),
                Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
            });
        }
    }
    match bbox {
        Some((x0, y0, x1, y1)) => imageops::crop_imm(img, x0, y0, x1 - x0 + 1, y1 - y0 + 1).to_image(),
        None => img.clone(),
    }
}

#[derive(Default)]
struct Builder {
    positions: Vec<[f32; 3]>,
    uvs: Vec<[f32; 2]>,
    indices: Vec<[u32; 3]>,
}

impl Builder {
    fn quad(&mut self, p: [[f32; 3]; 4], t: [[f32; 2]; 4]) {
        let base = self.positions.len() as u32;
        self.positions.extend(p);
        self.uvs.extend(t);
        self.indices.push([base, base + 1, base + 2]);
        self.indices.push([base, base + 2, base + 3]);
    }

    fn finish(self) -> TriMesh {
        TriMesh { positions: self.positions, normals: None, uvs: Some(self.uvs), indices: self.indices }
    }
}

/// Extrude the alpha > 0 silhouette of `img` into a slab. The image is
/// sampled on a grid of `grid` cells along its longer side; front and back
/// faces are row runs, side walls follow the cell boundary. UVs project the
/// image onto the front face, and side walls take the color of the adjacent
/// interior cell.
pub fn extrude_silhouette(img: &RgbaImage, grid: u32, depth_ratio: f32) -> Result<TriMesh> {
    let (w, h) = (img.width(), img.height());
    if w == 0 || h == 0 || grid == 0 {
        return Err(Error::Precondition("empty image or grid".into()));
    }
    let cs = w.max(h) as f64 / grid as f64;
    let gw = (w as f64 / cs).ceil() as usize;
    let gh = (h as f64 / cs).ceil() as usize;
    let sample = |c: usize, r: usize| -> bool {
        let x = (((c as f64 + 0.5) * cs) as u32).min(w - 1);
        let y = (((r as f64 + 0.5) * cs) as u32).min(h - 1);
        img.get_pixel(x, y)[3] > 0
    };
    let mut occ = vec![vec![false; gw]; gh];
    let mut any = false;
    for (r, row) in occ.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            *cell = sample(c, r);
            any |= *cell;
        }
    }
    if !any {
        // foreground thinner than a cell: keep the cell of the first opaque pixel
        let (x, y, _) = img
            .enumerate_pixels()
            .find(|(_, _, p)| p[3] > 0)
            .ok_or_else(|| Error::Precondition("image has no foreground".into()))?;
        occ[((y as f64 / cs) as usize).min(gh - 1)][((x as f64 / cs) as usize).min(gw - 1)] = true;
    }
    let (mut c_lo, mut c_hi, mut r_lo, mut r_hi) = (usize::MAX, 0, usize::MAX, 0);
    for (r, row) in occ.iter().enumerate() {
        for (c, &o) in row.iter().enumerate() {
            if o {
                c_lo = c_lo.min(c);
                c_hi = c_hi.max(c + 1);
                r_lo = r_lo.min(r);
                r_hi = r_hi.max(r + 1);
            }
        }
    }
    let extent = (c_hi - c_lo).max(r_hi - r_lo) as f32;
    let zf = depth_ratio * extent / 2.0;
    let u_at = |x: f64| (x * cs / w as f64) as f32;
    let v_at = |y: f64| (1.0 - y * cs / h as f64) as f32;
    let pos = |x: usize, y: usize, z: f32| [x as f32, -(y as f32), z];

    let mut b = Builder::default();
    for (r, row) in occ.iter().enumerate() {
        let mut c = 0;
        while c < gw {
            if !row[c] {
                c += 1;
                continue;
            }
            let c0 = c;
            while c < gw && row[c] {
                c += 1;
            }
            let c1 = c;
            let uv = [
                [u_at(c0 as f64), v_at(r as f64)],
                [u_at(c1 as f64), v_at(r as f64)],
                [u_at(c1 as f64), v_at(r as f64 + 1.0)],
                [u_at(c0 as f64), v_at(r as f64 + 1.0)],
            ];
            b.quad([pos(c0, r, zf), pos(c1, r, zf), pos(c1, r + 1, zf), pos(c0, r + 1, zf)], uv);
            b.quad([pos(c0, r, -zf), pos(c1, r, -zf), pos(c1, r + 1, -zf), pos(c0, r + 1, -zf)], uv);
            let v_mid = v_at(r as f64 + 0.5);
            for (x, cell) in [(c0, c0), (c1, c1 - 1)] {
                let u = u_at(cell as f64 + 0.5);
                b.quad([pos(x, r, -zf), pos(x, r, zf), pos(x, r + 1, zf), pos(x, r + 1, -zf)], [[u, v_mid]; 4]);
            }
        }
    }
    // horizontal walls between rows b-1 and b
    for bnd in 0..=gh {
        let mut c = 0;
        while c < gw {
            let side = |c: usize| -> Option<usize> {
                let above = bnd > 0 && occ[bnd - 1][c];
                let below = bnd < gh && occ[bnd][c];
                match (above, below) {
                    (true, false) => Some(bnd - 1),
                    (false, true) => Some(bnd),
                    _ => None,
                }
            };
            let Some(row) = side(c) else {
                c += 1;
                continue;
            };
            let c0 = c;
            while c < gw && side(c) == Some(row) {
                c += 1;
            }
            let v = v_at(row as f64 + 0.5);
            b.quad(
                [pos(c0, bnd, -zf), pos(c, bnd, -zf), pos(c, bnd, zf), pos(c0, bnd, zf)],
                [[u_at(c0 as f64), v], [u_at(c as f64), v], [u_at(c as f64), v], [u_at(c0 as f64), v]],
            );
        }
    }
    Ok(b.finish())
}

/// Sphere of diameter 1 with front-projected UVs.
fn uv_sphere(segments: u32, rings: u32) -> TriMesh {
    let mut positions = Vec::new();
    let mut uvs = Vec::new();
    for r in 0..=rings {
        let theta = std::f64::consts::PI * r as f64 / rings as f64;
        for s in 0..=segments {
            let phi = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
            let p = [0.5 * theta.sin() * phi.cos(), 0.5 * theta.cos(), 0.5 * theta.sin() * phi.sin()];
            positions.push(p.map(|c| c as f32));
            uvs.push([(p[0] + 0.5) as f32, (p[1] + 0.5) as f32]);
        }
    }
    let stride = segments + 1;
    let mut indices = Vec::new();
    for r in 0..rings {
        for s in 0..segments {
            let a = r * stride + s;
            let b = a + stride;
            if r != 0 {
                indices.push([a, b, a + 1]);
            }
            if r != rings - 1 {
                indices.push([a + 1, b, b + 1]);
            }
        }
    }
    TriMesh { positions, normals: None, uvs: Some(uvs), indices }
}

/// 1 × 1 × 0.5 box with front-projected UVs.
fn slab_box() -> TriMesh {
    let mut b = Builder::default();
    let (x, y, z) = (0.5f32, 0.5f32, 0.25f32);
    let uv = |p: [f32; 3]| [p[0] + 0.5, p[1] + 0.5];
    let faces = [
        [[-x, -y, z], [x, -y, z], [x, y, z], [-x, y, z]],
        [[x, -y, -z], [-x, -y, -z], [-x, y, -z], [x, y, -z]],
        [[-x, -y, -z], [-x, -y, z], [-x, y, z], [-x, y, -z]],
        [[x, -y, z], [x, -y, -z], [x, y, -z], [x, y, z]],
        [[-x, y, z], [x, y, z], [x, y, -z], [-x, y, -z]],
        [[-x, -y, -z], [x, -y, -z], [x, -y, z], [-x, -y, z]],
    ];
    for f in faces {
        b.quad(f, f.map(uv));
    }
    b.finish()
}
