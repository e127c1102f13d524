mod common;

use common::unit_cube;
use idea23d::render::{compose_grid_lineup, compose_view_grid, render_view, silhouette, ViewName, BANNER_HEIGHT};
use idea23d::{cm2i, MeshAsset, RenderConfig, TriMesh};
use image::{Rgba, RgbaImage};
use proptest::prelude::*;

/// "draft 2" at one cell per glyph pixel; `#` is ink.
const DRAFT_2: [&str; 7] = [
    "....#...............##...#...........###..",
    "....#..............#..#..#..........#...#.",
    ".##.#.#.##...###...#....###.............#.",
    "#..##.##..#.....#.###....#.............#..",
    "#...#.#......####..#.....#............#...",
    "#...#.#.....#...#..#.....#..#........#....",
    ".####.#......####..#......##........#####.",
];
const GLYPH_SCALE: u32 = 2;
const TEXT_X: u32 = 6;
const TEXT_Y: u32 = (BANNER_HEIGHT - 7 * GLYPH_SCALE) / 2;

#[test]
fn grid_cells_equal_standalone_views() {
    let cfg = RenderConfig::with_resolution(64, 48);
    let views = cm2i(&unit_cube("c"), &cfg).unwrap();
    let grid = compose_view_grid(&views);
    assert_eq!((grid.width(), grid.height()), (3 * 64, 2 * (48 + BANNER_HEIGHT)));
    let order = [ViewName::Front, ViewName::Back, ViewName::Left, ViewName::Right, ViewName::Top, ViewName::Bottom];
    for (k, v) in order.into_iter().enumerate() {
        let (col, row) = (k as u32 % 3, k as u32 / 3);
        let y0 = row * (48 + BANNER_HEIGHT) + BANNER_HEIGHT;
        let cell = image::imageops::crop_imm(&grid.pixels, col * 64, y0, 64, 48).to_image();
        assert_eq!(cell, views.get(v).pixels, "{v}");
    }
}

#[test]
fn lineup_banner_matches_golden_glyphs() {
    let grid = RgbaImage::from_pixel(120, 30, Rgba([0, 0, 0, 0]));
    let grids: Vec<_> = (0..3).map(|_| idea23d::ImageAsset::new("g", grid.clone())).collect();
    let lineup = compose_grid_lineup(&grids).unwrap();
    assert_eq!((lineup.width(), lineup.height()), (360, 30 + BANNER_HEIGHT));
    let origin = 2 * 120;
    for (r, line) in DRAFT_2.iter().enumerate() {
        for (c, ch) in line.chars().enumerate() {
            for dy in 0..GLYPH_SCALE {
                for dx in 0..GLYPH_SCALE {
                    let x = origin + TEXT_X + c as u32 * GLYPH_SCALE + dx;
                    let y = TEXT_Y + r as u32 * GLYPH_SCALE + dy;
                    let ink = lineup.pixels.get_pixel(x, y)[0] > 128;
                    assert_eq!(ink, ch == '#', "glyph pixel ({c}, {r})");
                }
            }
        }
    }
}

#[test]
fn silhouettes_stay_out_of_the_margin() {
    let cfg = RenderConfig::default();
    let m = sphere_like();
    let border = (cfg.width as f64 * cfg.margin_fraction).floor() as u32;
    for (v, img) in cm2i(&m, &cfg).unwrap().iter() {
        for (x, y, p) in img.pixels.enumerate_pixels() {
            if p[3] > 0 {
                let inside = (border..cfg.width - border).contains(&x) && (border..cfg.height - border).contains(&y);
                assert!(inside, "{v}: pixel ({x}, {y}) in margin");
            }
        }
    }
}

#[test]
fn uvs_without_texture_render_base_color() {
    let mut m = unit_cube("c");
    m.geometry.uvs = Some(vec![[0.5, 0.5]; 8]);
    let img = render_view(&m, ViewName::Front, &RenderConfig::with_resolution(32, 32)).unwrap();
    let center = img.get_pixel(16, 16);
    assert_eq!(center.0, [200, 200, 200, 255]);
}

#[test]
fn renders_are_deterministic() {
    let cfg = RenderConfig::with_resolution(96, 96);
    let m = sphere_like();
    assert_eq!(cm2i(&m, &cfg).unwrap(), cm2i(&m, &cfg).unwrap());
}

fn sphere_like() -> MeshAsset {
    // octahedron: touches the bounding box on all six sides
    let positions =
        vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, -1.0]];
    let indices = vec![[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4], [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]];
    MeshAsset::new("octa", TriMesh { positions, normals: None, uvs: None, indices })
}

fn mirrored(mask: &[bool], w: usize) -> Vec<bool> {
    mask.chunks(w).flat_map(|row| row.iter().rev().copied()).collect()
}

prop_compose! {
    /// Random triangle soup on a 1/16 grid, so scaled copies stay exact.
    fn soup()(pts in proptest::collection::vec((-16i32..=16, -16i32..=16, -16i32..=16), 3..18)) -> MeshAsset {
        let positions: Vec<[f32; 3]> = pts.iter().map(|&(x, y, z)| [x as f32 / 16.0, y as f32 / 16.0, z as f32 / 16.0]).collect();
        let indices = (0..positions.len() as u32 / 3).map(|t| [3 * t, 3 * t + 1, 3 * t + 2]).collect();
        MeshAsset::new("soup", TriMesh { positions, normals: None, uvs: None, indices })
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn power_of_two_scaling_leaves_renders_unchanged(m in soup(), k in -4i32..=6) {
        prop_assume!(m.geometry.bounds().is_some_and(|(lo, hi)| (0..3).any(|i| hi[i] > lo[i])));
        let cfg = RenderConfig::with_resolution(48, 48);
        let mut scaled = m.clone();
        let s = 2f32.powi(k);
        for p in &mut scaled.geometry.positions {
            *p = p.map(|c| c * s);
        }
        prop_assert_eq!(cm2i(&m, &cfg).unwrap(), cm2i(&scaled, &cfg).unwrap());
    }

    #[test]
    fn opposite_views_have_mirrored_silhouettes(m in soup()) {
        prop_assume!(m.geometry.bounds().is_some_and(|(lo, hi)| (0..3).any(|i| hi[i] > lo[i])));
        let cfg = RenderConfig::with_resolution(48, 40);
        let views = cm2i(&m, &cfg).unwrap();
        for (a, b) in [(ViewName::Front, ViewName::Back), (ViewName::Left, ViewName::Right), (ViewName::Top, ViewName::Bottom)] {
            let sa = silhouette(&views.get(a).pixels);
            prop_assert_eq!(sa, mirrored(&silhouette(&views.get(b).pixels), 48));
        }
    }
}
