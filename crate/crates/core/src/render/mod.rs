//! Six-view orthographic rendering of meshes and grid composition.
//!
//! Meshes are normalized (bounding-box center at the origin, largest extent
//! of one) and rasterized once per canonical view. Vertex positions are snapped
//! to a 1/256-pixel grid and coverage uses integer edge functions, so the
//! output is a pure function of the mesh and [`RenderConfig`].

mod compose;
pub mod font;
mod raster;

use std::fmt;
use std::str::FromStr;

use image::RgbaImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::idea::{ImageAsset, MeshAsset};

pub use compose::{compose_draft_lineup, compose_grid_lineup, compose_view_grid, draw_banner, BANNER_HEIGHT};
pub use raster::{normalize_positions, Camera};

/// One of the six canonical camera directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewName {
    Front,
    Back,
    Left,
    Right,
    Top,
    Bottom,
}

impl ViewName {
    pub const ALL: [ViewName; 6] =
        [ViewName::Front, ViewName::Back, ViewName::Left, ViewName::Right, ViewName::Top, ViewName::Bottom];

    /// Views scored by the multiview alignment metric.
    pub const METRIC: [ViewName; 4] = [ViewName::Front, ViewName::Back, ViewName::Left, ViewName::Right];

    pub fn as_str(self) -> &'static str {
        match self {
            ViewName::Front => "front",
            ViewName::Back => "back",
            ViewName::Left => "left",
            ViewName::Right => "right",
            ViewName::Top => "top",
            ViewName::Bottom => "bottom",
        }
    }

    fn index(self) -> usize {
        self as usize
    }

    /// Camera basis: screen-right, screen-up and viewing direction. Each is
    /// a signed world axis, so projections are exact component picks.
    pub fn camera(self) -> Camera {
        use raster::Axis::*;
        match self {
            ViewName::Front => Camera { right: PosX, up: PosY, forward: NegZ },
            ViewName::Back => Camera { right: NegX, up: PosY, forward: PosZ },
            ViewName::Left => Camera { right: PosZ, up: PosY, forward: PosX },
            ViewName::Right => Camera { right: NegZ, up: PosY, forward: NegX },
            ViewName::Top => Camera { right: NegX, up: PosZ, forward: NegY },
            ViewName::Bottom => Camera { right: PosX, up: PosZ, forward: PosY },
        }
    }
}

impl fmt::Display for ViewName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ViewName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ViewName::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown view {s}")))
    }
}

/// Exactly six same-sized renders, one per [`ViewName`].
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    views: [ImageAsset; 6],
}

impl ViewSet {
    /// Build from renders in [`ViewName::ALL`] order.
    pub fn new(views: [ImageAsset; 6]) -> Result<Self> {
        let (w, h) = (views[0].width(), views[0].height());
        if views.iter().any(|v| v.width() != w || v.height() != h) {
            return Err(Error::ResolutionMismatch);
        }
        Ok(Self { views })
    }

    pub fn get(&self, name: ViewName) -> &ImageAsset {
        &self.views[name.index()]
    }

    pub fn resolution(&self) -> (u32, u32) {
        (self.views[0].width(), self.views[0].height())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ViewName, &ImageAsset)> {
        ViewName::ALL.into_iter().zip(self.views.iter())
    }

    pub fn into_views(self) -> impl Iterator<Item = (ViewName, ImageAsset)> {
        ViewName::ALL.into_iter().zip(self.views)
    }
}

fn default_width() -> u32 {
    512
}
fn default_height() -> u32 {
    512
}
fn default_margin() -> f64 {
    0.05
}
fn default_base_color() -> [u8; 3] {
    [200, 200, 200]
}

/// Camera and shading parameters shared by every view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    #[serde(default = "default_width")]
    pub width: u32,
    #[serde(default = "default_height")]
    pub height: u32,
    /// Fraction of the frame left empty on each side of the normalized mesh.
    #[serde(default = "default_margin")]
    pub margin_fraction: f64,
    /// Surface color for untextured meshes.
    #[serde(default = "default_base_color")]
    pub base_color: [u8; 3],
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            width: default_width(),
            height: default_height(),
            margin_fraction: default_margin(),
            base_color: default_base_color(),
        }
    }
}

impl RenderConfig {
    pub fn with_resolution(w: u32, h: u32) -> Self {
        Self { width: w, height: h, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return Err(Error::InvalidInput(format!("render resolution {}x{} below 16x16", self.width, self.height)));
        }
        if !(0.0..0.5).contains(&self.margin_fraction) {
            return Err(Error::InvalidInput(format!("margin_fraction {} outside [0, 0.5)", self.margin_fraction)));
        }
        Ok(())
    }

    /// Pixels per normalized model unit.
    pub fn pixels_per_unit(&self) -> f64 {
        self.width.min(self.height) as f64 * (1.0 - 2.0 * self.margin_fraction)
    }
}

/// Render a single view.
pub fn render_view(mesh: &MeshAsset, view: ViewName, cfg: &RenderConfig) -> Result<RgbaImage> {
    cfg.validate()?;
    mesh.validate()?;
    let normalized = normalize_positions(&mesh.geometry)?;
    Ok(raster::rasterize(mesh, &normalized, view.camera(), cfg))
}

/// Render the six canonical views of `mesh`.
pub fn cm2i(mesh: &MeshAsset, cfg: &RenderConfig) -> Result<ViewSet> {
    cfg.validate()?;
    mesh.validate()?;
    let normalized = normalize_positions(&mesh.geometry)?;
    if mesh.geometry.uvs.is_some() && mesh.texture.is_none() {
        tracing::warn!(mesh = %mesh.id, "mesh has UVs but no texture; rendering flat base color");
    }
    let views = ViewName::ALL.map(|v| {
        let img = raster::rasterize(mesh, &normalized, v.camera(), cfg);
        ImageAsset::new(format!("{}#{}", mesh.id, v.as_str()), img)
    });
    ViewSet::new(views)
}

/// Alpha > 0 mask of an image, row-major.
pub fn silhouette(img: &RgbaImage) -> Vec<bool> {
    img.pixels().map(|p| p[3] > 0).collect()
}
