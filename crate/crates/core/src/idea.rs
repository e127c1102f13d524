//! Multimodal input and intermediate data model.
//!
//! An [`Idea`] bundles ordered text directives with image and mesh assets.
//! [`AugmentedIdea`] is the same idea after every mesh has been rendered into
//! its six canonical views, and [`DraftModel`] is one candidate produced by
//! the text-to-3D chain.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use image::RgbaImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::{ViewName, ViewSet};

/// An 8-bit RGBA raster with a stable id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageAsset {
    pub id: String,
    #[serde(with = "crate::codec::png_b64")]
    pub pixels: RgbaImage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_path: Option<PathBuf>,
}

impl ImageAsset {
    pub fn new(id: impl Into<String>, pixels: RgbaImage) -> Self {
        Self { id: id.into(), pixels, source_path: None }
    }

    /// Load any supported raster and normalize it to 8-bit RGBA.
    pub fn load(id: impl Into<String>, path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?.to_rgba8();
        Ok(Self { id: id.into(), pixels: img, source_path: Some(path.to_path_buf()) })
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    pub fn has_foreground(&self) -> bool {
        self.pixels.pixels().any(|p| p[3] > 0)
    }
}

/// Indexed triangle mesh in model units.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TriMesh {
    pub positions: Vec<[f32; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normals: Option<Vec<[f32; 3]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uvs: Option<Vec<[f32; 2]>>,
    pub indices: Vec<[u32; 3]>,
}

impl TriMesh {
    /// Axis-aligned bounds as (min, max), or `None` for an empty mesh.
    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        let mut it = self.positions.iter();
        let first = it.next()?;
        let mut lo = first.map(f64::from);
        let mut hi = lo;
        for p in it {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k] as f64);
                hi[k] = hi[k].max(p[k] as f64);
            }
        }
        Some((lo, hi))
    }
}

/// A 3D model asset: geometry plus an optional diffuse texture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshAsset {
    pub id: String,
    pub geometry: TriMesh,
    #[serde(default, with = "crate::codec::opt_png_b64", skip_serializing_if = "Option::is_none")]
    pub texture: Option<RgbaImage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_path: Option<PathBuf>,
}

impl MeshAsset {
    pub fn new(id: impl Into<String>, geometry: TriMesh) -> Self {
        Self { id: id.into(), geometry, texture: None, source_path: None }
    }

    pub fn with_texture(mut self, texture: RgbaImage) -> Self {
        self.texture = Some(texture);
        self
    }

    /// Load an OBJ (with optional MTL diffuse texture) or binary glTF file.
    pub fn load(id: impl Into<String>, path: &Path) -> Result<Self> {
        let mut mesh = crate::mesh_io::load_mesh(path)?;
        mesh.id = id.into();
        mesh.source_path = Some(path.to_path_buf());
        Ok(mesh)
    }

    /// Every violated mesh invariant, as human-readable strings.
    pub fn violations(&self) -> Vec<String> {
        let g = &self.geometry;
        let mut out = Vec::new();
        if g.indices.is_empty() {
            out.push(format!("mesh {} has no triangles", self.id));
        }
        let n = g.positions.len() as u32;
        if g.indices.iter().flatten().any(|&i| i >= n) {
            out.push(format!("mesh {} has an index out of range", self.id));
        }
        if g.positions.iter().flatten().any(|c| !c.is_finite()) {
            out.push(format!("mesh {} has a non-finite position", self.id));
        }
        if g.normals.as_ref().is_some_and(|v| v.len() != g.positions.len()) {
            out.push(format!("mesh {} normal count differs from vertex count", self.id));
        }
        if g.uvs.as_ref().is_some_and(|v| v.len() != g.positions.len()) {
            out.push(format!("mesh {} uv count differs from vertex count", self.id));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            None => Ok(()),
            Some(v) => Err(Error::InvalidInput(v)),
        }
    }
}

/// The user's multimodal design intent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Idea {
    #[serde(default)]
    pub text_directives: Vec<String>,
    #[serde(default)]
    pub image_assets: Vec<ImageAsset>,
    #[serde(default)]
    pub mesh_assets: Vec<MeshAsset>,
}

/// One violated [`Idea`] invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    AllComponentsEmpty,
    DuplicateAssetId(String),
    EmptyImage(String),
    InvalidMesh(String),
    UnknownAssetReference(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::AllComponentsEmpty => write!(f, "all components empty"),
            Violation::DuplicateAssetId(id) => write!(f, "duplicate asset id {id}"),
            Violation::EmptyImage(id) => write!(f, "image {id} has zero width or height"),
            Violation::InvalidMesh(msg) => f.write_str(msg),
            Violation::UnknownAssetReference(id) => write!(f, "text references unknown asset {id}"),
        }
    }
}

const ASSET_TOKEN_OPEN: &str = "<asset:";

/// Asset ids referenced by `<asset:ID>` tokens, in order of appearance.
pub fn asset_references(text: &str) -> Vec<&str> {
    let mut refs = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find(ASSET_TOKEN_OPEN) {
        let after = &rest[start + ASSET_TOKEN_OPEN.len()..];
        match after.find('>') {
            Some(end) => {
                refs.push(&after[..end]);
                rest = &after[end + 1..];
            }
            None => break,
        }
    }
    refs
}

/// Replace every `<asset:ID>` token using `f`; unknown ids are left as-is.
pub fn substitute_asset_tokens(text: &str, mut f: impl FnMut(&str) -> Option<String>) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find(ASSET_TOKEN_OPEN) {
        out.push_str(&rest[..start]);
        let after = &rest[start + ASSET_TOKEN_OPEN.len()..];
        let Some(end) = after.find('>') else {
            out.push_str(&rest[start..]);
            return out;
        };
        let id = &after[..end];
        match f(id) {
            Some(rep) => out.push_str(&rep),
            None => out.push_str(&rest[start..start + ASSET_TOKEN_OPEN.len() + end + 1]),
        }
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    out
}

impl Idea {
    pub fn from_text(text: impl Into<String>) -> Self {
        Self { text_directives: vec![text.into()], ..Default::default() }
    }

    pub fn is_empty(&self) -> bool {
        self.text_directives.is_empty() && self.image_assets.is_empty() && self.mesh_assets.is_empty()
    }

    fn asset_ids(&self) -> impl Iterator<Item = &str> {
        self.image_assets.iter().map(|a| a.id.as_str()).chain(self.mesh_assets.iter().map(|m| m.id.as_str()))
    }

    /// Text directives with asset tokens removed, joined by newlines.
    pub fn plain_text(&self) -> String {
        self.text_directives
            .iter()
            .map(|t| substitute_asset_tokens(t, |_| Some(String::new())))
            .map(|t| t.split_whitespace().collect::<Vec<_>>().join(" "))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Load an idea manifest; asset paths resolve relative to the manifest.
    pub fn load_manifest(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let manifest: IdeaManifest =
            serde_json::from_str(&raw).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        manifest.resolve(base)
    }
}

/// Reference to an asset file inside a manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetRef {
    pub id: String,
    pub path: PathBuf,
}

/// On-disk form of an [`Idea`].
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IdeaManifest {
    #[serde(default)]
    pub text: Vec<String>,
    #[serde(default)]
    pub images: Vec<AssetRef>,
    #[serde(default)]
    pub meshes: Vec<AssetRef>,
}

impl IdeaManifest {
    pub fn resolve(&self, base: &Path) -> Result<Idea> {
        let images = self
            .images
            .iter()
            .map(|a| ImageAsset::load(a.id.clone(), &base.join(&a.path)))
            .collect::<Result<Vec<_>>>()?;
        let meshes = self
            .meshes
            .iter()
            .map(|a| MeshAsset::load(a.id.clone(), &base.join(&a.path)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Idea { text_directives: self.text.clone(), image_assets: images, mesh_assets: meshes })
    }

    /// First referenced file that does not exist.
    pub fn missing_file(&self, base: &Path) -> Option<PathBuf> {
        self.images.iter().chain(&self.meshes).map(|a| base.join(&a.path)).find(|p| !p.is_file())
    }
}

/// Every invariant violation of `idea`; empty means valid.
pub fn validate_idea(idea: &Idea) -> Vec<Violation> {
    let mut out = Vec::new();
    if idea.is_empty() {
        out.push(Violation::AllComponentsEmpty);
    }
    let mut seen = HashSet::new();
    let mut reported = HashSet::new();
    for id in idea.asset_ids() {
        if !seen.insert(id) && reported.insert(id) {
            out.push(Violation::DuplicateAssetId(id.to_string()));
        }
    }
    for img in &idea.image_assets {
        if img.width() == 0 || img.height() == 0 {
            out.push(Violation::EmptyImage(img.id.clone()));
        }
    }
    for mesh in &idea.mesh_assets {
        out.extend(mesh.violations().into_iter().map(Violation::InvalidMesh));
    }
    for text in &idea.text_directives {
        for r in asset_references(text) {
            if !seen.contains(r) {
                out.push(Violation::UnknownAssetReference(r.to_string()));
            }
        }
    }
    out
}

/// Origin of a rendered view inside an [`AugmentedIdea`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewOrigin {
    pub mesh_id: String,
    pub view: ViewName,
}

/// Text plus original images followed by every mesh's rendered views.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedIdea {
    pub text_directives: Vec<String>,
    pub images: Vec<ImageAsset>,
    pub view_provenance: BTreeMap<String, ViewOrigin>,
}

impl AugmentedIdea {
    /// Image id used for a rendered view of `mesh_id`.
    pub fn view_image_id(mesh_id: &str, view: ViewName) -> String {
        format!("{mesh_id}#{}", view.as_str())
    }

    pub fn new(idea: &Idea, rendered: Vec<(String, ViewSet)>) -> Self {
        let mut images = idea.image_assets.clone();
        let mut provenance = BTreeMap::new();
        for (mesh_id, views) in rendered {
            for (name, img) in views.into_views() {
                let id = Self::view_image_id(&mesh_id, name);
                provenance.insert(id.clone(), ViewOrigin { mesh_id: mesh_id.clone(), view: name });
                images.push(ImageAsset { id, ..img });
            }
        }
        Self { text_directives: idea.text_directives.clone(), images, view_provenance: provenance }
    }

    pub fn is_rendered_view(&self, image_id: &str) -> bool {
        self.view_provenance.contains_key(image_id)
    }

    /// Text directives joined with newlines, asset tokens replaced by the
    /// 1-based attachment positions of the images they denote.
    pub fn idea_text(&self) -> String {
        let position = |id: &str| -> Option<String> {
            if let Some(i) = self.images.iter().position(|img| img.id == id) {
                return Some(format!("[image {}]", i + 1));
            }
            let views: Vec<usize> = self
                .images
                .iter()
                .enumerate()
                .filter(|(_, img)| self.view_provenance.get(&img.id).is_some_and(|o| o.mesh_id == id))
                .map(|(i, _)| i + 1)
                .collect();
            match (views.first(), views.last()) {
                (Some(a), Some(b)) => Some(format!("[3D model shown in images {a}-{b}]")),
                _ => None,
            }
        };
        self.text_directives.iter().map(|t| substitute_asset_tokens(t, position)).collect::<Vec<_>>().join("\n")
    }
}

/// One candidate 3D model with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct DraftModel {
    pub draft_id: String,
    pub prompt: String,
    pub gen_image: ImageAsset,
    pub fg_image: ImageAsset,
    pub mesh: MeshAsset,
    pub views: ViewSet,
    pub iteration: u32,
}
