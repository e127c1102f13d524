//! Mesh ingestion (OBJ + MTL, binary glTF), export, and content digests.
//!
//! Internal UV convention follows OBJ: `v = 0` is the bottom row of the
//! texture. Binary glTF uses a top-left origin, so the exported texture is
//! stored flipped vertically while UVs are written unchanged; the importer
//! flips it back. This keeps export/import bit-exact.

use std::borrow::Cow;
use std::fmt::Write as _;
use std::path::Path;

use image::{imageops, RgbaImage};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::codec::encode_png;
use crate::error::{Error, Result};
use crate::idea::{MeshAsset, TriMesh};

/// Load a mesh by file extension: `.obj` or `.glb`.
pub fn load_mesh(path: &Path) -> Result<MeshAsset> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("mesh").to_string();
    let mut mesh = match ext.as_deref() {
        Some("obj") => load_obj(path)?,
        Some("glb") => {
            let bytes = std::fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            read_glb(&bytes)?
        }
        _ => return Err(Error::MeshFormat(format!("unsupported mesh file {}", path.display()))),
    };
    mesh.id = id;
    mesh.validate()?;
    Ok(mesh)
}

fn obj_options() -> tobj::LoadOptions {
    tobj::LoadOptions { triangulate: true, single_index: true, ..Default::default() }
}

fn load_obj(path: &Path) -> Result<MeshAsset> {
    let (models, materials) =
        tobj::load_obj(path, &obj_options()).map_err(|e| Error::MeshFormat(format!("{}: {e}", path.display())))?;
    let (geometry, material_id) = assemble_obj(&models);
    let texture = match (materials, material_id) {
        (Ok(mats), Some(idx)) => match mats.get(idx).and_then(|m| m.diffuse_texture.clone()) {
            Some(tex) => {
                let tex_path = path.parent().unwrap_or(Path::new(".")).join(tex.trim());
                let img = image::open(&tex_path).map_err(|e| Error::Io(format!("{}: {e}", tex_path.display())))?;
                Some(img.to_rgba8())
            }
            None => None,
        },
        _ => None,
    };
    Ok(MeshAsset { id: String::new(), geometry, texture, source_path: None })
}

fn assemble_obj(models: &[tobj::Model]) -> (TriMesh, Option<usize>) {
    let mut geom = TriMesh::default();
    let mut normals = Vec::new();
    let mut uvs = Vec::new();
    let mut all_have_normals = true;
    let mut all_have_uvs = true;
    let mut material_id = None;
    for model in models {
        let m = &model.mesh;
        let base = geom.positions.len() as u32;
        let n = m.positions.len() / 3;
        geom.positions.extend(m.positions.chunks_exact(3).map(|c| [c[0], c[1], c[2]]));
        if m.normals.len() == n * 3 {
            normals.extend(m.normals.chunks_exact(3).map(|c| [c[0], c[1], c[2]]));
        } else {
            all_have_normals = false;
        }
        if m.texcoords.len() == n * 2 {
            uvs.extend(m.texcoords.chunks_exact(2).map(|c| [c[0], c[1]]));
        } else {
            all_have_uvs = false;
        }
        geom.indices.extend(m.indices.chunks_exact(3).map(|c| [c[0] + base, c[1] + base, c[2] + base]));
        material_id = material_id.or(m.material_id);
    }
    if all_have_normals && !normals.is_empty() {
        geom.normals = Some(normals);
    }
    if all_have_uvs && !uvs.is_empty() {
        geom.uvs = Some(uvs);
    }
    (geom, material_id)
}

/// Parse a binary glTF; all primitives of all meshes are merged, node
/// transforms are ignored, and the first base-color texture is kept.
pub fn read_glb(bytes: &[u8]) -> Result<MeshAsset> {
    let (doc, buffers, images) = gltf::import_slice(bytes).map_err(|e| Error::MeshFormat(format!("glb: {e}")))?;
    let mut geom = TriMesh::default();
    let mut normals = Vec::new();
    let mut uvs = Vec::new();
    let mut all_have_normals = true;
    let mut all_have_uvs = true;
    let mut texture_index = None;
    for mesh in doc.meshes() {
        for prim in mesh.primitives() {
            if prim.mode() != gltf::mesh::Mode::Triangles {
                continue;
            }
            let reader = prim.reader(|b| buffers.get(b.index()).map(|d| &d.0[..]));
            let positions: Vec<[f32; 3]> = reader
                .read_positions()
                .ok_or_else(|| Error::MeshFormat("primitive without positions".into()))?
                .collect();
            let base = geom.positions.len() as u32;
            let n = positions.len() as u32;
            match reader.read_normals() {
                Some(it) => normals.extend(it),
                None => all_have_normals = false,
            }
            match reader.read_tex_coords(0) {
                Some(it) => uvs.extend(it.into_f32()),
                None => all_have_uvs = false,
            }
            let idx: Vec<u32> = match reader.read_indices() {
                Some(it) => it.into_u32().collect(),
                None => (0..n).collect(),
            };
            geom.indices.extend(idx.chunks_exact(3).map(|c| [c[0] + base, c[1] + base, c[2] + base]));
            geom.positions.extend(positions);
            if texture_index.is_none() {
                texture_index =
                    prim.material().pbr_metallic_roughness().base_color_texture().map(|t| t.texture().source().index());
            }
        }
    }
    if all_have_normals && normals.len() == geom.positions.len() && !normals.is_empty() {
        geom.normals = Some(normals);
    }
    if all_have_uvs && uvs.len() == geom.positions.len() && !uvs.is_empty() {
        geom.uvs = Some(uvs);
    }
    let texture = match texture_index.and_then(|i| images.get(i)) {
        Some(data) => Some(imageops::flip_vertical(&gltf_image_to_rgba(data)?)),
        None => None,
    };
    Ok(MeshAsset { id: String::new(), geometry: geom, texture, source_path: None })
}

fn gltf_image_to_rgba(data: &gltf::image::Data) -> Result<RgbaImage> {
    use gltf::image::Format;
    let px: Cow<'_, [u8]> = match data.format {
        Format::R8G8B8A8 => Cow::Borrowed(&data.pixels),
        Format::R8G8B8 => Cow::Owned(data.pixels.chunks_exact(3).flat_map(|c| [c[0], c[1], c[2], 255]).collect()),
        Format::R8 => Cow::Owned(data.pixels.iter().flat_map(|&v| [v, v, v, 255]).collect()),
        Format::R8G8 => Cow::Owned(data.pixels.chunks_exact(2).flat_map(|c| [c[0], c[0], c[0], c[1]]).collect()),
        other => return Err(Error::MeshFormat(format!("unsupported texture format {other:?}"))),
    };
    RgbaImage::from_raw(data.width, data.height, px.into_owned())
        .ok_or_else(|| Error::MeshFormat("texture size mismatch".into()))
}

fn push_aligned(bin: &mut Vec<u8>, data: &[u8]) -> (usize, usize) {
    while !bin.len().is_multiple_of(4) {
        bin.push(0);
    }
    let offset = bin.len();
    bin.extend_from_slice(data);
    (offset, data.len())
}

fn f32_bytes<const N: usize>(v: &[[f32; N]]) -> Vec<u8> {
    v.iter().flatten().flat_map(|f| f.to_le_bytes()).collect()
}

/// Serialize a mesh as a single-primitive binary glTF.
pub fn write_glb(mesh: &MeshAsset) -> Vec<u8> {
    let g = &mesh.geometry;
    let mut bin = Vec::new();
    let mut views = Vec::new();
    let mut accessors = Vec::new();
    let mut attributes = serde_json::Map::new();

    let (lo, hi) = g.bounds().unwrap_or(([0.0; 3], [0.0; 3]));
    let (off, len) = push_aligned(&mut bin, &f32_bytes(&g.positions));
    views.push(json!({"buffer": 0, "byteOffset": off, "byteLength": len, "target": 34962}));
    accessors.push(json!({
        "bufferView": views.len() - 1, "componentType": 5126, "count": g.positions.len(), "type": "VEC3",
        "min": lo.map(|v| v as f32), "max": hi.map(|v| v as f32),
    }));
    attributes.insert("POSITION".into(), json!(accessors.len() - 1));

    if let Some(normals) = &g.normals {
        let (off, len) = push_aligned(&mut bin, &f32_bytes(normals));
        views.push(json!({"buffer": 0, "byteOffset": off, "byteLength": len, "target": 34962}));
        accessors.push(
            json!({"bufferView": views.len() - 1, "componentType": 5126, "count": normals.len(), "type": "VEC3"}),
        );
        attributes.insert("NORMAL".into(), json!(accessors.len() - 1));
    }
    if let Some(uvs) = &g.uvs {
        let (off, len) = push_aligned(&mut bin, &f32_bytes(uvs));
        views.push(json!({"buffer": 0, "byteOffset": off, "byteLength": len, "target": 34962}));
        accessors
            .push(json!({"bufferView": views.len() - 1, "componentType": 5126, "count": uvs.len(), "type": "VEC2"}));
        attributes.insert("TEXCOORD_0".into(), json!(accessors.len() - 1));
    }
    let idx: Vec<u8> = g.indices.iter().flatten().flat_map(|i| i.to_le_bytes()).collect();
    let (off, len) = push_aligned(&mut bin, &idx);
    views.push(json!({"buffer": 0, "byteOffset": off, "byteLength": len, "target": 34963}));
    accessors.push(
        json!({"bufferView": views.len() - 1, "componentType": 5125, "count": g.indices.len() * 3, "type": "SCALAR"}),
    );
    let index_accessor = accessors.len() - 1;

    let mut root = json!({
        "asset": {"version": "2.0", "generator": "idea23d"},
        "scene": 0,
        "scenes": [{"nodes": [0]}],
        "nodes": [{"mesh": 0, "name": mesh.id}],
        "meshes": [{"name": mesh.id, "primitives": [{"attributes": attributes, "indices": index_accessor, "mode": 4, "material": 0}]}],
        "materials": [{"pbrMetallicRoughness": {"metallicFactor": 0.0, "roughnessFactor": 1.0}, "doubleSided": true}],
    });
    if let Some(tex) = &mesh.texture {
        let png = encode_png(&imageops::flip_vertical(tex));
        let (off, len) = push_aligned(&mut bin, &png);
        views.push(json!({"buffer": 0, "byteOffset": off, "byteLength": len}));
        root["images"] = json!([{"bufferView": views.len() - 1, "mimeType": "image/png"}]);
        root["samplers"] = json!([{"magFilter": 9728, "minFilter": 9728, "wrapS": 10497, "wrapT": 10497}]);
        root["textures"] = json!([{"sampler": 0, "source": 0}]);
        root["materials"][0]["pbrMetallicRoughness"]["baseColorTexture"] = json!({"index": 0});
    }
    while !bin.len().is_multiple_of(4) {
        bin.push(0);
    }
    root["buffers"] = json!([{"byteLength": bin.len()}]);
    root["bufferViews"] = json!(views);
    root["accessors"] = json!(accessors);

    let mut json_bytes = serde_json::to_vec(&root).expect("glTF json");
    while !json_bytes.len().is_multiple_of(4) {
        json_bytes.push(b' ');
    }
    let total = 12 + 8 + json_bytes.len() + 8 + bin.len();
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(b"glTF");
    out.extend_from_slice(&2u32.to_le_bytes());
    out.extend_from_slice(&(total as u32).to_le_bytes());
    out.extend_from_slice(&(json_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(b"JSON");
    out.extend_from_slice(&json_bytes);
    out.extend_from_slice(&(bin.len() as u32).to_le_bytes());
    out.extend_from_slice(b"BIN\0");
    out.extend_from_slice(&bin);
    out
}

/// Write `<stem>.obj`, `<stem>.mtl` and, when textured, `<stem>_diffuse.png`.
pub fn write_obj(mesh: &MeshAsset, dir: &Path, stem: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let g = &mesh.geometry;
    let mut obj = String::new();
    let _ = writeln!(obj, "mtllib {stem}.mtl");
    let _ = writeln!(obj, "o {}", if mesh.id.is_empty() { stem } else { &mesh.id });
    for p in &g.positions {
        let _ = writeln!(obj, "v {} {} {}", p[0], p[1], p[2]);
    }
    if let Some(uvs) = &g.uvs {
        for t in uvs {
            let _ = writeln!(obj, "vt {} {}", t[0], t[1]);
        }
    }
    if let Some(normals) = &g.normals {
        for n in normals {
            let _ = writeln!(obj, "vn {} {} {}", n[0], n[1], n[2]);
        }
    }
    let _ = writeln!(obj, "usemtl material0");
    let has_uv = g.uvs.is_some();
    let has_n = g.normals.is_some();
    for tri in &g.indices {
        obj.push('f');
        for &i in tri {
            let i = i + 1;
            match (has_uv, has_n) {
                (true, true) => write!(obj, " {i}/{i}/{i}"),
                (true, false) => write!(obj, " {i}/{i}"),
                (false, true) => write!(obj, " {i}//{i}"),
                (false, false) => write!(obj, " {i}"),
            }
            .expect("write to string");
        }
        obj.push('\n');
    }
    let mut mtl = String::from("newmtl material0\nKd 1 1 1\n");
    if let Some(tex) = &mesh.texture {
        let name = format!("{stem}_diffuse.png");
        std::fs::write(dir.join(&name), encode_png(tex))?;
        let _ = writeln!(mtl, "map_Kd {name}");
    }
    std::fs::write(dir.join(format!("{stem}.obj")), obj)?;
    std::fs::write(dir.join(format!("{stem}.mtl")), mtl)?;
    Ok(())
}

/// Decode a mesh transported as bytes with a declared media type.
pub fn decode_mesh(media_type: &str, bytes: &[u8]) -> Result<MeshAsset> {
    match media_type {
        "model/gltf-binary" => read_glb(bytes),
        "model/obj" => {
            let mut reader = std::io::Cursor::new(bytes);
            let (models, _) = tobj::load_obj_buf(&mut reader, &obj_options(), |_| Err(tobj::LoadError::OpenFileFailed))
                .map_err(|e| Error::MeshFormat(format!("obj: {e}")))?;
            let (geometry, _) = assemble_obj(&models);
            Ok(MeshAsset { id: String::new(), geometry, texture: None, source_path: None })
        }
        other => Err(Error::MeshFormat(format!("unsupported media type {other}"))),
    }
}

pub fn content_hash(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

/// Digest of a mesh's canonical form: vertices reordered by first use in
/// the index buffer, unreferenced vertices dropped, raw texture bytes.
/// Export/import through OBJ or binary glTF leaves it unchanged.
pub fn mesh_digest(mesh: &MeshAsset) -> [u8; 32] {
    let g = &mesh.geometry;
    let mut remap = vec![u32::MAX; g.positions.len()];
    let mut order = Vec::with_capacity(g.positions.len());
    let mut indices = Vec::with_capacity(g.indices.len() * 3);
    for &i in g.indices.iter().flatten() {
        let slot = &mut remap[i as usize];
        if *slot == u32::MAX {
            *slot = order.len() as u32;
            order.push(i as usize);
        }
        indices.push(*slot);
    }
    let mut h = Sha256::new();
    h.update(b"idea23d-mesh-v1");
    h.update((order.len() as u64).to_le_bytes());
    for &v in &order {
        for c in g.positions[v] {
            h.update(c.to_le_bytes());
        }
    }
    match &g.normals {
        Some(n) => {
            h.update([1u8]);
            order.iter().flat_map(|&v| n[v]).for_each(|c| h.update(c.to_le_bytes()));
        }
        None => h.update([0u8]),
    }
    match &g.uvs {
        Some(t) => {
            h.update([1u8]);
            order.iter().flat_map(|&v| t[v]).for_each(|c| h.update(c.to_le_bytes()));
        }
        None => h.update([0u8]),
    }
    h.update((indices.len() as u64).to_le_bytes());
    indices.iter().for_each(|i| h.update(i.to_le_bytes()));
    match &mesh.texture {
        Some(t) => {
            h.update([1u8]);
            h.update(t.width().to_le_bytes());
            h.update(t.height().to_le_bytes());
            h.update(t.as_raw());
        }
        None => h.update([0u8]),
    }
    h.finalize().into()
}
