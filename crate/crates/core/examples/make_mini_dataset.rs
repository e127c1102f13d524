//! Writes the 12-case miniature evaluation dataset.
//!
//! Usage: `cargo run -p idea23d --example make_mini_dataset -- <out-dir>`
//!
//! Every case combines text with concept-colored images and textured cube
//! meshes, so that the concepts named in the reference caption are only
//! partly stated in the text.

use std::path::{Path, PathBuf};

use idea23d::gateway::mock::concepts::{concept_color, concept_index};
use idea23d::mesh_io::write_obj;
use idea23d::{MeshAsset, TriMesh};
use image::{Rgba, RgbaImage};
use serde_json::{json, Value};

struct Case {
    id: &'static str,
    text: &'static str,
    image: Option<&'static str>,
    mesh: Option<&'static str>,
    gt: &'static str,
    tags: &'static [&'static str],
}

const CASES: [Case; 12] = [
    Case {
        id: "case-01",
        text: "a frog wearing a hat",
        image: None,
        mesh: None,
        gt: "a frog wearing a hat",
        tags: &[],
    },
    Case {
        id: "case-02",
        text: "a rabbit holding <asset:img>",
        image: Some("doughnut"),
        mesh: None,
        gt: "a rabbit holding a doughnut",
        tags: &["composition"],
    },
    Case {
        id: "case-03",
        text: "a teapot shaped like <asset:img>",
        image: Some("banana"),
        mesh: None,
        gt: "a teapot shaped like a banana",
        tags: &["shape", "fusion"],
    },
    Case {
        id: "case-04",
        text: "<asset:img> sitting in a chair",
        image: Some("dragon"),
        mesh: None,
        gt: "a dragon sitting in a chair",
        tags: &["composition", "subject"],
    },
    Case {
        id: "case-05",
        text: "put a hat on <asset:mesh>",
        image: None,
        mesh: Some("rabbit"),
        gt: "a rabbit wearing a hat",
        tags: &["accessory"],
    },
    Case {
        id: "case-06",
        text: "a car in the style of <asset:mesh>",
        image: None,
        mesh: Some("cactus"),
        gt: "a car covered in cactus",
        tags: &["style", "fusion"],
    },
    Case {
        id: "case-07",
        text: "<asset:mesh> with a flower on top",
        image: None,
        mesh: Some("teapot"),
        gt: "a teapot with a flower on top",
        tags: &["composition", "accessory"],
    },
    Case {
        id: "case-08",
        text: "a tree next to <asset:mesh>",
        image: None,
        mesh: Some("chair"),
        gt: "a tree next to a chair",
        tags: &["composition"],
    },
    Case {
        id: "case-09",
        text: "<asset:mesh> holding <asset:img>",
        image: Some("banana"),
        mesh: Some("frog"),
        gt: "a frog holding a banana",
        tags: &["composition", "subject"],
    },
    Case {
        id: "case-10",
        text: "<asset:mesh> painted with <asset:img>",
        image: Some("flower"),
        mesh: Some("car"),
        gt: "a car painted with a flower",
        tags: &["style", "material"],
    },
    Case {
        id: "case-11",
        text: "<asset:mesh> guarding <asset:img>",
        image: Some("doughnut"),
        mesh: Some("dragon"),
        gt: "a dragon guarding a doughnut",
        tags: &["subject"],
    },
    Case {
        id: "case-12",
        text: "<asset:img> growing on <asset:mesh>",
        image: Some("cactus"),
        mesh: Some("tree"),
        gt: "a cactus growing on a tree",
        tags: &["fusion", "shape"],
    },
];

fn color(concept: &str) -> Rgba<u8> {
    concept_color(concept_index(concept).expect("concept in vocabulary"))
}

fn disk_image(concept: &str) -> RgbaImage {
    let c = color(concept);
    RgbaImage::from_fn(64, 64, |x, y| {
        let (dx, dy) = (x as f64 - 31.5, y as f64 - 31.5);
        if dx * dx + dy * dy <= 24.0 * 24.0 {
            c
        } else {
            Rgba([255, 255, 255, 255])
        }
    })
}

/// Cube with every face mapped onto a solid texture of the concept color.
fn textured_cube(id: &str, concept: &str) -> MeshAsset {
    let mut positions = Vec::new();
    let mut uvs = Vec::new();
    let mut indices = Vec::new();
    let faces: [[[f32; 3]; 4]; 6] = [
        [[-0.5, -0.5, 0.5], [0.5, -0.5, 0.5], [0.5, 0.5, 0.5], [-0.5, 0.5, 0.5]],
        [[0.5, -0.5, -0.5], [-0.5, -0.5, -0.5], [-0.5, 0.5, -0.5], [0.5, 0.5, -0.5]],
        [[-0.5, -0.5, -0.5], [-0.5, -0.5, 0.5], [-0.5, 0.5, 0.5], [-0.5, 0.5, -0.5]],
        [[0.5, -0.5, 0.5], [0.5, -0.5, -0.5], [0.5, 0.5, -0.5], [0.5, 0.5, 0.5]],
        [[-0.5, 0.5, 0.5], [0.5, 0.5, 0.5], [0.5, 0.5, -0.5], [-0.5, 0.5, -0.5]],
        [[-0.5, -0.5, -0.5], [0.5, -0.5, -0.5], [0.5, -0.5, 0.5], [-0.5, -0.5, 0.5]],
    ];
    for f in faces {
        let base = positions.len() as u32;
        positions.extend(f);
        uvs.extend([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        indices.push([base, base + 1, base + 2]);
        indices.push([base, base + 2, base + 3]);
    }
    MeshAsset::new(id, TriMesh { positions, normals: None, uvs: Some(uvs), indices })
        .with_texture(RgbaImage::from_pixel(8, 8, color(concept)))
}

fn main() {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data/mini".into()));
    let assets = out.join("assets");
    std::fs::create_dir_all(&assets).expect("create output directory");
    let mut cases: Vec<Value> = Vec::new();
    for c in &CASES {
        let mut images = Vec::new();
        let mut meshes = Vec::new();
        if let Some(concept) = c.image {
            let name = format!("{}-img.png", c.id);
            disk_image(concept).save(assets.join(&name)).expect("write image");
            images.push(json!({"id": "img", "path": Path::new("assets").join(&name)}));
        }
        if let Some(concept) = c.mesh {
            let stem = format!("{}-mesh", c.id);
            write_obj(&textured_cube(&stem, concept), &assets, &stem).expect("write mesh");
            meshes.push(json!({"id": "mesh", "path": Path::new("assets").join(format!("{stem}.obj"))}));
        }
        cases.push(json!({
            "id": c.id,
            "text": [c.text],
            "images": images,
            "meshes": meshes,
            "gt_caption": c.gt,
            "tags": c.tags,
        }));
    }
    let manifest = serde_json::to_string_pretty(&json!({ "cases": cases })).expect("encode manifest");
    std::fs::write(out.join("manifest.json"), manifest + "\n").expect("write manifest");
    println!("wrote {} cases to {}", CASES.len(), out.display());
}
