#![allow(dead_code)]

use std::sync::Arc;

use idea23d::gateway::mock::{ConceptLmm, ScriptedLmm};
use idea23d::gateway::{AgentRole, BackendPolicy, Gateway, LmmBackend, T2iBackend};
use idea23d::refine::LoopConfig;
use idea23d::{ImageAsset, MeshAsset, RenderConfig, TriMesh};
use image::{Rgba, RgbaImage};

/// Policy without backoff sleeps so retry paths run instantly.
pub fn fast_policy() -> BackendPolicy {
    BackendPolicy { backoff_base_s: 0.0, timeout_s: 30.0, ..BackendPolicy::default() }
}

pub fn gateway_with(lmm: Arc<dyn LmmBackend>) -> Gateway {
    Gateway::builder().lmm(lmm).policy(fast_policy()).build().unwrap()
}

pub fn gateway_with_t2i(lmm: Arc<dyn LmmBackend>, t2i: Arc<dyn T2iBackend>) -> Gateway {
    Gateway::builder().lmm(lmm).t2i(t2i).policy(fast_policy()).build().unwrap()
}

/// Scripted feedback on top of the concept mock for every other role.
pub fn scripted() -> ScriptedLmm {
    ScriptedLmm::new().with_fallback(Arc::new(ConceptLmm))
}

/// Feedback that refines `k - 1` times and then accepts.
pub fn accept_at(k: u32) -> ScriptedLmm {
    let mut s = scripted();
    for _ in 1..k {
        s = s.then(AgentRole::Feedback, "VERDICT: REFINE\nmissing: doughnut");
    }
    s.then(AgentRole::Feedback, "VERDICT: ACCEPT")
}

pub fn never_accept() -> ScriptedLmm {
    scripted().always(AgentRole::Feedback, "VERDICT: REFINE\nmissing: doughnut, hat")
}

/// Loop settings with small renders for fast tests.
pub fn small_cfg() -> LoopConfig {
    LoopConfig { render: RenderConfig::with_resolution(64, 64), seed: 7, ..LoopConfig::default() }
}

pub fn solid_image(id: &str, color: [u8; 3]) -> ImageAsset {
    ImageAsset::new(id, RgbaImage::from_pixel(32, 32, Rgba([color[0], color[1], color[2], 255])))
}

pub fn unit_cube(id: &str) -> MeshAsset {
    let positions = vec![
        [-0.5, -0.5, -0.5],
        [0.5, -0.5, -0.5],
        [0.5, 0.5, -0.5],
        [-0.5, 0.5, -0.5],
        [-0.5, -0.5, 0.5],
        [0.5, -0.5, 0.5],
        [0.5, 0.5, 0.5],
        [-0.5, 0.5, 0.5],
    ];
    let quads = [[0, 3, 2, 1], [4, 5, 6, 7], [0, 4, 7, 3], [1, 2, 6, 5], [3, 7, 6, 2], [0, 1, 5, 4]];
    let indices = quads.iter().flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]).collect();
    MeshAsset::new(id, TriMesh { positions, normals: None, uvs: None, indices })
}
