//! Deterministic stand-ins for every backend role.
//!
//! The mocks share the hue-coded vocabulary in [`concepts`]: generated
//! images paint prompt concepts in their hues, meshes carry those images as
//! textures, the embedder scores hue content against concept words, and the
//! procedural LMM "sees" concepts the same way. [`ScriptedLmm`] replays
//! fixed transcripts for control-flow tests.

pub mod concepts;
mod embed;
mod i23d;
mod lmm;
mod t2i;

use sha2::{Digest, Sha256};

pub use embed::ConceptEmbedder;
pub use i23d::{extrude_silhouette, ExtrudeI23d, I23dShape};
pub use lmm::{ConceptLmm, ScriptedLmm};
pub use t2i::ConceptT2i;

/// First 8 bytes of SHA-256 over the concatenated parts.
pub fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}
