//! Iterative multimodal idea to 3D model engine.
//!
//! The pipeline turns an [`Idea`] (text, images, meshes) into a textured
//! mesh by generating text-to-image prompts, building draft models through
//! the text → image → foreground → mesh chain, picking the best draft and
//! refining prompts from feedback. An evaluation harness scores outputs
//! against reference captions.

// Validation checks are written as `!(x > 0.0)` on purpose so NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codec;
pub mod config;
pub mod error;
pub mod eval;
pub mod gateway;
pub mod idea;
pub mod memory;
pub mod mesh_io;
pub mod refine;
pub mod render;
pub mod session;

pub use error::{Error, Result};
pub use idea::{AugmentedIdea, DraftModel, Idea, ImageAsset, MeshAsset, TriMesh};
pub use render::{cm2i, RenderConfig, ViewName, ViewSet};
