//! JSON bodies of the HTTP backend protocol.
//!
//! Each backend is one POST endpoint. Binary payloads travel as base64
//! [`Blob`]s with a declared media type: `image/png`, `model/obj` or
//! `model/gltf-binary`.

use serde::{Deserialize, Serialize};

use crate::codec::{b64_decode, b64_encode, decode_png, encode_png};
use crate::error::{Error, Result};
use crate::idea::{ImageAsset, MeshAsset};
use crate::mesh_io::{decode_mesh, write_glb};

pub const MEDIA_PNG: &str = "image/png";
pub const MEDIA_OBJ: &str = "model/obj";
pub const MEDIA_GLB: &str = "model/gltf-binary";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub media_type: String,
    pub data: String,
}

impl Blob {
    pub fn from_image(img: &ImageAsset) -> Self {
        Self { media_type: MEDIA_PNG.into(), data: b64_encode(&encode_png(&img.pixels)) }
    }

    pub fn from_mesh(mesh: &MeshAsset) -> Self {
        Self { media_type: MEDIA_GLB.into(), data: b64_encode(&write_glb(mesh)) }
    }

    pub fn to_image(&self, id: impl Into<String>) -> Result<ImageAsset> {
        if self.media_type != MEDIA_PNG {
            return Err(Error::BackendContractViolation(format!("expected {MEDIA_PNG}, got {}", self.media_type)));
        }
        Ok(ImageAsset::new(id, decode_png(&b64_decode(&self.data)?)?))
    }

    pub fn to_mesh(&self, id: impl Into<String>) -> Result<MeshAsset> {
        let mut mesh = decode_mesh(&self.media_type, &b64_decode(&self.data)?)?;
        mesh.id = id.into();
        Ok(mesh)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WirePart {
    Text { text: String },
    Image { image: Blob },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmWireRequest {
    pub model: String,
    pub agent: String,
    pub system_prompt: String,
    pub parts: Vec<WirePart>,
    pub max_output_chars: usize,
    pub temperature: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmWireResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T2iWireRequest {
    pub model: String,
    pub prompt: String,
    pub n_images: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T2iWireResponse {
    pub images: Vec<Blob>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct I23dWireRequest {
    pub model: String,
    pub image: Blob,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct I23dWireResponse {
    pub mesh: Blob,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedInput {
    Text { text: String },
    Image { image: Blob },
    Mesh { mesh: Blob },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedWireRequest {
    pub model: String,
    #[serde(flatten)]
    pub input: EmbedInput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedWireResponse {
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatteWireRequest {
    pub model: String,
    pub image: Blob,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatteWireResponse {
    pub image: Blob,
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn embed_request_shape() {
        let r = EmbedWireRequest { model: "m".into(), input: EmbedInput::Text { text: "cat".into() } };
        assert_eq!(serde_json::to_value(&r).unwrap(), json!({"model": "m", "kind": "text", "text": "cat"}));
    }

    #[test]
    fn part_shape() {
        let p = WirePart::Text { text: "hi".into() };
        assert_eq!(serde_json::to_value(&p).unwrap(), json!({"type": "text", "text": "hi"}));
    }

    #[test]
    fn wrong_media_type_rejected() {
        let b = Blob { media_type: "image/jpeg".into(), data: String::new() };
        assert!(b.to_image("x").is_err());
        assert!(b.to_mesh("x").is_err());
    }
}
