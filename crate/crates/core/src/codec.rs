//! PNG / base64 helpers shared by persistence and the HTTP wire format.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, ImageEncoder, RgbaImage};

use crate::error::{Error, Result};

/// Lossless PNG tuned for speed: renders are written many times per run.
pub fn encode_png(img: &RgbaImage) -> Vec<u8> {
    let mut buf = Vec::new();
    PngEncoder::new_with_quality(&mut buf, CompressionType::Fast, FilterType::Sub)
        .write_image(img.as_raw(), img.width(), img.height(), ExtendedColorType::Rgba8)
        .expect("png encoding into memory");
    buf
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbaImage> {
    image::load_from_memory(bytes).map(|d| d.to_rgba8()).map_err(|e| Error::InvalidInput(format!("image decode: {e}")))
}

pub fn b64_encode(bytes: &[u8]) -> String {
    STANDARD.encode(bytes)
}

pub fn b64_decode(s: &str) -> Result<Vec<u8>> {
    STANDARD.decode(s).map_err(|e| Error::InvalidInput(format!("base64: {e}")))
}

pub mod png_b64 {
    use image::RgbaImage;
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(img: &RgbaImage, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::b64_encode(&super::encode_png(img)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<RgbaImage, D::Error> {
        let s = String::deserialize(d)?;
        let bytes = super::b64_decode(&s).map_err(de::Error::custom)?;
        super::decode_png(&bytes).map_err(de::Error::custom)
    }
}

pub mod opt_png_b64 {
    use image::RgbaImage;
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(img: &Option<RgbaImage>, s: S) -> Result<S::Ok, S::Error> {
        match img {
            Some(img) => super::png_b64::serialize(img, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<RgbaImage>, D::Error> {
        match Option::<String>::deserialize(d)? {
            None => Ok(None),
            Some(s) => {
                let bytes = super::b64_decode(&s).map_err(de::Error::custom)?;
                super::decode_png(&bytes).map(Some).map_err(de::Error::custom)
            }
        }
    }
}
