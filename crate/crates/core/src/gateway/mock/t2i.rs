use image::{Rgba, RgbaImage};

use super::concepts::{concept_color, text_concepts};
use super::stable_hash;
use crate::error::Result;
use crate::gateway::T2iBackend;
use crate::idea::ImageAsset;

/// Paints one centered shape on a white background, filled with horizontal
/// bands in the colors of the concepts named by the prompt (gray when none).
/// The shape and its size depend on the prompt hash and seed.
#[derive(Debug, Clone)]
pub struct ConceptT2i {
    pub size: u32,
}

impl Default for ConceptT2i {
    fn default() -> Self {
        Self { size: 256 }
    }
}

impl ConceptT2i {
    pub fn render(&self, prompt: &str, seed: u64) -> RgbaImage {
        let h = stable_hash(&[prompt.as_bytes(), &seed.to_le_bytes()]);
        let s = self.size as f64;
        let radius = s * (0.28 + 0.1 * ((h >> 8) % 100) as f64 / 100.0);
        let (rx, ry) = match h % 3 {
            0 => (radius, radius),
            1 => (radius, radius * 0.7),
            _ => (radius * 0.8, radius * 0.8),
        };
        let square = h % 3 == 2;
        let concepts = text_concepts(prompt);
        let gray = 60 + ((h >> 24) % 120) as u8;
        let (cx, cy) = (s / 2.0, s / 2.0);
        RgbaImage::from_fn(self.size, self.size, |x, y| {
            let dx = (x as f64 + 0.5 - cx) / rx;
            let dy = (y as f64 + 0.5 - cy) / ry;
            let inside = if square { dx.abs() <= 1.0 && dy.abs() <= 1.0 } else { dx * dx + dy * dy <= 1.0 };
            if !inside {
                return Rgba([255, 255, 255, 255]);
            }
            if concepts.is_empty() {
                return Rgba([gray, gray, gray, 255]);
            }
            let t = ((dy + 1.0) / 2.0).clamp(0.0, 0.999_999);
            concept_color(concepts[(t * concepts.len() as f64) as usize])
        })
    }
}

impl T2iBackend for ConceptT2i {
    fn generate(&self, prompt: &str, n_images: u32, seed: u64) -> Result<Vec<ImageAsset>> {
        Ok((0..n_images as u64)
            .map(|k| {
                let s = seed.wrapping_add(k);
                ImageAsset::new(
                    format!("t2i-{:016x}", stable_hash(&[prompt.as_bytes(), &s.to_le_bytes()])),
                    self.render(prompt, s),
                )
            })
            .collect())
    }
}
