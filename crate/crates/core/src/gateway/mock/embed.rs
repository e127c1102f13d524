use super::concepts::{concept_index, hue_histogram, tokens, HueHistogram, N_CONCEPTS};
use super::stable_hash;
use crate::error::{Error, Result};
use crate::gateway::EmbedBackend;
use crate::idea::{ImageAsset, MeshAsset};
use crate::render::{render_view, RenderConfig, ViewName};

const STOPWORDS: &[&str] = &["a", "an", "the", "of", "and", "with", "on", "in", "to", "its", "is", "at", "by", "for"];
const ACHROMATIC_DIM: usize = N_CONCEPTS;
const WORD_WEIGHT: f64 = 0.35;
const ACHROMATIC_WEIGHT: f64 = 0.15;

/// Embedding mock over the concept vocabulary. Dimensions `0..12` hold
/// concept evidence, `12` the share of uncolored surface, and the rest
/// hashed non-concept words. All entries are non-negative, so cosine
/// similarities fall in [0, 1].
#[derive(Debug, Clone)]
pub struct ConceptEmbedder {
    pub dim: usize,
    /// Resolution of the views rendered for mesh embeddings.
    pub mesh_view_px: u32,
}

impl Default for ConceptEmbedder {
    fn default() -> Self {
        Self { dim: 64, mesh_view_px: 96 }
    }
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        let last = v.len() - 1;
        v[last] = 1.0;
        return v;
    }
    v.iter_mut().for_each(|x| *x /= n);
    v
}

impl ConceptEmbedder {
    fn histogram_vector(&self, hist: &HueHistogram) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let chromatic = hist.chromatic() as f64;
        if chromatic > 0.0 {
            for (i, &c) in hist.bins.iter().enumerate() {
                v[i] = c as f64 / chromatic;
            }
        }
        let total = chromatic + hist.achromatic as f64;
        if total > 0.0 {
            v[ACHROMATIC_DIM] = ACHROMATIC_WEIGHT * hist.achromatic as f64 / total;
        }
        normalized(v)
    }
}

impl EmbedBackend for ConceptEmbedder {
    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        if self.dim <= N_CONCEPTS + 1 {
            return Err(Error::Config(format!("embedding dim {} too small", self.dim)));
        }
        let mut v = vec![0.0; self.dim];
        let hashed = self.dim - N_CONCEPTS - 1;
        for t in tokens(text) {
            match concept_index(&t) {
                Some(i) => v[i] += 1.0,
                None if STOPWORDS.contains(&t.as_str()) => {}
                None => {
                    let slot = N_CONCEPTS + 1 + (stable_hash(&[t.as_bytes()]) % hashed as u64) as usize;
                    v[slot] += WORD_WEIGHT;
                }
            }
        }
        Ok(normalized(v))
    }

    fn embed_image(&self, img: &ImageAsset) -> Result<Vec<f64>> {
        Ok(self.histogram_vector(&hue_histogram(&img.pixels)))
    }

    fn embed_mesh(&self, mesh: &MeshAsset) -> Result<Vec<f64>> {
        let cfg = RenderConfig::with_resolution(self.mesh_view_px, self.mesh_view_px);
        let mut hist = HueHistogram::default();
        for v in ViewName::METRIC {
            hist.add(&hue_histogram(&render_view(mesh, v, &cfg)?));
        }
        Ok(self.histogram_vector(&hist))
    }
}
