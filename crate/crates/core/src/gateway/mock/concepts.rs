//! A small visual vocabulary shared by the mock backends.
//!
//! Every concept word owns a hue. Mock image generation paints the concepts
//! named in a prompt with their hues, and mock "perception" recovers the
//! concepts from any raster by counting saturated pixels per hue bin. This
//! gives the mocks a consistent, checkable notion of semantic content.

use image::{Rgba, RgbaImage};

/// Concept words and their hues in degrees (12 bins of 30°).
pub const VOCABULARY: [(&str, f64); 12] = [
    ("rabbit", 0.0),
    ("doughnut", 30.0),
    ("banana", 60.0),
    ("frog", 90.0),
    ("tree", 120.0),
    ("cactus", 150.0),
    ("teapot", 180.0),
    ("car", 210.0),
    ("chair", 240.0),
    ("dragon", 270.0),
    ("flower", 300.0),
    ("hat", 330.0),
];

pub const N_CONCEPTS: usize = VOCABULARY.len();

const MIN_SATURATION: f64 = 0.5;
const MIN_VALUE: f64 = 0.15;
const MIN_PIXELS: u32 = 6;
const MIN_SHARE: f64 = 0.03;

pub fn concept_name(idx: usize) -> &'static str {
    VOCABULARY[idx].0
}

pub fn concept_index(word: &str) -> Option<usize> {
    let w = word.to_ascii_lowercase();
    VOCABULARY.iter().position(|(name, _)| w == *name || w.strip_suffix('s') == Some(name))
}

/// Fully saturated color of a concept.
pub fn concept_color(idx: usize) -> Rgba<u8> {
    let [r, g, b] = hsv_to_rgb(VOCABULARY[idx].1, 1.0, 1.0);
    Rgba([r, g, b, 255])
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = (h.rem_euclid(360.0)) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|ch| ((ch + m) * 255.0).round() as u8)
}

/// (hue degrees, saturation, value) of an 8-bit color.
pub fn rgb_to_hsv(p: [u8; 3]) -> (f64, f64, f64) {
    let [r, g, b] = p.map(|c| c as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        let x = (g - b) / d;
        60.0 * if x < 0.0 { x + 6.0 } else { x }
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

/// Per-concept pixel counts plus the count of opaque achromatic pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HueHistogram {
    pub bins: [u32; N_CONCEPTS],
    pub achromatic: u32,
}

impl HueHistogram {
    pub fn chromatic(&self) -> u32 {
        self.bins.iter().sum()
    }

    pub fn add(&mut self, other: &HueHistogram) {
        for (a, b) in self.bins.iter_mut().zip(other.bins) {
            *a += b;
        }
        self.achromatic += other.achromatic;
    }

    /// Concepts whose share of chromatic pixels is large enough to count.
    pub fn concepts(&self) -> Vec<usize> {
        let total = self.chromatic();
        let min = MIN_PIXELS.max((MIN_SHARE * total as f64).ceil() as u32);
        (0..N_CONCEPTS).filter(|&i| self.bins[i] >= min).collect()
    }
}

pub fn hue_histogram_region(img: &RgbaImage, x0: u32, x1: u32) -> HueHistogram {
    // Neighboring pixels usually share a color, so remember the last one.
    let classify = |rgb: [u8; 3]| -> Option<usize> {
        let (h, s, v) = rgb_to_hsv(rgb);
        (s >= MIN_SATURATION && v >= MIN_VALUE).then(|| ((h / 30.0).round() as usize) % N_CONCEPTS)
    };
    let mut hist = HueHistogram::default();
    let mut last: Option<([u8; 3], Option<usize>)> = None;
    let x1 = x1.min(img.width());
    for y in 0..img.height() {
        for x in x0..x1 {
            let p = img.get_pixel(x, y);
            if p[3] == 0 {
                continue;
            }
            let rgb = [p[0], p[1], p[2]];
            let class = match last {
                Some((c, k)) if c == rgb => k,
                _ => {
                    let k = classify(rgb);
                    last = Some((rgb, k));
                    k
                }
            };
            match class {
                Some(bin) => hist.bins[bin] += 1,
                None => hist.achromatic += 1,
            }
        }
    }
    hist
}

pub fn hue_histogram(img: &RgbaImage) -> HueHistogram {
    hue_histogram_region(img, 0, img.width())
}

/// Concepts visible in an image.
pub fn perceive(img: &RgbaImage) -> Vec<usize> {
    hue_histogram(img).concepts()
}

/// Lowercase alphanumeric tokens.
pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase)
}

/// Concepts named in `text`, in order of first mention.
pub fn text_concepts(text: &str) -> Vec<usize> {
    let mut out = Vec::new();
    for t in tokens(text) {
        if let Some(i) = concept_index(&t) {
            if !out.contains(&i) {
                out.push(i);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concept_colors_perceived_back() {
        for i in 0..N_CONCEPTS {
            let img = RgbaImage::from_pixel(8, 8, concept_color(i));
            assert_eq!(perceive(&img), vec![i]);
            // shading keeps hue
            let c = concept_color(i);
            let dim = Rgba([c[0] / 3, c[1] / 3, c[2] / 3, 255]);
            assert_eq!(perceive(&RgbaImage::from_pixel(8, 8, dim)), vec![i], "concept {i}");
        }
    }

    #[test]
    fn grays_and_transparent_ignored() {
        let img =
            RgbaImage::from_fn(8, 8, |x, _| if x < 4 { Rgba([128, 128, 128, 255]) } else { Rgba([255, 0, 0, 0]) });
        let h = hue_histogram(&img);
        assert_eq!(h.chromatic(), 0);
        assert_eq!(h.achromatic, 32);
    }

    #[test]
    fn text_concepts_in_order() {
        assert_eq!(text_concepts("Two Rabbits sharing a doughnut, rabbit again"), vec![0, 1]);
        assert!(text_concepts("a plain object").is_empty());
    }
}
