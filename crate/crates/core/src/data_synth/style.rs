use rand::Rng;
use serde::{Deserialize, Serialize};

/// Everything that determines how a word is drawn, shared by both words of a pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleSpec {
    pub font_id: String,
    pub glyph_height_px: u32,
    pub fill_rgb: [u8; 3],
    pub rotation_deg: f32,
    pub curve_amplitude_px: f32,
    /// Corner displacements `(dx, dy)` for TL, TR, BR, BL.
    pub perspective_warp: [f32; 8],
    pub background_id: String,
}

impl StyleSpec {
    /// Black text, no transform, procedural background 0.
    pub fn plain(font_id: &str, glyph_height_px: u32) -> Self {
        Self {
            font_id: font_id.to_string(),
            glyph_height_px,
            fill_rgb: [0, 0, 0],
            rotation_deg: 0.0,
            curve_amplitude_px: 0.0,
            perspective_warp: [0.0; 8],
            background_id: "proc-0".to_string(),
        }
    }

    /// Fill colour in the `[-1, 1]` image range.
    pub fn fill(&self) -> [f32; 3] {
        self.fill_rgb.map(|v| v as f32 / 127.5 - 1.0)
    }
}

/// Sampling ranges and rejection thresholds for synthetic pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub glyph_height_px: (u32, u32),
    pub max_rotation_deg: f32,
    pub max_curve_px: f32,
    pub max_perspective_px: f32,
    /// Minimum mean absolute difference between fill and mean background, on a 0–1 scale.
    pub min_contrast: f32,
    /// Admissible source-mask coverage, exclusive bounds.
    pub coverage: (f64, f64),
    pub max_attempts: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            glyph_height_px: (20, 48),
            max_rotation_deg: 8.0,
            max_curve_px: 5.0,
            max_perspective_px: 6.0,
            min_contrast: 30.0 / 255.0,
            coverage: (0.01, 0.9),
            max_attempts: 200,
        }
    }
}

impl SynthConfig {
    /// Untransformed text only; useful for small, fast-converging datasets.
    pub fn flat() -> Self {
        Self { max_rotation_deg: 0.0, max_curve_px: 0.0, max_perspective_px: 0.0, ..Self::default() }
    }

    pub(crate) fn sample_geometry<R: Rng + ?Sized>(&self, rng: &mut R) -> (u32, f32, f32, [f32; 8]) {
        let (lo, hi) = self.glyph_height_px;
        let height = rng.gen_range(lo..=hi.max(lo));
        let sym = |rng: &mut R, m: f32| if m > 0.0 { rng.gen_range(-m..=m) } else { 0.0 };
        let rotation = sym(rng, self.max_rotation_deg);
        let curve = if self.max_curve_px > 0.0 { rng.gen_range(0.0..=self.max_curve_px) } else { 0.0 };
        let mut persp = [0.0f32; 8];
        for v in &mut persp {
            *v = sym(rng, self.max_perspective_px);
        }
        (height, rotation, curve, persp)
    }
}

/// Mean over channels of `|fill − mean background|`, on a 0–1 scale.
pub fn contrast(fill_rgb: [u8; 3], background_mean_rgb: [f64; 3]) -> f32 {
    let s: f64 = (0..3).map(|c| (fill_rgb[c] as f64 / 255.0 - background_mean_rgb[c]).abs()).sum();
    (s / 3.0) as f32
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn contrast_of_black_on_white_is_one() {
        assert!((contrast([0, 0, 0], [1.0, 1.0, 1.0]) - 1.0).abs() < 1e-6);
        assert_eq!(contrast([128, 128, 128], [128.0 / 255.0; 3]), 0.0);
    }

    #[test]
    fn sampled_geometry_respects_ranges() {
        let cfg = SynthConfig::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let (h, r, c, p) = cfg.sample_geometry(&mut rng);
            assert!((20..=48).contains(&h));
            assert!(r.abs() <= 8.0 && (0.0..=5.0).contains(&c));
            assert!(p.iter().all(|v| v.abs() <= 6.0));
        }
        let (_, r, c, p) = SynthConfig::flat().sample_geometry(&mut rng);
        assert_eq!((r, c, p), (0.0, 0.0, [0.0; 8]));
    }

    #[test]
    fn style_round_trips_through_json() {
        let s = StyleSpec { fill_rgb: [1, 2, 3], rotation_deg: -3.25, ..StyleSpec::plain("DejaVuSerif", 30) };
        let back: StyleSpec = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }
}
