//! Paired synthetic scene-text data: two words drawn with one style on one background.

mod background;
mod dataset;
mod font;
mod style;
mod transform;
mod words;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use background::{procedural_texture, BackgroundSet};
pub use dataset::{convert_mostel, generate_dataset, load_dataset, read_manifest, ManifestRecord, MANIFEST_FILE, SUBDIRS};
pub use font::{fitting_height, rasterize_centered, Coverage, FontSet, FIXED_FONT_ID};
pub use style::{contrast, StyleSpec, SynthConfig};
pub use transform::{apply_geometric_transform, corner_homography, ink_x_extent, Warp};
pub use words::WordList;

use crate::error::{FastError, Result};
use crate::image::{quantize_value, TensorImage, HEIGHT, WIDTH};

/// Pixels of margin kept around the fixed-font reference text.
const FIXED_MARGIN: usize = 4;
const FIXED_MAX_PX: usize = 56;

/// One training pair. Masks are 3-channel with values exactly `±1`.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneTextSample {
    pub i_a: TensorImage,
    pub i_b: TensorImage,
    pub m_a: TensorImage,
    pub m_b: TensorImage,
    pub m_f: TensorImage,
    pub text_src: String,
    pub text_tgt: String,
    /// `None` for pairs imported from external datasets.
    pub style: Option<StyleSpec>,
}

/// SplitMix64 finaliser, used to derive independent per-sample seeds.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sample `index` in a dataset generated from `seed`.
pub fn sample_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

pub fn validate_text(text: &str) -> Result<()> {
    let n = text.chars().count();
    if !(1..=20).contains(&n) {
        return Err(FastError::InvalidText(format!("expected 1–20 characters, got {n}")));
    }
    if let Some(c) = text.chars().find(|c| !(c.is_ascii_graphic() || *c == ' ')) {
        return Err(FastError::InvalidText(format!("unsupported character {c:?}")));
    }
    Ok(())
}

/// Draws `text` in `style` over `background`; returns the composited image
/// and the 3-channel binary mask.
///
/// The mask is `+1` where transformed glyph alpha exceeds 0.5. Only those
/// pixels are alpha-composited, so every `-1` pixel equals the background
/// exactly. Composited pixels are rounded onto the 8-bit grid.
pub fn render_text_image(
    text: &str,
    style: &StyleSpec,
    background: &TensorImage,
    fonts: &FontSet,
) -> Result<(TensorImage, TensorImage)> {
    validate_text(text)?;
    background.ensure_dims(3, HEIGHT, WIDTH)?;
    let font = fonts.get(&style.font_id)?;
    let cov = rasterize_centered(font, text, style.glyph_height_px as f32, HEIGHT, WIDTH)?;
    let fill = style.fill();
    let mut layer = TensorImage::full(4, HEIGHT, WIDTH, 0.0);
    for c in 0..3 {
        for (dst, &a) in layer.plane_mut(c).iter_mut().zip(&cov.data) {
            *dst = fill[c] * a;
        }
    }
    layer.plane_mut(3).copy_from_slice(&cov.data);
    let layer = apply_geometric_transform(&layer, style)?;

    let n = HEIGHT * WIDTH;
    let mut image = background.clone();
    let mut mask = TensorImage::full(3, HEIGHT, WIDTH, -1.0);
    let alpha = layer.plane(3);
    for i in 0..n {
        let a = alpha[i];
        if a > 0.5 {
            for c in 0..3 {
                let color = layer.plane(c)[i] / a;
                let px = &mut image.plane_mut(c)[i];
                *px = quantize_value(color * a + *px * (1.0 - a));
                mask.plane_mut(c)[i] = 1.0;
            }
        }
    }
    if mask.coverage() == 0.0 {
        return Err(FastError::GlyphOverflow(format!("`{text}` leaves no visible ink")));
    }
    Ok((image, mask))
}

/// Reference mask of `text` in the fixed font: identity transform, centred,
/// largest integer size that fits with a small margin.
pub fn render_fixed_mask(text: &str, fonts: &FontSet) -> Result<TensorImage> {
    validate_text(text)?;
    let font = fonts.fixed();
    let px = fitting_height(font, text, HEIGHT, WIDTH, FIXED_MARGIN, FIXED_MAX_PX)?;
    let cov = rasterize_centered(font, text, px as f32, HEIGHT, WIDTH)?;
    let plane: Vec<f32> = cov.data.iter().map(|&a| if a > 0.5 { 1.0 } else { -1.0 }).collect();
    TensorImage::from_vec(3, HEIGHT, WIDTH, plane.repeat(3))
}

pub fn make_paired_sample(
    text_src: &str,
    text_tgt: &str,
    style: &StyleSpec,
    background: &TensorImage,
    fonts: &FontSet,
) -> Result<SceneTextSample> {
    let (i_a, m_a) = render_text_image(text_src, style, background, fonts)?;
    let (i_b, m_b) = render_text_image(text_tgt, style, background, fonts)?;
    let m_f = render_fixed_mask(text_tgt, fonts)?;
    Ok(SceneTextSample {
        i_a,
        i_b,
        m_a,
        m_b,
        m_f,
        text_src: text_src.to_string(),
        text_tgt: text_tgt.to_string(),
        style: Some(style.clone()),
    })
}

fn mean_rgb(img: &TensorImage) -> [f64; 3] {
    std::array::from_fn(|c| {
        let p = img.plane(c);
        p.iter().map(|&v| (v as f64 + 1.0) / 2.0).sum::<f64>() / p.len() as f64
    })
}

fn apply_case(word: &str, mode: u8) -> String {
    match mode {
        0 => word.to_ascii_uppercase(),
        1 => word.to_ascii_lowercase(),
        _ => {
            let lower = word.to_ascii_lowercase();
            let mut chars = lower.chars();
            chars.next().map(|c| c.to_ascii_uppercase().to_string() + chars.as_str()).unwrap_or_default()
        }
    }
}

/// Draws sample `index` of the dataset defined by `seed`. Styles that
/// overflow, lack contrast or give out-of-range coverage are resampled.
pub fn synthesize_sample(
    index: u64,
    seed: u64,
    fonts: &FontSet,
    backgrounds: &BackgroundSet,
    words: &WordList,
    config: &SynthConfig,
) -> Result<SceneTextSample> {
    if fonts.is_empty() {
        return Err(FastError::InsufficientAssets("no fonts".into()));
    }
    if backgrounds.is_empty() {
        return Err(FastError::InsufficientAssets("no backgrounds".into()));
    }
    if words.is_empty() {
        return Err(FastError::InsufficientAssets("no words".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(seed, index));
    for _ in 0..config.max_attempts {
        let case = rng.gen_range(0..3u8);
        let src = apply_case(words.sample(&mut rng), case);
        let tgt = apply_case(words.sample(&mut rng), case);
        let font_id = fonts.id_at(rng.gen_range(0..fonts.len())).to_string();
        let (glyph_height_px, rotation_deg, curve_amplitude_px, perspective_warp) = config.sample_geometry(&mut rng);
        let (background_id, background) = backgrounds.sample(&mut rng)?;
        let bg_mean = mean_rgb(&background);
        let fill_rgb: [u8; 3] = std::array::from_fn(|_| rng.gen());
        if contrast(fill_rgb, bg_mean) < config.min_contrast {
            continue;
        }
        let style = StyleSpec {
            font_id,
            glyph_height_px,
            fill_rgb,
            rotation_deg,
            curve_amplitude_px,
            perspective_warp,
            background_id,
        };
        let sample = match make_paired_sample(&src, &tgt, &style, &background, fonts) {
            Ok(s) => s,
            Err(FastError::GlyphOverflow(_)) => continue,
            Err(e) => return Err(e),
        };
        let (lo, hi) = config.coverage;
        let ok = |m: &TensorImage| {
            let c = m.coverage();
            c > lo && c < hi
        };
        if ok(&sample.m_a) && ok(&sample.m_b) {
            return Ok(sample);
        }
    }
    Err(FastError::InsufficientAssets(format!(
        "no admissible style for sample {index} after {} attempts",
        config.max_attempts
    )))
}

/// In-memory counterpart of [`generate_dataset`].
pub fn synthesize_samples(
    count: usize,
    seed: u64,
    fonts: &FontSet,
    backgrounds: &BackgroundSet,
    words: &WordList,
    config: &SynthConfig,
) -> Result<Vec<SceneTextSample>> {
    (0..count as u64).map(|i| synthesize_sample(i, seed, fonts, backgrounds, words, config)).collect()
}
