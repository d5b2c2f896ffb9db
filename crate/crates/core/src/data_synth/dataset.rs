//! On-disk dataset layout:
//!
//! ```text
//! <root>/i_s/NNNNNN.png     source image (RGB)
//! <root>/i_t/NNNNNN.png     target image (RGB)
//! <root>/mask_s/NNNNNN.png  source mask (gray, {0, 255})
//! <root>/mask_t/NNNNNN.png  target mask
//! <root>/mask_f/NNNNNN.png  fixed-font target mask
//! <root>/manifest.jsonl     one ManifestRecord per line
//! ```

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use image::GrayImage;
use serde::{Deserialize, Serialize};

use super::{synthesize_sample, BackgroundSet, FontSet, SceneTextSample, StyleSpec, SynthConfig, WordList};
use crate::error::{FastError, Result};
use crate::image::{TensorImage, HEIGHT, WIDTH};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SUBDIRS: [&str; 5] = ["i_s", "i_t", "mask_s", "mask_t", "mask_f"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub text_src: String,
    pub text_tgt: String,
    #[serde(flatten, default, skip_serializing_if = "Option::is_none")]
    pub style: Option<StyleSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn file(root: &Path, sub: &str, id: &str) -> PathBuf {
    root.join(sub).join(format!("{id}.png"))
}

fn create_layout(root: &Path) -> Result<()> {
    for sub in SUBDIRS {
        std::fs::create_dir_all(root.join(sub))?;
    }
    Ok(())
}

fn write_sample(root: &Path, id: &str, s: &SceneTextSample) -> Result<()> {
    s.i_a.save_rgb(&file(root, "i_s", id))?;
    s.i_b.save_rgb(&file(root, "i_t", id))?;
    s.m_a.save_mask(&file(root, "mask_s", id))?;
    s.m_b.save_mask(&file(root, "mask_t", id))?;
    s.m_f.save_mask(&file(root, "mask_f", id))?;
    Ok(())
}

fn write_manifest(root: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    fast_nn::io::write_atomic(&root.join(MANIFEST_FILE), out.as_bytes())?;
    Ok(())
}

/// Writes `count` synthetic pairs under `out_dir`. Output bytes depend only
/// on the arguments; each sample draws from its own seeded stream.
pub fn generate_dataset(
    count: usize,
    fonts: &FontSet,
    backgrounds: &BackgroundSet,
    words: &WordList,
    seed: u64,
    config: &SynthConfig,
    out_dir: &Path,
) -> Result<Vec<ManifestRecord>> {
    if count == 0 {
        return Err(FastError::InvalidConfig("count must be at least 1".into()));
    }
    if fonts.is_empty() || backgrounds.is_empty() {
        return Err(FastError::InsufficientAssets(format!(
            "{} fonts and {} backgrounds available",
            fonts.len(),
            backgrounds.len()
        )));
    }
    create_layout(out_dir)?;
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let s = synthesize_sample(i as u64, seed, fonts, backgrounds, words, config)?;
        let id = format!("{i:06}");
        write_sample(out_dir, &id, &s)?;
        records.push(ManifestRecord {
            id,
            text_src: s.text_src,
            text_tgt: s.text_tgt,
            style: s.style,
            seed: Some(super::sample_seed(seed, i as u64)),
        });
    }
    write_manifest(out_dir, &records)?;
    Ok(records)
}

pub fn read_manifest(root: &Path) -> Result<Vec<ManifestRecord>> {
    let text = std::fs::read_to_string(root.join(MANIFEST_FILE))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(FastError::from))
        .collect()
}

/// Loads every pair listed in the manifest, resizing to 64×256 if needed.
pub fn load_dataset(root: &Path) -> Result<Vec<SceneTextSample>> {
    read_manifest(root)?
        .into_iter()
        .map(|r| {
            let rgb = |sub| TensorImage::load_rgb(&file(root, sub, &r.id)).map(|i| i.resize(HEIGHT, WIDTH));
            let mask = |sub| TensorImage::load_mask(&file(root, sub, &r.id), 3).map(|m| m.resize(HEIGHT, WIDTH).binarize(0.0));
            Ok(SceneTextSample {
                i_a: rgb("i_s")?,
                i_b: rgb("i_t")?,
                m_a: mask("mask_s")?,
                m_b: mask("mask_t")?,
                m_f: mask("mask_f")?,
                text_src: r.text_src,
                text_tgt: r.text_tgt,
                style: r.style,
            })
        })
        .collect()
}

/// `name text` label lines keyed by file stem.
fn read_labels(path: &Path) -> Result<HashMap<String, String>> {
    if !path.exists() {
        return Ok(HashMap::new());
    }
    Ok(std::fs::read_to_string(path)?
        .lines()
        .filter_map(|l| {
            let (name, text) = l.trim().split_once(char::is_whitespace)?;
            let stem = Path::new(name).file_stem()?.to_str()?.to_string();
            Some((stem, text.trim().to_string()))
        })
        .collect())
}

/// Binarises a rendered-text image: threshold halfway between the darkest
/// and brightest pixel; the less frequent side is text.
fn binarize_rendering(img: &GrayImage) -> GrayImage {
    let (lo, hi) = img.pixels().fold((255u8, 0u8), |(lo, hi), p| (lo.min(p[0]), hi.max(p[0])));
    let mid = (lo as u16 + hi as u16) / 2;
    let bright = img.pixels().filter(|p| p[0] as u16 > mid).count();
    let text_is_bright = bright * 2 < img.pixels().len();
    GrayImage::from_fn(img.width(), img.height(), |x, y| {
        let b = img.get_pixel(x, y)[0] as u16 > mid;
        image::Luma([if b == text_is_bright && hi > lo { 255 } else { 0 }])
    })
}

/// Adapts a MOSTEL-style directory (`i_s`, `t_f`, `mask_s`, `mask_t`, `i_t`
/// plus `i_s.txt`/`i_t.txt` labels) into this crate's layout. The standard-font
/// rendering `i_t` becomes the fixed-font mask. Returns the number of pairs.
pub fn convert_mostel(src: &Path, out_dir: &Path) -> Result<usize> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(src.join("i_s"))?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    names.sort();
    if names.is_empty() {
        return Err(FastError::EmptyDataset);
    }
    let src_labels = read_labels(&src.join("i_s.txt"))?;
    let tgt_labels = read_labels(&src.join("i_t.txt"))?;
    create_layout(out_dir)?;
    let mut records = Vec::with_capacity(names.len());
    for (i, path) in names.iter().enumerate() {
        let fname = path.file_name().expect("listed file");
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let id = format!("{i:06}");
        let open = |sub: &str| image::open(src.join(sub).join(fname));
        let rgb = |sub: &str| -> Result<TensorImage> { Ok(TensorImage::from_rgb(&open(sub)?.to_rgb8()).resize(HEIGHT, WIDTH)) };
        let gray_mask = |img: GrayImage| TensorImage::mask_from_gray(&img, 1).resize(HEIGHT, WIDTH).binarize(0.0);
        rgb("i_s")?.save_rgb(&file(out_dir, "i_s", &id))?;
        rgb("t_f")?.save_rgb(&file(out_dir, "i_t", &id))?;
        gray_mask(open("mask_s")?.to_luma8()).save_mask(&file(out_dir, "mask_s", &id))?;
        gray_mask(open("mask_t")?.to_luma8()).save_mask(&file(out_dir, "mask_t", &id))?;
        gray_mask(binarize_rendering(&open("i_t")?.to_luma8())).save_mask(&file(out_dir, "mask_f", &id))?;
        records.push(ManifestRecord {
            id,
            text_src: src_labels.get(&stem).cloned().unwrap_or_default(),
            text_tgt: tgt_labels.get(&stem).cloned().unwrap_or_default(),
            style: None,
            seed: None,
        });
    }
    write_manifest(out_dir, &records)?;
    Ok(records.len())
}
