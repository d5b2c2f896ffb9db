//! End-to-end editing: crop and target text in, edited crop out.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{CheckpointDir, Net};
use crate::data_synth::{render_fixed_mask, validate_text, FontSet};
use crate::error::{FastError, Result};
use crate::generator::{ConditionKind, Generator};
use crate::image::{batch, unbatch, TensorImage, HEIGHT, WIDTH};
use crate::mask_unet::MaskUnet;

#[derive(Clone, Debug, PartialEq)]
pub struct EditRequest {
    /// RGB crop of any size; stretched to 64×256 for inference.
    pub image: TensorImage,
    pub target_text: String,
    /// ±1 source mask (1 or 3 channels, any size); estimated when absent.
    pub source_mask: Option<TensorImage>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditOptions {
    /// Threshold `m̄_B` at 0 before stage II; off feeds the raw estimate.
    pub binarize_mask: bool,
}

/// Inputs and outputs at the 64×256 working size.
#[derive(Clone, Debug, PartialEq)]
pub struct Intermediates {
    pub m_a: TensorImage,
    pub m_f: TensorImage,
    /// Stage-I output as fed to stage II.
    pub m_b: TensorImage,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EditOutput {
    /// Edited crop at the request's original size.
    pub edited: TensorImage,
    /// The source mask used, single channel at the original size.
    pub source_mask: TensorImage,
    pub intermediates: Intermediates,
}

/// Frozen stage-I and stage-II generators plus the optional mask U-Net.
/// Immutable after construction; safe to share across threads.
pub struct Pipeline {
    gm: Generator,
    gi: Generator,
    unet: Option<MaskUnet>,
    fonts: FontSet,
    options: EditOptions,
}

impl Pipeline {
    pub fn new(gm: Generator, gi: Generator, unet: Option<MaskUnet>) -> Self {
        Self { gm, gi, unet, fonts: FontSet::bundled(), options: EditOptions::default() }
    }

    pub fn with_options(mut self, options: EditOptions) -> Self {
        self.options = options;
        self
    }

    pub fn options(&self) -> EditOptions {
        self.options
    }

    /// Loads `gm` and `gi` (required) and `unet` (if present) from a checkpoint directory.
    pub fn load(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(FastError::MissingCheckpoint(format!("{} is not a directory", dir.display())));
        }
        let c = CheckpointDir::new(dir);
        let gm = c.load_generator(Net::MaskGenerator)?;
        let gi = c.load_generator(Net::ImageGenerator)?;
        let unet = if c.has(Net::Unet) { Some(c.load_unet()?) } else { None };
        Ok(Self::new(gm, gi, unet))
    }

    pub fn has_unet(&self) -> bool {
        self.unet.is_some()
    }

    /// Soft U-Net mask probabilities at the image's original size.
    pub fn estimate_mask(&self, image: &TensorImage) -> Result<TensorImage> {
        image.ensure_dims(3, image.height(), image.width())?;
        let unet = self.unet.as_ref().ok_or_else(|| FastError::MissingCheckpoint("unet.weights".into()))?;
        let est = unet.estimate_mask(&image.resize(HEIGHT, WIDTH))?;
        Ok(est.soft.resize(image.height(), image.width()))
    }

    fn source_mask(&self, req: &EditRequest, image: &TensorImage) -> Result<TensorImage> {
        match &req.source_mask {
            Some(m) => {
                if m.channels() != 1 && m.channels() != 3 {
                    return Err(FastError::ShapeMismatch(format!("source mask must have 1 or 3 channels, got {}", m.channels())));
                }
                Ok(m.take_channels(1).resize(HEIGHT, WIDTH).binarize(0.0).replicate(3))
            }
            None => {
                let unet = self.unet.as_ref().ok_or_else(|| FastError::MissingCheckpoint("unet.weights (no source mask given)".into()))?;
                Ok(unet.estimate_mask(image)?.to_signed(3))
            }
        }
    }

    pub fn edit(&self, req: &EditRequest) -> Result<EditOutput> {
        self.edit_with(req, self.options)
    }

    pub fn edit_with(&self, req: &EditRequest, options: EditOptions) -> Result<EditOutput> {
        validate_text(&req.target_text)?;
        let (c, h, w) = req.image.dims();
        if c != 3 || h == 0 || w == 0 {
            return Err(FastError::ShapeMismatch(format!("image must be 3×H×W, got {:?}", req.image.dims())));
        }
        let image = req.image.resize(HEIGHT, WIDTH);
        let m_a = self.source_mask(req, &image)?;
        let m_f = render_fixed_mask(&req.target_text, &self.fonts)?;

        let cond1 = match self.gm.config().condition_kind {
            ConditionKind::Image => &image,
            ConditionKind::Mask => &m_a,
        };
        let masks1 = if self.gm.config().concat_source_mask { concat(&m_a, &m_f)? } else { m_f.clone() };
        let m_b = unbatch(&self.gm.infer(&batch(&[cond1])?, &batch(&[&masks1])?)?, 0);
        let m_b = if options.binarize_mask { m_b.binarize(0.0) } else { m_b };

        let cond2 = match self.gi.config().condition_kind {
            ConditionKind::Image => &image,
            ConditionKind::Mask => &m_a,
        };
        let masks2 = if self.gi.config().concat_source_mask { concat(&m_a, &m_b)? } else { m_b.clone() };
        let out = unbatch(&self.gi.infer(&batch(&[cond2])?, &batch(&[&masks2])?)?, 0);

        Ok(EditOutput {
            edited: out.resize(h, w),
            source_mask: m_a.take_channels(1).resize(h, w).binarize(0.0),
            intermediates: Intermediates { m_a, m_f, m_b },
        })
    }
}

fn concat(a: &TensorImage, b: &TensorImage) -> Result<TensorImage> {
    Ok(unbatch(&fast_nn::Tensor::cat_channels(&[&batch(&[a])?, &batch(&[b])?])?, 0))
}

/// PNG bytes of an RGB result.
pub fn encode_rgb_png(img: &TensorImage) -> Result<Vec<u8>> {
    crate::image::encode_png(&image::DynamicImage::ImageRgb8(img.to_rgb()))
}

/// PNG bytes of a mask or probability map (first channel, `[-1, 1]` → 0..255).
pub fn encode_gray_png(img: &TensorImage) -> Result<Vec<u8>> {
    crate::image::encode_png(&image::DynamicImage::ImageLuma8(img.to_gray()))
}

/// PNG bytes of a `[0, 1]` probability map.
pub fn encode_prob_png(img: &TensorImage) -> Result<Vec<u8>> {
    encode_gray_png(&TensorImage::new(img.tensor().map(|p| 2.0 * p - 1.0))?)
}

/// Decodes PNG/JPEG bytes to an RGB image.
pub fn decode_rgb(bytes: &[u8]) -> Result<TensorImage> {
    Ok(TensorImage::from_rgb(&crate::image::decode_png(bytes)?.to_rgb8()))
}

/// Decodes mask bytes to a single-channel ±1 image (gray > 127 is text).
pub fn decode_mask(bytes: &[u8]) -> Result<TensorImage> {
    Ok(TensorImage::mask_from_gray(&crate::image::decode_png(bytes)?.to_luma8(), 1))
}

/// Writes `m_a.png`, `m_f.png` and `m_b.png` into `dir`.
pub fn write_debug(dir: &Path, i: &Intermediates) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, img) in [("m_a.png", &i.m_a), ("m_f.png", &i.m_f), ("m_b.png", &i.m_b)] {
        std::fs::write(dir.join(name), encode_gray_png(img)?)?;
    }
    Ok(())
}

/// Edits every manifest entry of a dataset to its target text, writing
/// `<out>/<id>.png`. Uses the stored source masks when `use_source_masks`.
pub fn predict_dataset(pipeline: &Pipeline, dataset: &Path, out: &Path, use_source_masks: bool) -> Result<usize> {
    let records = crate::data_synth::read_manifest(dataset)?;
    std::fs::create_dir_all(out)?;
    for r in &records {
        let image = TensorImage::load_rgb(&dataset.join("i_s").join(format!("{}.png", r.id)))?;
        let source_mask = if use_source_masks {
            Some(TensorImage::load_mask(&dataset.join("mask_s").join(format!("{}.png", r.id)), 1)?)
        } else {
            None
        };
        let req = EditRequest { image, target_text: r.text_tgt.clone(), source_mask };
        pipeline.edit(&req)?.edited.save_rgb(&out.join(format!("{}.png", r.id)))?;
    }
    Ok(records.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::GeneratorConfig;
    use crate::mask_unet::UnetConfig;

    fn tiny() -> Pipeline {
        let gm = Generator::new(GeneratorConfig::stage1().with_base_channels(4), 1).unwrap();
        let gi = Generator::new(GeneratorConfig::stage2().with_base_channels(4), 2).unwrap();
        let unet = MaskUnet::new(UnetConfig { base_channels: 4 }, 3).unwrap();
        Pipeline::new(gm, gi, Some(unet))
    }

    #[test]
    fn output_keeps_request_size() {
        let p = tiny();
        let req = EditRequest { image: TensorImage::full(3, 40, 100, 0.1), target_text: "A".into(), source_mask: None };
        let out = p.edit(&req).unwrap();
        assert_eq!(out.edited.dims(), (3, 40, 100));
        assert_eq!(out.source_mask.dims(), (1, 40, 100));
        assert_eq!(out.intermediates.m_b.dims(), (3, HEIGHT, WIDTH));
    }

    #[test]
    fn binarized_stage1_output_is_strictly_binary() {
        let p = tiny();
        let req = EditRequest { image: TensorImage::full(3, 64, 256, -0.2), target_text: "HOUSES".into(), source_mask: None };
        let out = p.edit_with(&req, EditOptions { binarize_mask: true }).unwrap();
        assert!(out.intermediates.m_b.data().iter().all(|&v| v == 1.0 || v == -1.0));
    }

    #[test]
    fn empty_or_unsupported_text_is_rejected() {
        let p = tiny();
        for t in ["", "naïve"] {
            let req = EditRequest { image: TensorImage::full(3, 64, 256, 0.0), target_text: t.into(), source_mask: None };
            assert!(matches!(p.edit(&req), Err(FastError::InvalidText(_))));
        }
    }

    #[test]
    fn missing_unet_needs_a_mask() {
        let p = tiny();
        let p = Pipeline { unet: None, ..p };
        let img = TensorImage::full(3, 64, 256, 0.0);
        let req = EditRequest { image: img.clone(), target_text: "A".into(), source_mask: None };
        assert!(matches!(p.edit(&req), Err(FastError::MissingCheckpoint(_))));
        let req = EditRequest { source_mask: Some(TensorImage::full(1, 64, 256, -1.0)), ..req };
        assert!(p.edit(&req).is_ok());
    }

    #[test]
    fn edits_are_deterministic() {
        let p = tiny();
        let req = EditRequest { image: TensorImage::full(3, 64, 256, 0.3), target_text: "CAT".into(), source_mask: None };
        let a = encode_rgb_png(&p.edit(&req).unwrap().edited).unwrap();
        let b = encode_rgb_png(&p.edit(&req).unwrap().edited).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_checkpoint_dir() {
        assert!(matches!(Pipeline::load(Path::new("/nonexistent/ckpt")), Err(FastError::MissingCheckpoint(_))));
    }
}
