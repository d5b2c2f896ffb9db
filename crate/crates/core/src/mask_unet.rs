//! U-Net estimating the source text mask of a crop.

use fast_nn::layers::{BatchNorm2d, Conv2d};
use fast_nn::optim::{Adam, AdamConfig};
use fast_nn::{Ctx, ParamSet, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FastError, Result};
use crate::image::{batch, unbatch, TensorImage};
use crate::losses::BCE_EPS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnetConfig {
    /// Channels at full resolution; the deepest level has eight times this.
    pub base_channels: usize,
}

impl Default for UnetConfig {
    fn default() -> Self {
        Self { base_channels: 64 }
    }
}

#[derive(Clone, Debug)]
struct DoubleConv {
    c1: Conv2d,
    b1: BatchNorm2d,
    c2: Conv2d,
    b2: BatchNorm2d,
}

impl DoubleConv {
    fn new(set: &mut ParamSet, name: &str, cin: usize, mid: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            c1: Conv2d::new(set, &format!("{name}.conv1"), cin, mid, 3, 1, 1, false, rng),
            b1: BatchNorm2d::new(set, &format!("{name}.bn1"), mid),
            c2: Conv2d::new(set, &format!("{name}.conv2"), mid, cout, 3, 1, 1, false, rng),
            b2: BatchNorm2d::new(set, &format!("{name}.bn2"), cout),
        }
    }

    fn forward(&self, ctx: &Ctx, set: &ParamSet, x: &Var) -> Var {
        let h = self.b1.forward(ctx, set, &self.c1.forward(ctx, set, x)).relu();
        self.b2.forward(ctx, set, &self.c2.forward(ctx, set, &h)).relu()
    }
}

/// Soft probabilities and their 0.5-threshold, both `1 × H × W`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskEstimate {
    pub soft: TensorImage,
    pub hard: TensorImage,
}

impl MaskEstimate {
    fn from_soft(soft: TensorImage) -> Self {
        let hard = TensorImage::new(soft.tensor().map(|p| if p > 0.5 { 1.0 } else { 0.0 })).expect("rank 3");
        Self { soft, hard }
    }

    /// The hard mask as a ±1 image with `channels` replicated planes.
    pub fn to_signed(&self, channels: usize) -> TensorImage {
        TensorImage::new(self.hard.tensor().map(|v| 2.0 * v - 1.0)).expect("rank 3").replicate(channels)
    }
}

/// Four max-pool downsamplings, four bilinear upsamplings with skip
/// concatenation, sigmoid head.
#[derive(Clone, Debug)]
pub struct MaskUnet {
    config: UnetConfig,
    params: ParamSet,
    inc: DoubleConv,
    down: Vec<DoubleConv>,
    up: Vec<DoubleConv>,
    head: Conv2d,
}

impl MaskUnet {
    pub fn new(config: UnetConfig, seed: u64) -> Result<Self> {
        let b = config.base_channels;
        if b == 0 {
            return Err(FastError::InvalidConfig("unet base_channels must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = ParamSet::new();
        let inc = DoubleConv::new(&mut set, "inc", 3, b, b, &mut rng);
        let enc = [b, 2 * b, 4 * b, 8 * b, 8 * b];
        let down = (0..4)
            .map(|i| DoubleConv::new(&mut set, &format!("down{}", i + 1), enc[i], enc[i + 1], enc[i + 1], &mut rng))
            .collect();
        let outs = [4 * b, 2 * b, b, b];
        let up = (0..4)
            .map(|i| {
                let cin = if i == 0 { enc[4] + enc[3] } else { outs[i - 1] + enc[3 - i] };
                DoubleConv::new(&mut set, &format!("up{}", i + 1), cin, cin / 2, outs[i], &mut rng)
            })
            .collect();
        let head = Conv2d::new(&mut set, "head", b, 1, 1, 1, 0, true, &mut rng);
        Ok(Self { config, params: set, inc, down, up, head })
    }

    pub fn config(&self) -> &UnetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// `N × 3 × H × W` → `N × 1 × H × W` probabilities.
    pub fn forward(&self, ctx: &Ctx, x: &Var) -> Result<Var> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 3 || !s[2].is_multiple_of(16) || !s[3].is_multiple_of(16) || s[2] == 0 || s[3] == 0 {
            return Err(FastError::ShapeMismatch(format!("unet expects N×3×H×W with H, W multiples of 16, got {s:?}")));
        }
        let set = &self.params;
        let mut skips = vec![self.inc.forward(ctx, set, x)];
        for d in &self.down {
            let h = d.forward(ctx, set, &skips.last().expect("non-empty").max_pool2());
            skips.push(h);
        }
        let mut h = skips.pop().expect("bottleneck");
        for u in &self.up {
            let skip = skips.pop().expect("matching skip");
            h = u.forward(ctx, set, &Var::cat_channels(&[&skip, &h.upsample_bilinear2()]));
        }
        Ok(self.head.forward(ctx, set, &h).sigmoid())
    }

    pub fn estimate_mask(&self, image: &TensorImage) -> Result<MaskEstimate> {
        image.ensure_dims(3, image.height(), image.width())?;
        let x = batch(&[image])?;
        let y = self.forward(&Ctx::eval(), &Var::constant(x))?;
        Ok(MaskEstimate::from_soft(unbatch(y.value(), 0)))
    }
}

/// `{0, 1}` target from a ±1 mask's first channel.
pub fn unit_target(mask: &TensorImage) -> TensorImage {
    TensorImage::new(mask.take_channels(1).tensor().map(|v| if v > 0.0 { 1.0 } else { 0.0 })).expect("rank 3")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnetTrainConfig {
    pub epochs: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub adam_beta1: f32,
    pub adam_beta2: f32,
    pub seed: u64,
    /// Stops after this many optimiser steps when set.
    pub max_steps: Option<usize>,
}

impl Default for UnetTrainConfig {
    fn default() -> Self {
        Self { epochs: 20, lr: 1e-3, batch_size: 1, adam_beta1: 0.5, adam_beta2: 0.999, seed: 0, max_steps: None }
    }
}

/// One BCE step on `(images, ±1 masks)`; returns the loss before the update.
pub fn unet_step(unet: &mut MaskUnet, adam: &mut Adam, images: &Tensor, targets: &Tensor) -> Result<f32> {
    let ctx = Ctx::train().track(unet.params());
    let pred = unet.forward(&ctx, &Var::constant(images.clone()))?;
    let loss = pred.bce(&Var::constant(targets.clone()), BCE_EPS);
    let value = loss.item();
    let grads = loss.backward();
    let g = ctx.param_grads(unet.params(), &grads);
    ctx.apply_buffer_updates(unet.params_mut());
    adam.step(unet.params_mut(), &g);
    Ok(value)
}

/// Trains on `(image, ±1 mask)` pairs with per-pixel BCE and Adam; returns
/// the loss of every step. Samples are reshuffled each epoch.
pub fn train_mask_unet(unet: &mut MaskUnet, pairs: &[(TensorImage, TensorImage)], config: &UnetTrainConfig) -> Result<Vec<f32>> {
    if pairs.is_empty() {
        return Err(FastError::EmptyDataset);
    }
    let mut adam = Adam::new(AdamConfig { lr: config.lr, beta1: config.adam_beta1, beta2: config.adam_beta2, ..AdamConfig::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let targets: Vec<TensorImage> = pairs.iter().map(|(_, m)| unit_target(m)).collect();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut losses = Vec::new();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size.max(1)) {
            if config.max_steps.is_some_and(|m| losses.len() >= m) {
                return Ok(losses);
            }
            let x = batch(&chunk.iter().map(|&i| &pairs[i].0).collect::<Vec<_>>())?;
            let t = batch(&chunk.iter().map(|&i| &targets[i]).collect::<Vec<_>>())?;
            let loss = unet_step(unet, &mut adam, &x, &t)?;
            if !loss.is_finite() {
                return Err(FastError::NonFiniteLoss { iteration: losses.len() });
            }
            losses.push(loss);
        }
    }
    Ok(losses)
}

/// Fraction of pixels where the hard estimate agrees with the ±1 mask.
pub fn pixel_accuracy(estimate: &MaskEstimate, mask: &TensorImage) -> f64 {
    let t = unit_target(mask);
    let hits = estimate.hard.data().iter().zip(t.data()).filter(|(a, b)| a == b).count();
    hits as f64 / t.data().len() as f64
}
