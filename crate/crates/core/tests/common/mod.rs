#![allow(dead_code)]

pub mod oracles;

use std::path::Path;

use fast_ste::checkpoint::{CheckpointDir, Net};
use fast_ste::data_synth::{synthesize_samples, BackgroundSet, FontSet, SceneTextSample, SynthConfig, WordList};
use fast_ste::generator::{Generator, GeneratorConfig};
use fast_ste::mask_unet::{MaskUnet, UnetConfig};
use fast_ste::trainer::{Stage, TrainConfig};

pub fn samples(n: usize, seed: u64) -> Vec<SceneTextSample> {
    synthesize_samples(n, seed, &FontSet::bundled(), &BackgroundSet::procedural(8), &WordList::bundled(), &SynthConfig::default())
        .expect("synthesis")
}

/// Narrow networks and a small batch for fast CPU runs.
pub fn small_config(stage: Stage, base: usize) -> TrainConfig {
    let mut c = TrainConfig::for_stage(stage);
    c.generator.base_channels = base;
    c.discriminator.base_channels = base;
    c.perceptual.width_divisor = 16;
    c.unet.base_channels = base;
    c.batch_size = 2;
    c.iterations = 2;
    c.checkpoint_every = 0;
    c.eval_every = 0;
    c
}

/// Randomly initialised stage-I/II generators and U-Net at width 4.
pub fn write_random_checkpoint(dir: &Path) {
    let c = CheckpointDir::new(dir);
    let gm = Generator::new(GeneratorConfig::stage1().with_base_channels(4), 11).unwrap();
    let gi = Generator::new(GeneratorConfig::stage2().with_base_channels(4), 12).unwrap();
    let unet = MaskUnet::new(UnetConfig { base_channels: 4 }, 13).unwrap();
    c.save(Net::MaskGenerator, gm.params()).unwrap();
    c.save(Net::ImageGenerator, gi.params()).unwrap();
    c.save(Net::Unet, unet.params()).unwrap();
    c.update_config(|cfg| {
        cfg.mask_generator = gm.config().clone();
        cfg.image_generator = gi.config().clone();
        cfg.unet = unet.config().clone();
    })
    .unwrap();
}
